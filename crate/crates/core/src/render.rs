//! Numerical evaluation of the rendering equation under distant lighting.
//!
//! The camera is orthographic with the fixed outgoing direction
//! [`VIEW_DIR`], so reflected radiance is a function of the surface normal
//! alone and can be stored on the disk of camera-facing normals (a
//! reflectance map). No visibility term: no cast shadows, no
//! interreflections.
//!
//! The diffuse lobes are integrated by direct summation over every
//! environment pixel with its exact solid angle. The specular lobe is
//! integrated in the half-vector domain: midpoint nodes in the GGX CDF,
//! reflected about each node and read back from the environment with
//! bilinear taps. A direct sum cannot resolve the `alpha = 1e-3` lobe of the
//! mirror state; [`SpecularQuadrature::Direct`] is kept as a cross-check for
//! wide lobes. Every path is linear in the environment radiance.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::brdf::{
    burley_diffuse, disney_lobes, fresnel_f0, ggx_alpha, schlick_weight, smith_g1, DiffuseAlbedo,
    ReflectanceParams,
};
use crate::envmap::{bilinear_taps, solid_angles, EnvironmentMap};
use crate::error::{ensure, Error, Result};
use crate::exec::{Executor, Sequential};
use crate::geometry::{Rgb, Vec3, VIEW_DIR};
use crate::image::RgbImage;

/// Default reflectance-map resolution.
pub const DEFAULT_MAP_RESOLUTION: usize = 128;

/// Radiance on the Gaussian sphere of camera-facing normals.
///
/// Cell `(row, col)` of an `N x N` grid has center
/// `u = (2 col + 1) / N - 1`, `v = 1 - (2 row + 1) / N`; cells with
/// `u^2 + v^2 <= 1` carry the normal `(u, v, sqrt(1 - u^2 - v^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectanceMap {
    pub resolution: usize,
    pub radiance: Vec<Rgb>,
    pub mask: Vec<bool>,
}

impl ReflectanceMap {
    /// All cells invalid.
    pub fn empty(resolution: usize) -> Self {
        Self {
            resolution,
            radiance: vec![[0.0; 3]; resolution * resolution],
            mask: vec![false; resolution * resolution],
        }
    }

    /// Zero radiance with the whole unit disk valid.
    pub fn full_disk(resolution: usize) -> Self {
        let mut map = Self::empty(resolution);
        for cell in 0..resolution * resolution {
            map.mask[cell] = map.normal(cell).is_some();
        }
        map
    }

    #[inline]
    pub fn cell_uv(&self, cell: usize) -> (f64, f64) {
        let n = self.resolution as f64;
        let (row, col) = (cell / self.resolution, cell % self.resolution);
        ((2 * col + 1) as f64 / n - 1.0, 1.0 - (2 * row + 1) as f64 / n)
    }

    /// Normal of a cell inside the unit disk, regardless of the mask.
    pub fn normal(&self, cell: usize) -> Option<Vec3> {
        let (u, v) = self.cell_uv(cell);
        let r2 = u * u + v * v;
        (r2 <= 1.0).then(|| Vec3::new(u, v, (1.0 - r2).sqrt()))
    }

    /// Cell containing a normal's `(x, y)` projection, if that cell lies in the disk.
    pub fn cell_of_normal(&self, n: Vec3) -> Option<usize> {
        if n.z <= 0.0 {
            return None;
        }
        let res = self.resolution;
        let col = (((n.x + 1.0) * 0.5 * res as f64).floor().max(0.0) as usize).min(res - 1);
        let row = (((1.0 - n.y) * 0.5 * res as f64).floor().max(0.0) as usize).min(res - 1);
        let cell = row * res + col;
        self.normal(cell).map(|_| cell)
    }

    pub fn valid_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i)
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.radiance {
            *p = p.map(|v| v * s);
        }
        out
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage {
            width: self.resolution,
            height: self.resolution,
            data: self.radiance.clone(),
        }
    }
}

/// Per-pixel camera-space normals plus a foreground mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl NormalMap {
    pub fn new(width: usize, height: usize, normals: Vec<Vec3>, mask: Vec<bool>) -> Result<Self> {
        ensure!(
            normals.len() == width * height && mask.len() == width * height,
            InvalidArgument,
            "normal map buffers do not match {}x{}",
            width,
            height
        );
        for (idx, (n, m)) in normals.iter().zip(&mask).enumerate() {
            if *m {
                let len = n.norm();
                ensure!(
                    (1.0 - 1e-3..=1.0 + 1e-3).contains(&len) && n.z > 0.0,
                    Validation,
                    "normal {:?} at pixel {} is not a unit camera-facing vector",
                    n,
                    idx
                );
            }
        }
        Ok(Self {
            width,
            height,
            normals,
            mask,
        })
    }

    /// Orthographic view of a unit sphere filling a `size x size` image.
    pub fn sphere(size: usize) -> Self {
        let mut normals = vec![Vec3::default(); size * size];
        let mut mask = vec![false; size * size];
        for row in 0..size {
            for col in 0..size {
                let u = (2 * col + 1) as f64 / size as f64 - 1.0;
                let v = 1.0 - (2 * row + 1) as f64 / size as f64;
                let r2 = u * u + v * v;
                if r2 < 1.0 {
                    normals[row * size + col] = Vec3::new(u, v, (1.0 - r2).sqrt());
                    mask[row * size + col] = true;
                }
            }
        }
        Self {
            width: size,
            height: size,
            normals,
            mask,
        }
    }

    /// A fronto-parallel plane covering the whole image.
    pub fn plane(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            normals: vec![Vec3::new(0.0, 0.0, 1.0); width * height],
            mask: vec![true; width * height],
        }
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// BRDF family used by the integrator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Material {
    Disney(ReflectanceParams),
    /// Pure `rho / pi`; the reference for the irradiance oracle.
    Lambert,
}

impl Material {
    /// Weight of the diffuse integral in the final radiance, per unit albedo.
    fn diffuse_scale(&self) -> f64 {
        match self {
            Material::Disney(p) => 1.0 - p.metallic,
            Material::Lambert => 1.0,
        }
    }

    fn f0(&self, rho: &DiffuseAlbedo) -> Rgb {
        match self {
            Material::Disney(p) => fresnel_f0(p, rho),
            Material::Lambert => [0.0; 3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecularQuadrature {
    /// Midpoint nodes in the GGX half-vector CDF.
    HalfVector { theta_nodes: usize, phi_nodes: usize },
    /// Direct summation over environment pixels.
    Direct,
}

impl Default for SpecularQuadrature {
    fn default() -> Self {
        SpecularQuadrature::HalfVector {
            theta_nodes: 16,
            phi_nodes: 32,
        }
    }
}

/// Environment-integrated lobes at one normal, per channel:
/// radiance = diffuse_scale * rho * diffuse + F0 * spec_base + spec_edge.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Shading {
    pub diffuse: Rgb,
    pub spec_base: Rgb,
    pub spec_edge: Rgb,
}

impl Shading {
    pub fn combine(&self, material: &Material, rho: &DiffuseAlbedo) -> Rgb {
        let kd = material.diffuse_scale();
        let f0 = material.f0(rho);
        core::array::from_fn(|c| kd * rho.0[c] * self.diffuse[c] + f0[c] * self.spec_base[c] + self.spec_edge[c])
    }

    /// The part of the radiance that does not depend on the albedo of a dielectric.
    pub fn albedo_free(&self, material: &Material) -> Rgb {
        self.combine(material, &DiffuseAlbedo::BLACK)
    }
}

/// Quadrature over a fixed environment grid; holds no radiance.
#[derive(Clone, Debug)]
pub struct Integrator {
    pub height: usize,
    pub width: usize,
    pub specular: SpecularQuadrature,
    dirs: Vec<Vec3>,
    weights: Vec<f64>,
}

impl Integrator {
    pub fn new(height: usize, specular: SpecularQuadrature) -> Result<Self> {
        let width = 2 * height;
        let grid = solid_angles(height, width)?;
        if let SpecularQuadrature::HalfVector { theta_nodes, phi_nodes } = specular {
            ensure!(
                theta_nodes >= 1 && phi_nodes >= 1,
                InvalidArgument,
                "half-vector quadrature needs at least one node per axis"
            );
        }
        let dirs = (0..height * width)
            .map(|k| crate::envmap::pixel_direction(height, width, k / width, k % width))
            .collect();
        Ok(Self {
            height,
            width,
            specular,
            dirs,
            weights: grid.weights(),
        })
    }

    pub fn for_env(env: &EnvironmentMap) -> Self {
        Self::new(env.height(), SpecularQuadrature::default()).expect("valid environment dimensions")
    }

    #[inline]
    pub fn env_pixels(&self) -> usize {
        self.height * self.width
    }

    fn check_env(&self, env: &EnvironmentMap) -> Result<()> {
        ensure!(
            env.height() == self.height,
            InvalidArgument,
            "integrator built for height {} but environment has height {}",
            self.height,
            env.height()
        );
        Ok(())
    }

    /// Calls `f(pixel, weight)` with `weight = diffuse_lobe * cos_i * d_omega`.
    fn visit_diffuse(&self, n: Vec3, material: &Material, mut f: impl FnMut(usize, f64)) {
        let cos_v = n.dot(VIEW_DIR);
        if cos_v <= 0.0 {
            return;
        }
        match material {
            Material::Lambert => {
                for (j, (d, w)) in self.dirs.iter().zip(&self.weights).enumerate() {
                    let cos_l = d.dot(n);
                    if cos_l > 0.0 {
                        f(j, cos_l * w / PI);
                    }
                }
            }
            Material::Disney(p) => {
                if p.metallic >= 1.0 {
                    return;
                }
                for (j, (d, w)) in self.dirs.iter().zip(&self.weights).enumerate() {
                    let cos_l = d.dot(n);
                    if cos_l > 0.0 {
                        let cos_d = (0.5 * (1.0 + d.dot(VIEW_DIR))).max(0.0).sqrt();
                        f(j, burley_diffuse(p.roughness, cos_l, cos_v, cos_d) * cos_l * w);
                    }
                }
            }
        }
    }

    /// Calls `f(pixel, base_weight, edge_weight)` for the specular lobe.
    fn visit_specular(&self, n: Vec3, psi: &ReflectanceParams, mut f: impl FnMut(usize, f64, f64)) {
        let cos_v = n.dot(VIEW_DIR);
        if cos_v <= 0.0 {
            return;
        }
        match self.specular {
            SpecularQuadrature::Direct => {
                for (j, (d, w)) in self.dirs.iter().zip(&self.weights).enumerate() {
                    let cos_l = d.dot(n);
                    if cos_l > 0.0 {
                        let lobes = disney_lobes(psi, *d, VIEW_DIR, n);
                        f(j, lobes.spec_base * cos_l * w, lobes.spec_edge * cos_l * w);
                    }
                }
            }
            SpecularQuadrature::HalfVector { theta_nodes, phi_nodes } => {
                let alpha = ggx_alpha(psi.roughness);
                let (t, b) = n.tangent_frame();
                let node_weight = 1.0 / (theta_nodes * phi_nodes) as f64;
                let g_v = smith_g1(alpha, cos_v);
                for a in 0..theta_nodes {
                    let u = (a as f64 + 0.5) / theta_nodes as f64;
                    let tan2 = alpha * alpha * u / (1.0 - u);
                    let cos_h = 1.0 / (1.0 + tan2).sqrt();
                    let sin_h = (1.0 - cos_h * cos_h).max(0.0).sqrt();
                    for c in 0..phi_nodes {
                        let phi = TAU * (c as f64 + 0.5) / phi_nodes as f64;
                        let (sp, cp) = phi.sin_cos();
                        let h = t * (sin_h * cp) + b * (sin_h * sp) + n * cos_h;
                        let cos_vh = VIEW_DIR.dot(h);
                        if cos_vh <= 0.0 {
                            continue;
                        }
                        let wi = VIEW_DIR.reflect(h);
                        let cos_l = wi.dot(n);
                        if cos_l <= 0.0 {
                            continue;
                        }
                        // pdf of wi is D (n.h) / (4 v.h); the BRDF's D and 4 n.l n.v cancel against it
                        let g = smith_g1(alpha, cos_l) * g_v * cos_vh / (cos_v * cos_h) * node_weight;
                        let s = schlick_weight(cos_vh);
                        for (px, w) in bilinear_taps(self.height, self.width, wi) {
                            if w != 0.0 {
                                f(px, g * (1.0 - s) * w, g * s * w);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Integrated lobes at normal `n` under `env`.
    pub fn shading(&self, env: &EnvironmentMap, n: Vec3, material: &Material) -> Shading {
        let data = env.data();
        let mut out = Shading::default();
        self.visit_diffuse(n, material, |j, w| {
            let l = data[j];
            for c in 0..3 {
                out.diffuse[c] += w * l[c];
            }
        });
        if let Material::Disney(p) = material {
            self.visit_specular(n, p, |j, wb, we| {
                let l = data[j];
                for c in 0..3 {
                    out.spec_base[c] += wb * l[c];
                    out.spec_edge[c] += we * l[c];
                }
            });
        }
        out
    }

    /// Outgoing radiance at normal `n`.
    pub fn radiance(&self, env: &EnvironmentMap, n: Vec3, material: &Material, rho: &DiffuseAlbedo) -> Rgb {
        self.shading(env, n, material).combine(material, rho)
    }

    /// Dense weights over environment pixels for a grey (white-albedo) surface:
    /// radiance = sum_j row[j] * L_j.
    pub fn transport_row(&self, n: Vec3, material: &Material, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.env_pixels());
        out.iter_mut().for_each(|v| *v = 0.0);
        let kd = material.diffuse_scale();
        self.visit_diffuse(n, material, |j, w| out[j] += kd * w);
        if let Material::Disney(p) = material {
            let f0 = fresnel_f0(p, &DiffuseAlbedo::WHITE)[0];
            self.visit_specular(n, p, |j, wb, we| out[j] += f0 * wb + we);
        }
    }
}

/// Render every disk cell; the whole disk is valid.
pub fn render_reflectance_map_with<E: Executor>(
    exec: &E,
    integrator: &Integrator,
    material: &Material,
    rho: &DiffuseAlbedo,
    env: &EnvironmentMap,
    resolution: usize,
) -> Result<ReflectanceMap> {
    ensure!(resolution >= 2, InvalidArgument, "reflectance map resolution must be >= 2");
    integrator.check_env(env)?;
    let mut map = ReflectanceMap::full_disk(resolution);
    let radiance = exec.map(resolution * resolution, |cell| match map.normal(cell) {
        Some(n) => integrator.radiance(env, n, material, rho),
        None => [0.0; 3],
    });
    map.radiance = radiance;
    Ok(map)
}

/// Reflectance map of a Disney material under `env` (sequential, default quadrature).
pub fn render_reflectance_map(
    psi: &ReflectanceParams,
    rho: &DiffuseAlbedo,
    env: &EnvironmentMap,
    resolution: usize,
) -> Result<ReflectanceMap> {
    render_reflectance_map_with(
        &Sequential,
        &Integrator::for_env(env),
        &Material::Disney(*psi),
        rho,
        env,
        resolution,
    )
}

/// Per-pixel integrated lobes for every foreground pixel.
pub fn shade_object<E: Executor>(
    exec: &E,
    integrator: &Integrator,
    normals: &NormalMap,
    material: &Material,
    env: &EnvironmentMap,
) -> Result<Vec<Option<Shading>>> {
    integrator.check_env(env)?;
    Ok(exec.map(normals.normals.len(), |px| {
        normals.mask[px].then(|| integrator.shading(env, normals.normals[px], material))
    }))
}

/// Render an object image; background pixels are zero.
pub fn render_object_with<E: Executor>(
    exec: &E,
    integrator: &Integrator,
    normals: &NormalMap,
    texture: &RgbImage,
    material: &Material,
    env: &EnvironmentMap,
) -> Result<RgbImage> {
    ensure!(
        texture.width == normals.width && texture.height == normals.height,
        InvalidArgument,
        "texture is {}x{} but the normal map is {}x{}",
        texture.width,
        texture.height,
        normals.width,
        normals.height
    );
    let shading = shade_object(exec, integrator, normals, material, env)?;
    let data = shading
        .iter()
        .zip(&texture.data)
        .map(|(s, rho)| match s {
            Some(s) => s.combine(material, &DiffuseAlbedo(*rho)),
            None => [0.0; 3],
        })
        .collect();
    RgbImage::new(normals.width, normals.height, data)
}

pub fn render_object(
    normals: &NormalMap,
    texture: &RgbImage,
    psi: &ReflectanceParams,
    env: &EnvironmentMap,
) -> Result<RgbImage> {
    render_object_with(
        &Sequential,
        &Integrator::for_env(env),
        normals,
        texture,
        &Material::Disney(*psi),
        env,
    )
}

/// Bin foreground pixels into the cells containing their normals and
/// average; cells nothing lands in stay invalid.
pub fn lift_to_sphere(image: &RgbImage, normals: &NormalMap, resolution: usize) -> Result<ReflectanceMap> {
    ensure!(resolution >= 2, InvalidArgument, "reflectance map resolution must be >= 2");
    ensure!(
        image.width == normals.width && image.height == normals.height,
        InvalidArgument,
        "image is {}x{} but the normal map is {}x{}",
        image.width,
        image.height,
        normals.width,
        normals.height
    );
    let mut map = ReflectanceMap::empty(resolution);
    let mut counts = vec![0usize; resolution * resolution];
    for px in 0..normals.normals.len() {
        if !normals.mask[px] {
            continue;
        }
        if let Some(cell) = map.cell_of_normal(normals.normals[px]) {
            let v = image.data[px];
            for c in 0..3 {
                map.radiance[cell][c] += v[c];
            }
            counts[cell] += 1;
        }
    }
    for (cell, &k) in counts.iter().enumerate() {
        if k > 0 {
            map.radiance[cell] = map.radiance[cell].map(|v| v / k as f64);
            map.mask[cell] = true;
        }
    }
    Ok(map)
}

/// Masked per-cell average of raw maps sharing one reflectance.
pub fn merge_raw_maps(maps: &[ReflectanceMap]) -> Result<ReflectanceMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("merge needs at least one map".into()))?;
    let res = first.resolution;
    for m in maps {
        ensure!(
            m.resolution == res,
            InvalidArgument,
            "cannot merge resolution {} with {}",
            m.resolution,
            res
        );
    }
    let mut out = ReflectanceMap::empty(res);
    for cell in 0..res * res {
        let mut acc = [0.0; 3];
        let mut k = 0usize;
        for m in maps.iter().filter(|m| m.mask[cell]) {
            for c in 0..3 {
                acc[c] += m.radiance[cell][c];
            }
            k += 1;
        }
        if k > 0 {
            out.radiance[cell] = acc.map(|v| v / k as f64);
            out.mask[cell] = true;
        }
    }
    Ok(out)
}

/// Dense light transport from environment pixels to the valid cells of a
/// reflectance map, for a white-albedo surface.
#[derive(Clone, Debug)]
pub struct TransportMatrix {
    /// Resolution of the reflectance map the cells index.
    pub resolution: usize,
    pub cells: Vec<usize>,
    pub env_pixels: usize,
    pub data: Vec<f64>,
}

impl TransportMatrix {
    pub fn build<E: Executor>(
        exec: &E,
        integrator: &Integrator,
        material: &Material,
        map: &ReflectanceMap,
    ) -> Self {
        let cells: Vec<usize> = map.valid_cells().filter(|c| map.normal(*c).is_some()).collect();
        let np = integrator.env_pixels();
        let rows = exec.map(cells.len(), |r| {
            let mut row = vec![0.0; np];
            integrator.transport_row(map.normal(cells[r]).unwrap(), material, &mut row);
            row
        });
        let mut data = Vec::with_capacity(cells.len() * np);
        for row in rows {
            data.extend_from_slice(&row);
        }
        Self {
            resolution: map.resolution,
            cells,
            env_pixels: np,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.env_pixels..(r + 1) * self.env_pixels]
    }

    /// Radiance at every row for the given environment values.
    pub fn apply(&self, env: &[Rgb]) -> Vec<Rgb> {
        (0..self.rows())
            .map(|r| {
                let mut acc = [0.0; 3];
                for (w, l) in self.row(r).iter().zip(env) {
                    acc[0] += w * l[0];
                    acc[1] += w * l[1];
                    acc[2] += w * l[2];
                }
                acc
            })
            .collect()
    }

    /// `T^T r`, accumulated into `out`.
    pub fn apply_transpose(&self, residual: &[Rgb], out: &mut [Rgb]) {
        for (r, res) in residual.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                o[0] += w * res[0];
                o[1] += w * res[1];
                o[2] += w * res[2];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmap::mirror_warp;
    use crate::sh::{self, ShCoefficients};
    use crate::rng::{CounterRng, Stream};

    pub(crate) fn smooth_env(height: usize, degree: usize, seed: u64) -> EnvironmentMap {
        let rng = CounterRng::new(seed, Stream::Test);
        let mut c = ShCoefficients::zeros(degree);
        for k in 1..c.coeffs.len() {
            let l = (k as f64).sqrt().floor();
            c.coeffs[k] = core::array::from_fn(|ch| 0.6 * rng.normal((3 * k + ch) as u64) / (1.0 + l));
        }
        c.coeffs[0] = [2.0 * PI.sqrt() * 2.0; 3];
        sh::reconstruct(&c, height).unwrap().clamp_negative()
    }

    #[test]
    fn cell_geometry() {
        let m = ReflectanceMap::full_disk(4);
        assert_eq!(m.cell_uv(0), (-0.75, 0.75));
        assert_eq!(m.valid_count(), 12);
        for cell in m.valid_cells() {
            let n = m.normal(cell).unwrap();
            assert_eq!(m.cell_of_normal(n), Some(cell));
        }
        assert_eq!(m.cell_of_normal(Vec3::new(0.0, 0.0, -1.0)), None);
    }

    #[test]
    fn lambert_constant_env_gives_constant_radiance() {
        let env = EnvironmentMap::constant(32, [2.0; 3]);
        let integ = Integrator::for_env(&env);
        let map = render_reflectance_map_with(&Sequential, &integ, &Material::Lambert, &DiffuseAlbedo::WHITE, &env, 16).unwrap();
        for cell in map.valid_cells() {
            let n = map.normal(cell).unwrap();
            // the horizon cuts pixels straddling it, so tolerance grows toward the rim
            let tol = if n.z > 0.3 { 2e-3 } else { 2e-2 };
            assert!((map.radiance[cell][0] - 2.0).abs() < tol * 2.0, "{:?} {}", n, map.radiance[cell][0]);
        }
    }

    #[test]
    fn zero_env_renders_zero() {
        let env = EnvironmentMap::constant(8, [0.0; 3]);
        let psi = ReflectanceParams::new(0.0, 0.5, 0.5).unwrap();
        let map = render_reflectance_map(&psi, &DiffuseAlbedo::WHITE, &env, 8).unwrap();
        assert!(map.radiance.iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn half_vector_matches_direct_sum_for_wide_lobes() {
        let env = smooth_env(32, 4, 5);
        let psi = ReflectanceParams::new(1.0, 0.8, 1.0).unwrap();
        let hv = Integrator::new(32, SpecularQuadrature::HalfVector { theta_nodes: 32, phi_nodes: 64 }).unwrap();
        let direct = Integrator::new(32, SpecularQuadrature::Direct).unwrap();
        let m = Material::Disney(psi);
        let map = ReflectanceMap::full_disk(12);
        let mut worst: f64 = 0.0;
        for cell in map.valid_cells() {
            let n = map.normal(cell).unwrap();
            if n.z < 0.3 {
                continue;
            }
            let a = hv.radiance(&env, n, &m, &DiffuseAlbedo::WHITE)[0];
            let b = direct.radiance(&env, n, &m, &DiffuseAlbedo::WHITE)[0];
            worst = worst.max((a - b).abs() / b);
        }
        assert!(worst < 0.02, "relative gap {worst}");
    }

    #[test]
    fn near_mirror_matches_mirror_warp() {
        let env = smooth_env(32, 6, 8);
        let map = render_reflectance_map(&ReflectanceParams::MIRROR, &DiffuseAlbedo::WHITE, &env, 24).unwrap();
        let mirror = mirror_warp(&env, 24).unwrap();
        for cell in map.valid_cells() {
            let n = map.normal(cell).unwrap();
            if n.z > 0.5 {
                let (a, b) = (map.radiance[cell][1], mirror.radiance[cell][1]);
                assert!((a - b).abs() < 0.02 * b.max(0.1), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rendering_is_linear_in_illumination() {
        let e1 = smooth_env(16, 3, 1);
        let e2 = smooth_env(16, 3, 2);
        let mix = EnvironmentMap::new(
            16,
            32,
            e1.data().iter().zip(e2.data()).map(|(a, b)| core::array::from_fn(|c| 0.7 * a[c] + 1.9 * b[c])).collect(),
        )
        .unwrap();
        let psi = ReflectanceParams::new(0.0, 0.4, 0.7).unwrap();
        let rho = DiffuseAlbedo([0.3, 0.6, 0.9]);
        let m1 = render_reflectance_map(&psi, &rho, &e1, 10).unwrap();
        let m2 = render_reflectance_map(&psi, &rho, &e2, 10).unwrap();
        let mm = render_reflectance_map(&psi, &rho, &mix, 10).unwrap();
        for cell in mm.valid_cells() {
            for c in 0..3 {
                let expect = 0.7 * m1.radiance[cell][c] + 1.9 * m2.radiance[cell][c];
                assert!((mm.radiance[cell][c] - expect).abs() <= 1e-6 * expect.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn transport_matches_white_render() {
        let env = smooth_env(16, 3, 4);
        let psi = ReflectanceParams::new(0.0, 0.3, 0.6).unwrap();
        let integ = Integrator::for_env(&env);
        let m = Material::Disney(psi);
        let map = render_reflectance_map(&psi, &DiffuseAlbedo::WHITE, &env, 8).unwrap();
        let t = TransportMatrix::build(&Sequential, &integ, &m, &map);
        let pred = t.apply(env.data());
        for (r, &cell) in t.cells.iter().enumerate() {
            for c in 0..3 {
                assert!((pred[r][c] - map.radiance[cell][c]).abs() < 1e-12 * map.radiance[cell][c].max(1.0));
            }
        }
    }

    #[test]
    fn object_and_map_agree_on_aligned_sphere() {
        let env = smooth_env(16, 3, 6);
        let psi = ReflectanceParams::new(0.0, 0.5, 0.5).unwrap();
        let normals = NormalMap::sphere(12);
        let white = RgbImage::filled(12, 12, [1.0; 3]);
        let img = render_object(&normals, &white, &psi, &env).unwrap();
        let map = render_reflectance_map(&psi, &DiffuseAlbedo::WHITE, &env, 12).unwrap();
        for px in 0..144 {
            if normals.mask[px] {
                for c in 0..3 {
                    assert!((img.data[px][c] - map.radiance[px][c]).abs() < 1e-6);
                }
            } else {
                assert_eq!(img.data[px], [0.0; 3]);
            }
        }
        // env scaling scales the image
        let img2 = render_object(&normals, &white, &psi, &env.scaled(3.0)).unwrap();
        for (a, b) in img.data.iter().zip(&img2.data) {
            for c in 0..3 {
                assert!((3.0 * a[c] - b[c]).abs() < 1e-9 * b[c].max(1.0));
            }
        }
        assert!(render_object(&normals, &RgbImage::filled(3, 3, [1.0; 3]), &psi, &env).is_err());
    }

    #[test]
    fn black_texture_leaves_only_the_fresnel_edge() {
        let env = smooth_env(16, 2, 9);
        let psi = ReflectanceParams::new(0.0, 0.5, 0.0).unwrap();
        let normals = NormalMap::sphere(9);
        let img = render_object(&normals, &RgbImage::filled(9, 9, [0.0; 3]), &psi, &env).unwrap();
        let integ = Integrator::for_env(&env);
        for px in 0..81 {
            if normals.mask[px] {
                let s = integ.shading(&env, normals.normals[px], &Material::Disney(psi));
                assert_eq!(img.data[px], s.spec_edge);
                // the center faces the camera: no edge term there
                if normals.normals[px].z > 0.999 {
                    assert!(img.data[px][0] < 1e-3 * s.diffuse[0]);
                }
            }
        }
    }

    #[test]
    fn lift_examples() {
        let normals = NormalMap::sphere(16);
        let img = RgbImage::filled(16, 16, [1.0; 3]);
        let map = lift_to_sphere(&img, &normals, 16).unwrap();
        assert_eq!(map.mask, ReflectanceMap::full_disk(16).mask);
        let plane = NormalMap::plane(7, 5);
        let map = lift_to_sphere(&RgbImage::filled(7, 5, [2.0; 3]), &plane, 9).unwrap();
        assert_eq!(map.valid_count(), 1);
        assert_eq!(map.radiance[4 * 9 + 4], [2.0; 3]);
        let empty = NormalMap::new(2, 1, vec![Vec3::default(); 2], vec![false; 2]).unwrap();
        assert_eq!(lift_to_sphere(&RgbImage::filled(2, 1, [1.0; 3]), &empty, 4).unwrap().valid_count(), 0);
        assert!(lift_to_sphere(&RgbImage::filled(3, 1, [1.0; 3]), &empty, 4).is_err());
    }

    #[test]
    fn lift_of_render_round_trip() {
        let env = smooth_env(16, 3, 11);
        let psi = ReflectanceParams::new(0.0, 0.6, 0.5).unwrap();
        let normals = NormalMap::sphere(40);
        let img = render_object(&normals, &RgbImage::filled(40, 40, [1.0; 3]), &psi, &env).unwrap();
        let lifted = lift_to_sphere(&img, &normals, 20).unwrap();
        let direct = render_reflectance_map(&psi, &DiffuseAlbedo::WHITE, &env, 20).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for cell in lifted.valid_cells() {
            for c in 0..3 {
                let d = lifted.radiance[cell][c] - direct.radiance[cell][c];
                num += d * d;
                den += direct.radiance[cell][c] * direct.radiance[cell][c];
            }
        }
        assert!((num / den).sqrt() < 0.02, "relative RMSE {}", (num / den).sqrt());
    }

    #[test]
    fn merge_examples() {
        let mut a = ReflectanceMap::empty(3);
        let mut b = ReflectanceMap::empty(3);
        a.mask[0] = true;
        a.radiance[0] = [1.0; 3];
        b.mask[1] = true;
        b.radiance[1] = [5.0; 3];
        a.mask[4] = true;
        a.radiance[4] = [1.0; 3];
        b.mask[4] = true;
        b.radiance[4] = [3.0; 3];
        assert_eq!(merge_raw_maps(core::slice::from_ref(&a)).unwrap(), a);
        let m = merge_raw_maps(&[a.clone(), b]).unwrap();
        assert_eq!(m.radiance[0], [1.0; 3]);
        assert_eq!(m.radiance[1], [5.0; 3]);
        assert_eq!(m.radiance[4], [2.0; 3]);
        assert_eq!(m.valid_count(), 3);
        assert!(merge_raw_maps(&[]).is_err());
        assert!(merge_raw_maps(&[a, ReflectanceMap::empty(4)]).is_err());
    }

    #[test]
    fn normal_map_validation() {
        assert!(NormalMap::new(1, 1, vec![Vec3::new(0.0, 0.0, 0.5)], vec![true]).is_err());
        assert!(NormalMap::new(1, 1, vec![Vec3::new(0.0, 0.0, -1.0)], vec![true]).is_err());
        assert!(NormalMap::new(1, 1, vec![Vec3::new(0.0, 0.0, 0.5)], vec![false]).is_ok());
    }
}
