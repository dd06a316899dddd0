//! Disney (Burley) BRDF restricted to the diffuse, retro-reflection and
//! specular lobes, parameterized by `(metallic, roughness, specular)`.
//!
//! With `F_L = (1 - n.l)^5`, `F_V = (1 - n.v)^5`, `R_R = 2 r (l.h)^2`:
//!
//! ```text
//! f_diff  = (1 - F_L / 2) (1 - F_V / 2)
//! f_retro = R_R (F_L + F_V + F_L F_V (R_R - 1))
//! f_spec  = D(h) G1(l) G1(v) F(l.h) / (4 n.l n.v)
//! f_r     = (1 - metallic) rho_d / pi (f_diff + f_retro) + f_spec
//! ```
//!
//! `D` is GGX with `alpha = max(r^2, ALPHA_MIN)`, `G1` the separable Smith
//! term, and `F` Schlick's approximation with
//! `F0 = lerp(0.08 specular, rho_d, metallic)`.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::{Rgb, Vec3};

/// Floor on the GGX width; keeps the mirror state integrable.
pub const ALPHA_MIN: f64 = 1e-3;

/// Spatially-uniform reflectance, ordered (metallic, roughness, specular).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectanceParams {
    pub metallic: f64,
    pub roughness: f64,
    pub specular: f64,
}

impl ReflectanceParams {
    /// The mirror state everything is scheduled toward.
    pub const MIRROR: Self = Self {
        metallic: 1.0,
        roughness: 0.0,
        specular: 1.0,
    };

    pub fn new(metallic: f64, roughness: f64, specular: f64) -> Result<Self> {
        let p = Self {
            metallic,
            roughness,
            specular,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("metallic", self.metallic),
            ("roughness", self.roughness),
            ("specular", self.specular),
        ] {
            ensure!(
                (0.0..=1.0).contains(&v),
                Validation,
                "{} = {} is outside [0, 1]",
                name,
                v
            );
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.metallic, self.roughness, self.specular]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            metallic: a[0],
            roughness: a[1],
            specular: a[2],
        }
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        ggx_alpha(self.roughness)
    }
}

/// Uniform diffuse albedo.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffuseAlbedo(pub Rgb);

impl DiffuseAlbedo {
    pub const WHITE: Self = Self([1.0; 3]);
    pub const BLACK: Self = Self([0.0; 3]);

    pub fn new(rgb: Rgb) -> Result<Self> {
        ensure!(
            rgb.iter().all(|v| (0.0..=1.0).contains(v)),
            Validation,
            "albedo {:?} is outside [0, 1]",
            rgb
        );
        Ok(Self(rgb))
    }
}

#[inline]
pub fn ggx_alpha(roughness: f64) -> f64 {
    (roughness * roughness).max(ALPHA_MIN)
}

/// GGX normal distribution for `cos_h = n.h`.
#[inline]
pub fn ggx_d(alpha: f64, cos_h: f64) -> f64 {
    let a2 = alpha * alpha;
    let t = cos_h * cos_h * (a2 - 1.0) + 1.0;
    a2 / (PI * t * t)
}

/// Separable Smith masking for GGX.
#[inline]
pub fn smith_g1(alpha: f64, cos: f64) -> f64 {
    let a2 = alpha * alpha;
    2.0 * cos / (cos + (a2 + (1.0 - a2) * cos * cos).sqrt())
}

#[inline]
pub fn schlick_weight(cos: f64) -> f64 {
    let m = (1.0 - cos).clamp(0.0, 1.0);
    let m2 = m * m;
    m2 * m2 * m
}

/// Normal-incidence Fresnel reflectance per channel.
#[inline]
pub fn fresnel_f0(psi: &ReflectanceParams, rho_d: &DiffuseAlbedo) -> Rgb {
    let dielectric = 0.08 * psi.specular;
    rho_d.0.map(|r| (1.0 - psi.metallic) * dielectric + psi.metallic * r)
}

/// Albedo-independent pieces of the BRDF for one direction pair:
/// `f_c = (1 - metallic) rho_c diffuse + F0_c spec_base + spec_edge`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Lobes {
    /// `(f_diff + f_retro) / pi`
    pub diffuse: f64,
    /// `D G (1 - S) / (4 n.l n.v)` with Schlick weight `S`
    pub spec_base: f64,
    /// `D G S / (4 n.l n.v)`
    pub spec_edge: f64,
}

impl Lobes {
    #[inline]
    pub fn combine(&self, psi: &ReflectanceParams, rho_d: &DiffuseAlbedo) -> Rgb {
        let f0 = fresnel_f0(psi, rho_d);
        core::array::from_fn(|c| {
            (1.0 - psi.metallic) * rho_d.0[c] * self.diffuse + f0[c] * self.spec_base + self.spec_edge
        })
    }
}

/// Burley diffuse plus retro-reflection, divided by pi.
#[inline]
pub fn burley_diffuse(roughness: f64, cos_l: f64, cos_v: f64, cos_d: f64) -> f64 {
    let fl = schlick_weight(cos_l);
    let fv = schlick_weight(cos_v);
    let rr = 2.0 * roughness * cos_d * cos_d;
    let f_diff = (1.0 - 0.5 * fl) * (1.0 - 0.5 * fv);
    let f_retro = rr * (fl + fv + fl * fv * (rr - 1.0));
    (f_diff + f_retro) / PI
}

/// Lobe values; zero when either direction is at or below the horizon.
pub fn disney_lobes(psi: &ReflectanceParams, wi: Vec3, wo: Vec3, n: Vec3) -> Lobes {
    let cos_l = wi.dot(n);
    let cos_v = wo.dot(n);
    if cos_l <= 0.0 || cos_v <= 0.0 {
        return Lobes::default();
    }
    let h = (wi + wo).normalize();
    let cos_d = wi.dot(h).clamp(0.0, 1.0);
    let cos_h = n.dot(h).clamp(0.0, 1.0);
    let alpha = psi.alpha();
    let spec = ggx_d(alpha, cos_h) * smith_g1(alpha, cos_l) * smith_g1(alpha, cos_v) / (4.0 * cos_l * cos_v);
    let s = schlick_weight(cos_d);
    Lobes {
        diffuse: burley_diffuse(psi.roughness, cos_l, cos_v, cos_d),
        spec_base: spec * (1.0 - s),
        spec_edge: spec * s,
    }
}

/// Full RGB BRDF value in 1/sr.
pub fn eval_disney(psi: &ReflectanceParams, rho_d: &DiffuseAlbedo, wi: Vec3, wo: Vec3, n: Vec3) -> Rgb {
    disney_lobes(psi, wi, wo, n).combine(psi, rho_d)
}

/// Squared normalized distance to the mirror state, in [0, 1].
pub fn distance_to_mirror(psi: &ReflectanceParams) -> f64 {
    let d = psi.to_array();
    let m = ReflectanceParams::MIRROR.to_array();
    (0..3).map(|k| (d[k] - m[k]) * (d[k] - m[k]) / 3.0).sum()
}

/// A dense BRDF table over Rusinkiewicz `(theta_h, theta_d, phi_d)`.
///
/// Axis nodes are `theta_h = (pi/2) i / n_h`, `theta_d = (pi/2) j / n_d`,
/// `phi_d = pi k / n_phi`, so every axis starts at zero. Cells whose
/// directions fall below the horizon hold zero and are masked out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MerlTable {
    pub dims: [usize; 3],
    pub values: Vec<Rgb>,
    pub mask: Vec<bool>,
}

impl MerlTable {
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn axis_value(&self, axis: usize, idx: usize) -> f64 {
        let span = if axis == 2 { PI } else { FRAC_PI_2 };
        span * idx as f64 / self.dims[axis] as f64
    }
}

/// `(w_i, w_o)` for half/difference angles with the normal at +Z.
pub fn rusinkiewicz_directions(theta_h: f64, theta_d: f64, phi_d: f64) -> (Vec3, Vec3) {
    let (sd, cd) = theta_d.sin_cos();
    let (sp, cp) = phi_d.sin_cos();
    let d = Vec3::new(sd * cp, sd * sp, cd);
    let d_mirror = Vec3::new(-d.x, -d.y, d.z);
    // rotate from the half-vector frame about +Y by theta_h
    let (sh, ch) = theta_h.sin_cos();
    let rot = |v: Vec3| Vec3::new(v.x * ch + v.z * sh, v.y, -v.x * sh + v.z * ch);
    (rot(d), rot(d_mirror))
}

pub fn tabulate_merl_style(
    psi: &ReflectanceParams,
    rho_d: &DiffuseAlbedo,
    dims: [usize; 3],
) -> Result<MerlTable> {
    ensure!(
        dims.iter().all(|d| *d >= 2),
        InvalidArgument,
        "tabulation needs at least 2 nodes per axis, got {:?}",
        dims
    );
    let n = Vec3::new(0.0, 0.0, 1.0);
    let mut table = MerlTable {
        dims,
        values: alloc::vec![[0.0; 3]; dims[0] * dims[1] * dims[2]],
        mask: alloc::vec![false; dims[0] * dims[1] * dims[2]],
    };
    for i in 0..dims[0] {
        let th = table.axis_value(0, i);
        for j in 0..dims[1] {
            let td = table.axis_value(1, j);
            for k in 0..dims[2] {
                let pd = table.axis_value(2, k);
                let (wi, wo) = rusinkiewicz_directions(th, td, pd);
                let idx = table.index(i, j, k);
                if wi.z > 1e-9 && wo.z > 1e-9 {
                    table.values[idx] = eval_disney(psi, rho_d, wi, wo, n);
                    table.mask[idx] = true;
                }
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{CounterRng, Stream};

    fn random_upper(rng: CounterRng, k: u64) -> Vec3 {
        let u1 = rng.uniform(2 * k);
        let u2 = rng.uniform(2 * k + 1);
        let z = u1.max(1e-3);
        let r = (1.0 - z * z).sqrt();
        let phi = 2.0 * PI * u2;
        Vec3::new(r * phi.cos(), r * phi.sin(), z)
    }

    #[test]
    fn normal_incidence_dielectric_diffuse() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let rho = DiffuseAlbedo([0.2, 0.5, 0.9]);
        for r in [0.0, 0.3, 1.0] {
            let psi = ReflectanceParams::new(0.0, r, 0.0).unwrap();
            let f = eval_disney(&psi, &rho, n, n, n);
            for c in 0..3 {
                assert!((f[c] - rho.0[c] / PI).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metallic_kills_diffuse() {
        let psi = ReflectanceParams::new(1.0, 0.7, 0.3).unwrap();
        let rng = CounterRng::new(2, Stream::Test);
        let n = Vec3::new(0.0, 0.0, 1.0);
        for k in 0..100 {
            let wi = random_upper(rng, 2 * k);
            let wo = random_upper(rng, 2 * k + 1);
            let a = eval_disney(&psi, &DiffuseAlbedo([0.3; 3]), wi, wo, n);
            let lobes = disney_lobes(&psi, wi, wo, n);
            let spec_only = fresnel_f0(&psi, &DiffuseAlbedo([0.3; 3]))
                .map(|f0| f0 * lobes.spec_base + lobes.spec_edge);
            assert_eq!(a, spec_only);
        }
    }

    #[test]
    fn black_dielectric_without_specular_is_black() {
        let psi = ReflectanceParams::new(0.0, 0.5, 0.0).unwrap();
        let n = Vec3::new(0.0, 0.0, 1.0);
        let rng = CounterRng::new(3, Stream::Test);
        for k in 0..100 {
            let f = eval_disney(&psi, &DiffuseAlbedo::BLACK, random_upper(rng, 2 * k), random_upper(rng, 2 * k + 1), n);
            // the Schlick edge term survives even with F0 = 0
            let lobes = disney_lobes(&psi, random_upper(rng, 2 * k), random_upper(rng, 2 * k + 1), n);
            assert!(f.iter().all(|v| (*v - lobes.spec_edge).abs() < 1e-15));
        }
        let f = eval_disney(&psi, &DiffuseAlbedo::BLACK, n, n, n);
        assert_eq!(f, [0.0; 3]);
    }

    #[test]
    fn below_horizon_is_zero() {
        let psi = ReflectanceParams::new(0.0, 0.5, 0.5).unwrap();
        let n = Vec3::new(0.0, 0.0, 1.0);
        let under = Vec3::new(0.0, 0.6, -0.8);
        assert_eq!(eval_disney(&psi, &DiffuseAlbedo::WHITE, under, n, n), [0.0; 3]);
        assert_eq!(eval_disney(&psi, &DiffuseAlbedo::WHITE, n, under, n), [0.0; 3]);
    }

    #[test]
    fn distance_examples() {
        let d = distance_to_mirror(&ReflectanceParams::new(0.0, 1.0, 0.0).unwrap());
        assert!((d - 1.0).abs() < 1e-15);
        assert_eq!(distance_to_mirror(&ReflectanceParams::MIRROR), 0.0);
        let d = distance_to_mirror(&ReflectanceParams::new(1.0, 0.5, 1.0).unwrap());
        assert!((d - 0.25 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn params_validate() {
        assert!(ReflectanceParams::new(1.1, 0.0, 0.0).is_err());
        assert!(ReflectanceParams::new(0.0, -0.1, 0.0).is_err());
        assert!(ReflectanceParams::new(0.0, 0.0, f64::NAN).is_err());
        assert!(DiffuseAlbedo::new([0.0, 1.0, 1.2]).is_err());
    }

    #[test]
    fn rusinkiewicz_round_trip() {
        let (wi, wo) = rusinkiewicz_directions(0.4, 0.3, 1.1);
        let h = (wi + wo).normalize();
        assert!((h.z - 0.4f64.cos()).abs() < 1e-12);
        assert!((wi.dot(h) - 0.3f64.cos()).abs() < 1e-12);
        assert!((wi.norm() - 1.0).abs() < 1e-12 && (wo.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn merl_table_examples() {
        let rho = DiffuseAlbedo([0.4, 0.5, 0.6]);
        let psi = ReflectanceParams::new(0.0, 0.6, 0.0).unwrap();
        let t = tabulate_merl_style(&psi, &rho, [8, 8, 8]).unwrap();
        assert_eq!(t, tabulate_merl_style(&psi, &rho, [8, 8, 8]).unwrap());
        let v = t.values[t.index(0, 0, 0)];
        for c in 0..3 {
            assert!((v[c] - rho.0[c] / PI).abs() < 1e-12);
        }
        // diffuse-only entries scale with the albedo
        let t2 = tabulate_merl_style(&psi, &DiffuseAlbedo([0.8, 1.0, 1.0]), [8, 8, 8]).unwrap();
        let spec_free = |tab: &MerlTable, idx: usize, c: usize, rho_c: f64| {
            // subtract the albedo-independent Schlick edge term
            let (i, rest) = (idx / 64, idx % 64);
            let (j, k) = (rest / 8, rest % 8);
            let (wi, wo) = rusinkiewicz_directions(tab.axis_value(0, i), tab.axis_value(1, j), tab.axis_value(2, k));
            let l = disney_lobes(&psi, wi, wo, Vec3::new(0.0, 0.0, 1.0));
            (tab.values[idx][c] - l.spec_edge) / rho_c
        };
        for idx in 0..t.values.len() {
            if t.mask[idx] {
                assert!((spec_free(&t, idx, 0, 0.4) - spec_free(&t2, idx, 0, 0.8)).abs() < 1e-12);
            } else {
                assert_eq!(t.values[idx], [0.0; 3]);
            }
        }
        assert!(tabulate_merl_style(&psi, &rho, [1, 8, 8]).is_err());
    }

    #[test]
    fn finite_differences_in_params_are_finite() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let rng = CounterRng::new(8, Stream::Test);
        let h = 1e-4;
        for k in 0..200u64 {
            let wi = random_upper(rng, 2 * k);
            let wo = random_upper(rng, 2 * k + 1);
            let base = [0.1 + 0.8 * rng.uniform(1000 + 3 * k), 0.1 + 0.8 * rng.uniform(1001 + 3 * k), 0.1 + 0.8 * rng.uniform(1002 + 3 * k)];
            for axis in 0..3 {
                let mut hi = base;
                let mut lo = base;
                hi[axis] += h;
                lo[axis] -= h;
                let fh = eval_disney(&ReflectanceParams::from_array(hi), &DiffuseAlbedo::WHITE, wi, wo, n);
                let fl = eval_disney(&ReflectanceParams::from_array(lo), &DiffuseAlbedo::WHITE, wi, wo, n);
                for c in 0..3 {
                    let d = (fh[c] - fl[c]) / (2.0 * h);
                    assert!(d.is_finite());
                }
            }
        }
    }
}
