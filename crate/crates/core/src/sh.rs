//! Real spherical harmonics on the environment sphere.
//!
//! Orthonormal real basis without the Condon-Shortley phase:
//!
//! * `m > 0`: `sqrt(2) N_lm P_l^m(cos theta) cos(m phi)`
//! * `m = 0`: `N_l0 P_l(cos theta)`
//! * `m < 0`: `sqrt(2) N_l|m| P_l^|m|(cos theta) sin(|m| phi)`
//!
//! with `(theta, phi)` from [`crate::geometry`]. Coefficient `(l, m)` lives at
//! index `l^2 + l + m`. The normalized Legendre values come from the
//! standard three-term recurrence in `l`, which stays finite well past
//! degree 32.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::envmap::EnvironmentMap;
use crate::error::{ensure, Error, Result};
use crate::geometry::{direction_to_angles, Rgb, Vec3};

/// Degree used by the distribution metric (1089 coefficients per channel).
pub const METRIC_DEGREE: usize = 32;

#[inline]
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

#[inline]
pub const fn index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Per-channel real SH coefficients up to `degree`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShCoefficients {
    pub degree: usize,
    pub coeffs: Vec<Rgb>,
}

impl ShCoefficients {
    pub fn zeros(degree: usize) -> Self {
        Self {
            degree,
            coeffs: vec![[0.0; 3]; coeff_count(degree)],
        }
    }

    pub fn new(degree: usize, coeffs: Vec<Rgb>) -> Result<Self> {
        if coeffs.len() != coeff_count(degree) {
            return Err(Error::DimensionMismatch {
                expected: coeff_count(degree),
                actual: coeffs.len(),
            });
        }
        ensure!(
            coeffs.iter().all(|c| c.iter().all(|v| v.is_finite())),
            Validation,
            "SH coefficients must be finite"
        );
        Ok(Self { degree, coeffs })
    }

    #[inline]
    pub fn get(&self, l: usize, m: i64) -> Rgb {
        self.coeffs[index(l, m)]
    }

    #[inline]
    pub fn set(&mut self, l: usize, m: i64, v: Rgb) {
        self.coeffs[index(l, m)] = v;
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c.map(|v| v * s)).collect(),
        }
    }

    /// Truncate or zero-pad to another degree.
    pub fn with_degree(&self, degree: usize) -> Self {
        let mut out = Self::zeros(degree);
        let n = coeff_count(degree.min(self.degree));
        out.coeffs[..n].copy_from_slice(&self.coeffs[..n]);
        out
    }

    /// Channel-major concatenation: all red coefficients, then green, then blue.
    pub fn flatten(&self) -> Vec<f64> {
        (0..3)
            .flat_map(|c| self.coeffs.iter().map(move |v| v[c]))
            .collect()
    }

    pub fn from_flat(degree: usize, flat: &[f64]) -> Result<Self> {
        let n = coeff_count(degree);
        if flat.len() != 3 * n {
            return Err(Error::DimensionMismatch {
                expected: 3 * n,
                actual: flat.len(),
            });
        }
        let coeffs = (0..n).map(|k| [flat[k], flat[n + k], flat[2 * n + k]]).collect();
        Self::new(degree, coeffs)
    }

    pub fn squared_norm(&self) -> f64 {
        self.coeffs.iter().flat_map(|c| c.iter()).map(|v| v * v).sum()
    }
}

/// Normalized associated Legendre values `N_lm P_l^m(x)` for `0 <= m <= l <= degree`,
/// written to `out[l(l+1)/2 + m]`.
pub fn legendre_normalized(degree: usize, x: f64, out: &mut [f64]) {
    let tri = |l: usize, m: usize| l * (l + 1) / 2 + m;
    debug_assert!(out.len() >= tri(degree, degree) + 1);
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = 0.5 / PI.sqrt();
    for m in 0..=degree {
        if m > 0 {
            pmm *= s * ((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
        }
        out[tri(m, m)] = pmm;
        if m == degree {
            break;
        }
        let mut prev2 = pmm;
        let mut prev1 = x * ((2 * m + 3) as f64).sqrt() * pmm;
        out[tri(m + 1, m)] = prev1;
        for l in m + 2..=degree {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            let cur = a * (x * prev1 - b * prev2);
            out[tri(l, m)] = cur;
            prev2 = prev1;
            prev1 = cur;
        }
    }
}

/// Azimuthal factors for one `phi`: `(cos m phi, sin m phi)` for `m <= degree`.
fn azimuth_table(degree: usize, phi: f64, cos_m: &mut [f64], sin_m: &mut [f64]) {
    for m in 0..=degree {
        let (s, c) = (m as f64 * phi).sin_cos();
        cos_m[m] = c;
        sin_m[m] = s;
    }
}

fn combine(degree: usize, legendre: &[f64], cos_m: &[f64], sin_m: &[f64], out: &mut [f64]) {
    let sqrt2 = core::f64::consts::SQRT_2;
    for l in 0..=degree {
        let base = l * (l + 1) / 2;
        let center = l * l + l;
        out[center] = legendre[base];
        for m in 1..=l {
            let p = sqrt2 * legendre[base + m];
            out[center + m] = p * cos_m[m];
            out[center - m] = p * sin_m[m];
        }
    }
}

/// All basis values at `(theta, phi)`.
pub fn eval_basis_angles(degree: usize, theta: f64, phi: f64, out: &mut [f64]) {
    let mut leg = vec![0.0; (degree + 1) * (degree + 2) / 2];
    let mut cm = vec![0.0; degree + 1];
    let mut sm = vec![0.0; degree + 1];
    legendre_normalized(degree, theta.cos(), &mut leg);
    azimuth_table(degree, phi, &mut cm, &mut sm);
    combine(degree, &leg, &cm, &sm, out);
}

/// All basis values along a unit direction.
pub fn eval_basis(degree: usize, dir: Vec3) -> Vec<f64> {
    let (theta, phi) = direction_to_angles(dir);
    let mut out = vec![0.0; coeff_count(degree)];
    eval_basis_angles(degree, theta, phi, &mut out);
    out
}

/// Basis sampled at every pixel center of an `h x 2h` grid, row-major by
/// pixel, `coeff_count(degree)` values per pixel.
#[derive(Clone, Debug)]
pub struct BasisGrid {
    pub degree: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl BasisGrid {
    pub fn new(degree: usize, height: usize, width: usize) -> Self {
        let n = coeff_count(degree);
        let mut values = vec![0.0; n * height * width];
        let mut leg = vec![0.0; (degree + 1) * (degree + 2) / 2];
        let mut cm = vec![0.0; (degree + 1) * width];
        let mut sm = vec![0.0; (degree + 1) * width];
        for j in 0..width {
            let phi = core::f64::consts::TAU * (j as f64 + 0.5) / width as f64;
            let r = j * (degree + 1)..(j + 1) * (degree + 1);
            let (c, s) = (&mut cm[r.clone()], &mut sm[r]);
            azimuth_table(degree, phi, c, s);
        }
        for i in 0..height {
            let theta = PI * (i as f64 + 0.5) / height as f64;
            legendre_normalized(degree, theta.cos(), &mut leg);
            for j in 0..width {
                let r = j * (degree + 1)..(j + 1) * (degree + 1);
                let px = i * width + j;
                combine(degree, &leg, &cm[r.clone()], &sm[r], &mut values[px * n..(px + 1) * n]);
            }
        }
        Self { degree, height, width, values }
    }

    #[inline]
    pub fn coeff_count(&self) -> usize {
        coeff_count(self.degree)
    }

    #[inline]
    pub fn pixel(&self, px: usize) -> &[f64] {
        let n = self.coeff_count();
        &self.values[px * n..(px + 1) * n]
    }
}

/// True when a projection cannot resolve all requested coefficients.
pub fn is_aliased(degree: usize, env: &EnvironmentMap) -> bool {
    coeff_count(degree) > env.height() * env.width()
}

/// Per-row quadrature weights (steradians per pixel) for projection.
///
/// Fejer's first rule in `cos(theta)` on the pixel-center rows, times the
/// uniform azimuth step. Each row weight differs from the pixel's solid angle
/// by `O(1/H^2)`, but products of band-limited functions with total degree
/// below `H` integrate exactly, which the plain solid-angle weights do not.
pub fn projection_row_weights(height: usize, width: usize) -> Vec<f64> {
    let n = height as f64;
    let dphi = TAU / width as f64;
    (0..height)
        .map(|i| {
            let theta = PI * (i as f64 + 0.5) / n;
            let mut s = 0.0;
            for k in 1..=height / 2 {
                let k = k as f64;
                s += (2.0 * k * theta).cos() / (4.0 * k * k - 1.0);
            }
            2.0 / n * (1.0 - 2.0 * s) * dphi
        })
        .collect()
}

/// Quadrature projection onto the real SH basis sampled at pixel centers.
pub fn project(env: &EnvironmentMap, degree: usize) -> ShCoefficients {
    if is_aliased(degree, env) {
        log::warn!(
            "SH degree {} needs {} coefficients but the {}x{} map has fewer pixels; expect aliasing",
            degree,
            coeff_count(degree),
            env.height(),
            env.width()
        );
    }
    let (h, w) = (env.height(), env.width());
    let rows = projection_row_weights(h, w);
    let basis = BasisGrid::new(degree, h, w);
    let n = coeff_count(degree);
    let mut coeffs = vec![[0.0; 3]; n];
    for (i, &wt) in rows.iter().enumerate() {
        for j in 0..w {
            let px = i * w + j;
            let v = env.data()[px];
            let wv = [v[0] * wt, v[1] * wt, v[2] * wt];
            for (c, y) in coeffs.iter_mut().zip(basis.pixel(px)) {
                c[0] += wv[0] * y;
                c[1] += wv[1] * y;
                c[2] += wv[2] * y;
            }
        }
    }
    ShCoefficients { degree, coeffs }
}

/// Evaluate the expansion at every pixel center. Values are not clamped.
pub fn reconstruct(coeffs: &ShCoefficients, height: usize) -> Result<EnvironmentMap> {
    ensure!(height >= 1, InvalidArgument, "reconstruction height must be >= 1");
    let width = 2 * height;
    let basis = BasisGrid::new(coeffs.degree, height, width);
    let data = (0..height * width)
        .map(|px| {
            let mut v = [0.0; 3];
            for (c, y) in coeffs.coeffs.iter().zip(basis.pixel(px)) {
                v[0] += c[0] * y;
                v[1] += c[1] * y;
                v[2] += c[2] * y;
            }
            v
        })
        .collect();
    EnvironmentMap::from_signed(height, width, data)
}

/// Evaluate the expansion along one direction.
pub fn evaluate(coeffs: &ShCoefficients, dir: Vec3) -> Rgb {
    let y = eval_basis(coeffs.degree, dir);
    let mut v = [0.0; 3];
    for (c, b) in coeffs.coeffs.iter().zip(&y) {
        for k in 0..3 {
            v[k] += c[k] * b;
        }
    }
    v
}

/// Per-degree power `p_l = sum_m sum_channels c_lm^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpectrum {
    pub power: Vec<f64>,
}

pub fn band_power(coeffs: &ShCoefficients) -> BandSpectrum {
    let power = (0..=coeffs.degree)
        .map(|l| {
            coeffs.coeffs[l * l..(l + 1) * (l + 1)]
                .iter()
                .flat_map(|c| c.iter())
                .map(|v| v * v)
                .sum()
        })
        .collect();
    BandSpectrum { power }
}

/// Clamped-cosine kernel `A_l` so that irradiance coefficients are `A_l c_lm`.
pub fn lambert_kernel(l: usize) -> f64 {
    match l {
        0 => PI,
        1 => 2.0 * PI / 3.0,
        _ if l % 2 == 1 => 0.0,
        _ => {
            // l! / (2^l ((l/2)!)^2) = C(l, l/2) / 2^l, built as a running product.
            let half = l / 2;
            let mut central = 1.0;
            for k in 1..=half {
                central *= (half + k) as f64 / (4.0 * k as f64);
            }
            let sign = if (half - 1) % 2 == 0 { 1.0 } else { -1.0 };
            2.0 * PI * sign / (((l + 2) * (l - 1)) as f64) * central
        }
    }
}

/// Convolution with the clamped cosine lobe (irradiance from radiance).
pub fn lambert_convolve(coeffs: &ShCoefficients) -> ShCoefficients {
    let mut out = coeffs.clone();
    for l in 0..=coeffs.degree {
        let a = lambert_kernel(l);
        for c in &mut out.coeffs[l * l..(l + 1) * (l + 1)] {
            *c = c.map(|v| v * a);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{CounterRng, Stream};
    use crate::envmap::solid_angles;

    fn random_coeffs(degree: usize, seed: u64) -> ShCoefficients {
        let rng = CounterRng::new(seed, Stream::Test);
        let coeffs = (0..coeff_count(degree))
            .map(|k| core::array::from_fn(|c| rng.normal((k * 3 + c) as u64)))
            .collect();
        ShCoefficients { degree, coeffs }
    }

    #[test]
    fn low_order_closed_forms() {
        let d = Vec3::new(0.3, 0.5, -0.2).normalize();
        let y = eval_basis(2, d);
        let k0 = 0.5 / PI.sqrt();
        let k1 = (3.0 / (4.0 * PI)).sqrt();
        assert!((y[0] - k0).abs() < 1e-14);
        assert!((y[index(1, 0)] - k1 * d.y).abs() < 1e-14);
        // sin(theta) sin(phi) = x, sin(theta) cos(phi) = -z
        assert!((y[index(1, -1)] - k1 * d.x).abs() < 1e-14);
        assert!((y[index(1, 1)] + k1 * d.z).abs() < 1e-14);
        let k20 = (5.0 / (16.0 * PI)).sqrt();
        assert!((y[index(2, 0)] - k20 * (3.0 * d.y * d.y - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn legendre_finite_at_degree_32() {
        let mut out = vec![0.0; 33 * 34 / 2];
        for &x in &[-1.0, -0.999, 0.0, 0.3, 0.99999, 1.0] {
            legendre_normalized(32, x, &mut out);
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn constant_map_projects_to_dc() {
        let env = EnvironmentMap::constant(128, [1.0; 3]);
        let c = project(&env, 32);
        assert_eq!(c.coeffs.len(), 1089);
        let dc = 2.0 * PI.sqrt();
        for ch in 0..3 {
            assert!((c.coeffs[0][ch] - dc).abs() < 1e-6);
        }
        let worst = c.coeffs[1..].iter().flat_map(|v| v.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(worst < 1e-6, "leakage {worst}");
    }

    #[test]
    fn projecting_a_basis_function_isolates_it() {
        let env = EnvironmentMap::from_fn(128, |d| {
            let v = eval_basis(1, d)[index(1, 0)];
            [v, v, v]
        });
        let c = project(&EnvironmentMap::from_signed(128, 256, env.data().to_vec()).unwrap(), 4);
        for k in 0..c.coeffs.len() {
            let expect = if k == index(1, 0) { 1.0 } else { 0.0 };
            assert!((c.coeffs[k][0] - expect).abs() < 1e-4, "k={k}: {}", c.coeffs[k][0]);
        }
    }

    #[test]
    fn reconstruct_dc_is_constant() {
        let mut c = ShCoefficients::zeros(3);
        c.coeffs[0] = [2.0 * PI.sqrt(); 3];
        let env = reconstruct(&c, 8).unwrap();
        assert!(env.data().iter().all(|p| p.iter().all(|v| (v - 1.0).abs() < 1e-12)));
        let env = reconstruct(&ShCoefficients::zeros(5), 8).unwrap();
        assert!(env.data().iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn round_trip_band_limited() {
        let c = random_coeffs(8, 3);
        let back = project(&reconstruct(&c, 128).unwrap(), 8);
        let err = c
            .coeffs
            .iter()
            .zip(&back.coeffs)
            .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
            .fold(0.0f64, f64::max);
        assert!(err < 1e-4, "round trip error {err}");
    }

    #[test]
    fn projection_weights_integrate_polynomials_exactly() {
        for (h, w) in [(4, 8), (16, 32), (128, 256)] {
            let rows = projection_row_weights(h, w);
            assert!(rows.iter().all(|r| *r > 0.0));
            for k in (0..h).step_by(2) {
                let sum: f64 = rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| r * (PI * (i as f64 + 0.5) / h as f64).cos().powi(k as i32))
                    .sum::<f64>()
                    * w as f64;
                let exact = 4.0 * PI / (k + 1) as f64;
                assert!((sum - exact).abs() < 1e-12, "h={h} k={k}");
            }
            let grid = solid_angles(h, w).unwrap();
            let mid = grid.row_weight(h / 2);
            assert!(h < 16 || (rows[h / 2] - mid).abs() < 0.01 * mid);
        }
    }

    #[test]
    fn gram_matrix_near_identity() {
        let (h, w, deg) = (128, 256, 8);
        let basis = BasisGrid::new(deg, h, w);
        let grid = solid_angles(h, w).unwrap();
        let n = coeff_count(deg);
        let mut gram = vec![0.0; n * n];
        for px in 0..h * w {
            let wt = grid.row_weight(px / w);
            let y = basis.pixel(px);
            for a in 0..n {
                for b in 0..n {
                    gram[a * n + b] += y[a] * y[b] * wt;
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a * n + b] - expect).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn band_power_scaling_and_parseval() {
        let c = random_coeffs(6, 9);
        let p = band_power(&c);
        let total: f64 = p.power.iter().sum();
        assert!((total - c.squared_norm()).abs() <= 1e-12 * total);
        let p2 = band_power(&c.scaled(3.0));
        for (a, b) in p.power.iter().zip(&p2.power) {
            assert!((b - 9.0 * a).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let mut dc = ShCoefficients::zeros(4);
        dc.coeffs[0] = [1.0, 2.0, 0.0];
        let p = band_power(&dc);
        assert_eq!(p.power[0], 5.0);
        assert!(p.power[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn azimuthal_shift_keeps_band_power() {
        let c = random_coeffs(8, 21);
        let env = reconstruct(&c, 64).unwrap();
        let (h, w) = (env.height(), env.width());
        let shift = 13;
        let shifted: Vec<Rgb> = (0..h * w)
            .map(|px| env.data()[(px / w) * w + (px % w + w - shift) % w])
            .collect();
        let shifted = EnvironmentMap::from_signed(h, w, shifted).unwrap();
        let a = band_power(&project(&env, 8));
        let b = band_power(&project(&shifted, 8));
        for l in 0..=8 {
            assert!((a.power[l] - b.power[l]).abs() < 1e-3 * a.power[l].max(1.0), "l={l}");
        }
        // m = 0 coefficients do not move under an azimuthal shift
        let pa = project(&env, 8);
        let pb = project(&shifted, 8);
        for l in 0..=8 {
            assert!((pa.get(l, 0)[0] - pb.get(l, 0)[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn lambert_kernel_values() {
        assert!((lambert_kernel(0) - PI).abs() < 1e-15);
        assert!((lambert_kernel(1) - 2.0 * PI / 3.0).abs() < 1e-15);
        assert!((lambert_kernel(2) - PI / 4.0).abs() < 1e-15);
        assert_eq!(lambert_kernel(3), 0.0);
        assert_eq!(lambert_kernel(31), 0.0);
        // Ramamoorthi-Hanrahan: A_4 = -pi/24
        assert!((lambert_kernel(4) + PI / 24.0).abs() < 1e-15);
        assert!(lambert_kernel(32).is_finite() && lambert_kernel(32).abs() < 1e-2);
    }

    #[test]
    fn lambert_convolve_examples() {
        let mut c = ShCoefficients::zeros(4);
        c.coeffs[0] = [1.0, 2.0, 3.0];
        let out = lambert_convolve(&c);
        for k in 0..3 {
            assert!((out.coeffs[0][k] - PI * c.coeffs[0][k]).abs() < 1e-14);
        }
        let mut c3 = ShCoefficients::zeros(4);
        for m in -3..=3 {
            c3.set(3, m, [1.0; 3]);
        }
        assert!(lambert_convolve(&c3).coeffs.iter().all(|v| *v == [0.0; 3]));
        assert!(lambert_convolve(&ShCoefficients::zeros(4)).coeffs.iter().all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn projection_is_linear() {
        let env = EnvironmentMap::from_fn(16, |d| [d.x.abs() + 0.1, d.y * d.y, 1.0 + d.z]);
        let a = project(&env, 4);
        let b = project(&env.scaled(2.5), 4);
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            for k in 0..3 {
                assert!((y[k] - 2.5 * x[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flatten_round_trip() {
        let c = random_coeffs(3, 4);
        assert_eq!(ShCoefficients::from_flat(3, &c.flatten()).unwrap(), c);
        assert!(ShCoefficients::from_flat(2, &c.flatten()).is_err());
    }
}
