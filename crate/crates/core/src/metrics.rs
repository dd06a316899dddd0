//! Image, BRDF and distributional error metrics.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::brdf::{tabulate_merl_style, DiffuseAlbedo, ReflectanceParams};
use crate::envmap::{image_exposure_99, tonemap_with_exposure};
use crate::error::{ensure, Error, Result};
use crate::image::RgbImage;
use crate::sh::ShCoefficients;

/// Floor applied before every logarithm.
pub const LOG_FLOOR: f64 = 1e-6;
/// Per-axis variance floor relative to the largest eigenvalue.
pub const VARIANCE_FLOOR: f64 = 1e-8;
/// Absolute floor used only when every eigenvalue vanishes.
const ABSOLUTE_VARIANCE_FLOOR: f64 = 1e-12;
pub const DEFAULT_RETAINED_RATIO: f64 = 0.99;
/// Protocol: best 3 of 10 predictions.
pub const TOP_K: usize = 3;
pub const SAMPLES_PER_SCENE: usize = 10;
/// Rusinkiewicz grid used for BRDF comparisons.
pub const BRDF_TABLE_DIMS: [usize; 3] = [16, 16, 16];

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(x: &RgbImage, y: &RgbImage, mask: Option<&[bool]>) -> Result<()> {
    if !x.same_dims(y) {
        return Err(Error::DimensionMismatch {
            expected: y.width * y.height,
            actual: x.width * x.height,
        });
    }
    if let Some(m) = mask {
        if m.len() != x.data.len() {
            return Err(Error::DimensionMismatch {
                expected: x.data.len(),
                actual: m.len(),
            });
        }
    }
    Ok(())
}

fn masked_pairs<'a>(
    x: &'a RgbImage,
    y: &'a RgbImage,
    mask: Option<&'a [bool]>,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    x.data
        .iter()
        .zip(&y.data)
        .enumerate()
        .filter(move |(i, _)| mask.map_or(true, |m| m[*i]))
        .flat_map(|(_, (a, b))| (0..3).map(move |c| (a[c], b[c])))
}

/// Mean of `log y - log x` over the mask: the log offset that best aligns `x` to `y`.
pub fn log_offset(x: &RgbImage, y: &RgbImage, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(x, y, mask)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in masked_pairs(x, y, mask) {
        sum += b.max(LOG_FLOOR).ln() - a.max(LOG_FLOOR).ln();
        n += 1;
    }
    ensure!(n > 0, UndefinedMetric, "empty mask");
    Ok(sum / n as f64)
}

/// Population std of the floored log difference over the mask.
pub fn si_log_rmse(x: &RgbImage, y: &RgbImage, mask: Option<&[bool]>) -> Result<f64> {
    let offset = log_offset(x, y, mask)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in masked_pairs(x, y, mask) {
        let r = a.max(LOG_FLOOR).ln() - b.max(LOG_FLOOR).ln() + offset;
        sum += r * r;
        n += 1;
    }
    Ok((sum / n as f64).sqrt())
}

/// RMSE after the least-squares scale `<x, y> / <x, x>` is applied to `x`.
pub fn si_rmse(x: &RgbImage, y: &RgbImage, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(x, y, mask)?;
    let (mut xy, mut xx, mut n) = (0.0, 0.0, 0usize);
    for (a, b) in masked_pairs(x, y, mask) {
        xy += a * b;
        xx += a * a;
        n += 1;
    }
    ensure!(n > 0, UndefinedMetric, "empty mask");
    let s = if xx > 0.0 { xy / xx } else { 0.0 };
    let sum: f64 = masked_pairs(x, y, mask).map(|(a, b)| (s * a - b) * (s * a - b)).sum();
    Ok((sum / n as f64).sqrt())
}

/// Peak 1.0; identical images give `f64::INFINITY`.
pub fn psnr(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    check_pair(x, y, None)?;
    ensure!(!x.data.is_empty(), UndefinedMetric, "empty image");
    let sum: f64 = masked_pairs(x, y, None).map(|(a, b)| (a - b) * (a - b)).sum();
    let mse = sum / (3 * x.data.len()) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

// separable filter over the fully covered ("valid") region
fn filter_valid(plane: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width + 1 - SSIM_WINDOW;
    let oh = height + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; height * ow];
    for r in 0..height {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|t| w[t] * plane[r * width + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|t| w[t] * rows[(r + t) * ow + c]).sum();
        }
    }
    out
}

/// Mean local SSIM over channels and fully covered window positions.
pub fn ssim(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    check_pair(x, y, None)?;
    ensure!(
        x.width >= SSIM_WINDOW && x.height >= SSIM_WINDOW,
        InvalidArgument,
        "SSIM needs at least {0}x{0} pixels, got {1}x{2}",
        SSIM_WINDOW,
        x.width,
        x.height
    );
    let w = gaussian_window();
    let (width, height) = (x.width, x.height);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let a = x.channel(c);
        let b = y.channel(c);
        let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
        let mu_a = filter_valid(&a, width, height, &w);
        let mu_b = filter_valid(&b, width, height, &w);
        let aa = filter_valid(&prod(&a, &a), width, height, &w);
        let bb = filter_valid(&prod(&b, &b), width, height, &w);
        let ab = filter_valid(&prod(&a, &b), width, height, &w);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Scale `pred` by the log-optimal factor, then tone map both images with
/// the reference exposure. Returns `[0, 1]` images for PSNR and SSIM.
pub fn scaled_ldr_pair(pred: &RgbImage, reference: &RgbImage) -> Result<(RgbImage, RgbImage)> {
    let scale = log_offset(pred, reference, None)?.exp();
    let exposure = image_exposure_99(reference);
    let a = tonemap_with_exposure(&pred.scaled(scale), exposure).to_unit();
    let b = tonemap_with_exposure(reference, exposure).to_unit();
    Ok((a, b))
}

/// Scale-invariant log RMSE between tabulated BRDFs over cells valid in both.
pub fn brdf_log_rmse(
    psi_a: &ReflectanceParams,
    rho_a: &DiffuseAlbedo,
    psi_b: &ReflectanceParams,
    rho_b: &DiffuseAlbedo,
) -> Result<f64> {
    let ta = tabulate_merl_style(psi_a, rho_a, BRDF_TABLE_DIMS)?;
    let tb = tabulate_merl_style(psi_b, rho_b, BRDF_TABLE_DIMS)?;
    let mask: Vec<bool> = ta.mask.iter().zip(&tb.mask).map(|(a, b)| *a && *b).collect();
    let n = ta.values.len();
    let x = RgbImage::new(n, 1, ta.values)?;
    let y = RgbImage::new(n, 1, tb.values)?;
    si_log_rmse(&x, &y, Some(&mask))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

/// Mean of the `k` best values. NaNs are never counted as best.
pub fn topk_aggregate(values: &[f64], k: usize, direction: Direction) -> Result<f64> {
    ensure!(k >= 1, InvalidArgument, "k must be at least 1");
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    ensure!(
        sorted.len() >= k,
        InsufficientData,
        "top-{} aggregate needs {} usable values, got {}",
        k,
        k,
        sorted.len()
    );
    sorted.sort_by(|a, b| a.total_cmp(b));
    if direction == Direction::HigherBetter {
        sorted.reverse();
    }
    let best = &sorted[..k];
    if best.iter().all(|v| *v == best[0]) {
        return Ok(best[0]);
    }
    Ok(best.iter().sum::<f64>() / k as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric: alloc::string::String,
    pub direction: Direction,
    pub values: Vec<f64>,
    /// Top-3 mean, present once three values exist.
    pub aggregate: Option<f64>,
}

impl ScoreReport {
    pub fn new(metric: &str, direction: Direction, values: Vec<f64>) -> Self {
        let aggregate = topk_aggregate(&values, TOP_K, direction).ok();
        Self {
            metric: metric.into(),
            direction,
            values,
            aggregate,
        }
    }
}

/// Gaussian over SH coefficient vectors, restricted to its leading principal axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaGaussianModel {
    pub mean: Vec<f64>,
    /// One unit vector per retained axis, in descending variance order.
    pub axes: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
    pub ratio: f64,
    pub dim: usize,
    pub retained: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianScore {
    pub log_likelihood: f64,
    pub mahalanobis: f64,
    /// Norm of the part of the centered point outside the retained axes.
    pub residual_norm: f64,
}

pub fn fit_pca(samples: &[ShCoefficients], ratio: f64) -> Result<PcaGaussianModel> {
    ensure!(samples.len() >= 2, InsufficientData, "PCA needs at least 2 samples, got {}", samples.len());
    let degree = samples[0].degree;
    for s in samples {
        if s.degree != degree {
            return Err(Error::DimensionMismatch {
                expected: samples[0].coeffs.len(),
                actual: s.coeffs.len(),
            });
        }
    }
    let flat: Vec<Vec<f64>> = samples.iter().map(|s| s.flatten()).collect();
    fit_pca_vectors(&flat, ratio)
}

/// PCA over raw vectors; population covariance.
pub fn fit_pca_vectors(samples: &[Vec<f64>], ratio: f64) -> Result<PcaGaussianModel> {
    ensure!(samples.len() >= 2, InsufficientData, "PCA needs at least 2 samples, got {}", samples.len());
    ensure!(
        ratio > 0.0 && ratio <= 1.0,
        InvalidArgument,
        "retained ratio must lie in (0, 1], got {}",
        ratio
    );
    let d = samples[0].len();
    ensure!(d >= 1, InvalidArgument, "empty sample vectors");
    for s in samples {
        if s.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: s.len() });
        }
        ensure!(s.iter().all(|v| v.is_finite()), Validation, "PCA samples must be finite");
    }
    let n = samples.len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| samples[i][j] - mean[j]);

    // eigenpairs of the covariance, through the smaller of the two Gram forms
    let (values, vectors): (Vec<f64>, Vec<DVector<f64>>) = if n < d {
        let gram = &centered * centered.transpose() / n as f64;
        let eig = gram.symmetric_eigen();
        let mut pairs = Vec::new();
        for i in 0..n {
            let lambda = eig.eigenvalues[i].max(0.0);
            let v = centered.transpose() * eig.eigenvectors.column(i);
            let norm = v.norm();
            pairs.push((lambda, if norm > 0.0 { v / norm } else { v }));
        }
        pairs.into_iter().unzip()
    } else {
        let cov = centered.transpose() * &centered / n as f64;
        let eig = cov.symmetric_eigen();
        (0..d)
            .map(|i| (eig.eigenvalues[i].max(0.0), eig.eigenvectors.column(i).into_owned()))
            .unzip()
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let total: f64 = values.iter().sum();
    let top = values[order[0]];
    let mut retained = 0;
    let mut cumulative = 0.0;
    for &i in &order {
        retained += 1;
        cumulative += values[i];
        if cumulative >= ratio * total * (1.0 - 1e-12) {
            break;
        }
    }
    let floor = if top > 0.0 { VARIANCE_FLOOR * top } else { ABSOLUTE_VARIANCE_FLOOR };
    let mut axes = Vec::with_capacity(retained);
    let mut variances = Vec::with_capacity(retained);
    for &i in &order[..retained] {
        let mut axis: Vec<f64> = vectors[i].iter().copied().collect();
        if axis.iter().all(|v| *v == 0.0) {
            // degenerate data: any unit axis will do
            axis[0] = 1.0;
        }
        let scale = axis.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(first) = axis.iter().find(|v| v.abs() > 1e-12 * scale) {
            if *first < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
        }
        axes.push(axis);
        variances.push(values[i].max(floor));
    }
    Ok(PcaGaussianModel {
        mean,
        axes,
        variances,
        ratio,
        dim: d,
        retained,
    })
}

impl PcaGaussianModel {
    /// Coordinates of `x - mean` along the retained axes.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(self
            .axes
            .iter()
            .map(|a| a.iter().zip(x).zip(&self.mean).map(|((u, v), m)| u * (v - m)).sum())
            .collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (a, zi) in self.axes.iter().zip(z) {
            for (o, u) in out.iter_mut().zip(a) {
                *o += zi * u;
            }
        }
        out
    }

    pub fn score_vector(&self, x: &[f64]) -> Result<GaussianScore> {
        let z = self.project(x)?;
        let mut quad = 0.0;
        let mut log_det = 0.0;
        for (zi, var) in z.iter().zip(&self.variances) {
            quad += zi * zi / var;
            log_det += (2.0 * PI * var).ln();
        }
        let back = self.reconstruct(&z);
        let residual_norm = back.iter().zip(x).map(|(b, v)| (v - b) * (v - b)).sum::<f64>().sqrt();
        Ok(GaussianScore {
            log_likelihood: -0.5 * (quad + log_det),
            mahalanobis: quad.sqrt(),
            residual_norm,
        })
    }
}

pub fn gaussian_score(model: &PcaGaussianModel, gt: &ShCoefficients) -> Result<GaussianScore> {
    model.score_vector(&gt.flatten())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brdf::{disney_lobes, rusinkiewicz_directions};
    use crate::geometry::Vec3;
    use crate::rng::{CounterRng, Stream};

    fn img(data: &[f64]) -> RgbImage {
        RgbImage::new(data.len(), 1, data.iter().map(|v| [*v; 3]).collect()).unwrap()
    }

    #[test]
    fn log_rmse_examples() {
        let y = img(&[1.0, 1.0]);
        let x = img(&[1.0, 2.0f64.exp()]);
        assert!((si_log_rmse(&x, &y, None).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(si_log_rmse(&y, &y, None).unwrap(), 0.0);
        let z = img(&[0.3, 0.7]);
        assert!(si_log_rmse(&z.scaled(2.0), &z, None).unwrap() < 1e-12);
        assert!(matches!(
            si_log_rmse(&x, &y, Some(&[false, false])),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(si_log_rmse(&img(&[1.0]), &y, None).is_err());
    }

    #[test]
    fn si_rmse_removes_scale() {
        let y = img(&[0.2, 0.4, 0.9]);
        assert!(si_rmse(&y.scaled(3.0), &y, None).unwrap() < 1e-12);
        assert!(si_rmse(&img(&[1.0, 0.0, 0.0]), &y, None).unwrap() > 0.1);
    }

    #[test]
    fn psnr_examples() {
        let a = img(&[0.5; 4]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((psnr(&a, &img(&[0.6; 4])).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&img(&[0.0; 4]), &img(&[1.0; 4])).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &img(&[0.5; 3])).is_err());
    }

    #[test]
    fn ssim_examples() {
        let rng = CounterRng::new(3, Stream::Test);
        let noisy = |off: u64| {
            RgbImage::new(16, 12, (0..192).map(|i| core::array::from_fn(|c| rng.uniform(off + 3 * i + c as u64))).collect()).unwrap()
        };
        let a = noisy(0);
        let b = noisy(1000);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
        let c = RgbImage::filled(12, 12, [0.5; 3]);
        let d = RgbImage::filled(12, 12, [0.25; 3]);
        let want = (2.0 * 0.5 * 0.25 + SSIM_C1) / (0.25 + 0.0625 + SSIM_C1);
        assert!((ssim(&c, &d).unwrap() - want).abs() < 1e-12);
        assert!(matches!(ssim(&RgbImage::filled(10, 20, [0.0; 3]), &RgbImage::filled(10, 20, [0.0; 3])), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn brdf_distance() {
        let diffuse = ReflectanceParams::new(0.0, 0.5, 0.0).unwrap();
        let rho = DiffuseAlbedo([0.2, 0.3, 0.4]);
        assert_eq!(brdf_log_rmse(&diffuse, &rho, &diffuse, &rho).unwrap(), 0.0);
        let doubled = DiffuseAlbedo([0.4, 0.6, 0.8]);
        // the albedo-free Schlick edge lobe breaks pure scaling; without it the scale drops out
        assert!(brdf_log_rmse(&diffuse, &rho, &diffuse, &doubled).unwrap() > 0.0);
        let strip = |albedo: &DiffuseAlbedo| {
            let t = tabulate_merl_style(&diffuse, albedo, BRDF_TABLE_DIMS).unwrap();
            let mut data = t.values.clone();
            for i in 0..BRDF_TABLE_DIMS[0] {
                for j in 0..BRDF_TABLE_DIMS[1] {
                    for k in 0..BRDF_TABLE_DIMS[2] {
                        let (wi, wo) = rusinkiewicz_directions(t.axis_value(0, i), t.axis_value(1, j), t.axis_value(2, k));
                        let edge = disney_lobes(&diffuse, wi, wo, Vec3::new(0.0, 0.0, 1.0)).spec_edge;
                        data[t.index(i, j, k)].iter_mut().for_each(|v| *v -= edge);
                    }
                }
            }
            (RgbImage::new(data.len(), 1, data).unwrap(), t.mask)
        };
        let (a, mask) = strip(&rho);
        let (b, _) = strip(&doubled);
        assert!(si_log_rmse(&a, &b, Some(&mask)).unwrap() < 1e-9);
        let lambertish = ReflectanceParams::new(0.0, 1.0, 0.0).unwrap();
        assert!(brdf_log_rmse(&ReflectanceParams::MIRROR, &rho, &lambertish, &rho).unwrap() > 0.1);
    }

    #[test]
    fn topk_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(topk_aggregate(&v, 3, Direction::LowerBetter).unwrap(), 2.0);
        assert_eq!(topk_aggregate(&v, 3, Direction::HigherBetter).unwrap(), 9.0);
        assert_eq!(topk_aggregate(&[0.1; 10], 3, Direction::LowerBetter).unwrap(), 0.1);
        assert!(topk_aggregate(&v[..2], 3, Direction::LowerBetter).is_err());
        let with_inf = [f64::INFINITY, 30.0, 20.0, 10.0];
        assert_eq!(topk_aggregate(&with_inf, 3, Direction::HigherBetter).unwrap(), f64::INFINITY);
        assert!(ScoreReport::new("psnr", Direction::HigherBetter, vec![1.0, 2.0]).aggregate.is_none());
    }

    #[test]
    fn pca_on_a_line_keeps_one_axis() {
        let samples: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let m = fit_pca_vectors(&samples, DEFAULT_RETAINED_RATIO).unwrap();
        assert_eq!(m.retained, 1);
        assert!(m.axes[0][0] > 0.0);
        assert!(fit_pca_vectors(&samples[..1], 0.99).is_err());
    }

    #[test]
    fn pca_isotropic_oracle() {
        let rng = CounterRng::new(11, Stream::Test);
        let samples: Vec<Vec<f64>> = (0..10_000u64).map(|i| (0..3).map(|c| 2.0 * rng.normal(3 * i + c)).collect()).collect();
        let m = fit_pca_vectors(&samples, DEFAULT_RETAINED_RATIO).unwrap();
        assert_eq!(m.retained, 3);
        for v in &m.variances {
            assert!((v / 4.0 - 1.0).abs() < 0.05, "{v}");
        }
    }

    #[test]
    fn pca_ignores_duplication() {
        let rng = CounterRng::new(5, Stream::Test);
        let samples: Vec<Vec<f64>> = (0..8u64).map(|i| (0..4).map(|c| (c as f64 + 1.0) * rng.normal(4 * i + c)).collect()).collect();
        let doubled: Vec<Vec<f64>> = samples.iter().chain(&samples).cloned().collect();
        let a = fit_pca_vectors(&samples, 0.99).unwrap();
        let b = fit_pca_vectors(&doubled, 0.99).unwrap();
        assert_eq!(a.retained, b.retained);
        for (x, y) in a.variances.iter().zip(&b.variances) {
            assert!((x - y).abs() < 1e-10 * x);
        }
        for (u, v) in a.axes.iter().zip(&b.axes) {
            for (p, q) in u.iter().zip(v) {
                assert!((p - q).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gaussian_score_examples() {
        let m = PcaGaussianModel {
            mean: vec![1.0],
            axes: vec![vec![1.0]],
            variances: vec![4.0],
            ratio: 0.99,
            dim: 1,
            retained: 1,
        };
        assert_eq!(m.score_vector(&[1.0]).unwrap().mahalanobis, 0.0);
        assert!((m.score_vector(&[5.0]).unwrap().mahalanobis - 2.0).abs() < 1e-12);
        let unit = PcaGaussianModel {
            mean: vec![0.0; 3],
            axes: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            variances: vec![1.0; 3],
            ratio: 1.0,
            dim: 3,
            retained: 3,
        };
        let ll = unit.score_vector(&[0.0; 3]).unwrap().log_likelihood;
        assert!((ll + 1.5 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!(unit.score_vector(&[0.0; 2]).is_err());
    }

    #[test]
    fn sh_samples_round_trip_through_the_model() {
        let rng = CounterRng::new(9, Stream::Test);
        let samples: Vec<ShCoefficients> = (0..12u64)
            .map(|i| ShCoefficients {
                degree: 1,
                coeffs: (0..4u64).map(|k| core::array::from_fn(|c| rng.normal(12 * i + 3 * k + c as u64))).collect(),
            })
            .collect();
        let m = fit_pca(&samples, 0.99).unwrap();
        assert_eq!(m.dim, 12);
        let s = gaussian_score(&m, &ShCoefficients::from_flat(1, &m.mean).unwrap()).unwrap();
        assert!(s.mahalanobis < 1e-9);
        assert!(gaussian_score(&m, &ShCoefficients::zeros(2)).is_err());
    }
}
