//! Multi-object coordinate scheduling, the factorized forward process, the
//! joint likelihood of an illumination candidate, a grid-search reflectance
//! estimator and an annealed sampler over SH illumination coefficients.
//!
//! Every object's reflectance moves linearly toward the mirror state over a
//! shared number of steps `K`, so all objects reach the mirror map together.
//! Rendering is linear in the environment, so for fixed reflectance the data
//! term is a quadratic in the SH coefficients; the only nonlinearity is the
//! clamp of negative reconstructed radiance.
//!
//! The sampler runs one chain per sample, all chains in lockstep over `k` so
//! the per-step light transports are built once. A chain keeps an estimate of
//! every object's reflectance map at the current step. At step `k` it adds
//! jitter of std `delta * k / K`, takes accelerated gradient steps on the
//! likelihood of those maps under `Psi^(m,k)`, then moves the maps one step
//! toward the mirror state by re-rendering its own illumination estimate:
//! `L^(m,k-1) = L^(m,k) + R(Psi^(m,k-1), c) - R(Psi^(m,k), c)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::brdf::{distance_to_mirror, DiffuseAlbedo, ReflectanceParams};
use crate::envmap::EnvironmentMap;
use crate::error::{ensure, Error, Result};
use crate::exec::{Executor, Sequential};
use crate::geometry::Rgb;
use crate::render::{
    render_reflectance_map_with, Integrator, Material, ReflectanceMap, SpecularQuadrature, TransportMatrix,
};
use crate::rng::{CounterRng, Stream};
use crate::sh::{self, coeff_count, BasisGrid, ShCoefficients};

pub const DEFAULT_K_MAX: usize = 150;
pub const DEFAULT_SIGMA: f64 = 0.1;
pub const DEFAULT_DELTA: f64 = 0.125;
pub const DEFAULT_SAMPLER_DEGREE: usize = 8;

/// Number of shared steps: `round(K_max / M * sum_m d(Psi_m))`, clamped to `[1, K_max]`.
pub fn compute_k(psis: &[ReflectanceParams], k_max: usize) -> Result<usize> {
    ensure!(!psis.is_empty(), InvalidArgument, "compute_k needs at least one reflectance");
    ensure!(k_max >= 1, InvalidArgument, "K_max must be >= 1");
    for p in psis {
        p.validate()?;
    }
    let total: f64 = psis.iter().map(distance_to_mirror).sum();
    let raw = (k_max as f64 / psis.len() as f64 * total).round();
    Ok((raw as usize).clamp(1, k_max))
}

/// `Psi^(k) = (k/K) Psi^(K) + (1 - k/K) Psi0`, exact at both ends.
pub fn schedule_psi(psi_k: &ReflectanceParams, k: usize, big_k: usize) -> Result<ReflectanceParams> {
    ensure!(big_k >= 1, InvalidArgument, "K must be >= 1");
    ensure!(k <= big_k, InvalidArgument, "step {} outside [0, {}]", k, big_k);
    if k == 0 {
        return Ok(ReflectanceParams::MIRROR);
    }
    if k == big_k {
        return Ok(*psi_k);
    }
    let t = k as f64 / big_k as f64;
    let a = psi_k.to_array();
    let b = ReflectanceParams::MIRROR.to_array();
    Ok(ReflectanceParams::from_array(core::array::from_fn(|i| {
        (t * a[i] + (1.0 - t) * b[i]).clamp(0.0, 1.0)
    })))
}

/// Per-object reflectance at every step of a shared schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub k: usize,
    pub k_max: usize,
    pub endpoints: Vec<ReflectanceParams>,
}

impl Schedule {
    pub fn new(psis: &[ReflectanceParams], k_max: usize) -> Result<Self> {
        Ok(Self {
            k: compute_k(psis, k_max)?,
            k_max,
            endpoints: psis.to_vec(),
        })
    }

    pub fn objects(&self) -> usize {
        self.endpoints.len()
    }

    pub fn psi(&self, m: usize, k: usize) -> ReflectanceParams {
        schedule_psi(&self.endpoints[m], k, self.k).expect("step within schedule")
    }

    /// `table[m][k]` for `k` in `0..=K`.
    pub fn table(&self) -> Vec<Vec<ReflectanceParams>> {
        (0..self.objects())
            .map(|m| (0..=self.k).map(|k| self.psi(m, k)).collect())
            .collect()
    }
}

/// Noisy and noiseless reflectance maps for every object and step.
#[derive(Clone, Debug)]
pub struct ForwardTrajectory {
    pub schedule: Schedule,
    pub sigma: f64,
    pub seed: u64,
    pub resolution: usize,
    /// `clean[m][k]`
    pub clean: Vec<Vec<ReflectanceMap>>,
    /// `noisy[m][k]`
    pub noisy: Vec<Vec<ReflectanceMap>>,
}

impl ForwardTrajectory {
    pub fn slice(&self, m: usize, k: usize) -> &ReflectanceMap {
        &self.noisy[m][k]
    }
}

/// Render every scheduled step with a white albedo and add keyed Gaussian noise.
#[allow(clippy::too_many_arguments)]
pub fn forward_sample_with<E: Executor>(
    exec: &E,
    integrator: &Integrator,
    env: &EnvironmentMap,
    psis: &[ReflectanceParams],
    k_max: usize,
    sigma: f64,
    seed: u64,
    resolution: usize,
) -> Result<ForwardTrajectory> {
    ensure!(sigma >= 0.0 && sigma.is_finite(), InvalidArgument, "sigma must be finite and >= 0, got {}", sigma);
    let schedule = Schedule::new(psis, k_max)?;
    let mut cache: Vec<(ReflectanceParams, ReflectanceMap)> = Vec::new();
    let mut clean = Vec::with_capacity(psis.len());
    for m in 0..psis.len() {
        let mut row = Vec::with_capacity(schedule.k + 1);
        for k in 0..=schedule.k {
            let psi = schedule.psi(m, k);
            let map = match cache.iter().find(|(p, _)| *p == psi) {
                Some((_, map)) => map.clone(),
                None => {
                    let map = render_reflectance_map_with(
                        exec,
                        integrator,
                        &Material::Disney(psi),
                        &DiffuseAlbedo::WHITE,
                        env,
                        resolution,
                    )?;
                    cache.push((psi, map.clone()));
                    map
                }
            };
            row.push(map);
        }
        clean.push(row);
    }
    let root = CounterRng::new(seed, Stream::ForwardNoise);
    let noisy = clean
        .iter()
        .enumerate()
        .map(|(m, row)| {
            row.iter()
                .enumerate()
                .map(|(k, map)| {
                    let rng = root.with(m as u64).with(k as u64);
                    let mut out = map.clone();
                    if sigma > 0.0 {
                        for cell in 0..out.radiance.len() {
                            if out.mask[cell] {
                                for c in 0..3 {
                                    out.radiance[cell][c] += sigma * rng.normal((cell * 3 + c) as u64);
                                }
                            }
                        }
                    }
                    out
                })
                .collect()
        })
        .collect();
    Ok(ForwardTrajectory {
        schedule,
        sigma,
        seed,
        resolution,
        clean,
        noisy,
    })
}

pub fn forward_sample(
    env: &EnvironmentMap,
    psis: &[ReflectanceParams],
    sigma: f64,
    seed: u64,
    resolution: usize,
) -> Result<ForwardTrajectory> {
    forward_sample_with(
        &Sequential,
        &Integrator::for_env(env),
        env,
        psis,
        DEFAULT_K_MAX,
        sigma,
        seed,
        resolution,
    )
}

/// Sampler settings. `env_height` is the working resolution of the
/// illumination estimate (width is twice the height).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub degree: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub sigma: f64,
    pub delta: f64,
    #[serde(rename = "K_max")]
    pub k_max: usize,
    pub steps_per_k: usize,
    /// Fraction of `1 / Lipschitz` used as the gradient step.
    pub step_size: f64,
    /// Lower bound on the total number of gradient steps per chain.
    pub min_steps: usize,
    /// Observations are re-binned to at most this reflectance-map resolution.
    pub map_resolution: usize,
    pub env_height: usize,
    pub spec_theta_nodes: usize,
    pub spec_phi_nodes: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            degree: DEFAULT_SAMPLER_DEGREE,
            n_samples: 10,
            seed: 0,
            sigma: DEFAULT_SIGMA,
            delta: DEFAULT_DELTA,
            k_max: DEFAULT_K_MAX,
            steps_per_k: 8,
            step_size: 1.0,
            min_steps: 200,
            map_resolution: 32,
            env_height: 16,
            spec_theta_nodes: 8,
            spec_phi_nodes: 16,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.degree <= sh::METRIC_DEGREE, Config, "sampler degree {} exceeds {}", self.degree, sh::METRIC_DEGREE);
        ensure!(self.n_samples >= 1, Config, "n_samples must be >= 1");
        ensure!(self.sigma > 0.0 && self.sigma.is_finite(), Config, "sigma must be > 0, got {}", self.sigma);
        ensure!(self.delta >= 0.0 && self.delta.is_finite(), Config, "delta must be >= 0, got {}", self.delta);
        ensure!(self.k_max >= 1, Config, "K_max must be >= 1");
        ensure!(self.steps_per_k >= 1, Config, "steps_per_k must be >= 1");
        ensure!(
            self.step_size > 0.0 && self.step_size <= 1.0,
            Config,
            "step_size must lie in (0, 1], got {}",
            self.step_size
        );
        ensure!(self.env_height >= 2, Config, "env_height must be >= 2");
        ensure!(self.map_resolution >= 2, Config, "map_resolution must be >= 2");
        ensure!(
            self.spec_theta_nodes >= 1 && self.spec_phi_nodes >= 1,
            Config,
            "specular quadrature needs at least one node per axis"
        );
        Ok(())
    }

    pub fn integrator(&self) -> Result<Integrator> {
        Integrator::new(
            self.env_height,
            SpecularQuadrature::HalfVector {
                theta_nodes: self.spec_theta_nodes,
                phi_nodes: self.spec_phi_nodes,
            },
        )
    }

    fn steps_at_each_k(&self, big_k: usize) -> usize {
        self.steps_per_k.max(self.min_steps.div_ceil(big_k))
    }
}

/// Transport of one object restricted to its valid cells, and the same
/// operator composed with the SH basis.
#[derive(Clone, Debug)]
struct ObjectOperator {
    resolution: usize,
    cells: Vec<usize>,
    /// rows x env pixels
    transport: DMatrix<f64>,
    /// rows x coefficients
    projected: DMatrix<f64>,
}

/// Joint likelihood of SH illumination candidates for fixed per-object
/// reflectances and observation masks.
///
/// Coefficients and per-object data are `n x 3` and `rows x 3` matrices,
/// one column per color channel.
#[derive(Clone, Debug)]
pub struct LikelihoodModel {
    pub degree: usize,
    pub sigma: f64,
    n: usize,
    /// env pixels x coefficients
    basis: DMatrix<f64>,
    ops: Vec<ObjectOperator>,
    /// sum over objects of projected^T projected
    gram: DMatrix<f64>,
}

pub(crate) fn basis_matrix(basis: &BasisGrid) -> DMatrix<f64> {
    let n = basis.coeff_count();
    let pixels = basis.height * basis.width;
    DMatrix::from_row_slice(pixels, n, &basis.values)
}

pub(crate) fn coeffs_to_matrix(coeffs: &[Rgb]) -> DMatrix<f64> {
    DMatrix::from_fn(coeffs.len(), 3, |i, c| coeffs[i][c])
}

pub(crate) fn matrix_to_rgb(m: &DMatrix<f64>) -> Vec<Rgb> {
    (0..m.nrows()).map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]).collect()
}

impl LikelihoodModel {
    pub fn new<E: Executor>(
        exec: &E,
        integrator: &Integrator,
        basis: &BasisGrid,
        masks: &[ReflectanceMap],
        psis: &[ReflectanceParams],
        sigma: f64,
    ) -> Result<Self> {
        ensure!(
            basis.height == integrator.height && basis.width == integrator.width,
            InvalidArgument,
            "basis grid and integrator disagree on the environment resolution"
        );
        Self::with_basis(exec, integrator, basis.degree, basis_matrix(basis), masks, psis, sigma)
    }

    fn with_basis<E: Executor>(
        exec: &E,
        integrator: &Integrator,
        degree: usize,
        basis: DMatrix<f64>,
        masks: &[ReflectanceMap],
        psis: &[ReflectanceParams],
        sigma: f64,
    ) -> Result<Self> {
        ensure!(!masks.is_empty(), InvalidArgument, "the likelihood needs at least one observation");
        ensure!(
            masks.len() == psis.len(),
            InvalidArgument,
            "{} observations but {} reflectances",
            masks.len(),
            psis.len()
        );
        ensure!(sigma > 0.0 && sigma.is_finite(), InvalidArgument, "sigma must be > 0, got {}", sigma);
        let n = basis.ncols();
        let pixels = integrator.env_pixels();
        let mut ops = Vec::with_capacity(masks.len());
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for (obs, psi) in masks.iter().zip(psis) {
            let t = TransportMatrix::build(exec, integrator, &Material::Disney(*psi), obs);
            let transport = DMatrix::from_row_slice(t.rows(), pixels, &t.data);
            let projected = &transport * &basis;
            gram += projected.transpose() * &projected;
            ops.push(ObjectOperator {
                resolution: t.resolution,
                cells: t.cells,
                transport,
                projected,
            });
        }
        Ok(Self {
            degree,
            sigma,
            n,
            basis,
            ops,
            gram,
        })
    }

    /// Same basis and masks, different reflectances.
    fn rebuild<E: Executor>(&self, exec: &E, integrator: &Integrator, psis: &[ReflectanceParams]) -> Result<Self> {
        let masks: Vec<ReflectanceMap> = self
            .ops
            .iter()
            .map(|op| {
                let mut map = ReflectanceMap::empty(op.resolution);
                for &c in &op.cells {
                    map.mask[c] = true;
                }
                map
            })
            .collect();
        Self::with_basis(exec, integrator, self.degree, self.basis.clone(), &masks, psis, self.sigma)
    }

    pub fn objects(&self) -> usize {
        self.ops.len()
    }

    /// Observed values on the rows of each object, in transport order.
    pub fn gather(&self, observations: &[ReflectanceMap]) -> Result<Vec<DMatrix<f64>>> {
        ensure!(
            observations.len() == self.ops.len(),
            InvalidArgument,
            "{} observations for a model of {} objects",
            observations.len(),
            self.ops.len()
        );
        observations
            .iter()
            .zip(&self.ops)
            .map(|(obs, op)| {
                ensure!(
                    obs.resolution == op.resolution && op.cells.iter().all(|&c| obs.mask[c]),
                    InvalidArgument,
                    "observation mask differs from the model's"
                );
                Ok(DMatrix::from_fn(op.cells.len(), 3, |r, c| obs.radiance[op.cells[r]][c]))
            })
            .collect()
    }

    pub fn observation_count(&self) -> usize {
        self.ops.iter().map(|op| op.cells.len() * 3).sum()
    }

    fn check_degree(&self, coeffs: &ShCoefficients) -> Result<()> {
        ensure!(
            coeffs.degree == self.degree,
            InvalidArgument,
            "candidate has degree {} but the model uses degree {}",
            coeffs.degree,
            self.degree
        );
        Ok(())
    }

    fn check_data(&self, data: &[DMatrix<f64>]) -> Result<()> {
        ensure!(
            data.len() == self.ops.len(),
            InvalidArgument,
            "data for {} objects, model has {}",
            data.len(),
            self.ops.len()
        );
        for (d, op) in data.iter().zip(&self.ops) {
            if d.nrows() != op.cells.len() || d.ncols() != 3 {
                return Err(Error::DimensionMismatch {
                    expected: op.cells.len(),
                    actual: d.nrows(),
                });
            }
        }
        Ok(())
    }

    /// Environment radiance with negatives clamped, or `None` when nothing
    /// needed clamping.
    fn clamped_environment(&self, coeffs: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
        let mut env = &self.basis * coeffs;
        let mut clamped = false;
        for v in env.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
                clamped = true;
            }
        }
        (env, clamped)
    }

    /// Rendered radiance per object on its rows; negative illumination is
    /// clamped to zero first.
    pub(crate) fn render_matrix(&self, coeffs: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let (env, clamped) = self.clamped_environment(coeffs);
        if clamped {
            self.ops.iter().map(|op| &op.transport * &env).collect()
        } else {
            self.ops.iter().map(|op| &op.projected * coeffs).collect()
        }
    }

    pub fn render(&self, coeffs: &ShCoefficients) -> Result<Vec<Vec<Rgb>>> {
        self.check_degree(coeffs)?;
        Ok(self
            .render_matrix(&coeffs_to_matrix(&coeffs.coeffs))
            .iter()
            .map(matrix_to_rgb)
            .collect())
    }

    pub(crate) fn nll_matrix(&self, coeffs: &DMatrix<f64>, data: &[DMatrix<f64>]) -> f64 {
        let pred = self.render_matrix(coeffs);
        let sq: f64 = pred.iter().zip(data).map(|(p, d)| (p - d).norm_squared()).sum();
        let s2 = self.sigma * self.sigma;
        sq / (2.0 * s2) + 0.5 * self.observation_count() as f64 * (2.0 * PI * s2).ln()
    }

    /// Joint negative log-likelihood against per-object row values.
    pub fn nll(&self, coeffs: &ShCoefficients, data: &[DMatrix<f64>]) -> Result<f64> {
        self.check_degree(coeffs)?;
        self.check_data(data)?;
        Ok(self.nll_matrix(&coeffs_to_matrix(&coeffs.coeffs), data))
    }

    /// `sum_m projected_m^T data_m`, the linear term of the unclamped quadratic.
    pub(crate) fn rhs(&self, data: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut out = DMatrix::<f64>::zeros(self.n, 3);
        for (op, d) in self.ops.iter().zip(data) {
            out += op.projected.transpose() * d;
        }
        out
    }

    /// Gradient of the NLL; `rhs` must come from [`Self::rhs`] on the same data.
    pub(crate) fn gradient_matrix(&self, coeffs: &DMatrix<f64>, data: &[DMatrix<f64>], rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let s2 = self.sigma * self.sigma;
        let raw = &self.basis * coeffs;
        if raw.iter().all(|v| *v >= 0.0) {
            return (&self.gram * coeffs - rhs) / s2;
        }
        let env = raw.map(|v| v.max(0.0));
        let mut back = DMatrix::<f64>::zeros(env.nrows(), 3);
        for (op, d) in self.ops.iter().zip(data) {
            let resid = &op.transport * &env - d;
            back += op.transport.transpose() * resid;
        }
        for (b, e) in back.iter_mut().zip(raw.iter()) {
            if *e <= 0.0 {
                *b = 0.0;
            }
        }
        self.basis.transpose() * back / s2
    }

    /// Analytic gradient of [`Self::nll`] with respect to the coefficients.
    pub fn gradient(&self, coeffs: &ShCoefficients, data: &[DMatrix<f64>]) -> Result<ShCoefficients> {
        self.check_degree(coeffs)?;
        self.check_data(data)?;
        let g = self.gradient_matrix(&coeffs_to_matrix(&coeffs.coeffs), data, &self.rhs(data));
        Ok(ShCoefficients {
            degree: self.degree,
            coeffs: matrix_to_rgb(&g),
        })
    }

    /// Largest eigenvalue of the unclamped Hessian.
    pub fn lipschitz(&self) -> f64 {
        let lmax = self.gram.clone().symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max);
        lmax / (self.sigma * self.sigma)
    }

    /// Symmetric square root of the Gram matrix scaled to unit top eigenvalue.
    ///
    /// Noise pushed through this lands only where the observations can see it,
    /// in proportion to how fast descent pulls it back.
    pub fn noise_shape(&self) -> DMatrix<f64> {
        let eig = self.gram.clone().symmetric_eigen();
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        if top <= 0.0 {
            return DMatrix::zeros(self.n, self.n);
        }
        let roots = eig.eigenvalues.map(|v| (v.max(0.0) / top).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
    }

    /// Unclamped least squares restricted to bands `<= degree`, padded with zeros.
    pub fn least_squares(&self, data: &[DMatrix<f64>], degree: usize) -> Result<ShCoefficients> {
        self.check_data(data)?;
        let k = coeff_count(degree.min(self.degree));
        let rhs = self.rhs(data);
        let mut g = self.gram.view((0, 0), (k, k)).into_owned();
        let trace: f64 = g.diagonal().sum();
        let ridge = 1e-10 * (trace / k as f64).max(f64::MIN_POSITIVE);
        for a in 0..k {
            g[(a, a)] += ridge;
        }
        let chol = g
            .cholesky()
            .ok_or_else(|| Error::InsufficientData("observations do not constrain the low-order illumination".into()))?;
        let x = chol.solve(&rhs.rows(0, k).into_owned());
        let mut coeffs = vec![[0.0; 3]; self.n];
        for a in 0..k {
            coeffs[a] = [x[(a, 0)], x[(a, 1)], x[(a, 2)]];
        }
        Ok(ShCoefficients {
            degree: self.degree,
            coeffs,
        })
    }

    /// Sum of squared residuals of the degree-limited least-squares fit.
    fn least_squares_residual(&self, data: &[DMatrix<f64>], degree: usize) -> Result<f64> {
        let fit = coeffs_to_matrix(&self.least_squares(data, degree)?.coeffs);
        Ok(self
            .ops
            .iter()
            .zip(data)
            .map(|(op, d)| (&op.projected * &fit - d).norm_squared())
            .sum())
    }
}

/// Joint NLL of `candidate` for observations under per-object reflectances,
/// with the environment grid and quadrature of `config`.
pub fn joint_nll(
    candidate: &ShCoefficients,
    observations: &[ReflectanceMap],
    psis: &[ReflectanceParams],
    sigma: f64,
    config: &SamplerConfig,
) -> Result<f64> {
    ensure!(
        candidate.degree == config.degree,
        InvalidArgument,
        "candidate has degree {} but the sampler is configured for {}",
        candidate.degree,
        config.degree
    );
    let integrator = config.integrator()?;
    let basis = BasisGrid::new(config.degree, integrator.height, integrator.width);
    let observations: Vec<ReflectanceMap> = observations.iter().map(|o| rebin(o, config.map_resolution)).collect();
    let observations = observations.as_slice();
    let model = LikelihoodModel::new(&Sequential, &integrator, &basis, observations, psis, sigma)?;
    let data = model.gather(observations)?;
    model.nll(candidate, &data)
}

/// Grid and working resolution for [`estimate_reflectance_with`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub map_resolution: usize,
    pub env_height: usize,
    pub spec_theta_nodes: usize,
    pub spec_phi_nodes: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            map_resolution: 32,
            env_height: 16,
            spec_theta_nodes: 16,
            spec_phi_nodes: 32,
        }
    }
}

/// Candidate reflectances: metallic in {0, 1}, roughness 0.05..1 by 0.05,
/// specular 0..1 by 0.25.
pub fn reflectance_grid() -> Vec<ReflectanceParams> {
    let mut out = Vec::with_capacity(200);
    for metallic in [0.0, 1.0] {
        for r in 1..=20 {
            for s in 0..=4 {
                out.push(ReflectanceParams {
                    metallic,
                    roughness: r as f64 / 20.0,
                    specular: s as f64 / 4.0,
                });
            }
        }
    }
    out
}

/// Minimum valid cells for reflectance estimation.
pub const MIN_VALID_CELLS: usize = 32;

/// Re-bin a masked map onto a coarser grid by averaging valid cells.
pub fn rebin(map: &ReflectanceMap, resolution: usize) -> ReflectanceMap {
    if resolution >= map.resolution {
        return map.clone();
    }
    let mut out = ReflectanceMap::empty(resolution);
    let mut counts = vec![0usize; resolution * resolution];
    for cell in map.valid_cells() {
        let Some(n) = map.normal(cell) else { continue };
        if let Some(target) = out.cell_of_normal(n) {
            for c in 0..3 {
                out.radiance[target][c] += map.radiance[cell][c];
            }
            counts[target] += 1;
        }
    }
    for (cell, &k) in counts.iter().enumerate() {
        if k > 0 {
            out.radiance[cell] = out.radiance[cell].map(|v| v / k as f64);
            out.mask[cell] = true;
        }
    }
    out
}

/// Grid search for the reflectance that best explains `obs`.
///
/// With an illumination guess the residual is that of a plain render; without
/// one each candidate gets its own best degree-2 illumination. Ties (within a
/// relative `1e-9`) go to the larger roughness, then to grid order.
pub fn estimate_reflectance_with<E: Executor>(
    exec: &E,
    obs: &ReflectanceMap,
    env_guess: Option<&ShCoefficients>,
    config: &EstimatorConfig,
) -> Result<ReflectanceParams> {
    ensure!(
        obs.valid_count() >= MIN_VALID_CELLS,
        InsufficientData,
        "reflectance estimation needs at least {} valid cells, got {}",
        MIN_VALID_CELLS,
        obs.valid_count()
    );
    let obs = rebin(obs, config.map_resolution);
    let integrator = Integrator::new(
        config.env_height,
        SpecularQuadrature::HalfVector {
            theta_nodes: config.spec_theta_nodes,
            phi_nodes: config.spec_phi_nodes,
        },
    )?;
    let env = match env_guess {
        Some(c) => Some(
            sh::reconstruct(c, config.env_height)?
                .data()
                .iter()
                .map(|p| p.map(|v| v.max(0.0)))
                .collect::<Vec<Rgb>>(),
        ),
        None => None,
    };
    let basis = BasisGrid::new(2, integrator.height, integrator.width);
    let grid = reflectance_grid();
    let residuals: Vec<Result<f64>> = exec.map(grid.len(), |g| {
        let psi = grid[g];
        match &env {
            Some(env) => {
                let t = TransportMatrix::build(&Sequential, &integrator, &Material::Disney(psi), &obs);
                let pred = t.apply(env);
                Ok(t.cells
                    .iter()
                    .zip(&pred)
                    .map(|(&cell, p)| (0..3).map(|c| (p[c] - obs.radiance[cell][c]).powi(2)).sum::<f64>())
                    .sum())
            }
            None => {
                let model = LikelihoodModel::new(&Sequential, &integrator, &basis, core::slice::from_ref(&obs), &[psi], 1.0)?;
                let data = model.gather(core::slice::from_ref(&obs))?;
                Ok(model.least_squares_residual(&data, 2).unwrap_or(f64::INFINITY))
            }
        }
    });
    let residuals = residuals.into_iter().collect::<Result<Vec<f64>>>()?;
    let best = residuals.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure!(best.is_finite(), InsufficientData, "no candidate reflectance explains the observation");
    let scale: f64 = obs
        .valid_cells()
        .map(|c| obs.radiance[c].iter().map(|v| v * v).sum::<f64>())
        .sum();
    let tol = 1e-9 * best + 1e-12 * scale;
    let mut choice: Option<ReflectanceParams> = None;
    for (psi, r) in grid.iter().zip(&residuals) {
        if *r <= best + tol {
            match choice {
                Some(c) if c.roughness >= psi.roughness => {}
                _ => choice = Some(*psi),
            }
        }
    }
    Ok(choice.expect("the best candidate is within tolerance of itself"))
}

pub fn estimate_reflectance(obs: &ReflectanceMap, env_guess: Option<&ShCoefficients>) -> Result<ReflectanceParams> {
    estimate_reflectance_with(&Sequential, obs, env_guess, &EstimatorConfig::default())
}

/// One illumination candidate from an independent chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IlluminationSample {
    pub coeffs: ShCoefficients,
    /// Joint NLL against the original observations.
    pub nll: f64,
    pub seed: u64,
    pub chain: usize,
    /// Number of restarts before the chain stayed finite.
    pub restarts: u32,
}

impl IlluminationSample {
    /// The illumination the sample stands for: its reconstruction with
    /// negative radiance clamped.
    pub fn environment(&self, height: usize) -> Result<EnvironmentMap> {
        Ok(sh::reconstruct(&self.coeffs, height)?.clamp_negative())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingResult {
    pub samples: Vec<IlluminationSample>,
    /// Chains that stayed non-finite after every restart.
    pub failed: Vec<usize>,
    pub schedule: Schedule,
    /// NLL of each chain's initialization, in chain order, for the samples kept.
    pub initial_nll: Vec<f64>,
}

pub const MAX_RESTARTS: u32 = 3;

struct Chain {
    id: usize,
    attempt: u32,
    coeffs: DMatrix<f64>,
    maps: Vec<DMatrix<f64>>,
    diverged: bool,
}

/// Run `n_samples` annealed chains over SH coefficients.
pub fn sample_illumination_with<E: Executor>(
    exec: &E,
    observations: &[ReflectanceMap],
    psis: &[ReflectanceParams],
    config: &SamplerConfig,
) -> Result<SamplingResult> {
    config.validate()?;
    ensure!(!observations.is_empty(), InvalidArgument, "sampling needs at least one observation");
    ensure!(
        observations.len() == psis.len(),
        InvalidArgument,
        "{} observations but {} reflectances",
        observations.len(),
        psis.len()
    );
    ensure!(
        observations.iter().any(|o| o.valid_count() > 0),
        InsufficientData,
        "every observation is fully masked"
    );
    let schedule = Schedule::new(psis, config.k_max)?;
    let observations: Vec<ReflectanceMap> = observations.iter().map(|o| rebin(o, config.map_resolution)).collect();
    let integrator = config.integrator()?;
    let basis = BasisGrid::new(config.degree, integrator.height, integrator.width);
    let top_psis: Vec<ReflectanceParams> = (0..psis.len()).map(|m| schedule.psi(m, schedule.k)).collect();
    let top = LikelihoodModel::new(exec, &integrator, &basis, &observations, &top_psis, config.sigma)?;
    let obs_data = top.gather(&observations)?;
    let init = coeffs_to_matrix(&top.least_squares(&obs_data, 2)?.coeffs);
    let n = init.nrows();
    let top_shape = top.noise_shape();

    let mut done: Vec<Option<(Chain, f64, f64)>> = (0..config.n_samples).map(|_| None).collect();
    let mut pending: Vec<usize> = (0..config.n_samples).collect();
    for attempt in 0..=MAX_RESTARTS {
        if pending.is_empty() {
            break;
        }
        let mut chains: Vec<Chain> = pending
            .iter()
            .map(|&id| {
                let rng = CounterRng::new(config.seed, Stream::ChainInit).with(id as u64).with(attempt as u64);
                let z = DMatrix::from_fn(n, 3, |i, ch| rng.normal((i * 3 + ch) as u64));
                let coeffs = &init + &top_shape * z * config.delta;
                Chain {
                    id,
                    attempt,
                    coeffs,
                    maps: obs_data.clone(),
                    diverged: false,
                }
            })
            .collect();
        let init_nll: Vec<f64> = exec.map(chains.len(), |i| top.nll_matrix(&chains[i].coeffs, &obs_data));
        run_chains(exec, &integrator, &schedule, &top, config, &mut chains)?;
        let nlls: Vec<f64> = exec.map(chains.len(), |i| {
            if chains[i].diverged {
                f64::NAN
            } else {
                top.nll_matrix(&chains[i].coeffs, &obs_data)
            }
        });
        let mut retry = Vec::new();
        for ((chain, nll), init_nll) in chains.into_iter().zip(nlls).zip(init_nll) {
            if nll.is_finite() {
                let id = chain.id;
                done[id] = Some((chain, nll, init_nll));
            } else {
                log::warn!("chain {} diverged on attempt {}", chain.id, chain.attempt);
                retry.push(chain.id);
            }
        }
        pending = retry;
    }
    let mut samples = Vec::new();
    let mut initial_nll = Vec::new();
    for (chain, nll, init_nll) in done.into_iter().flatten() {
        samples.push(IlluminationSample {
            coeffs: ShCoefficients {
                degree: config.degree,
                coeffs: matrix_to_rgb(&chain.coeffs),
            },
            nll,
            seed: config.seed,
            chain: chain.id,
            restarts: chain.attempt,
        });
        initial_nll.push(init_nll);
    }
    ensure!(!samples.is_empty(), InsufficientData, "every chain diverged");
    Ok(SamplingResult {
        samples,
        failed: pending,
        schedule,
        initial_nll,
    })
}

fn run_chains<E: Executor>(
    exec: &E,
    integrator: &Integrator,
    schedule: &Schedule,
    top: &LikelihoodModel,
    config: &SamplerConfig,
    chains: &mut [Chain],
) -> Result<()> {
    let big_k = schedule.k;
    let steps = config.steps_at_each_k(big_k);
    let mut current: Option<LikelihoodModel> = None;
    for k in (1..=big_k).rev() {
        let model = current.take().unwrap_or_else(|| top.clone());
        let lip = model.lipschitz();
        let step = if lip > 0.0 { config.step_size / lip } else { 0.0 };
        let jitter = config.delta * k as f64 / big_k as f64;
        let shape = model.noise_shape();
        exec.for_each_mut(chains, |_, chain| {
            if chain.diverged {
                return;
            }
            let rng = CounterRng::new(config.seed, Stream::ChainJitter)
                .with(chain.id as u64)
                .with(chain.attempt as u64)
                .with(k as u64);
            let z = DMatrix::from_fn(chain.coeffs.nrows(), 3, |i, ch| rng.normal((i * 3 + ch) as u64));
            chain.coeffs += &shape * z * jitter;
            descend(&model, &chain.maps, &mut chain.coeffs, steps, step);
            chain.diverged = chain.coeffs.iter().any(|v| !v.is_finite());
        });
        if k > 1 {
            let psis: Vec<ReflectanceParams> = (0..schedule.objects()).map(|m| schedule.psi(m, k - 1)).collect();
            let next = model.rebuild(exec, integrator, &psis)?;
            exec.for_each_mut(chains, |_, chain| {
                if chain.diverged {
                    return;
                }
                let before = model.render_matrix(&chain.coeffs);
                let after = next.render_matrix(&chain.coeffs);
                for ((map, b), a) in chain.maps.iter_mut().zip(&before).zip(&after) {
                    *map += a - b;
                }
            });
            current = Some(next);
        }
    }
    Ok(())
}

/// Nesterov-accelerated gradient descent with a fixed step.
fn descend(model: &LikelihoodModel, data: &[DMatrix<f64>], coeffs: &mut DMatrix<f64>, steps: usize, step: f64) {
    if step == 0.0 {
        return;
    }
    let rhs = model.rhs(data);
    let mut prev = coeffs.clone();
    for t in 0..steps {
        let beta = t as f64 / (t as f64 + 3.0);
        let probe = &*coeffs + (&*coeffs - &prev) * beta;
        let grad = model.gradient_matrix(&probe, data, &rhs);
        prev.copy_from(coeffs);
        *coeffs = probe - grad * step;
    }
}

pub fn sample_illumination(
    observations: &[ReflectanceMap],
    psis: &[ReflectanceParams],
    n_samples: usize,
    seed: u64,
    config: &SamplerConfig,
) -> Result<SamplingResult> {
    let config = SamplerConfig {
        n_samples,
        seed,
        ..config.clone()
    };
    sample_illumination_with(&Sequential, observations, psis, &config)
}
