//! Monte Carlo ensembles of the c-number Langevin equation
//! `dα/dt = M α + φ(t)` with circular complex Gaussian white noise,
//! `E[φ(t) φ†(t′)] = 2 n_th γ δ(t − t′)` and `E[φ φᵀ] = 0`.
//!
//! Each trajectory draws from its own ChaCha stream selected by
//! `(base_seed, trajectory index)`, and moment accumulators are merged in a
//! fixed chunk order, so estimates are bit-identical for a given
//! configuration regardless of thread scheduling.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, frobenius, CMatrix, CVector};
use crate::model::{build_damping_matrix, DampingMatrix, SystemSpec};
use crate::moments::{self, derive_drift, DriftMatrix, GaussianState};
use crate::quad::{self, Tolerance};

/// Default cap on stored path values (`K · T_grid · L`) when full paths are kept.
pub const DEFAULT_PATH_BUDGET: usize = 50_000_000;

const CHUNK: usize = 64;

/// Noise intensity `D = 2 n_th γ` with a factor `R R† = D`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    intensity: CMatrix,
    factor: CMatrix,
}

impl NoiseModel {
    pub fn new(gamma: &DampingMatrix, n_th: f64) -> Result<Self> {
        if !n_th.is_finite() || n_th < 0.0 {
            return Err(Error::InvalidArgument(format!("n_th must be non-negative, got {n_th}")));
        }
        let intensity = gamma.matrix() * c(2.0 * n_th);
        let factor = linalg::psd_factor(&intensity, 1e-12)
            .map_err(|min| Error::Consistency(format!("noise intensity is not PSD (eigenvalue {min:.3e})")))?;
        let scale = frobenius(&intensity);
        let residual = frobenius(&(&factor * factor.adjoint() - &intensity));
        if residual > 1e-10 * scale {
            return Err(Error::Consistency(format!("noise factorization residual {residual:.3e}")));
        }
        Ok(Self { intensity, factor })
    }

    pub fn intensity(&self) -> &CMatrix {
        &self.intensity
    }

    pub fn factor(&self) -> &CMatrix {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.intensity.nrows()
    }
}

/// Vector of independent circular complex normals with `E|η|² = 1`.
pub fn circular_normal<R: Rng + ?Sized>(rng: &mut R, len: usize) -> CVector {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CVector::from_iterator(
        len,
        (0..len).map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(s * re, s * im)
        }),
    )
}

/// Samples `α(0)` from the Gaussian P function of a state.
#[derive(Debug, Clone)]
pub struct InitialSampler {
    mean: CVector,
    /// Real factor `F` with `F Fᵀ` the covariance of `(Re δα, Im δα)`.
    factor: DMatrix<f64>,
    deterministic: bool,
}

impl InitialSampler {
    /// Fails when the state has no non-negative Gaussian P function.
    pub fn new(state: &GaussianState) -> Result<Self> {
        let bad = state.violations();
        if !bad.is_empty() {
            return Err(Error::ImproperState(bad.join("; ")));
        }
        let l = state.modes();
        // E[δα δα†] = (N − conj(m)mᵀ)ᵀ, E[δα δαᵀ] = S − m mᵀ
        let cov = state.centered_n().transpose();
        let rel = state.centered_s();
        let mut real = DMatrix::<f64>::zeros(2 * l, 2 * l);
        for i in 0..l {
            for j in 0..l {
                let (s, p) = (cov[(i, j)], rel[(i, j)]);
                real[(i, j)] = 0.5 * (s + p).re;
                real[(l + i, l + j)] = 0.5 * (s - p).re;
                real[(i, l + j)] = 0.5 * (p - s).im;
                real[(l + i, j)] = 0.5 * (s + p).im;
            }
        }
        let real = (&real + real.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(real);
        let scale = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-10 * scale.max(1.0) {
            return Err(Error::ImproperState(format!(
                "quadrature covariance of the P function has negative eigenvalue {min:.3e} \
                 (nonclassical state, e.g. squeezed below vacuum)"
            )));
        }
        let mut factor = eig.eigenvectors;
        for (k, v) in eig.eigenvalues.iter().enumerate() {
            factor.column_mut(k).scale_mut(v.max(0.0).sqrt());
        }
        let deterministic = factor.iter().all(|&x| x == 0.0);
        Ok(Self { mean: state.m.clone(), factor, deterministic })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CVector {
        if self.deterministic {
            return self.mean.clone();
        }
        let l = self.mean.len();
        let xi = nalgebra::DVector::<f64>::from_iterator(2 * l, (0..2 * l).map(|_| rng.sample(StandardNormal)));
        let x = &self.factor * xi;
        CVector::from_iterator(l, (0..l).map(|k| self.mean[k] + Complex64::new(x[k], x[l + k])))
    }
}

pub fn sample_initial<R: Rng + ?Sized>(state0: &GaussianState, rng: &mut R) -> Result<CVector> {
    Ok(InitialSampler::new(state0)?.sample(rng))
}

/// `Q(dt) = ∫₀^dt e^{M s} D e^{M† s} ds` by adaptive Gauss–Kronrod quadrature.
pub fn ou_noise_covariance(drift: &DriftMatrix, noise: &NoiseModel, dt: f64) -> CMatrix {
    let l = drift.dim();
    if dt == 0.0 || frobenius(noise.intensity()) == 0.0 {
        return CMatrix::zeros(l, l);
    }
    let tol = Tolerance { abs: 1e-15 * frobenius(noise.intensity()) * dt, rel: 1e-13, max_intervals: 2000 };
    let q = quad::integrate(
        |s: f64| {
            let e = drift.propagator(s);
            &e * noise.intensity() * e.adjoint()
        },
        0.0,
        dt,
        1,
        tol,
    )
    .value;
    linalg::hermitian_part(&q)
}

/// Exact Ornstein–Uhlenbeck update for a fixed step: `α′ = e^{M dt} α + ξ`.
#[derive(Debug, Clone)]
pub struct ExactOuStep {
    dt: f64,
    propagator: CMatrix,
    covariance: CMatrix,
    factor: CMatrix,
    noiseless: bool,
}

impl ExactOuStep {
    pub fn new(drift: &DriftMatrix, noise: &NoiseModel, dt: f64) -> Result<Self> {
        if !dt.is_finite() || dt < 0.0 {
            return Err(Error::InvalidArgument(format!("time step must be non-negative, got {dt}")));
        }
        let propagator = drift.propagator(dt);
        let covariance = ou_noise_covariance(drift, noise, dt);
        let factor = linalg::psd_factor(&covariance, 1e-12)
            .map_err(|min| Error::Consistency(format!("step covariance Q(dt) has negative eigenvalue {min:.3e}")))?;
        let noiseless = frobenius(&covariance) == 0.0;
        Ok(Self { dt, propagator, covariance, factor, noiseless })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn covariance(&self) -> &CMatrix {
        &self.covariance
    }

    pub fn propagator(&self) -> &CMatrix {
        &self.propagator
    }

    pub fn apply<R: Rng + ?Sized>(&self, alpha: &CVector, rng: &mut R) -> CVector {
        let mut next = &self.propagator * alpha;
        if !self.noiseless {
            next += &self.factor * circular_normal(rng, alpha.len());
        }
        next
    }
}

pub fn step_exact_ou<R: Rng + ?Sized>(
    alpha: &CVector,
    drift: &DriftMatrix,
    noise: &NoiseModel,
    dt: f64,
    rng: &mut R,
) -> Result<CVector> {
    Ok(ExactOuStep::new(drift, noise, dt)?.apply(alpha, rng))
}

/// Euler–Maruyama update `α′ = α + M α dt + R η √dt`, guarded by `dt‖M‖ < 0.1`.
#[derive(Debug, Clone)]
pub struct EulerStep {
    dt: f64,
    drift: CMatrix,
    factor: CMatrix,
}

impl EulerStep {
    pub const STABILITY_LIMIT: f64 = 0.1;

    pub fn new(drift: &DriftMatrix, noise: &NoiseModel, dt: f64) -> Result<Self> {
        let norm = linalg::spectral_norm(drift.matrix());
        if !dt.is_finite() || dt < 0.0 || dt * norm >= Self::STABILITY_LIMIT {
            return Err(Error::Stability {
                dt,
                suggested_dt: 0.5 * Self::STABILITY_LIMIT / norm.max(f64::MIN_POSITIVE),
            });
        }
        Ok(Self { dt, drift: drift.matrix().clone(), factor: noise.factor() * c(dt.sqrt()) })
    }

    pub fn apply<R: Rng + ?Sized>(&self, alpha: &CVector, rng: &mut R) -> CVector {
        let mut next = alpha + &self.drift * alpha * c(self.dt);
        if frobenius(&self.factor) > 0.0 {
            next += &self.factor * circular_normal(rng, alpha.len());
        }
        next
    }
}

pub fn step_euler_maruyama<R: Rng + ?Sized>(
    alpha: &CVector,
    drift: &DriftMatrix,
    noise: &NoiseModel,
    dt: f64,
    rng: &mut R,
) -> Result<CVector> {
    Ok(EulerStep::new(drift, noise, dt)?.apply(alpha, rng))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    ExactOu,
    EulerMaruyama,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::ExactOu => "exact-ou",
            Scheme::EulerMaruyama => "euler-maruyama",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-ou" => Ok(Scheme::ExactOu),
            "euler-maruyama" => Ok(Scheme::EulerMaruyama),
            other => Err(Error::InvalidArgument(format!("unknown scheme '{other}'"))),
        }
    }
}

enum Stepper {
    Exact(ExactOuStep),
    Euler(EulerStep),
}

impl Stepper {
    fn apply<R: Rng + ?Sized>(&self, alpha: &CVector, rng: &mut R) -> CVector {
        match self {
            Stepper::Exact(s) => s.apply(alpha, rng),
            Stepper::Euler(s) => s.apply(alpha, rng),
        }
    }
}

/// Running mean and second central moment per real component (Welford,
/// merged with the pairwise update of Chan et al.).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(len: usize) -> Self {
        Self { count: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    pub fn push(&mut self, sample: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Standard error of the mean; zero for fewer than two samples.
    pub fn stderr(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|m2| (m2 / (n - 1.0) / n).sqrt()).collect()
    }
}

/// Flattened sample moments of one path point, in [`moments::components`] order.
pub fn sample_moments(alpha: &CVector) -> Vec<f64> {
    let l = alpha.len();
    let mut out = Vec::with_capacity(moments::component_count(l));
    for z in alpha.iter() {
        out.push(z.re);
        out.push(z.im);
    }
    for i in 0..l {
        for j in 0..l {
            let v = alpha[i].conj() * alpha[j];
            out.push(v.re);
            out.push(v.im);
        }
    }
    for i in 0..l {
        for j in 0..l {
            let v = alpha[i] * alpha[j];
            out.push(v.re);
            out.push(v.im);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_max: f64,
    pub trajectories: usize,
    pub base_seed: u64,
    /// Keep every path (debugging); otherwise only streaming moments.
    pub store_paths: bool,
    pub path_budget: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::ExactOu,
            dt: 0.1,
            t_max: 1.0,
            trajectories: 1000,
            base_seed: 0,
            store_paths: false,
            path_budget: DEFAULT_PATH_BUDGET,
        }
    }
}

/// Moment estimate at one grid time, in [`moments::components`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub t: f64,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    times: Vec<f64>,
    modes: usize,
    accumulators: Vec<MomentAccumulator>,
    paths: Option<Vec<Vec<CVector>>>,
    base_seed: u64,
    spec_hash: String,
    scheme: Scheme,
    dt: f64,
    trajectories: usize,
}

impl TrajectoryEnsemble {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn spec_hash(&self) -> &str {
        &self.spec_hash
    }

    pub fn trajectories(&self) -> usize {
        self.trajectories
    }

    /// Stored paths, `paths[k][i]` = trajectory `k` at `times[i]`.
    pub fn paths(&self) -> Option<&[Vec<CVector>]> {
        self.paths.as_deref()
    }

    pub fn accumulator(&self, index: usize) -> &MomentAccumulator {
        &self.accumulators[index]
    }

    /// Grid index of `t`, if `t` lies on the grid.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&g| (g - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    pub fn estimate(&self, index: usize) -> MomentEstimate {
        let acc = &self.accumulators[index];
        MomentEstimate { t: self.times[index], mean: acc.mean().to_vec(), stderr: acc.stderr() }
    }

    /// Estimated moments as a Gaussian state.
    pub fn estimate_state(&self, index: usize) -> GaussianState {
        let mean = self.accumulators[index].mean();
        let l = self.modes;
        let z = |k: usize| Complex64::new(mean[2 * k], mean[2 * k + 1]);
        let m = CVector::from_iterator(l, (0..l).map(z));
        let n = CMatrix::from_fn(l, l, |i, j| z(l + i * l + j));
        let s = CMatrix::from_fn(l, l, |i, j| z(l + l * l + i * l + j));
        GaussianState { m, n, s, t: self.times[index] }
    }
}

/// RNG for trajectory `index` of an ensemble seeded with `base_seed`.
pub fn trajectory_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

struct ChunkResult {
    accumulators: Vec<MomentAccumulator>,
    paths: Vec<Vec<CVector>>,
}

/// Runs `K` independent trajectories from `state0` on the grid
/// `state0.t + k·dt`, `k = 0..=t_max/dt`.
pub fn run_ensemble(spec: &SystemSpec, state0: &GaussianState, config: &EnsembleConfig) -> Result<TrajectoryEnsemble> {
    if config.trajectories == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one trajectory".into()));
    }
    if !(config.dt > 0.0) || !config.dt.is_finite() || !(config.t_max >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need dt > 0 and t_max >= 0 (dt = {}, t_max = {})",
            config.dt, config.t_max
        )));
    }
    if state0.modes() != spec.modes() {
        return Err(Error::Dimension("initial state and spec differ in mode count".into()));
    }
    let steps_f = config.t_max / config.dt;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "t_max = {} is not a multiple of dt = {}",
            config.t_max, config.dt
        )));
    }
    let l = spec.modes();
    let grid = steps + 1;
    if config.store_paths {
        let requested = config.trajectories.saturating_mul(grid).saturating_mul(l);
        if requested > config.path_budget {
            return Err(Error::ResourceLimit { requested, budget: config.path_budget });
        }
    }
    let gamma = build_damping_matrix(spec)?;
    let drift = derive_drift(spec, &gamma)?;
    let noise = NoiseModel::new(&gamma, spec.n_th())?;
    let stepper = match config.scheme {
        Scheme::ExactOu => Stepper::Exact(ExactOuStep::new(&drift, &noise, config.dt)?),
        Scheme::EulerMaruyama => Stepper::Euler(EulerStep::new(&drift, &noise, config.dt)?),
    };
    let sampler = InitialSampler::new(state0)?;
    let ncomp = moments::component_count(l);

    let run_chunk = |chunk: usize| -> ChunkResult {
        let start = chunk * CHUNK;
        let end = (start + CHUNK).min(config.trajectories);
        let mut accumulators = vec![MomentAccumulator::new(ncomp); grid];
        let mut paths = Vec::new();
        for k in start..end {
            let mut rng = trajectory_rng(config.base_seed, k as u64);
            let mut alpha = sampler.sample(&mut rng);
            let mut path = Vec::with_capacity(if config.store_paths { grid } else { 0 });
            for (i, acc) in accumulators.iter_mut().enumerate() {
                if i > 0 {
                    alpha = stepper.apply(&alpha, &mut rng);
                }
                acc.push(&sample_moments(&alpha));
                if config.store_paths {
                    path.push(alpha.clone());
                }
            }
            if config.store_paths {
                paths.push(path);
            }
        }
        ChunkResult { accumulators, paths }
    };

    let chunks = config.trajectories.div_ceil(CHUNK);
    let batch = (4 * rayon::current_num_threads()).max(1);
    let mut total = vec![MomentAccumulator::new(ncomp); grid];
    let mut all_paths = config.store_paths.then(Vec::new);
    for first in (0..chunks).step_by(batch) {
        let last = (first + batch).min(chunks);
        let results: Vec<ChunkResult> = (first..last).into_par_iter().map(run_chunk).collect();
        for r in results {
            for (acc, part) in total.iter_mut().zip(&r.accumulators) {
                acc.merge(part);
            }
            if let Some(paths) = all_paths.as_mut() {
                paths.extend(r.paths);
            }
        }
    }

    let times = (0..grid).map(|k| state0.t + k as f64 * config.dt).collect();
    Ok(TrajectoryEnsemble {
        times,
        modes: l,
        accumulators: total,
        paths: all_paths,
        base_seed: config.base_seed,
        spec_hash: spec.spec_hash(),
        scheme: config.scheme,
        dt: config.dt,
        trajectories: config.trajectories,
    })
}

/// Metadata written next to exported ensemble moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetadata {
    pub spec_hash: String,
    pub base_seed: u64,
    pub scheme: Scheme,
    pub trajectories: usize,
    pub dt: f64,
    pub t_max: f64,
}

impl From<&TrajectoryEnsemble> for EnsembleMetadata {
    fn from(e: &TrajectoryEnsemble) -> Self {
        Self {
            spec_hash: e.spec_hash.clone(),
            base_seed: e.base_seed,
            scheme: e.scheme,
            trajectories: e.trajectories,
            dt: e.dt,
            t_max: e.times.last().copied().unwrap_or(0.0) - e.times.first().copied().unwrap_or(0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma2() -> DampingMatrix {
        DampingMatrix::from_matrix(CMatrix::from_row_slice(2, 2, &[c(0.12), c(0.1), c(0.1), c(0.12)])).unwrap()
    }

    #[test]
    fn noise_factor_reproduces_intensity() {
        let g = gamma2();
        let noise = NoiseModel::new(&g, 0.5).unwrap();
        let r = noise.factor();
        assert!(frobenius(&(r * r.adjoint() - noise.intensity())) < 1e-15);
        assert!(frobenius(&(noise.intensity() - g.matrix() * c(1.0))) < 1e-15);
    }

    #[test]
    fn quadrature_covariance_matches_block_exponential() {
        let g = gamma2();
        let drift = DriftMatrix::from_parts(&[1.0, 1.01], &g).unwrap();
        let noise = NoiseModel::new(&g, 0.5).unwrap();
        for dt in [0.01, 0.5, 3.0] {
            let q = ou_noise_covariance(&drift, &noise, dt);
            let (_, q_ref) = linalg::van_loan(drift.matrix(), noise.intensity(), dt);
            assert!(frobenius(&(&q - &q_ref)) <= 1e-12 * frobenius(&q_ref), "dt = {dt}");
        }
    }

    #[test]
    fn vacuum_and_coherent_samples_are_deterministic() {
        let mut rng = trajectory_rng(1, 0);
        let vac = GaussianState::vacuum(2);
        for _ in 0..5 {
            assert_eq!(sample_initial(&vac, &mut rng).unwrap(), CVector::zeros(2));
        }
        let mu = CVector::from_vec(vec![Complex64::new(0.3, -0.4), Complex64::new(1.0, 0.5)]);
        let coh = GaussianState::coherent(mu.clone());
        let draw = sample_initial(&coh, &mut rng).unwrap();
        assert!((draw - mu).norm() < 1e-12);
    }

    #[test]
    fn squeezed_state_is_rejected() {
        // vacuum-level N with nonzero S has no P function
        let mut st = GaussianState::vacuum(1);
        st.s[(0, 0)] = c(0.3);
        assert!(matches!(InitialSampler::new(&st), Err(Error::ImproperState(_))));
    }

    #[test]
    fn thermal_sampler_variance() {
        let st = GaussianState::thermal(1, 1.0);
        let sampler = InitialSampler::new(&st).unwrap();
        let mut rng = trajectory_rng(11, 0);
        let mut acc = MomentAccumulator::new(moments::component_count(1));
        for _ in 0..100_000 {
            acc.push(&sample_moments(&sampler.sample(&mut rng)));
        }
        // component 2 is Re N_00 = |α|²; its variance for an exponential law is 1
        let (mean, se) = (acc.mean()[2], acc.stderr()[2]);
        assert!(((mean - 1.0) / se).abs() < 4.0, "mean {mean} se {se}");
        // S = E[α²] must vanish
        for k in [4, 5] {
            assert!((acc.mean()[k] / acc.stderr()[k]).abs() < 4.0);
        }
    }

    #[test]
    fn zero_step_and_noiseless_steps() {
        let g = gamma2();
        let drift = DriftMatrix::from_parts(&[1.0, 1.01], &g).unwrap();
        let alpha = CVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.5)]);
        let noisy = NoiseModel::new(&g, 0.5).unwrap();
        let mut rng = trajectory_rng(3, 0);
        let same = step_exact_ou(&alpha, &drift, &noisy, 0.0, &mut rng).unwrap();
        assert!((same - &alpha).norm() < 1e-15);
        let quiet = NoiseModel::new(&g, 0.0).unwrap();
        let next = step_exact_ou(&alpha, &drift, &quiet, 0.3, &mut rng).unwrap();
        assert!((next - drift.propagator(0.3) * &alpha).norm() < 1e-15);
        let zero = step_euler_maruyama(&CVector::zeros(2), &drift, &quiet, 0.01, &mut rng).unwrap();
        assert_eq!(zero, CVector::zeros(2));
    }

    #[test]
    fn euler_guard_suggests_smaller_step() {
        let g = gamma2();
        let drift = DriftMatrix::from_parts(&[1.0, 1.01], &g).unwrap();
        let noise = NoiseModel::new(&g, 0.5).unwrap();
        let mut rng = trajectory_rng(0, 0);
        match step_euler_maruyama(&CVector::zeros(2), &drift, &noise, 0.5, &mut rng) {
            Err(Error::Stability { suggested_dt, .. }) => {
                assert!(suggested_dt * linalg::spectral_norm(drift.matrix()) < 0.1);
            }
            other => panic!("expected stability error, got {other:?}"),
        }
    }

    #[test]
    fn accumulator_merge_matches_sequential() {
        let data: Vec<Vec<f64>> = (0..57).map(|k| vec![(k as f64).sin(), (k as f64 * 0.3).cos() * 2.0]).collect();
        let mut seq = MomentAccumulator::new(2);
        data.iter().for_each(|x| seq.push(x));
        for split in [1, 7, 30, 56] {
            let mut a = MomentAccumulator::new(2);
            let mut b = MomentAccumulator::new(2);
            data[..split].iter().for_each(|x| a.push(x));
            data[split..].iter().for_each(|x| b.push(x));
            a.merge(&b);
            assert_eq!(a.count(), seq.count());
            for k in 0..2 {
                assert!((a.mean()[k] - seq.mean()[k]).abs() < 1e-14);
                assert!((a.stderr()[k] - seq.stderr()[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("exact-ou".parse::<Scheme>().unwrap(), Scheme::ExactOu);
        assert_eq!(Scheme::EulerMaruyama.to_string(), "euler-maruyama");
        assert!("rk4".parse::<Scheme>().is_err());
    }
}
