//! Gaussian-state dynamics of the multimode master equation.
//!
//! For a Gaussian P function the master equation closes on the first
//! moments `m_λ = ⟨a_λ⟩`, the normal-ordered covariance
//! `N_λμ = ⟨a_λ† a_μ⟩` and the anomalous covariance `S_λμ = ⟨a_λ a_μ⟩`:
//!
//! ```text
//! dm/dt = M m
//! dN/dt = conj(M) N + N Mᵀ + 2 n_th γᵀ
//! dS/dt = M S + S Mᵀ
//! ```
//!
//! with the drift `M = −i diag(ω) − γ = −iH`. Each step applies the exact
//! propagator `e^{M dt}`; the thermal source is integrated in closed form
//! through a block exponential, so there is no time-discretization error.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, c, diag_real, frobenius, CMatrix, CVector, I};
use crate::model::{DampingMatrix, SystemSpec};
use crate::trajectories::TrajectoryEnsemble;

/// Default z-score bound for the Langevin/moment comparison.
pub const DEFAULT_Z_MAX: f64 = 4.0;

/// Tolerance used to call two deterministic values identical when the
/// Monte Carlo standard error is exactly zero.
const DETERMINISTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub m: CVector,
    pub n: CMatrix,
    pub s: CMatrix,
    pub t: f64,
}

impl GaussianState {
    pub fn new(m: CVector, n: CMatrix, s: CMatrix, t: f64) -> Result<Self> {
        let l = m.len();
        if n.shape() != (l, l) || s.shape() != (l, l) {
            return Err(Error::Dimension(format!(
                "moments for {l} modes need {l}x{l} covariances, got N {:?} and S {:?}",
                n.shape(),
                s.shape()
            )));
        }
        let state = Self { m, n, s, t };
        if !state.is_finite() {
            return Err(Error::NonFinite("Gaussian state"));
        }
        Ok(state)
    }

    pub fn vacuum(modes: usize) -> Self {
        Self::thermal(modes, 0.0)
    }

    /// `m = 0`, `N = n_th·I`, `S = 0`.
    pub fn thermal(modes: usize, n_th: f64) -> Self {
        Self {
            m: CVector::zeros(modes),
            n: CMatrix::identity(modes, modes) * c(n_th),
            s: CMatrix::zeros(modes, modes),
            t: 0.0,
        }
    }

    /// Coherent state: `N = conj(m) mᵀ`, `S = m mᵀ` (delta-function P).
    pub fn coherent(m: CVector) -> Self {
        let n = linalg::outer(&m.map(|z| z.conj()), &m);
        let s = linalg::outer(&m, &m);
        Self { m, n, s, t: 0.0 }
    }

    pub fn modes(&self) -> usize {
        self.m.len()
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(self.n.iter()).chain(self.s.iter()).all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `N − conj(m) mᵀ`: normal-ordered covariance with the mean removed.
    pub fn centered_n(&self) -> CMatrix {
        &self.n - linalg::outer(&self.m.map(|z| z.conj()), &self.m)
    }

    /// `S − m mᵀ`.
    pub fn centered_s(&self) -> CMatrix {
        &self.s - linalg::outer(&self.m, &self.m)
    }

    /// Lists violated state invariants (Hermitian `N`, symmetric `S`,
    /// PSD centered `N`).
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let herm = linalg::hermitian_deviation(&self.n);
        if herm > 1e-12 {
            out.push(format!("N is not Hermitian (relative deviation {herm:.3e})"));
        }
        let sym = linalg::symmetric_deviation(&self.s);
        if sym > 1e-12 {
            out.push(format!("S is not symmetric (relative deviation {sym:.3e})"));
        }
        let min = linalg::hermitian_eigenvalues(&self.centered_n()).first().copied().unwrap_or(0.0);
        if min < -1e-10 {
            out.push(format!("N − conj(m)mᵀ has negative eigenvalue {min:.3e}"));
        }
        out
    }

    /// Real components in the canonical order shared with Monte Carlo
    /// estimators: Re/Im of each `m_λ`, then `N` and `S` row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(component_count(self.modes()));
        for z in self.m.iter() {
            out.push(z.re);
            out.push(z.im);
        }
        for mat in [&self.n, &self.s] {
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    out.push(mat[(i, j)].re);
                    out.push(mat[(i, j)].im);
                }
            }
        }
        out
    }
}

/// Number of real components in [`GaussianState::flatten`].
pub fn component_count(modes: usize) -> usize {
    2 * modes + 4 * modes * modes
}

/// Identifies one real component of the flattened moment vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Component {
    pub quantity: Quantity,
    pub row: usize,
    pub col: usize,
    pub part: Part,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Quantity {
    #[serde(rename = "m")]
    Mean,
    #[serde(rename = "N")]
    Normal,
    #[serde(rename = "S")]
    Anomalous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Re,
    Im,
}

impl Component {
    pub fn label(&self) -> String {
        let part = match self.part {
            Part::Re => "re",
            Part::Im => "im",
        };
        match self.quantity {
            Quantity::Mean => format!("{part}_m_{}", self.row),
            Quantity::Normal => format!("{part}_N_{}_{}", self.row, self.col),
            Quantity::Anomalous => format!("{part}_S_{}_{}", self.row, self.col),
        }
    }
}

/// Components in flattening order.
pub fn components(modes: usize) -> Vec<Component> {
    let mut out = Vec::with_capacity(component_count(modes));
    for row in 0..modes {
        for part in [Part::Re, Part::Im] {
            out.push(Component { quantity: Quantity::Mean, row, col: 0, part });
        }
    }
    for quantity in [Quantity::Normal, Quantity::Anomalous] {
        for row in 0..modes {
            for col in 0..modes {
                for part in [Part::Re, Part::Im] {
                    out.push(Component { quantity, row, col, part });
                }
            }
        }
    }
    out
}

/// `M = −i diag(ω) − γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftMatrix(CMatrix);

impl DriftMatrix {
    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn from_parts(omega: &[f64], gamma: &DampingMatrix) -> Result<Self> {
        if omega.len() != gamma.dim() {
            return Err(Error::Dimension(format!(
                "{} frequencies for a {}x{} damping matrix",
                omega.len(),
                gamma.dim(),
                gamma.dim()
            )));
        }
        Ok(Self(-(diag_real(omega) * I) - gamma.matrix()))
    }

    /// `e^{M t}`.
    pub fn propagator(&self, t: f64) -> CMatrix {
        linalg::expm(&(&self.0 * c(t)))
    }
}

pub fn derive_drift(spec: &SystemSpec, gamma: &DampingMatrix) -> Result<DriftMatrix> {
    DriftMatrix::from_parts(spec.omega(), gamma)
}

/// Cached one-step map for a fixed `dt`.
#[derive(Debug, Clone)]
pub struct MomentPropagator {
    dt: f64,
    forward: CMatrix,
    conj_forward: CMatrix,
    source: CMatrix,
}

impl MomentPropagator {
    pub fn new(drift: &DriftMatrix, gamma: &DampingMatrix, n_th: f64, dt: f64) -> Result<Self> {
        if !dt.is_finite() || dt < 0.0 {
            return Err(Error::InvalidArgument(format!("time step must be finite and non-negative, got {dt}")));
        }
        if gamma.dim() != drift.dim() {
            return Err(Error::Dimension("drift and damping matrices differ in size".into()));
        }
        let l = drift.dim();
        if dt == 0.0 {
            return Ok(Self {
                dt,
                forward: CMatrix::identity(l, l),
                conj_forward: CMatrix::identity(l, l),
                source: CMatrix::zeros(l, l),
            });
        }
        let forward = drift.propagator(dt);
        let conj_drift = drift.matrix().map(|z| z.conj());
        let diffusion = gamma.matrix().transpose() * c(2.0 * n_th);
        let (conj_forward, source) = linalg::van_loan(&conj_drift, &diffusion, dt);
        Ok(Self { dt, forward, conj_forward, source })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn apply(&self, state: &GaussianState) -> Result<GaussianState> {
        if state.modes() != self.forward.nrows() {
            return Err(Error::Dimension("state and propagator differ in mode count".into()));
        }
        if !state.is_finite() {
            return Err(Error::NonFinite("Gaussian state"));
        }
        let p = &self.forward;
        let m = p * &state.m;
        let n = &self.conj_forward * &state.n * p.transpose() + &self.source;
        let s = p * &state.s * p.transpose();
        let next = GaussianState { m, n, s, t: state.t + self.dt };
        if !next.is_finite() {
            return Err(Error::NonFinite("evolved Gaussian state"));
        }
        Ok(next)
    }
}

/// Advances `state` by `dt` with the exact propagator. `dt = 0` returns the
/// state unchanged; negative steps are rejected.
pub fn evolve_state(
    state: &GaussianState,
    drift: &DriftMatrix,
    gamma: &DampingMatrix,
    n_th: f64,
    dt: f64,
) -> Result<GaussianState> {
    MomentPropagator::new(drift, gamma, n_th, dt)?.apply(state)
}

/// Analytic states at each requested time, each propagated directly from
/// `state0` (times must not precede `state0.t`).
pub fn evolve_series(
    state0: &GaussianState,
    drift: &DriftMatrix,
    gamma: &DampingMatrix,
    n_th: f64,
    times: &[f64],
) -> Result<Vec<GaussianState>> {
    times
        .iter()
        .map(|&t| {
            let mut out = evolve_state(state0, drift, gamma, n_th, t - state0.t)?;
            out.t = t;
            Ok(out)
        })
        .collect()
}

/// `conj(M) N + N Mᵀ + 2 n_th γᵀ`, i.e. `dN/dt` at zero mean.
pub fn lyapunov_residual(drift: &DriftMatrix, gamma: &DampingMatrix, n_th: f64, n: &CMatrix) -> CMatrix {
    let m = drift.matrix();
    m.map(|z| z.conj()) * n + n * m.transpose() + gamma.matrix().transpose() * c(2.0 * n_th)
}

/// The thermal state `m = 0, S = 0, N = n_th·I`; requires `γ` positive definite.
pub fn stationary_state(drift: &DriftMatrix, gamma: &DampingMatrix, n_th: f64) -> Result<GaussianState> {
    let l = gamma.dim();
    let eig = nalgebra::SymmetricEigen::new(gamma.matrix().clone());
    let scale = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let floor = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let undamped: Vec<Vec<_>> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= floor)
        .map(|(k, _)| eig.eigenvectors.column(k).iter().copied().collect())
        .collect();
    if !undamped.is_empty() {
        return Err(Error::SingularDamping { undamped });
    }
    let state = GaussianState::thermal(l, n_th);
    let residual = frobenius(&lyapunov_residual(drift, gamma, n_th, &state.n));
    let bound = 1e-10 * n_th * frobenius(gamma.matrix());
    if residual > bound {
        return Err(Error::Consistency(format!(
            "thermal state fails the stationarity check: residual {residual:.3e} > {bound:.3e}"
        )));
    }
    Ok(state)
}

/// Evolution with the off-diagonal damping removed (independent damped
/// oscillators).
pub fn weak_coupling_reference(
    spec: &SystemSpec,
    gamma: &DampingMatrix,
    state0: &GaussianState,
    t: f64,
) -> Result<GaussianState> {
    let diagonal = gamma.diagonal_only();
    let drift = derive_drift(spec, &diagonal)?;
    evolve_state(state0, &drift, &diagonal, spec.n_th(), t)
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentComparison {
    pub t: f64,
    #[serde(flatten)]
    pub component: Component,
    pub label: String,
    pub analytic: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// `(estimate − analytic) / stderr`; `null` in JSON when unbounded.
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub spec_hash: String,
    pub trajectories: usize,
    pub base_seed: u64,
    pub z_max: f64,
    pub max_abs_z: f64,
    pub pass: bool,
    pub comparisons: Vec<ComponentComparison>,
}

impl EquivalenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn z_score(estimate: f64, analytic: f64, stderr: f64) -> f64 {
    let diff = estimate - analytic;
    if stderr > 0.0 {
        diff / stderr
    } else if diff.abs() <= DETERMINISTIC_TOL * analytic.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Compares Monte Carlo moment estimates with the analytic evolution at the
/// requested times. `pass` requires `z_max > 0` and every `|z| ≤ z_max`.
pub fn equivalence_report(
    spec: &SystemSpec,
    state0: &GaussianState,
    times: &[f64],
    ensemble: &TrajectoryEnsemble,
    z_max: f64,
) -> Result<EquivalenceReport> {
    let hash = spec.spec_hash();
    if ensemble.spec_hash() != hash {
        return Err(Error::SpecMismatch { ensemble: ensemble.spec_hash().to_string(), analytic: hash });
    }
    if state0.modes() != spec.modes() {
        return Err(Error::Dimension("initial state and spec differ in mode count".into()));
    }
    let gamma = crate::model::build_damping_matrix(spec)?;
    let drift = derive_drift(spec, &gamma)?;
    let comps = components(spec.modes());
    let mut comparisons = Vec::with_capacity(times.len() * comps.len());
    for &t in times {
        let index = ensemble.time_index(t).ok_or_else(|| {
            Error::InvalidArgument(format!("time {t} is not on the ensemble grid (dt = {})", ensemble.dt()))
        })?;
        let estimate = ensemble.estimate(index);
        let mut analytic = evolve_state(state0, &drift, &gamma, spec.n_th(), t - state0.t)?;
        analytic.t = t;
        for ((comp, a), (mean, se)) in
            comps.iter().zip(analytic.flatten()).zip(estimate.mean.iter().zip(&estimate.stderr))
        {
            comparisons.push(ComponentComparison {
                t,
                component: *comp,
                label: comp.label(),
                analytic: a,
                estimate: *mean,
                stderr: *se,
                z: z_score(*mean, a, *se),
            });
        }
    }
    let max_abs_z = comparisons.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    let pass = z_max > 0.0 && max_abs_z <= z_max;
    Ok(EquivalenceReport {
        spec_hash: hash,
        trajectories: ensemble.trajectories(),
        base_seed: ensemble.base_seed(),
        z_max,
        max_abs_z,
        pass,
        comparisons,
    })
}
