//! System specification, damping matrix and effective Hamiltonian.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, c, diag_real, frobenius, hermitian_part, CMatrix, I};

/// Tolerance on `‖γ − γ†‖/‖γ‖` before symmetrization.
pub const HERMITICITY_TOL: f64 = 1e-12;

/// `‖γ‖₂ / min ω` at or above which the Markov/RWA reduction is flagged.
pub const MARKOV_SUSPECT_RATIO: f64 = 0.1;

/// Row-major complex matrix as stored in JSON: `{"re": [[..]], "im": [[..]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub re: Vec<Vec<f64>>,
    #[serde(default)]
    pub im: Vec<Vec<f64>>,
}

impl MatrixDoc {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let rows = |f: fn(&Complex64) -> f64| {
            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect()).collect()
        };
        Self { re: rows(|z| z.re), im: rows(|z| z.im) }
    }

    /// Converts to a matrix; an empty `im` means a real matrix.
    pub fn to_matrix(&self, name: &str) -> std::result::Result<CMatrix, String> {
        let rows = self.re.len();
        let cols = self.re.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(format!("{name} must be non-empty"));
        }
        if self.re.iter().any(|r| r.len() != cols) {
            return Err(format!("{name}.re is ragged"));
        }
        let has_im = !self.im.is_empty();
        if has_im && (self.im.len() != rows || self.im.iter().any(|r| r.len() != cols)) {
            return Err(format!("{name}.im shape does not match {name}.re ({rows}x{cols})"));
        }
        Ok(CMatrix::from_fn(rows, cols, |i, j| Complex64::new(self.re[i][j], if has_im { self.im[i][j] } else { 0.0 })))
    }
}

/// Complex vector as stored in JSON: `{"re": [..], "im": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorDoc {
    pub re: Vec<f64>,
    #[serde(default)]
    pub im: Vec<f64>,
}

impl VectorDoc {
    pub fn from_vector(v: &[Complex64]) -> Self {
        Self { re: v.iter().map(|z| z.re).collect(), im: v.iter().map(|z| z.im).collect() }
    }

    pub fn to_vector(&self, name: &str) -> std::result::Result<Vec<Complex64>, String> {
        if !self.im.is_empty() && self.im.len() != self.re.len() {
            return Err(format!("{name}.im length does not match {name}.re"));
        }
        Ok(self
            .re
            .iter()
            .enumerate()
            .map(|(k, &re)| Complex64::new(re, self.im.get(k).copied().unwrap_or(0.0)))
            .collect())
    }
}

/// Serialized form of [`SystemSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecDocument {
    #[serde(default)]
    pub label: String,
    pub omega: Vec<f64>,
    #[serde(rename = "W")]
    pub w: MatrixDoc,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<MatrixDoc>,
    pub n_th: f64,
}

/// Open-resonator system: `L` inside modes coupled to `M` outside channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecDocument", into = "SpecDocument")]
pub struct SystemSpec {
    label: String,
    omega: Vec<f64>,
    w: CMatrix,
    v: Option<CMatrix>,
    n_th: f64,
}

impl SystemSpec {
    pub fn new(label: impl Into<String>, omega: Vec<f64>, w: CMatrix, v: Option<CMatrix>, n_th: f64) -> Result<Self> {
        let spec = Self { label: label.into(), omega, w, v, n_th };
        let problems = spec.violations();
        if problems.is_empty() {
            Ok(spec)
        } else {
            Err(Error::InvalidSpec(problems))
        }
    }

    /// Builds a spec whose damping matrix is the given Hermitian PSD `γ`,
    /// by factoring `γ/π = W W†` (one channel per nonzero eigenvalue).
    pub fn from_damping(label: impl Into<String>, omega: Vec<f64>, gamma: &CMatrix, n_th: f64) -> Result<Self> {
        let factor = linalg::psd_factor(&(gamma * c(1.0 / PI)), 1e-12)
            .map_err(|min| Error::InvalidSpec(vec![format!("damping matrix is not PSD (eigenvalue {min:.3e})")]))?;
        let keep: Vec<usize> = (0..factor.ncols()).filter(|&k| factor.column(k).norm() > 0.0).collect();
        let w = if keep.is_empty() { CMatrix::zeros(gamma.nrows(), 1) } else { factor.select_columns(keep.iter()) };
        Self::new(label, omega, w, None, n_th)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let l = self.omega.len();
        if l == 0 {
            out.push("omega must contain at least one mode".to_string());
        }
        if self.omega.iter().any(|w| !w.is_finite()) {
            out.push("omega must be finite".to_string());
        } else if self.omega.iter().any(|&w| w <= 0.0) {
            out.push("omega must be positive".to_string());
        }
        if self.w.ncols() == 0 {
            out.push("W must have at least one channel column".to_string());
        }
        if self.w.nrows() != l {
            out.push(format!("W has {} rows but omega has {} modes", self.w.nrows(), l));
        }
        if !linalg::is_finite(&self.w) {
            out.push("W entries must be finite".to_string());
        }
        if let Some(v) = &self.v {
            if v.shape() != self.w.shape() {
                out.push(format!("V shape {:?} does not match W shape {:?}", v.shape(), self.w.shape()));
            }
            if !linalg::is_finite(v) {
                out.push("V entries must be finite".to_string());
            }
        }
        if !self.n_th.is_finite() || self.n_th < 0.0 {
            out.push("n_th must be finite and non-negative".to_string());
        }
        out
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: SpecDocument = serde_json::from_str(text)?;
        Self::try_from(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn modes(&self) -> usize {
        self.omega.len()
    }

    pub fn channels(&self) -> usize {
        self.w.ncols()
    }

    pub fn w(&self) -> &CMatrix {
        &self.w
    }

    /// The `V` amplitudes; `W` itself when none were given.
    pub fn v(&self) -> &CMatrix {
        self.v.as_ref().unwrap_or(&self.w)
    }

    pub fn has_explicit_v(&self) -> bool {
        self.v.is_some()
    }

    pub fn n_th(&self) -> f64 {
        self.n_th
    }

    pub fn with_n_th(&self, n_th: f64) -> Result<Self> {
        Self::new(self.label.clone(), self.omega.clone(), self.w.clone(), self.v.clone(), n_th)
    }

    /// Copy with every coupling amplitude multiplied by `factor`.
    pub fn scaled_coupling(&self, factor: Complex64) -> Result<Self> {
        Self::new(
            self.label.clone(),
            self.omega.clone(),
            &self.w * factor,
            self.v.as_ref().map(|v| v * factor),
            self.n_th,
        )
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn spec_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl TryFrom<SpecDocument> for SystemSpec {
    type Error = Error;

    fn try_from(doc: SpecDocument) -> Result<Self> {
        let mut problems = Vec::new();
        let w = doc.w.to_matrix("W").map_err(|e| problems.push(e)).ok();
        let v = match &doc.v {
            Some(v) => v.to_matrix("V").map(Some).map_err(|e| problems.push(e)).unwrap_or(None),
            None => None,
        };
        let Some(w) = w else {
            return Err(Error::InvalidSpec(problems));
        };
        let spec = Self { label: doc.label, omega: doc.omega, w, v, n_th: doc.n_th };
        problems.extend(spec.violations());
        if problems.is_empty() {
            Ok(spec)
        } else {
            Err(Error::InvalidSpec(problems))
        }
    }
}

impl From<SystemSpec> for SpecDocument {
    fn from(spec: SystemSpec) -> Self {
        Self {
            label: spec.label,
            omega: spec.omega,
            w: MatrixDoc::from_matrix(&spec.w),
            v: spec.v.as_ref().map(MatrixDoc::from_matrix),
            n_th: spec.n_th,
        }
    }
}

/// Hermitian PSD damping matrix `γ = π W W†`.
#[derive(Debug, Clone, PartialEq)]
pub struct DampingMatrix(CMatrix);

impl DampingMatrix {
    /// Wraps an externally supplied matrix after symmetrizing it.
    pub fn from_matrix(gamma: CMatrix) -> Result<Self> {
        if !gamma.is_square() {
            return Err(Error::Dimension("damping matrix must be square".into()));
        }
        if !linalg::is_finite(&gamma) {
            return Err(Error::NonFinite("damping matrix"));
        }
        let dev = linalg::hermitian_deviation(&gamma);
        if dev > HERMITICITY_TOL {
            return Err(Error::Consistency(format!("damping matrix is not Hermitian (relative deviation {dev:.3e})")));
        }
        Ok(Self(hermitian_part(&gamma)))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::hermitian_eigenvalues(&self.0)
    }

    /// Largest eigenvalue (the spectral norm, since `γ` is PSD).
    pub fn norm(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0).max(0.0)
    }

    /// Copy with the off-diagonal elements removed.
    pub fn diagonal_only(&self) -> Self {
        Self(CMatrix::from_diagonal(&self.0.diagonal()))
    }
}

pub fn build_damping_matrix(spec: &SystemSpec) -> Result<DampingMatrix> {
    let w = spec.w();
    if w.nrows() != spec.modes() {
        return Err(Error::Dimension(format!("W has {} rows, omega has {} entries", w.nrows(), spec.modes())));
    }
    DampingMatrix::from_matrix(w * w.adjoint() * c(PI))
}

/// `H = diag(ω) − iγ` (ħ = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveHamiltonian(CMatrix);

impl EffectiveHamiltonian {
    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn from_matrix(h: CMatrix) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::Dimension("effective Hamiltonian must be square".into()));
        }
        Ok(Self(h))
    }
}

pub fn build_effective_hamiltonian(spec: &SystemSpec, gamma: &DampingMatrix) -> Result<EffectiveHamiltonian> {
    if gamma.dim() != spec.modes() {
        return Err(Error::Dimension(format!(
            "damping matrix is {0}x{0} but the spec has {1} modes",
            gamma.dim(),
            spec.modes()
        )));
    }
    Ok(EffectiveHamiltonian(diag_real(spec.omega()) - gamma.matrix() * I))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Isolated,
    Overlapping,
    MarkovSuspect,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Isolated => "isolated",
            Regime::Overlapping => "overlapping",
            Regime::MarkovSuspect => "markov-suspect",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// Mean nearest-neighbour spacing of the sorted frequencies (`None` for one mode).
    pub mean_spacing: Option<f64>,
    /// Largest `|γ_λμ|`.
    pub typical_coupling: f64,
    /// `typical_coupling / mean_spacing`.
    pub overlap_ratio: Option<f64>,
    pub damping_norm: f64,
    /// `‖γ‖₂ / min ω`.
    pub markov_ratio: f64,
    pub regime: Regime,
}

pub fn overlap_diagnostics(spec: &SystemSpec, gamma: &DampingMatrix) -> OverlapReport {
    let mut sorted = spec.omega().to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mean_spacing =
        (sorted.len() >= 2).then(|| sorted.windows(2).map(|p| p[1] - p[0]).sum::<f64>() / (sorted.len() - 1) as f64);
    let typical_coupling = linalg::max_abs(gamma.matrix());
    let overlap_ratio = mean_spacing.map(|d| if d > 0.0 { typical_coupling / d } else { f64::INFINITY });
    let damping_norm = gamma.norm();
    let markov_ratio = damping_norm / sorted[0];
    let regime = if markov_ratio >= MARKOV_SUSPECT_RATIO {
        Regime::MarkovSuspect
    } else if overlap_ratio.is_some_and(|r| r > 1.0) {
        Regime::Overlapping
    } else {
        Regime::Isolated
    };
    OverlapReport { mean_spacing, typical_coupling, overlap_ratio, damping_norm, markov_ratio, regime }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleKind {
    SingleMode,
    RankOneMultimode,
    RandomGaussianCoupling,
    TwoModeParametric,
}

impl FromStr for ExampleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-mode" => Ok(Self::SingleMode),
            "rank-one-multimode" => Ok(Self::RankOneMultimode),
            "random-gaussian-coupling" => Ok(Self::RandomGaussianCoupling),
            "two-mode-parametric" => Ok(Self::TwoModeParametric),
            other => Err(Error::InvalidArgument(format!("unknown example kind '{other}'"))),
        }
    }
}

/// Parameters for [`generate_example`]. Frequencies are
/// `omega0 + k·spacing`; `coupling` holds per-mode real amplitudes for the
/// deterministic kinds and `scale` the standard deviation of the random one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExampleParams {
    pub omega0: f64,
    pub spacing: f64,
    pub coupling: Vec<f64>,
    pub modes: usize,
    pub channels: usize,
    pub scale: f64,
    pub n_th: f64,
}

impl Default for ExampleParams {
    fn default() -> Self {
        Self { omega0: 1.0, spacing: 0.01, coupling: vec![0.1], modes: 2, channels: 1, scale: 0.05, n_th: 0.0 }
    }
}

pub fn generate_example(kind: ExampleKind, params: &ExampleParams, seed: u64) -> Result<SystemSpec> {
    if params.scale < 0.0 || !params.scale.is_finite() {
        return Err(Error::InvalidArgument(format!("coupling scale must be non-negative, got {}", params.scale)));
    }
    let ladder = |l: usize| (0..l).map(|k| params.omega0 + k as f64 * params.spacing).collect::<Vec<_>>();
    let column = |amps: &[f64]| CMatrix::from_iterator(amps.len(), 1, amps.iter().map(|&a| c(a)));
    let first = params.coupling.first().copied().unwrap_or(0.0);
    let (label, omega, w) = match kind {
        ExampleKind::SingleMode => ("single-mode", vec![params.omega0], CMatrix::from_element(1, 1, c(first))),
        ExampleKind::RankOneMultimode => {
            if params.coupling.is_empty() {
                return Err(Error::InvalidArgument("rank-one-multimode needs per-mode couplings".into()));
            }
            ("rank-one-multimode", ladder(params.coupling.len()), column(&params.coupling))
        }
        ExampleKind::TwoModeParametric => {
            let amps = match params.coupling.as_slice() {
                [a, b, ..] => [*a, *b],
                [a] => [*a, *a],
                [] => [0.0, 0.0],
            };
            ("two-mode-parametric", ladder(2), column(&amps))
        }
        ExampleKind::RandomGaussianCoupling => {
            if params.modes == 0 || params.channels == 0 {
                return Err(Error::InvalidArgument("modes and channels must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let amp = params.scale / 2f64.sqrt();
            let w = CMatrix::from_fn(params.modes, params.channels, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(amp * re, amp * im)
            });
            ("random-gaussian-coupling", ladder(params.modes), w)
        }
    };
    SystemSpec::new(format!("{label}/seed={seed}"), omega, w, None, params.n_th)
}

/// `‖γ(cW) − |c|² γ(W)‖_F / ‖|c|²γ(W)‖_F`.
pub fn scaling_residual(spec: &SystemSpec, factor: Complex64) -> Result<f64> {
    let base = build_damping_matrix(spec)?;
    let scaled = build_damping_matrix(&spec.scaled_coupling(factor)?)?;
    let expected = base.matrix() * c(factor.norm_sqr());
    let norm = frobenius(&expected);
    let diff = frobenius(&(scaled.matrix() - &expected));
    Ok(if norm == 0.0 { diff } else { diff / norm })
}
