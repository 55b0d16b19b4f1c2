//! Frequency-dependent couplings and the exact (non-Markovian) mean-field
//! dynamics.
//!
//! With `W_{λm}(ω) = W₀_{λm} g_m(ω)` and `V_{λm}(ω) = V₀_{λm} g_m(ω)` every
//! kernel reduces to the channel transforms
//! `I_m(τ) = ∫_{ω_m}^∞ g_m(ω)² e^{−iωτ} dω`:
//!
//! ```text
//! Γ_{λμ}(τ) = Σ_m [ W₀_{λm} W̄₀_{μm} I_m(τ) − V̄₀_{λm} V₀_{μm} Ī_m(τ) ]
//! Σ_{λμ}(τ) = Σ_m [ W₀_{λm} V̄₀_{μm} I_m(τ) − V̄₀_{λm} W̄₀_{μm} Ī_m(τ) ]
//! ```
//!
//! The mean `z = (⟨a⟩, ⟨a†⟩)` obeys
//! `ż = −i diag(ω, −ω) z − ∫₀^t K(t − t′) z(t′) dt′` with
//! `K = [[Γ, Σ], [Σ̄, Γ̄]]`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, frobenius, CMatrix, CVector, I};
use crate::model::MatrixDoc;
use crate::quad::{self, Tolerance};

/// Profile families for the coupling amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    /// `g = 1` on `[center − width, center + width]`.
    FlatBand,
    /// `g² = Λ² / ((ω − center)² + Λ²)` with `Λ = width`.
    Lorentzian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub center: f64,
    pub width: f64,
    /// Lower integration limit `ω_m`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum PerChannel {
    One(f64),
    Many(Vec<f64>),
}

impl PerChannel {
    fn get(&self, m: usize, name: &str) -> std::result::Result<f64, String> {
        match self {
            PerChannel::One(v) => Ok(*v),
            PerChannel::Many(v) => v.get(m).copied().ok_or_else(|| format!("{name} has no entry for channel {m}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDocument {
    kind: ProfileKind,
    center: PerChannel,
    width: PerChannel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<PerChannel>,
    #[serde(rename = "W0")]
    w0: MatrixDoc,
    #[serde(rename = "V0", default, skip_serializing_if = "Option::is_none")]
    v0: Option<MatrixDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileDocument", into = "ProfileDocument")]
pub struct SpectralProfile {
    kind: ProfileKind,
    channels: Vec<Channel>,
    w0: CMatrix,
    v0: CMatrix,
}

impl TryFrom<ProfileDocument> for SpectralProfile {
    type Error = Error;

    fn try_from(doc: ProfileDocument) -> Result<Self> {
        let w0 = doc.w0.to_matrix("W0").map_err(|e| Error::InvalidSpec(vec![e]))?;
        let v0 = match &doc.v0 {
            Some(v) => v.to_matrix("V0").map_err(|e| Error::InvalidSpec(vec![e]))?,
            None => CMatrix::zeros(w0.nrows(), w0.ncols()),
        };
        let mut channels = Vec::with_capacity(w0.ncols());
        let mut bad = Vec::new();
        for m in 0..w0.ncols() {
            let center = doc.center.get(m, "center");
            let width = doc.width.get(m, "width");
            let threshold = doc.threshold.as_ref().map_or(Ok(0.0), |t| t.get(m, "threshold"));
            match (center, width, threshold) {
                (Ok(center), Ok(width), Ok(threshold)) => channels.push(Channel { center, width, threshold }),
                (a, b, t) => bad.extend([a.err(), b.err(), t.err()].into_iter().flatten()),
            }
        }
        if !bad.is_empty() {
            return Err(Error::InvalidSpec(bad));
        }
        SpectralProfile::new(doc.kind, channels, w0, v0)
    }
}

impl From<SpectralProfile> for ProfileDocument {
    fn from(p: SpectralProfile) -> Self {
        let pick = |f: fn(&Channel) -> f64| PerChannel::Many(p.channels.iter().map(f).collect());
        ProfileDocument {
            kind: p.kind,
            center: pick(|c| c.center),
            width: pick(|c| c.width),
            threshold: Some(pick(|c| c.threshold)),
            w0: MatrixDoc::from_matrix(&p.w0),
            v0: Some(MatrixDoc::from_matrix(&p.v0)),
        }
    }
}

impl SpectralProfile {
    pub fn new(kind: ProfileKind, channels: Vec<Channel>, w0: CMatrix, v0: CMatrix) -> Result<Self> {
        let mut bad = Vec::new();
        if w0.ncols() != channels.len() {
            bad.push(format!("W0 has {} columns but {} channels are defined", w0.ncols(), channels.len()));
        }
        if v0.shape() != w0.shape() {
            bad.push(format!("V0 is {:?} but W0 is {:?}", v0.shape(), w0.shape()));
        }
        if !linalg::is_finite(&w0) || !linalg::is_finite(&v0) {
            bad.push("coupling amplitudes must be finite".into());
        }
        for (m, ch) in channels.iter().enumerate() {
            if !(ch.width > 0.0) || !ch.width.is_finite() {
                bad.push(format!("channel {m}: width must be positive"));
            }
            if !ch.center.is_finite() || !(ch.threshold >= 0.0) || !ch.threshold.is_finite() {
                bad.push(format!("channel {m}: center must be finite and threshold non-negative"));
            }
            if kind == ProfileKind::FlatBand && ch.center + ch.width <= ch.threshold {
                bad.push(format!("channel {m}: band lies entirely below the threshold"));
            }
        }
        if !bad.is_empty() {
            return Err(Error::InvalidSpec(bad));
        }
        Ok(Self { kind, channels, w0, v0 })
    }

    /// Same band for every channel, threshold 0.
    pub fn uniform(kind: ProfileKind, center: f64, width: f64, w0: CMatrix, v0: CMatrix) -> Result<Self> {
        let channels = vec![Channel { center, width, threshold: 0.0 }; w0.ncols()];
        Self::new(kind, channels, w0, v0)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::try_from(serde_json::from_str::<ProfileDocument>(text)?)
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn w0(&self) -> &CMatrix {
        &self.w0
    }

    pub fn v0(&self) -> &CMatrix {
        &self.v0
    }

    pub fn modes(&self) -> usize {
        self.w0.nrows()
    }

    /// `g_m(ω)²`.
    pub fn weight(&self, m: usize, omega: f64) -> f64 {
        let ch = &self.channels[m];
        if omega < ch.threshold {
            return 0.0;
        }
        match self.kind {
            ProfileKind::FlatBand => {
                if (omega - ch.center).abs() <= ch.width {
                    1.0
                } else {
                    0.0
                }
            }
            ProfileKind::Lorentzian => {
                let l2 = ch.width * ch.width;
                l2 / ((omega - ch.center).powi(2) + l2)
            }
        }
    }

    /// Highest frequency that must be resolved on a time grid.
    pub fn max_frequency(&self) -> f64 {
        self.channels.iter().map(|ch| ch.center + ch.width).fold(0.0, f64::max)
    }

    /// Whether the closed-form transform of channel `m` is valid.
    pub fn closed_form_valid(&self, m: usize) -> bool {
        let ch = &self.channels[m];
        match self.kind {
            ProfileKind::FlatBand => true,
            ProfileKind::Lorentzian => ch.threshold <= ch.center - 3.0 * ch.width,
        }
    }

    /// Markov limit `π Σ_m g_m(ω̄)² W₀_m W₀_m†`.
    pub fn markov_damping(&self, omega_bar: f64) -> CMatrix {
        let l = self.modes();
        let mut out = CMatrix::zeros(l, l);
        for m in 0..self.channels.len() {
            let w = self.w0.column(m).into_owned();
            out += &w * w.adjoint() * c(PI * self.weight(m, omega_bar));
        }
        out
    }
}

/// Uniform grid `τ_k = k dτ`, `k = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauGrid {
    pub dtau: f64,
    pub len: usize,
}

impl TauGrid {
    /// Smallest grid with step `dtau` reaching `tau_max`.
    pub fn new(tau_max: f64, dtau: f64) -> Result<Self> {
        if !(tau_max > 0.0) || !(dtau > 0.0) || !tau_max.is_finite() || !dtau.is_finite() {
            return Err(Error::InvalidArgument(format!("need tau_max > 0 and dtau > 0 (got {tau_max}, {dtau})")));
        }
        let steps = (tau_max / dtau * (1.0 - 1e-12)).ceil() as usize;
        Ok(Self { dtau, len: steps + 1 })
    }

    pub fn tau(&self, k: usize) -> f64 {
        k as f64 * self.dtau
    }

    pub fn tau_max(&self) -> f64 {
        self.tau(self.len - 1)
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.tau(k)).collect()
    }
}

/// Closed-form `∫_{lo}^{hi} e^{−iωτ} dω`.
pub fn flat_band_transform(lo: f64, hi: f64, tau: f64) -> Complex64 {
    if tau == 0.0 {
        return c(hi - lo);
    }
    ((-I * lo * tau).exp() - (-I * hi * tau).exp()) / (I * tau)
}

/// Closed-form `∫_{−∞}^{∞} Λ²/((ω−c)²+Λ²) e^{−iωτ} dω = πΛ e^{−icτ − Λ|τ|}`.
pub fn lorentzian_transform(center: f64, width: f64, tau: f64) -> Complex64 {
    PI * width * (-I * center * tau).exp() * (-width * tau.abs()).exp()
}

fn transform_tolerance() -> Tolerance {
    Tolerance { abs: 1e-11, rel: 1e-13, max_intervals: 20_000 }
}

/// `∫_lower^∞ h(ω) e^{−iωτ} dω` for `τ ≥ 0` and `h` analytic below the
/// real axis to the right of `split` (tail by a downward contour rotation).
/// `lower = None` integrates over the whole real line.
fn analytic_transform<H: Fn(Complex64) -> Complex64 + Sync>(
    h: &H,
    lower: Option<f64>,
    left_split: f64,
    right_split: f64,
    tau: f64,
) -> Complex64 {
    let tol = transform_tolerance();
    let lo = lower.map_or(left_split, |l| l.max(f64::MIN).min(right_split));
    let panels = (((right_split - lo) * tau / PI).ceil() as usize).clamp(4, 20_000);
    let core = quad::integrate(|w: f64| h(c(w)) * (-I * w * tau).exp(), lo, right_split, panels, tol).value;
    if tau == 0.0 {
        let upper = quad::integrate_to_infinity(|w: f64| h(c(w)), right_split, tol).value;
        let lower_tail = if lower.is_none() {
            quad::integrate_to_infinity(|u: f64| h(c(left_split - u)), 0.0, tol).value
        } else {
            Complex64::new(0.0, 0.0)
        };
        return core + upper + lower_tail;
    }
    // ∫_X^∞ h(ω) e^{−iωτ} dω = −i e^{−iXτ} ∫_0^∞ h(X − iy) e^{−yτ} dy
    let x = right_split;
    let upper = -I
        * (-I * x * tau).exp()
        * quad::integrate_to_infinity(|y: f64| h(Complex64::new(x, -y)) * (-y * tau).exp(), 0.0, tol).value;
    let lower_tail = if lower.is_none() {
        // ∫_{−∞}^{X₋} h(ω) e^{−iωτ} dω = i e^{−iX₋τ} ∫_0^∞ h(X₋ − iy) e^{−yτ} dy
        let xl = left_split;
        I * (-I * xl * tau).exp()
            * quad::integrate_to_infinity(|y: f64| h(Complex64::new(xl, -y)) * (-y * tau).exp(), 0.0, tol).value
    } else {
        Complex64::new(0.0, 0.0)
    };
    core + upper + lower_tail
}

/// `∫ h(ω) g_m(ω)² e^{−iωτ} dω` over the channel support by quadrature.
fn channel_quadrature<H: Fn(Complex64) -> Complex64 + Sync>(
    profile: &SpectralProfile,
    m: usize,
    h: &H,
    tau: f64,
    doubly_infinite: bool,
) -> Complex64 {
    let ch = profile.channels[m];
    match profile.kind {
        ProfileKind::FlatBand => {
            let lo = if doubly_infinite { ch.center - ch.width } else { (ch.center - ch.width).max(ch.threshold) };
            let hi = ch.center + ch.width;
            let panels = (((hi - lo) * tau / PI).ceil() as usize).clamp(2, 20_000);
            quad::integrate(|w: f64| h(c(w)) * (-I * w * tau).exp(), lo, hi, panels, transform_tolerance()).value
        }
        ProfileKind::Lorentzian => {
            let l2 = ch.width * ch.width;
            let g2 = move |w: Complex64| c(l2) / ((w - ch.center) * (w - ch.center) + l2);
            let hg = |w: Complex64| h(w) * g2(w);
            let lower = if doubly_infinite { None } else { Some(ch.threshold) };
            analytic_transform(&hg, lower, ch.center - 20.0 * ch.width, ch.center + 20.0 * ch.width, tau)
        }
    }
}

/// Channel transform `I_m(τ)`; returns the value and whether the closed form was used.
pub fn channel_transform(profile: &SpectralProfile, m: usize, tau: f64) -> (Complex64, bool) {
    let ch = profile.channels[m];
    if profile.closed_form_valid(m) {
        let value = match profile.kind {
            ProfileKind::FlatBand => {
                flat_band_transform((ch.center - ch.width).max(ch.threshold), ch.center + ch.width, tau)
            }
            ProfileKind::Lorentzian => lorentzian_transform(ch.center, ch.width, tau),
        };
        (value, true)
    } else {
        (channel_quadrature(profile, m, &|_| c(1.0), tau, false), false)
    }
}

/// `I_m(τ)` by quadrature only. With `doubly_infinite` the threshold is
/// ignored, matching the domain of the closed forms.
pub fn channel_transform_quadrature(profile: &SpectralProfile, m: usize, tau: f64, doubly_infinite: bool) -> Complex64 {
    channel_quadrature(profile, m, &|_| c(1.0), tau, doubly_infinite)
}

#[derive(Debug, Clone)]
pub struct MemoryKernel {
    pub grid: TauGrid,
    pub gamma: Vec<CMatrix>,
    pub sigma: Vec<CMatrix>,
    pub profile: SpectralProfile,
    pub warnings: Vec<String>,
}

impl MemoryKernel {
    pub fn modes(&self) -> usize {
        self.profile.modes()
    }
}

fn check_resolution(profile: &SpectralProfile, step: f64) -> Result<()> {
    let fastest = profile.max_frequency();
    if fastest > 0.0 && step > 0.1 / fastest * (1.0 + 1e-12) {
        return Err(Error::Resolution { dt: step, suggested_dt: 0.1 / fastest });
    }
    Ok(())
}

fn assemble(w0: &CMatrix, v0: &CMatrix, transforms: &[Complex64]) -> (CMatrix, CMatrix) {
    let l = w0.nrows();
    let mut gamma = CMatrix::zeros(l, l);
    let mut sigma = CMatrix::zeros(l, l);
    for (m, &t) in transforms.iter().enumerate() {
        let w = w0.column(m);
        let v = v0.column(m);
        for a in 0..l {
            for b in 0..l {
                gamma[(a, b)] += w[a] * w[b].conj() * t - v[a].conj() * v[b] * t.conj();
                sigma[(a, b)] += w[a] * v[b].conj() * t - v[a].conj() * w[b].conj() * t.conj();
            }
        }
    }
    (gamma, sigma)
}

/// Evaluates `Γ(τ_k)` and `Σ(τ_k)` on the grid.
pub fn compute_kernels(profile: &SpectralProfile, grid: TauGrid) -> Result<MemoryKernel> {
    check_resolution(profile, grid.dtau)?;
    let mut warnings = Vec::new();
    for m in 0..profile.channels.len() {
        if !profile.closed_form_valid(m) {
            let ch = profile.channels[m];
            warnings.push(format!(
                "channel {m}: threshold {} cuts the Lorentzian core (center {}, width {}); closed form invalid, using quadrature",
                ch.threshold, ch.center, ch.width
            ));
        }
    }
    let pairs: Vec<(CMatrix, CMatrix)> = (0..grid.len)
        .into_par_iter()
        .map(|k| {
            let tau = grid.tau(k);
            let transforms: Vec<Complex64> =
                (0..profile.channels.len()).map(|m| channel_transform(profile, m, tau).0).collect();
            assemble(&profile.w0, &profile.v0, &transforms)
        })
        .collect();
    let (gamma, sigma) = pairs.into_iter().unzip();
    Ok(MemoryKernel { grid, gamma, sigma, profile: profile.clone(), warnings })
}

fn trapezoid<F: Fn(usize) -> CMatrix>(len: usize, step: f64, f: F) -> CMatrix {
    let mut total = f(0) * c(0.5);
    for k in 1..len {
        let w = if k + 1 == len { 0.5 } else { 1.0 };
        total += f(k) * c(w);
    }
    total * c(step)
}

#[derive(Debug, Clone)]
pub struct MarkovCheck {
    /// `∫₀^{τ_max} Γ(τ) e^{iω̄τ} dτ`.
    pub gamma_eff: CMatrix,
    /// `π Σ g(ω̄)² W₀ W₀†`.
    pub target: CMatrix,
    /// `‖herm(γ_eff) − target‖ / ‖target‖`.
    pub residual: f64,
    pub warnings: Vec<String>,
}

/// Hermitian part of a matrix; the anti-Hermitian part of `γ_eff` is the frequency shift.
fn rate_part(m: &CMatrix) -> CMatrix {
    linalg::hermitian_part(m)
}

pub fn markov_limit_check(kernel: &MemoryKernel, omega_bar: f64) -> MarkovCheck {
    let grid = kernel.grid;
    let gamma_eff = trapezoid(grid.len, grid.dtau, |k| &kernel.gamma[k] * (I * omega_bar * grid.tau(k)).exp());
    let target = kernel.profile.markov_damping(omega_bar);
    let mut warnings = Vec::new();
    let narrowest = kernel.profile.channels.iter().map(|ch| ch.width).fold(f64::INFINITY, f64::min);
    if grid.tau_max() * narrowest < 50.0 {
        warnings.push(format!(
            "tau_max * B = {:.3} < 50: truncation of the kernel tail may dominate the residual",
            grid.tau_max() * narrowest
        ));
    }
    let scale = frobenius(&target);
    let diff = frobenius(&(rate_part(&gamma_eff) - &target));
    let residual = if scale > 0.0 { diff / scale } else { diff };
    MarkovCheck { gamma_eff, target, residual, warnings }
}

/// Analytic Markov/RWA rate matrix `Γ̂ = ∫₀^∞ Γ(τ) e^{iω̄τ} dτ` including
/// the principal-value frequency shifts. The mean then follows
/// `ṁ = (−i diag ω − Γ̂) m`.
pub fn markov_rate_matrix(profile: &SpectralProfile, omega_bar: f64) -> Result<CMatrix> {
    let mut resonant = Vec::with_capacity(profile.channels.len());
    let mut antiresonant = Vec::with_capacity(profile.channels.len());
    for (m, ch) in profile.channels.iter().enumerate() {
        match profile.kind {
            ProfileKind::FlatBand => {
                let lo = (ch.center - ch.width).max(ch.threshold);
                let hi = ch.center + ch.width;
                if !(omega_bar > lo && omega_bar < hi) {
                    return Err(Error::InvalidArgument(format!("omega_bar = {omega_bar} is outside band {m}")));
                }
                resonant.push(PI - I * ((hi - omega_bar) / (omega_bar - lo)).ln());
                antiresonant.push(I * ((hi + omega_bar) / (lo + omega_bar)).ln());
            }
            ProfileKind::Lorentzian => {
                if !profile.closed_form_valid(m) {
                    return Err(Error::InvalidArgument(format!("channel {m}: threshold cuts the Lorentzian core")));
                }
                let l = ch.width;
                resonant.push(PI * l / (l + I * (ch.center - omega_bar)));
                antiresonant.push(PI * l / (l - I * (ch.center + omega_bar)));
            }
        }
    }
    let l = profile.modes();
    let mut out = CMatrix::zeros(l, l);
    for m in 0..profile.channels.len() {
        let w = profile.w0.column(m);
        let v = profile.v0.column(m);
        let (r, a) = (resonant[m], antiresonant[m]);
        for i in 0..l {
            for j in 0..l {
                out[(i, j)] += w[i] * w[j].conj() * r - v[i].conj() * v[j] * a;
            }
        }
    }
    Ok(out)
}

/// Bath occupation `n(ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Occupation {
    Constant {
        n: f64,
    },
    /// Bose–Einstein with `k_B = ħ = 1`.
    Thermal {
        temperature: f64,
    },
}

impl Occupation {
    fn eval(&self, w: Complex64) -> Complex64 {
        match *self {
            Occupation::Constant { n } => c(n),
            Occupation::Thermal { temperature } => c(1.0) / ((w / temperature).exp() - 1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseCorrelation {
    pub grid: TauGrid,
    /// `⟨f(t) f†(t − τ)⟩`.
    pub plus: Vec<CMatrix>,
    /// `⟨f†(t) f(t − τ)⟩`, entry `(λ, μ)` = `⟨f_λ† f_μ⟩`.
    pub minus: Vec<CMatrix>,
}

/// Autocorrelations of the noise operators for a thermal bath:
///
/// ```text
/// C⁺_{λμ}(τ) = Σ_m ∫ [(1+n) e^{−iωτ} W_λ W̄_μ + n e^{+iωτ} V̄_λ V_μ] g_m² dω
/// C⁻_{λμ}(τ) = Σ_m ∫ [n e^{+iωτ} W̄_λ W_μ + (1+n) e^{−iωτ} V_λ V̄_μ] g_m² dω
/// ```
pub fn noise_autocorrelation(
    profile: &SpectralProfile,
    occupation: Occupation,
    grid: TauGrid,
) -> Result<NoiseCorrelation> {
    check_resolution(profile, grid.dtau)?;
    match occupation {
        Occupation::Constant { n } if !(n >= 0.0) || !n.is_finite() => {
            return Err(Error::InvalidArgument(format!("occupation must be non-negative, got {n}")));
        }
        Occupation::Thermal { temperature } => {
            if !(temperature > 0.0) || !temperature.is_finite() {
                return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
            }
            for (m, ch) in profile.channels.iter().enumerate() {
                let lowest = match profile.kind {
                    ProfileKind::FlatBand => (ch.center - ch.width).max(ch.threshold),
                    ProfileKind::Lorentzian => ch.threshold,
                };
                if lowest <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "channel {m}: thermal occupation diverges at omega <= 0; raise the threshold above zero"
                    )));
                }
            }
        }
        _ => {}
    }
    let l = profile.modes();
    let pairs: Vec<(CMatrix, CMatrix)> = (0..grid.len)
        .into_par_iter()
        .map(|k| {
            let tau = grid.tau(k);
            let mut plus = CMatrix::zeros(l, l);
            let mut minus = CMatrix::zeros(l, l);
            for m in 0..profile.channels.len() {
                let (emit, absorb) = match occupation {
                    Occupation::Constant { n } => {
                        let t = channel_transform(profile, m, tau).0;
                        (t * (1.0 + n), t * n)
                    }
                    Occupation::Thermal { .. } => {
                        let n = |w: Complex64| occupation.eval(w);
                        let e = channel_quadrature(profile, m, &|w| c(1.0) + n(w), tau, false);
                        let a = channel_quadrature(profile, m, &n, tau, false);
                        (e, a)
                    }
                };
                let w = profile.w0.column(m);
                let v = profile.v0.column(m);
                for a in 0..l {
                    for b in 0..l {
                        plus[(a, b)] += emit * w[a] * w[b].conj() + absorb.conj() * v[a].conj() * v[b];
                        minus[(a, b)] += absorb.conj() * w[a].conj() * w[b] + emit * v[a] * v[b].conj();
                    }
                }
            }
            (plus, minus)
        })
        .collect();
    let (plus, minus) = pairs.into_iter().unzip();
    Ok(NoiseCorrelation { grid, plus, minus })
}

/// Integrated weight `∫_{−∞}^{∞} C⁻(τ) e^{−iω̄τ} dτ`, using `C⁻(−τ) = C⁻(τ)†`.
/// In the broadband limit this tends to `2 n γᵀ`.
pub fn absorption_weight(corr: &NoiseCorrelation, omega_bar: f64) -> CMatrix {
    let grid = corr.grid;
    let half = trapezoid(grid.len, grid.dtau, |k| &corr.minus[k] * (-I * omega_bar * grid.tau(k)).exp());
    &half + half.adjoint()
}

/// Block kernel `K = [[Γ, Σ], [Σ̄, Γ̄]]` at one grid point.
pub fn block_kernel(kernel: &MemoryKernel, k: usize) -> CMatrix {
    let l = kernel.modes();
    let mut out = CMatrix::zeros(2 * l, 2 * l);
    out.view_mut((0, 0), (l, l)).copy_from(&kernel.gamma[k]);
    out.view_mut((0, l), (l, l)).copy_from(&kernel.sigma[k]);
    out.view_mut((l, 0), (l, l)).copy_from(&kernel.sigma[k].map(|z| z.conj()));
    out.view_mut((l, l), (l, l)).copy_from(&kernel.gamma[k].map(|z| z.conj()));
    out
}

#[derive(Debug, Clone)]
pub struct VolterraSolution {
    pub times: Vec<f64>,
    /// `z = (⟨a⟩, ⟨a†⟩)` at each time.
    pub z: Vec<CVector>,
}

impl VolterraSolution {
    pub fn modes(&self) -> usize {
        self.z.first().map_or(0, |z| z.len() / 2)
    }

    /// `⟨a⟩` at grid index `k`.
    pub fn mean(&self, k: usize) -> CVector {
        self.z[k].rows(0, self.modes()).into_owned()
    }
}

/// `z₀ = (m, m̄)`.
pub fn mean_initial(m: &CVector) -> CVector {
    let l = m.len();
    CVector::from_iterator(2 * l, m.iter().copied().chain(m.iter().map(|z| z.conj())))
}

const CORRECTOR_PASSES: usize = 2;

/// Integrates the mean equation on `t_k = k dt` up to `t_max`.
///
/// The free rotation is removed exactly through `y_i = e^{i s_i ω_i t} z_i`
/// (`s = +1` for `a`, `−1` for `a†`); the memory term uses the trapezoidal
/// rule and each step is a predictor–corrector (trapezoidal) update.
pub fn solve_mean_volterra(
    omega: &[f64],
    kernel: &MemoryKernel,
    z0: &CVector,
    t_max: f64,
    dt: f64,
) -> Result<VolterraSolution> {
    let l = omega.len();
    if kernel.modes() != l || z0.len() != 2 * l {
        return Err(Error::Dimension(format!(
            "{} frequencies, kernel for {} modes, initial vector of length {}",
            l,
            kernel.modes(),
            z0.len()
        )));
    }
    if !(dt > 0.0) || !(t_max >= 0.0) || !dt.is_finite() || !t_max.is_finite() {
        return Err(Error::InvalidArgument(format!("need dt > 0 and t_max >= 0 (dt = {dt}, t_max = {t_max})")));
    }
    let fastest = omega.iter().map(|w| w.abs()).fold(0.0, f64::max);
    if fastest > 0.0 && dt > 0.1 / fastest * (1.0 + 1e-12) {
        return Err(Error::Resolution { dt, suggested_dt: 0.1 / fastest });
    }
    let ratio = dt / kernel.grid.dtau;
    let stride = ratio.round() as usize;
    if stride == 0 || (ratio - stride as f64).abs() > 1e-9 * ratio {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} must be an integer multiple of the kernel step {}",
            kernel.grid.dtau
        )));
    }
    let steps_f = t_max / dt;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::InvalidArgument(format!("t_max = {t_max} is not a multiple of dt = {dt}")));
    }
    if steps * stride >= kernel.grid.len {
        return Err(Error::InvalidArgument(format!(
            "kernel grid ends at tau = {} but the solve needs {t_max}",
            kernel.grid.tau_max()
        )));
    }

    let n2 = 2 * l;
    // flattened row-major K(k dt)
    let kflat: Vec<Vec<Complex64>> = (0..=steps)
        .map(|k| {
            let b = block_kernel(kernel, k * stride);
            (0..n2 * n2).map(|idx| b[(idx / n2, idx % n2)]).collect()
        })
        .collect();
    let rate: Vec<f64> = (0..n2).map(|i| if i < l { omega[i] } else { -omega[i - l] }).collect();
    let frame = |t: f64| -> Vec<Complex64> { rate.iter().map(|w| (I * w * t).exp()).collect() };
    let matvec_add = |out: &mut [Complex64], k: &[Complex64], z: &[Complex64], w: f64| {
        for i in 0..n2 {
            let row = &k[i * n2..(i + 1) * n2];
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n2 {
                acc += row[j] * z[j];
            }
            out[i] += acc * w;
        }
    };

    let z0v: Vec<Complex64> = z0.iter().copied().collect();
    let norm0 = z0.norm();
    let limit = 10.0 * norm0;
    let mut history: Vec<Vec<Complex64>> = Vec::with_capacity(steps + 1);
    history.push(z0v.clone());
    let mut y = z0v.clone();
    let mut f_prev = vec![Complex64::new(0.0, 0.0); n2];

    for k in 0..steps {
        let t_next = (k + 1) as f64 * dt;
        // dt [½ K(t_{k+1}) z₀ + Σ_{j=1}^{k} K(t_{k+1} − t_j) z_j]
        let mut hist = vec![Complex64::new(0.0, 0.0); n2];
        for (j, zj) in history.iter().enumerate() {
            let w = if j == 0 { 0.5 * dt } else { dt };
            matvec_add(&mut hist, &kflat[k + 1 - j], zj, w);
        }
        let e_next = frame(t_next);
        let rhs = |y_next: &[Complex64]| -> Vec<Complex64> {
            let z_next: Vec<Complex64> = y_next.iter().zip(&e_next).map(|(y, e)| y / e).collect();
            let mut conv = hist.clone();
            matvec_add(&mut conv, &kflat[0], &z_next, 0.5 * dt);
            conv.iter().zip(&e_next).map(|(v, e)| -v * e).collect()
        };
        let mut y_next: Vec<Complex64> = y.iter().zip(&f_prev).map(|(y, f)| y + f * dt).collect();
        for _ in 0..CORRECTOR_PASSES {
            let f_next = rhs(&y_next);
            y_next = (0..n2).map(|i| y[i] + (f_prev[i] + f_next[i]) * (0.5 * dt)).collect();
        }
        f_prev = rhs(&y_next);
        y = y_next;
        let z_next: Vec<Complex64> = y.iter().zip(&e_next).map(|(y, e)| y / e).collect();
        let norm = z_next.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm0 > 0.0 && norm > limit) {
            return Err(Error::Instability { t: t_next, norm, limit, dt });
        }
        history.push(z_next);
    }
    let times = (0..=steps).map(|k| k as f64 * dt).collect();
    let z = history.into_iter().map(CVector::from_vec).collect();
    Ok(VolterraSolution { times, z })
}

/// Computes the kernel on the solver grid (`dτ = dt`) and solves.
pub fn solve_mean_volterra_for_profile(
    omega: &[f64],
    profile: &SpectralProfile,
    m0: &CVector,
    t_max: f64,
    dt: f64,
) -> Result<(VolterraSolution, MemoryKernel)> {
    let grid = TauGrid::new(t_max.max(dt), dt)?;
    let kernel = compute_kernels(profile, grid)?;
    let sol = solve_mean_volterra(omega, &kernel, &mean_initial(m0), t_max, dt)?;
    Ok((sol, kernel))
}

/// Family for the RWA scan: modes `ω̄ ± Δω/2`, one flat-band channel centred
/// at `ω̄` with half-width `β ω̄`, and `W₀ = V₀ = √(g/π)·(1, …, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RwaFamily {
    /// Damping scale `g`; the Markov damping matrix is `g` times the all-ones matrix.
    pub coupling: f64,
    pub spacing: f64,
    pub band_fraction: f64,
    pub include_counter_rotating: bool,
    /// Run length in units of `1/g`.
    pub duration: f64,
    /// `dt = resolution / (ω̄ + B)`.
    pub resolution: f64,
}

impl Default for RwaFamily {
    fn default() -> Self {
        Self {
            coupling: 1.0,
            spacing: 1.0 / 3.0,
            band_fraction: 0.9,
            include_counter_rotating: true,
            duration: 3.0,
            resolution: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RwaScanRow {
    pub omega_bar: f64,
    /// `γ/ω̄`.
    pub ratio: f64,
    pub deviation: f64,
}

/// Deviation between the Volterra mean and the Markov/RWA mean for one `ω̄`.
pub fn rwa_deviation(family: &RwaFamily, omega_bar: f64) -> Result<f64> {
    let g = family.coupling;
    let omega = vec![omega_bar - 0.5 * family.spacing, omega_bar + 0.5 * family.spacing];
    let amp = (g / PI).sqrt();
    let w0 = CMatrix::from_element(2, 1, c(amp));
    let v0 = if family.include_counter_rotating { w0.clone() } else { CMatrix::zeros(2, 1) };
    let band = family.band_fraction * omega_bar;
    let profile = SpectralProfile::uniform(ProfileKind::FlatBand, omega_bar, band, w0, v0)?;
    let dt = family.resolution / (omega_bar + band);
    let t_scale = if g > 0.0 { 1.0 / g } else { 1.0 };
    let t_max = (family.duration * t_scale / dt).round() * dt;
    let m0 = CVector::from_vec(vec![c(1.0), c(0.0)]);
    let (sol, _) = solve_mean_volterra_for_profile(&omega, &profile, &m0, t_max, dt)?;

    let drift = -linalg::diag_real(&omega) * I - markov_rate_matrix(&profile, omega_bar)?;
    let step = linalg::expm(&(&drift * c(dt)));
    let mut reference = m0.clone();
    let (mut worst, mut peak) = (0.0_f64, 0.0_f64);
    for k in 0..sol.times.len() {
        if k > 0 {
            reference = &step * &reference;
        }
        worst = worst.max((sol.mean(k) - &reference).norm());
        peak = peak.max(reference.norm());
    }
    Ok(worst / peak)
}

pub fn rwa_correction_scan(family: &RwaFamily, ratios: &[f64]) -> Result<Vec<RwaScanRow>> {
    ratios
        .iter()
        .map(|&ratio| {
            if !(ratio > 0.0) {
                return Err(Error::InvalidArgument(format!("ratio must be positive, got {ratio}")));
            }
            let scale = if family.coupling > 0.0 { family.coupling } else { 1.0 };
            let omega_bar = scale / ratio;
            Ok(RwaScanRow { omega_bar, ratio, deviation: rwa_deviation(family, omega_bar)? })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
