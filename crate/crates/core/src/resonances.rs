//! Biorthogonal decomposition of the effective Hamiltonian `H = T Ω T⁻¹`.
//!
//! The resonance operators are `d_n = Σ_λ T⁻¹_{nλ} a_λ` and
//! `e_n† = Σ_λ a_λ† T_{λn}`. They satisfy `[d_m, e_n†] = δ_mn` and
//! `[e_m, e_n†] = A_mn` with `A = T†T`; `[d_m, d_n†] = B_mn` with
//! `B = T⁻¹ T⁻¹†`. Operators are only ever handled through these
//! coefficient matrices.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, frobenius, CMatrix, CVector, I};
use crate::model::{DampingMatrix, EffectiveHamiltonian, MatrixDoc};

/// Relative gap below which two eigenvalues count as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceDecomposition {
    /// Resonances sorted by ascending real part, then imaginary part.
    pub omega: Vec<Complex64>,
    /// Right eigenvectors as unit-norm columns.
    pub t: CMatrix,
    pub tinv: CMatrix,
    /// `T†T`.
    pub a: CMatrix,
    pub condition: f64,
}

impl ResonanceDecomposition {
    pub fn modes(&self) -> usize {
        self.omega.len()
    }

    /// `T diag(Ω) T⁻¹`.
    pub fn reconstruct(&self) -> CMatrix {
        let d = CMatrix::from_diagonal(&CVector::from_column_slice(&self.omega));
        &self.t * d * &self.tinv
    }

    /// `T diag(e^{−iΩ_n t}) T⁻¹`, the mean-field propagator `e^{Mt}`.
    pub fn propagator(&self, t: f64) -> CMatrix {
        let d = CVector::from_iterator(self.modes(), self.omega.iter().map(|w| (-I * w * t).exp()));
        &self.t * CMatrix::from_diagonal(&d) * &self.tinv
    }
}

pub fn decompose(h: &EffectiveHamiltonian) -> Result<ResonanceDecomposition> {
    let h = h.matrix();
    if !linalg::is_finite(h) {
        return Err(Error::NonFinite("effective Hamiltonian"));
    }
    let l = h.nrows();
    let scale = linalg::spectral_norm(h);
    let (values, vectors) = linalg::complex_eigen(h);

    let threshold = DEGENERACY_TOL * scale;
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&i, &j| values[i].re.total_cmp(&values[j].re));
    // real parts equal up to roundoff are ties, broken by the imaginary part
    let tie = 1e-12 * scale;
    let mut start = 0;
    while start < l {
        let mut end = start + 1;
        while end < l && values[order[end]].re - values[order[end - 1]].re <= tie {
            end += 1;
        }
        order[start..end].sort_by(|&i, &j| values[i].im.total_cmp(&values[j].im));
        start = end;
    }
    let omega: Vec<Complex64> = order.iter().map(|&k| values[k]).collect();
    if let Some(w) = omega.iter().find(|w| w.im > 1e-12 * scale) {
        return Err(Error::Consistency(format!("resonance {w} has positive imaginary part")));
    }
    for i in 0..l {
        for j in i + 1..l {
            let gap = (omega[i] - omega[j]).norm();
            if gap <= threshold {
                return Err(Error::NearDegenerate { first: i, second: j, gap, threshold });
            }
        }
    }

    let mut t = CMatrix::zeros(l, l);
    for (col, &k) in order.iter().enumerate() {
        let v = vectors.column(k);
        let norm = v.norm();
        let pivot = v.iter().find(|z| z.norm() > 1e-14 * norm).copied().unwrap_or(c(1.0));
        let phase = pivot.conj() / pivot.norm();
        t.set_column(col, &(v * (phase / norm)));
    }
    let tinv = t.clone().try_inverse().ok_or_else(|| Error::Consistency("eigenvector matrix is singular".into()))?;
    let mut a = linalg::hermitian_part(&(t.adjoint() * &t));
    for k in 0..l {
        a[(k, k)] = c(1.0);
    }
    let condition = linalg::condition_number(&t);
    let dec = ResonanceDecomposition { omega, t, tinv, a, condition };

    let recon = frobenius(&(dec.reconstruct() - h));
    let ident = frobenius(&(&dec.tinv * &dec.t - CMatrix::identity(l, l)));
    if recon > 1e-10 * scale.max(f64::MIN_POSITIVE) || ident > 1e-10 {
        return Err(Error::Consistency(format!(
            "decomposition residuals too large (reconstruction {recon:.3e}, inverse {ident:.3e}; condition {:.3e})",
            dec.condition
        )));
    }
    Ok(dec)
}

/// Returns `(A, B)` with `A = T†T` and `B = T⁻¹ T⁻¹†`.
pub fn commutator_matrix(dec: &ResonanceDecomposition) -> (CMatrix, CMatrix) {
    let b = linalg::hermitian_part(&(&dec.tinv * dec.tinv.adjoint()));
    (dec.a.clone(), b)
}

/// `C_nm = i A_nm (Ω_m − Ω̄_n)`, the rates of the jump term `Σ C_nm d_m ρ d_n†`.
pub fn lamprecht_ritsch_coefficients(dec: &ResonanceDecomposition) -> CMatrix {
    let l = dec.modes();
    CMatrix::from_fn(l, l, |n, m| I * dec.a[(n, m)] * (dec.omega[m] - dec.omega[n].conj()))
}

/// Jump-term coefficients mapped back to the mode basis.
///
/// Substituting `d_m = Σ T⁻¹_{mμ} a_μ` turns `Σ C_nm d_m ρ d_n†` into
/// `Σ (T⁻¹† C T⁻¹)_{λμ} a_μ ρ a_λ†`, which must equal `2γ`.
pub fn jump_coefficients_in_mode_basis(dec: &ResonanceDecomposition, coefficients: &CMatrix) -> CMatrix {
    dec.tinv.adjoint() * coefficients * &dec.tinv
}

/// `‖T⁻¹† C T⁻¹ − 2γ‖ / ‖2γ‖` (absolute when `γ = 0`).
pub fn lamprecht_ritsch_residual(dec: &ResonanceDecomposition, gamma: &DampingMatrix) -> f64 {
    let c_mat = lamprecht_ritsch_coefficients(dec);
    let target = gamma.matrix() * c(2.0);
    let diff = frobenius(&(jump_coefficients_in_mode_basis(dec, &c_mat) - &target));
    let scale = frobenius(&target);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// `K_n = A_nn B_nn`.
pub fn petermann_factors(dec: &ResonanceDecomposition) -> Vec<f64> {
    let (a, b) = commutator_matrix(dec);
    (0..dec.modes()).map(|n| a[(n, n)].re * b[(n, n)].re).collect()
}

/// `‖H H† − H† H‖ / ‖H‖²`.
pub fn normality_residual(h: &EffectiveHamiltonian) -> f64 {
    let h = h.matrix();
    let scale = frobenius(h);
    if scale == 0.0 {
        return 0.0;
    }
    frobenius(&(h * h.adjoint() - h.adjoint() * h)) / (scale * scale)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonanceReport {
    #[serde(rename = "Omega")]
    pub omega: OmegaDoc,
    #[serde(rename = "A")]
    pub a: MatrixDoc,
    #[serde(rename = "B")]
    pub b: MatrixDoc,
    #[serde(rename = "C")]
    pub c: MatrixDoc,
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    pub condition: f64,
    pub normality_residual: f64,
    pub consistency_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmegaDoc {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

pub fn resonance_report(h: &EffectiveHamiltonian, gamma: &DampingMatrix) -> Result<ResonanceReport> {
    let dec = decompose(h)?;
    let (a, b) = commutator_matrix(&dec);
    let c_mat = lamprecht_ritsch_coefficients(&dec);
    Ok(ResonanceReport {
        omega: OmegaDoc { re: dec.omega.iter().map(|z| z.re).collect(), im: dec.omega.iter().map(|z| z.im).collect() },
        a: MatrixDoc::from_matrix(&a),
        b: MatrixDoc::from_matrix(&b),
        c: MatrixDoc::from_matrix(&c_mat),
        k: petermann_factors(&dec),
        condition: dec.condition,
        normality_residual: normality_residual(h),
        consistency_residual: lamprecht_ritsch_residual(&dec, gamma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_damping_matrix, build_effective_hamiltonian, SystemSpec};

    fn setup(omega: Vec<f64>, gamma: CMatrix) -> (DampingMatrix, EffectiveHamiltonian) {
        let spec = SystemSpec::from_damping("t", omega, &gamma, 0.0).unwrap();
        let g = build_damping_matrix(&spec).unwrap();
        let h = build_effective_hamiltonian(&spec, &g).unwrap();
        (g, h)
    }

    fn ones(scale: f64) -> CMatrix {
        CMatrix::from_element(2, 2, c(scale))
    }

    #[test]
    fn diagonal_damping_is_trivial() {
        let g = CMatrix::from_diagonal(&CVector::from_vec(vec![c(0.1), c(0.2)]));
        let (gm, h) = setup(vec![1.0, 2.0], g);
        let dec = decompose(&h).unwrap();
        assert!((dec.omega[0] - Complex64::new(1.0, -0.1)).norm() < 1e-14);
        assert!((dec.omega[1] - Complex64::new(2.0, -0.2)).norm() < 1e-14);
        assert!(frobenius(&(&dec.t - CMatrix::identity(2, 2))) < 1e-14);
        let cm = lamprecht_ritsch_coefficients(&dec);
        assert!((cm[(0, 0)] - c(0.2)).norm() < 1e-14);
        assert!((cm[(1, 1)] - c(0.4)).norm() < 1e-14);
        assert!(lamprecht_ritsch_residual(&dec, &gm) < 1e-12);
    }

    #[test]
    fn degenerate_frequencies_give_normal_h() {
        let (_, h) = setup(vec![1.0, 1.0], ones(0.1));
        let dec = decompose(&h).unwrap();
        assert!(
            (dec.omega[0] - Complex64::new(1.0, -0.2)).norm() < 1e-12
                || (dec.omega[1] - Complex64::new(1.0, -0.2)).norm() < 1e-12
        );
        assert!(frobenius(&(&dec.a - CMatrix::identity(2, 2))) < 1e-12);
        assert!(petermann_factors(&dec).iter().all(|k| (k - 1.0).abs() < 1e-12));
    }

    #[test]
    fn non_normal_example() {
        let (g, h) = setup(vec![1.0, 1.1], ones(0.1));
        let dec = decompose(&h).unwrap();
        assert!(dec.a[(0, 1)].norm() > 1e-3);
        assert!((dec.a[(0, 1)] - dec.a[(1, 0)].conj()).norm() < 1e-15);
        assert!(petermann_factors(&dec).iter().all(|&k| k > 1.0));
        assert!(lamprecht_ritsch_residual(&dec, &g) < 1e-10);
        assert!(normality_residual(&h) > 1e-4);
    }

    #[test]
    fn closed_cavity_has_no_jumps() {
        let (g, h) = setup(vec![1.0, 1.5], CMatrix::zeros(2, 2));
        let dec = decompose(&h).unwrap();
        assert!(frobenius(&lamprecht_ritsch_coefficients(&dec)) < 1e-15);
        assert!(lamprecht_ritsch_residual(&dec, &g) < 1e-15);
    }

    #[test]
    fn exceptional_point_is_rejected() {
        // equal diagonal damping and ω₂ − ω₁ = 2γ₁₂ make the eigenvalues coalesce
        let (_, h) = setup(vec![1.0, 1.2], ones(0.1));
        match decompose(&h) {
            Err(Error::NearDegenerate { first, second, .. }) => assert_eq!((first, second), (0, 1)),
            other => panic!("expected degeneracy error, got {other:?}"),
        }
    }

    #[test]
    fn phase_convention() {
        let (_, h) = setup(vec![1.0, 1.3], ones(0.1));
        let dec = decompose(&h).unwrap();
        for k in 0..2 {
            let col = dec.t.column(k);
            assert!((col.norm() - 1.0).abs() < 1e-14);
            let first = col.iter().find(|z| z.norm() > 1e-12).unwrap();
            assert!(first.im.abs() < 1e-15 && first.re > 0.0);
        }
    }
}
