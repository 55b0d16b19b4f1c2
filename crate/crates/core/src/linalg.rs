//! Small dense complex linear-algebra helpers shared by the physics modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Ratio of largest to smallest singular value.
pub fn condition_number(m: &CMatrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `‖M − M†‖_F / ‖M‖_F` (zero for the zero matrix).
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let scale = frobenius(m);
    if scale == 0.0 {
        return 0.0;
    }
    frobenius(&(m - m.adjoint())) / scale
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5)
}

/// `‖M − Mᵀ‖_F / ‖M‖_F`.
pub fn symmetric_deviation(m: &CMatrix) -> f64 {
    let scale = frobenius(m);
    if scale == 0.0 {
        return 0.0;
    }
    frobenius(&(m - m.transpose())) / scale
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(hermitian_part(m)).eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Factor a Hermitian PSD matrix as `R R†`.
///
/// Eigenvalues in `[−tol·‖M‖, 0)` are clamped to zero; anything more negative
/// is returned as `Err(min_eigenvalue)`.
pub fn psd_factor(m: &CMatrix, rel_tol: f64) -> std::result::Result<CMatrix, f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(hermitian_part(m));
    let scale = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let floor = -rel_tol * scale;
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if n > 0 && min < floor {
        return Err(min);
    }
    let mut r = eig.eigenvectors.clone();
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        r.column_mut(k).scale_mut(s);
    }
    Ok(r)
}

/// Matrix exponential (scaling and squaring with a Padé approximant).
pub fn expm(m: &CMatrix) -> CMatrix {
    if m.nrows() == 1 {
        return CMatrix::from_element(1, 1, m[(0, 0)].exp());
    }
    m.exp()
}

/// Returns `(e^{A t}, Q)` with `Q = ∫₀^t e^{A s} D e^{A† s} ds`, using the
/// block-exponential construction `exp([[−A, D], [0, A†]] h)` on a short
/// step `h = t / 2^k` and the doubling rule `Q(2h) = P(h) Q(h) P(h)† + Q(h)`.
/// The short step keeps the growing `e^{−A h}` block from swamping `Q`.
pub fn van_loan(a: &CMatrix, d: &CMatrix, t: f64) -> (CMatrix, CMatrix) {
    let n = a.nrows();
    let norm = frobenius(a) * t.abs();
    let doublings = if norm > 1.0 { norm.log2().ceil() as i32 } else { 0 };
    let h = t / 2f64.powi(doublings);
    let mut block = CMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-a * c(h)));
    block.view_mut((0, n), (n, n)).copy_from(&(d * c(h)));
    block.view_mut((n, n), (n, n)).copy_from(&(a.adjoint() * c(h)));
    let f = expm(&block);
    let f12 = f.view((0, n), (n, n)).clone_owned();
    let f22 = f.view((n, n), (n, n)).clone_owned();
    let mut propagator = f22.adjoint();
    let mut q = hermitian_part(&(&propagator * f12));
    for _ in 0..doublings {
        q = hermitian_part(&(&propagator * &q * propagator.adjoint() + &q));
        propagator = &propagator * &propagator;
    }
    (propagator, q)
}

/// Eigenvalues and right eigenvectors of a general complex matrix via the
/// complex Schur form `M = Q U Q†` and back substitution on `U`.
///
/// Eigenvectors are returned as columns, unnormalized, in Schur order. The
/// caller must ensure the eigenvalues are distinct.
pub fn complex_eigen(m: &CMatrix) -> (Vec<Complex64>, CMatrix) {
    let n = m.nrows();
    let (q, u) = nalgebra::Schur::new(m.clone()).unpack();
    let values: Vec<Complex64> = (0..n).map(|k| u[(k, k)]).collect();
    let mut x = CMatrix::zeros(n, n);
    for k in 0..n {
        let lambda = values[k];
        x[(k, k)] = c(1.0);
        for i in (0..k).rev() {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in i + 1..=k {
                acc += u[(i, j)] * x[(j, k)];
            }
            let denom = u[(i, i)] - lambda;
            x[(i, k)] = -acc / denom;
        }
    }
    (values, q * x)
}

pub fn diag_real(values: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(values.len(), values.iter().map(|&v| c(v))))
}

pub fn outer(a: &CVector, b: &CVector) -> CMatrix {
    a * b.transpose()
}
