#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use openres::linalg::c;
use openres::{CMatrix, CVector, GaussianState, SystemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn complex_normal<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_normal(rng) * scale)
}

pub fn random_hermitian<R: Rng>(rng: &mut R, n: usize, scale: f64) -> CMatrix {
    let a = random_matrix(rng, n, n, scale);
    (&a + a.adjoint()) * c(0.5)
}

pub fn random_unitary<R: Rng>(rng: &mut R, n: usize) -> CMatrix {
    random_matrix(rng, n, n, 1.0).qr().q()
}

pub fn frequencies<R: Rng>(rng: &mut R, l: usize) -> Vec<f64> {
    (0..l).map(|_| rng.random_range(0.5..2.0)).collect()
}

/// Random spec with `L ≤ max_modes`, `M ≤ max_channels`.
pub fn random_spec<R: Rng>(rng: &mut R, max_modes: usize, max_channels: usize, n_th: f64) -> SystemSpec {
    let l = rng.random_range(1..=max_modes);
    let m = rng.random_range(1..=max_channels);
    let w = random_matrix(rng, l, m, 0.1);
    let v = if rng.random_bool(0.5) { Some(random_matrix(rng, l, m, 0.1)) } else { None };
    SystemSpec::new("random", frequencies(rng, l), w, v, n_th).unwrap()
}

/// Random spec whose damping matrix is positive definite (`λ_min ≥ floor`).
pub fn strictly_damped_spec<R: Rng>(rng: &mut R, max_modes: usize, n_th: f64, floor: f64) -> SystemSpec {
    let l = rng.random_range(1..=max_modes);
    let w = random_matrix(rng, l, l, 0.1);
    let gamma = &w * w.adjoint() * c(PI) + CMatrix::identity(l, l) * c(floor);
    SystemSpec::from_damping("damped", frequencies(rng, l), &gamma, n_th).unwrap()
}

/// Two overlapping modes used as the ensemble reference.
pub fn reference_spec() -> SystemSpec {
    let gamma = CMatrix::from_row_slice(2, 2, &[c(0.12), c(0.1), c(0.1), c(0.12)]);
    SystemSpec::from_damping("reference", vec![1.0, 1.01], &gamma, 0.5).unwrap()
}

/// Random Gaussian state with PSD covariance and a small symmetric anomalous part.
pub fn random_state<R: Rng>(rng: &mut R, l: usize) -> GaussianState {
    let m = CVector::from_fn(l, |_, _| complex_normal(rng) * 0.5);
    let x = random_matrix(rng, l, l, 0.3);
    let n = &x * x.adjoint() + m.map(|z| z.conj()) * m.transpose();
    let sym = random_matrix(rng, l, l, 0.05);
    let s = (&sym + sym.transpose()) * c(0.5) + &m * m.transpose();
    GaussianState { m, n, s, t: 0.0 }
}

pub fn max_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
