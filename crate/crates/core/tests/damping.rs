mod common;

use std::f64::consts::PI;

use num_complex::Complex64;
use openres::linalg::{self, c, frobenius};
use openres::model::{build_damping_matrix, build_effective_hamiltonian, overlap_diagnostics, Regime};
use openres::{CMatrix, SystemSpec};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = SystemSpec> {
    (1usize..=8, 1usize..=4, any::<u64>()).prop_map(|(l, m, seed)| {
        let mut rng = common::rng(seed);
        let w = common::random_matrix(&mut rng, l, m, 0.3);
        SystemSpec::new("prop", common::frequencies(&mut rng, l), w, None, 0.0).unwrap()
    })
}

proptest! {
    #[test]
    fn damping_is_hermitian_psd(spec in spec_strategy()) {
        let g = build_damping_matrix(&spec).unwrap();
        prop_assert!(linalg::hermitian_deviation(g.matrix()) <= 1e-12);
        let scale = g.norm().max(1e-300);
        prop_assert!(g.eigenvalues()[0] >= -1e-12 * scale);
    }

    #[test]
    fn damping_scales_with_coupling_modulus(spec in spec_strategy(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
        let factor = Complex64::new(re, im);
        let g = build_damping_matrix(&spec).unwrap();
        let scaled = build_damping_matrix(&spec.scaled_coupling(factor).unwrap()).unwrap();
        let expect = g.matrix() * c(factor.norm_sqr());
        prop_assert!(frobenius(&(scaled.matrix() - &expect)) <= 1e-12 * frobenius(&expect).max(1e-300));
    }

    #[test]
    fn channel_rotation_leaves_damping_unchanged(spec in spec_strategy(), seed in any::<u64>()) {
        // W → W U mixes outside channels and must not change γ
        let mut rng = common::rng(seed);
        let u = common::random_unitary(&mut rng, spec.channels());
        let rotated = SystemSpec::new("rot", spec.omega().to_vec(), spec.w() * u, None, 0.0).unwrap();
        let a = build_damping_matrix(&spec).unwrap();
        let b = build_damping_matrix(&rotated).unwrap();
        prop_assert!(frobenius(&(a.matrix() - b.matrix())) <= 1e-12 * frobenius(a.matrix()).max(1e-300));
    }

    #[test]
    fn hamiltonian_anti_hermitian_part_is_damping(spec in spec_strategy()) {
        let g = build_damping_matrix(&spec).unwrap();
        let h = build_effective_hamiltonian(&spec, &g).unwrap();
        let anti = (h.matrix() - h.matrix().adjoint()) * Complex64::new(0.0, 0.5);
        prop_assert!(frobenius(&(anti - g.matrix())) <= 1e-14 * frobenius(g.matrix()).max(1.0));
    }
}

#[test]
fn entrywise_oracle_for_damping() {
    let mut rng = common::rng(5);
    let w = common::random_matrix(&mut rng, 3, 2, 0.4);
    let spec = SystemSpec::new("x", vec![1.0, 1.1, 1.2], w.clone(), None, 0.0).unwrap();
    let g = build_damping_matrix(&spec).unwrap();
    for l in 0..3 {
        for m in 0..3 {
            let mut sum = Complex64::new(0.0, 0.0);
            for k in 0..2 {
                sum += w[(l, k)] * w[(m, k)].conj();
            }
            assert!((g.matrix()[(l, m)] - sum * PI).norm() < 1e-14);
        }
    }
}

#[test]
fn overlap_diagnostics_for_spec_examples() {
    // spacing 0.01, couplings 0.05 scale → overlapping
    let gamma = CMatrix::from_row_slice(2, 2, &[c(0.05), c(0.025), c(0.025), c(0.05)]);
    let spec = SystemSpec::from_damping("o", vec![1.0, 1.01], &gamma, 0.0).unwrap();
    let r = overlap_diagnostics(&spec, &build_damping_matrix(&spec).unwrap());
    assert_eq!(r.regime, Regime::Overlapping);
    assert!((r.overlap_ratio.unwrap() - 5.0).abs() < 1e-9);

    let gamma = CMatrix::from_row_slice(2, 2, &[c(1e-4), c(0.0), c(0.0), c(1e-4)]);
    let spec = SystemSpec::from_damping("i", vec![1.0, 1.5], &gamma, 0.0).unwrap();
    assert_eq!(overlap_diagnostics(&spec, &build_damping_matrix(&spec).unwrap()).regime, Regime::Isolated);

    let gamma = CMatrix::from_row_slice(1, 1, &[c(0.5)]);
    let spec = SystemSpec::from_damping("s", vec![1.0], &gamma, 0.0).unwrap();
    assert_eq!(overlap_diagnostics(&spec, &build_damping_matrix(&spec).unwrap()).regime, Regime::MarkovSuspect);
}

#[test]
fn spec_json_survives_file_roundtrip() {
    let spec = common::reference_spec();
    let dir = std::env::temp_dir().join(format!("openres-spec-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("spec.json");
    std::fs::write(&path, spec.to_json_string()).unwrap();
    let back = SystemSpec::load(&path).unwrap();
    assert_eq!(back.spec_hash(), spec.spec_hash());
    std::fs::remove_dir_all(dir).unwrap();
}
