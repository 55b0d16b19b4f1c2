mod common;

use num_complex::Complex64;
use openres::linalg::{self, c, frobenius};
use openres::model::{build_damping_matrix, build_effective_hamiltonian};
use openres::moments::derive_drift;
use openres::resonances::{
    commutator_matrix, decompose, lamprecht_ritsch_coefficients, lamprecht_ritsch_residual, normality_residual,
    petermann_factors, ResonanceDecomposition,
};
use openres::{CMatrix, DampingMatrix, EffectiveHamiltonian, Error, SystemSpec};

fn setup(spec: &SystemSpec) -> (DampingMatrix, EffectiveHamiltonian) {
    let g = build_damping_matrix(spec).unwrap();
    let h = build_effective_hamiltonian(spec, &g).unwrap();
    (g, h)
}

fn from_damping(omega: Vec<f64>, gamma: CMatrix) -> SystemSpec {
    SystemSpec::from_damping("t", omega, &gamma, 0.0).unwrap()
}

fn ones(l: usize, scale: f64) -> CMatrix {
    CMatrix::from_element(l, l, c(scale))
}

/// Roots of the characteristic polynomial, built by Faddeev–LeVerrier and
/// solved by Durand–Kerner.
fn characteristic_roots(h: &CMatrix) -> Vec<Complex64> {
    let n = h.nrows();
    let mut coeffs = vec![c(1.0)];
    let mut mk = CMatrix::zeros(n, n);
    for k in 1..=n {
        mk = h * &mk + CMatrix::identity(n, n) * coeffs[k - 1];
        let ck = -(h * &mk).trace() / c(k as f64);
        coeffs.push(ck);
    }
    let poly = |z: Complex64| coeffs.iter().fold(c(0.0), |acc, &a| acc * z + a);
    let mut roots: Vec<Complex64> = (0..n).map(|k| Complex64::new(0.4, 0.9).powu(k as u32)).collect();
    for _ in 0..500 {
        for i in 0..n {
            let mut denom = c(1.0);
            for j in 0..n {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = poly(roots[i]) / denom;
            roots[i] -= step;
        }
    }
    roots
}

fn mixed_ensemble(seed: u64, count: usize) -> Vec<SystemSpec> {
    let mut rng = common::rng(seed);
    (0..count)
        .map(|k| match k % 3 {
            0 => common::random_spec(&mut rng, 6, 6, 0.0),
            1 => {
                let l = 1 + k % 6;
                let diag = (0..l).map(|j| c(0.01 + 0.02 * j as f64)).collect::<Vec<_>>();
                from_damping(common::frequencies(&mut rng, l), CMatrix::from_diagonal(&diag.into()))
            }
            _ => {
                // equal frequencies: H = ω − iγ commutes with H†
                let l = 2 + k % 5;
                let w = common::random_matrix(&mut rng, l, l, 0.1);
                let gamma = &w * w.adjoint() * c(std::f64::consts::PI);
                from_damping(vec![1.3; l], gamma)
            }
        })
        .collect()
}

#[test]
fn spectrum_matches_characteristic_polynomial() {
    let mut rng = common::rng(1);
    for l in [2, 3] {
        for _ in 0..20 {
            let w = common::random_matrix(&mut rng, l, l, 0.2);
            let spec = SystemSpec::new("p", common::frequencies(&mut rng, l), w, None, 0.0).unwrap();
            let (_, h) = setup(&spec);
            let dec = decompose(&h).unwrap();
            for root in characteristic_roots(h.matrix()) {
                let nearest = dec.omega.iter().map(|w| (w - root).norm()).fold(f64::INFINITY, f64::min);
                assert!(nearest < 1e-10, "root {root} missing, distance {nearest:e}");
            }
        }
    }
}

#[test]
fn decomposition_invariants_hold_on_random_specs() {
    for spec in mixed_ensemble(2, 100) {
        let (g, h) = setup(&spec);
        let dec = decompose(&h).unwrap();
        let scale = linalg::spectral_norm(h.matrix());
        assert!(frobenius(&(dec.reconstruct() - h.matrix())) <= 1e-10 * scale);
        assert!(frobenius(&(&dec.tinv * &dec.t - CMatrix::identity(dec.modes(), dec.modes()))) <= 1e-10);
        assert!(dec.omega.windows(2).all(|p| p[0].re <= p[1].re + 1e-12 * scale));
        assert!(dec.omega.iter().all(|w| w.im <= 1e-12 * scale));
        for k in 0..dec.modes() {
            assert_eq!(dec.a[(k, k)], c(1.0));
            let first = dec.t.column(k).iter().copied().find(|z| z.norm() > 1e-14).unwrap();
            assert!(first.im.abs() < 1e-15 && first.re > 0.0);
        }
        assert!(linalg::hermitian_eigenvalues(&dec.a)[0] > -1e-12);

        let tr_gamma = g.matrix().trace().re;
        let sum: Complex64 = dec.omega.iter().sum();
        let expect = Complex64::new(spec.omega().iter().sum(), -tr_gamma);
        assert!((sum - expect).norm() <= 1e-10 * expect.norm());
        let im_sum: f64 = dec.omega.iter().map(|w| w.im).sum();
        assert!((im_sum + tr_gamma).abs() <= 1e-10 * tr_gamma.max(f64::MIN_POSITIVE));
    }
}

#[test]
fn gram_matrix_is_identity_exactly_for_normal_hamiltonians() {
    let mut normal = 0;
    for spec in mixed_ensemble(3, 100) {
        let (_, h) = setup(&spec);
        let dec = decompose(&h).unwrap();
        let is_normal = normality_residual(&h) < 1e-12;
        let a_is_identity = frobenius(&(&dec.a - CMatrix::identity(dec.modes(), dec.modes()))) < 1e-8;
        assert_eq!(is_normal, a_is_identity, "normality {:e}", normality_residual(&h));
        if is_normal {
            normal += 1;
            assert!(petermann_factors(&dec).iter().all(|k| (k - 1.0).abs() < 1e-10));
        } else {
            assert!(petermann_factors(&dec).iter().all(|&k| k >= 1.0 - 1e-12));
        }
    }
    assert!(normal > 30 && normal < 100);
}

#[test]
fn non_normal_reference_matches_explicit_two_by_two() {
    let (g, h) = setup(&from_damping(vec![1.0, 1.1], ones(2, 0.1)));
    let dec = decompose(&h).unwrap();
    assert!(dec.a[(0, 1)].norm() > 1e-3);
    assert!((dec.a[(0, 1)] - dec.a[(1, 0)].conj()).norm() < 1e-15);

    // explicit eigenvectors (b, λ − a) and the closed-form inverse
    let m = h.matrix();
    let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let disc = ((a - d) * (a - d) * 0.25 + b * b).sqrt();
    // equal real parts here, so the order is by imaginary part
    let mut lambdas = [(a + d) * 0.5 - disc, (a + d) * 0.5 + disc];
    lambdas.sort_by(|x, y| x.im.total_cmp(&y.im));
    let cols: Vec<[Complex64; 2]> = lambdas
        .iter()
        .map(|&l| {
            let v = [b, l - a];
            let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
            [v[0] / n, v[1] / n]
        })
        .collect();
    let det = cols[0][0] * cols[1][1] - cols[1][0] * cols[0][1];
    let inv = [[cols[1][1] / det, -cols[1][0] / det], [-cols[0][1] / det, cols[0][0] / det]];
    let k_oracle: Vec<f64> = (0..2).map(|n| inv[n][0].norm_sqr() + inv[n][1].norm_sqr()).collect();
    let k = petermann_factors(&dec);
    for n in 0..2 {
        assert!((lambdas[n] - dec.omega[n]).norm() < 1e-12);
        assert!((k[n] - k_oracle[n]).abs() < 1e-10 * k_oracle[n]);
        assert!(k[n] > 1.0 + 1e-6);
    }
    assert!(lamprecht_ritsch_residual(&dec, &g) < 1e-10);
}

#[test]
fn lamprecht_ritsch_consistency_on_random_specs() {
    for spec in mixed_ensemble(4, 60) {
        let (g, h) = setup(&spec);
        let dec = decompose(&h).unwrap();
        assert!(lamprecht_ritsch_residual(&dec, &g) < 1e-10);
    }
    let (g, h) = setup(&from_damping(vec![1.0, 1.5], CMatrix::zeros(2, 2)));
    let dec = decompose(&h).unwrap();
    assert_eq!(frobenius(&lamprecht_ritsch_coefficients(&dec)), 0.0);
    assert_eq!(lamprecht_ritsch_residual(&dec, &g), 0.0);
}

#[test]
fn complex_orthogonal_normalization_gives_literal_identity() {
    // for symmetric H the eigenvectors are complex orthogonal, so T' = T (TᵀT)^{-1/2}
    // has inverse T'ᵀ and the identity reads conj(T') C T'ᵀ = 2γ
    let mut rng = common::rng(5);
    for _ in 0..20 {
        let l = 3;
        let w = common::random_matrix(&mut rng, l, l, 0.15).map(|z| c(z.re));
        let spec = SystemSpec::new("sym", common::frequencies(&mut rng, l), w, None, 0.0).unwrap();
        let (g, h) = setup(&spec);
        assert!(linalg::symmetric_deviation(h.matrix()) < 1e-15);
        let dec = decompose(&h).unwrap();
        let gram = dec.t.transpose() * &dec.t;
        let scale: Vec<Complex64> = (0..l).map(|k| gram[(k, k)].sqrt().inv()).collect();
        let t = &dec.t * CMatrix::from_diagonal(&scale.into());
        assert!(frobenius(&(t.transpose() * &t - CMatrix::identity(l, l))) < 1e-10);
        let renorm = ResonanceDecomposition {
            omega: dec.omega.clone(),
            tinv: t.transpose(),
            a: t.adjoint() * &t,
            t,
            condition: dec.condition,
        };
        let cm = lamprecht_ritsch_coefficients(&renorm);
        let literal = renorm.t.map(|z| z.conj()) * cm * renorm.t.transpose();
        assert!(frobenius(&(literal - g.matrix() * c(2.0))) < 1e-10 * g.norm());
    }
}

#[test]
fn petermann_factor_ignores_column_scaling_and_basis_rotation() {
    let mut rng = common::rng(6);
    for _ in 0..20 {
        let spec = common::random_spec(&mut rng, 5, 5, 0.0);
        let (_, h) = setup(&spec);
        let dec = decompose(&h).unwrap();
        let k = petermann_factors(&dec);
        let l = dec.modes();

        let d: Vec<Complex64> = (0..l).map(|_| common::complex_normal(&mut rng) + c(0.1)).collect();
        let dmat = CMatrix::from_diagonal(&d.clone().into());
        let dinv = CMatrix::from_diagonal(&d.iter().map(|z| z.inv()).collect::<Vec<_>>().into());
        let t = &dec.t * dmat;
        let scaled = ResonanceDecomposition {
            omega: dec.omega.clone(),
            a: t.adjoint() * &t,
            tinv: dinv * &dec.tinv,
            t,
            condition: dec.condition,
        };
        assert!(common::max_deviation(&petermann_factors(&scaled), &k) < 1e-10 * k[0].max(1.0));

        let u = common::random_unitary(&mut rng, l);
        let rotated = EffectiveHamiltonian::from_matrix(&u * h.matrix() * u.adjoint()).unwrap();
        let k_rot = petermann_factors(&decompose(&rotated).unwrap());
        assert!(common::max_deviation(&k_rot, &k) < 1e-9 * k.iter().fold(1.0f64, |a, &b| a.max(b)));
    }

    // W → UW is a basis change when all frequencies coincide
    let w = common::random_matrix(&mut rng, 3, 3, 0.1);
    let u = common::random_unitary(&mut rng, 3);
    let base = SystemSpec::new("b", vec![1.0; 3], w.clone(), None, 0.0).unwrap();
    let turned = SystemSpec::new("u", vec![1.0; 3], &u * w, None, 0.0).unwrap();
    let ka = petermann_factors(&decompose(&setup(&base).1).unwrap());
    let kb = petermann_factors(&decompose(&setup(&turned).1).unwrap());
    assert!(common::max_deviation(&ka, &kb) < 1e-10);
}

#[test]
fn petermann_factor_grows_toward_exceptional_point() {
    // ω = [1, 1+δ], γ = 0.1·ones coalesces at δ = 0.2
    let mut last = 1.0;
    for delta in [1.0, 0.6, 0.4, 0.3, 0.25, 0.22, 0.21, 0.205, 0.201] {
        let (_, h) = setup(&from_damping(vec![1.0, 1.0 + delta], ones(2, 0.1)));
        let k = petermann_factors(&decompose(&h).unwrap());
        assert!(k[0] > last, "δ = {delta}: K = {} not above {last}", k[0]);
        assert!((k[0] - k[1]).abs() < 1e-8 * k[0]);
        last = k[0];
    }
    assert!(last > 10.0);
    let (_, h) = setup(&from_damping(vec![1.0, 1.2], ones(2, 0.1)));
    assert!(matches!(decompose(&h), Err(Error::NearDegenerate { first: 0, second: 1, .. })));
}

#[test]
fn resonance_propagator_matches_moment_drift() {
    let mut rng = common::rng(7);
    let mut specs = vec![common::reference_spec()];
    specs.extend((0..10).map(|_| common::strictly_damped_spec(&mut rng, 4, 0.0, 0.02)));
    for spec in specs {
        let (g, h) = setup(&spec);
        let dec = decompose(&h).unwrap();
        let drift = derive_drift(&spec, &g).unwrap();
        let slowest = dec.omega.iter().map(|w| -w.im).fold(f64::INFINITY, f64::min);
        for frac in [0.0, 0.01, 0.1, 0.5, 1.0] {
            let t = frac * 10.0 / slowest;
            let diff = frobenius(&(dec.propagator(t) - drift.propagator(t)));
            assert!(diff < 1e-9, "t = {t}: {diff:e}");
        }
    }
}

/// Truncated Fock-space annihilation operators for `l` modes with `cutoff` levels each.
fn fock_operators(l: usize, cutoff: usize) -> Vec<CMatrix> {
    let dim = cutoff.pow(l as u32);
    (0..l)
        .map(|mode| {
            let stride = cutoff.pow(mode as u32);
            CMatrix::from_fn(dim, dim, |row, col| {
                let n = (col / stride) % cutoff;
                if n > 0 && row + stride == col {
                    c((n as f64).sqrt())
                } else {
                    c(0.0)
                }
            })
        })
        .collect()
}

#[test]
fn commutators_match_explicit_operator_algebra() {
    let mut rng = common::rng(8);
    for l in [2, 3] {
        let spec = SystemSpec::new(
            "ops",
            common::frequencies(&mut rng, l),
            common::random_matrix(&mut rng, l, 2, 0.3),
            None,
            0.0,
        )
        .unwrap();
        let dec = decompose(&setup(&spec).1).unwrap();
        let (a_mat, b_mat) = commutator_matrix(&dec);
        let ops = fock_operators(l, 3);
        let dim = ops[0].nrows();
        let combine =
            |coef: &dyn Fn(usize) -> Complex64| (0..l).fold(CMatrix::zeros(dim, dim), |acc, k| acc + &ops[k] * coef(k));
        let d: Vec<CMatrix> = (0..l).map(|m| combine(&|k| dec.tinv[(m, k)])).collect();
        let e: Vec<CMatrix> = (0..l).map(|n| combine(&|k| dec.t[(k, n)].conj())).collect();
        // the commutators are c-numbers; read them off the vacuum
        let vac = |x: &CMatrix| x[(0, 0)];
        for m in 0..l {
            for n in 0..l {
                let de = &d[m] * e[n].adjoint() - e[n].adjoint() * &d[m];
                let ee = &e[m] * e[n].adjoint() - e[n].adjoint() * &e[m];
                let dd = &d[m] * d[n].adjoint() - d[n].adjoint() * &d[m];
                let delta = if m == n { 1.0 } else { 0.0 };
                assert!((vac(&de) - c(delta)).norm() < 1e-12);
                assert!((vac(&ee) - a_mat[(m, n)]).norm() < 1e-12);
                assert!((vac(&dd) - b_mat[(m, n)]).norm() < 1e-12);
            }
        }
        // e_n† = Σ a† T_{·n}: H acting on one-photon states gives Ω_n e_n†|0⟩
        let h = dec.reconstruct();
        let hop = (0..l).fold(CMatrix::zeros(dim, dim), |acc, x| {
            (0..l).fold(acc, |acc, y| acc + ops[x].adjoint() * &ops[y] * h[(x, y)])
        });
        for (en, &omega) in e.iter().zip(&dec.omega) {
            let state = en.adjoint().column(0).into_owned();
            assert!((&hop * &state - &state * omega).norm() < 1e-12);
        }
    }
}
