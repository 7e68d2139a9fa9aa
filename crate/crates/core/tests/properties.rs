use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use redmd::datagen::{random_stable_linear, simulate_linear};
use redmd::dictionary::Dictionary;
use redmd::koopman::{stream_fit, KoopmanModel, KoopmanStream};
use redmd::predictor::{fit_projection, Predictor};
use redmd::spectral::{self, greedy_match_distance, hausdorff_distance};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn pair_data() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
    (1usize..6, 1usize..30).prop_flat_map(|(n, m)| (matrix(n, m), matrix(n, m)))
}

/// `Y_f·Y_pᵀ·(Y_p·Y_pᵀ + δI)⁻¹` through an LU solve.
fn ridge_oracle(yp: &DMatrix<f64>, yf: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    let k = yp.nrows();
    let gram = yp * yp.transpose() + DMatrix::identity(k, k) * delta;
    let inv = gram
        .lu()
        .try_inverse()
        .expect("regularized Gram is invertible");
    yf * yp.transpose() * inv
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stream_matches_ridge_oracle((xp, xf) in pair_data(), log_delta in -2.0f64..1.0) {
        let delta = 10f64.powf(log_delta);
        let dict = Dictionary::linear(xp.nrows()).unwrap();
        let s = stream_fit(&dict, &xp, &xf, delta).unwrap();
        let oracle = ridge_oracle(&xp, &xf, delta);
        let gap = (s.current_operator() - &oracle).norm() / oracle.norm().max(1.0);
        prop_assert!(gap < 1e-9, "gap {}", gap);
        let literal = (s.operator_from_sums() - &oracle).norm() / oracle.norm().max(1.0);
        prop_assert!(literal < 1e-9, "literal gap {}", literal);
    }

    #[test]
    fn stream_state_matches_sums((xp, xf) in pair_data(), log_delta in -2.0f64..1.0) {
        let delta = 10f64.powf(log_delta);
        let k = xp.nrows();
        let dict = Dictionary::linear(k).unwrap();
        let s = stream_fit(&dict, &xp, &xf, delta).unwrap();
        let phi = &xp * xp.transpose() + DMatrix::identity(k, k) * delta;
        let phi_inv = s.phi_inv();
        prop_assert_eq!(phi_inv, &phi_inv.transpose());
        prop_assert!((phi_inv * &phi - DMatrix::identity(k, k)).amax() < 1e-8);
        prop_assert!((s.z() - &xf * xp.transpose()).amax() < 1e-12);
        prop_assert!(phi_inv.clone().cholesky().is_some());
        prop_assert_eq!(s.count(), xp.ncols());
    }

    #[test]
    fn denominators_never_drop_below_one((xp, xf) in pair_data(), log_delta in -3.0f64..1.0) {
        let dict = Dictionary::linear(xp.nrows()).unwrap();
        let mut s = KoopmanStream::new(dict, 10f64.powf(log_delta)).unwrap();
        for (x, y) in xp.column_iter().zip(xf.column_iter()) {
            s.update_slices(x.as_slice(), y.as_slice()).unwrap();
            prop_assert!(s.last_denominator() >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn order_does_not_matter((xp, xf) in pair_data(), shift in 0usize..30) {
        let m = xp.ncols();
        let dict = Dictionary::linear(xp.nrows()).unwrap();
        let a = stream_fit(&dict, &xp, &xf, 0.5).unwrap().current_operator();
        let order: Vec<usize> = (0..m).map(|j| (j + shift) % m).rev().collect();
        let b = stream_fit(&dict, &xp.select_columns(&order), &xf.select_columns(&order), 0.5)
            .unwrap()
            .current_operator();
        prop_assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn eigenpairs_satisfy_definition(k in (1usize..7).prop_flat_map(|n| matrix(n, n))) {
        let spec = spectral::eig_matrix(&k, 0).unwrap();
        let n = k.nrows();
        let kc = k.map(|v| Complex64::new(v, 0.0));
        let scale = k.norm().max(1.0);
        for (j, lambda) in spec.eigenvalues.iter().enumerate() {
            let v = spec.eigenvectors.column(j);
            let residual = (&kc * v - v * *lambda).norm();
            prop_assert!(residual <= 1e-8 * scale, "residual {} for {}", residual, lambda);
        }
        let sum: Complex64 = spec.eigenvalues.iter().sum();
        prop_assert!((sum.re - k.trace()).abs() < 1e-8 * scale * n as f64);
        prop_assert!(sum.im.abs() < 1e-8 * scale * n as f64);
        prop_assert!(spec.eigenvalues.windows(2).all(|w| w[0].norm() >= w[1].norm() - 1e-12));
        for l in &spec.eigenvalues {
            if l.im != 0.0 {
                prop_assert!(spec.eigenvalues.iter().any(|o| (o - l.conj()).norm() < 1e-9 * scale));
            }
        }
    }

    #[test]
    fn continuous_map_inverts_exponential(k in (1usize..6).prop_flat_map(|n| matrix(n, n)), dt in 0.001f64..1.0) {
        let vals = spectral::eigenvalues(&k).unwrap();
        let c = spectral::to_continuous(&vals, dt).unwrap();
        let nonzero: Vec<&Complex64> = vals.iter().filter(|l| l.norm() != 0.0).collect();
        prop_assert_eq!(c.values.len() + c.dropped, vals.len());
        for (mu, l) in c.values.iter().zip(nonzero) {
            prop_assert!(((mu * dt).exp() - l).norm() < 1e-10 * l.norm().max(1.0));
        }
    }

    #[test]
    fn matching_distance_bounds_hausdorff(a in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..8)) {
        let a: Vec<Complex64> = a.into_iter().map(|(r, i)| Complex64::new(r, i)).collect();
        let b: Vec<Complex64> = a.iter().rev().map(|l| l * 0.9).collect();
        let greedy = greedy_match_distance(&a, &b).unwrap();
        prop_assert!(greedy >= hausdorff_distance(&a, &b) - 1e-15);
        prop_assert_eq!(greedy_match_distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(hausdorff_distance(&a, &a), 0.0);
    }

    #[test]
    fn model_json_round_trips_bitwise(k in (1usize..5).prop_flat_map(|n| matrix(n, n)), delta in 1e-9f64..10.0) {
        let n = k.nrows();
        let model = KoopmanModel::new(k, Dictionary::linear(n).unwrap(), 7, delta)
            .unwrap()
            .with_projection(DMatrix::identity(n, n))
            .unwrap()
            .with_train_rows(8);
        let back = KoopmanModel::from_json(&model.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, model);
    }

    #[test]
    fn exact_model_reproduces_linear_trajectory(seed in 0u64..1000, steps in 1usize..60) {
        let sys = random_stable_linear(4, 0.9, seed).unwrap();
        let x0 = DVector::from_fn(4, |i, _| 1.0 - 0.3 * i as f64);
        let traj = simulate_linear(&sys, &x0, steps, 0.0, 0).unwrap();
        let dict = Dictionary::linear(4).unwrap();
        let proj = fit_projection(&dict, &DMatrix::identity(4, 4)).unwrap();
        let model = KoopmanModel::new(sys.a_matrix.clone(), dict, 0, 1.0)
            .unwrap()
            .with_projection(proj.matrix)
            .unwrap();
        let pred = Predictor::new(model).unwrap().predict(&x0, steps).unwrap();
        prop_assert!(pred.overflow_at.is_none());
        prop_assert!((pred.states - traj).amax() < 1e-12);
    }
}
