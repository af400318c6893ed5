//! Game constructors: hand-computed values and structural invariants.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, RngSeed};
use stackgrad::adversarial::{attacker_closed_form, ridge_fit};
use stackgrad::game::{flatten_rows, unflatten_rows, ALPHA, BETA};
use stackgrad::{quadratic_game, quartic_game, regression_game, RegressionGameSpec, Sense};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(0x6a3e),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn vec_of(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

/// `(X, y, c_d, w)` for a small regression instance.
fn regression_instance() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, f64, Vec<f64>)> {
    (1usize..5, 1usize..4).prop_flat_map(|(k, p)| {
        (
            prop::collection::vec(-2.0f64..2.0, k * p).prop_map(move |v| DMatrix::from_row_slice(k, p, &v)),
            prop::collection::vec(-2.0f64..2.0, k).prop_map(DVector::from_vec),
            0.0f64..5.0,
            prop::collection::vec(-2.0f64..2.0, p),
        )
    })
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn quadratic_follower_is_stationary_at_alpha(n in 1usize..8, seed in vec_of(8)) {
        let g = quadratic_game(n).unwrap();
        let alpha = &seed[..n];
        let eval = g.follower().at_flat(g.point(alpha, alpha).unwrap()).unwrap();
        prop_assert!(eval.gradient(BETA).unwrap().iter().all(|v| *v == 0.0));
        prop_assert_eq!(eval.hessian_block(BETA, BETA).unwrap(), DMatrix::identity(n, n) * -6.0);
    }

    #[test]
    fn quadratic_follower_gradient_points_back_to_alpha(alpha in vec_of(4), beta in vec_of(4)) {
        // the ascent flow d beta = d_beta u_A contracts toward beta* = alpha:
        // <beta - alpha, -d_beta u_A> = 6 |beta - alpha|^2
        let g = quadratic_game(4).unwrap();
        let grad = g.follower().gradient(&[(ALPHA, &alpha), (BETA, &beta)], BETA).unwrap();
        let gap: Vec<f64> = beta.iter().zip(&alpha).map(|(b, a)| b - a).collect();
        let inner: f64 = gap.iter().zip(&grad).map(|(d, g)| -d * g).sum();
        let sq: f64 = gap.iter().map(|d| d * d).sum();
        prop_assert!((inner - 6.0 * sq).abs() <= 1e-9 * (1.0 + sq));
        if sq > 0.0 {
            prop_assert!(inner > 0.0);
        }
    }

    #[test]
    fn regression_follower_is_strictly_convex(
        (x, y, c_d, w) in regression_instance(),
        dirs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 12), 4),
    ) {
        let (k, p) = x.shape();
        let g = regression_game(&RegressionGameSpec::new(x.clone(), y, c_d, 0.5)).unwrap();
        let xbar = flatten_rows(&x);
        let eval = g.follower().at_flat(g.point(&w, &xbar).unwrap()).unwrap();
        for d in &dirs {
            let v = &d[..k * p];
            let vv: f64 = v.iter().map(|a| a * a).sum();
            if vv < 1e-6 {
                continue;
            }
            let hv = eval.hvp(BETA, v).unwrap();
            let rayleigh = v.iter().zip(&hv).map(|(a, b)| a * b).sum::<f64>() / vv;
            prop_assert!(rayleigh >= 2.0 - 1e-9, "Rayleigh quotient {rayleigh}");
        }
    }

    #[test]
    fn closed_form_attack_zeroes_follower_gradient((x, y, c_d, w) in regression_instance()) {
        let g = regression_game(&RegressionGameSpec::new(x.clone(), y, c_d, 0.0)).unwrap();
        let xbar = attacker_closed_form(&x, &DVector::from_vec(w.clone()), c_d);
        let grad = g.follower().gradient(&[(ALPHA, &w), (BETA, &flatten_rows(&xbar))], BETA).unwrap();
        let gn = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(gn <= 1e-8 * (1.0 + x.norm()), "gradient norm {gn:e}");
    }

    #[test]
    fn zero_weights_leave_data_untouched((x, y, c_d, _w) in regression_instance()) {
        let p = x.ncols();
        let g = regression_game(&RegressionGameSpec::new(x.clone(), y, c_d, 0.0)).unwrap();
        let zero = vec![0.0; p];
        let grad = g.follower().gradient(&[(ALPHA, &zero), (BETA, &flatten_rows(&x))], BETA).unwrap();
        prop_assert!(grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn flatten_round_trips((x, _y, _c, _w) in regression_instance()) {
        let (k, p) = x.shape();
        prop_assert_eq!(unflatten_rows(&flatten_rows(&x), k, p), x);
    }
}

#[test]
fn quadratic_values_by_substitution() {
    let g = quadratic_game(1).unwrap();
    assert_eq!(g.evaluate_pair(&[0.0], &[1.0]).unwrap().1, -3.0);
    assert_eq!(g.evaluate_pair(&[0.0], &[0.0]).unwrap(), (0.0, 0.0));
    assert_eq!(g.evaluate_pair(&[-3.5], &[-3.5]).unwrap(), (12.25, 0.0));
    let g2 = quadratic_game(2).unwrap();
    assert_eq!(g2.evaluate_pair(&[1.0, 1.0], &[2.0, 2.0]).unwrap().0, -22.0);
    assert_eq!(g2.evaluate_pair(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), (-2.0, -6.0));
    assert_eq!(g.sense(), Sense::Maximize);
}

#[test]
fn quadratic_equilibrium_is_stationary_for_both_players() {
    // at alpha = -3.5 with beta = beta*(alpha) = alpha:
    // d_beta u_A = 0 and the total derivative -7 - 2 alpha vanishes
    let g = quadratic_game(1).unwrap();
    let at: [(&str, &[f64]); 2] = [(ALPHA, &[-3.5]), (BETA, &[-3.5])];
    assert_eq!(g.follower().gradient(&at, BETA).unwrap(), vec![0.0]);
    let leader = g.leader().at(&at).unwrap();
    let total = leader.gradient(ALPHA).unwrap()[0] + leader.gradient(BETA).unwrap()[0];
    assert_eq!(total, 0.0);
}

#[test]
fn quadratic_gradients_by_hand() {
    let g = quadratic_game(3).unwrap();
    let b = [1.0, -2.0, 0.5];
    assert_eq!(
        g.follower().gradient(&[(ALPHA, &[0.0; 3]), (BETA, &b)], BETA).unwrap(),
        vec![-6.0, 12.0, -3.0]
    );
    assert_eq!(
        g.leader()
            .gradient(&[(ALPHA, &[0.3, 1.0, -9.0]), (BETA, &b)], ALPHA)
            .unwrap(),
        vec![-7.0; 3]
    );
}

#[test]
fn quartic_follower_is_stationary_at_alpha() {
    let g = quartic_game(3).unwrap();
    let a = [0.4, -1.2, 2.0];
    let eval = g.follower().at_flat(g.point(&a, &a).unwrap()).unwrap();
    assert!(eval.gradient(BETA).unwrap().iter().all(|v| v.abs() < 1e-15));
    // curvature grows away from the fixed point
    let far = g.follower().at_flat(g.point(&a, &[2.4, 0.8, 4.0]).unwrap()).unwrap();
    let h_near = eval.hessian_block(BETA, BETA).unwrap();
    let h_far = far.hessian_block(BETA, BETA).unwrap();
    assert!(h_far[(0, 0)] < h_near[(0, 0)]);
}

#[test]
fn regression_values_by_hand() {
    // k=1, p=2, x=(1,1), y=2, w=(1,0), c_d=1, rho=0.5
    let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let y = DVector::from_vec(vec![2.0]);
    let g = regression_game(&RegressionGameSpec::new(x.clone(), y, 1.0, 0.5)).unwrap();
    assert_eq!(g.sense(), Sense::Minimize);
    let (leader, follower) = g.evaluate_pair(&[1.0, 0.0], &[0.5, 1.0]).unwrap();
    // leader: (0.5 - 2)^2 + 0.5 * 1 ; follower: 0.5^2 + 0.5^2
    assert_eq!(leader, 2.25 + 0.5);
    assert_eq!(follower, 0.25 + 0.25);
    // (0.5, 1) is the follower optimum
    let grad = g
        .follower()
        .gradient(&[(ALPHA, &[1.0, 0.0]), (BETA, &[0.5, 1.0])], BETA)
        .unwrap();
    assert!(grad.iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn regression_without_attack_cost_reduces_to_ridge() {
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, -1.1, 1.4, 0.2]);
    let y = DVector::from_vec(vec![0.9, 1.7, -0.8, 1.2]);
    let rho = 0.3;
    let g = regression_game(&RegressionGameSpec::new(x.clone(), y.clone(), 0.0, rho)).unwrap();
    let xf = flatten_rows(&x);
    // c_d = 0: the follower cost is |X - Xbar|^2, zero with zero gradient at Xbar = X
    let w_any = [3.0, -4.0];
    let f = g.follower().at(&[(ALPHA, &w_any), (BETA, &xf)]).unwrap();
    assert_eq!(f.value(), 0.0);
    assert!(f.gradient(BETA).unwrap().iter().all(|v| *v == 0.0));
    // at Xbar = X and the ridge weights the leader value is the ridge objective
    let w = ridge_fit(&x, &y, rho).unwrap();
    let ridge_loss = (&x * &w - &y).norm_squared() + rho * w.norm_squared();
    let (leader, _) = g.evaluate_pair(w.as_slice(), &xf).unwrap();
    assert!((leader - ridge_loss).abs() <= 1e-12 * ridge_loss);
    // and the leader gradient vanishes there
    let grad = g
        .leader()
        .gradient(&[(ALPHA, w.as_slice()), (BETA, &xf)], ALPHA)
        .unwrap();
    assert!(grad.iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn invalid_specs_are_rejected() {
    let x = DMatrix::from_row_slice(1, 1, &[1.0]);
    let y = DVector::from_vec(vec![1.0]);
    let bad = [
        RegressionGameSpec::new(x.clone(), y.clone(), -1.0, 0.0),
        RegressionGameSpec::new(x.clone(), y.clone(), 1.0, -0.1),
        RegressionGameSpec {
            cost_leader: 0.0,
            ..RegressionGameSpec::new(x.clone(), y.clone(), 1.0, 0.0)
        },
        RegressionGameSpec::new(x.clone(), DVector::from_vec(vec![1.0, 2.0]), 1.0, 0.0),
        RegressionGameSpec::new(DMatrix::zeros(0, 1), DVector::zeros(0), 1.0, 0.0),
    ];
    for spec in &bad {
        assert!(regression_game(spec).is_err());
    }
    assert!(quadratic_game(0).is_err());
    assert!(quartic_game(0).is_err());
    let g = quadratic_game(2).unwrap();
    assert!(g.point(&[0.0], &[0.0, 0.0]).is_err());
    assert!(g.evaluate_pair(&[0.0, 0.0], &[0.0]).is_err());
}
