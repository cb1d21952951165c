use std::sync::Arc;

use gpctc_core::bounds::{
    beta, epsilon_range, information_gain, information_gain_exact, lyapunov_value, model_error_sup,
    schur_definiteness_check, ultimate_bound_radius, BoundParams,
};
use gpctc_core::controller::{GainKind, GainSchedule};
use gpctc_core::dynamics::{one_dof_model, ElEstimates, ScalarLinear, TwoLinkArm};
use gpctc_core::gp::{Hyperparameters, MultiOutputGp, OptimizeOptions};
use gpctc_core::region::Region;
use gpctc_core::sim::{generate_training_grid, train_gp, NoiseStd};
use gpctc_core::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Constants of the 2-link study: sampled estimate bounds, `K_p = 7 + 400 Var_p`,
/// `K_d = 6 + 400 Var_d` at unit signal variance.
fn two_link_params() -> BoundParams {
    BoundParams {
        h1: 0.0205,
        h2: 2.9464,
        k_c: 0.9378,
        kp1: 7.0,
        kp2: 407.0,
        kd1: 6.0,
        kd2: 406.0,
        qd_dot_bar: 1.0,
        delta: 0.9,
        eps: 0.0,
        eps2: 1.0,
        delta_bar: 0.35,
        rkhs_norms: vec![1.0, 1.0],
        v0: 0.12,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn beta_matches_scripted_evaluation() {
    // mpmath at 50 digits
    let b = beta(2.0, 5.0, 100, 0.9, 2).unwrap();
    assert!(rel(b, 809.039_258_444_952_1) < 1e-12, "{b}");
}

#[test]
fn beta_is_monotone() {
    let base = beta(1.0, 2.0, 50, 0.5, 2).unwrap();
    assert!(beta(1.5, 2.0, 50, 0.5, 2).unwrap() > base);
    assert!(beta(1.0, 3.0, 50, 0.5, 2).unwrap() > base);
    assert!(beta(1.0, 2.0, 80, 0.5, 2).unwrap() > base);
    assert!(beta(1.0, 2.0, 50, 0.7, 2).unwrap() > base);
}

#[test]
fn epsilon_fixed_point_is_tight() {
    let p = two_link_params();
    let range = epsilon_range(&p).unwrap();
    assert_eq!(range.binding, "decay");
    assert!(
        rel(range.max, 0.000_507_115_113_549_014_1) < 1e-12,
        "{}",
        range.max
    );
    let x = p.k_c * p.qd_dot_bar + p.kd2;
    let rho = p.rho();
    let third = 2.0 * p.kd1
        / (2.0 * p.h2
            + 2.0 * p.kp1 * rho * rho / (1.0 + p.eps2)
            + 8.0 / 3.0 * p.k_c * (2.0 * p.v0 / (p.kp1 - range.max * p.h2)).sqrt());
    assert!((range.max - third).abs() < 1e-9 * range.max);
    assert!(rel(rho * x, 58.133_971_428_571_43 * x) < 1e-14);
}

#[test]
fn radius_matches_scripted_evaluation() {
    let mut p = two_link_params();
    p.eps = 0.5 * epsilon_range(&p).unwrap().max;
    let r = ultimate_bound_radius(&p).unwrap();
    assert!(rel(r.v1, 3.000_058_712_216_976_6) < 1e-12, "{}", r.v1);
    assert!(rel(r.v2, 3.5) < 1e-15);
    assert!(
        rel(r.varrho, 0.040_841_408_724_951_02) < 1e-12,
        "{}",
        r.varrho
    );
    assert!(rel(r.xi, 1.453_644_258_351_543_2e-6) < 1e-12, "{}", r.xi);
    assert!(rel(r.r, 1_686.633_241_224_686_3) < 1e-12, "{}", r.r);
}

#[test]
fn radius_is_linear_in_model_error() {
    let mut p = two_link_params();
    p.eps = 0.5 * epsilon_range(&p).unwrap().max;
    let zero = ultimate_bound_radius(&BoundParams {
        delta_bar: 0.0,
        ..p.clone()
    })
    .unwrap();
    assert_eq!(zero.r, 0.0);
    let r1 = ultimate_bound_radius(&p).unwrap().r;
    let r2 = ultimate_bound_radius(&BoundParams {
        delta_bar: 2.0 * p.delta_bar,
        ..p
    })
    .unwrap()
    .r;
    assert!((r2 - 2.0 * r1).abs() <= 1e-12 * r2);
}

#[test]
fn epsilon_matches_closed_form_without_decay_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let p = BoundParams {
            h1: rng.gen_range(0.01..2.0),
            h2: rng.gen_range(2.0..5.0),
            k_c: 0.0,
            kp1: rng.gen_range(1.0..50.0),
            kp2: 60.0,
            kd1: rng.gen_range(1.0..50.0),
            kd2: rng.gen_range(50.0..100.0),
            qd_dot_bar: rng.gen_range(0.0..2.0),
            v0: 0.0,
            ..two_link_params()
        };
        let rho = p.rho();
        let third = 2.0 * p.kd1 / (2.0 * p.h2 + 2.0 * p.kp1 * rho * rho / (1.0 + p.eps2));
        let want = (p.kp1 / p.h2).min(p.h1 / p.h2).min(third);
        assert!(rel(epsilon_range(&p).unwrap().max, want) < 1e-14);
    }
}

#[test]
fn greedy_information_gain_is_near_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ratio = 1.0 - (-1.0f64).exp();
    for (count, budget) in [(8, 3), (10, 4), (12, 5), (12, 2)] {
        for _ in 0..10 {
            let dim = rng.gen_range(1..4);
            let ell = (0..dim).map(|_| rng.gen_range(0.2..1.5)).collect();
            let h = Hyperparameters::new(rng.gen_range(0.5..2.0), ell, 0.1).unwrap();
            let cands: Vec<Vec<f64>> = (0..count)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let sigma = rng.gen_range(0.05..0.5);
            let greedy = information_gain(&h, &cands, sigma, budget).unwrap();
            let exact = information_gain_exact(&h, &cands, sigma, budget).unwrap();
            assert!(greedy >= ratio * exact, "{greedy} < (1-1/e)·{exact}");
            assert!(greedy <= exact + 1e-10);
        }
    }
}

#[test]
fn schur_verdict_agrees_with_eigendecomposition() {
    let arm = Arc::new(TwoLinkArm::new(0.9, 1.1, 0.9, 1.1).unwrap());
    let est = ElEstimates::from_sampling(arm, &[-1.5, -1.5], &[1.5, 1.5], 25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut definite, mut indefinite, mut checked) = (0, 0, 0);
    while checked < 1000 {
        let q = DVector::from_vec(vec![rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)]);
        let qd = DVector::from_vec(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
        let kp = DMatrix::from_diagonal(&DVector::from_fn(2, |_, _| rng.gen_range(1.0..50.0)));
        let kd = DMatrix::from_diagonal(&DVector::from_fn(2, |_, _| rng.gen_range(1.0..50.0)));
        let eps = 10f64.powf(rng.gen_range(-4.0..1.0));
        let v =
            match schur_definiteness_check(&kp, &kd, &est.coriolis(&q, &qd), &est.inertia(&q), eps)
            {
                Ok(v) => v,
                Err(Error::Singular(_)) => continue,
                Err(e) => panic!("{e}"),
            };
        checked += 1;
        if v.max_eig_m.abs() < 1e-9 {
            continue;
        }
        assert_eq!(v.negative_definite, v.max_eig_m < 0.0, "{v:?}");
        assert!(v.min_eig_m <= v.max_eig_m);
        if v.negative_definite {
            definite += 1;
        } else {
            indefinite += 1;
        }
    }
    assert!(
        definite > 50 && indefinite > 50,
        "{definite} / {indefinite}"
    );
}

fn scattered_gp(rng: &mut ChaCha8Rng) -> MultiOutputGp {
    let x = DMatrix::from_fn(6, 60, |_, _| rng.gen_range(-1.0..1.0));
    let y = DMatrix::from_fn(60, 2, |_, _| rng.gen_range(-1.0..1.0));
    let h = Hyperparameters::new(1.0, vec![0.8; 6], 0.1).unwrap();
    MultiOutputGp::fit(x, &y, &[h.clone(), h]).unwrap()
}

#[test]
fn lyapunov_is_positive_and_above_its_quadratic_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let arm = Arc::new(TwoLinkArm::new(0.9, 1.1, 0.9, 1.1).unwrap());
    let est = ElEstimates::from_sampling(arm, &[-1.5, -1.5], &[1.5, 1.5], 25).unwrap();
    let gp = scattered_gp(&mut rng);
    let gains = GainSchedule::diagonal(GainKind::GprVariable, 2, 7.0, 400.0, 6.0, 400.0).unwrap();
    let g = gains.bounds(&gp.signal_vars());
    let params = BoundParams {
        h1: est.h1,
        h2: est.h2,
        k_c: est.k_c,
        kp1: g.kp1,
        kp2: g.kp2,
        kd1: g.kd1,
        kd2: g.kd2,
        ..two_link_params()
    };
    let eps_max = epsilon_range(&params).unwrap().max;
    let zero = DVector::zeros(2);
    for _ in 0..1000 {
        let q = DVector::from_fn(2, |_, _| rng.gen_range(-1.4..1.4));
        let e = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
        let ed = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let eps = rng.gen_range(0.0..1.0) * eps_max;
        let v = lyapunov_value(&e, &ed, &q, &est, &gains, Some(&gp), eps).unwrap();
        let lower = 0.5 * est.h1 * ed.norm_squared() + 0.5 * g.kp1 * e.norm_squared()
            - 0.5 * eps * est.h2 * (ed.norm_squared() + e.norm_squared());
        assert!(v > 0.0);
        assert!(v >= lower - 1e-9, "{v} < {lower}");
    }
    assert_eq!(
        lyapunov_value(&zero, &zero, &zero, &est, &gains, Some(&gp), 0.5 * eps_max).unwrap(),
        0.0
    );
}

#[test]
fn lyapunov_quadrature_matches_constant_gain_closed_form() {
    // zero variance scale: the integral must reduce to ½eᵀK_pe through the quadrature path
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let arm = Arc::new(TwoLinkArm::new(1.0, 1.0, 1.0, 1.0).unwrap());
    let est = ElEstimates::from_sampling(arm, &[-1.5, -1.5], &[1.5, 1.5], 25).unwrap();
    let gp = scattered_gp(&mut rng);
    let variable = GainSchedule::diagonal(GainKind::GprVariable, 2, 7.0, 1e-300, 6.0, 0.0).unwrap();
    let constant = GainSchedule::diagonal(GainKind::GprStatic, 2, 7.0, 0.0, 6.0, 0.0).unwrap();
    for _ in 0..100 {
        let q = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let e = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let ed = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let a = lyapunov_value(&e, &ed, &q, &est, &variable, Some(&gp), 1e-3).unwrap();
        let b = lyapunov_value(&e, &ed, &q, &est, &constant, Some(&gp), 1e-3).unwrap();
        let h = est.inertia(&q);
        let closed = 0.5 * ed.dot(&(&h * &ed)) + 3.5 * e.norm_squared() + 1e-3 * e.dot(&(&h * &ed));
        assert!((a - closed).abs() < 1e-9);
        assert!((b - closed).abs() < 1e-9);
    }
}

#[test]
fn lyapunov_variance_integral_matches_dense_trapezoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let arm = Arc::new(TwoLinkArm::new(1.0, 1.0, 1.0, 1.0).unwrap());
    let est = ElEstimates::from_sampling(arm, &[-1.5, -1.5], &[1.5, 1.5], 25).unwrap();
    let gp = scattered_gp(&mut rng);
    let gains = GainSchedule::diagonal(GainKind::GprVariable, 2, 7.0, 40.0, 6.0, 40.0).unwrap();
    let subsets = gpctc_core::controller::VarianceSubsets::new(2).unwrap();
    let q = DVector::from_vec(vec![0.4, -0.3]);
    let e = DVector::from_vec(vec![0.6, -0.8]);
    let zero = DVector::zeros(2);
    let v = lyapunov_value(&e, &zero, &q, &est, &gains, Some(&gp), 0.0).unwrap();
    let mut want = 3.5 * e.norm_squared();
    for i in 0..2 {
        let qd = q[i] - e[i];
        let steps = 20000;
        let f = |z: f64| {
            z * gp
                .marginal_variance_component(&subsets.joint_position[i], i, &[qd + z])
                .unwrap()
        };
        let hstep = e[i] / steps as f64;
        let mut s = 0.5 * (f(0.0) + f(e[i]));
        for k in 1..steps {
            s += f(k as f64 * hstep);
        }
        want += 40.0 * s * hstep;
    }
    assert!((v - want).abs() < 1e-7, "{v} vs {want}");
}

#[test]
fn model_error_sup_is_stable_under_grid_refinement() {
    let grid = Region::uniform(vec![0.0, -1.0, -1.0], vec![0.0, 1.0, 1.0], 21).unwrap();
    let model = one_dof_model(1.1);
    let est = ElEstimates::new(Arc::new(ScalarLinear::unit()), 1.0, 1.0, 1.0).unwrap();
    let set = generate_training_grid(&model, &est, &grid, NoiseStd::uniform(0.04), 4).unwrap();
    let gp = train_gp(&set, None, &OptimizeOptions::default())
        .unwrap()
        .gp;
    let omega = Region::new(vec![0.0, -1.0, -1.0], vec![0.0, 1.0, 1.0], vec![1, 15, 15]).unwrap();
    let coarse = model_error_sup(&gp, &[1.0], &omega).unwrap();
    let fine = model_error_sup(
        &gp,
        &[1.0],
        &omega.with_resolution(vec![1, 29, 29]).unwrap(),
    )
    .unwrap();
    assert!(rel(coarse, fine) < 0.05, "{coarse} vs {fine}");
}

#[test]
fn model_error_sup_without_informative_data_is_prior() {
    let h = Hyperparameters::new(0.8, vec![0.3; 3], 0.05).unwrap();
    let far = DMatrix::from_element(3, 1, 1e3);
    let gp = MultiOutputGp::fit(far, &DMatrix::zeros(1, 1), &[h]).unwrap();
    let omega = Region::uniform(vec![-1.0; 3], vec![1.0; 3], 5).unwrap();
    let d = model_error_sup(&gp, &[3.0], &omega).unwrap();
    assert!(rel(d, 1.05 * 3.0 * 0.8) < 1e-12);
}
