//! Probabilistic model-error bound, Lyapunov function and ultimate-bound radius.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::controller::{GainSchedule, VarianceSubsets};
use crate::dynamics::ElEstimates;
use crate::error::{Error, Result};
use crate::gp::MultiOutputGp;
use crate::region::Region;

mod information;
pub mod quadrature;
mod report;

pub use information::{information_gain, information_gain_exact, log_det_gain, EXACT_LIMIT};
pub use report::{
    accuracy_for_radius, bound_report, gains_for_radius, information_gains, schur_along_trajectory,
    steps_outside, BoundReport, BoundSettings, EpsilonPolicy, GainSweep, InitialError,
    DEFAULT_GAMMA_CANDIDATES,
};

/// Grid-gap allowance applied to the sampled supremum of the bound.
pub const MODEL_ERROR_SAFETY: f64 = 1.05;
/// Absolute tolerance of the Lyapunov quadrature.
pub const LYAPUNOV_TOL: f64 = 1e-9;
/// Fraction of `ε_max` used when no `ε` is configured.
pub const DEFAULT_EPSILON_FRACTION: f64 = 0.5;
pub const DEFAULT_EPSILON2: f64 = 1.0;

const BISECTION_TOL: f64 = 1e-15;

/// How `V₀` in the decay rate is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum V0Mode {
    /// `V(0, 0)`, which is zero.
    #[default]
    Literal,
    /// `V` at the initial tracking error.
    AtInitialError,
}

impl V0Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            V0Mode::Literal => "literal",
            V0Mode::AtInitialError => "at_initial_error",
        }
    }
}

impl std::str::FromStr for V0Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(V0Mode::Literal),
            "at_initial_error" => Ok(V0Mode::AtInitialError),
            _ => Err(Error::invalid(format!(
                "unknown v0 mode {s:?}; valid modes: literal, at_initial_error"
            ))),
        }
    }
}

/// Constants entering the radius of the ultimate bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundParams {
    pub h1: f64,
    pub h2: f64,
    pub k_c: f64,
    pub kp1: f64,
    pub kp2: f64,
    pub kd1: f64,
    pub kd2: f64,
    /// Bound on `‖q̇_d‖`.
    pub qd_dot_bar: f64,
    pub delta: f64,
    pub eps: f64,
    pub eps2: f64,
    pub delta_bar: f64,
    pub rkhs_norms: Vec<f64>,
    pub v0: f64,
}

impl BoundParams {
    /// `ρ = (1 + ε₂)(k_C q̄̇_d + k_{d2}) / (2 k_{p1})`
    pub fn rho(&self) -> f64 {
        (1.0 + self.eps2) * (self.k_c * self.qd_dot_bar + self.kd2) / (2.0 * self.kp1)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("h1", self.h1),
            ("h2", self.h2),
            ("kp1", self.kp1),
            ("kp2", self.kp2),
            ("kd1", self.kd1),
            ("kd2", self.kd2),
            ("eps2", self.eps2),
        ];
        for (term, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Infeasible {
                    term,
                    detail: format!("must be positive, got {v}"),
                });
            }
        }
        let nonneg = [
            ("k_c", self.k_c),
            ("qd_dot_bar", self.qd_dot_bar),
            ("delta_bar", self.delta_bar),
            ("v0", self.v0),
        ];
        for (term, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Infeasible {
                    term,
                    detail: format!("must be non-negative, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// `β_j = sqrt(2‖τ̃_j‖²_k + 300 γ_j ln³((m+1)/(1−δ^{1/n})))`
pub fn beta(rkhs_norm: f64, gamma: f64, m: usize, delta: f64, n: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if m == 0 || n == 0 {
        return Err(Error::invalid("beta needs m >= 1 and n >= 1"));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) || !(rkhs_norm >= 0.0 && rkhs_norm.is_finite()) {
        return Err(Error::invalid(
            "gamma and the RKHS norm must be finite and non-negative",
        ));
    }
    let log = ((m as f64 + 1.0) / (1.0 - delta.powf(1.0 / n as f64))).ln();
    Ok((2.0 * rkhs_norm * rkhs_norm + 300.0 * gamma * log.powi(3)).sqrt())
}

/// Default `‖τ̃_j‖_k` surrogates: RKHS norms of the posterior means.
pub fn rkhs_norm_surrogates(gp: &MultiOutputGp) -> Vec<f64> {
    gp.outputs()
        .iter()
        .map(|o| o.posterior_mean_rkhs_norm())
        .collect()
}

/// `‖β ⊙ sqrt(diag Var(τ̃|p))‖`
pub fn bound_at(gp: &MultiOutputGp, beta: &[f64], p: &[f64]) -> Result<f64> {
    let var = gp.predict_variance(p)?;
    Ok(var
        .iter()
        .zip(beta)
        .map(|(v, b)| (b * v.max(0.0).sqrt()).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// `Δ̄`: the bound's maximum over the region grid, times [`MODEL_ERROR_SAFETY`].
pub fn model_error_sup(gp: &MultiOutputGp, beta: &[f64], region: &Region) -> Result<f64> {
    if region.dim() != gp.input_dim() {
        return Err(Error::invalid(format!(
            "region has dimension {}, the model {}",
            region.dim(),
            gp.input_dim()
        )));
    }
    if beta.len() != gp.output_dim() {
        return Err(Error::invalid("one beta per output is required"));
    }
    let sup = (0..region.cardinality())
        .into_par_iter()
        .map(|i| bound_at(gp, beta, &region.grid_point(i)))
        .try_reduce(|| 0.0, |a: f64, b| Ok(a.max(b)))?;
    Ok(MODEL_ERROR_SAFETY * sup)
}

/// Fraction of `samples` uniform points of `region` where `‖Mean − τ̃‖ ≤ ‖β ⊙ Var^{1/2}‖`.
pub fn empirical_bound_coverage<F>(
    gp: &MultiOutputGp,
    residual: F,
    beta: &[f64],
    region: &Region,
    samples: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> DVector<f64> + Sync,
{
    if samples == 0 {
        return Err(Error::invalid("coverage needs at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..samples)
        .map(|_| region.sample_uniform(&mut rng))
        .collect();
    let hits = points
        .par_iter()
        .map(|p| -> Result<usize> {
            let err = (gp.predict_mean(p)? - residual(p)).norm();
            Ok(usize::from(err <= bound_at(gp, beta, p)?))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(hits as f64 / samples as f64)
}

/// Upper end of the admissible `ε` interval `(0, ε_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonRange {
    pub max: f64,
    /// `kp1/h2`, `h1/h2` or `decay`: the term attaining the minimum.
    pub binding: &'static str,
}

/// `ε_max = min{k_{p1}/h₂, h₁/h₂, ε*}` where `ε*` solves
/// `ε = 2k_{d1} / (2h₂ + ρ(k_C q̄̇_d + k_{d2}) + (8/3)k_C sqrt(2V₀/(k_{p1} − εh₂)))`.
/// `params.eps` is ignored.
pub fn epsilon_range(params: &BoundParams) -> Result<EpsilonRange> {
    params.validate()?;
    let p = params;
    let cap_kp = p.kp1 / p.h2;
    let cap_h = p.h1 / p.h2;
    let base = 2.0 * p.h2 + p.rho() * (p.k_c * p.qd_dot_bar + p.kd2);
    let rhs = |eps: f64| {
        let room = p.kp1 - eps * p.h2;
        if room <= 0.0 {
            return 0.0;
        }
        2.0 * p.kd1 / (base + 8.0 / 3.0 * p.k_c * (2.0 * p.v0 / room).sqrt())
    };
    // ε − rhs(ε) increases from −rhs(0) < 0 and is positive at kp1/h2
    let (mut lo, mut hi) = (0.0, cap_kp);
    if p.k_c * p.v0 == 0.0 {
        lo = rhs(0.0);
        hi = lo;
    } else {
        while hi - lo > BISECTION_TOL * hi.max(1e-300) {
            let mid = 0.5 * (lo + hi);
            if mid < rhs(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let decay = 0.5 * (lo + hi);
    let (max, binding) = [(cap_kp, "kp1/h2"), (cap_h, "h1/h2"), (decay, "decay")]
        .into_iter()
        .fold(
            (f64::INFINITY, ""),
            |acc, t| if t.0 < acc.0 { t } else { acc },
        );
    if !(max > 0.0) {
        return Err(Error::Infeasible {
            term: binding,
            detail: "admissible epsilon interval is empty".into(),
        });
    }
    Ok(EpsilonRange { max, binding })
}

/// Quantities of the ultimate bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusReport {
    pub r: f64,
    pub xi: f64,
    pub varrho: f64,
    pub v1: f64,
    pub v2: f64,
}

pub fn ultimate_bound_radius(params: &BoundParams) -> Result<RadiusReport> {
    params.validate()?;
    let p = params;
    let eps = p.eps;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Infeasible {
            term: "eps",
            detail: format!("must be positive, got {eps}"),
        });
    }
    let v1 = -eps * p.h2 + p.kd1 - eps * p.rho() / 2.0 * (p.k_c * p.qd_dot_bar + p.kd2);
    let v2 = p.kp1 * p.eps2 / (1.0 + p.eps2);
    for (term, v) in [("v1", v1), ("v2", v2)] {
        if !(v > 0.0) {
            return Err(Error::Infeasible {
                term,
                detail: format!("must be positive, got {v}"),
            });
        }
    }
    let room_kp = p.kp1 - eps * p.h2;
    let room_h = p.h1 - eps * p.h2;
    if !(room_kp > 0.0 && room_h > 0.0) {
        return Err(Error::Infeasible {
            term: "eps",
            detail: format!("eps·h2 = {} reaches kp1 or h1", eps * p.h2),
        });
    }
    let varrho = p.delta_bar.powi(2) / v1 + eps * p.delta_bar.powi(2) / v2;
    let decay = v1 - 4.0 / 3.0 * eps * p.k_c * (2.0 * p.v0 / room_kp).sqrt();
    let xi = 2.0 / 3.0 * (eps * v2).min(decay) / (eps * p.h2 + p.kp2).max((1.0 + eps) * p.h2);
    if !(xi > 0.0) {
        return Err(Error::Infeasible {
            term: "xi",
            detail: format!("must be positive, got {xi}"),
        });
    }
    let r = (2.0 * varrho / (xi * room_kp.min(room_h))).sqrt();
    Ok(RadiusReport {
        r,
        xi,
        varrho,
        v1,
        v2,
    })
}

/// `V = ½ėᵀĤė + ∫₀^e zᵀK_p(Var_p(z + q_d))dz + ε eᵀĤė` with `q_d = q − e`.
///
/// Without a model, or for non-variable gains, `K_p` is the constant base.
pub fn lyapunov_value(
    e: &DVector<f64>,
    e_dot: &DVector<f64>,
    q: &DVector<f64>,
    est: &ElEstimates,
    gains: &GainSchedule,
    gp: Option<&MultiOutputGp>,
    eps: f64,
) -> Result<f64> {
    let n = est.dim();
    if e.len() != n || e_dot.len() != n || q.len() != n || gains.dim() != n {
        return Err(Error::invalid("lyapunov_value dimension mismatch"));
    }
    let h = est.inertia(q);
    let kinetic = 0.5 * e_dot.dot(&(&h * e_dot));
    let cross = eps * e.dot(&(&h * e_dot));
    let mut potential = 0.5 * e.dot(&(&gains.kp_base * e));
    if let (true, Some(gp)) = (gains.is_variable() && gains.kp_scale > 0.0, gp) {
        let subsets = VarianceSubsets::new(n)?;
        for i in 0..n {
            let qd = q[i] - e[i];
            let spec = &subsets.joint_position[i];
            let part = quadrature::integrate(
                |z| Ok(z * gp.marginal_variance_component(spec, i, &[qd + z])?),
                0.0,
                e[i],
                LYAPUNOV_TOL / (n as f64 * gains.kp_scale),
            )?;
            potential += gains.kp_scale * part;
        }
    }
    Ok(kinetic + potential + cross)
}

/// Negative definiteness of the `2n × 2n` matrix of the Lyapunov derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchurVerdict {
    /// Verdict of the block test: `M₁₁ ≺ 0` and Schur complement `S ≺ 0`.
    pub negative_definite: bool,
    pub m11_max_eig: f64,
    pub schur_max_eig: f64,
    /// Extreme eigenvalues of the symmetrized `M`, for cross-validation.
    pub min_eig_m: f64,
    pub max_eig_m: f64,
}

/// Block test on `M = [[−K_d + εĤ, (ε/2)(Ĉ − K_d)], [(ε/2)(Ĉᵀ − K_d), −εK_p]]`.
pub fn schur_definiteness_check(
    kp: &DMatrix<f64>,
    kd: &DMatrix<f64>,
    c_hat: &DMatrix<f64>,
    h_hat: &DMatrix<f64>,
    eps: f64,
) -> Result<SchurVerdict> {
    let n = kp.nrows();
    for m in [kp, kd, c_hat, h_hat] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::invalid("schur check needs four n×n matrices"));
        }
    }
    let a = kd - h_hat * eps;
    let a_inv = a.clone().try_inverse().ok_or(Error::Singular("K_d − εĤ"))?;
    if !a_inv.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("K_d − εĤ"));
    }
    let m11 = -&a;
    let s = -kp * eps + (kd - c_hat.transpose()) * &a_inv * (kd - c_hat) * (eps * eps / 4.0);
    let m11_max_eig = sym_extremes(&m11).1;
    let schur_max_eig = sym_extremes(&s).1;

    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&m11);
    m.view_mut((0, n), (n, n))
        .copy_from(&((c_hat - kd) * (eps / 2.0)));
    m.view_mut((n, 0), (n, n))
        .copy_from(&((c_hat.transpose() - kd) * (eps / 2.0)));
    m.view_mut((n, n), (n, n)).copy_from(&(-kp * eps));
    let (min_eig_m, max_eig_m) = sym_extremes(&m);
    Ok(SchurVerdict {
        negative_definite: m11_max_eig < 0.0 && schur_max_eig < 0.0,
        m11_max_eig,
        schur_max_eig,
        min_eig_m,
        max_eig_m,
    })
}

fn sym_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym).eigenvalues;
    (eig.min(), eig.max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::GainKind;
    use crate::dynamics::ScalarLinear;
    use crate::gp::Hyperparameters;
    use std::sync::Arc;

    pub(crate) fn sample_params() -> BoundParams {
        BoundParams {
            h1: 0.5,
            h2: 3.0,
            k_c: 1.2,
            kp1: 7.0,
            kp2: 9.0,
            kd1: 6.0,
            kd2: 9.5,
            qd_dot_bar: 1.0,
            delta: 0.9,
            eps: 0.05,
            eps2: 1.0,
            delta_bar: 0.8,
            rkhs_norms: vec![1.0, 1.0],
            v0: 0.3,
        }
    }

    #[test]
    fn beta_trivial_values() {
        assert!((beta(1.0, 0.0, 10, 0.9, 1).unwrap() - 2.0f64.sqrt()).abs() < 1e-15);
        assert!(
            (beta(2.0, 0.0, 10, 0.9, 1).unwrap() - 2.0 * beta(1.0, 0.0, 10, 0.9, 1).unwrap()).abs()
                < 1e-14
        );
        for d in [0.0, 1.0, -0.2] {
            assert!(beta(1.0, 1.0, 10, d, 1).is_err());
        }
        assert!(beta(1.0, 1.0, 0, 0.5, 1).is_err());
    }

    #[test]
    fn epsilon_closed_form_without_decay_term() {
        let p = BoundParams {
            k_c: 0.0,
            v0: 0.0,
            ..sample_params()
        };
        let third = 2.0 * p.kd1 / (2.0 * p.h2 + 2.0 * p.kp1 * p.rho().powi(2) / (1.0 + p.eps2));
        let want = (p.kp1 / p.h2).min(p.h1 / p.h2).min(third);
        assert!((epsilon_range(&p).unwrap().max - want).abs() < 1e-15);
    }

    #[test]
    fn epsilon_vanishes_with_large_h2() {
        let p = BoundParams {
            h2: 1e12,
            ..sample_params()
        };
        assert!(epsilon_range(&p).unwrap().max < 1e-11);
    }

    #[test]
    fn epsilon_rejects_nonpositive_constants() {
        let p = BoundParams {
            kd1: 0.0,
            ..sample_params()
        };
        match epsilon_range(&p) {
            Err(Error::Infeasible { term, .. }) => assert_eq!(term, "kd1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn radius_zero_and_linear_in_delta_bar() {
        let p = sample_params();
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
        assert!((r2 - 2.0 * r1).abs() < 1e-12 * r2);
    }

    #[test]
    fn radius_reports_infeasible_v1() {
        let p = BoundParams {
            eps: 5.0,
            ..sample_params()
        };
        assert!(matches!(
            ultimate_bound_radius(&p),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn schur_small_epsilon_and_violation() {
        let i = DMatrix::<f64>::identity(2, 2);
        let ten = &i * 10.0;
        let z = DMatrix::zeros(2, 2);
        assert!(
            schur_definiteness_check(&ten, &ten, &z, &i, 1e-8)
                .unwrap()
                .negative_definite
        );
        // K_d = 2I, Ĥ = 1·I, ε = 3: M₁₁ = I
        let v = schur_definiteness_check(&ten, &(&i * 2.0), &z, &i, 3.0).unwrap();
        assert!(!v.negative_definite);
        assert!(v.m11_max_eig > 0.0);
        assert!(schur_definiteness_check(&ten, &(&i * 2.0), &z, &i, 2.0).is_err());
    }

    #[test]
    fn lyapunov_constant_gain_closed_form() {
        let est = ElEstimates::new(Arc::new(ScalarLinear::unit()), 1.0, 1.0, 0.0).unwrap();
        let gains = GainSchedule::diagonal(GainKind::GprStatic, 1, 7.0, 0.0, 6.0, 0.0).unwrap();
        let e = DVector::from_element(1, 0.3);
        let ed = DVector::from_element(1, -0.2);
        let q = DVector::from_element(1, 0.1);
        let v = lyapunov_value(&e, &ed, &q, &est, &gains, None, 0.1).unwrap();
        let want = 0.5 * 0.04 + 0.5 * 7.0 * 0.09 + 0.1 * 0.3 * -0.2;
        assert!((v - want).abs() < 1e-15);
        let zero = DVector::zeros(1);
        assert_eq!(
            lyapunov_value(&zero, &zero, &q, &est, &gains, None, 0.1).unwrap(),
            0.0
        );
    }

    #[test]
    fn lyapunov_variable_gain_uses_prior_variance_without_data() {
        // one far-away training point: Var_p is the prior variance s² near the origin
        let hyper = Hyperparameters::new(0.5, vec![0.1; 3], 0.01).unwrap();
        let x = DMatrix::from_column_slice(3, 1, &[100.0, 100.0, 100.0]);
        let y = DMatrix::from_element(1, 1, 0.0);
        let gp = MultiOutputGp::fit(x, &y, &[hyper]).unwrap();
        let est = ElEstimates::new(Arc::new(ScalarLinear::unit()), 1.0, 1.0, 0.0).unwrap();
        let gains = GainSchedule::diagonal(GainKind::GprVariable, 1, 7.0, 40.0, 6.0, 40.0).unwrap();
        let e = DVector::from_element(1, 0.4);
        let zero = DVector::zeros(1);
        let v = lyapunov_value(
            &e,
            &zero,
            &DVector::from_element(1, 0.2),
            &est,
            &gains,
            Some(&gp),
            0.0,
        )
        .unwrap();
        assert!((v - 0.5 * (7.0 + 40.0 * 0.25) * 0.16).abs() < 1e-9);
    }

    #[test]
    fn coverage_extremes() {
        let hyper = Hyperparameters::new(1.0, vec![0.5], 0.05).unwrap();
        let x = DMatrix::from_fn(1, 9, |_, c| c as f64 / 8.0);
        let y = DMatrix::from_fn(9, 1, |r, _| (3.0 * x[(0, r)]).sin());
        let gp = MultiOutputGp::fit(x, &y, &[hyper]).unwrap();
        let region = Region::new(vec![0.0], vec![1.0], vec![11]).unwrap();
        let truth = |p: &[f64]| DVector::from_element(1, (3.0 * p[0]).sin() + 0.5);
        assert_eq!(
            empirical_bound_coverage(&gp, truth, &[1e3], &region, 200, 1).unwrap(),
            1.0
        );
        assert_eq!(
            empirical_bound_coverage(&gp, truth, &[0.0], &region, 200, 1).unwrap(),
            0.0
        );
    }

    #[test]
    fn model_error_sup_trivial_cases() {
        let hyper = Hyperparameters::new(0.7, vec![0.5], 0.05).unwrap();
        let x = DMatrix::from_element(1, 1, 50.0);
        let gp = MultiOutputGp::fit(x, &DMatrix::zeros(1, 1), &[hyper]).unwrap();
        let region = Region::new(vec![-1.0], vec![1.0], vec![5]).unwrap();
        assert_eq!(model_error_sup(&gp, &[0.0], &region).unwrap(), 0.0);
        let d = model_error_sup(&gp, &[2.0], &region).unwrap();
        assert!((d - MODEL_ERROR_SAFETY * 2.0 * 0.7).abs() < 1e-9);
    }
}
