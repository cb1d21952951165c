use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    beta, epsilon_range, information_gain, lyapunov_value, model_error_sup, rkhs_norm_surrogates,
    schur_definiteness_check, ultimate_bound_radius, BoundParams, EpsilonRange, RadiusReport,
    SchurVerdict, V0Mode, DEFAULT_EPSILON2, DEFAULT_EPSILON_FRACTION,
};
use crate::controller::GainSchedule;
use crate::dynamics::ElEstimates;
use crate::error::{Error, Result};
use crate::gp::MultiOutputGp;
use crate::region::Region;
use crate::sim::Trajectory;

/// Uniform region samples added to the training inputs as information-gain candidates.
pub const DEFAULT_GAMMA_CANDIDATES: usize = 2048;

/// How `ε` is chosen inside `(0, ε_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonPolicy {
    Fraction(f64),
    Fixed(f64),
}

impl Default for EpsilonPolicy {
    fn default() -> Self {
        EpsilonPolicy::Fraction(DEFAULT_EPSILON_FRACTION)
    }
}

impl EpsilonPolicy {
    /// `ε` for `range`; errors when it falls outside `(0, ε_max)`.
    pub fn pick(self, range: &EpsilonRange) -> Result<f64> {
        let eps = match self {
            EpsilonPolicy::Fraction(f) => f * range.max,
            EpsilonPolicy::Fixed(e) => e,
        };
        if !(eps > 0.0 && eps < range.max) {
            return Err(Error::Infeasible {
                term: range.binding,
                detail: format!("eps = {eps} outside (0, {})", range.max),
            });
        }
        Ok(eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSettings {
    pub delta: f64,
    /// `Ω`, gridded for `Δ̄`.
    pub region: Region,
    pub epsilon: EpsilonPolicy,
    pub eps2: f64,
    pub v0_mode: V0Mode,
    /// User-supplied `‖τ̃_j‖_k`; posterior-mean norms otherwise.
    pub rkhs_norms: Option<Vec<f64>>,
    pub gamma_candidates: usize,
    pub seed: u64,
}

impl BoundSettings {
    pub fn new(delta: f64, region: Region) -> Self {
        BoundSettings {
            delta,
            region,
            epsilon: EpsilonPolicy::default(),
            eps2: DEFAULT_EPSILON2,
            v0_mode: V0Mode::default(),
            rkhs_norms: None,
            gamma_candidates: DEFAULT_GAMMA_CANDIDATES,
            seed: 0,
        }
    }
}

/// Tracking error and configuration at `t₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialError {
    pub e: DVector<f64>,
    pub e_dot: DVector<f64>,
    pub q: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub params: BoundParams,
    pub eps_range: EpsilonRange,
    pub radius: RadiusReport,
}

/// Greedy `γ_j` per output over the training inputs plus `extra` uniform samples of `region`.
/// The budget is `m + 1`, capped at the candidate count.
pub fn information_gains(
    gp: &MultiOutputGp,
    region: &Region,
    extra: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let x = gp.inputs();
    let mut candidates: Vec<Vec<f64>> = x
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.extend((0..extra).map(|_| region.sample_uniform(&mut rng)));
    let budget = (gp.num_points() + 1).min(candidates.len());
    gp.outputs()
        .iter()
        .map(|o| information_gain(o.hyper(), &candidates, o.hyper().noise_std, budget))
        .collect()
}

/// `γ → β → Δ̄ → ε → r` for one model, gain schedule and reference velocity bound.
pub fn bound_report(
    gp: &MultiOutputGp,
    est: &ElEstimates,
    gains: &GainSchedule,
    qd_dot_bar: f64,
    initial: Option<&InitialError>,
    settings: &BoundSettings,
) -> Result<BoundReport> {
    let n = gp.output_dim();
    let rkhs = match &settings.rkhs_norms {
        Some(v) if v.len() != n => {
            return Err(Error::invalid("one RKHS norm per output is required"))
        }
        Some(v) => v.clone(),
        None => rkhs_norm_surrogates(gp),
    };
    let gamma = information_gains(
        gp,
        &settings.region,
        settings.gamma_candidates,
        settings.seed,
    )?;
    let beta = rkhs
        .iter()
        .zip(&gamma)
        .map(|(r, g)| beta(*r, *g, gp.num_points(), settings.delta, n))
        .collect::<Result<Vec<_>>>()?;
    let delta_bar = model_error_sup(gp, &beta, &settings.region)?;
    let v0 = match (settings.v0_mode, initial) {
        (V0Mode::Literal, _) => 0.0,
        (V0Mode::AtInitialError, Some(i)) => {
            lyapunov_value(&i.e, &i.e_dot, &i.q, est, gains, Some(gp), 0.0)?
        }
        (V0Mode::AtInitialError, None) => {
            return Err(Error::invalid(
                "v0 mode at_initial_error needs the initial state",
            ))
        }
    };
    let g = gains.bounds(&gp.signal_vars());
    let mut params = BoundParams {
        h1: est.h1,
        h2: est.h2,
        k_c: est.k_c,
        kp1: g.kp1,
        kp2: g.kp2,
        kd1: g.kd1,
        kd2: g.kd2,
        qd_dot_bar,
        delta: settings.delta,
        eps: 0.0,
        eps2: settings.eps2,
        delta_bar,
        rkhs_norms: rkhs,
        v0,
    };
    let eps_range = epsilon_range(&params)?;
    params.eps = settings.epsilon.pick(&eps_range)?;
    let radius = ultimate_bound_radius(&params)?;
    Ok(BoundReport {
        gamma,
        beta,
        params,
        eps_range,
        radius,
    })
}

/// Largest `Δ̄` whose radius is `target`; `r` is linear in `Δ̄`.
pub fn accuracy_for_radius(params: &BoundParams, target: f64) -> Result<f64> {
    if !(target >= 0.0 && target.is_finite()) {
        return Err(Error::invalid(format!(
            "target radius must be non-negative, got {target}"
        )));
    }
    let unit = ultimate_bound_radius(&BoundParams {
        delta_bar: 1.0,
        ..params.clone()
    })?;
    Ok(target / unit.r)
}

/// Outcome of a `k_{d1}` sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSweep {
    /// `(k_{d1}, r)` per feasible sweep point.
    pub points: Vec<(f64, f64)>,
    /// Smallest swept `k_{d1}` with `r ≤ target`.
    pub required_kd1: Option<f64>,
}

/// Sweeps `k_{d1}` over `[lo, hi]` in `steps` points, shifting `k_{d2}` alongside and
/// re-choosing `ε` per point. Infeasible points are skipped.
pub fn gains_for_radius(
    params: &BoundParams,
    policy: EpsilonPolicy,
    lo: f64,
    hi: f64,
    steps: usize,
    target: f64,
) -> Result<GainSweep> {
    if !(lo > 0.0 && hi >= lo) || steps < 2 {
        return Err(Error::invalid(
            "kd1 sweep needs 0 < lo <= hi and at least two steps",
        ));
    }
    let mut points = Vec::with_capacity(steps);
    for k in 0..steps {
        let kd1 = lo + (hi - lo) * k as f64 / (steps - 1) as f64;
        let mut p = BoundParams {
            kd1,
            kd2: params.kd2 + (kd1 - params.kd1),
            ..params.clone()
        };
        let Ok(range) = epsilon_range(&p) else {
            continue;
        };
        let Ok(eps) = policy.pick(&range) else {
            continue;
        };
        p.eps = eps;
        if let Ok(r) = ultimate_bound_radius(&p) {
            points.push((kd1, r.r));
        }
    }
    let required_kd1 = points.iter().find(|(_, r)| *r <= target).map(|(k, _)| *k);
    Ok(GainSweep {
        points,
        required_kd1,
    })
}

/// Schur verdicts at every `stride`-th step, using the logged gains.
pub fn schur_along_trajectory(
    traj: &Trajectory,
    est: &ElEstimates,
    eps: f64,
    stride: usize,
) -> Result<Vec<(f64, SchurVerdict)>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    (0..traj.len())
        .step_by(stride)
        .map(|k| {
            let q = &traj.q[k];
            let kp = DMatrix::from_diagonal(&traj.kp_diag[k]);
            let kd = DMatrix::from_diagonal(&traj.kd_diag[k]);
            let v = schur_definiteness_check(
                &kp,
                &kd,
                &est.coriolis(q, &traj.q_dot[k]),
                &est.inertia(q),
                eps,
            )?;
            Ok((traj.times[k], v))
        })
        .collect()
}

/// Steps whose noise-free `(q̈, q̇, q)` lies outside `region`.
pub fn steps_outside(traj: &Trajectory, region: &Region) -> usize {
    (0..traj.len())
        .filter(|&k| {
            let p: Vec<f64> = traj.q_ddot[k]
                .iter()
                .chain(traj.q_dot[k].iter())
                .chain(traj.q[k].iter())
                .copied()
                .collect();
            !region.contains(&p)
        })
        .count()
}
