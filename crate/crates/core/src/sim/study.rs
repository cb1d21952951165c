use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    compute_metrics, generate_training_grid, simulate, state_noise_ratio, train_gp, Metrics,
    NoiseStd, SimOptions,
};
use crate::controller::{Controller, DesiredTrajectory, GainKind, GainSchedule};
use crate::dynamics::{one_dof_model, ElEstimates, ScalarLinear};
use crate::error::{Error, Result};
use crate::gp::OptimizeOptions;
use crate::region::Region;

/// Settings of the randomized scalar study. Arm `a` is the baseline, arm `b`
/// the candidate; reported ratios are `b / a`.
#[derive(Debug, Clone)]
pub struct OneDofStudyConfig {
    pub n_systems: usize,
    pub seed: u64,
    pub grid: Region,
    pub training_noise: NoiseStd,
    pub optimize: OptimizeOptions,
    pub arm_a: GainSchedule,
    pub arm_b: GainSchedule,
    pub horizon: f64,
    pub dt: f64,
    pub noise: NoiseStd,
    pub q0: f64,
    pub q_dot0: f64,
    pub zero_order_hold: bool,
}

impl Default for OneDofStudyConfig {
    fn default() -> Self {
        OneDofStudyConfig {
            n_systems: 30,
            seed: 2019,
            grid: Region::uniform(vec![0.0, -1.0, -1.0], vec![0.0, 1.0, 1.0], 21)
                .expect("static grid"),
            training_noise: NoiseStd::uniform(0.04),
            optimize: OptimizeOptions {
                max_iters: 60,
                ..OptimizeOptions::default()
            },
            arm_a: GainSchedule::diagonal(GainKind::ClassicStatic, 1, 100.0, 0.0, 100.0, 0.0)
                .expect("static gains"),
            arm_b: GainSchedule::diagonal(GainKind::GprVariable, 1, 10.0, 100.0, 10.0, 100.0)
                .expect("static gains"),
            horizon: 2.0 * PI,
            dt: 1e-3,
            noise: NoiseStd::uniform(0.04),
            q0: 0.0,
            q_dot0: 1.0,
            zero_order_hold: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemRecord {
    pub index: usize,
    pub c: f64,
    pub a: Metrics,
    pub b: Metrics,
    /// Ratio of `max ‖[ė, e]‖`.
    pub tracking_ratio: f64,
    /// Ratio of measurement-noise energy over state energy.
    pub inv_snr_ratio: f64,
    /// Ratio of noise-induced state deviation energy over state energy.
    pub state_inv_snr_ratio: f64,
    pub control_ratio: f64,
    /// Ratio of the largest `K_p` over the run.
    pub kp_ratio: f64,
    pub kd_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Five-number summary with linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    Some(Quartiles {
        min: v[0],
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone)]
pub struct StudySummary {
    pub records: Vec<SystemRecord>,
    /// `(index, c, message)` of systems whose pipeline failed.
    pub failures: Vec<(usize, f64, String)>,
    pub kp: Option<Quartiles>,
    pub kd: Option<Quartiles>,
    pub tracking: Option<Quartiles>,
    pub inv_snr: Option<Quartiles>,
    pub state_inv_snr: Option<Quartiles>,
    pub control: Option<Quartiles>,
}

impl StudySummary {
    /// `(name, summary)` in plotting order.
    pub fn quantities(&self) -> [(&'static str, Option<Quartiles>); 6] {
        [
            ("kp", self.kp),
            ("kd", self.kd),
            ("max_tracking_error", self.tracking),
            ("inv_snr", self.inv_snr),
            ("state_inv_snr", self.state_inv_snr),
            ("max_control", self.control),
        ]
    }
}

/// SplitMix64 step, used to derive independent per-system seeds.
fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs both arms on `n_systems` scalar systems with offsets `c ~ U[0, 2π]`.
pub fn randomized_onedof_study(cfg: &OneDofStudyConfig) -> Result<StudySummary> {
    if cfg.arm_a.dim() != 1 || cfg.arm_b.dim() != 1 {
        return Err(Error::invalid("study arms must be scalar gain schedules"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let offsets: Vec<f64> = (0..cfg.n_systems)
        .map(|_| rng.gen_range(0.0..=2.0 * PI))
        .collect();
    let results: Vec<_> = offsets
        .par_iter()
        .enumerate()
        .map(|(i, &c)| (i, c, run_system(cfg, c, derive_seed(cfg.seed, i as u64))))
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (index, c, r) in results {
        match r {
            Ok((a, b)) => records.push(SystemRecord {
                index,
                c,
                tracking_ratio: b.metrics.max_combined_error / a.metrics.max_combined_error,
                inv_snr_ratio: b.metrics.inv_snr / a.metrics.inv_snr,
                state_inv_snr_ratio: b.state_inv_snr / a.state_inv_snr,
                control_ratio: b.metrics.max_u / a.metrics.max_u,
                kp_ratio: b.max_kp / a.max_kp,
                kd_ratio: b.max_kd / a.max_kd,
                a: a.metrics,
                b: b.metrics,
            }),
            Err(e) => failures.push((index, c, e.to_string())),
        }
    }
    let q = |f: fn(&SystemRecord) -> f64| quartiles(&records.iter().map(f).collect::<Vec<_>>());
    Ok(StudySummary {
        kp: q(|r| r.kp_ratio),
        kd: q(|r| r.kd_ratio),
        tracking: q(|r| r.tracking_ratio),
        inv_snr: q(|r| r.inv_snr_ratio),
        state_inv_snr: q(|r| r.state_inv_snr_ratio),
        control: q(|r| r.control_ratio),
        records,
        failures,
    })
}

struct ArmOutcome {
    metrics: Metrics,
    state_inv_snr: f64,
    max_kp: f64,
    max_kd: f64,
}

fn run_system(cfg: &OneDofStudyConfig, c: f64, seed: u64) -> Result<(ArmOutcome, ArmOutcome)> {
    let model = one_dof_model(c);
    let est = ElEstimates::new(Arc::new(ScalarLinear::unit()), 1.0, 1.0, 1.0)?;
    let gp = if cfg.arm_a.kind.uses_gp() || cfg.arm_b.kind.uses_gp() {
        let set = generate_training_grid(&model, &est, &cfg.grid, cfg.training_noise, seed)?;
        let opts = OptimizeOptions {
            seed,
            ..cfg.optimize.clone()
        };
        Some(Arc::new(train_gp(&set, None, &opts)?.gp))
    } else {
        None
    };
    let des = onedof_reference();
    let opts = SimOptions {
        horizon: cfg.horizon,
        dt: cfg.dt,
        noise: cfg.noise,
        seed: seed.wrapping_add(1),
        zero_order_hold: cfg.zero_order_hold,
    };
    let q0 = DVector::from_element(1, cfg.q0);
    let qd0 = DVector::from_element(1, cfg.q_dot0);
    let clean_opts = SimOptions {
        noise: NoiseStd::default(),
        ..opts.clone()
    };
    let run = |gains: &GainSchedule| -> Result<ArmOutcome> {
        let ctrl = Controller::from_schedule(est.clone(), gp.clone(), gains.clone())?;
        let traj = simulate(&model, &ctrl, &des, &q0, &qd0, &opts)?;
        let clean = simulate(&model, &ctrl, &des, &q0, &qd0, &clean_opts)?;
        Ok(ArmOutcome {
            metrics: compute_metrics(&traj)?,
            state_inv_snr: state_noise_ratio(&traj, &clean)?,
            max_kp: traj.kp_norm.iter().copied().fold(0.0, f64::max),
            max_kd: traj.kd_norm.iter().copied().fold(0.0, f64::max),
        })
    };
    Ok((run(&cfg.arm_a)?, run(&cfg.arm_b)?))
}

/// Desired reference of the scalar study, `sin t`.
pub fn onedof_reference() -> DesiredTrajectory {
    DesiredTrajectory::sinusoid(&[1.0], &[1.0], &[0.0], &[0.0]).expect("static reference")
}

/// Desired reference of the two-link study, `[sin t, cos t]`.
pub fn two_link_reference() -> DesiredTrajectory {
    DesiredTrajectory::sinusoid(&[1.0, 1.0], &[1.0, 1.0], &[0.0, FRAC_PI_2], &[0.0, 0.0])
        .expect("static reference")
}
