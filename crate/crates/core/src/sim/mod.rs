//! Closed-loop simulation, training-data generation, metrics and studies.

mod metrics;
mod study;
mod training;

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::controller::{Controller, DesiredTrajectory};
use crate::dynamics::{ElModel, StateTriple};
use crate::error::{Error, Result};

pub use metrics::{
    compute_metrics, compute_metrics_with, state_noise_ratio, write_metrics_csv, L2Norm, Metrics,
};
pub use study::{
    onedof_reference, quartiles, randomized_onedof_study, two_link_reference, OneDofStudyConfig,
    Quartiles, StudySummary, SystemRecord,
};
pub use training::{
    default_initial_hyper, flat_axes, generate_training_grid, generate_training_set,
    lattice_points, train_gp, TrainedGp, TrainingDesign, TrainingSet, FLAT_AXIS_LENGTHSCALE,
};

/// Measurement noise standard deviation per channel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseStd {
    pub q_ddot: f64,
    pub q_dot: f64,
    pub q: f64,
}

impl NoiseStd {
    pub fn uniform(std: f64) -> Self {
        NoiseStd {
            q_ddot: std,
            q_dot: std,
            q: std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.q_ddot, self.q_dot, self.q] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "noise std must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub dt: f64,
    pub noise: NoiseStd,
    pub seed: u64,
    /// Hold the step's first input over all RK4 stages instead of
    /// re-evaluating the law at each stage.
    pub zero_order_hold: bool,
}

impl SimOptions {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Per-step record of a closed-loop run. Entry `k` holds the state at
/// `times[k]` and the input applied over `[times[k], times[k] + dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub q: Vec<DVector<f64>>,
    pub q_dot: Vec<DVector<f64>>,
    pub q_ddot: Vec<DVector<f64>>,
    pub q_d: Vec<DVector<f64>>,
    pub q_dot_d: Vec<DVector<f64>>,
    pub q_ddot_d: Vec<DVector<f64>>,
    pub e: Vec<DVector<f64>>,
    pub e_dot: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub kp_diag: Vec<DVector<f64>>,
    pub kd_diag: Vec<DVector<f64>>,
    pub kp_norm: Vec<f64>,
    pub kd_norm: Vec<f64>,
    /// `tr Var_d` at the measured state.
    pub var_trace: Vec<f64>,
    /// `‖n_q‖² + ‖n_q̇‖²` of the noise drawn at each step.
    pub noise_sq: Vec<f64>,
    pub noise_seed: u64,
}

impl Trajectory {
    fn with_capacity(steps: usize, dt: f64, seed: u64) -> Self {
        Trajectory {
            dt,
            times: Vec::with_capacity(steps),
            q: Vec::with_capacity(steps),
            q_dot: Vec::with_capacity(steps),
            q_ddot: Vec::with_capacity(steps),
            q_d: Vec::with_capacity(steps),
            q_dot_d: Vec::with_capacity(steps),
            q_ddot_d: Vec::with_capacity(steps),
            e: Vec::with_capacity(steps),
            e_dot: Vec::with_capacity(steps),
            u: Vec::with_capacity(steps),
            kp_diag: Vec::with_capacity(steps),
            kd_diag: Vec::with_capacity(steps),
            kp_norm: Vec::with_capacity(steps),
            kd_norm: Vec::with_capacity(steps),
            var_trace: Vec::with_capacity(steps),
            noise_sq: Vec::with_capacity(steps),
            noise_seed: seed,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.q.first().map_or(0, |q| q.len())
    }

    /// Elementwise minimum of the gain diagonals over the run.
    pub fn min_gain_diagonals(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        let fold = |v: &[DVector<f64>]| {
            let first = v.first()?.clone();
            Some(v.iter().fold(first, |acc, d| acc.zip_map(d, f64::min)))
        };
        Some((fold(&self.kp_diag)?, fold(&self.kd_diag)?))
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

/// Fixed-step RK4 closed loop.
///
/// Each step draws noise for `q̈`, `q̇`, `q` (in that order) and holds it over
/// the step. The `q̈` measurement is the previous step's true acceleration plus
/// noise; before the first step it is the unforced acceleration at the initial
/// state. The control law is evaluated at every RK4 stage unless
/// `zero_order_hold` is set.
pub fn simulate(
    model: &ElModel,
    controller: &Controller,
    des: &DesiredTrajectory,
    q0: &DVector<f64>,
    q_dot0: &DVector<f64>,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let n = model.dim();
    if q0.len() != n || q_dot0.len() != n || controller.dim() != n || des.dim() != n {
        return Err(Error::invalid("simulation dimension mismatch"));
    }
    if !(opts.dt.is_finite() && opts.dt > 0.0) || !(opts.horizon >= opts.dt) {
        return Err(Error::invalid(format!(
            "need dt > 0 and horizon >= dt, got dt={}, horizon={}",
            opts.dt, opts.horizon
        )));
    }
    opts.noise.validate()?;

    let dt = opts.dt;
    let steps = opts.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut traj = Trajectory::with_capacity(steps, dt, opts.seed);
    let mut q = q0.clone();
    let mut q_dot = q_dot0.clone();
    let at_step = |step: usize| {
        move |e: Error| Error::SimulationStep {
            step,
            source: Box::new(e),
        }
    };
    let mut prev_acc = model
        .forward_dynamics(&q, &q_dot, &DVector::zeros(n))
        .map_err(at_step(0))?;

    for k in 0..steps {
        let t = k as f64 * dt;
        let n_acc = normal_vec(&mut rng, n, opts.noise.q_ddot);
        let n_vel = normal_vec(&mut rng, n, opts.noise.q_dot);
        let n_pos = normal_vec(&mut rng, n, opts.noise.q);
        let meas = StateTriple {
            q_ddot: &prev_acc + &n_acc,
            q_dot: &q_dot + &n_vel,
            q: &q + &n_pos,
        };
        let d = des.at(t);
        let (u, diag) = controller.control(&meas, &d).map_err(at_step(k))?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(at_step(k)(Error::NonFinite("control input")));
        }

        let acc_meas = &meas.q_ddot;
        let f = |q: &DVector<f64>, v: &DVector<f64>, tau: f64| -> Result<DVector<f64>> {
            if opts.zero_order_hold {
                return model.forward_dynamics(q, v, &u);
            }
            let stage = StateTriple {
                q_ddot: acc_meas.clone(),
                q_dot: v + &n_vel,
                q: q + &n_pos,
            };
            let (us, _) = controller.control(&stage, &des.at(t + tau))?;
            model.forward_dynamics(q, v, &us)
        };
        let a1 = model.forward_dynamics(&q, &q_dot, &u).map_err(at_step(k))?;
        let (q2, v2) = (&q + &q_dot * (dt / 2.0), &q_dot + &a1 * (dt / 2.0));
        let a2 = f(&q2, &v2, dt / 2.0).map_err(at_step(k))?;
        let (q3, v3) = (&q + &v2 * (dt / 2.0), &q_dot + &a2 * (dt / 2.0));
        let a3 = f(&q3, &v3, dt / 2.0).map_err(at_step(k))?;
        let (q4, v4) = (&q + &v3 * dt, &q_dot + &a3 * dt);
        let a4 = f(&q4, &v4, dt).map_err(at_step(k))?;

        traj.times.push(t);
        traj.e.push(&q - &d.q);
        traj.e_dot.push(&q_dot - &d.q_dot);
        traj.q.push(q.clone());
        traj.q_dot.push(q_dot.clone());
        traj.q_ddot.push(a1.clone());
        traj.q_d.push(d.q);
        traj.q_dot_d.push(d.q_dot);
        traj.q_ddot_d.push(d.q_ddot);
        traj.u.push(u.clone());
        traj.kp_norm.push(spectral_norm(&diag.kp));
        traj.kd_norm.push(spectral_norm(&diag.kd));
        traj.kp_diag.push(diag.kp.diagonal());
        traj.kd_diag.push(diag.kd.diagonal());
        traj.var_trace.push(diag.var_d.sum());
        traj.noise_sq
            .push(n_pos.norm_squared() + n_vel.norm_squared());

        q += (&q_dot + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
        q_dot += (&a1 + &a2 * 2.0 + &a3 * 2.0 + &a4) * (dt / 6.0);
        if q.iter().chain(q_dot.iter()).any(|v| !v.is_finite()) {
            return Err(at_step(k)(Error::NonFinite("state")));
        }
        prev_acc = a1;
    }
    Ok(traj)
}

fn spectral_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone().singular_values().max()
}

/// One row per step: time, state, reference, errors, input, gain norms, variance trace.
pub fn write_trajectory_csv<W: Write>(writer: W, traj: &Trajectory) -> Result<()> {
    let n = traj.dim();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    for name in [
        "q", "qdot", "qddot", "q_d", "qdot_d", "qddot_d", "e", "edot", "u", "kp", "kd",
    ] {
        header.extend((1..=n).map(|i| format!("{name}_{i}")));
    }
    header.extend(["kp_norm", "kd_norm", "var_trace"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..traj.len() {
        let mut row = vec![traj.times[k].to_string()];
        for v in [
            &traj.q[k],
            &traj.q_dot[k],
            &traj.q_ddot[k],
            &traj.q_d[k],
            &traj.q_dot_d[k],
            &traj.q_ddot_d[k],
            &traj.e[k],
            &traj.e_dot[k],
            &traj.u[k],
            &traj.kp_diag[k],
            &traj.kd_diag[k],
        ] {
            row.extend(v.iter().map(|x| x.to_string()));
        }
        row.push(traj.kp_norm[k].to_string());
        row.push(traj.kd_norm[k].to_string());
        row.push(traj.var_trace[k].to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}
