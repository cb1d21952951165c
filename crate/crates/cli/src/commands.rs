//! `train`, `simulate` and `bounds`.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use gpctc_core::bounds::{
    accuracy_for_radius, bound_report, epsilon_range, gains_for_radius, schur_along_trajectory,
    steps_outside, ultimate_bound_radius, BoundParams, BoundReport, InitialError, V0Mode,
};
use gpctc_core::controller::Controller;
use gpctc_core::gp::io::{
    format_hyperparameters, parse_hyperparameters, read_training_csv, write_training_csv,
};
use gpctc_core::gp::MultiOutputGp;
use gpctc_core::sim::{
    compute_metrics_with, generate_training_set, simulate, train_gp, write_metrics_csv,
    write_trajectory_csv, Metrics, Trajectory,
};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const TRAINING_FILE: &str = "training.csv";
pub const HYPER_FILE: &str = "hyperparameters.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMode {
    Radius,
    AccuracyForRadius,
    GainsForRadius,
}

impl FromStr for BoundMode {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "radius" => Ok(BoundMode::Radius),
            "accuracy_for_radius" => Ok(BoundMode::AccuracyForRadius),
            "gains_for_radius" => Ok(BoundMode::GainsForRadius),
            _ => Err(CliError::Usage(format!(
                "unknown bound mode {s:?}; valid modes: radius, accuracy_for_radius, gains_for_radius"
            ))),
        }
    }
}

pub(crate) fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes the training set and optimized hyperparameters into `out_dir`.
pub fn train(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let model = cfg.model()?;
    let est = cfg.estimates()?;
    let set = generate_training_set(
        &model,
        &est,
        &cfg.design()?,
        cfg.training_noise()?,
        cfg.seed,
    )?;
    let trained = train_gp(&set, None, &cfg.optimize_options())?;
    write_training_csv(
        create(&cfg.out_dir, TRAINING_FILE)?,
        &set.inputs,
        &set.targets,
    )?;
    fs::write(
        cfg.out_dir.join(HYPER_FILE),
        format_hyperparameters(&trained.gp.hyperparameters()),
    )?;
    let mut out = format!("{} training pairs\n", set.inputs.ncols());
    for (i, o) in trained.optimized.iter().enumerate() {
        let _ = writeln!(
            out,
            "output {}: log-likelihood {:.6} ({} iterations)",
            i + 1,
            o.log_likelihood,
            o.iterations
        );
    }
    Ok(out)
}

/// Refits the GP from the files written by [`train`].
pub fn load_model(dir: &Path) -> Result<MultiOutputGp, CliError> {
    let read = |name: &str| -> Result<String, CliError> {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|e| {
            CliError::NotFound(format!("{}: {e}; run `gpctc train` first", path.display()))
        })
    };
    let hyper = parse_hyperparameters(&read(HYPER_FILE)?)?;
    let (inputs, targets) = read_training_csv(read(TRAINING_FILE)?.as_bytes())?;
    Ok(MultiOutputGp::fit(inputs, &targets, &hyper)?)
}

fn controller(
    cfg: &ExperimentConfig,
) -> Result<(Controller, Option<Arc<MultiOutputGp>>), CliError> {
    let gains = cfg.gains()?;
    let gp = if gains.kind.uses_gp() {
        Some(Arc::new(load_model(&cfg.out_dir)?))
    } else {
        None
    };
    Ok((
        Controller::from_schedule(cfg.estimates()?, gp.clone(), gains)?,
        gp,
    ))
}

fn run(cfg: &ExperimentConfig, ctrl: &Controller) -> Result<Trajectory, CliError> {
    let t = &cfg.trajectory;
    let q0 = nalgebra::DVector::from_vec(t.q0.clone());
    let qd0 = nalgebra::DVector::from_vec(t.q_dot0.clone());
    Ok(simulate(
        &cfg.model()?,
        ctrl,
        &cfg.reference()?,
        &q0,
        &qd0,
        &cfg.sim_options()?,
    )?)
}

pub fn metrics_table(rows: &[(String, Metrics)]) -> String {
    let mut out = format!("{:<18}", "run");
    for f in Metrics::FIELDS {
        let _ = write!(out, " {f:>18}");
    }
    out.push('\n');
    for (label, m) in rows {
        let _ = write!(out, "{label:<18}");
        for v in m.values() {
            let _ = write!(out, " {v:>18.6}");
        }
        out.push('\n');
    }
    out
}

/// Runs the configured controller; writes `trajectory.csv` and `metrics.csv`.
pub fn simulate_cmd(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let (ctrl, _) = controller(cfg)?;
    let traj = run(cfg, &ctrl)?;
    let metrics = compute_metrics_with(&traj, cfg.l2_norm())?;
    write_trajectory_csv(create(&cfg.out_dir, "trajectory.csv")?, &traj)?;
    let rows = vec![(cfg.controller.kind.clone(), metrics)];
    write_metrics_csv(create(&cfg.out_dir, "metrics.csv")?, &rows)?;
    Ok(metrics_table(&rows))
}

fn initial_error(cfg: &ExperimentConfig) -> Result<InitialError, CliError> {
    let d = cfg.reference()?.at(0.0);
    let q = nalgebra::DVector::from_vec(cfg.trajectory.q0.clone());
    let qd = nalgebra::DVector::from_vec(cfg.trajectory.q_dot0.clone());
    Ok(InitialError {
        e: &q - &d.q,
        e_dot: &qd - &d.q_dot,
        q,
    })
}

/// Radius under the other `V₀` reading, with `ε` re-chosen.
fn alternate_radius(
    cfg: &ExperimentConfig,
    report: &BoundReport,
    v0: f64,
) -> Result<f64, CliError> {
    let settings = cfg.bound_settings()?;
    let mut p = BoundParams {
        v0,
        ..report.params.clone()
    };
    p.eps = settings.epsilon.pick(&epsilon_range(&p)?)?;
    Ok(ultimate_bound_radius(&p)?.r)
}

/// Bound report for `mode`; writes `bounds.csv` and, when enabled, `schur.csv`.
pub fn bounds_cmd(cfg: &ExperimentConfig, mode: BoundMode) -> Result<String, CliError> {
    let gp = load_model(&cfg.out_dir)?;
    let est = cfg.estimates()?;
    let gains = cfg.gains()?;
    let settings = cfg.bound_settings()?;
    let (_, qd_dot_bar) = cfg.reference()?.bounds(cfg.simulation.horizon, 10_001);
    let init = initial_error(cfg)?;
    let report = bound_report(&gp, &est, &gains, qd_dot_bar, Some(&init), &settings)?;

    let mut rows: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| rows.push((k.to_string(), v));
    let p = &report.params;
    for (k, v) in [
        ("h1", p.h1),
        ("h2", p.h2),
        ("k_c", p.k_c),
        ("kp1", p.kp1),
        ("kp2", p.kp2),
        ("kd1", p.kd1),
        ("kd2", p.kd2),
        ("qd_dot_bar", p.qd_dot_bar),
        ("delta", p.delta),
        ("eps2", p.eps2),
        ("rho", p.rho()),
        ("v0", p.v0),
    ] {
        put(k, v.to_string());
    }
    put("v0_mode", settings.v0_mode.as_str().to_string());
    for (j, ((g, b), r)) in report
        .gamma
        .iter()
        .zip(&report.beta)
        .zip(&p.rkhs_norms)
        .enumerate()
    {
        put(&format!("rkhs_norm_{}", j + 1), r.to_string());
        put(&format!("gamma_{}", j + 1), g.to_string());
        put(&format!("beta_{}", j + 1), b.to_string());
    }
    put("delta_bar", p.delta_bar.to_string());
    put("eps_max", report.eps_range.max.to_string());
    put("eps_binding", report.eps_range.binding.to_string());
    put("eps", p.eps.to_string());
    for (k, v) in [
        ("v1", report.radius.v1),
        ("v2", report.radius.v2),
        ("xi", report.radius.xi),
        ("varrho", report.radius.varrho),
        ("r", report.radius.r),
    ] {
        put(k, v.to_string());
    }
    let (r_literal, r_initial) = match settings.v0_mode {
        V0Mode::Literal => {
            let v0 = gpctc_core::bounds::lyapunov_value(
                &init.e,
                &init.e_dot,
                &init.q,
                &est,
                &gains,
                Some(&gp),
                0.0,
            )?;
            (report.radius.r, alternate_radius(cfg, &report, v0)?)
        }
        V0Mode::AtInitialError => (alternate_radius(cfg, &report, 0.0)?, report.radius.r),
    };
    put("r_v0_literal", r_literal.to_string());
    put("r_v0_at_initial_error", r_initial.to_string());

    let mut summary = format!(
        "Delta_bar = {:.6}, eps in (0, {:.6e}) [{}], eps = {:.6e}, r = {:.6}\n",
        p.delta_bar, report.eps_range.max, report.eps_range.binding, p.eps, report.radius.r
    );
    let target = cfg.bounds.target_radius;
    match mode {
        BoundMode::Radius => {}
        BoundMode::AccuracyForRadius => {
            let db = accuracy_for_radius(p, target)?;
            put("target_radius", target.to_string());
            put("max_delta_bar", db.to_string());
            let _ = writeln!(summary, "radius {target} needs Delta_bar <= {db:.6e}");
        }
        BoundMode::GainsForRadius => {
            let [lo, hi] = cfg.bounds.kd1_range;
            let sweep =
                gains_for_radius(p, settings.epsilon, lo, hi, cfg.bounds.kd1_steps, target)?;
            put("target_radius", target.to_string());
            for (kd1, r) in &sweep.points {
                put(&format!("sweep_kd1_{kd1}"), r.to_string());
            }
            match sweep.required_kd1 {
                Some(k) => {
                    put("required_kd1", k.to_string());
                    let _ = writeln!(summary, "radius {target} needs kd1 >= {k}");
                }
                None => {
                    put("required_kd1", "none".into());
                    let _ = writeln!(summary, "no kd1 in [{lo}, {hi}] reaches radius {target}");
                }
            }
        }
    }

    let mut w = csv::Writer::from_writer(create(&cfg.out_dir, "bounds.csv")?);
    w.write_record(["quantity", "value"]).map_err(csv_err)?;
    for (k, v) in &rows {
        w.write_record([k, v]).map_err(csv_err)?;
    }
    w.flush()?;

    if cfg.bounds.schur_stride > 0 {
        let ctrl = Controller::from_schedule(est.clone(), Some(Arc::new(gp)), gains)?;
        let traj = run(cfg, &ctrl)?;
        let verdicts = schur_along_trajectory(&traj, &est, p.eps, cfg.bounds.schur_stride)?;
        let mut w = csv::Writer::from_writer(create(&cfg.out_dir, "schur.csv")?);
        w.write_record([
            "t",
            "negative_definite",
            "m11_max_eig",
            "schur_max_eig",
            "min_eig_m",
            "max_eig_m",
        ])
        .map_err(csv_err)?;
        for (t, v) in &verdicts {
            w.write_record([
                t.to_string(),
                v.negative_definite.to_string(),
                v.m11_max_eig.to_string(),
                v.schur_max_eig.to_string(),
                v.min_eig_m.to_string(),
                v.max_eig_m.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        let definite = verdicts.iter().filter(|(_, v)| v.negative_definite).count();
        let _ = writeln!(
            summary,
            "Schur check negative definite at {definite}/{} states",
            verdicts.len()
        );
        let outside = steps_outside(&traj, &settings.region);
        if outside > 0 {
            let _ = writeln!(
                summary,
                "warning: {outside} of {} steps leave the bound region",
                traj.len()
            );
        }
    }
    Ok(summary)
}

pub(crate) fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}
