use std::io::Write;

use super::{csv_err, Trajectory};
use crate::error::{Error, Result};

/// Summary statistics of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// `sqrt(Σ (‖e‖² + ‖ė‖²)·dt)`
    pub l2_error: f64,
    pub max_e: f64,
    pub max_edot: f64,
    pub max_u: f64,
    /// Noise energy over state energy, with state `[q, q̇]`.
    pub inv_snr: f64,
    /// `max ‖[ė, e]‖`
    pub max_combined_error: f64,
}

impl Metrics {
    pub const FIELDS: [&'static str; 6] = [
        "l2_error",
        "max_e",
        "max_edot",
        "max_u",
        "inv_snr",
        "max_combined_error",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.l2_error,
            self.max_e,
            self.max_edot,
            self.max_u,
            self.inv_snr,
            self.max_combined_error,
        ]
    }
}

/// How the L2 row is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum L2Norm {
    /// `sqrt(Σ (‖e‖² + ‖ė‖²)·dt)` over every step.
    #[default]
    Integral,
    /// `sqrt(Σ (‖e‖² + ‖ė‖²))` over steps spaced `interval` seconds apart, unweighted.
    Sampled { interval: f64 },
}

pub fn compute_metrics(traj: &Trajectory) -> Result<Metrics> {
    compute_metrics_with(traj, L2Norm::Integral)
}

pub fn compute_metrics_with(traj: &Trajectory, l2: L2Norm) -> Result<Metrics> {
    if traj.is_empty() {
        return Err(Error::invalid(
            "cannot compute metrics of an empty trajectory",
        ));
    }
    let stride = match l2 {
        L2Norm::Integral => 1,
        L2Norm::Sampled { interval } => {
            if !(interval > 0.0 && interval.is_finite()) {
                return Err(Error::invalid(format!(
                    "L2 sampling interval must be positive, got {interval}"
                )));
            }
            ((interval / traj.dt).round() as usize).max(1)
        }
    };
    let mut sum_sq = 0.0;
    let (mut max_e, mut max_edot, mut max_u, mut max_comb) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut noise, mut state) = (0.0, 0.0);
    for k in 0..traj.len() {
        let e2 = traj.e[k].norm_squared();
        let ed2 = traj.e_dot[k].norm_squared();
        if k % stride == 0 {
            sum_sq += e2 + ed2;
        }
        max_e = max_e.max(e2.sqrt());
        max_edot = max_edot.max(ed2.sqrt());
        max_comb = max_comb.max((e2 + ed2).sqrt());
        max_u = max_u.max(traj.u[k].norm());
        noise += traj.noise_sq[k];
        state += traj.q[k].norm_squared() + traj.q_dot[k].norm_squared();
    }
    Ok(Metrics {
        l2_error: match l2 {
            L2Norm::Integral => (sum_sq * traj.dt).sqrt(),
            L2Norm::Sampled { .. } => sum_sq.sqrt(),
        },
        max_e,
        max_edot,
        max_u,
        inv_snr: if state > 0.0 { noise / state } else { 0.0 },
        max_combined_error: max_comb,
    })
}

/// Energy of the noise-induced state deviation over state energy, with state
/// `[q, q̇]`; `clean` is the same run with measurement noise switched off.
pub fn state_noise_ratio(noisy: &Trajectory, clean: &Trajectory) -> Result<f64> {
    if noisy.len() != clean.len() || noisy.dim() != clean.dim() {
        return Err(Error::invalid("trajectories differ in length or dimension"));
    }
    let (mut dev, mut state) = (0.0, 0.0);
    for k in 0..noisy.len() {
        dev += (&noisy.q[k] - &clean.q[k]).norm_squared()
            + (&noisy.q_dot[k] - &clean.q_dot[k]).norm_squared();
        state += noisy.q[k].norm_squared() + noisy.q_dot[k].norm_squared();
    }
    Ok(if state > 0.0 { dev / state } else { 0.0 })
}

/// Header `label,l2_error,...` followed by one row per labelled run.
pub fn write_metrics_csv<W: Write>(writer: W, rows: &[(String, Metrics)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["label"];
    header.extend(Metrics::FIELDS);
    w.write_record(&header).map_err(csv_err)?;
    for (label, m) in rows {
        let mut row = vec![label.clone()];
        row.extend(m.values().iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
