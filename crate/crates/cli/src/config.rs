//! Experiment configuration, read from and written to TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use gpctc_core::bounds::{BoundSettings, EpsilonPolicy, V0Mode};
use gpctc_core::controller::{DesiredTrajectory, GainKind, GainSchedule};
use gpctc_core::dynamics::{
    one_dof_model, AccelerationCoupling, ElEstimates, ElModel, RigidBody, ScalarLinear, TwoLinkArm,
    UnknownDynamics,
};
use gpctc_core::gp::OptimizeOptions;
use gpctc_core::region::Region;
use gpctc_core::sim::{L2Norm, NoiseStd, SimOptions, TrainingDesign};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    OneDof,
    TwoLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownName {
    None,
    OneDof,
    TwoLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    #[default]
    Implicit,
    StateOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSpec {
    /// `[m1, m2, l1, l2]` for `two_link`, `[inertia, damping, stiffness]` for `one_dof`.
    pub params: Vec<f64>,
    /// Explicit `h₁, h₂, k_C`; sampled over the box below when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_c: Option<f64>,
    #[serde(default)]
    pub sample_lower: Vec<f64>,
    #[serde(default)]
    pub sample_upper: Vec<f64>,
    #[serde(default = "default_sample_resolution")]
    pub sample_resolution: usize,
}

fn default_sample_resolution() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: SystemName,
    /// `[m1, m2, l1, l2]`; unused for `one_dof`.
    #[serde(default)]
    pub params: Vec<f64>,
    /// Offset of the scalar benchmark force.
    #[serde(default)]
    pub c: f64,
    pub unknown: UnknownName,
    #[serde(default)]
    pub coupling: Coupling,
    pub estimate: EstimateSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Grid,
    Lattice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub design: DesignKind,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Points per axis for `grid`.
    #[serde(default)]
    pub resolution: Vec<usize>,
    /// Point count for `lattice`.
    #[serde(default)]
    pub count: usize,
    /// Measurement noise std, one value or `[q̈, q̇, q]`.
    pub noise: Vec<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub restarts: usize,
    #[serde(default)]
    pub tie_lengthscales: bool,
    #[serde(default)]
    pub fixed_lengthscales: Vec<usize>,
}

fn default_max_iters() -> usize {
    OptimizeOptions::default().max_iters
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub kind: String,
    pub kp: f64,
    pub kd: f64,
    #[serde(default)]
    pub kp_scale: f64,
    #[serde(default)]
    pub kd_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub amplitude: Vec<f64>,
    pub frequency: Vec<f64>,
    pub phase: Vec<f64>,
    pub offset: Vec<f64>,
    pub q0: Vec<f64>,
    pub q_dot0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub horizon: f64,
    pub dt: f64,
    pub noise: Vec<f64>,
    #[serde(default)]
    pub zero_order_hold: bool,
    /// Unweighted sum sampled at this interval instead of the `dt`-weighted integral.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2_sample_interval: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub delta: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
    #[serde(default = "default_eps_fraction")]
    pub epsilon_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_eps2")]
    pub eps2: f64,
    #[serde(default = "default_v0_mode")]
    pub v0_mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rkhs_norms: Option<Vec<f64>>,
    #[serde(default = "default_gamma_candidates")]
    pub gamma_candidates: usize,
    #[serde(default = "default_target_radius")]
    pub target_radius: f64,
    /// `[lo, hi]` of the `k_{d1}` sweep.
    #[serde(default = "default_kd1_range")]
    pub kd1_range: [f64; 2],
    #[serde(default = "default_kd1_steps")]
    pub kd1_steps: usize,
    /// Steps between Schur checks along the simulated run; 0 disables them.
    #[serde(default = "default_schur_stride")]
    pub schur_stride: usize,
    #[serde(default = "default_coverage_samples")]
    pub coverage_samples: usize,
}

fn default_eps_fraction() -> f64 {
    gpctc_core::bounds::DEFAULT_EPSILON_FRACTION
}
fn default_eps2() -> f64 {
    gpctc_core::bounds::DEFAULT_EPSILON2
}
fn default_v0_mode() -> String {
    V0Mode::default().as_str().to_string()
}
fn default_gamma_candidates() -> usize {
    gpctc_core::bounds::DEFAULT_GAMMA_CANDIDATES
}
fn default_target_radius() -> f64 {
    1.0
}
fn default_kd1_range() -> [f64; 2] {
    [1.0, 100.0]
}
fn default_kd1_steps() -> usize {
    100
}
fn default_schur_stride() -> usize {
    100
}
fn default_coverage_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproduceSpec {
    /// Comparison controller: classic CTC in both studies.
    pub baseline: ControllerSpec,
    /// Randomized systems in the scalar study.
    #[serde(default = "default_n_systems")]
    pub n_systems: usize,
}

fn default_n_systems() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub system: SystemSpec,
    pub training: TrainingSpec,
    pub controller: ControllerSpec,
    pub trajectory: TrajectorySpec,
    pub simulation: SimulationSpec,
    pub bounds: BoundsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reproduce: Option<ReproduceSpec>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn noise(v: &[f64], field: &str) -> Result<NoiseStd, CliError> {
    let n = match v {
        [s] => NoiseStd::uniform(*s),
        [a, b, c] => NoiseStd {
            q_ddot: *a,
            q_dot: *b,
            q: *c,
        },
        _ => {
            return Err(config_err(format!(
                "{field}: expected one value or three, got {}",
                v.len()
            )))
        }
    };
    n.validate()
        .map_err(|e| config_err(format!("{field}: {e}")))?;
    Ok(n)
}

fn arm(p: &[f64], field: &str) -> Result<TwoLinkArm, CliError> {
    match p {
        [m1, m2, l1, l2] => {
            TwoLinkArm::new(*m1, *m2, *l1, *l2).map_err(|e| config_err(format!("{field}: {e}")))
        }
        _ => Err(config_err(format!(
            "{field}: two_link needs [m1, m2, l1, l2]"
        ))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::NotFound(format!("config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Builds every derived object once so that errors surface at load time.
    pub fn validate(&self) -> Result<(), CliError> {
        let n = self.dim();
        self.model()?;
        self.estimates()?;
        self.reference()?;
        self.design()?;
        self.gains()?;
        self.sim_options()?;
        self.bound_settings()?;
        if self.trajectory.q0.len() != n || self.trajectory.q_dot0.len() != n {
            return Err(config_err(format!(
                "trajectory.q0 and trajectory.q_dot0 need {n} entries"
            )));
        }
        if self.training.lower.len() != 3 * n {
            return Err(config_err(format!(
                "training: the input space has dimension {}",
                3 * n
            )));
        }
        if let Some(r) = &self.reproduce {
            gain_schedule(&r.baseline, n, "reproduce.baseline")?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self.system.name {
            SystemName::OneDof => 1,
            SystemName::TwoLink => 2,
        }
    }

    pub fn model(&self) -> Result<ElModel, CliError> {
        let s = &self.system;
        let model = match s.name {
            SystemName::OneDof => one_dof_model(s.c),
            SystemName::TwoLink => ElModel::new(
                Arc::new(arm(&s.params, "system.params")?),
                UnknownDynamics::None,
            ),
        };
        let unknown = match (s.unknown, s.name) {
            (UnknownName::None, _) => UnknownDynamics::None,
            (UnknownName::OneDof, SystemName::OneDof) => UnknownDynamics::OneDof { c: s.c },
            (UnknownName::TwoLink, SystemName::TwoLink) => UnknownDynamics::TwoLink,
            _ => return Err(config_err("system.unknown does not match system.name")),
        };
        let coupling = match s.coupling {
            Coupling::Implicit => AccelerationCoupling::Implicit,
            Coupling::StateOnly => AccelerationCoupling::StateOnly,
        };
        Ok(model.with_unknown(unknown).with_coupling(coupling))
    }

    pub fn estimates(&self) -> Result<ElEstimates, CliError> {
        let e = &self.system.estimate;
        let rigid: Arc<dyn RigidBody> = match self.system.name {
            SystemName::TwoLink => Arc::new(arm(&e.params, "system.estimate.params")?),
            SystemName::OneDof => match e.params[..] {
                [inertia, damping, stiffness] => Arc::new(ScalarLinear {
                    inertia,
                    damping,
                    stiffness,
                }),
                _ => {
                    return Err(config_err(
                        "system.estimate.params: one_dof needs [inertia, damping, stiffness]",
                    ))
                }
            },
        };
        let wrap = |r: gpctc_core::Result<ElEstimates>| {
            r.map_err(|err| config_err(format!("system.estimate: {err}")))
        };
        match (e.h1, e.h2, e.k_c) {
            (Some(h1), Some(h2), Some(k_c)) => wrap(ElEstimates::new(rigid, h1, h2, k_c)),
            (None, None, None) => wrap(ElEstimates::from_sampling(
                rigid,
                &e.sample_lower,
                &e.sample_upper,
                e.sample_resolution,
            )),
            _ => Err(config_err(
                "system.estimate: give all of h1, h2, k_c or none",
            )),
        }
    }

    pub fn reference(&self) -> Result<DesiredTrajectory, CliError> {
        let t = &self.trajectory;
        let r = DesiredTrajectory::sinusoid(&t.amplitude, &t.frequency, &t.phase, &t.offset)
            .map_err(|e| config_err(format!("trajectory: {e}")))?;
        if r.dim() != self.dim() {
            return Err(config_err(format!(
                "trajectory: needs {} joints",
                self.dim()
            )));
        }
        Ok(r)
    }

    pub fn design(&self) -> Result<TrainingDesign, CliError> {
        let t = &self.training;
        let wrap = |e: gpctc_core::Error| config_err(format!("training: {e}"));
        Ok(match t.design {
            DesignKind::Grid => TrainingDesign::Grid(
                Region::new(t.lower.clone(), t.upper.clone(), t.resolution.clone())
                    .map_err(wrap)?,
            ),
            DesignKind::Lattice => {
                if t.count == 0 {
                    return Err(config_err("training.count must be positive for a lattice"));
                }
                // the lattice ignores the grid resolution; flat axes still need 1
                let res = t
                    .lower
                    .iter()
                    .zip(&t.upper)
                    .map(|(l, u)| if l == u { 1 } else { 2 })
                    .collect();
                let region = Region::new(t.lower.clone(), t.upper.clone(), res).map_err(wrap)?;
                TrainingDesign::Lattice {
                    region,
                    count: t.count,
                }
            }
        })
    }

    pub fn training_noise(&self) -> Result<NoiseStd, CliError> {
        noise(&self.training.noise, "training.noise")
    }

    pub fn optimize_options(&self) -> OptimizeOptions {
        OptimizeOptions {
            max_iters: self.training.max_iters,
            restarts: self.training.restarts,
            seed: self.seed,
            tie_lengthscales: self.training.tie_lengthscales,
            fixed_lengthscales: self.training.fixed_lengthscales.clone(),
            ..OptimizeOptions::default()
        }
    }

    pub fn gains(&self) -> Result<GainSchedule, CliError> {
        gain_schedule(&self.controller, self.dim(), "controller")
    }

    pub fn sim_options(&self) -> Result<SimOptions, CliError> {
        let s = &self.simulation;
        if !(s.dt > 0.0 && s.horizon >= s.dt) {
            return Err(config_err("simulation: need dt > 0 and horizon >= dt"));
        }
        Ok(SimOptions {
            horizon: s.horizon,
            dt: s.dt,
            noise: noise(&s.noise, "simulation.noise")?,
            seed: self.seed,
            zero_order_hold: s.zero_order_hold,
        })
    }

    pub fn l2_norm(&self) -> L2Norm {
        match self.simulation.l2_sample_interval {
            Some(interval) => L2Norm::Sampled { interval },
            None => L2Norm::Integral,
        }
    }

    pub fn bound_settings(&self) -> Result<BoundSettings, CliError> {
        let b = &self.bounds;
        let region = Region::new(b.lower.clone(), b.upper.clone(), b.resolution.clone())
            .map_err(|e| config_err(format!("bounds: {e}")))?;
        if region.dim() != 3 * self.dim() {
            return Err(config_err(format!(
                "bounds: the region needs dimension {}",
                3 * self.dim()
            )));
        }
        if !(b.delta > 0.0 && b.delta < 1.0) {
            return Err(config_err("bounds.delta must lie in (0, 1)"));
        }
        let v0_mode = b
            .v0_mode
            .parse()
            .map_err(|e: gpctc_core::Error| config_err(format!("bounds.v0_mode: {e}")))?;
        Ok(BoundSettings {
            delta: b.delta,
            region,
            epsilon: match b.epsilon {
                Some(e) => EpsilonPolicy::Fixed(e),
                None => EpsilonPolicy::Fraction(b.epsilon_fraction),
            },
            eps2: b.eps2,
            v0_mode,
            rkhs_norms: b.rkhs_norms.clone(),
            gamma_candidates: b.gamma_candidates,
            seed: self.seed,
        })
    }
}

pub fn gain_schedule(
    spec: &ControllerSpec,
    n: usize,
    field: &str,
) -> Result<GainSchedule, CliError> {
    let kind: GainKind = spec
        .kind
        .parse()
        .map_err(|e: gpctc_core::Error| CliError::Usage(format!("{field}.kind: {e}")))?;
    GainSchedule::diagonal(kind, n, spec.kp, spec.kp_scale, spec.kd, spec.kd_scale)
        .map_err(|e| config_err(format!("{field}: {e}")))
}

pub const TABLE1: &str = include_str!("../configs/table1.toml");
pub const FIG3: &str = include_str!("../configs/fig3.toml");
pub const BOUND_COVERAGE: &str = include_str!("../configs/bound_coverage.toml");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse_and_round_trip() {
        for text in [TABLE1, FIG3, BOUND_COVERAGE] {
            let cfg = ExperimentConfig::parse(text).unwrap();
            let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
            assert_eq!(cfg, again);
        }
    }

    #[test]
    fn unknown_field_is_named() {
        let text = TABLE1.replace("horizon =", "horizn =");
        match ExperimentConfig::parse(&text) {
            Err(CliError::Config(m)) => assert!(m.contains("horizn"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_controller_lists_valid_kinds() {
        let text = TABLE1.replace("kind = \"gpr_variable\"", "kind = \"pid\"");
        match ExperimentConfig::parse(&text) {
            Err(CliError::Usage(m)) => assert!(
                m.contains("classic_static, gpr_static, gpr_variable"),
                "{m}"
            ),
            other => panic!("{other:?}"),
        }
    }
}
