//! Computed-torque control with GP compensation and variance-scheduled gains.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dynamics::{ElEstimates, StateTriple};
use crate::error::{Error, Result};
use crate::gp::{MultiOutputGp, SubsetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GainKind {
    ClassicStatic,
    GprStatic,
    GprVariable,
}

impl GainKind {
    pub const ALL: [GainKind; 3] = [
        GainKind::ClassicStatic,
        GainKind::GprStatic,
        GainKind::GprVariable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GainKind::ClassicStatic => "classic_static",
            GainKind::GprStatic => "gpr_static",
            GainKind::GprVariable => "gpr_variable",
        }
    }

    pub fn uses_gp(self) -> bool {
        !matches!(self, GainKind::ClassicStatic)
    }
}

impl fmt::Display for GainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GainKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown controller kind {s:?}; valid kinds: classic_static, gpr_static, gpr_variable"
                ))
            })
    }
}

/// Eigenvalue bounds of the evaluated gains over the admissible variance range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainBounds {
    pub kp1: f64,
    pub kp2: f64,
    pub kd1: f64,
    pub kd2: f64,
}

/// `K_p = K_c + b_p·diag(Var_p)` and `K_d = K_d0 + b_d·diag(Var_d)`.
/// The static kinds ignore the scales.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub kind: GainKind,
    pub kp_base: DMatrix<f64>,
    pub kp_scale: f64,
    pub kd_base: DMatrix<f64>,
    pub kd_scale: f64,
}

impl GainSchedule {
    pub fn new(
        kind: GainKind,
        kp_base: DMatrix<f64>,
        kp_scale: f64,
        kd_base: DMatrix<f64>,
        kd_scale: f64,
    ) -> Result<Self> {
        let n = kp_base.nrows();
        for (name, m) in [("kp_base", &kp_base), ("kd_base", &kd_base)] {
            if !m.is_square() || m.nrows() != n || n == 0 {
                return Err(Error::invalid(format!(
                    "{name} must be a square {n}x{n} matrix"
                )));
            }
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(Error::invalid(format!("{name} must be symmetric")));
            }
            if min_eig(m) <= 0.0 {
                return Err(Error::invalid(format!("{name} must be positive definite")));
            }
        }
        for (name, s) in [("kp_scale", kp_scale), ("kd_scale", kd_scale)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be non-negative, got {s}"
                )));
            }
        }
        Ok(GainSchedule {
            kind,
            kp_base,
            kp_scale,
            kd_base,
            kd_scale,
        })
    }

    /// Scalar diagonal gains `kp·I`, `kd·I` on `n` joints.
    pub fn diagonal(
        kind: GainKind,
        n: usize,
        kp: f64,
        kp_scale: f64,
        kd: f64,
        kd_scale: f64,
    ) -> Result<Self> {
        Self::new(
            kind,
            DMatrix::from_diagonal_element(n, n, kp),
            kp_scale,
            DMatrix::from_diagonal_element(n, n, kd),
            kd_scale,
        )
    }

    pub fn dim(&self) -> usize {
        self.kp_base.nrows()
    }

    pub fn is_variable(&self) -> bool {
        self.kind == GainKind::GprVariable
    }

    pub fn eval_kp(&self, var_p: &DVector<f64>) -> DMatrix<f64> {
        scheduled(&self.kp_base, self.kp_scale, var_p, self.is_variable())
    }

    pub fn eval_kd(&self, var_d: &DVector<f64>) -> DMatrix<f64> {
        scheduled(&self.kd_base, self.kd_scale, var_d, self.is_variable())
    }

    /// `k₁ = λ_min(base)`, `k₂ = λ_max(base) + scale·max signal variance`.
    pub fn bounds(&self, signal_vars: &DVector<f64>) -> GainBounds {
        let top = if self.is_variable() {
            signal_vars.max().max(0.0)
        } else {
            0.0
        };
        GainBounds {
            kp1: min_eig(&self.kp_base),
            kp2: max_eig(&self.kp_base) + self.kp_scale * top,
            kd1: min_eig(&self.kd_base),
            kd2: max_eig(&self.kd_base) + self.kd_scale * top,
        }
    }
}

fn scheduled(base: &DMatrix<f64>, scale: f64, var: &DVector<f64>, variable: bool) -> DMatrix<f64> {
    let mut k = base.clone();
    if variable {
        for i in 0..k.nrows() {
            k[(i, i)] += scale * var[i];
        }
    }
    k
}

pub(crate) fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

pub(crate) fn max_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max()
}

type TimeFn = dyn Fn(f64) -> DVector<f64> + Send + Sync;

/// Reference `q_d(t)` with its first two derivatives.
#[derive(Clone)]
pub struct DesiredTrajectory {
    dim: usize,
    q: Arc<TimeFn>,
    q_dot: Arc<TimeFn>,
    q_ddot: Arc<TimeFn>,
}

impl fmt::Debug for DesiredTrajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DesiredTrajectory")
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

/// Desired state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredState {
    pub q: DVector<f64>,
    pub q_dot: DVector<f64>,
    pub q_ddot: DVector<f64>,
}

impl DesiredTrajectory {
    pub fn new(
        dim: usize,
        q: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        q_dot: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        q_ddot: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        DesiredTrajectory {
            dim,
            q: Arc::new(q),
            q_dot: Arc::new(q_dot),
            q_ddot: Arc::new(q_ddot),
        }
    }

    /// `q_{d,i}(t) = a_i sin(ω_i t + φ_i) + o_i`
    pub fn sinusoid(
        amplitude: &[f64],
        frequency: &[f64],
        phase: &[f64],
        offset: &[f64],
    ) -> Result<Self> {
        let n = amplitude.len();
        if n == 0 || frequency.len() != n || phase.len() != n || offset.len() != n {
            return Err(Error::invalid(
                "sinusoid parameter vectors must share a nonzero length",
            ));
        }
        let a = amplitude.to_vec();
        let w = frequency.to_vec();
        let ph = phase.to_vec();
        let o = offset.to_vec();
        let (a1, w1, ph1) = (a.clone(), w.clone(), ph.clone());
        let (a2, w2, ph2) = (a.clone(), w.clone(), ph.clone());
        Ok(Self::new(
            n,
            move |t| DVector::from_fn(n, |i, _| a[i] * (w[i] * t + ph[i]).sin() + o[i]),
            move |t| DVector::from_fn(n, |i, _| a1[i] * w1[i] * (w1[i] * t + ph1[i]).cos()),
            move |t| {
                DVector::from_fn(n, |i, _| {
                    -a2[i] * w2[i] * w2[i] * (w2[i] * t + ph2[i]).sin()
                })
            },
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, t: f64) -> DesiredState {
        DesiredState {
            q: (self.q)(t),
            q_dot: (self.q_dot)(t),
            q_ddot: (self.q_ddot)(t),
        }
    }

    /// `(q̄_d, q̄̇_d)`: largest `‖q_d‖` and `‖q̇_d‖` on `samples` evenly spaced times in `[0, horizon]`.
    pub fn bounds(&self, horizon: f64, samples: usize) -> (f64, f64) {
        let samples = samples.max(2);
        (0..samples).fold((0.0f64, 0.0f64), |(bq, bv), k| {
            let t = horizon * k as f64 / (samples - 1) as f64;
            (bq.max((self.q)(t).norm()), bv.max((self.q_dot)(t).norm()))
        })
    }
}

/// Gains and GP terms evaluated for one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDiagnostics {
    pub kp: DMatrix<f64>,
    pub kd: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub var_p: DVector<f64>,
    pub var_d: DVector<f64>,
}

/// Subsets for `Var_d` (velocity and position coordinates) and the per-joint `Var_p`.
#[derive(Debug, Clone)]
pub struct VarianceSubsets {
    pub velocity_position: SubsetSpec,
    pub joint_position: Vec<SubsetSpec>,
}

impl VarianceSubsets {
    pub fn new(n: usize) -> Result<Self> {
        let dim = 3 * n;
        Ok(VarianceSubsets {
            velocity_position: SubsetSpec::range(n, dim, dim)?,
            joint_position: (0..n)
                .map(|i| SubsetSpec::new(vec![2 * n + i], dim))
                .collect::<Result<_>>()?,
        })
    }
}

/// `Var_d(q̇, q)` diagonal.
pub fn var_d(
    gp: &MultiOutputGp,
    subsets: &VarianceSubsets,
    p: &StateTriple,
) -> Result<DVector<f64>> {
    let x1: Vec<f64> = p.q_dot.iter().chain(p.q.iter()).copied().collect();
    gp.marginal_variance(&subsets.velocity_position, &x1)
}

/// `Var_p(q)` diagonal; entry `i` is output `i` conditioned on `q_i` alone.
pub fn var_p(
    gp: &MultiOutputGp,
    subsets: &VarianceSubsets,
    q: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = q.len();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        out[i] = gp.marginal_variance_component(&subsets.joint_position[i], i, &[q[i]])?;
    }
    Ok(out)
}

fn check_dims(est: &ElEstimates, meas: &StateTriple, des: &DesiredState) -> Result<()> {
    let n = est.dim();
    if meas.dim() != n || des.q.len() != n {
        return Err(Error::invalid(format!(
            "controller dimension mismatch: model {n}, measurement {}, reference {}",
            meas.dim(),
            des.q.len()
        )));
    }
    Ok(())
}

fn feed_forward(est: &ElEstimates, meas: &StateTriple, des: &DesiredState) -> DVector<f64> {
    est.inertia(&meas.q) * &des.q_ddot
        + est.coriolis(&meas.q, &meas.q_dot) * &des.q_dot
        + est.gravity(&meas.q)
}

/// `u = Ĥq̈_d + Ĉq̇_d + ĝ − K_d ė − K_p e` at the measured state.
pub fn classic_ctc_control(
    est: &ElEstimates,
    kp: &DMatrix<f64>,
    kd: &DMatrix<f64>,
    meas: &StateTriple,
    des: &DesiredState,
) -> Result<DVector<f64>> {
    check_dims(est, meas, des)?;
    let e = &meas.q - &des.q;
    let e_dot = &meas.q_dot - &des.q_dot;
    Ok(feed_forward(est, meas, des) - kd * e_dot - kp * e)
}

/// Classic CTC plus the GP mean, with gains scheduled by the marginal variances.
pub fn ctc_gpr_control(
    est: &ElEstimates,
    gp: &MultiOutputGp,
    gains: &GainSchedule,
    subsets: &VarianceSubsets,
    meas: &StateTriple,
    des: &DesiredState,
) -> Result<(DVector<f64>, ControlDiagnostics)> {
    check_dims(est, meas, des)?;
    let n = est.dim();
    if gp.input_dim() != 3 * n || gp.output_dim() != n || gains.dim() != n {
        return Err(Error::invalid(
            "GP or gain dimensions do not match the model",
        ));
    }
    let mean = gp.predict_mean(&meas.stacked())?;
    let (vp, vd) = if gains.is_variable() {
        (var_p(gp, subsets, &meas.q)?, var_d(gp, subsets, meas)?)
    } else {
        (DVector::zeros(n), DVector::zeros(n))
    };
    let kp = gains.eval_kp(&vp);
    let kd = gains.eval_kd(&vd);
    let e = &meas.q - &des.q;
    let e_dot = &meas.q_dot - &des.q_dot;
    let u = feed_forward(est, meas, des) + &mean - &kd * e_dot - &kp * e;
    Ok((
        u,
        ControlDiagnostics {
            kp,
            kd,
            mean,
            var_p: vp,
            var_d: vd,
        },
    ))
}

type ControlFn = dyn Fn(&StateTriple, &DesiredState) -> DVector<f64> + Send + Sync;

/// A configured control law.
#[derive(Clone)]
pub enum Controller {
    Classic {
        est: ElEstimates,
        kp: DMatrix<f64>,
        kd: DMatrix<f64>,
    },
    Gpr {
        est: ElEstimates,
        gp: Arc<MultiOutputGp>,
        gains: GainSchedule,
        subsets: VarianceSubsets,
    },
    /// Arbitrary law, reported with zero gains.
    Custom { dim: usize, law: Arc<ControlFn> },
}

impl fmt::Debug for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Controller::Classic { kp, kd, .. } => f
                .debug_struct("Classic")
                .field("kp", kp)
                .field("kd", kd)
                .finish(),
            Controller::Gpr { gains, .. } => f.debug_struct("Gpr").field("gains", gains).finish(),
            Controller::Custom { dim, .. } => f.debug_struct("Custom").field("dim", dim).finish(),
        }
    }
}

impl Controller {
    /// Fixed-gain CTC; gains may be zero (pure feed-forward) but must be symmetric.
    pub fn classic(est: ElEstimates, kp: DMatrix<f64>, kd: DMatrix<f64>) -> Result<Self> {
        let n = est.dim();
        for (name, m) in [("kp", &kp), ("kd", &kd)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::invalid(format!("{name} must be {n}x{n}")));
            }
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(Error::invalid(format!("{name} must be symmetric")));
            }
        }
        Ok(Controller::Classic { est, kp, kd })
    }

    pub fn custom(
        dim: usize,
        law: impl Fn(&StateTriple, &DesiredState) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Controller::Custom {
            dim,
            law: Arc::new(law),
        }
    }

    /// `u ≡ 0`
    pub fn zero(dim: usize) -> Self {
        Self::custom(dim, move |_, _| DVector::zeros(dim))
    }

    /// Builds the law named by `gains.kind`; the classic kind ignores `gp`.
    pub fn from_schedule(
        est: ElEstimates,
        gp: Option<Arc<MultiOutputGp>>,
        gains: GainSchedule,
    ) -> Result<Self> {
        if gains.kind == GainKind::ClassicStatic {
            return Self::classic(est, gains.kp_base, gains.kd_base);
        }
        let gp = gp.ok_or_else(|| {
            Error::invalid(format!("controller kind {} needs a trained GP", gains.kind))
        })?;
        let n = est.dim();
        if gp.input_dim() != 3 * n || gp.output_dim() != n || gains.dim() != n {
            return Err(Error::invalid(
                "GP or gain dimensions do not match the model",
            ));
        }
        Ok(Controller::Gpr {
            est,
            gp,
            gains,
            subsets: VarianceSubsets::new(n)?,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Controller::Classic { est, .. } | Controller::Gpr { est, .. } => est.dim(),
            Controller::Custom { dim, .. } => *dim,
        }
    }

    pub fn kind(&self) -> Option<GainKind> {
        match self {
            Controller::Classic { .. } => Some(GainKind::ClassicStatic),
            Controller::Gpr { gains, .. } => Some(gains.kind),
            Controller::Custom { .. } => None,
        }
    }

    pub fn control(
        &self,
        meas: &StateTriple,
        des: &DesiredState,
    ) -> Result<(DVector<f64>, ControlDiagnostics)> {
        match self {
            Controller::Classic { est, kp, kd } => {
                let u = classic_ctc_control(est, kp, kd, meas, des)?;
                let n = est.dim();
                Ok((
                    u,
                    ControlDiagnostics {
                        kp: kp.clone(),
                        kd: kd.clone(),
                        mean: DVector::zeros(n),
                        var_p: DVector::zeros(n),
                        var_d: DVector::zeros(n),
                    },
                ))
            }
            Controller::Gpr {
                est,
                gp,
                gains,
                subsets,
            } => ctc_gpr_control(est, gp, gains, subsets, meas, des),
            Controller::Custom { dim, law } => {
                let n = *dim;
                Ok((
                    law(meas, des),
                    ControlDiagnostics {
                        kp: DMatrix::zeros(n, n),
                        kd: DMatrix::zeros(n, n),
                        mean: DVector::zeros(n),
                        var_p: DVector::zeros(n),
                        var_d: DVector::zeros(n),
                    },
                ))
            }
        }
    }
}
