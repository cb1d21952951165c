//! Euler-Lagrange models `H(q)q̈ + C(q,q̇)q̇ + g(q) − f_u(p) = u`, their
//! parametric estimates, the residual the GP learns, and forward dynamics.

pub mod christoffel;
mod estimates;
mod one_dof;
mod two_link;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use christoffel::{coriolis_from_inertia, inertia_rate};
pub use estimates::ElEstimates;
pub use one_dof::{one_dof_model, one_dof_unknown_force, ScalarLinear};
pub use two_link::{two_link_model, two_link_unknown_force, TwoLinkArm, GRAVITY};

/// `p = [q̈ᵀ, q̇ᵀ, qᵀ]ᵀ`
#[derive(Debug, Clone, PartialEq)]
pub struct StateTriple {
    pub q_ddot: DVector<f64>,
    pub q_dot: DVector<f64>,
    pub q: DVector<f64>,
}

impl StateTriple {
    pub fn new(q_ddot: DVector<f64>, q_dot: DVector<f64>, q: DVector<f64>) -> Result<Self> {
        if q.is_empty() || q_dot.len() != q.len() || q_ddot.len() != q.len() {
            return Err(Error::invalid(format!(
                "state triple dimensions disagree: q̈ {}, q̇ {}, q {}",
                q_ddot.len(),
                q_dot.len(),
                q.len()
            )));
        }
        Ok(StateTriple { q_ddot, q_dot, q })
    }

    pub fn zeros(n: usize) -> Self {
        StateTriple {
            q_ddot: DVector::zeros(n),
            q_dot: DVector::zeros(n),
            q: DVector::zeros(n),
        }
    }

    /// Splits a stacked `3n` vector.
    pub fn from_stacked(p: &[f64]) -> Result<Self> {
        if p.is_empty() || !p.len().is_multiple_of(3) {
            return Err(Error::invalid(format!(
                "stacked state has length {}",
                p.len()
            )));
        }
        let n = p.len() / 3;
        Ok(StateTriple {
            q_ddot: DVector::from_column_slice(&p[..n]),
            q_dot: DVector::from_column_slice(&p[n..2 * n]),
            q: DVector::from_column_slice(&p[2 * n..]),
        })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.q_ddot
            .iter()
            .chain(self.q_dot.iter())
            .chain(self.q.iter())
            .copied()
            .collect()
    }
}

/// Rigid-body part of an Euler-Lagrange system.
pub trait RigidBody: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64>;
    fn coriolis(&self, q: &DVector<f64>, q_dot: &DVector<f64>) -> DMatrix<f64>;
    fn gravity(&self, q: &DVector<f64>) -> DVector<f64>;

    /// `Hq̈ + Cq̇ + g`
    fn torque(&self, p: &StateTriple) -> DVector<f64> {
        self.inertia(&p.q) * &p.q_ddot
            + self.coriolis(&p.q, &p.q_dot) * &p.q_dot
            + self.gravity(&p.q)
    }

    fn kinetic_energy(&self, q: &DVector<f64>, q_dot: &DVector<f64>) -> f64 {
        0.5 * q_dot.dot(&(self.inertia(q) * q_dot))
    }
}

type InertiaFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type GravityFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// User-supplied inertia and gravity; Coriolis from Christoffel symbols.
#[derive(Clone)]
pub struct FnRigidBody {
    dim: usize,
    inertia: Arc<InertiaFn>,
    gravity: Arc<GravityFn>,
}

impl FnRigidBody {
    pub fn new(
        dim: usize,
        inertia: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        gravity: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        FnRigidBody {
            dim,
            inertia: Arc::new(inertia),
            gravity: Arc::new(gravity),
        }
    }
}

impl fmt::Debug for FnRigidBody {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnRigidBody")
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl RigidBody for FnRigidBody {
    fn dim(&self) -> usize {
        self.dim
    }

    fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.inertia)(q)
    }

    fn coriolis(&self, q: &DVector<f64>, q_dot: &DVector<f64>) -> DMatrix<f64> {
        coriolis_from_inertia(|x| (self.inertia)(x), q, q_dot)
    }

    fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.gravity)(q)
    }
}

type ForceFn = dyn Fn(&StateTriple) -> DVector<f64> + Send + Sync;

/// The generalized force `f_u(p)` not captured by the rigid-body model.
#[derive(Clone, Default)]
pub enum UnknownDynamics {
    #[default]
    None,
    /// Randomized scalar benchmark with offset `c`.
    OneDof {
        c: f64,
    },
    /// Two-link benchmark force.
    TwoLink,
    Custom(Arc<ForceFn>),
}

impl fmt::Debug for UnknownDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnknownDynamics::None => write!(f, "None"),
            UnknownDynamics::OneDof { c } => write!(f, "OneDof {{ c: {c} }}"),
            UnknownDynamics::TwoLink => write!(f, "TwoLink"),
            UnknownDynamics::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl UnknownDynamics {
    pub fn eval(&self, p: &StateTriple) -> DVector<f64> {
        match self {
            UnknownDynamics::None => DVector::zeros(p.dim()),
            UnknownDynamics::OneDof { c } => {
                DVector::from_element(1, one_dof_unknown_force(*c, p.q[0], p.q_dot[0]))
            }
            UnknownDynamics::TwoLink => two_link_unknown_force(p),
            UnknownDynamics::Custom(f) => f(p),
        }
    }

    pub fn depends_on_acceleration(&self) -> bool {
        matches!(self, UnknownDynamics::TwoLink | UnknownDynamics::Custom(_))
    }

    pub fn is_none(&self) -> bool {
        matches!(self, UnknownDynamics::None)
    }
}

/// How the plant feeds its own acceleration into `f_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccelerationCoupling {
    /// `f_u` sees the true acceleration; forward dynamics solves the implicit equation.
    #[default]
    Implicit,
    /// `f_u` is evaluated with its acceleration slot set to zero.
    StateOnly,
}

/// Newton tolerance and iteration cap for the implicit acceleration solve.
pub const SOLVE_TOL: f64 = 1e-12;
pub const SOLVE_MAX_ITERS: usize = 100;

/// True plant: rigid body plus unknown force.
#[derive(Debug, Clone)]
pub struct ElModel {
    pub rigid: Arc<dyn RigidBody>,
    pub unknown: UnknownDynamics,
    pub coupling: AccelerationCoupling,
}

impl ElModel {
    pub fn new(rigid: Arc<dyn RigidBody>, unknown: UnknownDynamics) -> Self {
        ElModel {
            rigid,
            unknown,
            coupling: AccelerationCoupling::Implicit,
        }
    }

    pub fn with_coupling(mut self, coupling: AccelerationCoupling) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn with_unknown(mut self, unknown: UnknownDynamics) -> Self {
        self.unknown = unknown;
        self
    }

    pub fn dim(&self) -> usize {
        self.rigid.dim()
    }

    pub fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.rigid.inertia(q)
    }

    pub fn coriolis(&self, q: &DVector<f64>, q_dot: &DVector<f64>) -> DMatrix<f64> {
        self.rigid.coriolis(q, q_dot)
    }

    pub fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        self.rigid.gravity(q)
    }

    /// `f_u` as seen by the plant under its coupling mode.
    pub fn unknown_force(&self, p: &StateTriple) -> DVector<f64> {
        match self.coupling {
            AccelerationCoupling::StateOnly if self.unknown.depends_on_acceleration() => {
                let masked = StateTriple {
                    q_ddot: DVector::zeros(p.dim()),
                    q_dot: p.q_dot.clone(),
                    q: p.q.clone(),
                };
                self.unknown.eval(&masked)
            }
            _ => self.unknown.eval(p),
        }
    }

    /// Input that realizes the state triple: `Hq̈ + Cq̇ + g − f_u(p)`.
    pub fn inverse_dynamics(&self, p: &StateTriple) -> DVector<f64> {
        self.rigid.torque(p) - self.unknown_force(p)
    }

    /// Solves `H(q)q̈ = u − C(q,q̇)q̇ − g(q) + f_u(p)` for `q̈`.
    pub fn forward_dynamics(
        &self,
        q: &DVector<f64>,
        q_dot: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n = self.dim();
        if q.len() != n || q_dot.len() != n || u.len() != n {
            return Err(Error::invalid("forward dynamics dimension mismatch"));
        }
        let h = self.inertia(q);
        let b = u - self.coriolis(q, q_dot) * q_dot - self.gravity(q);
        let implicit = self.coupling == AccelerationCoupling::Implicit
            && self.unknown.depends_on_acceleration();
        if !implicit {
            let p = StateTriple {
                q_ddot: DVector::zeros(n),
                q_dot: q_dot.clone(),
                q: q.clone(),
            };
            let rhs = if self.unknown.is_none() {
                b
            } else {
                b + self.unknown_force(&p)
            };
            return solve(h, rhs);
        }

        // Newton on G(a) = H a − f_u(a, q̇, q) − b
        let mut p = StateTriple {
            q_ddot: solve(h.clone(), b.clone())?,
            q_dot: q_dot.clone(),
            q: q.clone(),
        };
        let scale = 1.0 + b.amax();
        let mut residual = f64::INFINITY;
        for _ in 0..SOLVE_MAX_ITERS {
            let g = &h * &p.q_ddot - self.unknown.eval(&p) - &b;
            residual = g.amax();
            if residual <= SOLVE_TOL * scale {
                return Ok(p.q_ddot);
            }
            let jac = &h - self.acceleration_jacobian(&p);
            let step = solve(jac, g)?;
            p.q_ddot -= step;
        }
        Err(Error::DynamicsSolve {
            iterations: SOLVE_MAX_ITERS,
            residual,
        })
    }

    /// `∂f_u/∂q̈` by central differences.
    fn acceleration_jacobian(&self, p: &StateTriple) -> DMatrix<f64> {
        const H: f64 = 1e-6;
        let n = p.dim();
        let mut jac = DMatrix::zeros(n, n);
        let mut probe = p.clone();
        for k in 0..n {
            probe.q_ddot[k] = p.q_ddot[k] + H;
            let plus = self.unknown.eval(&probe);
            probe.q_ddot[k] = p.q_ddot[k] - H;
            let minus = self.unknown.eval(&probe);
            probe.q_ddot[k] = p.q_ddot[k];
            jac.set_column(k, &((plus - minus) / (2.0 * H)));
        }
        jac
    }
}

fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() == 1 {
        if a[(0, 0)].abs() < 1e-300 {
            return Err(Error::Singular("inertia"));
        }
        return Ok(b / a[(0, 0)]);
    }
    a.lu().solve(&b).ok_or(Error::Singular("inertia"))
}

/// `(H−Ĥ)q̈ + (C−Ĉ)q̇ + (g−ĝ) − f_u(p)`
pub fn residual_tau(true_model: &ElModel, est: &ElEstimates, p: &StateTriple) -> DVector<f64> {
    true_model.inverse_dynamics(p) - est.torque(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-r..r))
    }

    #[test]
    fn stacked_round_trip() {
        let p = StateTriple::from_stacked(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(p.q_ddot.as_slice(), &[1.0, 2.0]);
        assert_eq!(p.q.as_slice(), &[5.0, 6.0]);
        assert_eq!(p.stacked(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(StateTriple::from_stacked(&[1.0, 2.0]).is_err());
        assert!(StateTriple::new(DVector::zeros(2), DVector::zeros(1), DVector::zeros(2)).is_err());
    }

    #[test]
    fn equilibrium_input_gives_zero_acceleration() {
        let model = two_link_model(1.0, 1.0, 1.0, 1.0).unwrap();
        let q = DVector::from_vec(vec![0.3, -0.4]);
        let qd = DVector::from_vec(vec![0.7, 1.1]);
        let u = model.coriolis(&q, &qd) * &qd + model.gravity(&q);
        let a = model.forward_dynamics(&q, &qd, &u).unwrap();
        assert!(a.amax() < 1e-12);
    }

    #[test]
    fn one_dof_closed_form_acceleration() {
        let model = one_dof_model(0.8);
        let (q, qd, u) = (0.4, -0.6, 1.7);
        let a = model
            .forward_dynamics(
                &DVector::from_element(1, q),
                &DVector::from_element(1, qd),
                &DVector::from_element(1, u),
            )
            .unwrap()[0];
        // q̈ = u − q̇ − q + f_u
        let expected = u - qd - q + one_dof_unknown_force(0.8, q, qd);
        assert!((a - expected).abs() < 1e-10);
    }

    #[test]
    fn implicit_solve_satisfies_equation_of_motion() {
        let model = two_link_model(1.0, 1.0, 1.0, 1.0)
            .unwrap()
            .with_unknown(UnknownDynamics::TwoLink);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q = rand_vec(&mut rng, 2, 1.5);
            let qd = rand_vec(&mut rng, 2, 2.0);
            let u = rand_vec(&mut rng, 2, 10.0);
            let a = model.forward_dynamics(&q, &qd, &u).unwrap();
            let p = StateTriple::new(a, qd, q).unwrap();
            let back = model.inverse_dynamics(&p);
            assert!((back - &u).amax() < 1e-9);
        }
    }

    #[test]
    fn state_only_coupling_ignores_acceleration_slot() {
        let model = two_link_model(1.0, 1.0, 1.0, 1.0)
            .unwrap()
            .with_unknown(UnknownDynamics::TwoLink)
            .with_coupling(AccelerationCoupling::StateOnly);
        let q = DVector::from_vec(vec![0.2, 0.9]);
        let qd = DVector::from_vec(vec![-0.3, 0.5]);
        let u = DVector::from_vec(vec![3.0, -1.0]);
        let a = model.forward_dynamics(&q, &qd, &u).unwrap();
        let p = StateTriple::new(a, qd, q).unwrap();
        assert!((model.inverse_dynamics(&p) - u).amax() < 1e-10);
        let f = model.unknown_force(&p);
        let expected = two_link_unknown_force(
            &StateTriple::new(DVector::zeros(2), p.q_dot.clone(), p.q.clone()).unwrap(),
        );
        assert_eq!(f, expected);
    }

    #[test]
    fn residual_of_perfect_model_is_zero() {
        let model = two_link_model(1.0, 1.0, 1.0, 1.0).unwrap();
        let est = ElEstimates::new(model.rigid.clone(), 0.1, 3.0, 1.0).unwrap();
        let p = StateTriple::from_stacked(&[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap();
        assert!(residual_tau(&model, &est, &p).amax() < 1e-14);
    }

    #[derive(Debug)]
    struct Offset(TwoLinkArm);

    impl RigidBody for Offset {
        fn dim(&self) -> usize {
            2
        }
        fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
            self.0.inertia(q)
        }
        fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
            self.0.coriolis(q, qd)
        }
        fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
            self.0.gravity(q).add_scalar(1.0)
        }
    }

    #[test]
    fn residual_of_gravity_offset() {
        let arm = TwoLinkArm::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let model = ElModel::new(Arc::new(arm.clone()), UnknownDynamics::None);
        let est = ElEstimates::new(Arc::new(Offset(arm)), 0.1, 3.0, 1.0).unwrap();
        let p = StateTriple::from_stacked(&[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap();
        let r = residual_tau(&model, &est, &p);
        assert!((r - DVector::from_element(2, -1.0)).amax() < 1e-12);
    }

    #[test]
    fn residual_algebraic_consistency() {
        let model = two_link_model(1.0, 1.0, 1.0, 1.0)
            .unwrap()
            .with_unknown(UnknownDynamics::TwoLink);
        let est_arm = TwoLinkArm::new(0.9, 1.1, 0.9, 1.1).unwrap();
        let est = ElEstimates::new(Arc::new(est_arm.clone()), 0.1, 3.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let p = StateTriple::new(
                rand_vec(&mut rng, 2, 2.0),
                rand_vec(&mut rng, 2, 2.0),
                rand_vec(&mut rng, 2, 2.0),
            )
            .unwrap();
            let lhs = residual_tau(&model, &est, &p) + est_arm.torque(&p)
                - (model.rigid.torque(&p) - model.unknown.eval(&p));
            assert!(lhs.amax() < 1e-12);
        }
    }

    #[test]
    fn fn_rigid_body_uses_christoffel_coriolis() {
        let body = FnRigidBody::new(
            2,
            |q| DMatrix::from_row_slice(2, 2, &[2.0 + q[1].cos(), 0.3, 0.3, 1.0]),
            |_| DVector::zeros(2),
        );
        let q = DVector::from_vec(vec![0.1, 0.5]);
        let qd = DVector::zeros(2);
        assert_eq!(body.coriolis(&q, &qd).amax(), 0.0);
    }
}
