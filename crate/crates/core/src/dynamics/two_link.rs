use nalgebra::{DMatrix, DVector};

use super::{ElModel, RigidBody, StateTriple, UnknownDynamics};
use crate::error::{Error, Result};
use std::sync::Arc;

/// Standard gravitational acceleration.
pub const GRAVITY: f64 = 9.81;

/// Planar two-link arm with point masses at the link midpoints.
///
/// Joint angles are absolute for link 1 and relative for link 2, measured
/// from the +x axis; gravity acts along −y.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLinkArm {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub gravity_accel: f64,
}

impl TwoLinkArm {
    pub fn new(m1: f64, m2: f64, l1: f64, l2: f64) -> Result<Self> {
        Self::with_gravity(m1, m2, l1, l2, GRAVITY)
    }

    pub fn with_gravity(m1: f64, m2: f64, l1: f64, l2: f64, gravity_accel: f64) -> Result<Self> {
        for (name, v) in [("m1", m1), ("m2", m2), ("l1", l1), ("l2", l2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !gravity_accel.is_finite() {
            return Err(Error::invalid("gravity must be finite"));
        }
        Ok(TwoLinkArm {
            m1,
            m2,
            l1,
            l2,
            gravity_accel,
        })
    }
}

impl RigidBody for TwoLinkArm {
    fn dim(&self) -> usize {
        2
    }

    fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let (m1, m2, l1, l2) = (self.m1, self.m2, self.l1, self.l2);
        let c2 = q[1].cos();
        let h11 = 0.25 * m1 * l1 * l1 + m2 * (l1 * l1 + l1 * l2 * c2 + 0.25 * l2 * l2);
        let h12 = 0.25 * m2 * l2 * (2.0 * l1 * c2 + l2);
        let h22 = 0.25 * m2 * l2 * l2;
        DMatrix::from_row_slice(2, 2, &[h11, h12, h12, h22])
    }

    fn coriolis(&self, q: &DVector<f64>, q_dot: &DVector<f64>) -> DMatrix<f64> {
        let k = 0.5 * self.m2 * self.l1 * self.l2 * q[1].sin();
        DMatrix::from_row_slice(
            2,
            2,
            &[-k * q_dot[1], -k * (q_dot[0] + q_dot[1]), k * q_dot[0], 0.0],
        )
    }

    fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        let g = self.gravity_accel;
        let c1 = q[0].cos();
        let c12 = (q[0] + q[1]).cos();
        DVector::from_vec(vec![
            0.5 * g * (self.l1 * self.m1 * c1 + self.m2 * (2.0 * self.l1 * c1 + self.l2 * c12)),
            0.5 * g * self.l2 * self.m2 * c12,
        ])
    }
}

/// Two-link arm without unknown dynamics.
pub fn two_link_model(m1: f64, m2: f64, l1: f64, l2: f64) -> Result<ElModel> {
    Ok(ElModel::new(
        Arc::new(TwoLinkArm::new(m1, m2, l1, l2)?),
        UnknownDynamics::None,
    ))
}

/// `[sin 2q̇₂ + cos 2q₁ + q̈₁, sin 2q̇₂ + 2 sin q̇₁]`
pub fn two_link_unknown_force(p: &StateTriple) -> DVector<f64> {
    let s = (2.0 * p.q_dot[1]).sin();
    DVector::from_vec(vec![
        s + (2.0 * p.q[0]).cos() + p.q_ddot[0],
        s + 2.0 * p.q_dot[0].sin(),
    ])
}
