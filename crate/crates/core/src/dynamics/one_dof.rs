use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ElModel, RigidBody, UnknownDynamics};

/// Scalar system `a q̈ + b q̇ + k q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLinear {
    pub inertia: f64,
    pub damping: f64,
    pub stiffness: f64,
}

impl ScalarLinear {
    pub fn unit() -> Self {
        ScalarLinear {
            inertia: 1.0,
            damping: 1.0,
            stiffness: 1.0,
        }
    }
}

impl RigidBody for ScalarLinear {
    fn dim(&self) -> usize {
        1
    }

    fn inertia(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.inertia)
    }

    fn coriolis(&self, _q: &DVector<f64>, _q_dot: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.damping)
    }

    fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.stiffness * q[0])
    }
}

/// `H = C = 1`, `g = q`, with the offset-`c` unknown force.
pub fn one_dof_model(c: f64) -> ElModel {
    ElModel::new(
        Arc::new(ScalarLinear::unit()),
        UnknownDynamics::OneDof { c },
    )
}

/// `(q̇² sin(q−c) − sin c) / (cos(q−c) − 1.1 / cos(q−c))`
///
/// Evaluated as `num·cos / (cos² − 1.1)`, which stays finite where `cos(q−c) = 0`.
pub fn one_dof_unknown_force(c: f64, q: f64, q_dot: f64) -> f64 {
    let (s, co) = (q - c).sin_cos();
    let num = q_dot * q_dot * s - c.sin();
    num * co / (co * co - 1.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_force_oracle_values() {
        let cases = [
            (2.034701, -1.047452, 0.603738, -8.831_808_731_987_941),
            (0.455131, 0.107646, -0.537244, 2.3416983764211376),
            (0.364418, 0.022307, -1.850017, 6.668_729_079_449_386),
            (2.724676, -1.290434, -1.637148, 1.5404922300212807),
            (2.667333, 0.980556, -1.504792, -0.288_167_284_042_380_6),
            (1.402652, 0.3823, 1.790836, 2.3540936905717034),
        ];
        for (c, q, qd, expected) in cases {
            let f = one_dof_unknown_force(c, q, qd);
            assert!(
                (f - expected).abs() < 1e-12 * expected.abs().max(1.0),
                "c={c} q={q} q̇={qd}: {f} vs {expected}"
            );
        }
    }

    #[test]
    fn finite_where_direct_form_divides_by_zero() {
        let c = 0.7;
        let q = c + std::f64::consts::FRAC_PI_2;
        assert!(one_dof_unknown_force(c, q, 1.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_force_ignores_acceleration() {
        assert!(!one_dof_model(1.0).unknown.depends_on_acceleration());
    }
}
