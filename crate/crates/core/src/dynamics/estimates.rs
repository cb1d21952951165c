use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RigidBody, StateTriple};
use crate::error::{Error, Result};

/// Safety factor applied to sampled constants.
pub const SAMPLING_MARGIN: f64 = 0.05;

/// Parametric estimate `Ĥ, Ĉ, ĝ` with `h₁I ≼ Ĥ ≼ h₂I` and `‖Ĉ(q,q̇)‖ ≤ k_C‖q̇‖`.
#[derive(Debug, Clone)]
pub struct ElEstimates {
    pub rigid: Arc<dyn RigidBody>,
    pub h1: f64,
    pub h2: f64,
    pub k_c: f64,
}

impl ElEstimates {
    pub fn new(rigid: Arc<dyn RigidBody>, h1: f64, h2: f64, k_c: f64) -> Result<Self> {
        if !(h1.is_finite() && h1 > 0.0 && h2.is_finite() && h2 >= h1) {
            return Err(Error::invalid(format!(
                "inertia bounds need 0 < h1 <= h2, got h1={h1}, h2={h2}"
            )));
        }
        if !(k_c.is_finite() && k_c >= 0.0) {
            return Err(Error::invalid(format!(
                "k_c must be non-negative, got {k_c}"
            )));
        }
        Ok(ElEstimates { rigid, h1, h2, k_c })
    }

    /// Bounds by sampling a `resolution`-per-axis grid over the box `[q_lo, q_hi]`,
    /// widened by [`SAMPLING_MARGIN`]. `k_C` takes the worst unit velocity direction.
    pub fn from_sampling(
        rigid: Arc<dyn RigidBody>,
        q_lo: &[f64],
        q_hi: &[f64],
        resolution: usize,
    ) -> Result<Self> {
        let n = rigid.dim();
        if q_lo.len() != n || q_hi.len() != n {
            return Err(Error::invalid("sampling box dimension mismatch"));
        }
        if resolution < 2 {
            return Err(Error::invalid("sampling resolution must be at least 2"));
        }
        let directions = unit_directions(n);
        let (mut h_min, mut h_max, mut k_c) = (f64::INFINITY, 0.0f64, 0.0f64);
        let total = resolution.pow(n as u32);
        let mut q = DVector::zeros(n);
        for idx in 0..total {
            let mut rem = idx;
            for d in 0..n {
                let t = (rem % resolution) as f64 / (resolution - 1) as f64;
                rem /= resolution;
                q[d] = q_lo[d] + t * (q_hi[d] - q_lo[d]);
            }
            let eig = SymmetricEigen::new(rigid.inertia(&q)).eigenvalues;
            h_min = h_min.min(eig.min());
            h_max = h_max.max(eig.max());
            for dir in &directions {
                k_c = k_c.max(spectral_norm(rigid.coriolis(&q, dir)));
            }
        }
        if !(h_min > 0.0) {
            return Err(Error::Infeasible {
                term: "h1",
                detail: format!(
                    "estimated inertia is not positive definite (min eigenvalue {h_min})"
                ),
            });
        }
        Self::new(
            rigid,
            h_min * (1.0 - SAMPLING_MARGIN),
            h_max * (1.0 + SAMPLING_MARGIN),
            k_c * (1.0 + SAMPLING_MARGIN),
        )
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

    /// `Ĥq̈ + Ĉq̇ + ĝ`
    pub fn torque(&self, p: &StateTriple) -> DVector<f64> {
        self.rigid.torque(p)
    }
}

fn spectral_norm(m: DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.singular_values().max()
}

/// Unit vectors probing the velocity sphere: a fine circle for `n = 2`,
/// axes plus seeded random directions otherwise.
fn unit_directions(n: usize) -> Vec<DVector<f64>> {
    match n {
        1 => vec![DVector::from_element(1, 1.0)],
        2 => (0..128)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 128.0;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut dirs: Vec<_> = (0..n)
                .map(|i| {
                    let mut e = DVector::zeros(n);
                    e[i] = 1.0;
                    e
                })
                .collect();
            for _ in 0..256 {
                let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                let norm = v.norm();
                if norm > 1e-6 {
                    dirs.push(v / norm);
                }
            }
            dirs
        }
    }
}
