//! Maximum-likelihood hyperparameter search in log-parameter space.
//!
//! Each output dimension is optimized independently with limited-memory BFGS
//! and a backtracking Armijo line search. Restart 0 starts from the supplied
//! initial values; further restarts perturb them with seeded Gaussian noise.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::kernel::Hyperparameters;
use super::likelihood::{log_marginal_likelihood, log_marginal_likelihood_with_gradient};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    /// Convergence threshold on the infinity norm of the log-space gradient.
    pub tolerance: f64,
    /// Total number of starts, including the one at `init`.
    pub restarts: usize,
    pub seed: u64,
    /// Share one lengthscale across all input dimensions.
    pub tie_lengthscales: bool,
    /// Standard deviation of the log-space perturbation used by restarts.
    pub restart_spread: f64,
    /// Input dimensions whose lengthscale is held at its initial value.
    pub fixed_lengthscales: Vec<usize>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iters: 100,
            tolerance: 1e-5,
            restarts: 1,
            seed: 0,
            tie_lengthscales: false,
            restart_spread: 0.5,
            fixed_lengthscales: Vec::new(),
        }
    }
}

/// Result for one output dimension.
#[derive(Debug, Clone)]
pub struct OptimizedOutput {
    pub hyper: Hyperparameters,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub iterations: usize,
}

/// Optimizes every output column of `targets` (`m × n`) independently.
pub fn optimize_hyperparameters(
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    init: &[Hyperparameters],
    opts: &OptimizeOptions,
) -> Result<Vec<OptimizedOutput>> {
    if init.len() != targets.ncols() {
        return Err(Error::invalid(format!(
            "{} initial hyperparameter sets for {} outputs",
            init.len(),
            targets.ncols()
        )));
    }
    init.iter()
        .enumerate()
        .map(|(i, h)| {
            let y = targets.column(i).into_owned();
            let seed = opts
                .seed
                .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
            optimize_output(
                inputs,
                &y,
                h,
                &OptimizeOptions {
                    seed,
                    ..opts.clone()
                },
            )
        })
        .collect()
}

/// Parameterization of the search vector: `[log σ_f, free log ℓ (one if tied), log σ_n]`.
struct Objective<'a> {
    inputs: &'a DMatrix<f64>,
    targets: &'a DVector<f64>,
    /// Full log-hyperparameters supplying the held lengthscales.
    base: Vec<f64>,
    /// Exact initial lengthscales, restored on held dimensions.
    held: Vec<f64>,
    free: Vec<usize>,
    tied: bool,
}

impl Objective<'_> {
    fn dim(&self) -> usize {
        self.base.len() - 2
    }

    fn n_ls(&self) -> usize {
        if self.tied {
            usize::from(!self.free.is_empty())
        } else {
            self.free.len()
        }
    }

    fn to_search(&self, h: &Hyperparameters) -> Vec<f64> {
        let full = h.to_log();
        let mut theta = vec![full[0]];
        if self.tied {
            if !self.free.is_empty() {
                theta.push(
                    self.free.iter().map(|&d| full[1 + d]).sum::<f64>() / self.free.len() as f64,
                );
            }
        } else {
            theta.extend(self.free.iter().map(|&d| full[1 + d]));
        }
        theta.push(full[self.dim() + 1]);
        theta
    }

    fn to_hyper(&self, theta: &[f64]) -> Hyperparameters {
        let mut full = self.base.clone();
        full[0] = theta[0];
        for (k, &d) in self.free.iter().enumerate() {
            full[1 + d] = theta[1 + if self.tied { 0 } else { k }];
        }
        full[self.dim() + 1] = theta[1 + self.n_ls()];
        let mut h = Hyperparameters::from_log(&full);
        for d in (0..self.dim()).filter(|d| !self.free.contains(d)) {
            h.lengthscales[d] = self.held[d];
        }
        h
    }

    /// Negative log-likelihood and gradient; `None` when the factorization fails.
    fn eval(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        if theta.iter().any(|t| !t.is_finite() || t.abs() > 30.0) {
            return None;
        }
        let h = self.to_hyper(theta);
        let (ll, g) = log_marginal_likelihood_with_gradient(self.inputs, self.targets, &h).ok()?;
        if !ll.is_finite() {
            return None;
        }
        let mut grad = vec![-g[0]];
        if self.tied {
            if !self.free.is_empty() {
                grad.push(-self.free.iter().map(|&d| g[1 + d]).sum::<f64>());
            }
        } else {
            grad.extend(self.free.iter().map(|&d| -g[1 + d]));
        }
        grad.push(-g[self.dim() + 1]);
        Some((-ll, grad))
    }
}

fn optimize_output(
    inputs: &DMatrix<f64>,
    targets: &DVector<f64>,
    init: &Hyperparameters,
    opts: &OptimizeOptions,
) -> Result<OptimizedOutput> {
    init.validate()?;
    if init.dim() != inputs.nrows() {
        return Err(Error::invalid(
            "initial lengthscales do not match input dimension",
        ));
    }
    let initial_ll = log_marginal_likelihood(inputs, targets, init);
    if opts.max_iters == 0 {
        let ll = initial_ll?;
        return Ok(OptimizedOutput {
            hyper: init.clone(),
            log_likelihood: ll,
            initial_log_likelihood: ll,
            iterations: 0,
        });
    }

    let dim = inputs.nrows();
    if let Some(&d) = opts.fixed_lengthscales.iter().find(|&&d| d >= dim) {
        return Err(Error::invalid(format!(
            "fixed lengthscale index {d} out of range for dimension {dim}"
        )));
    }
    let obj = Objective {
        inputs,
        targets,
        base: init.to_log(),
        held: init.lengthscales.clone(),
        free: (0..dim)
            .filter(|d| !opts.fixed_lengthscales.contains(d))
            .collect(),
        tied: opts.tie_lengthscales,
    };
    let start = obj.to_search(init);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, opts.restart_spread.max(0.0)).expect("finite spread");

    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    for restart in 0..opts.restarts.max(1) {
        let theta0: Vec<f64> = if restart == 0 {
            start.clone()
        } else {
            start.iter().map(|t| t + normal.sample(&mut rng)).collect()
        };
        let Some((f, theta, iters)) = lbfgs(&obj, theta0, opts.max_iters, opts.tolerance) else {
            continue;
        };
        if best.as_ref().is_none_or(|(bf, _, _)| f < *bf) {
            best = Some((f, theta, iters));
        }
    }

    let init_ll = initial_ll.ok();
    match (best, init_ll) {
        (Some((f, theta, iters)), Some(ll0)) if -f > ll0 => Ok(OptimizedOutput {
            hyper: obj.to_hyper(&theta),
            log_likelihood: -f,
            initial_log_likelihood: ll0,
            iterations: iters,
        }),
        (Some((f, theta, iters)), None) => Ok(OptimizedOutput {
            hyper: obj.to_hyper(&theta),
            log_likelihood: -f,
            initial_log_likelihood: f64::NEG_INFINITY,
            iterations: iters,
        }),
        (_, Some(ll0)) => Ok(OptimizedOutput {
            hyper: init.clone(),
            log_likelihood: ll0,
            initial_log_likelihood: ll0,
            iterations: 0,
        }),
        (None, None) => Err(Error::Conditioning {
            attempted: super::model::JITTER_LADDER.to_vec(),
        }),
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Returns `(f, θ, iterations)` at the best point reached.
fn lbfgs(
    obj: &Objective<'_>,
    mut theta: Vec<f64>,
    max_iters: usize,
    tol: f64,
) -> Option<(f64, Vec<f64>, usize)> {
    const MEMORY: usize = 8;
    let (mut f, mut g) = obj.eval(&theta)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut iters = 0;

    while iters < max_iters && inf_norm(&g) >= tol {
        iters += 1;
        // two-loop recursion
        let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            for (d, yi) in dir.iter_mut().zip(y) {
                *d -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        } else {
            // first step: unit step along −g is at most ~1 in log-space
            let scale = 1.0 / inf_norm(&g).max(1.0);
            dir.iter_mut().for_each(|d| *d *= scale);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            for (d, si) in dir.iter_mut().zip(s) {
                *d += si * (a - b);
            }
        }

        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            history.clear();
            dir = g.iter().map(|v| -v / inf_norm(&g).max(1.0)).collect();
            slope = dot(&g, &dir);
        }
        // keep log-space moves bounded
        let max_step = inf_norm(&dir);
        if max_step > 2.0 {
            let s = 2.0 / max_step;
            dir.iter_mut().for_each(|d| *d *= s);
            slope *= s;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            if let Some((ft, gt)) = obj.eval(&trial) {
                if ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((next, f_next, g_next)) = accepted else {
            break;
        };
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let improvement = f - f_next;
        theta = next;
        f = f_next;
        g = g_next;
        if improvement.abs() <= 1e-12 * f.abs().max(1.0) {
            break;
        }
    }
    Some((f, theta, iters))
}
