use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gp::{kernel_eval, Hyperparameters};

/// Largest candidate count accepted by [`information_gain_exact`].
pub const EXACT_LIMIT: usize = 16;

fn check(
    hyper: &Hyperparameters,
    candidates: &[Vec<f64>],
    sigma: f64,
    budget: usize,
) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::invalid(
            "information gain needs at least one candidate",
        ));
    }
    if budget > candidates.len() {
        return Err(Error::invalid(format!(
            "budget {budget} exceeds the {} candidates",
            candidates.len()
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "noise level must be positive, got {sigma}"
        )));
    }
    if let Some(c) = candidates.iter().find(|c| c.len() != hyper.dim()) {
        return Err(Error::invalid(format!(
            "candidate of dimension {} for a {}-dimensional kernel",
            c.len(),
            hyper.dim()
        )));
    }
    Ok(())
}

/// Greedy `½ log|I + σ⁻²K_S|` over subsets `S` of size `budget`.
///
/// Each step adds the candidate of largest posterior variance given the
/// points already chosen, which is the one of largest log-det gain. Ties go
/// to the lowest index.
pub fn information_gain(
    hyper: &Hyperparameters,
    candidates: &[Vec<f64>],
    sigma: f64,
    budget: usize,
) -> Result<f64> {
    check(hyper, candidates, sigma, budget)?;
    let noise_var = sigma * sigma;
    let n = candidates.len();
    let mut var: Vec<f64> = candidates
        .iter()
        .map(|c| kernel_eval(c, c, hyper))
        .collect::<Result<_>>()?;
    let mut taken = vec![false; n];
    // rows[t][c]: normalized posterior covariance between candidate c and the t-th pick
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(budget);
    let mut gain = 0.0;
    for _ in 0..budget {
        let mut s = usize::MAX;
        for c in 0..n {
            if !taken[c] && (s == usize::MAX || var[c] > var[s]) {
                s = c;
            }
        }
        let vs = var[s].max(0.0);
        gain += 0.5 * (vs / noise_var).ln_1p();
        taken[s] = true;
        let denom = (vs + noise_var).sqrt();
        let prior: Vec<f64> = rows.iter().map(|r| r[s]).collect();
        let row: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|c| {
                let k = kernel_eval(&candidates[c], &candidates[s], hyper)?;
                let explained: f64 = rows.iter().zip(&prior).map(|(r, p)| r[c] * p).sum();
                Ok((k - explained) / denom)
            })
            .collect::<Result<_>>()?;
        for (v, g) in var.iter_mut().zip(&row) {
            *v -= g * g;
        }
        rows.push(row);
    }
    Ok(gain)
}

/// `½ log|I + σ⁻²K_S|` for the given points.
pub fn log_det_gain(hyper: &Hyperparameters, points: &[&[f64]], sigma: f64) -> Result<f64> {
    let k = points.len();
    if k == 0 {
        return Ok(0.0);
    }
    let mut m = DMatrix::identity(k, k);
    for i in 0..k {
        for j in 0..k {
            m[(i, j)] += kernel_eval(points[i], points[j], hyper)? / (sigma * sigma);
        }
    }
    let chol = m.cholesky().ok_or(Error::Singular("I + K/σ²"))?;
    Ok(chol.l().diagonal().iter().map(|d: &f64| d.ln()).sum())
}

/// Exact maximum over all subsets of size `budget`; at most [`EXACT_LIMIT`] candidates.
pub fn information_gain_exact(
    hyper: &Hyperparameters,
    candidates: &[Vec<f64>],
    sigma: f64,
    budget: usize,
) -> Result<f64> {
    check(hyper, candidates, sigma, budget)?;
    let n = candidates.len();
    if n > EXACT_LIMIT {
        return Err(Error::invalid(format!(
            "exact enumeration supports at most {EXACT_LIMIT} candidates, got {n}"
        )));
    }
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != budget {
            continue;
        }
        let pts: Vec<&[f64]> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| candidates[i].as_slice())
            .collect();
        best = best.max(log_det_gain(hyper, &pts, sigma)?);
    }
    Ok(best)
}
