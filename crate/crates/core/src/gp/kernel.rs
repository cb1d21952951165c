//! Squared-exponential covariance with one lengthscale per input dimension.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Hyperparameters of a single-output GP.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub signal_std: f64,
    pub lengthscales: Vec<f64>,
    pub noise_std: f64,
}

impl Hyperparameters {
    pub fn new(signal_std: f64, lengthscales: Vec<f64>, noise_std: f64) -> Result<Self> {
        let hyper = Hyperparameters {
            signal_std,
            lengthscales,
            noise_std,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    /// Same lengthscale on every one of `dim` inputs.
    pub fn isotropic(
        signal_std: f64,
        lengthscale: f64,
        dim: usize,
        noise_std: f64,
    ) -> Result<Self> {
        Self::new(signal_std, vec![lengthscale; dim], noise_std)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.signal_std) {
            return Err(Error::invalid(format!(
                "signal_std must be positive, got {}",
                self.signal_std
            )));
        }
        if !positive(self.noise_std) {
            return Err(Error::invalid(format!(
                "noise_std must be positive, got {}",
                self.noise_std
            )));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::invalid("at least one lengthscale is required"));
        }
        if let Some(l) = self.lengthscales.iter().find(|&&l| !positive(l)) {
            return Err(Error::invalid(format!(
                "lengthscales must be positive, got {l}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn signal_var(&self) -> f64 {
        self.signal_std * self.signal_std
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    /// Hyperparameters restricted to the retained input dimensions.
    pub fn restrict(&self, indices: &[usize]) -> Self {
        Hyperparameters {
            signal_std: self.signal_std,
            lengthscales: indices.iter().map(|&i| self.lengthscales[i]).collect(),
            noise_std: self.noise_std,
        }
    }

    /// `[ln σ_f, ln ℓ_1, …, ln ℓ_d, ln σ_n]`
    pub fn to_log(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim() + 2);
        v.push(self.signal_std.ln());
        v.extend(self.lengthscales.iter().map(|l| l.ln()));
        v.push(self.noise_std.ln());
        v
    }

    pub fn from_log(theta: &[f64]) -> Self {
        let d = theta.len() - 2;
        Hyperparameters {
            signal_std: theta[0].exp(),
            lengthscales: theta[1..=d].iter().map(|t| t.exp()).collect(),
            noise_std: theta[d + 1].exp(),
        }
    }

    pub(crate) fn inv_sq_lengthscales(&self) -> Vec<f64> {
        self.lengthscales.iter().map(|l| 1.0 / (l * l)).collect()
    }
}

/// `σ_f² exp(−½ Σ_d (x_d − x′_d)² / ℓ_d²)`
pub fn kernel_eval(x: &[f64], x_prime: &[f64], hyper: &Hyperparameters) -> Result<f64> {
    if x.len() != x_prime.len() || x.len() != hyper.dim() {
        return Err(Error::invalid(format!(
            "kernel dimension mismatch: {} vs {} with {} lengthscales",
            x.len(),
            x_prime.len(),
            hyper.dim()
        )));
    }
    Ok(se(
        x.iter().copied(),
        x_prime.iter().copied(),
        &hyper.inv_sq_lengthscales(),
        hyper.signal_var(),
    ))
}

#[inline]
pub(crate) fn se(
    x: impl IntoIterator<Item = f64>,
    y: impl IntoIterator<Item = f64>,
    inv_sq_ls: &[f64],
    signal_var: f64,
) -> f64 {
    let r2: f64 = x
        .into_iter()
        .zip(y)
        .zip(inv_sq_ls)
        .map(|((a, b), w)| {
            let d = a - b;
            d * d * w
        })
        .sum();
    signal_var * (-0.5 * r2).exp()
}

/// Noise-free Gram matrix over the columns of `inputs`.
pub fn gram(inputs: &DMatrix<f64>, hyper: &Hyperparameters) -> DMatrix<f64> {
    let m = inputs.ncols();
    let w = hyper.inv_sq_lengthscales();
    let sf2 = hyper.signal_var();
    let mut k = DMatrix::zeros(m, m);
    for j in 0..m {
        k[(j, j)] = sf2;
        for i in (j + 1)..m {
            let v = se(
                inputs.column(i).iter().copied(),
                inputs.column(j).iter().copied(),
                &w,
                sf2,
            );
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Covariances between a test point and every training column.
pub fn cross_covariance(
    inputs: &DMatrix<f64>,
    x: &[f64],
    inv_sq_ls: &[f64],
    signal_var: f64,
) -> DVector<f64> {
    DVector::from_iterator(
        inputs.ncols(),
        inputs
            .column_iter()
            .map(|c| se(c.iter().copied(), x.iter().copied(), inv_sq_ls, signal_var)),
    )
}
