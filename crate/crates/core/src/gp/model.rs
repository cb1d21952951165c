use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};

use super::kernel::{cross_covariance, gram, Hyperparameters};
use crate::error::{Error, Result};

/// Relative jitter ladder applied to `trace(K)/m` before Cholesky.
pub const JITTER_LADDER: [f64; 7] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Lower Cholesky factor of `K + (σ_n² + jitter)·I`, escalating the jitter
/// through [`JITTER_LADDER`]. Returns the factor and the absolute jitter used.
pub fn factor_with_jitter(k: &DMatrix<f64>, noise_var: f64) -> Result<(DMatrix<f64>, f64)> {
    let m = k.nrows();
    let scale = (k.trace() / m as f64).max(f64::MIN_POSITIVE);
    let mut attempted = Vec::with_capacity(JITTER_LADDER.len());
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        attempted.push(jitter);
        let mut a = k.clone();
        for i in 0..m {
            a[(i, i)] += noise_var + jitter;
        }
        if let Some(chol) = a.cholesky() {
            return Ok((chol.unpack(), jitter));
        }
    }
    Err(Error::Conditioning { attempted })
}

/// Retained input dimensions for a marginal prediction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubsetSpec {
    indices: Vec<usize>,
}

impl SubsetSpec {
    pub fn new(indices: Vec<usize>, input_dim: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("subset must retain at least one dimension"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "subset indices must be strictly increasing: {indices:?}"
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= input_dim) {
            return Err(Error::invalid(format!(
                "subset index {bad} out of range for input dimension {input_dim}"
            )));
        }
        Ok(SubsetSpec { indices })
    }

    pub fn range(start: usize, end: usize, input_dim: usize) -> Result<Self> {
        Self::new((start..end).collect(), input_dim)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// One output dimension of a fitted GP.
#[derive(Clone)]
pub struct OutputGpModel {
    inputs: Arc<DMatrix<f64>>,
    targets: DVector<f64>,
    hyper: Hyperparameters,
    chol_factor: DMatrix<f64>,
    weight_vector: DVector<f64>,
    jitter: f64,
    inv_sq_ls: Vec<f64>,
}

impl fmt::Debug for OutputGpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OutputGpModel")
            .field("m", &self.inputs.ncols())
            .field("hyper", &self.hyper)
            .field("jitter", &self.jitter)
            .finish()
    }
}

impl OutputGpModel {
    pub fn fit(
        inputs: Arc<DMatrix<f64>>,
        targets: DVector<f64>,
        hyper: Hyperparameters,
    ) -> Result<Self> {
        hyper.validate()?;
        if inputs.ncols() == 0 {
            return Err(Error::invalid("training set is empty"));
        }
        if inputs.nrows() != hyper.dim() {
            return Err(Error::invalid(format!(
                "input dimension {} does not match {} lengthscales",
                inputs.nrows(),
                hyper.dim()
            )));
        }
        if targets.len() != inputs.ncols() {
            return Err(Error::invalid(format!(
                "{} targets for {} inputs",
                targets.len(),
                inputs.ncols()
            )));
        }
        let k = gram(&inputs, &hyper);
        let (chol_factor, jitter) = factor_with_jitter(&k, hyper.noise_var())?;
        let weight_vector = chol_solve(&chol_factor, &targets);
        let inv_sq_ls = hyper.inv_sq_lengthscales();
        Ok(OutputGpModel {
            inputs,
            targets,
            hyper,
            chol_factor,
            weight_vector,
            jitter,
            inv_sq_ls,
        })
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn chol_factor(&self) -> &DMatrix<f64> {
        &self.chol_factor
    }

    pub fn weight_vector(&self) -> &DVector<f64> {
        &self.weight_vector
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn kstar(&self, x: &[f64]) -> DVector<f64> {
        cross_covariance(&self.inputs, x, &self.inv_sq_ls, self.hyper.signal_var())
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.kstar(x).dot(&self.weight_vector)
    }

    pub fn variance(&self, x: &[f64]) -> f64 {
        let k = self.kstar(x);
        self.variance_from_kstar(k)
    }

    fn variance_from_kstar(&self, mut k: DVector<f64>) -> f64 {
        self.chol_factor.solve_lower_triangular_mut(&mut k);
        (self.hyper.signal_var() - k.norm_squared()).max(0.0)
    }

    pub fn mean_and_variance(&self, x: &[f64]) -> (f64, f64) {
        let k = self.kstar(x);
        let mean = k.dot(&self.weight_vector);
        (mean, self.variance_from_kstar(k))
    }

    /// `sqrt(αᵀ K α)`: RKHS norm of the posterior mean function.
    pub fn posterior_mean_rkhs_norm(&self) -> f64 {
        let k = gram(&self.inputs, &self.hyper);
        let ka = &k * &self.weight_vector;
        self.weight_vector.dot(&ka).max(0.0).sqrt()
    }
}

fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

type MarginalCache = RwLock<HashMap<SubsetSpec, Arc<Vec<OutputGpModel>>>>;

/// Independent per-output GPs over a shared training input matrix.
///
/// Inputs are stored column-wise: each column of the `d × m` matrix is one
/// training point.
pub struct MultiOutputGp {
    inputs: Arc<DMatrix<f64>>,
    outputs: Vec<OutputGpModel>,
    marginal_models: MarginalCache,
}

impl fmt::Debug for MultiOutputGp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiOutputGp")
            .field("input_dim", &self.input_dim())
            .field("m", &self.num_points())
            .field("outputs", &self.outputs)
            .finish()
    }
}

impl Clone for MultiOutputGp {
    fn clone(&self) -> Self {
        let cache = self
            .marginal_models
            .read()
            .expect("marginal cache poisoned")
            .clone();
        MultiOutputGp {
            inputs: Arc::clone(&self.inputs),
            outputs: self.outputs.clone(),
            marginal_models: RwLock::new(cache),
        }
    }
}

impl MultiOutputGp {
    /// Fits one GP per column of `targets` (shape `m × n`).
    pub fn fit(
        inputs: DMatrix<f64>,
        targets: &DMatrix<f64>,
        hyper: &[Hyperparameters],
    ) -> Result<Self> {
        if inputs.ncols() == 0 {
            return Err(Error::invalid("training set is empty"));
        }
        if targets.nrows() != inputs.ncols() {
            return Err(Error::invalid(format!(
                "{} target rows for {} input columns",
                targets.nrows(),
                inputs.ncols()
            )));
        }
        if targets.ncols() != hyper.len() || hyper.is_empty() {
            return Err(Error::invalid(format!(
                "{} hyperparameter sets for {} outputs",
                hyper.len(),
                targets.ncols()
            )));
        }
        let inputs = Arc::new(inputs);
        let outputs = hyper
            .iter()
            .enumerate()
            .map(|(i, h)| {
                OutputGpModel::fit(
                    Arc::clone(&inputs),
                    targets.column(i).into_owned(),
                    h.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiOutputGp {
            inputs,
            outputs,
            marginal_models: RwLock::new(HashMap::new()),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    pub fn num_points(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &[OutputGpModel] {
        &self.outputs
    }

    pub fn hyperparameters(&self) -> Vec<Hyperparameters> {
        self.outputs.iter().map(|o| o.hyper.clone()).collect()
    }

    pub fn signal_vars(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.outputs.len(),
            self.outputs.iter().map(|o| o.hyper.signal_var()),
        )
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "test input has {} entries, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(DVector::from_iterator(
            self.outputs.len(),
            self.outputs.iter().map(|o| o.mean(x)),
        ))
    }

    /// Diagonal of the predictive variance matrix.
    pub fn predict_variance(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(DVector::from_iterator(
            self.outputs.len(),
            self.outputs.iter().map(|o| o.variance(x)),
        ))
    }

    /// Mean and variance diagonal in one pass.
    pub fn predict(&self, x: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_dim(x)?;
        let n = self.outputs.len();
        let mut mean = DVector::zeros(n);
        let mut var = DVector::zeros(n);
        for (i, o) in self.outputs.iter().enumerate() {
            let (m, v) = o.mean_and_variance(x);
            mean[i] = m;
            var[i] = v;
        }
        Ok((mean, var))
    }

    /// Per-output models refit on the projected inputs, cached per subset.
    pub fn marginal_models(&self, spec: &SubsetSpec) -> Result<Arc<Vec<OutputGpModel>>> {
        if let Some(idx) = spec.indices().iter().find(|&&i| i >= self.input_dim()) {
            return Err(Error::invalid(format!("subset index {idx} out of range")));
        }
        if let Some(models) = self
            .marginal_models
            .read()
            .expect("marginal cache poisoned")
            .get(spec)
        {
            return Ok(Arc::clone(models));
        }
        let models = if spec.len() == self.input_dim() {
            Arc::new(self.outputs.clone())
        } else {
            let projected = Arc::new(self.inputs.select_rows(spec.indices()));
            let fitted = self
                .outputs
                .iter()
                .map(|o| {
                    OutputGpModel::fit(
                        Arc::clone(&projected),
                        o.targets.clone(),
                        o.hyper.restrict(spec.indices()),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Arc::new(fitted)
        };
        let mut cache = self
            .marginal_models
            .write()
            .expect("marginal cache poisoned");
        Ok(Arc::clone(cache.entry(spec.clone()).or_insert(models)))
    }

    /// Diagonal of the marginal variance given only the retained coordinates `x1`.
    pub fn marginal_variance(&self, spec: &SubsetSpec, x1: &[f64]) -> Result<DVector<f64>> {
        if x1.len() != spec.len() {
            return Err(Error::invalid(format!(
                "marginal input has {} entries, subset retains {}",
                x1.len(),
                spec.len()
            )));
        }
        let models = self.marginal_models(spec)?;
        Ok(DVector::from_iterator(
            models.len(),
            models.iter().map(|o| o.variance(x1)),
        ))
    }

    /// Marginal variance of a single output component.
    pub fn marginal_variance_component(
        &self,
        spec: &SubsetSpec,
        output: usize,
        x1: &[f64],
    ) -> Result<f64> {
        if output >= self.output_dim() {
            return Err(Error::invalid(format!(
                "output index {output} out of range"
            )));
        }
        if x1.len() != spec.len() {
            return Err(Error::invalid(
                "marginal input length does not match subset",
            ));
        }
        Ok(self.marginal_models(spec)?[output].variance(x1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(points: &[f64], targets: &[f64], hyper: Hyperparameters) -> MultiOutputGp {
        let x = DMatrix::from_row_slice(1, points.len(), points);
        let y = DMatrix::from_column_slice(targets.len(), 1, targets);
        MultiOutputGp::fit(x, &y, &[hyper]).unwrap()
    }

    #[test]
    fn single_point_interpolation() {
        let gp = one_d(
            &[0.0],
            &[1.0],
            Hyperparameters::new(1.0, vec![1.0], 1e-6).unwrap(),
        );
        assert!((gp.predict_mean(&[0.0]).unwrap()[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn empty_training_set_rejected() {
        let x = DMatrix::<f64>::zeros(1, 0);
        let y = DMatrix::<f64>::zeros(0, 1);
        let h = Hyperparameters::new(1.0, vec![1.0], 0.1).unwrap();
        assert!(matches!(
            MultiOutputGp::fit(x, &y, &[h]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn chol_factor_reconstructs_regularized_gram() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.37).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.cos()).collect();
        let h = Hyperparameters::new(1.3, vec![0.8], 0.05).unwrap();
        let gp = one_d(&xs, &ys, h.clone());
        let o = &gp.outputs()[0];
        let mut target = gram(o.inputs(), &h);
        for i in 0..xs.len() {
            target[(i, i)] += h.noise_var() + o.jitter();
        }
        let l = o.chol_factor();
        let rel = (l * l.transpose() - &target).norm() / target.norm();
        assert!(rel < 1e-8, "{rel}");
        let resid = (&target * o.weight_vector() - o.targets()).amax();
        assert!(resid < 1e-10, "{resid}");
    }

    #[test]
    fn far_away_reverts_to_prior() {
        let gp = one_d(
            &[0.0, 0.5, 1.0],
            &[1.0, -2.0, 0.5],
            Hyperparameters::new(1.7, vec![0.5], 0.1).unwrap(),
        );
        let (m, v) = gp.predict(&[10.0 + 20.0 * 0.5]).unwrap();
        assert!(m[0].abs() < 1e-6);
        assert!((v[0] - 1.7 * 1.7).abs() < 1e-6);
    }

    #[test]
    fn variance_collapses_at_observations() {
        let h = Hyperparameters::new(1.0, vec![0.7], 1e-3).unwrap();
        let gp = one_d(&[-1.0, 0.0, 1.3], &[0.2, 0.4, -0.1], h);
        let v = gp.predict_variance(&[0.0]).unwrap();
        assert!(v[0] <= 1e-6 + 1e-6);
        assert!(v[0] >= 0.0);
    }

    #[test]
    fn dimension_mismatch_on_predict() {
        let gp = one_d(
            &[0.0],
            &[1.0],
            Hyperparameters::new(1.0, vec![1.0], 0.1).unwrap(),
        );
        assert!(gp.predict_mean(&[0.0, 1.0]).is_err());
        assert!(gp.predict_variance(&[]).is_err());
    }

    #[test]
    fn subset_spec_validation() {
        assert!(SubsetSpec::new(vec![], 3).is_err());
        assert!(SubsetSpec::new(vec![1, 1], 3).is_err());
        assert!(SubsetSpec::new(vec![2, 1], 3).is_err());
        assert!(SubsetSpec::new(vec![3], 3).is_err());
        assert!(SubsetSpec::new(vec![0, 2], 3).is_ok());
    }

    #[test]
    fn full_subset_equals_predict_variance() {
        let x = DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.3, -0.7, 0.5, -0.2, 0.9, 0.1]);
        let y = DMatrix::from_column_slice(4, 2, &[1.0, 0.0, 0.5, 0.2, -1.0, 0.3, 0.2, 0.8]);
        let h = [
            Hyperparameters::new(1.0, vec![0.6, 1.1], 0.1).unwrap(),
            Hyperparameters::new(0.5, vec![2.0, 0.4], 0.2).unwrap(),
        ];
        let gp = MultiOutputGp::fit(x, &y, &h).unwrap();
        let spec = SubsetSpec::range(0, 2, 2).unwrap();
        let a = gp.marginal_variance(&spec, &[0.2, 0.4]).unwrap();
        let b = gp.predict_variance(&[0.2, 0.4]).unwrap();
        assert!((a - b).amax() < 1e-12);
        // cached on second call
        let first = gp.marginal_models(&spec).unwrap();
        let second = gp.marginal_models(&spec).unwrap();
        assert!(Arc::ptr_eq(&first, &second));
    }

    #[test]
    fn shared_inputs_across_outputs() {
        let x = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 2.0]);
        let y = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.5, 0.2, -1.0, 0.3]);
        let h = Hyperparameters::new(1.0, vec![1.0], 0.1).unwrap();
        let gp = MultiOutputGp::fit(x, &y, &[h.clone(), h]).unwrap();
        assert!(std::ptr::eq(
            gp.outputs()[0].inputs(),
            gp.outputs()[1].inputs()
        ));
    }
}
