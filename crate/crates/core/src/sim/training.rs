use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::NoiseStd;
use crate::dynamics::{ElEstimates, ElModel, StateTriple};
use crate::error::{Error, Result};
use crate::gp::{
    optimize_hyperparameters, Hyperparameters, MultiOutputGp, OptimizeOptions, OptimizedOutput,
};
use crate::region::Region;

/// Where training inputs are placed, over `p = [q̈, q̇, q]`.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingDesign {
    /// Every node of the region's grid.
    Grid(Region),
    /// `count` shifted Halton points over the region's box.
    Lattice { region: Region, count: usize },
}

impl TrainingDesign {
    pub fn region(&self) -> &Region {
        match self {
            TrainingDesign::Grid(r) | TrainingDesign::Lattice { region: r, .. } => r,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TrainingDesign::Grid(r) => r.cardinality(),
            TrainingDesign::Lattice { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// `3n × m`, one column per sample.
    pub inputs: DMatrix<f64>,
    /// `m × n`
    pub targets: DMatrix<f64>,
    pub noise: NoiseStd,
    pub design: TrainingDesign,
}

/// Halton sequence (bases: the first `d` primes) with a seeded
/// Cranley-Patterson shift, mapped onto the region's box.
pub fn lattice_points(region: &Region, count: usize, seed: u64) -> Vec<Vec<f64>> {
    const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    let d = region.dim();
    assert!(
        d <= PRIMES.len(),
        "lattice supports at most {} dimensions",
        PRIMES.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    (1..=count as u64)
        .map(|k| {
            let unit: Vec<f64> = (0..d)
                .map(|i| (radical_inverse(k, PRIMES[i]) + shift[i]).fract())
                .collect();
            region.from_unit(&unit)
        })
        .collect()
}

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut value, mut scale) = (0.0, inv);
    while k > 0 {
        value += (k % base) as f64 * scale;
        k /= base;
        scale *= inv;
    }
    value
}

/// Samples of the residual at noisy measurements of the design points.
///
/// The applied input is the exact inverse dynamics at the true point; the
/// target subtracts the estimated torque at the noisy measurement.
pub fn generate_training_set(
    true_model: &ElModel,
    est: &ElEstimates,
    design: &TrainingDesign,
    noise: NoiseStd,
    seed: u64,
) -> Result<TrainingSet> {
    let n = true_model.dim();
    if design.region().dim() != 3 * n || est.dim() != n {
        return Err(Error::invalid(format!(
            "training region has dimension {}, expected {}",
            design.region().dim(),
            3 * n
        )));
    }
    noise.validate()?;
    let points: Vec<Vec<f64>> = match design {
        TrainingDesign::Grid(r) => r.grid_points().collect(),
        TrainingDesign::Lattice { region, count } => {
            lattice_points(region, *count, seed ^ 0x5DEE_CE66_D1CE_4E5B)
        }
    };
    if points.is_empty() {
        return Err(Error::invalid("training design has no points"));
    }
    let m = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = DMatrix::zeros(3 * n, m);
    let mut targets = DMatrix::zeros(m, n);
    let stds = [noise.q_ddot, noise.q_dot, noise.q];
    for (j, p) in points.iter().enumerate() {
        let truth = StateTriple::from_stacked(p)?;
        let u = true_model.inverse_dynamics(&truth);
        let noisy: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + stds[i / n] * z
            })
            .collect();
        let meas = StateTriple::from_stacked(&noisy)?;
        let tau = u - est.torque(&meas);
        inputs.set_column(j, &DVector::from_vec(noisy));
        targets.set_row(j, &tau.transpose());
    }
    Ok(TrainingSet {
        inputs,
        targets,
        noise,
        design: design.clone(),
    })
}

pub fn generate_training_grid(
    true_model: &ElModel,
    est: &ElEstimates,
    grid: &Region,
    noise: NoiseStd,
    seed: u64,
) -> Result<TrainingSet> {
    generate_training_set(
        true_model,
        est,
        &TrainingDesign::Grid(grid.clone()),
        noise,
        seed,
    )
}

/// Lengthscale held on design axes of zero extent. The data carry no
/// information along such an axis; only measurement noise varies there.
pub const FLAT_AXIS_LENGTHSCALE: f64 = 1e3;

/// Indices of design axes with `lower == upper`.
pub fn flat_axes(design: &TrainingDesign) -> Vec<usize> {
    let r = design.region();
    (0..r.dim())
        .filter(|&d| r.lower()[d] == r.upper()[d])
        .collect()
}

/// Unit lengthscales ([`FLAT_AXIS_LENGTHSCALE`] on flat axes), sample standard
/// deviation as signal scale, a tenth of it as noise.
pub fn default_initial_hyper(set: &TrainingSet) -> Vec<Hyperparameters> {
    let d = set.inputs.nrows();
    let flat = flat_axes(&set.design);
    let lengthscales: Vec<f64> = (0..d)
        .map(|i| {
            if flat.contains(&i) {
                FLAT_AXIS_LENGTHSCALE
            } else {
                1.0
            }
        })
        .collect();
    set.targets
        .column_iter()
        .map(|col| {
            let m = col.len() as f64;
            let mean = col.sum() / m;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m)
                .sqrt()
                .max(1e-3);
            Hyperparameters {
                signal_std: std,
                lengthscales: lengthscales.clone(),
                noise_std: 0.1 * std,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainedGp {
    pub gp: MultiOutputGp,
    pub optimized: Vec<OptimizedOutput>,
}

/// Optimizes hyperparameters from `init` (or [`default_initial_hyper`]) and fits.
/// Lengthscales on flat design axes are held at their initial value.
pub fn train_gp(
    set: &TrainingSet,
    init: Option<Vec<Hyperparameters>>,
    opts: &OptimizeOptions,
) -> Result<TrainedGp> {
    let init = init.unwrap_or_else(|| default_initial_hyper(set));
    let mut opts = opts.clone();
    for d in flat_axes(&set.design) {
        if !opts.fixed_lengthscales.contains(&d) {
            opts.fixed_lengthscales.push(d);
        }
    }
    let optimized = optimize_hyperparameters(&set.inputs, &set.targets, &init, &opts)?;
    let hyper: Vec<_> = optimized.iter().map(|o| o.hyper.clone()).collect();
    let gp = MultiOutputGp::fit(set.inputs.clone(), &set.targets, &hyper)?;
    Ok(TrainedGp { gp, optimized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        one_dof_model, residual_tau, two_link_model, ScalarLinear, TwoLinkArm, UnknownDynamics,
    };
    use std::sync::Arc;

    #[test]
    fn perfect_model_has_zero_targets() {
        let model = two_link_model(1.0, 1.0, 1.0, 1.0).unwrap();
        let est = ElEstimates::new(model.rigid.clone(), 0.01, 3.0, 1.0).unwrap();
        let region = Region::uniform(vec![0.0; 6], vec![1.0; 6], 2).unwrap();
        let set = generate_training_grid(&model, &est, &region, NoiseStd::default(), 0).unwrap();
        assert_eq!(set.inputs.ncols(), 64);
        assert!(set.targets.amax() < 1e-12);
    }

    #[test]
    fn one_dof_slice_has_441_points() {
        let model = one_dof_model(1.0);
        let est = ElEstimates::new(Arc::new(ScalarLinear::unit()), 1.0, 1.0, 1.0).unwrap();
        let region = Region::uniform(vec![0.0, -1.0, -1.0], vec![0.0, 1.0, 1.0], 21).unwrap();
        let set =
            generate_training_grid(&model, &est, &region, NoiseStd::uniform(0.04), 3).unwrap();
        assert_eq!(set.inputs.ncols(), 441);
        assert_eq!(set.targets.nrows(), 441);
    }

    #[test]
    fn noise_free_targets_equal_residual() {
        let model = two_link_model(1.0, 1.0, 1.0, 1.0)
            .unwrap()
            .with_unknown(UnknownDynamics::TwoLink);
        let est = ElEstimates::new(
            Arc::new(TwoLinkArm::new(0.9, 1.1, 0.9, 1.1).unwrap()),
            0.01,
            3.0,
            1.0,
        )
        .unwrap();
        let region = Region::new(
            vec![0.0, 0.0, -1.0, -1.0, 0.0, 0.0],
            vec![1.0; 6],
            vec![2; 6],
        )
        .unwrap();
        let design = TrainingDesign::Lattice { region, count: 50 };
        let set = generate_training_set(&model, &est, &design, NoiseStd::default(), 9).unwrap();
        for j in 0..50 {
            let p = StateTriple::from_stacked(set.inputs.column(j).as_slice()).unwrap();
            let r = residual_tau(&model, &est, &p);
            assert!((r.transpose() - set.targets.row(j)).amax() < 1e-12);
        }
    }

    #[test]
    fn lattice_fills_the_box_evenly() {
        let region = Region::new(vec![0.0; 6], vec![1.0; 6], vec![2; 6]).unwrap();
        let pts = lattice_points(&region, 576, 1);
        assert_eq!(pts.len(), 576);
        assert!(pts.iter().all(|p| region.contains(p)));
        // each axis: every tenth of the range receives close to a tenth of the points
        for d in 0..6 {
            let mut bins = [0usize; 10];
            for p in &pts {
                bins[((p[d] * 10.0) as usize).min(9)] += 1;
            }
            assert!(
                bins.iter().all(|&b| (52..=64).contains(&b)),
                "axis {d}: {bins:?}"
            );
        }
        assert_eq!(pts, lattice_points(&region, 576, 1));
        assert_ne!(pts, lattice_points(&region, 576, 2));
    }

    #[test]
    fn radical_inverse_digits() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(6, 2), 0.375);
        assert!((radical_inverse(5, 3) - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn flat_axis_lengthscale_is_held() {
        let model = one_dof_model(1.0);
        let est = ElEstimates::new(Arc::new(ScalarLinear::unit()), 1.0, 1.0, 1.0).unwrap();
        let region = Region::uniform(vec![0.0, -1.0, -1.0], vec![0.0, 1.0, 1.0], 7).unwrap();
        let set =
            generate_training_grid(&model, &est, &region, NoiseStd::uniform(0.04), 3).unwrap();
        assert_eq!(flat_axes(&set.design), vec![0]);
        let opts = OptimizeOptions {
            max_iters: 20,
            ..Default::default()
        };
        let t = train_gp(&set, None, &opts).unwrap();
        let ls = &t.optimized[0].hyper.lengthscales;
        assert_eq!(ls[0], FLAT_AXIS_LENGTHSCALE);
        assert_ne!(ls[1], 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let model = one_dof_model(0.0);
        let est = ElEstimates::new(Arc::new(ScalarLinear::unit()), 1.0, 1.0, 1.0).unwrap();
        let region = Region::uniform(vec![0.0; 2], vec![1.0; 2], 3).unwrap();
        assert!(generate_training_grid(&model, &est, &region, NoiseStd::default(), 0).is_err());
    }
}
