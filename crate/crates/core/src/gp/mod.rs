//! Multi-output Gaussian process regression.

pub mod io;
pub mod kernel;
pub mod likelihood;
pub mod model;
pub mod optimize;

pub use kernel::{gram, kernel_eval, Hyperparameters};
pub use likelihood::{log_marginal_likelihood, log_marginal_likelihood_with_gradient};
pub use model::{MultiOutputGp, OutputGpModel, SubsetSpec};
pub use optimize::{optimize_hyperparameters, OptimizeOptions, OptimizedOutput};
