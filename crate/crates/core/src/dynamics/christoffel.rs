use nalgebra::{DMatrix, DVector};

/// Central-difference step for inertia partials.
pub const FD_STEP: f64 = 1e-6;

/// Coriolis matrix from Christoffel symbols of the first kind,
/// `C_ij = Σ_k ½(∂H_ij/∂q_k + ∂H_ik/∂q_j − ∂H_jk/∂q_i) q̇_k`,
/// with partial derivatives by central differences.
///
/// This choice makes `Ḣ − 2C` skew-symmetric.
pub fn coriolis_from_inertia<F>(inertia: F, q: &DVector<f64>, q_dot: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let n = q.len();
    let partials = inertia_partials(&inertia, q);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += 0.5
                    * (partials[k][(i, j)] + partials[j][(i, k)] - partials[i][(j, k)])
                    * q_dot[k];
            }
            c[(i, j)] = acc;
        }
    }
    c
}

/// `∂H/∂q_k` for each k.
pub fn inertia_partials<F>(inertia: &F, q: &DVector<f64>) -> Vec<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    (0..q.len())
        .map(|k| {
            let mut plus = q.clone();
            let mut minus = q.clone();
            plus[k] += FD_STEP;
            minus[k] -= FD_STEP;
            (inertia(&plus) - inertia(&minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `Ḣ = Σ_k ∂H/∂q_k q̇_k`, as a directional central difference.
pub fn inertia_rate<F>(inertia: F, q: &DVector<f64>, q_dot: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let plus = q + q_dot * FD_STEP;
    let minus = q - q_dot * FD_STEP;
    (inertia(&plus) - inertia(&minus)) / (2.0 * FD_STEP)
}
