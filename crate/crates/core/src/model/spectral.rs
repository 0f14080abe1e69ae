use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{TensorRole, TransformerParams};

pub const DEFAULT_MAX_ITERS: usize = 2000;
pub const DEFAULT_TOL: f64 = 1e-12;

/// Largest singular value by power iteration on `MᵀM`.
///
/// The start vector is drawn from a fixed seed, so the result is a pure
/// function of the matrix. Stops once the Rayleigh quotient changes by at most
/// `tol` relative to its value.
pub fn spectral_norm(m: &Array2<f64>, max_iters: usize, tol: f64) -> f64 {
    let cols = m.ncols();
    if m.is_empty() || m.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5bd1_e995);
    let mut v: Array1<f64> = Array1::from_shape_fn(cols, |_| rng.random_range(0.5..1.5));
    v /= norm(&v);
    let mut lambda = 0.0_f64;
    for _ in 0..max_iters.max(1) {
        let mv = m.dot(&v);
        let next_lambda = mv.dot(&mv);
        let w = m.t().dot(&mv);
        let nw = norm(&w);
        if nw == 0.0 {
            // v landed in the kernel; the quotient so far is the best estimate.
            return next_lambda.max(lambda).sqrt();
        }
        v = w / nw;
        let done = (next_lambda - lambda).abs() <= tol * next_lambda;
        lambda = next_lambda;
        if done {
            break;
        }
    }
    let mv = m.dot(&v);
    mv.dot(&mv).max(lambda).sqrt()
}

/// `W ← W / max(1, σ_max(W))`. Returns the norm before projection.
pub fn project_matrix(m: &mut Array2<f64>) -> f64 {
    let sigma = spectral_norm(m, DEFAULT_MAX_ITERS, DEFAULT_TOL);
    if sigma > 1.0 {
        *m /= sigma;
    }
    sigma
}

/// Projects every weight matrix into the unit spectral ball; biases are untouched.
pub fn project_spectral_ball(params: &mut TransformerParams) {
    for (t, role) in params.tensors_mut() {
        if role == TensorRole::Weight {
            project_matrix(t);
        }
    }
}

/// Largest spectral norm over all weight matrices.
pub fn max_spectral_norm(params: &TransformerParams) -> f64 {
    params
        .tensors()
        .into_iter()
        .filter(|(_, r)| *r == TensorRole::Weight)
        .map(|(t, _)| spectral_norm(t, DEFAULT_MAX_ITERS, DEFAULT_TOL))
        .fold(0.0, f64::max)
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}
