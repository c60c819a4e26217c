use rand::Rng;

use crate::rng::{derive_seed, rng_from, Stream};
use crate::tasks::counterexample_grad;

/// Iterates `w_0, ..., w_T` of direct weight compression on the scalar
/// counterexample.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveTrajectory {
    pub omega: f64,
    pub iterates: Vec<f64>,
}

/// `w <- w - eta f'(w + eps |w|)` with `eps = +-omega` equiprobable: the
/// client sees an unbiased multiplicative perturbation of the weights
/// instead of the weights themselves.
pub fn run_naive_weight_compression(
    omega: f64,
    eta: f64,
    rounds: usize,
    w0: f64,
    seed: u64,
) -> NaiveTrajectory {
    let mut rng = rng_from(derive_seed(seed, &[Stream::Noise as u64]));
    let mut iterates = Vec::with_capacity(rounds + 1);
    let mut w = w0;
    iterates.push(w);
    for _ in 0..rounds {
        let eps = if rng.random::<bool>() { omega } else { -omega };
        w -= eta * counterexample_grad(w + eps * w.abs());
        iterates.push(w);
    }
    NaiveTrajectory { omega, iterates }
}

/// Time average of `iterates[from..]`.
pub fn mean_iterate(iterates: &[f64], from: usize) -> f64 {
    let tail = &iterates[from.min(iterates.len().saturating_sub(1))..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// `E[f'(w + eps |w|)]` under the two-point law, evaluated exactly.
pub fn two_point_residual(w: f64, omega: f64) -> f64 {
    0.5 * (counterexample_grad(w + omega * w.abs()) + counterexample_grad(w - omega * w.abs()))
}

/// Stationary point of the naive iteration, `3 / (3 + omega)`: the root of
/// the expected update for positive `w` straddling the kink at one.
pub fn naive_fixed_point(omega: f64) -> f64 {
    3.0 / (3.0 + omega)
}
