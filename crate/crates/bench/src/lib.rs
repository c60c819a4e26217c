//! Input vectors for the codec benchmarks.

use docofl_core::DenseVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

/// Heavy-tailed positive input, the regime anchors and weights live in.
pub fn lognormal(dim: usize, seed: u64) -> DenseVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = LogNormal::new(0.0, 1.0).expect("valid parameters");
    DenseVector::new((0..dim).map(|_| dist.sample(&mut rng) as f32).collect())
        .expect("finite samples")
}
