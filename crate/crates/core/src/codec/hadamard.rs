//! Randomized Hadamard rotation: random diagonal signs followed by the
//! orthonormal Walsh-Hadamard transform on the input zero-padded to a
//! power of two.

use rand::Rng;

use super::CodecError;
use crate::rng::rng_from;
use crate::DenseVector;

pub fn padded_len(dim: usize) -> usize {
    dim.next_power_of_two()
}

/// In-place orthonormal fast Walsh-Hadamard transform. `a.len()` must be a
/// power of two.
pub fn fwht(a: &mut [f64]) {
    let n = a.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(2 * h) {
            for i in block..block + h {
                let (x, y) = (a[i], a[i + h]);
                a[i] = x + y;
                a[i + h] = x - y;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / (n as f64).sqrt();
    a.iter_mut().for_each(|v| *v *= scale);
}

fn signs(seed: u64, n: usize) -> Vec<bool> {
    let mut rng = rng_from(seed);
    (0..n).map(|_| rng.random::<bool>()).collect()
}

/// Rotates `values` (zero-padded); output length is the padded length.
pub fn rotate(values: &[f64], seed: u64) -> Vec<f64> {
    let n = padded_len(values.len());
    let mut a = vec![0.0; n];
    a[..values.len()].copy_from_slice(values);
    for (v, flip) in a.iter_mut().zip(signs(seed, n)) {
        if flip {
            *v = -*v;
        }
    }
    fwht(&mut a);
    a
}

/// Inverse of [`rotate`], truncated to `dim` entries.
pub fn unrotate(rotated: &[f64], seed: u64, dim: usize) -> Vec<f64> {
    let n = rotated.len();
    let mut a = rotated.to_vec();
    fwht(&mut a);
    for (v, flip) in a.iter_mut().zip(signs(seed, n)) {
        if flip {
            *v = -*v;
        }
    }
    a.truncate(dim);
    a
}

pub fn hadamard_precondition(x: &DenseVector, seed: u64) -> Result<DenseVector, CodecError> {
    DenseVector::from_f64(&rotate(&x.to_f64(), seed))
}

pub fn hadamard_invert(
    rotated: &DenseVector,
    seed: u64,
    dim: usize,
) -> Result<DenseVector, CodecError> {
    if !rotated.len().is_power_of_two() || dim > rotated.len() || dim == 0 {
        return Err(CodecError::InvalidInput(format!(
            "cannot invert a length-{} rotation to dimension {dim}",
            rotated.len()
        )));
    }
    DenseVector::from_f64(&unrotate(&rotated.to_f64(), seed, dim))
}
