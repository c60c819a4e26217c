//! Uniform quantization grids, empirical densities and entropy.

use std::collections::BTreeMap;

use super::CodecError;
use crate::DenseVector;

/// `K` uniformly spaced bin centers spanning `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationGrid {
    pub x_min: f32,
    pub x_max: f32,
    pub levels: u32,
}

impl QuantizationGrid {
    pub fn new(x_min: f32, x_max: f32, levels: u32) -> Result<Self, CodecError> {
        if levels == 0 {
            return Err(CodecError::InvalidInput(
                "grid needs at least one level".into(),
            ));
        }
        if !(x_min.is_finite() && x_max.is_finite()) || x_max < x_min {
            return Err(CodecError::InvalidInput(format!(
                "bad grid range [{x_min}, {x_max}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            levels,
        })
    }

    /// Grid spanning the range of `x`.
    pub fn spanning(x: &DenseVector, levels: u32) -> Result<Self, CodecError> {
        let (lo, hi) = min_max(x.as_slice());
        Self::new(lo, hi, levels)
    }

    pub fn is_degenerate(&self) -> bool {
        self.x_max == self.x_min
    }

    fn step(&self) -> f64 {
        (self.x_max as f64 - self.x_min as f64) / self.levels as f64
    }

    /// Center of bin `k`.
    pub fn level(&self, k: u32) -> f32 {
        if self.is_degenerate() {
            return self.x_min;
        }
        (self.x_min as f64 + (k as f64 + 0.5) * self.step()) as f32
    }

    pub fn level_values(&self) -> Vec<f32> {
        (0..self.levels).map(|k| self.level(k)).collect()
    }

    /// Index of the nearest center; ties resolve to the lower index.
    pub fn index_of(&self, v: f32) -> u32 {
        if self.is_degenerate() {
            return 0;
        }
        let t = (v as f64 - self.x_min as f64) / self.step();
        let idx = t.ceil() - 1.0;
        idx.clamp(0.0, (self.levels - 1) as f64) as u32
    }

    /// Nearest-center index of every entry.
    pub fn indices(&self, x: &DenseVector) -> Vec<u32> {
        x.iter().map(|&v| self.index_of(v)).collect()
    }

    /// Occupancy of each bin.
    pub fn counts(&self, x: &DenseVector) -> Vec<u64> {
        let mut counts = vec![0u64; self.levels as usize];
        for &v in x.iter() {
            counts[self.index_of(v) as usize] += 1;
        }
        counts
    }
}

pub(crate) fn min_max(values: &[f32]) -> (f32, f32) {
    values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Replaces every entry with its nearest grid level.
pub fn uniform_quantize(
    x: &DenseVector,
    grid: &QuantizationGrid,
) -> Result<DenseVector, CodecError> {
    DenseVector::new(x.iter().map(|&v| grid.level(grid.index_of(v))).collect())
}

/// Relative frequencies of the distinct values of a quantized vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDensity {
    /// Distinct values in ascending order.
    pub support: Vec<f32>,
    pub probabilities: Vec<f64>,
}

impl EmpiricalDensity {
    pub fn probability_of(&self, v: f32) -> Option<f64> {
        self.support
            .iter()
            .position(|&s| s.to_bits() == v.to_bits())
            .map(|i| self.probabilities[i])
    }
}

pub fn empirical_density(q: &DenseVector) -> EmpiricalDensity {
    let mut counts: BTreeMap<OrdF32, u64> = BTreeMap::new();
    for &v in q.iter() {
        // -0.0 and 0.0 are the same level
        let v = if v == 0.0 { 0.0 } else { v };
        *counts.entry(OrdF32(v)).or_default() += 1;
    }
    let n = q.len() as f64;
    let (support, probabilities) = counts.into_iter().map(|(k, c)| (k.0, c as f64 / n)).unzip();
    EmpiricalDensity {
        support,
        probabilities,
    }
}

/// Shannon entropy in bits.
pub fn entropy_bits(p: &EmpiricalDensity) -> f64 {
    entropy_of_probabilities(&p.probabilities)
}

pub(crate) fn entropy_of_probabilities(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum::<f64>()
        .max(0.0)
}

/// Entropy (bits) of the distribution given by occupancy counts.
pub fn entropy_from_counts(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let c = c as f64;
            c * c.log2()
        })
        .sum::<f64>();
    (n.log2() - h / n).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF32(f32);

impl Eq for OrdF32 {}

impl PartialOrd for OrdF32 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF32 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
