//! NMSE and encode-time comparison of the quantizers.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution as _, LogNormal, StandardNormal};
use rayon::prelude::*;

use super::HarnessError;
use crate::codec::{decompress, nmse, CompressorSpec};
use crate::rng::{derive_seed, rng_from, Stream};
use crate::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    /// `LogNormal(0, 1)`.
    LogNormal,
    /// `N(0, 1)`.
    Normal,
    /// `U(0, 1)`.
    Uniform,
}

impl Distribution {
    pub fn sample(self, dim: usize, seed: u64) -> DenseVector {
        let mut rng = rng_from(seed);
        let lognormal = LogNormal::new(0.0, 1.0).expect("valid parameters");
        let values: Vec<f64> = (0..dim)
            .map(|_| match self {
                Distribution::LogNormal => lognormal.sample(&mut rng),
                Distribution::Normal => StandardNormal.sample(&mut rng),
                Distribution::Uniform => rng.random::<f64>(),
            })
            .collect();
        DenseVector::from_f64(&values).expect("finite samples")
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distribution::LogNormal => "lognormal",
            Distribution::Normal => "normal",
            Distribution::Uniform => "uniform",
        })
    }
}

impl FromStr for Distribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lognormal" => Ok(Distribution::LogNormal),
            "normal" => Ok(Distribution::Normal),
            "uniform" => Ok(Distribution::Uniform),
            _ => Err(format!("unknown distribution `{s}`")),
        }
    }
}

/// Scheme families swept over the bit budget. QSGD at budget `b` uses
/// `2^b - 1` levels so that level indices fit in `b` bits.
pub const FAMILIES: &[&str] = &["identity", "ecuq", "sq", "hsq", "qsgd"];

/// The compressor of `family` at budget `bits`.
pub fn family_spec(family: &str, bits: u32) -> Option<CompressorSpec> {
    Some(match family {
        "identity" => CompressorSpec::Identity,
        "ecuq" => CompressorSpec::Ecuq {
            bits,
            tolerance: 0.1,
        },
        "sq" => CompressorSpec::Sq { bits },
        "hsq" => CompressorSpec::HadamardSq { bits },
        "qsgd" => CompressorSpec::Qsgd {
            levels: (1u32 << bits.min(31)) - 1,
        },
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub families: Vec<String>,
    pub distributions: Vec<Distribution>,
    pub budgets: Vec<u32>,
    pub dims: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            families: FAMILIES.iter().map(|s| s.to_string()).collect(),
            distributions: vec![
                Distribution::LogNormal,
                Distribution::Normal,
                Distribution::Uniform,
            ],
            budgets: vec![1, 2, 3, 4, 5, 6],
            dims: vec![1 << 10, 1 << 14],
            trials: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub family: String,
    pub spec: String,
    pub distribution: Distribution,
    pub bits: u32,
    pub dim: usize,
    pub trials: usize,
    pub mean_nmse: f64,
    /// Payload plus side information, per coordinate.
    pub mean_bits_per_coord: f64,
    pub mean_encode_micros: f64,
}

/// Mean NMSE and encode time per (family, distribution, budget, dimension).
///
/// Every cell sees the same input vectors for a given distribution,
/// dimension and trial, so schemes are compared on identical data. Cells
/// run in parallel; row order follows the option lists.
pub fn codec_bench(opts: &BenchOptions) -> Result<Vec<BenchRow>, HarnessError> {
    let bad = |field: &str, message: String| HarnessError::Config {
        line: None,
        field: field.into(),
        message,
    };
    if opts.trials == 0 {
        return Err(bad("trials", "must be at least 1".into()));
    }
    let mut cells = Vec::new();
    for family in &opts.families {
        for (di, &dist) in opts.distributions.iter().enumerate() {
            for &bits in &opts.budgets {
                let spec = family_spec(family, bits)
                    .ok_or_else(|| bad("families", format!("unknown family `{family}`")))?;
                for &dim in &opts.dims {
                    if dim == 0 {
                        return Err(bad("dims", "dimensions must be positive".into()));
                    }
                    cells.push((family.clone(), di, dist, bits, spec, dim));
                }
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(family, di, dist, bits, spec, dim)| {
            let (mut err, mut width, mut micros) = (0.0, 0.0, 0.0);
            for trial in 0..opts.trials {
                let input_seed = derive_seed(
                    opts.seed,
                    &[Stream::Bench as u64, di as u64, dim as u64, trial as u64],
                );
                let x = dist.sample(dim, input_seed);
                let start = Instant::now();
                let blob = spec.compress(&x, derive_seed(input_seed, &[bits as u64]))?;
                micros += start.elapsed().as_secs_f64() * 1e6;
                err += nmse(&x, &decompress(&blob)?)?;
                width += blob.total_bits() as f64 / dim as f64;
            }
            let n = opts.trials as f64;
            Ok(BenchRow {
                family,
                spec: spec.to_string(),
                distribution: dist,
                bits,
                dim,
                trials: opts.trials,
                mean_nmse: err / n,
                mean_bits_per_coord: width / n,
                mean_encode_micros: micros / n,
            })
        })
        .collect()
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| HarnessError::Io {
        path: "<bench csv>".into(),
        source: e.into(),
    };
    w.write_record([
        "family",
        "spec",
        "distribution",
        "bits",
        "dim",
        "trials",
        "mean_nmse",
        "mean_bits_per_coord",
        "mean_encode_micros",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record([
            r.family.clone(),
            r.spec.clone(),
            r.distribution.to_string(),
            r.bits.to_string(),
            r.dim.to_string(),
            r.trials.to_string(),
            r.mean_nmse.to_string(),
            r.mean_bits_per_coord.to_string(),
            r.mean_encode_micros.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::Io {
        path: "<bench csv>".into(),
        source: e,
    })
}
