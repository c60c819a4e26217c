//! Vector compressors with exact bit accounting.
//!
//! Every compressor turns a [`DenseVector`] into a self-describing
//! [`EncodedBlob`]; [`decompress`] dispatches on the blob's scheme tag.
//! Randomized compressors are pure functions of `(input, parameters, seed)`.

mod bits;
mod blob;
pub mod ecuq;
pub mod grid;
pub mod hadamard;
mod hsq;
pub mod huffman;
mod metrics;
pub mod qsgd;
mod simple;
pub mod sparse;
pub mod sq;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use bits::{elias_gamma_len, index_width, BitReader, BitWriter};
pub use blob::{EncodedBlob, SchemeId};
pub use ecuq::{ecuq_decode, ecuq_encode, EcuqOutcome};
pub use grid::{
    empirical_density, entropy_bits, entropy_from_counts, uniform_quantize, EmpiricalDensity,
    QuantizationGrid,
};
pub use hadamard::{hadamard_invert, hadamard_precondition};
pub use hsq::{hadamard_sq_decode, hadamard_sq_encode};
pub use huffman::{huffman_decode, huffman_encode, HuffmanCode};
pub use metrics::nmse;
pub use qsgd::{qsgd_decode, qsgd_encode};
pub use simple::{identity_encode, two_point_encode, xor_delta_apply, xor_delta_encode};
pub use sparse::{randk_encode, randk_sq_encode, sparse_decode, topk_encode};
pub use sq::{sq_decode, stochastic_quantize};

use crate::DenseVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite entry {value} at index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("value {0} is not in the codebook support")]
    SymbolOutsideSupport(f64),
    #[error("corrupt blob: {0}")]
    Corrupt(String),
    #[error("blob has scheme {actual:?}, expected {expected:?}")]
    WrongScheme {
        expected: SchemeId,
        actual: SchemeId,
    },
    #[error("NMSE is undefined for a zero-norm reference")]
    ZeroNorm,
    #[error("bad compressor spec `{0}`")]
    BadSpec(String),
}

/// Measured NMSE ceiling coefficients of Hadamard + stochastic quantization,
/// indexed by bit width (entry 0 unused). After rotation the coordinate range
/// grows like `sqrt(ln n)`, so the ceiling is `c_b * ln(2n)` for padded
/// length `n`. Each `c_b` is the worst Monte-Carlo ratio over Gaussian,
/// uniform, log-normal and one-hot inputs with `d` in 16..=65536, plus 25%.
pub const HADAMARD_SQ_CEILING_COEFF: [f64; 9] = [
    f64::NAN,
    1.85,
    0.155,
    0.027,
    0.006,
    0.0014,
    0.00033,
    0.00009,
    0.000025,
];

/// NMSE ceiling `omega^2` of Hadamard + SQ at `bits` for a `dim`-vector.
pub fn hadamard_sq_ceiling(bits: u32, dim: usize) -> f64 {
    let c = match HADAMARD_SQ_CEILING_COEFF.get(bits as usize) {
        Some(&c) if bits > 0 => c,
        _ => HADAMARD_SQ_CEILING_COEFF[8] * 4f64.powi(8 - bits as i32),
    };
    let n = hadamard::padded_len(dim) as f64;
    c * (2.0 * n).ln()
}

/// Declared statistical behaviour of a compressor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressorContract {
    pub unbiased: bool,
    /// `E||C(x) - x||^2 <= bound * ||x||^2`; `None` when no finite bound holds.
    pub nmse_bound: Option<f64>,
}

impl CompressorContract {
    /// `sqrt` of the NMSE bound (the `omega` used by step-size formulas).
    pub fn omega(&self) -> Option<f64> {
        self.nmse_bound.map(f64::sqrt)
    }
}

/// Compressor choice and parameters, as written in experiment configs.
///
/// Text forms: `identity`, `ecuq:<b>[:<eps>]`, `sq:<b>`, `hsq:<b>` (a
/// budget below one bit selects the sub-bit composition), `rksq:<fraction>:<b>`,
/// `qsgd:<s>`, `randk:<fraction>`, `topk:<fraction>`, `noise:<omega>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompressorSpec {
    Identity,
    Ecuq { bits: u32, tolerance: f64 },
    Sq { bits: u32 },
    HadamardSq { bits: u32 },
    RandKSq { fraction: f64, bits: u32 },
    Qsgd { levels: u32 },
    RandK { fraction: f64 },
    TopK { fraction: f64 },
    TwoPoint { omega: f64 },
}

impl CompressorSpec {
    pub fn is_lossless(&self) -> bool {
        matches!(self, CompressorSpec::Identity)
            || matches!(self, CompressorSpec::RandK { fraction } | CompressorSpec::TopK { fraction } if *fraction >= 1.0)
            || matches!(self, CompressorSpec::TwoPoint { omega } if *omega == 0.0)
    }

    /// Nominal payload bits per coordinate, where the scheme has one.
    pub fn nominal_bits(&self) -> Option<f64> {
        match *self {
            CompressorSpec::Identity => Some(crate::FULL_PRECISION_BITS as f64),
            CompressorSpec::Ecuq { bits, .. }
            | CompressorSpec::Sq { bits }
            | CompressorSpec::HadamardSq { bits } => Some(bits as f64),
            CompressorSpec::RandKSq { fraction, bits } => Some(fraction * bits as f64),
            _ => None,
        }
    }

    pub fn keep_count(fraction: f64, dim: usize) -> usize {
        ((fraction * dim as f64).round() as usize).clamp(1, dim)
    }

    pub fn contract(&self, dim: usize) -> CompressorContract {
        let (unbiased, nmse_bound) = match *self {
            CompressorSpec::Identity => (true, Some(0.0)),
            CompressorSpec::Ecuq { .. } => (false, None),
            CompressorSpec::Sq { .. } => (true, None),
            CompressorSpec::HadamardSq { bits } => (true, Some(hadamard_sq_ceiling(bits, dim))),
            CompressorSpec::RandKSq { .. } => (true, None),
            CompressorSpec::Qsgd { levels } => {
                let (d, s) = (dim as f64, levels as f64);
                (true, Some((d / (s * s)).min(d.sqrt() / s)))
            }
            CompressorSpec::RandK { fraction } => {
                let k = Self::keep_count(fraction, dim) as f64;
                (true, Some(dim as f64 / k - 1.0))
            }
            CompressorSpec::TopK { fraction } => {
                let k = Self::keep_count(fraction, dim) as f64;
                (false, Some(1.0 - k / dim as f64))
            }
            CompressorSpec::TwoPoint { omega } => (true, Some(omega * omega)),
        };
        CompressorContract {
            unbiased,
            nmse_bound,
        }
    }

    pub fn compress(&self, x: &DenseVector, seed: u64) -> Result<EncodedBlob, CodecError> {
        match *self {
            CompressorSpec::Identity => Ok(identity_encode(x)),
            CompressorSpec::Ecuq { bits, tolerance } => Ok(ecuq_encode(x, bits, tolerance)?.blob),
            CompressorSpec::Sq { bits } => stochastic_quantize(x, bits, seed),
            CompressorSpec::HadamardSq { bits } => hadamard_sq_encode(x, bits, seed),
            CompressorSpec::RandKSq { fraction, bits } => randk_sq_encode(x, fraction, bits, seed),
            CompressorSpec::Qsgd { levels } => qsgd_encode(x, levels, seed),
            CompressorSpec::RandK { fraction } => {
                randk_encode(x, Self::keep_count(fraction, x.len()), seed)
            }
            CompressorSpec::TopK { fraction } => {
                topk_encode(x, Self::keep_count(fraction, x.len()))
            }
            CompressorSpec::TwoPoint { omega } => two_point_encode(x, omega, seed),
        }
    }

    /// Encode then decode.
    pub fn roundtrip(&self, x: &DenseVector, seed: u64) -> Result<DenseVector, CodecError> {
        decompress(&self.compress(x, seed)?)
    }
}

impl fmt::Display for CompressorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            CompressorSpec::Identity => write!(f, "identity"),
            CompressorSpec::Ecuq { bits, tolerance } => write!(f, "ecuq:{bits}:{tolerance}"),
            CompressorSpec::Sq { bits } => write!(f, "sq:{bits}"),
            CompressorSpec::HadamardSq { bits } => write!(f, "hsq:{bits}"),
            CompressorSpec::RandKSq { fraction, bits } => write!(f, "rksq:{fraction}:{bits}"),
            CompressorSpec::Qsgd { levels } => write!(f, "qsgd:{levels}"),
            CompressorSpec::RandK { fraction } => write!(f, "randk:{fraction}"),
            CompressorSpec::TopK { fraction } => write!(f, "topk:{fraction}"),
            CompressorSpec::TwoPoint { omega } => write!(f, "noise:{omega}"),
        }
    }
}

impl FromStr for CompressorSpec {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CodecError::BadSpec(s.to_string());
        let mut parts = s.trim().split(':');
        let name = parts.next().ok_or_else(bad)?.to_ascii_lowercase();
        let args: Vec<&str> = parts.collect();
        let int = |i: usize| -> Result<u32, CodecError> {
            args.get(i)
                .ok_or_else(bad)?
                .parse::<u32>()
                .map_err(|_| bad())
        };
        let real = |i: usize| -> Result<f64, CodecError> {
            let v = args
                .get(i)
                .ok_or_else(bad)?
                .parse::<f64>()
                .map_err(|_| bad())?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad())
            }
        };
        let fraction = |i: usize| -> Result<f64, CodecError> {
            let v = real(i)?;
            if v > 0.0 && v <= 1.0 {
                Ok(v)
            } else {
                Err(bad())
            }
        };
        let arity = |n: &[usize]| {
            if n.contains(&args.len()) {
                Ok(())
            } else {
                Err(bad())
            }
        };
        let spec = match name.as_str() {
            "identity" | "none" => {
                arity(&[0])?;
                CompressorSpec::Identity
            }
            "ecuq" => {
                arity(&[1, 2])?;
                let tolerance = if args.len() == 2 {
                    real(1)?
                } else {
                    ecuq::DEFAULT_TOLERANCE
                };
                if tolerance <= 0.0 {
                    return Err(bad());
                }
                CompressorSpec::Ecuq {
                    bits: int(0)?,
                    tolerance,
                }
            }
            "sq" => {
                arity(&[1])?;
                CompressorSpec::Sq { bits: int(0)? }
            }
            "hsq" => {
                arity(&[1])?;
                let b = real(0)?;
                if b > 0.0 && b < 1.0 {
                    CompressorSpec::RandKSq {
                        fraction: b,
                        bits: 1,
                    }
                } else if b >= 1.0 && b.fract() == 0.0 {
                    CompressorSpec::HadamardSq { bits: b as u32 }
                } else {
                    return Err(bad());
                }
            }
            "rksq" => {
                arity(&[2])?;
                CompressorSpec::RandKSq {
                    fraction: fraction(0)?,
                    bits: int(1)?,
                }
            }
            "qsgd" => {
                arity(&[1])?;
                CompressorSpec::Qsgd { levels: int(0)? }
            }
            "randk" => {
                arity(&[1])?;
                CompressorSpec::RandK {
                    fraction: fraction(0)?,
                }
            }
            "topk" => {
                arity(&[1])?;
                CompressorSpec::TopK {
                    fraction: fraction(0)?,
                }
            }
            "noise" => {
                arity(&[1])?;
                let omega = real(0)?;
                if omega < 0.0 {
                    return Err(bad());
                }
                CompressorSpec::TwoPoint { omega }
            }
            _ => return Err(bad()),
        };
        match spec {
            CompressorSpec::Ecuq { bits, .. } if !(1..=24).contains(&bits) => Err(bad()),
            CompressorSpec::Sq { bits }
            | CompressorSpec::HadamardSq { bits }
            | CompressorSpec::RandKSq { bits, .. }
                if !(1..=16).contains(&bits) =>
            {
                Err(bad())
            }
            CompressorSpec::Qsgd { levels: 0 } => Err(bad()),
            other => Ok(other),
        }
    }
}

/// Decodes any blob except bitwise deltas, which need their base vector.
pub fn decompress(blob: &EncodedBlob) -> Result<DenseVector, CodecError> {
    Ok(decode_counting(blob)?.0)
}

/// Decodes and reports the exact number of payload bits the reader consumed.
pub fn decode_counting(blob: &EncodedBlob) -> Result<(DenseVector, u64), CodecError> {
    if blob.dim == 0 {
        return Err(CodecError::Corrupt("zero dimension".into()));
    }
    match blob.scheme {
        SchemeId::Identity => simple::identity_decode_counting(blob),
        SchemeId::Ecuq => ecuq::ecuq_decode_counting(blob),
        SchemeId::Huffman => huffman::huffman_decode_counting(blob),
        SchemeId::Sq => sq::sq_decode_counting(blob),
        SchemeId::HadamardSq => hsq::hadamard_sq_decode_counting(blob),
        SchemeId::RandKSq => sparse::randk_sq_decode_counting(blob),
        SchemeId::Qsgd => qsgd::qsgd_decode_counting(blob),
        SchemeId::RandK | SchemeId::TopK => sparse::sparse_decode_counting(blob),
        SchemeId::TwoPoint => simple::two_point_decode_counting(blob),
        SchemeId::XorDelta => Err(CodecError::InvalidInput(
            "bitwise deltas decode against a base vector".into(),
        )),
    }
}
