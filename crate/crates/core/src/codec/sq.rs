//! Unbiased stochastic quantization onto `2^b` evenly spaced points
//! spanning the input range (endpoints included).

use rand::Rng;

use super::bits::{BitReader, BitWriter};
use super::blob::{EncodedBlob, SchemeId, SideReader, SideWriter};
use super::huffman::expect_scheme;
use super::CodecError;
use crate::rng::{derive_seed, rng_from, StreamRng};
use crate::DenseVector;

pub(crate) fn check_bits(bits: u32) -> Result<(), CodecError> {
    if !(1..=16).contains(&bits) {
        return Err(CodecError::InvalidInput(format!(
            "quantizer needs 1..=16 bits, got {bits}"
        )));
    }
    Ok(())
}

/// Largest f32 not above `v`.
pub(crate) fn f32_floor(v: f64) -> f32 {
    let f = v as f32;
    if (f as f64) > v {
        f.next_down()
    } else {
        f
    }
}

/// Smallest f32 not below `v`.
pub(crate) fn f32_ceil(v: f64) -> f32 {
    let f = v as f32;
    if (f as f64) < v {
        f.next_up()
    } else {
        f
    }
}

/// Stochastic rounding of `values` onto the grid `lo + k * (hi - lo) / (2^b - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SqCode {
    pub lo: f32,
    pub hi: f32,
    pub bits: u32,
    /// Empty when `lo == hi`.
    pub indices: Vec<u32>,
}

impl SqCode {
    pub fn quantize(values: &[f64], bits: u32, rng: &mut StreamRng) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let (lo, hi) = (f32_floor(lo), f32_ceil(hi));
        if lo == hi {
            return Self {
                lo,
                hi,
                bits,
                indices: Vec::new(),
            };
        }
        let top = (1u32 << bits) - 1;
        let step = (hi as f64 - lo as f64) / top as f64;
        let indices = values
            .iter()
            .map(|&v| {
                let t = ((v - lo as f64) / step).clamp(0.0, top as f64);
                let below = (t.floor() as u32).min(top.saturating_sub(1));
                let frac = t - below as f64;
                if rng.random::<f64>() < frac {
                    below + 1
                } else {
                    below
                }
            })
            .collect();
        Self {
            lo,
            hi,
            bits,
            indices,
        }
    }

    pub fn level(&self, k: u32) -> f64 {
        let top = ((1u32 << self.bits) - 1) as f64;
        let (lo, hi) = (self.lo as f64, self.hi as f64);
        lo + (hi - lo) * (k as f64 / top)
    }

    pub fn values(&self, len: usize) -> Vec<f64> {
        if self.indices.is_empty() {
            return vec![self.lo as f64; len];
        }
        self.indices.iter().map(|&k| self.level(k)).collect()
    }

    pub fn write_side(&self, side: &mut SideWriter) {
        side.f32(self.lo).f32(self.hi).u8(self.bits as u8);
    }

    pub fn write_payload(&self, w: &mut BitWriter) {
        for &k in &self.indices {
            w.write_bits(k as u64, self.bits);
        }
    }

    pub fn read(
        side: &mut SideReader<'_>,
        r: &mut BitReader<'_>,
        count: usize,
    ) -> Result<Self, CodecError> {
        let lo = side.f32()?;
        let hi = side.f32()?;
        let bits = side.u8()? as u32;
        check_bits(bits).map_err(|_| CodecError::Corrupt(format!("bad bit width {bits}")))?;
        if !(lo <= hi) {
            return Err(CodecError::Corrupt("inverted quantizer range".into()));
        }
        let indices = if lo == hi {
            Vec::new()
        } else {
            (0..count)
                .map(|_| r.read_bits(bits).map(|k| k as u32))
                .collect::<Result<_, _>>()?
        };
        Ok(Self {
            lo,
            hi,
            bits,
            indices,
        })
    }
}

pub fn stochastic_quantize(
    x: &DenseVector,
    bits: u32,
    seed: u64,
) -> Result<EncodedBlob, CodecError> {
    check_bits(bits)?;
    let mut rng = rng_from(derive_seed(seed, &[SchemeId::Sq as u64]));
    let code = SqCode::quantize(&x.to_f64(), bits, &mut rng);
    let mut side = SideWriter::new();
    code.write_side(&mut side);
    let mut w = BitWriter::with_capacity_bits(x.len() * bits as usize);
    code.write_payload(&mut w);
    let (payload, bit_length) = w.finish();
    Ok(EncodedBlob::new(
        SchemeId::Sq,
        x.len(),
        side.finish(),
        payload,
        bit_length,
    ))
}

pub fn sq_decode(blob: &EncodedBlob) -> Result<DenseVector, CodecError> {
    Ok(sq_decode_counting(blob)?.0)
}

pub(crate) fn sq_decode_counting(blob: &EncodedBlob) -> Result<(DenseVector, u64), CodecError> {
    expect_scheme(blob, SchemeId::Sq)?;
    let mut side = SideReader::new(&blob.side_info);
    let mut r = BitReader::new(&blob.payload, blob.bit_length);
    let code = SqCode::read(&mut side, &mut r, blob.dim)?;
    Ok((DenseVector::from_f64(&code.values(blob.dim))?, r.position()))
}
