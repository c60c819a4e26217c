//! QSGD: norm plus per-coordinate sign and stochastic level in `{0..s}`,
//! with levels written as Elias-gamma codes of `level + 1`.
//!
//! Payload: the norm as 32 raw bits, then for every coordinate
//! `gamma(level + 1)` followed by a sign bit when `level > 0`. A zero norm
//! ends the stream after the first 32 bits.

use rand::Rng;

use super::bits::{BitReader, BitWriter};
use super::blob::{EncodedBlob, SchemeId, SideReader, SideWriter};
use super::huffman::expect_scheme;
use super::sq::f32_ceil;
use super::CodecError;
use crate::rng::{derive_seed, rng_from};
use crate::DenseVector;

pub fn qsgd_encode(x: &DenseVector, levels: u32, seed: u64) -> Result<EncodedBlob, CodecError> {
    if levels == 0 {
        return Err(CodecError::InvalidInput(
            "QSGD needs at least one level".into(),
        ));
    }
    let mut side = SideWriter::new();
    side.u32(levels);
    let mut w = BitWriter::new();
    // rounding the norm up keeps every |x_i| / norm within [0, 1]
    let norm = f32_ceil(x.norm());
    w.write_f32(norm);
    if norm > 0.0 {
        let mut rng = rng_from(derive_seed(seed, &[SchemeId::Qsgd as u64]));
        let s = levels as f64;
        for &v in x.iter() {
            let r = ((v as f64).abs() / norm as f64 * s).min(s);
            let below = r.floor();
            let level = if rng.random::<f64>() < r - below {
                below as u64 + 1
            } else {
                below as u64
            };
            w.write_elias_gamma(level + 1);
            if level > 0 {
                w.write_bit(v < 0.0);
            }
        }
    }
    let (payload, bit_length) = w.finish();
    Ok(EncodedBlob::new(
        SchemeId::Qsgd,
        x.len(),
        side.finish(),
        payload,
        bit_length,
    ))
}

pub fn qsgd_decode(blob: &EncodedBlob) -> Result<DenseVector, CodecError> {
    Ok(qsgd_decode_counting(blob)?.0)
}

pub(crate) fn qsgd_decode_counting(blob: &EncodedBlob) -> Result<(DenseVector, u64), CodecError> {
    expect_scheme(blob, SchemeId::Qsgd)?;
    let levels = SideReader::new(&blob.side_info).u32()?;
    if levels == 0 {
        return Err(CodecError::Corrupt("zero QSGD levels".into()));
    }
    let mut r = BitReader::new(&blob.payload, blob.bit_length);
    let norm = r.read_f32()?;
    if !(norm >= 0.0 && norm.is_finite()) {
        return Err(CodecError::Corrupt("bad QSGD norm".into()));
    }
    if norm == 0.0 {
        return Ok((DenseVector::zeros(blob.dim), r.position()));
    }
    let mut out = Vec::with_capacity(blob.dim);
    for _ in 0..blob.dim {
        let level = r.read_elias_gamma()? - 1;
        if level > levels as u64 {
            return Err(CodecError::Corrupt(format!(
                "QSGD level {level} > {levels}"
            )));
        }
        let mag = norm as f64 * level as f64 / levels as f64;
        let v = if level > 0 && r.read_bit()? {
            -mag
        } else {
            mag
        };
        out.push(v);
    }
    Ok((DenseVector::from_f64(&out)?, r.position()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_vector_is_just_the_norm() {
        let x = DenseVector::zeros(10);
        let blob = qsgd_encode(&x, 4, 1).unwrap();
        assert_eq!(blob.bit_length, 32);
        let (y, used) = qsgd_decode_counting(&blob).unwrap();
        assert_eq!(y, x);
        assert_eq!(used, 32);
    }

    #[test]
    fn single_nonzero_is_exact() {
        // |x_i| = norm, so the level is always s
        let x = DenseVector::new(vec![0.0, -3.0, 0.0]).unwrap();
        for seed in 0..20 {
            let y = qsgd_decode(&qsgd_encode(&x, 2, seed).unwrap()).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn bit_length_matches_reader() {
        let x = DenseVector::new((0..200).map(|i| ((i * 37) % 11) as f32 - 5.0).collect()).unwrap();
        for s in [1, 2, 7, 64] {
            let blob = qsgd_encode(&x, s, 3).unwrap();
            let (_, used) = qsgd_decode_counting(&blob).unwrap();
            assert_eq!(used, blob.bit_length);
        }
        assert!(qsgd_encode(&x, 0, 0).is_err());
    }
}
