//! Lossless passthrough, the two-point multiplicative-noise compressor and
//! the bitwise delta used for lossless corrections.

use rand::Rng;

use super::bits::{BitReader, BitWriter};
use super::blob::{EncodedBlob, SchemeId, SideReader, SideWriter};
use super::huffman::expect_scheme;
use super::CodecError;
use crate::rng::{derive_seed, rng_from};
use crate::DenseVector;

pub fn identity_encode(x: &DenseVector) -> EncodedBlob {
    let mut w = BitWriter::with_capacity_bits(x.len() * 32);
    x.iter().for_each(|&v| w.write_f32(v));
    let (payload, bits) = w.finish();
    EncodedBlob::new(SchemeId::Identity, x.len(), Vec::new(), payload, bits)
}

fn read_words(blob: &EncodedBlob, r: &mut BitReader<'_>) -> Result<Vec<u32>, CodecError> {
    (0..blob.dim)
        .map(|_| r.read_bits(32).map(|v| v as u32))
        .collect()
}

pub(crate) fn identity_decode_counting(
    blob: &EncodedBlob,
) -> Result<(DenseVector, u64), CodecError> {
    expect_scheme(blob, SchemeId::Identity)?;
    let mut r = BitReader::new(&blob.payload, blob.bit_length);
    let words = read_words(blob, &mut r)?;
    Ok((
        DenseVector::new(words.into_iter().map(f32::from_bits).collect())?,
        r.position(),
    ))
}

/// `x * (1 + e)` with a single `e = ±omega` drawn per call.
pub fn two_point_encode(x: &DenseVector, omega: f64, seed: u64) -> Result<EncodedBlob, CodecError> {
    if !(omega >= 0.0 && omega.is_finite()) {
        return Err(CodecError::InvalidInput(format!("bad noise level {omega}")));
    }
    let mut rng = rng_from(derive_seed(seed, &[SchemeId::TwoPoint as u64]));
    let positive = rng.random::<bool>();
    let mut w = BitWriter::with_capacity_bits(x.len() * 32 + 1);
    w.write_bit(positive);
    x.iter().for_each(|&v| w.write_f32(v));
    let mut side = SideWriter::new();
    side.f64(omega);
    let (payload, bits) = w.finish();
    Ok(EncodedBlob::new(
        SchemeId::TwoPoint,
        x.len(),
        side.finish(),
        payload,
        bits,
    ))
}

pub(crate) fn two_point_decode_counting(
    blob: &EncodedBlob,
) -> Result<(DenseVector, u64), CodecError> {
    expect_scheme(blob, SchemeId::TwoPoint)?;
    let omega = SideReader::new(&blob.side_info).f64()?;
    let mut r = BitReader::new(&blob.payload, blob.bit_length);
    let factor = if r.read_bit()? {
        1.0 + omega
    } else {
        1.0 - omega
    };
    let words = read_words(blob, &mut r)?;
    let values: Vec<f64> = words
        .into_iter()
        .map(|w| f32::from_bits(w) as f64 * factor)
        .collect();
    Ok((DenseVector::from_f64(&values)?, r.position()))
}

/// Lossless correction: the XOR of the IEEE bit patterns of `target` and
/// `base`, 32 bits per coordinate. Applying it to `base` restores `target`
/// exactly, which floating-point subtraction cannot guarantee.
pub fn xor_delta_encode(
    target: &DenseVector,
    base: &DenseVector,
) -> Result<EncodedBlob, CodecError> {
    target.check_dim(base)?;
    let mut w = BitWriter::with_capacity_bits(target.len() * 32);
    for (&t, &b) in target.iter().zip(base.iter()) {
        w.write_bits((t.to_bits() ^ b.to_bits()) as u64, 32);
    }
    let (payload, bits) = w.finish();
    Ok(EncodedBlob::new(
        SchemeId::XorDelta,
        target.len(),
        Vec::new(),
        payload,
        bits,
    ))
}

pub fn xor_delta_apply(base: &DenseVector, blob: &EncodedBlob) -> Result<DenseVector, CodecError> {
    expect_scheme(blob, SchemeId::XorDelta)?;
    if blob.dim != base.len() {
        return Err(CodecError::DimensionMismatch {
            expected: base.len(),
            actual: blob.dim,
        });
    }
    let mut r = BitReader::new(&blob.payload, blob.bit_length);
    let words = read_words(blob, &mut r)?;
    DenseVector::new(
        words
            .into_iter()
            .zip(base.iter())
            .map(|(w, &b)| f32::from_bits(w ^ b.to_bits()))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_32_bits_per_coordinate() {
        let x = DenseVector::new(vec![1.0, -0.0, 3.25e-7]).unwrap();
        let blob = identity_encode(&x);
        assert_eq!(blob.bit_length, 96);
        let (y, used) = identity_decode_counting(&blob).unwrap();
        assert_eq!(used, 96);
        assert_eq!(y.as_slice()[1].to_bits(), (-0.0f32).to_bits());
        assert_eq!(y, x);
    }

    #[test]
    fn xor_delta_restores_target_exactly() {
        // y + (w - y) != w in f32 for this pair; the bitwise delta is exact
        let base = DenseVector::new(vec![0.5, -1.0e8, 3.0]).unwrap();
        let target = DenseVector::new(vec![1.0e-5, 1.0, 3.0]).unwrap();
        let naive = base.as_slice()[0] + (target.as_slice()[0] - base.as_slice()[0]);
        assert_ne!(naive, target.as_slice()[0]);
        let blob = xor_delta_encode(&target, &base).unwrap();
        assert_eq!(xor_delta_apply(&base, &blob).unwrap(), target);
    }

    #[test]
    fn two_point_takes_both_signs() {
        let x = DenseVector::new(vec![2.0]).unwrap();
        let seen: std::collections::BTreeSet<u32> = (0..64)
            .map(|s| {
                let (y, _) =
                    two_point_decode_counting(&two_point_encode(&x, 0.5, s).unwrap()).unwrap();
                y.as_slice()[0].to_bits()
            })
            .collect();
        assert_eq!(seen.len(), 2);
        assert!(seen.contains(&3.0f32.to_bits()) && seen.contains(&1.0f32.to_bits()));
    }
}
