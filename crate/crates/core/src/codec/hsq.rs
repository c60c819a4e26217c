//! Hadamard rotation followed by stochastic quantization.

use super::bits::{BitReader, BitWriter};
use super::blob::{EncodedBlob, SchemeId, SideReader, SideWriter};
use super::hadamard::{padded_len, rotate, unrotate};
use super::huffman::expect_scheme;
use super::sq::{check_bits, SqCode};
use super::CodecError;
use crate::rng::{derive_seed, rng_from};
use crate::DenseVector;

/// Payload is `b` bits per rotated (padded) coordinate.
pub fn hadamard_sq_encode(
    x: &DenseVector,
    bits: u32,
    seed: u64,
) -> Result<EncodedBlob, CodecError> {
    check_bits(bits)?;
    let rot_seed = derive_seed(seed, &[SchemeId::HadamardSq as u64, 1]);
    let rotated = rotate(&x.to_f64(), rot_seed);
    let mut rng = rng_from(derive_seed(seed, &[SchemeId::HadamardSq as u64, 2]));
    let code = SqCode::quantize(&rotated, bits, &mut rng);
    let mut side = SideWriter::new();
    side.u64(rot_seed);
    code.write_side(&mut side);
    let mut w = BitWriter::with_capacity_bits(rotated.len() * bits as usize);
    code.write_payload(&mut w);
    let (payload, bit_length) = w.finish();
    Ok(EncodedBlob::new(
        SchemeId::HadamardSq,
        x.len(),
        side.finish(),
        payload,
        bit_length,
    ))
}

pub(crate) fn hadamard_sq_decode_counting(
    blob: &EncodedBlob,
) -> Result<(DenseVector, u64), CodecError> {
    expect_scheme(blob, SchemeId::HadamardSq)?;
    let mut side = SideReader::new(&blob.side_info);
    let rot_seed = side.u64()?;
    let n = padded_len(blob.dim);
    let mut r = BitReader::new(&blob.payload, blob.bit_length);
    let code = SqCode::read(&mut side, &mut r, n)?;
    let values = unrotate(&code.values(n), rot_seed, blob.dim);
    Ok((DenseVector::from_f64(&values)?, r.position()))
}

pub fn hadamard_sq_decode(blob: &EncodedBlob) -> Result<DenseVector, CodecError> {
    Ok(hadamard_sq_decode_counting(blob)?.0)
}
