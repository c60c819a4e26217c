//! Rand-K and Top-K sparsification, plus the sub-bit composition
//! (rotation, shared-seed Rand-K, stochastic quantization).

use rand::seq::index::sample;

use super::bits::{index_width, BitReader, BitWriter};
use super::blob::{EncodedBlob, SchemeId, SideReader, SideWriter};
use super::hadamard::{padded_len, rotate, unrotate};
use super::huffman::expect_scheme;
use super::sq::{check_bits, SqCode};
use super::CodecError;
use crate::rng::{derive_seed, rng_from};
use crate::DenseVector;

fn check_k(k: usize, dim: usize) -> Result<(), CodecError> {
    if k == 0 || k > dim {
        return Err(CodecError::InvalidInput(format!(
            "k = {k} outside 1..={dim}"
        )));
    }
    Ok(())
}

fn write_sparse(scheme: SchemeId, x: &DenseVector, mut idx: Vec<usize>) -> EncodedBlob {
    idx.sort_unstable();
    let width = index_width(x.len());
    let mut w = BitWriter::with_capacity_bits(idx.len() * (width as usize + 32));
    for &i in &idx {
        w.write_bits(i as u64, width);
        w.write_f32(x[i]);
    }
    let mut side = SideWriter::new();
    side.u32(idx.len() as u32);
    let (payload, bits) = w.finish();
    EncodedBlob::new(scheme, x.len(), side.finish(), payload, bits)
}

/// Keeps `k` uniformly chosen coordinates; the decoder rescales by `d / k`.
pub fn randk_encode(x: &DenseVector, k: usize, seed: u64) -> Result<EncodedBlob, CodecError> {
    check_k(k, x.len())?;
    let mut rng = rng_from(derive_seed(seed, &[SchemeId::RandK as u64]));
    let idx = sample(&mut rng, x.len(), k).into_vec();
    Ok(write_sparse(SchemeId::RandK, x, idx))
}

/// Keeps the `k` largest-magnitude coordinates (ties favour lower indices).
pub fn topk_encode(x: &DenseVector, k: usize) -> Result<EncodedBlob, CodecError> {
    check_k(k, x.len())?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    let key = |&i: &usize| (std::cmp::Reverse(OrdAbs(x[i])), i);
    if k < x.len() {
        order.select_nth_unstable_by_key(k - 1, key);
    }
    order.truncate(k);
    Ok(write_sparse(SchemeId::TopK, x, order))
}

struct OrdAbs(f32);
impl PartialEq for OrdAbs {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for OrdAbs {}
impl PartialOrd for OrdAbs {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdAbs {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.abs().total_cmp(&other.0.abs())
    }
}

pub(crate) fn sparse_decode_counting(blob: &EncodedBlob) -> Result<(DenseVector, u64), CodecError> {
    if blob.scheme != SchemeId::RandK {
        expect_scheme(blob, SchemeId::TopK)?;
    }
    let k = SideReader::new(&blob.side_info).u32()? as usize;
    check_k(k, blob.dim).map_err(|e| CodecError::Corrupt(e.to_string()))?;
    let scale = if blob.scheme == SchemeId::RandK {
        blob.dim as f64 / k as f64
    } else {
        1.0
    };
    let width = index_width(blob.dim);
    let mut r = BitReader::new(&blob.payload, blob.bit_length);
    let mut out = vec![0.0f64; blob.dim];
    for _ in 0..k {
        let i = r.read_bits(width)? as usize;
        let v = r.read_f32()?;
        *out.get_mut(i)
            .ok_or_else(|| CodecError::Corrupt(format!("index {i} out of range")))? =
            v as f64 * scale;
    }
    Ok((DenseVector::from_f64(&out)?, r.position()))
}

pub fn sparse_decode(blob: &EncodedBlob) -> Result<DenseVector, CodecError> {
    Ok(sparse_decode_counting(blob)?.0)
}

/// Number of rotated coordinates kept by the sub-bit composition.
pub fn subbit_keep(dim: usize, fraction: f64) -> usize {
    let n = padded_len(dim);
    ((fraction * n as f64).ceil() as usize).clamp(1, n)
}

/// Rotation, then Rand-K with indices regenerated from a shared seed, then
/// `bits`-bit stochastic quantization of the kept coordinates. Costs
/// `k * bits` payload bits; unbiased.
pub fn randk_sq_encode(
    x: &DenseVector,
    fraction: f64,
    bits: u32,
    seed: u64,
) -> Result<EncodedBlob, CodecError> {
    check_bits(bits)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CodecError::InvalidInput(format!(
            "keep fraction {fraction} outside (0, 1]"
        )));
    }
    let rot_seed = derive_seed(seed, &[SchemeId::RandKSq as u64, 1]);
    let idx_seed = derive_seed(seed, &[SchemeId::RandKSq as u64, 2]);
    let rotated = rotate(&x.to_f64(), rot_seed);
    let k = subbit_keep(x.len(), fraction);
    let idx = kept_indices(idx_seed, rotated.len(), k);
    let kept: Vec<f64> = idx.iter().map(|&i| rotated[i]).collect();
    let mut rng = rng_from(derive_seed(seed, &[SchemeId::RandKSq as u64, 3]));
    let code = SqCode::quantize(&kept, bits, &mut rng);
    let mut side = SideWriter::new();
    side.u64(rot_seed).u64(idx_seed).u32(k as u32);
    code.write_side(&mut side);
    let mut w = BitWriter::with_capacity_bits(k * bits as usize);
    code.write_payload(&mut w);
    let (payload, bit_length) = w.finish();
    Ok(EncodedBlob::new(
        SchemeId::RandKSq,
        x.len(),
        side.finish(),
        payload,
        bit_length,
    ))
}

fn kept_indices(seed: u64, n: usize, k: usize) -> Vec<usize> {
    let mut idx = sample(&mut rng_from(seed), n, k).into_vec();
    idx.sort_unstable();
    idx
}

pub(crate) fn randk_sq_decode_counting(
    blob: &EncodedBlob,
) -> Result<(DenseVector, u64), CodecError> {
    expect_scheme(blob, SchemeId::RandKSq)?;
    let mut side = SideReader::new(&blob.side_info);
    let rot_seed = side.u64()?;
    let idx_seed = side.u64()?;
    let k = side.u32()? as usize;
    let n = padded_len(blob.dim);
    if k == 0 || k > n {
        return Err(CodecError::Corrupt(format!("bad keep count {k}")));
    }
    let mut r = BitReader::new(&blob.payload, blob.bit_length);
    let code = SqCode::read(&mut side, &mut r, k)?;
    let values = code.values(k);
    let scale = n as f64 / k as f64;
    let mut rotated = vec![0.0; n];
    for (i, v) in kept_indices(idx_seed, n, k).into_iter().zip(values) {
        rotated[i] = v * scale;
    }
    Ok((
        DenseVector::from_f64(&unrotate(&rotated, rot_seed, blob.dim))?,
        r.position(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_k_is_identity() {
        let x = DenseVector::new(vec![1.5, -2.0, 0.25, 8.0, 3.0]).unwrap();
        let y = sparse_decode(&randk_encode(&x, 5, 7).unwrap()).unwrap();
        assert_eq!(y, x);
        let y = sparse_decode(&topk_encode(&x, 5).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn top_one_keeps_largest_magnitude() {
        let x = DenseVector::new(vec![3.0, -5.0, 2.0]).unwrap();
        let y = sparse_decode(&topk_encode(&x, 1).unwrap()).unwrap();
        assert_eq!(y.as_slice(), &[0.0, -5.0, 0.0]);
    }

    #[test]
    fn k_out_of_range() {
        let x = DenseVector::new(vec![1.0, 2.0]).unwrap();
        assert!(randk_encode(&x, 0, 0).is_err());
        assert!(randk_encode(&x, 3, 0).is_err());
        assert!(topk_encode(&x, 0).is_err());
    }

    #[test]
    fn index_bits_are_counted() {
        let x = DenseVector::new((0..100).map(|i| i as f32).collect()).unwrap();
        let blob = randk_encode(&x, 10, 1).unwrap();
        assert_eq!(blob.bit_length, 10 * (7 + 32));
        let (_, used) = sparse_decode_counting(&blob).unwrap();
        assert_eq!(used, blob.bit_length);
    }

    #[test]
    fn subbit_budget() {
        let x = DenseVector::new((0..64).map(|i| (i as f32 * 0.3).cos()).collect()).unwrap();
        let blob = randk_sq_encode(&x, 0.5, 1, 3).unwrap();
        assert_eq!(blob.bit_length, 32);
        assert_eq!(blob.bits_per_coordinate(), 0.5);
        let (y, used) = randk_sq_decode_counting(&blob).unwrap();
        assert_eq!(used, 32);
        assert_eq!(y.len(), 64);
    }
}
