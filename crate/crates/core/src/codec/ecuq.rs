//! Entropy-constrained uniform quantization (ECUQ).
//!
//! Finds the largest number of uniformly spaced levels over `[min, max]`
//! whose quantized-vector entropy stays within `[b - eps, b]`, using an
//! exponential-then-bisection search on the level count. Only entropies are
//! evaluated during the search; the winning quantization is Huffman coded
//! once at the end.

use super::bits::{BitReader, BitWriter};
use super::blob::{EncodedBlob, SchemeId, SideReader, SideWriter};
use super::grid::{entropy_from_counts, QuantizationGrid};
use super::huffman::{expect_scheme, HuffmanCode};
use super::CodecError;
use crate::DenseVector;

/// Entropy slack below the budget that is accepted without further search.
pub const DEFAULT_TOLERANCE: f64 = 0.1;

/// Upper bound on levels per coordinate explored by the search.
pub const MAX_LEVELS_PER_COORDINATE: u64 = 64;

/// Result of the level-count search.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSelection {
    pub grid: QuantizationGrid,
    pub counts: Vec<u64>,
    pub entropy: f64,
    /// Level counts whose entropy was evaluated, in order.
    pub probes: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct EcuqOutcome {
    pub blob: EncodedBlob,
    pub levels: u32,
    pub entropy: f64,
}

fn check_args(bits: u32, tolerance: f64) -> Result<(), CodecError> {
    if !(1..=24).contains(&bits) {
        return Err(CodecError::InvalidInput(format!(
            "ECUQ budget must be 1..=24 bits, got {bits}"
        )));
    }
    if !(tolerance > 0.0) {
        return Err(CodecError::InvalidInput(format!(
            "ECUQ tolerance must be positive, got {tolerance}"
        )));
    }
    Ok(())
}

/// Largest level count the search may try for a vector of length `dim`.
pub fn level_cap(dim: usize, bits: u32) -> u32 {
    let cap = (dim as u64 * MAX_LEVELS_PER_COORDINATE).min(u32::MAX as u64);
    (cap as u32).max(1 << bits)
}

/// Runs the double binary search and returns the chosen grid.
pub fn select_levels(
    x: &DenseVector,
    bits: u32,
    tolerance: f64,
) -> Result<LevelSelection, CodecError> {
    check_args(bits, tolerance)?;
    let base = QuantizationGrid::spanning(x, 1)?;
    if base.is_degenerate() {
        return Ok(LevelSelection {
            counts: vec![x.len() as u64],
            grid: base,
            entropy: 0.0,
            probes: vec![1],
        });
    }
    let budget = bits as f64;
    let evaluate = |k: u32| -> (QuantizationGrid, Vec<u64>, f64) {
        let grid = QuantizationGrid { levels: k, ..base };
        let counts = grid.counts(x);
        let h = entropy_from_counts(&counts);
        (grid, counts, h)
    };

    let initial = 1u32 << bits;
    let mut probes = vec![initial];
    let (grid, counts, h) = evaluate(initial);
    // log2(K) = b bounds the entropy from above, so only the lower side can fail
    let mut best = (grid, counts, h);
    if h >= budget - tolerance {
        return Ok(LevelSelection {
            grid: best.0,
            counts: best.1,
            entropy: best.2,
            probes,
        });
    }

    let cap = level_cap(x.len(), bits);
    let mut low = initial as u64;
    let mut high: Option<u64> = None;
    let mut p: u32 = 0;
    loop {
        let mid = match high {
            None => {
                let m = (initial as u64 + (1u64 << p)).min(cap as u64);
                p += 1;
                m
            }
            Some(h) => {
                if low > h {
                    break;
                }
                (low + h) / 2
            }
        };
        let (grid, counts, h) = evaluate(mid as u32);
        probes.push(mid as u32);
        if h > budget {
            high = Some(mid - 1);
        } else if h < budget - tolerance {
            if mid > best.0.levels as u64 {
                best = (grid, counts, h);
            }
            low = mid + 1;
            if high.is_none() && mid >= cap as u64 {
                break;
            }
        } else {
            return Ok(LevelSelection {
                grid,
                counts,
                entropy: h,
                probes,
            });
        }
    }
    Ok(LevelSelection {
        grid: best.0,
        counts: best.1,
        entropy: best.2,
        probes,
    })
}

pub fn ecuq_encode(x: &DenseVector, bits: u32, tolerance: f64) -> Result<EcuqOutcome, CodecError> {
    let sel = select_levels(x, bits, tolerance)?;
    let weights: Vec<(u32, f64)> = sel
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| (k as u32, c as f64))
        .collect();
    let code = HuffmanCode::from_weights(&weights)?;
    let mut w = BitWriter::new();
    code.encode_into(&sel.grid.indices(x), &mut w)?;
    let (payload, bit_length) = w.finish();
    let mut side = SideWriter::new();
    side.f32(sel.grid.x_min)
        .f32(sel.grid.x_max)
        .u32(sel.grid.levels);
    code.write_table(&mut side);
    Ok(EcuqOutcome {
        blob: EncodedBlob::new(SchemeId::Ecuq, x.len(), side.finish(), payload, bit_length),
        levels: sel.grid.levels,
        entropy: sel.entropy,
    })
}

pub fn ecuq_decode(blob: &EncodedBlob) -> Result<DenseVector, CodecError> {
    Ok(ecuq_decode_counting(blob)?.0)
}

pub(crate) fn ecuq_decode_counting(blob: &EncodedBlob) -> Result<(DenseVector, u64), CodecError> {
    expect_scheme(blob, SchemeId::Ecuq)?;
    let mut side = SideReader::new(&blob.side_info);
    let grid = QuantizationGrid::new(side.f32()?, side.f32()?, side.u32()?)?;
    let code = HuffmanCode::read_table(&mut side)?;
    let mut r = BitReader::new(&blob.payload, blob.bit_length);
    let symbols = code.decode_from(&mut r, blob.dim)?;
    let values = symbols
        .into_iter()
        .map(|k| {
            if k >= grid.levels {
                Err(CodecError::Corrupt(format!("level {k} outside grid")))
            } else {
                Ok(grid.level(k))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((DenseVector::new(values)?, r.position()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::grid::uniform_quantize;

    fn v(x: &[f32]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn constant_vector_collapses_to_one_level() {
        let x = v(&[3.5; 16]);
        for b in [1, 2, 8] {
            let out = ecuq_encode(&x, b, DEFAULT_TOLERANCE).unwrap();
            assert_eq!(out.levels, 1);
            assert_eq!(out.entropy, 0.0);
            assert_eq!(out.blob.bit_length, 0);
            assert_eq!(ecuq_decode(&out.blob).unwrap(), x);
        }
    }

    #[test]
    fn two_points_one_bit() {
        let x = v(&[0.0, 1.0]);
        let out = ecuq_encode(&x, 1, 0.1).unwrap();
        assert_eq!(out.levels, 2);
        assert_eq!(out.entropy, 1.0);
        assert_eq!(ecuq_decode(&out.blob).unwrap().as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn empty_payload_single_level_blob_decodes() {
        let mut side = SideWriter::new();
        side.f32(-1.25).f32(-1.25).u32(1);
        HuffmanCode::from_weights(&[(0, 1.0)])
            .unwrap()
            .write_table(&mut side);
        let blob = EncodedBlob::new(SchemeId::Ecuq, 4, side.finish(), vec![], 0);
        assert_eq!(ecuq_decode(&blob).unwrap().as_slice(), &[-1.25; 4]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = v(&[0.0, 1.0]);
        assert!(ecuq_encode(&x, 0, 0.1).is_err());
        assert!(ecuq_encode(&x, 2, 0.0).is_err());
        assert!(ecuq_encode(&x, 2, -1.0).is_err());
    }

    #[test]
    fn decode_matches_uniform_quantization() {
        let x = v(&[0.3, -2.0, 7.5, 0.31, 0.2, 1.0, 1.1, 3.0, -0.5, 0.0]);
        let out = ecuq_encode(&x, 2, 0.1).unwrap();
        let grid = QuantizationGrid::spanning(&x, out.levels).unwrap();
        assert_eq!(
            ecuq_decode(&out.blob).unwrap(),
            uniform_quantize(&x, &grid).unwrap()
        );
        assert!(out.entropy <= 2.0);
    }

    #[test]
    fn search_never_exceeds_cap() {
        // few distinct values: entropy saturates at log2(4) = 2 < 8 - eps
        let x = v(&[0.0, 1.0, 2.0, 3.0]);
        let sel = select_levels(&x, 8, 0.1).unwrap();
        assert!(sel.probes.iter().all(|&k| k <= level_cap(4, 8)));
        assert!(sel.entropy <= 8.0);
        assert!((sel.entropy - 2.0).abs() < 1e-12);
    }
}
