//! Canonical Huffman coding over integer symbols, plus a value-level wrapper.
//!
//! Code lengths come from the usual greedy merge. When two nodes carry the
//! same weight the one holding the lower symbol is merged first, then the
//! older node, so codebooks are reproducible. Codewords are assigned
//! canonically from the lengths, which lets the side information carry only
//! `(symbol, length)` pairs.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use super::bits::{BitReader, BitWriter};
use super::blob::{EncodedBlob, SchemeId, SideReader, SideWriter};
use super::grid::EmpiricalDensity;
use super::CodecError;
use crate::DenseVector;

const MAX_CODE_LEN: u8 = 63;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanCode {
    /// Symbols in canonical order: by code length, then symbol value.
    symbols: Vec<u32>,
    lengths: Vec<u8>,
    codes: Vec<u64>,
    index: HashMap<u32, usize>,
}

#[derive(Debug, Clone, Copy)]
struct HeapKey {
    weight: f64,
    min_symbol: u32,
    age: usize,
}

impl PartialEq for HeapKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapKey {}
impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight
            .total_cmp(&other.weight)
            .then(self.min_symbol.cmp(&other.min_symbol))
            .then(self.age.cmp(&other.age))
    }
}

impl HuffmanCode {
    /// Builds an optimal prefix code for `(symbol, weight)` pairs.
    ///
    /// Weights must be positive and symbols distinct. A single symbol gets a
    /// zero-length codeword.
    pub fn from_weights(weights: &[(u32, f64)]) -> Result<Self, CodecError> {
        if weights.is_empty() {
            return Err(CodecError::InvalidInput("no symbols to code".into()));
        }
        if weights.iter().any(|&(_, w)| !(w > 0.0 && w.is_finite())) {
            return Err(CodecError::InvalidInput(
                "symbol weights must be positive".into(),
            ));
        }
        let n = weights.len();
        let mut lengths = vec![0u8; n];
        if n > 1 {
            // node i < n is leaf i; internal nodes are appended
            let mut parent: Vec<usize> = vec![usize::MAX; n];
            let mut heap = BinaryHeap::with_capacity(n);
            for (i, &(sym, w)) in weights.iter().enumerate() {
                heap.push(Reverse((
                    HeapKey {
                        weight: w,
                        min_symbol: sym,
                        age: i,
                    },
                    i,
                )));
            }
            while heap.len() > 1 {
                let Reverse((a, ia)) = heap.pop().unwrap();
                let Reverse((b, ib)) = heap.pop().unwrap();
                let id = parent.len();
                parent.push(usize::MAX);
                parent[ia] = id;
                parent[ib] = id;
                heap.push(Reverse((
                    HeapKey {
                        weight: a.weight + b.weight,
                        min_symbol: a.min_symbol.min(b.min_symbol),
                        age: id,
                    },
                    id,
                )));
            }
            // parents always have larger ids, so depths resolve in reverse order
            let mut depth = vec![0u32; parent.len()];
            for id in (0..parent.len()).rev() {
                if parent[id] != usize::MAX {
                    depth[id] = depth[parent[id]] + 1;
                }
            }
            for (i, len) in lengths.iter_mut().enumerate() {
                if depth[i] > MAX_CODE_LEN as u32 {
                    return Err(CodecError::InvalidInput("Huffman code too deep".into()));
                }
                *len = depth[i] as u8;
            }
        }
        let pairs: Vec<(u32, u8)> = weights.iter().map(|&(s, _)| s).zip(lengths).collect();
        Self::from_lengths(&pairs)
    }

    /// Reconstructs the canonical code from `(symbol, length)` pairs.
    pub fn from_lengths(pairs: &[(u32, u8)]) -> Result<Self, CodecError> {
        if pairs.is_empty() {
            return Err(CodecError::Corrupt("empty Huffman table".into()));
        }
        let mut sorted = pairs.to_vec();
        sorted.sort_by_key(|&(s, l)| (l, s));
        if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(CodecError::Corrupt("duplicate Huffman symbol".into()));
        }
        if sorted.len() == 1 {
            if sorted[0].1 != 0 {
                return Err(CodecError::Corrupt(
                    "single symbol must have empty code".into(),
                ));
            }
        } else {
            // Kraft equality for a complete prefix code
            let kraft: f64 = sorted.iter().map(|&(_, l)| 0.5f64.powi(l as i32)).sum();
            if sorted[0].1 == 0 || (kraft - 1.0).abs() > 1e-9 {
                return Err(CodecError::Corrupt("invalid Huffman code lengths".into()));
            }
        }
        let mut codes = Vec::with_capacity(sorted.len());
        let mut code = 0u64;
        let mut prev_len = sorted[0].1;
        for (i, &(_, len)) in sorted.iter().enumerate() {
            if i > 0 {
                code = (code + 1) << (len - prev_len);
            }
            codes.push(code);
            prev_len = len;
        }
        let symbols: Vec<u32> = sorted.iter().map(|&(s, _)| s).collect();
        let index = symbols.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        Ok(Self {
            symbols,
            lengths: sorted.iter().map(|&(_, l)| l).collect(),
            codes,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn code_length(&self, symbol: u32) -> Option<u8> {
        self.index.get(&symbol).map(|&i| self.lengths[i])
    }

    /// Codeword of `symbol` as `(bits, length)`.
    pub fn codeword(&self, symbol: u32) -> Option<(u64, u8)> {
        self.index
            .get(&symbol)
            .map(|&i| (self.codes[i], self.lengths[i]))
    }

    /// `(symbol, length)` pairs in canonical order.
    pub fn table(&self) -> impl Iterator<Item = (u32, u8)> + '_ {
        self.symbols
            .iter()
            .copied()
            .zip(self.lengths.iter().copied())
    }

    /// Expected codeword length under `weights` (normalized internally).
    pub fn average_length(&self, weights: &[(u32, f64)]) -> f64 {
        let total: f64 = weights.iter().map(|&(_, w)| w).sum();
        weights
            .iter()
            .map(|&(s, w)| w * self.code_length(s).unwrap_or(0) as f64)
            .sum::<f64>()
            / total
    }

    pub fn encode_into(&self, symbols: &[u32], out: &mut BitWriter) -> Result<(), CodecError> {
        for &s in symbols {
            let (code, len) = self
                .codeword(s)
                .ok_or(CodecError::SymbolOutsideSupport(s as f64))?;
            out.write_bits(code, len as u32);
        }
        Ok(())
    }

    pub fn decode_from(
        &self,
        reader: &mut BitReader<'_>,
        count: usize,
    ) -> Result<Vec<u32>, CodecError> {
        if self.symbols.len() == 1 {
            return Ok(vec![self.symbols[0]; count]);
        }
        let max_len = *self.lengths.last().unwrap() as usize;
        // canonical decoding tables: first code and first index per length
        let mut first_code = vec![0u64; max_len + 2];
        let mut first_index = vec![0usize; max_len + 2];
        let mut count_at = vec![0usize; max_len + 2];
        for &l in &self.lengths {
            count_at[l as usize] += 1;
        }
        let mut code = 0u64;
        let mut idx = 0usize;
        for len in 1..=max_len {
            first_code[len] = code;
            first_index[len] = idx;
            code = (code + count_at[len] as u64) << 1;
            idx += count_at[len];
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut c = 0u64;
            let mut len = 0usize;
            loop {
                c = (c << 1) | reader.read_bit()? as u64;
                len += 1;
                if len > max_len {
                    return Err(CodecError::Corrupt("invalid Huffman codeword".into()));
                }
                let offset = c.wrapping_sub(first_code[len]);
                if c >= first_code[len] && (offset as usize) < count_at[len] {
                    out.push(self.symbols[first_index[len] + offset as usize]);
                    break;
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn write_table(&self, side: &mut SideWriter) {
        side.u32(self.symbols.len() as u32);
        for (s, l) in self.table() {
            side.u32(s).u8(l);
        }
    }

    pub(crate) fn read_table(side: &mut SideReader<'_>) -> Result<Self, CodecError> {
        let n = side.u32()? as usize;
        let mut pairs = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            pairs.push((side.u32()?, side.u8()?));
        }
        Self::from_lengths(&pairs)
    }
}

/// Huffman-codes a quantized vector whose values all lie in `p.support`.
pub fn huffman_encode(q: &DenseVector, p: &EmpiricalDensity) -> Result<EncodedBlob, CodecError> {
    let weights: Vec<(u32, f64)> = p
        .probabilities
        .iter()
        .enumerate()
        .map(|(i, &w)| (i as u32, w))
        .collect();
    let code = HuffmanCode::from_weights(&weights)?;
    let by_bits: HashMap<u32, u32> = p
        .support
        .iter()
        .enumerate()
        .map(|(i, v)| (v.to_bits(), i as u32))
        .collect();
    let symbols = q
        .iter()
        .map(|&v| {
            let v = if v == 0.0 { 0.0f32 } else { v };
            by_bits
                .get(&v.to_bits())
                .copied()
                .ok_or(CodecError::SymbolOutsideSupport(v as f64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = BitWriter::new();
    code.encode_into(&symbols, &mut w)?;
    let mut side = SideWriter::new();
    side.u32(p.support.len() as u32);
    for &v in &p.support {
        side.f32(v);
    }
    code.write_table(&mut side);
    let (payload, bits) = w.finish();
    Ok(EncodedBlob::new(
        SchemeId::Huffman,
        q.len(),
        side.finish(),
        payload,
        bits,
    ))
}

pub fn huffman_decode(blob: &EncodedBlob) -> Result<DenseVector, CodecError> {
    Ok(huffman_decode_counting(blob)?.0)
}

/// Decodes and also reports how many payload bits were consumed.
pub(crate) fn huffman_decode_counting(
    blob: &EncodedBlob,
) -> Result<(DenseVector, u64), CodecError> {
    expect_scheme(blob, SchemeId::Huffman)?;
    let mut side = SideReader::new(&blob.side_info);
    let n = side.u32()? as usize;
    let mut support = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        support.push(side.f32()?);
    }
    let code = HuffmanCode::read_table(&mut side)?;
    let mut r = BitReader::new(&blob.payload, blob.bit_length);
    let symbols = code.decode_from(&mut r, blob.dim)?;
    let values = symbols
        .into_iter()
        .map(|s| {
            support
                .get(s as usize)
                .copied()
                .ok_or_else(|| CodecError::Corrupt("Huffman symbol outside support".into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((DenseVector::new(values)?, r.position()))
}

pub(crate) fn expect_scheme(blob: &EncodedBlob, scheme: SchemeId) -> Result<(), CodecError> {
    if blob.scheme != scheme {
        return Err(CodecError::WrongScheme {
            expected: scheme,
            actual: blob.scheme,
        });
    }
    Ok(())
}
