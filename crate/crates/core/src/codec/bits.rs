//! MSB-first bit packing and Elias-gamma integer codes.

use super::CodecError;

/// Appends bits most-significant first into a byte buffer.
#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity_bits(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            bits: 0,
        }
    }

    /// Writes the low `count` bits of `value`, high bit first.
    pub fn write_bits(&mut self, value: u64, count: u32) {
        debug_assert!(count <= 64);
        for shift in (0..count).rev() {
            self.write_bit((value >> shift) & 1 == 1);
        }
    }

    pub fn write_bit(&mut self, bit: bool) {
        let offset = (self.bits % 8) as u8;
        if offset == 0 {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> offset;
        }
        self.bits += 1;
    }

    pub fn write_f32(&mut self, v: f32) {
        self.write_bits(v.to_bits() as u64, 32);
    }

    pub fn write_elias_gamma(&mut self, n: u64) {
        assert!(n >= 1, "Elias gamma is defined for positive integers");
        let width = 64 - n.leading_zeros();
        self.write_bits(0, width - 1);
        self.write_bits(n, width);
    }

    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    pub fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.bits)
    }
}

/// Reads bits written by [`BitWriter`], refusing to read past `limit`.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
    limit: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], limit: u64) -> Self {
        let limit = limit.min(bytes.len() as u64 * 8);
        Self {
            bytes,
            pos: 0,
            limit,
        }
    }

    pub fn read_bit(&mut self) -> Result<bool, CodecError> {
        if self.pos >= self.limit {
            return Err(CodecError::Corrupt("bitstream exhausted".into()));
        }
        let byte = self.bytes[(self.pos / 8) as usize];
        let bit = byte & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, count: u32) -> Result<u64, CodecError> {
        let mut v = 0u64;
        for _ in 0..count {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Ok(v)
    }

    pub fn read_f32(&mut self) -> Result<f32, CodecError> {
        Ok(f32::from_bits(self.read_bits(32)? as u32))
    }

    pub fn read_elias_gamma(&mut self) -> Result<u64, CodecError> {
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros > 63 {
                return Err(CodecError::Corrupt("Elias-gamma prefix too long".into()));
            }
        }
        let rest = self.read_bits(zeros)?;
        Ok((1u64 << zeros) | rest)
    }

    /// Bits consumed so far.
    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.pos
    }
}

/// Length in bits of the Elias-gamma codeword for `n >= 1`.
pub fn elias_gamma_len(n: u64) -> u32 {
    assert!(n >= 1);
    2 * (63 - n.leading_zeros()) + 1
}

/// Bits needed to address `count` distinct values (0 for a single value).
pub fn index_width(count: usize) -> u32 {
    if count <= 1 {
        0
    } else {
        usize::BITS - (count - 1).leading_zeros()
    }
}
