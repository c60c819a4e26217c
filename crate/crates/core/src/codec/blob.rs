//! Self-describing compressed vectors and their framed byte layout.
//!
//! Framing (all integers little-endian):
//!
//! ```text
//! scheme_id        u8
//! dim              u64
//! side_info_len    u64   (bytes)
//! side_info        [u8; side_info_len]
//! payload_bits     u64
//! payload          [u8; ceil(payload_bits / 8)]   MSB-first bit packing
//! ```

use super::CodecError;

/// Wire identifier of a compression scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SchemeId {
    Identity = 0,
    Ecuq = 1,
    Huffman = 2,
    Sq = 3,
    HadamardSq = 4,
    Qsgd = 5,
    RandK = 6,
    TopK = 7,
    RandKSq = 8,
    TwoPoint = 9,
    XorDelta = 10,
}

impl SchemeId {
    pub fn from_u8(v: u8) -> Result<Self, CodecError> {
        use SchemeId::*;
        Ok(match v {
            0 => Identity,
            1 => Ecuq,
            2 => Huffman,
            3 => Sq,
            4 => HadamardSq,
            5 => Qsgd,
            6 => RandK,
            7 => TopK,
            8 => RandKSq,
            9 => TwoPoint,
            10 => XorDelta,
            other => return Err(CodecError::Corrupt(format!("unknown scheme id {other}"))),
        })
    }
}

/// A compressed vector: codebook/side information plus an exact-length bitstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBlob {
    pub scheme: SchemeId,
    pub dim: usize,
    pub side_info: Vec<u8>,
    pub payload: Vec<u8>,
    /// Exact number of meaningful bits in `payload`.
    pub bit_length: u64,
}

impl EncodedBlob {
    pub fn new(
        scheme: SchemeId,
        dim: usize,
        side_info: Vec<u8>,
        payload: Vec<u8>,
        bit_length: u64,
    ) -> Self {
        debug_assert!(payload.len() as u64 == bit_length.div_ceil(8));
        Self {
            scheme,
            dim,
            side_info,
            payload,
            bit_length,
        }
    }

    pub fn side_info_bits(&self) -> u64 {
        self.side_info.len() as u64 * 8
    }

    /// Payload plus side information.
    pub fn total_bits(&self) -> u64 {
        self.bit_length + self.side_info_bits()
    }

    pub fn bits_per_coordinate(&self) -> f64 {
        self.bit_length as f64 / self.dim as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(25 + self.side_info.len() + self.payload.len());
        out.push(self.scheme as u8);
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.side_info.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.side_info);
        out.extend_from_slice(&self.bit_length.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses one framed blob, returning it and the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), CodecError> {
        let mut cur = SideReader::new(bytes);
        let scheme = SchemeId::from_u8(cur.u8()?)?;
        let dim = cur.u64()? as usize;
        let side_len = cur.u64()? as usize;
        let side_info = cur.take(side_len)?.to_vec();
        let bit_length = cur.u64()?;
        let payload_len = usize::try_from(bit_length.div_ceil(8))
            .map_err(|_| CodecError::Corrupt("payload length overflow".into()))?;
        let payload = cur.take(payload_len)?.to_vec();
        Ok((
            Self {
                scheme,
                dim,
                side_info,
                payload,
                bit_length,
            },
            cur.pos,
        ))
    }
}

/// Little-endian writer for side information.
#[derive(Debug, Default)]
pub(crate) struct SideWriter(Vec<u8>);

impl SideWriter {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }
    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn f32(&mut self, v: f32) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.0)
    }
}

pub(crate) struct SideReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> SideReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CodecError::Corrupt("truncated side information".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f32(&mut self) -> Result<f32, CodecError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_layout_is_little_endian() {
        let blob = EncodedBlob::new(SchemeId::Sq, 3, vec![0xAA, 0xBB], vec![0b1010_0000], 3);
        let bytes = blob.to_bytes();
        assert_eq!(bytes[0], 3);
        assert_eq!(&bytes[1..9], &3u64.to_le_bytes());
        assert_eq!(&bytes[9..17], &2u64.to_le_bytes());
        assert_eq!(&bytes[17..19], &[0xAA, 0xBB]);
        assert_eq!(&bytes[19..27], &3u64.to_le_bytes());
        assert_eq!(bytes[27], 0b1010_0000);
        let (back, used) = EncodedBlob::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, blob);
    }

    #[test]
    fn truncated_frame_is_corrupt() {
        let blob = EncodedBlob::new(SchemeId::Identity, 1, vec![], vec![0; 4], 32);
        let bytes = blob.to_bytes();
        assert!(EncodedBlob::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = 200;
        assert!(EncodedBlob::from_bytes(&bad).is_err());
    }
}
