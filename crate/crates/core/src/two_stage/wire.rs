//! Byte format for encoded streams.
//!
//! ```text
//! "UQ2S" | version u16 | n u32 | rate_bits u16 | header_bits u16 | blocks u32
//! then per block: header, body indices (MSB first), zero-padded to a byte
//! ```
//! Integer fields of the file header are little-endian.

use super::{EncodedBlock, TwoStageError};
use crate::bitio::{BitReader, BitWriter};
use crate::param_codec::HeaderBits;
use crate::vq::CodeIndex;

pub const STREAM_MAGIC: &[u8; 4] = b"UQ2S";
pub const STREAM_VERSION: u16 = 1;
const FILE_HEADER_LEN: usize = 4 + 2 + 4 + 2 + 2 + 4;

/// Everything a reader needs to split and validate blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamLayout {
    pub block_len: u32,
    pub rate_bits: u16,
    pub header_bits: u16,
    pub bits_per_word: u32,
    pub components: usize,
    pub cells: usize,
    pub words: usize,
}

impl StreamLayout {
    pub fn block_bytes(&self) -> usize {
        (self.header_bits as usize + self.rate_bits as usize).div_ceil(8)
    }

    pub fn check(&self, block: &EncodedBlock) -> Result<(), String> {
        if block.header.width != self.header_bits as u32 {
            return Err(format!("header width {} instead of {}", block.header.width, self.header_bits));
        }
        if block.header.value >= self.cells as u64 {
            return Err(format!("header {} names no cell (grid has {})", block.header.value, self.cells));
        }
        if block.body.0.len() != self.components {
            return Err(format!("body has {} indices instead of {}", block.body.0.len(), self.components));
        }
        if let Some(i) = block.body.0.iter().find(|&&i| i as usize >= self.words) {
            return Err(format!("word index {i} out of range ({} words)", self.words));
        }
        Ok(())
    }
}

pub fn write_stream(layout: &StreamLayout, blocks: &[EncodedBlock]) -> Result<Vec<u8>, TwoStageError> {
    let count = u32::try_from(blocks.len()).map_err(|_| TwoStageError::Format("too many blocks".into()))?;
    let mut out = Vec::with_capacity(FILE_HEADER_LEN + blocks.len() * layout.block_bytes());
    out.extend_from_slice(STREAM_MAGIC);
    out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    out.extend_from_slice(&layout.block_len.to_le_bytes());
    out.extend_from_slice(&layout.rate_bits.to_le_bytes());
    out.extend_from_slice(&layout.header_bits.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    let mut bits = BitWriter::new();
    for (t, b) in blocks.iter().enumerate() {
        layout.check(b).map_err(|e| TwoStageError::Format(format!("block {t}: {e}")))?;
        bits.write(b.header.value, b.header.width);
        for &i in &b.body.0 {
            bits.write(i as u64, layout.bits_per_word);
        }
        bits.align();
    }
    out.extend_from_slice(&bits.into_bytes());
    Ok(out)
}

/// Parses a whole stream; any inconsistency rejects it entirely.
pub fn read_stream(layout: &StreamLayout, bytes: &[u8]) -> Result<Vec<EncodedBlock>, TwoStageError> {
    let fmt = |m: String| TwoStageError::Format(m);
    if bytes.len() < FILE_HEADER_LEN {
        return Err(fmt(format!("{} bytes is shorter than the file header", bytes.len())));
    }
    if &bytes[..4] != STREAM_MAGIC {
        return Err(fmt("bad magic".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u16_at(4);
    if version != STREAM_VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    let (n, rate_bits, header_bits, count) = (u32_at(6), u16_at(10), u16_at(12), u32_at(14) as usize);
    if (n, rate_bits, header_bits) != (layout.block_len, layout.rate_bits, layout.header_bits) {
        return Err(fmt(format!(
            "stream parameters n={n}, rate_bits={rate_bits}, header_bits={header_bits} do not match the code \
             (n={}, rate_bits={}, header_bits={})",
            layout.block_len, layout.rate_bits, layout.header_bits
        )));
    }
    let payload = &bytes[FILE_HEADER_LEN..];
    let expected = count
        .checked_mul(layout.block_bytes())
        .ok_or_else(|| fmt("block count overflows".into()))?;
    if payload.len() != expected {
        return Err(fmt(format!("{count} blocks need {expected} payload bytes, found {}", payload.len())));
    }
    let mut reader = BitReader::new(payload);
    let mut out = Vec::with_capacity(count);
    for t in 0..count {
        let truncated = || fmt(format!("block {t} truncated"));
        let value = reader.read(header_bits as u32).ok_or_else(truncated)?;
        let mut body = Vec::with_capacity(layout.components);
        for _ in 0..layout.components {
            body.push(reader.read(layout.bits_per_word).ok_or_else(truncated)? as u32);
        }
        if !reader.align() {
            return Err(fmt(format!("block {t} has nonzero padding")));
        }
        let block = EncodedBlock { header: HeaderBits { value, width: header_bits as u32 }, body: CodeIndex(body) };
        layout.check(&block).map_err(|e| fmt(format!("block {t}: {e}")))?;
        out.push(block);
    }
    Ok(out)
}
