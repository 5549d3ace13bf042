use std::io::{Read, Write};

use super::{Codebook, Provenance, VqError};
use crate::param_codec::index_bits;

pub const CODEBOOK_MAGIC: &[u8; 4] = b"UQVQ";
pub const CODEBOOK_VERSION: u16 = 1;

/// Writes the component codebook. The length field holds the stored
/// codeword length (the component dimension), all numbers little-endian.
pub fn write_codebook<W: Write>(cb: &Codebook, mut out: W) -> Result<(), VqError> {
    let io = |e: std::io::Error| VqError::Io(e.to_string());
    let mut buf = Vec::with_capacity(34 + cb.words().len() * 8);
    buf.extend_from_slice(CODEBOOK_MAGIC);
    buf.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
    buf.extend_from_slice(&(cb.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(cb.word_count() as u32).to_le_bytes());
    buf.extend_from_slice(&cb.p_exponent().to_le_bytes());
    for w in cb.words() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    let prov = cb.provenance();
    buf.extend_from_slice(&prov.seed.to_le_bytes());
    buf.extend_from_slice(&prov.training_size.to_le_bytes());
    out.write_all(&buf).map_err(io)?;
    out.flush().map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], VqError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| VqError::Format(format!("truncated at byte {}", self.bytes.len())))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], VqError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Reads a codebook; its block length is the stored codeword length.
pub fn read_codebook<R: Read>(mut input: R) -> Result<Codebook, VqError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| VqError::Io(e.to_string()))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if &c.array::<4>()? != CODEBOOK_MAGIC {
        return Err(VqError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(c.array()?);
    if version != CODEBOOK_VERSION {
        return Err(VqError::Format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(c.array()?) as usize;
    let count = u32::from_le_bytes(c.array()?) as usize;
    let p = f64::from_le_bytes(c.array()?);
    if dim == 0 || count == 0 {
        return Err(VqError::Format(format!("empty codebook ({count} words of length {dim})")));
    }
    let values = dim.checked_mul(count).ok_or_else(|| VqError::Format("size overflow".into()))?;
    let raw = c.take(values.checked_mul(8).ok_or_else(|| VqError::Format("size overflow".into()))?)?;
    let words: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    let seed = u64::from_le_bytes(c.array()?);
    let training_size = u64::from_le_bytes(c.array()?);
    if c.pos != bytes.len() {
        return Err(VqError::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let provenance = Provenance { seed, training_size, iterations: 0 };
    Codebook::new(dim, dim, words, index_bits(count), p, provenance).map_err(|e| VqError::Format(e.to_string()))
}
