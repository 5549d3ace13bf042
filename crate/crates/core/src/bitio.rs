//! MSB-first bit packing.

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append the low `width` bits of `value`, most significant first.
    pub fn write(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        debug_assert!(width == 64 || value >> width == 0, "{value} does not fit in {width} bits");
        for i in (0..width).rev() {
            if self.bit == 0 {
                self.bytes.push(0);
            }
            let b = ((value >> i) & 1) as u8;
            *self.bytes.last_mut().expect("pushed above") |= b << (7 - self.bit);
            self.bit = (self.bit + 1) % 8;
        }
    }

    /// Pad with zeros to the next byte boundary.
    pub fn align(&mut self) {
        self.bit = 0;
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len_bits(&self) -> usize {
        if self.bit == 0 {
            self.bytes.len() * 8
        } else {
            (self.bytes.len() - 1) * 8 + self.bit as usize
        }
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    /// `None` when fewer than `width` bits remain.
    pub fn read(&mut self, width: u32) -> Option<u64> {
        if self.pos + width as usize > self.bytes.len() * 8 {
            return None;
        }
        let mut v = 0u64;
        for _ in 0..width {
            let b = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | b as u64;
            self.pos += 1;
        }
        Some(v)
    }

    /// Skip to the next byte boundary; the skipped bits must be zero.
    pub fn align(&mut self) -> bool {
        while !self.pos.is_multiple_of(8) {
            if self.read(1) != Some(0) {
                return false;
            }
        }
        true
    }

    pub fn byte_pos(&self) -> usize {
        self.pos.div_ceil(8)
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos == self.bytes.len() * 8
    }
}
