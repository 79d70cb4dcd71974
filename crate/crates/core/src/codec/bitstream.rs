// SPDX-License-Identifier: Apache-2.0

//! LSB-first bit packing. Packing LSB-first into bytes gives the same layout
//! as packing LSB-first into little-endian 64-bit words.

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `bits` bits of `value`.
    pub fn write(&mut self, value: u64, bits: u32) {
        debug_assert!(bits <= 64);
        debug_assert!(bits == 64 || value >> bits == 0, "value wider than field");
        for i in 0..bits {
            let byte = (self.bit_len / 8) as usize;
            if byte == self.bytes.len() {
                self.bytes.push(0);
            }
            if (value >> i) & 1 == 1 {
                self.bytes[byte] |= 1 << (self.bit_len % 8);
            }
            self.bit_len += 1;
        }
    }

    /// Zero-fills up to the next multiple of `multiple` bits.
    pub fn pad_to(&mut self, multiple: u64) {
        let target = self.bit_len.div_ceil(multiple) * multiple;
        while self.bit_len < target {
            let chunk = (target - self.bit_len).min(64) as u32;
            self.write(0, chunk);
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn at(bytes: &'a [u8], bit: u64) -> Self {
        BitReader { bytes, pos: bit }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        (self.bytes.len() as u64 * 8).saturating_sub(self.pos)
    }

    /// Reads `bits` bits, or `None` when the buffer runs out.
    pub fn read(&mut self, bits: u32) -> Option<u64> {
        if self.remaining() < bits as u64 {
            return None;
        }
        let mut v = 0u64;
        for i in 0..bits {
            let byte = self.bytes[(self.pos / 8) as usize];
            if (byte >> (self.pos % 8)) & 1 == 1 {
                v |= 1 << i;
            }
            self.pos += 1;
        }
        Some(v)
    }
}
