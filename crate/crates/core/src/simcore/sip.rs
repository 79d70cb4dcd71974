// SPDX-License-Identifier: Apache-2.0

//! Functional model of a serial inner-product unit.

use crate::tensors::BitWidth;
use crate::BRICK;

/// Accumulator width of a SIP.
pub const fn accumulator_bits(width: BitWidth) -> u32 {
    match width {
        BitWidth::W8 => 24,
        BitWidth::W16 => 48,
    }
}

/// The offset sequence the dispatcher broadcasts for one group: a 4-bit
/// offset per cycle, from `n_h` down to `n_l`, with the end-of-group flag
/// raised on the last one.
#[derive(Debug, Clone)]
pub struct PrecisionBroadcast {
    next: Option<u8>,
    n_l: u8,
    step: u8,
}

impl PrecisionBroadcast {
    pub fn new(n_h: u8, n_l: u8) -> Self {
        Self::with_bits_per_cycle(n_h, n_l, 1)
    }

    /// `bits` activation bits per cycle; offsets start at the lowest bit of
    /// the topmost chunk.
    pub fn with_bits_per_cycle(n_h: u8, n_l: u8, bits: u8) -> Self {
        assert!(bits >= 1, "at least one bit per cycle");
        let n_h = n_h.max(n_l);
        let top = n_l + (n_h - n_l) / bits * bits;
        PrecisionBroadcast {
            next: Some(top),
            n_l,
            step: bits,
        }
    }
}

impl Iterator for PrecisionBroadcast {
    /// `(offset, end_of_group)`.
    type Item = (u8, bool);

    fn next(&mut self) -> Option<Self::Item> {
        let offset = self.next?;
        let last = offset < self.n_l + self.step;
        self.next = (!last).then(|| offset - self.step);
        Some((offset, last))
    }
}

/// Bit-serial inner product of 16 signed weights and 16 unsigned
/// activations, one activation bit per cycle. Bits below `n_l` never enter
/// the unit.
pub fn serial_inner_product(weights: &[i32; BRICK], activations: &[u32; BRICK], n_h: u8, n_l: u8) -> i64 {
    serial_inner_product_bits(weights, activations, n_h, n_l, 1)
}

/// As [`serial_inner_product`], consuming `bits` activation bits per cycle.
pub fn serial_inner_product_bits(
    weights: &[i32; BRICK],
    activations: &[u32; BRICK],
    n_h: u8,
    n_l: u8,
    bits: u8,
) -> i64 {
    let mut acc = 0i64;
    for (offset, eog) in PrecisionBroadcast::with_bits_per_cycle(n_h, n_l, bits) {
        let chunk_bits = bits.min(n_h.max(n_l) + 1 - offset) as u32;
        let mask = (1u64 << chunk_bits) - 1;
        let mut partial = 0i64;
        for (&w, &a) in weights.iter().zip(activations) {
            let chunk = (a as u64 >> offset) & mask;
            partial += w as i64 * chunk as i64;
        }
        // adder tree output, then the per-group shifter
        acc += partial << offset;
        debug_assert!(fits(acc, 48), "accumulator overflow");
        if eog {
            break;
        }
    }
    acc
}

fn fits(v: i64, bits: u32) -> bool {
    let lim = 1i64 << (bits - 1);
    (-lim..lim).contains(&v)
}

/// Reference: bit-parallel dot product with the activations' bits below
/// `n_l` cleared.
pub fn truncated_dot(weights: &[i32], activations: &[u32], n_l: u8) -> i64 {
    let mask = !((1u64 << n_l) - 1);
    weights
        .iter()
        .zip(activations)
        .map(|(&w, &a)| w as i64 * (a as u64 & mask) as i64)
        .sum()
}
