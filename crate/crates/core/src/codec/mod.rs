// SPDX-License-Identifier: Apache-2.0

//! Off-chip data containers.
//!
//! A group of 16 values is stored as a 4-bit precision field (`p - 1`), a
//! 16-bit nonzero mask and the nonzero values at `p` bits each, in ascending
//! slot order. Each container is padded to a whole 64-bit memory word:
//!
//! ```text
//! bit 0        4                20                    20 + nnz*p      pad64
//! | p-1 (4b)  | zero mask (16b) | v0 | v1 | ... (p b) | 0 ... 0        |
//! ```
//!
//! An all-zero group has mask 0 and precision field 0 and no payload.

mod bitstream;
mod stream;
mod traffic;

pub use bitstream::{BitReader, BitWriter};
pub use stream::{encode_stream, EncodeParams, EncodedStream, LoopPoint, STREAM_MAGIC, STREAM_VERSION};
pub use traffic::{traffic_report, LayerTraffic, TrafficReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::detect_group_precision;
use crate::tensors::BitWidth;
use crate::BRICK;

pub const PRECISION_FIELD_BITS: u32 = 4;
pub const MASK_BITS: u32 = 16;
pub const METADATA_BITS: u64 = (PRECISION_FIELD_BITS + MASK_BITS) as u64;
pub const WORD_BITS: u64 = 64;

/// Rounds a bit count up to a whole number of 64-bit words.
pub const fn pad64(bits: u64) -> u64 {
    bits.div_ceil(WORD_BITS) * WORD_BITS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Uncompressed, full width.
    Np,
    /// Static per-layer precision, no metadata.
    Sp,
    /// Per-group precision containers.
    Dp,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Np, Scheme::Sp, Scheme::Dp];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Np => "NP",
            Scheme::Sp => "SP",
            Scheme::Dp => "DP",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Scheme::ALL.get(code as usize).copied()
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "np" => Ok(Scheme::Np),
            "sp" => Ok(Scheme::Sp),
            "dp" => Ok(Scheme::Dp),
            other => Err(Error::Unsupported(format!("unknown scheme `{other}`"))),
        }
    }
}

/// One encoded group of 16 values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupContainer {
    /// Payload width `p`; 0 for an all-zero group.
    pub precision: u8,
    pub zero_mask: u16,
    /// Nonzero values after the `n_l` shift, ascending slot order.
    pub payload: Vec<u32>,
}

impl GroupContainer {
    pub fn nnz(&self) -> u32 {
        self.zero_mask.count_ones()
    }

    pub fn precision_field(&self) -> u8 {
        if self.zero_mask == 0 {
            0
        } else {
            self.precision - 1
        }
    }

    pub fn payload_bits(&self) -> u64 {
        self.nnz() as u64 * self.precision as u64
    }

    /// Container size in bits, including the alignment padding.
    pub fn bit_len(&self) -> u64 {
        pad64(METADATA_BITS + self.payload_bits())
    }

    pub fn write(&self, w: &mut BitWriter) {
        let start = w.bit_len();
        w.write(self.precision_field() as u64, PRECISION_FIELD_BITS);
        w.write(self.zero_mask as u64, MASK_BITS);
        for &v in &self.payload {
            w.write(v as u64, self.precision as u32);
        }
        w.pad_to(WORD_BITS);
        debug_assert_eq!(w.bit_len() - start, self.bit_len());
    }

    /// Parses one container, consuming its padding.
    pub fn read(r: &mut BitReader<'_>, width: BitWidth) -> Result<Self> {
        let start = r.position();
        let truncated = || Error::Malformed(format!("container at bit {start} is truncated"));
        let field = r.read(PRECISION_FIELD_BITS).ok_or_else(truncated)? as u8;
        let zero_mask = r.read(MASK_BITS).ok_or_else(truncated)? as u16;
        let precision = if zero_mask == 0 {
            if field != 0 {
                return Err(Error::Malformed(format!(
                    "container at bit {start}: empty mask with precision field {field}"
                )));
            }
            0
        } else {
            field + 1
        };
        if precision as u32 > width.bits() {
            return Err(Error::Malformed(format!(
                "container at bit {start}: precision {precision} exceeds width {}",
                width.bits()
            )));
        }
        let mut payload = Vec::with_capacity(zero_mask.count_ones() as usize);
        for _ in 0..zero_mask.count_ones() {
            payload.push(r.read(precision as u32).ok_or_else(truncated)? as u32);
        }
        let used = r.position() - start;
        let pad = pad64(used) - used;
        // Padding may span more than 64 bits only in theory; read in chunks.
        let mut left = pad;
        while left > 0 {
            let chunk = left.min(64) as u32;
            if r.read(chunk).ok_or_else(truncated)? != 0 {
                return Err(Error::Malformed(format!(
                    "container at bit {start}: nonzero alignment padding"
                )));
            }
            left -= chunk as u64;
        }
        Ok(GroupContainer {
            precision,
            zero_mask,
            payload,
        })
    }
}

/// Encodes 16 unsigned (or sign-magnitude) values.
///
/// Bits below `n_l` are dropped: the payload stores `v >> n_l` and the mask
/// marks values that are nonzero after the shift.
pub fn encode_group(values: &[u32], n_l: u8, width: BitWidth) -> Result<GroupContainer> {
    if values.len() != BRICK {
        return Err(Error::Shape(format!(
            "a container holds {BRICK} values, got {}",
            values.len()
        )));
    }
    if let Some(&v) = values.iter().find(|&&v| (v as u64) >> width.bits() != 0) {
        return Err(Error::ValueTooWide {
            value: v as u64,
            width: width.bits(),
        });
    }
    let mut shifted = [0u32; BRICK];
    let mut zero_mask = 0u16;
    for (i, &v) in values.iter().enumerate() {
        shifted[i] = v >> n_l;
        if shifted[i] != 0 {
            zero_mask |= 1 << i;
        }
    }
    let g = detect_group_precision(&shifted, 0);
    Ok(GroupContainer {
        precision: g.p,
        zero_mask,
        payload: shifted.iter().copied().filter(|&v| v != 0).collect(),
    })
}

/// Expands a container back to 16 values, one slot per step.
pub fn decode_group(container: &GroupContainer, n_l: u8) -> Result<[u32; BRICK]> {
    if container.payload.len() != container.nnz() as usize {
        return Err(Error::Malformed(format!(
            "mask announces {} values, payload holds {}",
            container.nnz(),
            container.payload.len()
        )));
    }
    let mut out = [0u32; BRICK];
    let mut next = container.payload.iter();
    for (i, slot) in out.iter_mut().enumerate() {
        if container.zero_mask & (1 << i) != 0 {
            let v = *next.next().expect("payload length checked");
            if container.precision < 32 && v >> container.precision != 0 {
                return Err(Error::Malformed(format!(
                    "payload value {v} wider than precision {}",
                    container.precision
                )));
            }
            *slot = v << n_l;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_sizes() {
        let small = encode_group(&[0xF; 16], 0, BitWidth::W16).unwrap();
        assert_eq!(METADATA_BITS + small.payload_bits(), 84);
        assert_eq!(small.bit_len(), 128);

        let zero = encode_group(&[0; 16], 0, BitWidth::W16).unwrap();
        assert_eq!(zero.precision_field(), 0);
        assert!(zero.payload.is_empty());
        assert_eq!(zero.bit_len(), 64);

        let full = encode_group(&[0xFFFF; 16], 0, BitWidth::W16).unwrap();
        assert_eq!(METADATA_BITS + full.payload_bits(), 276);
        assert_eq!(full.bit_len(), 320);
    }

    #[test]
    fn hand_built_container_decodes() {
        let c = GroupContainer {
            precision: 3,
            zero_mask: 0x0001,
            payload: vec![0b101],
        };
        let v = decode_group(&c, 0).unwrap();
        assert_eq!(v[0], 5);
        assert!(v[1..].iter().all(|&x| x == 0));

        let mut w = BitWriter::new();
        c.write(&mut w);
        let bytes = w.into_bytes();
        // field p-1 = 2, mask bit 0, then 0b101 at bit 20
        let word = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        assert_eq!(word, 2 | (1 << 4) | (0b101 << 20));
        let back = GroupContainer::read(&mut BitReader::new(&bytes), BitWidth::W16).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn empty_mask_decodes_to_zeros() {
        let c = GroupContainer {
            precision: 0,
            zero_mask: 0,
            payload: vec![],
        };
        assert_eq!(decode_group(&c, 0).unwrap(), [0; 16]);
    }

    #[test]
    fn n_l_truncates_low_bits() {
        let mut v = [0u32; 16];
        v[0] = 0b1011;
        v[1] = 0b0001;
        let c = encode_group(&v, 2, BitWidth::W16).unwrap();
        assert_eq!(c.zero_mask, 0b1);
        assert_eq!(c.precision, 2);
        let d = decode_group(&c, 2).unwrap();
        assert_eq!(d[0], 0b1000);
        assert_eq!(d[1], 0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            encode_group(&[0x1_0000; 16], 0, BitWidth::W16),
            Err(Error::ValueTooWide { .. })
        ));
        assert!(matches!(
            encode_group(&[0x100; 16], 0, BitWidth::W8),
            Err(Error::ValueTooWide { .. })
        ));
        assert!(encode_group(&[1; 15], 0, BitWidth::W16).is_err());
        let bad = GroupContainer {
            precision: 2,
            zero_mask: 0b11,
            payload: vec![1],
        };
        assert!(matches!(decode_group(&bad, 0), Err(Error::Malformed(_))));
    }

    #[test]
    fn malformed_bitstreams() {
        // empty mask with a nonzero precision field
        let mut w = BitWriter::new();
        w.write(3, 4);
        w.write(0, 16);
        w.pad_to(64);
        let bytes = w.into_bytes();
        assert!(GroupContainer::read(&mut BitReader::new(&bytes), BitWidth::W16).is_err());

        // truncated payload
        let c = encode_group(&[0xFFFF; 16], 0, BitWidth::W16).unwrap();
        let mut w = BitWriter::new();
        c.write(&mut w);
        let bytes = w.into_bytes();
        let cut = &bytes[..bytes.len() - 8];
        assert!(GroupContainer::read(&mut BitReader::new(cut), BitWidth::W16).is_err());

        // precision 16 on an 8-bit stream
        let full = BitReader::new(&bytes);
        assert!(GroupContainer::read(&mut full.clone(), BitWidth::W8).is_err());
    }
}
