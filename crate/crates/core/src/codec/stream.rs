// SPDX-License-Identifier: Apache-2.0

//! Whole-tensor streams and their file format.
//!
//! File layout, all integers little-endian:
//!
//! | offset | size | field                                                 |
//! |--------|------|-------------------------------------------------------|
//! | 0      | 4    | magic `DPRD`                                          |
//! | 4      | 1    | version                                               |
//! | 5      | 1    | value width (8 or 16)                                 |
//! | 6      | 1    | group size (16)                                       |
//! | 7      | 1    | `n_l`                                                 |
//! | 8      | 1    | scheme (0 NP, 1 SP, 2 DP)                             |
//! | 9      | 1    | SP precision (0 unless SP)                            |
//! | 10     | 1    | flags: bit 0 signed, bit 1 ReLU output, bit 2 loop table |
//! | 11     | 1    | layout code                                           |
//! | 12     | 4    | value count                                           |
//!
//! The 16-byte header is followed by the tensor descriptor (rank `u8`, three
//! zero bytes, scale `f64`, `rank` dims as `u32`), the optional loop-point
//! table (count `u32`, then `(group u32, byte offset u32)` pairs sorted by
//! group), the body length in bytes (`u64`) and the body.

use crate::error::{Error, Result};
use crate::precision::{brick_stream, from_sign_magnitude, LayerProfile};
use crate::tensors::{bricks_of, BitWidth, FixedTensor, Layout, Signedness};
use crate::BRICK;

use super::{BitReader, BitWriter, GroupContainer, Scheme, METADATA_BITS};

pub const STREAM_MAGIC: [u8; 4] = *b"DPRD";
pub const STREAM_VERSION: u8 = 1;
const HEADER_BYTES: usize = 16;

const FLAG_SIGNED: u8 = 1;
const FLAG_RELU: u8 = 2;
const FLAG_LOOP_TABLE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeParams {
    pub n_l: u8,
    /// Width used by SP packing.
    pub sp_precision: u8,
    /// Record a loop point every this many DP groups.
    pub loop_interval: Option<u32>,
}

impl EncodeParams {
    pub fn activations(profile: &LayerProfile) -> Self {
        EncodeParams {
            n_l: profile.n_l,
            sp_precision: profile.p_a,
            loop_interval: None,
        }
    }

    /// Weights use `P_w` and keep every bit (`n_l` applies to activations).
    pub fn weights(profile: &LayerProfile) -> Self {
        EncodeParams {
            n_l: 0,
            sp_precision: profile.p_w,
            loop_interval: None,
        }
    }

    pub fn with_loop_interval(mut self, every: u32) -> Self {
        self.loop_interval = Some(every);
        self
    }
}

/// Random re-access point: where group `group` starts inside the body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopPoint {
    pub group: u32,
    pub byte_offset: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedStream {
    pub scheme: Scheme,
    pub width: BitWidth,
    pub signedness: Signedness,
    pub layout: Layout,
    pub shape: Vec<usize>,
    pub scale: f64,
    pub relu_output: bool,
    pub n_l: u8,
    pub sp_precision: u8,
    /// DP containers in dispatch order; empty for NP and SP.
    pub containers: Vec<GroupContainer>,
    pub loop_table: Vec<LoopPoint>,
    pub body: Vec<u8>,
    /// Traffic in bits (containers including alignment for DP, packed values
    /// for NP and SP).
    pub total_bits: u64,
    /// Bits the tensor occupies uncompressed.
    pub original_bits: u64,
    pub metadata_bits: u64,
    pub padding_bits: u64,
    /// SP values that exceeded the static precision and were saturated.
    pub saturated: usize,
}

impl EncodedStream {
    pub fn value_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bits.div_ceil(8)
    }

    /// Compressed over uncompressed size.
    pub fn ratio(&self) -> f64 {
        if self.original_bits == 0 {
            0.0
        } else {
            self.total_bits as f64 / self.original_bits as f64
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + 16 + self.body.len());
        out.extend_from_slice(&STREAM_MAGIC);
        out.push(STREAM_VERSION);
        out.push(self.width.bits() as u8);
        out.push(BRICK as u8);
        out.push(self.n_l);
        out.push(self.scheme.code());
        out.push(if self.scheme == Scheme::Sp { self.sp_precision } else { 0 });
        let mut flags = 0;
        if self.signedness == Signedness::TwosComplement {
            flags |= FLAG_SIGNED;
        }
        if self.relu_output {
            flags |= FLAG_RELU;
        }
        if !self.loop_table.is_empty() {
            flags |= FLAG_LOOP_TABLE;
        }
        out.push(flags);
        out.push(self.layout.code());
        out.extend_from_slice(&(self.value_count() as u32).to_le_bytes());
        debug_assert_eq!(out.len(), HEADER_BYTES);

        out.push(self.shape.len() as u8);
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&self.scale.to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        if !self.loop_table.is_empty() {
            out.extend_from_slice(&(self.loop_table.len() as u32).to_le_bytes());
            for lp in &self.loop_table {
                out.extend_from_slice(&lp.group.to_le_bytes());
                out.extend_from_slice(&lp.byte_offset.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.body.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    /// Parses and validates a stream file.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let header = cur.take(HEADER_BYTES)?;
        if header[..4] != STREAM_MAGIC {
            return Err(Error::Malformed("bad magic".into()));
        }
        if header[4] != STREAM_VERSION {
            return Err(Error::Malformed(format!("unsupported version {}", header[4])));
        }
        let width = BitWidth::try_from(header[5] as u32)
            .map_err(|_| Error::Malformed(format!("bad width {}", header[5])))?;
        if header[6] as usize != BRICK {
            return Err(Error::Malformed(format!("unsupported group size {}", header[6])));
        }
        let n_l = header[7];
        let scheme = Scheme::from_code(header[8])
            .ok_or_else(|| Error::Malformed(format!("bad scheme code {}", header[8])))?;
        let sp_precision = header[9];
        let flags = header[10];
        let layout = Layout::from_code(header[11])
            .ok_or_else(|| Error::Malformed(format!("bad layout code {}", header[11])))?;
        let count = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        if n_l as u32 >= width.bits() {
            return Err(Error::Malformed(format!("n_l {n_l} out of range")));
        }
        if scheme == Scheme::Sp && !(1..=width.bits() as u8).contains(&sp_precision) {
            return Err(Error::Malformed(format!("bad SP precision {sp_precision}")));
        }

        let rank = cur.take(4)?[0] as usize;
        let scale = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        if shape.iter().product::<usize>() != count {
            return Err(Error::Malformed(format!(
                "shape {shape:?} does not hold {count} values"
            )));
        }
        let mut loop_table = Vec::new();
        if flags & FLAG_LOOP_TABLE != 0 {
            let n = cur.u32()?;
            for _ in 0..n {
                loop_table.push(LoopPoint {
                    group: cur.u32()?,
                    byte_offset: cur.u32()?,
                });
            }
        }
        let body_len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
        let body = cur.take(body_len)?.to_vec();
        if cur.pos != bytes.len() {
            return Err(Error::Malformed("trailing bytes after body".into()));
        }

        let signedness = if flags & FLAG_SIGNED != 0 {
            Signedness::TwosComplement
        } else {
            Signedness::Unsigned
        };
        let mut stream = EncodedStream {
            scheme,
            width,
            signedness,
            layout,
            shape,
            scale,
            relu_output: flags & FLAG_RELU != 0,
            n_l,
            sp_precision: if scheme == Scheme::Sp { sp_precision } else { 0 },
            containers: Vec::new(),
            loop_table,
            body,
            total_bits: 0,
            original_bits: count as u64 * width.bits() as u64,
            metadata_bits: 0,
            padding_bits: 0,
            saturated: 0,
        };
        let template = stream.template()?;
        match scheme {
            Scheme::Np | Scheme::Sp => {
                let bits = count as u64 * stream.packed_width() as u64;
                if stream.body.len() as u64 != bits.div_ceil(8) {
                    return Err(Error::Malformed(format!(
                        "body holds {} bytes, expected {}",
                        stream.body.len(),
                        bits.div_ceil(8)
                    )));
                }
                stream.total_bits = bits;
            }
            Scheme::Dp => {
                let groups = bricks_of(&template).len();
                let mut r = BitReader::new(&stream.body);
                for _ in 0..groups {
                    let c = GroupContainer::read(&mut r, width)?;
                    stream.metadata_bits += METADATA_BITS;
                    stream.padding_bits += c.bit_len() - METADATA_BITS - c.payload_bits();
                    stream.containers.push(c);
                }
                if r.remaining() != 0 {
                    return Err(Error::Malformed("body longer than its containers".into()));
                }
                stream.total_bits = r.position();
                for lp in &stream.loop_table {
                    let expected = stream.group_offset(lp.group as usize)?;
                    if expected != lp.byte_offset as u64 {
                        return Err(Error::Malformed(format!(
                            "loop point for group {} points at byte {}, container starts at {expected}",
                            lp.group, lp.byte_offset
                        )));
                    }
                }
            }
        }
        Ok(stream)
    }

    fn packed_width(&self) -> u8 {
        match self.scheme {
            Scheme::Np => self.width.bits() as u8,
            Scheme::Sp => self.sp_precision,
            Scheme::Dp => 0,
        }
    }

    /// All-zero tensor with this stream's geometry.
    fn template(&self) -> Result<FixedTensor> {
        FixedTensor::new(
            self.shape.clone(),
            vec![0; self.value_count()],
            self.width,
            self.signedness,
            self.layout,
        )
        .map_err(|e| Error::Malformed(e.to_string()))
    }

    fn group_offset(&self, group: usize) -> Result<u64> {
        if group >= self.containers.len() {
            return Err(Error::Malformed(format!("loop point for missing group {group}")));
        }
        Ok(self.containers[..group]
            .iter()
            .map(|c| c.bit_len() / 8)
            .sum())
    }

    /// Reconstructs the tensor. Bits below `n_l` (DP, SP) and values above
    /// the SP precision are lost; everything else is exact.
    pub fn decode(&self) -> Result<FixedTensor> {
        let count = self.value_count();
        let patterns: Vec<u32> = match self.scheme {
            Scheme::Np | Scheme::Sp => {
                let w = self.packed_width() as u32;
                let shift = if self.scheme == Scheme::Sp { self.n_l } else { 0 };
                let mut r = BitReader::new(&self.body);
                (0..count)
                    .map(|_| {
                        r.read(w)
                            .map(|v| (v as u32) << shift)
                            .ok_or_else(|| Error::Malformed("body truncated".into()))
                    })
                    .collect::<Result<_>>()?
            }
            Scheme::Dp => {
                let template = self.template()?;
                let mut out = vec![0u32; count];
                let mut r = BitReader::new(&self.body);
                for brick in bricks_of(&template) {
                    let c = GroupContainer::read(&mut r, self.width)?;
                    let vals = super::decode_group(&c, self.n_l)?;
                    for (i, &v) in vals.iter().enumerate() {
                        if brick.pad_mask & (1 << i) == 0 {
                            out[template.flat_index(brick.position, brick.channel + i)] = v;
                        } else if v != 0 {
                            return Err(Error::Malformed("nonzero value in a padding slot".into()));
                        }
                    }
                }
                out
            }
        };
        let values = patterns
            .into_iter()
            .map(|p| match (self.scheme, self.signedness) {
                (_, Signedness::Unsigned) => p as i32,
                (Scheme::Np, Signedness::TwosComplement) => {
                    let bits = self.width.bits();
                    ((p << (32 - bits)) as i32) >> (32 - bits)
                }
                (_, Signedness::TwosComplement) => from_sign_magnitude(p),
            })
            .collect();
        FixedTensor::new(
            self.shape.clone(),
            values,
            self.width,
            self.signedness,
            self.layout,
        )?
        .with_scale(self.scale)?
        .with_relu_output(self.relu_output)
    }

    /// Decodes DP groups starting at `group`, seeking through the loop-point
    /// table instead of scanning from the start.
    pub fn decode_groups_from(&self, group: u32, count: usize) -> Result<Vec<[u32; BRICK]>> {
        if self.scheme != Scheme::Dp {
            return Err(Error::Unsupported("loop points exist only for DP streams".into()));
        }
        let idx = self
            .loop_table
            .binary_search_by_key(&group, |lp| lp.group)
            .map_err(|_| Error::Unsupported(format!("no loop point recorded for group {group}")))?;
        let mut r = BitReader::at(&self.body, self.loop_table[idx].byte_offset as u64 * 8);
        (0..count)
            .map(|_| super::decode_group(&GroupContainer::read(&mut r, self.width)?, self.n_l))
            .collect()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Malformed(format!("stream truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Encodes a tensor under one scheme.
///
/// NP and SP pack values in flat order; DP packs 16-value groups in brick
/// order. Signed tensors are converted to shifted sign-magnitude before SP
/// and DP packing.
pub fn encode_stream(
    tensor: &FixedTensor,
    scheme: Scheme,
    params: &EncodeParams,
) -> Result<EncodedStream> {
    let width = tensor.width();
    if params.n_l as u32 >= width.bits() {
        return Err(Error::Profile(format!("n_l {} out of range", params.n_l)));
    }
    let mut stream = EncodedStream {
        scheme,
        width,
        signedness: tensor.signedness(),
        layout: tensor.layout(),
        shape: tensor.shape().to_vec(),
        scale: tensor.scale(),
        relu_output: tensor.is_relu_output(),
        n_l: params.n_l,
        sp_precision: 0,
        containers: Vec::new(),
        loop_table: Vec::new(),
        body: Vec::new(),
        total_bits: 0,
        original_bits: tensor.len() as u64 * width.bits() as u64,
        metadata_bits: 0,
        padding_bits: 0,
        saturated: 0,
    };
    let mut w = BitWriter::new();
    match scheme {
        Scheme::Np => {
            let bits = width.bits();
            let mask = (1u64 << bits) - 1;
            for &v in tensor.values() {
                w.write(v as i64 as u64 & mask, bits);
            }
        }
        Scheme::Sp => {
            let p = params.sp_precision;
            if !(1..=width.bits() as u8).contains(&p) {
                return Err(Error::Profile(format!("SP precision {p} out of range")));
            }
            stream.sp_precision = p;
            let max = (1u64 << p) - 1;
            for m in tensor.magnitudes()? {
                let v = (m >> params.n_l) as u64;
                if v > max {
                    stream.saturated += 1;
                }
                w.write(v.min(max), p as u32);
            }
        }
        Scheme::Dp => {
            let (values, _) = brick_stream(tensor)?;
            for (i, group) in values.chunks(BRICK).enumerate() {
                if let Some(every) = params.loop_interval {
                    if every > 0 && (i as u32).is_multiple_of(every) {
                        stream.loop_table.push(LoopPoint {
                            group: i as u32,
                            byte_offset: (w.bit_len() / 8) as u32,
                        });
                    }
                }
                let c = super::encode_group(group, params.n_l, width)?;
                c.write(&mut w);
                stream.metadata_bits += METADATA_BITS;
                stream.padding_bits += c.bit_len() - METADATA_BITS - c.payload_bits();
                stream.containers.push(c);
            }
        }
    }
    stream.total_bits = w.bit_len();
    stream.body = w.into_bytes();
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: u8) -> EncodeParams {
        EncodeParams {
            n_l: 0,
            sp_precision: p,
            loop_interval: None,
        }
    }

    #[test]
    fn np_and_sp_sizes() {
        let t = FixedTensor::unsigned((0..16).collect(), BitWidth::W16).unwrap();
        assert_eq!(encode_stream(&t, Scheme::Np, &params(16)).unwrap().total_bits, 256);
        assert_eq!(encode_stream(&t, Scheme::Sp, &params(8)).unwrap().total_bits, 128);
    }

    #[test]
    fn sp_saturates_and_counts() {
        let t = FixedTensor::unsigned(vec![1, 300, 7], BitWidth::W16).unwrap();
        let s = encode_stream(&t, Scheme::Sp, &params(8)).unwrap();
        assert_eq!(s.saturated, 1);
        assert_eq!(s.decode().unwrap().values(), &[1, 255, 7]);
    }

    #[test]
    fn file_round_trip_all_schemes() {
        let t = FixedTensor::new(
            vec![1, 2, 3, 20],
            (0..120).map(|i| (i * 37) % 2000).collect(),
            BitWidth::W16,
            Signedness::Unsigned,
            Layout::Nhwc,
        )
        .unwrap()
        .with_scale(0.25)
        .unwrap();
        for scheme in Scheme::ALL {
            let s = encode_stream(&t, scheme, &params(11).with_loop_interval(4)).unwrap();
            let parsed = EncodedStream::from_bytes(&s.to_bytes()).unwrap();
            assert_eq!(parsed.total_bits, s.total_bits);
            assert_eq!(parsed.decode().unwrap(), t, "{scheme:?}");
        }
    }

    #[test]
    fn signed_tensors_round_trip() {
        let t = FixedTensor::new(
            vec![4, 5],
            (-10..10).map(|i| i * 1000).collect(),
            BitWidth::W16,
            Signedness::TwosComplement,
            Layout::Oi,
        )
        .unwrap();
        for scheme in Scheme::ALL {
            let s = encode_stream(&t, scheme, &params(16)).unwrap();
            assert_eq!(s.decode().unwrap(), t, "{scheme:?}");
        }
    }

    #[test]
    fn loop_points_seek() {
        let t = FixedTensor::unsigned((0..160).map(|i| i * 97 % 4096).collect(), BitWidth::W16)
            .unwrap();
        let s = encode_stream(&t, Scheme::Dp, &params(16).with_loop_interval(3)).unwrap();
        assert_eq!(
            s.loop_table.iter().map(|l| l.group).collect::<Vec<_>>(),
            vec![0, 3, 6, 9]
        );
        let groups = s.decode_groups_from(6, 2).unwrap();
        let flat: Vec<u32> = groups.iter().flatten().copied().collect();
        let expect: Vec<u32> = t.values()[96..128].iter().map(|&v| v as u32).collect();
        assert_eq!(flat, expect);
        assert!(s.decode_groups_from(5, 1).is_err());
    }

    #[test]
    fn header_is_sixteen_bytes() {
        let t = FixedTensor::unsigned(vec![0; 16], BitWidth::W8).unwrap();
        let bytes = encode_stream(&t, Scheme::Dp, &params(8)).unwrap().to_bytes();
        assert_eq!(&bytes[..4], b"DPRD");
        assert_eq!(bytes[4], STREAM_VERSION);
        assert_eq!(bytes[5], 8);
        assert_eq!(bytes[6], 16);
        assert_eq!(bytes[8], 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 16);
    }

    #[test]
    fn corrupt_streams_rejected() {
        let t = FixedTensor::unsigned((0..64).collect(), BitWidth::W16).unwrap();
        let good = encode_stream(&t, Scheme::Dp, &params(16)).unwrap().to_bytes();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(EncodedStream::from_bytes(&bad_magic).is_err());

        assert!(EncodedStream::from_bytes(&good[..good.len() - 3]).is_err());

        let mut extra = good.clone();
        extra.push(0);
        assert!(EncodedStream::from_bytes(&extra).is_err());

        let mut bad_scheme = good.clone();
        bad_scheme[8] = 9;
        assert!(EncodedStream::from_bytes(&bad_scheme).is_err());
    }
}
