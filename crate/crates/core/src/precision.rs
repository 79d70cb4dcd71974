// SPDX-License-Identifier: Apache-2.0

//! Per-group precision detection and its aggregates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensors::{bricks_of, BitWidth, FixedTensor, Signedness};

/// Precision detected for one group of values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupPrecision {
    pub n_h: u8,
    pub n_l: u8,
    /// `n_h - n_l + 1`, or 0 for an all-zero group.
    pub p: u8,
    pub all_zero: bool,
    /// Set when the profile's `n_l` lies above every set bit of a nonzero
    /// group; `p` is then clamped to 1.
    pub filtered: bool,
}

impl GroupPrecision {
    pub const fn zero(n_l: u8) -> Self {
        GroupPrecision {
            n_h: 0,
            n_l,
            p: 0,
            all_zero: true,
            filtered: false,
        }
    }
}

/// One OR per bit position across the group; the hardware builds these with
/// OR trees.
pub fn bit_signals(values: &[u32]) -> u32 {
    values.iter().fold(0, |acc, &v| acc | v)
}

/// Position of the most significant set bit, as a leading-one detector
/// reports it.
pub fn leading_one(signals: u32) -> Option<u8> {
    (signals != 0).then(|| (31 - signals.leading_zeros()) as u8)
}

pub fn detect_group_precision(values: &[u32], n_l: u8) -> GroupPrecision {
    let Some(n_h) = leading_one(bit_signals(values)) else {
        return GroupPrecision::zero(n_l);
    };
    if n_l > n_h {
        return GroupPrecision {
            n_h,
            n_l,
            p: 1,
            all_zero: false,
            filtered: true,
        };
    }
    GroupPrecision {
        n_h,
        n_l,
        p: n_h - n_l + 1,
        all_zero: false,
        filtered: false,
    }
}

/// Shifted sign-magnitude form: magnitude in the upper bits, sign in bit 0.
pub fn to_sign_magnitude(value: i32, width: BitWidth) -> Result<u32> {
    let limit = 1i64 << (width.bits() - 1);
    let v = value as i64;
    if v <= -limit || v >= limit {
        return Err(Error::NoMagnitude {
            value: v,
            width: width.bits(),
        });
    }
    Ok(((v.unsigned_abs() as u32) << 1) | (value < 0) as u32)
}

pub fn from_sign_magnitude(pattern: u32) -> i32 {
    let magnitude = (pattern >> 1) as i32;
    if pattern & 1 == 1 {
        -magnitude
    } else {
        magnitude
    }
}

/// Static per-layer precisions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub name: String,
    pub p_a: u8,
    pub p_w: u8,
    #[serde(default)]
    pub n_l: u8,
    /// MAC count of the layer.
    #[serde(default)]
    pub work: u64,
}

impl LayerProfile {
    pub fn new(name: impl Into<String>, p_a: u8, p_w: u8) -> Self {
        LayerProfile {
            name: name.into(),
            p_a,
            p_w,
            n_l: 0,
            work: 0,
        }
    }

    pub fn validate(&self, width: BitWidth) -> Result<()> {
        let w = width.bits() as u8;
        if !(1..=w).contains(&self.p_a) || !(1..=w).contains(&self.p_w) {
            return Err(Error::Profile(format!(
                "{}: precisions ({}, {}) outside [1, {w}]",
                self.name, self.p_a, self.p_w
            )));
        }
        if self.n_l >= self.p_a {
            return Err(Error::Profile(format!(
                "{}: n_l = {} must be below P_a = {}",
                self.name, self.n_l, self.p_a
            )));
        }
        Ok(())
    }
}

/// The tensor's values in brick order (zero padded to whole bricks) as
/// detector inputs, with a flag per slot telling real values from padding.
pub fn brick_stream(tensor: &FixedTensor) -> Result<(Vec<u32>, Vec<bool>)> {
    let bricks = bricks_of(tensor);
    let mut values = Vec::with_capacity(bricks.len() * crate::BRICK);
    let mut real = Vec::with_capacity(bricks.len() * crate::BRICK);
    for b in &bricks {
        for (i, &v) in b.values.iter().enumerate() {
            values.push(match tensor.signedness() {
                Signedness::Unsigned => v as u32,
                Signedness::TwosComplement => to_sign_magnitude(v, tensor.width())?,
            });
            real.push(b.pad_mask & (1 << i) == 0);
        }
    }
    Ok((values, real))
}

/// Detected precision and real (non-padding) element count of every group.
pub fn group_precisions(
    tensor: &FixedTensor,
    group_size: usize,
    n_l: u8,
) -> Result<Vec<(GroupPrecision, usize)>> {
    if group_size == 0 {
        return Err(Error::Profile("group size must be positive".into()));
    }
    let (values, real) = brick_stream(tensor)?;
    Ok(values
        .chunks(group_size)
        .zip(real.chunks(group_size))
        .map(|(g, r)| {
            // A short tail chunk behaves as if zero padded.
            (detect_group_precision(g, n_l), r.iter().filter(|&&x| x).count())
        })
        .collect())
}

/// Precision of the whole layer, i.e. the static worst case for this input.
pub fn layer_precision(tensor: &FixedTensor, n_l: u8) -> Result<GroupPrecision> {
    Ok(detect_group_precision(&tensor.magnitudes()?, n_l))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionHistogram {
    pub group_size: usize,
    /// `counts[p]` is the number of groups needing `p` bits, `p` in `0..=width`.
    pub counts: Vec<u64>,
}

impl PrecisionHistogram {
    pub fn new(group_size: usize, width: BitWidth) -> Self {
        PrecisionHistogram {
            group_size,
            counts: vec![0; width.bits() as usize + 1],
        }
    }

    pub fn record(&mut self, p: u8) {
        self.counts[p as usize] += 1;
    }

    pub fn groups(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Cumulative fraction of groups at or below each precision.
    pub fn cdf(&self) -> Vec<f64> {
        let total = self.groups();
        let mut acc = 0;
        self.counts
            .iter()
            .map(|&c| {
                acc += c;
                if total == 0 {
                    0.0
                } else {
                    acc as f64 / total as f64
                }
            })
            .collect()
    }

    /// Merges counts from another shard with the same group size and width.
    pub fn merge(&mut self, other: &PrecisionHistogram) -> Result<()> {
        if self.group_size != other.group_size || self.counts.len() != other.counts.len() {
            return Err(Error::Profile("cannot merge histograms of different shape".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `(precision, count, cdf)` rows.
    pub fn rows(&self) -> Vec<(u8, u64, f64)> {
        self.counts
            .iter()
            .zip(self.cdf())
            .enumerate()
            .map(|(p, (&c, f))| (p as u8, c, f))
            .collect()
    }
}

pub fn precision_histogram(
    tensor: &FixedTensor,
    group_size: usize,
    n_l: u8,
) -> Result<PrecisionHistogram> {
    let mut hist = PrecisionHistogram::new(group_size, tensor.width());
    for (g, _) in group_precisions(tensor, group_size, n_l)? {
        hist.record(g.p);
    }
    Ok(hist)
}

/// Usage-weighted mean of the per-group precision.
///
/// Without explicit weights each group counts once per real value it holds,
/// so a zero-padded tail group weighs in proportionally to its real content.
pub fn effective_precision(
    tensor: &FixedTensor,
    group_size: usize,
    n_l: u8,
    usage_weights: Option<&[f64]>,
) -> Result<f64> {
    let groups = group_precisions(tensor, group_size, n_l)?;
    if let Some(w) = usage_weights {
        if w.len() != groups.len() {
            return Err(Error::Profile(format!(
                "{} usage weights for {} groups",
                w.len(),
                groups.len()
            )));
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (g, real)) in groups.iter().enumerate() {
        let w = usage_weights.map_or(*real as f64, |w| w[i]);
        num += w * g.p as f64;
        den += w;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_one_example() {
        let g = detect_group_precision(&[0x0800, 0x0123, 0x0004, 0x0700], 0);
        assert_eq!((g.n_h, g.p, g.all_zero), (11, 12, false));
    }

    #[test]
    fn all_zero_group() {
        let g = detect_group_precision(&[0; 16], 0);
        assert!(g.all_zero);
        assert_eq!(g.p, 0);
    }

    #[test]
    fn trailing_bits_profile() {
        let g = detect_group_precision(&[0x000C, 0x0004], 2);
        assert_eq!((g.n_h, g.p), (3, 2));
    }

    #[test]
    fn profile_filtering_everything_is_flagged() {
        let g = detect_group_precision(&[0b11], 4);
        assert!(g.filtered);
        assert_eq!(g.p, 1);
    }

    #[test]
    fn sign_magnitude_examples() {
        assert_eq!(to_sign_magnitude(5, BitWidth::W16).unwrap(), 0b1010);
        assert_eq!(to_sign_magnitude(-5, BitWidth::W16).unwrap(), 0b1011);
        assert_eq!(to_sign_magnitude(0, BitWidth::W16).unwrap(), 0);
        assert!(to_sign_magnitude(-32768, BitWidth::W16).is_err());
        assert!(to_sign_magnitude(-128, BitWidth::W8).is_err());
        assert_eq!(from_sign_magnitude(0b1011), -5);
    }

    #[test]
    fn sign_magnitude_round_trip_exhaustive_8b() {
        for v in -127..=127 {
            let p = to_sign_magnitude(v, BitWidth::W8).unwrap();
            assert!(p < 256);
            assert_eq!(from_sign_magnitude(p), v);
        }
    }

    #[test]
    fn uniform_ones_give_single_bin() {
        let t = FixedTensor::unsigned(vec![1; 1024], BitWidth::W16).unwrap();
        let h = precision_histogram(&t, 256, 0).unwrap();
        assert_eq!(h.groups(), 4);
        assert_eq!(h.counts[1], 4);
        let cdf = h.cdf();
        assert_eq!(cdf[0], 0.0);
        assert!(cdf[1..].iter().all(|&f| f == 1.0));
    }

    #[test]
    fn outlier_only_raises_its_own_group() {
        let mut v = vec![3; 1024];
        v[300] = 0x8001;
        let t = FixedTensor::unsigned(v, BitWidth::W16).unwrap();
        for gs in [16, 64, 256] {
            let groups = group_precisions(&t, gs, 0).unwrap();
            for (i, (g, _)) in groups.iter().enumerate() {
                let expect = if i == 300 / gs { 16 } else { 2 };
                assert_eq!(g.p, expect, "group size {gs}, group {i}");
            }
        }
    }

    #[test]
    fn effective_precision_examples() {
        let t = FixedTensor::unsigned(vec![16; 64], BitWidth::W16).unwrap();
        assert_eq!(effective_precision(&t, 16, 0, None).unwrap(), 5.0);
        let mut v = vec![8u16 as i32; 16];
        v.extend(vec![128; 16]);
        let t = FixedTensor::unsigned(v, BitWidth::W16).unwrap();
        assert_eq!(effective_precision(&t, 16, 0, None).unwrap(), 6.0);
        assert_eq!(effective_precision(&t, 16, 0, Some(&[1.0, 3.0])).unwrap(), 7.0);
    }

    #[test]
    fn profile_validation() {
        let mut p = LayerProfile::new("conv1", 9, 16);
        assert!(p.validate(BitWidth::W16).is_ok());
        assert!(p.validate(BitWidth::W8).is_err());
        p.n_l = 9;
        assert!(p.validate(BitWidth::W16).is_err());
    }
}
