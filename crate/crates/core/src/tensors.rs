// SPDX-License-Identifier: Apache-2.0

//! Fixed-point tensors, their on-disk manifest format, and brick extraction.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::to_sign_magnitude;
use crate::BRICK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum BitWidth {
    W8,
    W16,
}

impl BitWidth {
    pub const fn bits(self) -> u32 {
        match self {
            BitWidth::W8 => 8,
            BitWidth::W16 => 16,
        }
    }

    pub const fn bytes(self) -> usize {
        self.bits() as usize / 8
    }
}

impl TryFrom<u32> for BitWidth {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitWidth::W8),
            16 => Ok(BitWidth::W16),
            other => Err(Error::UnsupportedWidth(other)),
        }
    }
}

impl From<BitWidth> for u32 {
    fn from(w: BitWidth) -> u32 {
        w.bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Signedness {
    Unsigned,
    TwosComplement,
}

impl Signedness {
    /// Inclusive value range of a `width`-bit integer.
    pub fn range(self, width: BitWidth) -> (i64, i64) {
        let bits = width.bits();
        match self {
            Signedness::Unsigned => (0, (1i64 << bits) - 1),
            Signedness::TwosComplement => (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Signedness::Unsigned => "unsigned",
            Signedness::TwosComplement => "twos-complement",
        }
    }
}

/// How a flat index maps to a (spatial position, channel) pair.
///
/// Channel-last layouts (`nhwc`, `nc`, `oi`, `ohwi`) keep the channel as the
/// innermost axis. `nchw` keeps it at axis 1. `flat` treats the whole tensor
/// as a single position with one long channel vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Nhwc,
    Nchw,
    Nc,
    Oi,
    Ohwi,
    Flat,
}

impl Layout {
    fn expected_rank(self) -> Option<usize> {
        match self {
            Layout::Nhwc | Layout::Nchw | Layout::Ohwi => Some(4),
            Layout::Nc | Layout::Oi => Some(2),
            Layout::Flat => None,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Layout::Nhwc => 0,
            Layout::Nchw => 1,
            Layout::Nc => 2,
            Layout::Oi => 3,
            Layout::Ohwi => 4,
            Layout::Flat => 5,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Layout::Nhwc,
            1 => Layout::Nchw,
            2 => Layout::Nc,
            3 => Layout::Oi,
            4 => Layout::Ohwi,
            5 => Layout::Flat,
            _ => return None,
        })
    }
}

/// A quantized integer tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedTensor {
    shape: Vec<usize>,
    values: Vec<i32>,
    width: BitWidth,
    signedness: Signedness,
    layout: Layout,
    scale: f64,
    relu_output: bool,
}

impl FixedTensor {
    pub fn new(
        shape: Vec<usize>,
        values: Vec<i32>,
        width: BitWidth,
        signedness: Signedness,
        layout: Layout,
    ) -> Result<Self> {
        check_shape(&shape, layout, values.len())?;
        let (lo, hi) = signedness.range(width);
        if let Some(index) = values
            .iter()
            .position(|&v| (v as i64) < lo || (v as i64) > hi)
        {
            return Err(Error::OutOfRange {
                index,
                value: values[index] as i64,
                width: width.bits(),
                signedness: signedness.name(),
            });
        }
        Ok(FixedTensor {
            shape,
            values,
            width,
            signedness,
            layout,
            scale: 1.0,
            relu_output: false,
        })
    }

    /// Convenience constructor for a 1-D unsigned tensor.
    pub fn unsigned(values: Vec<i32>, width: BitWidth) -> Result<Self> {
        let n = values.len();
        Self::new(vec![n], values, width, Signedness::Unsigned, Layout::Flat)
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidScale(scale));
        }
        self.scale = scale;
        Ok(self)
    }

    /// Flags the tensor as a ReLU output; every value must be non-negative.
    pub fn with_relu_output(mut self, relu: bool) -> Result<Self> {
        if relu {
            if let Some(index) = self.values.iter().position(|&v| v < 0) {
                return Err(Error::NegativeActivation {
                    index,
                    value: self.values[index] as i64,
                });
            }
        }
        self.relu_output = relu;
        Ok(self)
    }

    pub fn reshape(mut self, shape: Vec<usize>, layout: Layout) -> Result<Self> {
        check_shape(&shape, layout, self.values.len())?;
        self.shape = shape;
        self.layout = layout;
        Ok(self)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn width(&self) -> BitWidth {
        self.width
    }

    pub fn signedness(&self) -> Signedness {
        self.signedness
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_relu_output(&self) -> bool {
        self.relu_output
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channels(&self) -> usize {
        match self.layout {
            Layout::Flat => self.values.len(),
            Layout::Nchw => self.shape[1],
            _ => *self.shape.last().unwrap_or(&0),
        }
    }

    /// Number of spatial positions (everything that is not the channel axis).
    pub fn positions(&self) -> usize {
        match self.channels() {
            0 => 0,
            c => self.values.len() / c,
        }
    }

    /// Flat index of `(position, channel)` under the tensor's layout.
    pub fn flat_index(&self, position: usize, channel: usize) -> usize {
        match self.layout {
            Layout::Nchw => {
                let plane = self.shape[2] * self.shape[3];
                let c = self.shape[1];
                let (n, hw) = (position / plane, position % plane);
                (n * c + channel) * plane + hw
            }
            Layout::Flat => channel,
            _ => position * self.channels() + channel,
        }
    }

    /// Values as the unsigned bit patterns the precision detector consumes:
    /// unsigned values as-is, signed values in shifted sign-magnitude form.
    pub fn magnitudes(&self) -> Result<Vec<u32>> {
        match self.signedness {
            Signedness::Unsigned => Ok(self.values.iter().map(|&v| v as u32).collect()),
            Signedness::TwosComplement => self
                .values
                .iter()
                .map(|&v| to_sign_magnitude(v, self.width))
                .collect(),
        }
    }
}

fn check_shape(shape: &[usize], layout: Layout, len: usize) -> Result<()> {
    if let Some(rank) = layout.expected_rank() {
        if shape.len() != rank {
            return Err(Error::Shape(format!(
                "layout {layout:?} needs rank {rank}, got shape {shape:?}"
            )));
        }
    }
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::LengthMismatch {
            expected,
            found: len,
        });
    }
    Ok(())
}

/// Sixteen values contiguous along the channel dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Brick {
    pub position: usize,
    pub channel: usize,
    pub values: [i32; BRICK],
    /// Bit `i` set when slot `i` is zero padding past the last channel.
    pub pad_mask: u16,
}

impl Brick {
    pub fn real_len(&self) -> usize {
        BRICK - self.pad_mask.count_ones() as usize
    }
}

/// Cuts a tensor into bricks, position-major and channel-group-minor.
///
/// Tail bricks are zero padded; the padded slots are recorded in `pad_mask`.
pub fn bricks_of(tensor: &FixedTensor) -> Vec<Brick> {
    let channels = tensor.channels();
    let groups = channels.div_ceil(BRICK);
    let mut out = Vec::with_capacity(tensor.positions() * groups);
    for position in 0..tensor.positions() {
        for g in 0..groups {
            let base = g * BRICK;
            let mut values = [0i32; BRICK];
            let mut pad_mask = 0u16;
            for (i, slot) in values.iter_mut().enumerate() {
                let c = base + i;
                if c < channels {
                    *slot = tensor.values[tensor.flat_index(position, c)];
                } else {
                    pad_mask |= 1 << i;
                }
            }
            out.push(Brick {
                position,
                channel: base,
                values,
                pad_mask,
            });
        }
    }
    out
}

/// Quantizes reals onto a `width`-bit grid: `round(x / scale)`, rounding half
/// away from zero, then saturating.
///
/// Signed output saturates symmetrically at `±(2^(width-1) - 1)` so that every
/// value has a sign-magnitude counterpart.
pub fn quantize(
    xs: &[f64],
    width: BitWidth,
    scale: f64,
    signedness: Signedness,
) -> Result<FixedTensor> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidScale(scale));
    }
    let (lo, hi) = match signedness.range(width) {
        (lo, hi) if lo < 0 => (lo + 1, hi),
        r => r,
    };
    let values = xs
        .iter()
        .enumerate()
        .map(|(index, &x)| {
            if !x.is_finite() {
                return Err(Error::NonFinite { index });
            }
            let q = (x / scale).round();
            Ok(q.clamp(lo as f64, hi as f64) as i32)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = values.len();
    FixedTensor::new(vec![n], values, width, signedness, Layout::Flat)?.with_scale(scale)
}

/// JSON manifest describing a raw little-endian tensor dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Payload path, relative to the manifest's directory.
    pub data_file: PathBuf,
    pub shape: Vec<usize>,
    pub width: BitWidth,
    pub signedness: Signedness,
    pub layout: Layout,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub relu_output: bool,
    /// Bytes per stored element; defaults to `width / 8`. Dumps taken from
    /// frameworks that store 32-bit integers can set this to 4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_bytes: Option<u8>,
}

fn one() -> f64 {
    1.0
}

pub fn load_tensor(manifest_path: impl AsRef<Path>) -> Result<FixedTensor> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let data_path = dir.join(&manifest.data_file);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;

    let elem = manifest
        .element_bytes
        .map(usize::from)
        .unwrap_or(manifest.width.bytes());
    if !matches!(elem, 1 | 2 | 4) {
        return Err(Error::Shape(format!("element_bytes must be 1, 2 or 4, got {elem}")));
    }
    let expected: usize = manifest.shape.iter().product();
    if bytes.len() % elem != 0 || bytes.len() / elem != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: bytes.len() / elem,
        });
    }
    let signed = manifest.signedness == Signedness::TwosComplement;
    let raw: Vec<i64> = bytes
        .chunks_exact(elem)
        .map(|c| match (elem, signed) {
            (1, false) => c[0] as i64,
            (1, true) => c[0] as i8 as i64,
            (2, false) => u16::from_le_bytes([c[0], c[1]]) as i64,
            (2, true) => i16::from_le_bytes([c[0], c[1]]) as i64,
            (_, false) => u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64,
            (_, true) => i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64,
        })
        .collect();

    let (lo, hi) = manifest.signedness.range(manifest.width);
    if let Some(index) = raw.iter().position(|&v| v < lo || v > hi) {
        return Err(Error::OutOfRange {
            index,
            value: raw[index],
            width: manifest.width.bits(),
            signedness: manifest.signedness.name(),
        });
    }
    let values = raw.into_iter().map(|v| v as i32).collect();
    FixedTensor::new(
        manifest.shape,
        values,
        manifest.width,
        manifest.signedness,
        manifest.layout,
    )?
    .with_scale(manifest.scale)?
    .with_relu_output(manifest.relu_output)
}

/// Writes `tensor` as a manifest plus a payload file next to it
/// (`<stem>.bin`), using `width / 8` bytes per element.
pub fn save_tensor(tensor: &FixedTensor, manifest_path: impl AsRef<Path>) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "tensor".into());
    let data_file = PathBuf::from(format!("{stem}.bin"));
    let dir = manifest_path.parent().unwrap_or(Path::new("."));

    let mut payload = Vec::with_capacity(tensor.len() * tensor.width.bytes());
    for &v in &tensor.values {
        match tensor.width {
            BitWidth::W8 => payload.push(v as u8),
            BitWidth::W16 => payload.extend_from_slice(&(v as u16).to_le_bytes()),
        }
    }
    let data_path = dir.join(&data_file);
    fs::write(&data_path, payload).map_err(|e| Error::io(&data_path, e))?;

    let manifest = Manifest {
        data_file,
        shape: tensor.shape.clone(),
        width: tensor.width,
        signedness: tensor.signedness,
        layout: tensor.layout,
        scale: tensor.scale,
        relu_output: tensor.relu_output,
        element_bytes: None,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nhwc(h: usize, w: usize, c: usize, values: Vec<i32>) -> FixedTensor {
        FixedTensor::new(
            vec![1, h, w, c],
            values,
            BitWidth::W16,
            Signedness::Unsigned,
            Layout::Nhwc,
        )
        .unwrap()
    }

    #[test]
    fn twenty_channels_make_two_bricks_with_twelve_pads() {
        let t = nhwc(1, 1, 20, (1..=20).collect());
        let bricks = bricks_of(&t);
        assert_eq!(bricks.len(), 2);
        assert_eq!(bricks[0].pad_mask, 0);
        assert_eq!(bricks[1].pad_mask, 0xFFF0);
        assert_eq!(bricks[1].real_len(), 4);
        assert_eq!(&bricks[1].values[..4], &[17, 18, 19, 20]);
        assert!(bricks[1].values[4..].iter().all(|&v| v == 0));
    }

    #[test]
    fn brick_counts() {
        assert_eq!(bricks_of(&nhwc(1, 1, 16, vec![1; 16])).len(), 1);
        assert_eq!(bricks_of(&nhwc(1, 2, 48, vec![1; 96])).len(), 6);
        let single = bricks_of(&nhwc(2, 2, 1, vec![3; 4]));
        assert_eq!(single.len(), 4);
        assert!(single.iter().all(|b| b.pad_mask.count_ones() == 15));
    }

    #[test]
    fn nchw_bricks_gather_along_channels() {
        // 1x2x1x2: channel 0 = [1, 2], channel 1 = [3, 4]
        let t = FixedTensor::new(
            vec![1, 2, 1, 2],
            vec![1, 2, 3, 4],
            BitWidth::W8,
            Signedness::Unsigned,
            Layout::Nchw,
        )
        .unwrap();
        let b = bricks_of(&t);
        assert_eq!(b.len(), 2);
        assert_eq!(&b[0].values[..2], &[1, 3]);
        assert_eq!(&b[1].values[..2], &[2, 4]);
    }

    #[test]
    fn range_and_relu_checks() {
        let err = FixedTensor::unsigned(vec![1, 256, 3], BitWidth::W8).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { index: 1, .. }));
        let neg = FixedTensor::new(
            vec![2],
            vec![1, -1],
            BitWidth::W8,
            Signedness::TwosComplement,
            Layout::Flat,
        )
        .unwrap();
        assert!(matches!(
            neg.with_relu_output(true),
            Err(Error::NegativeActivation { index: 1, .. })
        ));
    }

    #[test]
    fn quantize_examples() {
        let z = quantize(&[0.0], BitWidth::W8, 0.37, Signedness::Unsigned).unwrap();
        assert_eq!(z.values(), &[0]);
        let sat = quantize(&[300.0], BitWidth::W8, 1.0, Signedness::Unsigned).unwrap();
        assert_eq!(sat.values(), &[255]);
        let one = quantize(&[1.0], BitWidth::W16, 1.0 / 256.0, Signedness::Unsigned).unwrap();
        assert_eq!(one.values(), &[256]);
        let half = quantize(&[2.5, -2.5], BitWidth::W8, 1.0, Signedness::TwosComplement).unwrap();
        assert_eq!(half.values(), &[3, -3]);
        let sym = quantize(&[-1e9], BitWidth::W8, 1.0, Signedness::TwosComplement).unwrap();
        assert_eq!(sym.values(), &[-127]);
        assert!(matches!(
            quantize(&[1.0, f64::NAN], BitWidth::W8, 1.0, Signedness::Unsigned),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(quantize(&[1.0], BitWidth::W8, 0.0, Signedness::Unsigned).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(matches!(
            FixedTensor::new(vec![2, 3], vec![0; 5], BitWidth::W8, Signedness::Unsigned, Layout::Nc),
            Err(Error::LengthMismatch { expected: 6, found: 5 })
        ));
        assert!(FixedTensor::new(vec![6], vec![0; 6], BitWidth::W8, Signedness::Unsigned, Layout::Nhwc)
            .is_err());
    }
}
