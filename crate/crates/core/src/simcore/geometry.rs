// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::BRICK;

/// Shape of a convolutional or fully-connected layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerShape {
    Conv {
        in_h: usize,
        in_w: usize,
        channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
        filters: usize,
        #[serde(default = "one")]
        groups: usize,
    },
    Fc {
        inputs: usize,
        outputs: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub name: String,
    #[serde(flatten)]
    pub shape: LayerShape,
    /// Stored MAC count; checked against the shape when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macs: Option<u64>,
}

impl LayerGeometry {
    pub fn conv(
        name: impl Into<String>,
        (in_h, in_w, channels): (usize, usize, usize),
        (kernel_h, kernel_w): (usize, usize),
        stride: usize,
        pad: usize,
        filters: usize,
        groups: usize,
    ) -> Self {
        LayerGeometry {
            name: name.into(),
            shape: LayerShape::Conv {
                in_h,
                in_w,
                channels,
                kernel_h,
                kernel_w,
                stride,
                pad,
                filters,
                groups,
            },
            macs: None,
        }
    }

    pub fn fc(name: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        LayerGeometry {
            name: name.into(),
            shape: LayerShape::Fc { inputs, outputs },
            macs: None,
        }
    }

    /// Fills in the stored MAC count from the shape.
    pub fn with_macs(mut self) -> Self {
        self.macs = Some(self.computed_macs());
        self
    }

    pub fn is_fc(&self) -> bool {
        matches!(self.shape, LayerShape::Fc { .. })
    }

    /// Output spatial extent `(out_h, out_w)`; `(1, 1)` for FC layers.
    pub fn output_dims(&self) -> (usize, usize) {
        match self.shape {
            LayerShape::Conv {
                in_h,
                in_w,
                kernel_h,
                kernel_w,
                stride,
                pad,
                ..
            } => (
                (in_h + 2 * pad).saturating_sub(kernel_h) / stride + 1,
                (in_w + 2 * pad).saturating_sub(kernel_w) / stride + 1,
            ),
            LayerShape::Fc { .. } => (1, 1),
        }
    }

    pub fn windows(&self) -> usize {
        let (h, w) = self.output_dims();
        h * w
    }

    pub fn computed_macs(&self) -> u64 {
        match self.shape {
            LayerShape::Conv {
                channels,
                kernel_h,
                kernel_w,
                filters,
                groups,
                ..
            } => {
                self.windows() as u64
                    * filters as u64
                    * (kernel_h * kernel_w * (channels / groups)) as u64
            }
            LayerShape::Fc { inputs, outputs } => inputs as u64 * outputs as u64,
        }
    }

    pub fn macs(&self) -> u64 {
        self.macs.unwrap_or_else(|| self.computed_macs())
    }

    /// Bricks each window needs, per group: `kh * kw * ceil(C_g / 16)`.
    pub fn bricks_per_window(&self) -> usize {
        match self.shape {
            LayerShape::Conv {
                channels,
                kernel_h,
                kernel_w,
                groups,
                ..
            } => kernel_h * kernel_w * (channels / groups).div_ceil(BRICK),
            LayerShape::Fc { inputs, .. } => inputs.div_ceil(BRICK),
        }
    }

    /// Input and output element counts.
    pub fn activation_counts(&self) -> (u64, u64) {
        match self.shape {
            LayerShape::Conv {
                in_h,
                in_w,
                channels,
                filters,
                ..
            } => (
                (in_h * in_w * channels) as u64,
                (self.windows() * filters) as u64,
            ),
            LayerShape::Fc { inputs, outputs } => (inputs as u64, outputs as u64),
        }
    }

    pub fn weight_count(&self) -> u64 {
        match self.shape {
            LayerShape::Conv {
                channels,
                kernel_h,
                kernel_w,
                filters,
                groups,
                ..
            } => (filters * kernel_h * kernel_w * (channels / groups)) as u64,
            LayerShape::Fc { inputs, outputs } => (inputs * outputs) as u64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.shape {
            LayerShape::Conv {
                in_h,
                in_w,
                channels,
                kernel_h,
                kernel_w,
                stride,
                filters,
                groups,
                pad,
            } => {
                if [in_h, in_w, channels, kernel_h, kernel_w, stride, filters, groups]
                    .contains(&0)
                {
                    return Err(Error::Geometry(format!("{}: zero extent", self.name)));
                }
                if channels % groups != 0 || filters % groups != 0 {
                    return Err(Error::Geometry(format!(
                        "{}: {channels} channels / {filters} filters not divisible into {groups} groups",
                        self.name
                    )));
                }
                if kernel_h > in_h + 2 * pad || kernel_w > in_w + 2 * pad {
                    return Err(Error::Geometry(format!(
                        "{}: kernel larger than padded input",
                        self.name
                    )));
                }
            }
            LayerShape::Fc { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::Geometry(format!("{}: zero extent", self.name)));
                }
            }
        }
        if let Some(m) = self.macs {
            let c = self.computed_macs();
            if m != c {
                return Err(Error::Geometry(format!(
                    "{}: stored MAC count {m} disagrees with shape ({c})",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alexnet_conv2_macs() {
        let g = LayerGeometry::conv("conv2", (27, 27, 96), (5, 5), 1, 2, 256, 2);
        assert_eq!(g.output_dims(), (27, 27));
        assert_eq!(g.computed_macs(), 223_948_800);
        assert_eq!(g.bricks_per_window(), 25 * 3);
    }

    #[test]
    fn json_shape() {
        let g = LayerGeometry::fc("fc6", 9216, 4096).with_macs();
        let text = serde_json::to_string(&g).unwrap();
        assert_eq!(
            text,
            r#"{"name":"fc6","type":"fc","inputs":9216,"outputs":4096,"macs":37748736}"#
        );
        let back: LayerGeometry = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        let conv: LayerGeometry = serde_json::from_str(
            r#"{"name":"c","type":"conv","in_h":8,"in_w":8,"channels":3,"kernel_h":3,"kernel_w":3,"filters":4}"#,
        )
        .unwrap();
        assert_eq!(conv.output_dims(), (6, 6));
    }

    #[test]
    fn validation() {
        let mut g = LayerGeometry::conv("c", (8, 8, 3), (3, 3), 1, 0, 4, 2);
        assert!(g.validate().is_err());
        g = LayerGeometry::conv("c", (8, 8, 4), (3, 3), 1, 0, 4, 2).with_macs();
        assert!(g.validate().is_ok());
        g.macs = Some(1);
        assert!(g.validate().is_err());
    }
}
