// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{EncodedStream, Scheme};

/// Off-chip traffic of one layer under each encoded scheme, in bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTraffic {
    pub layer: String,
    /// Uncompressed size; the NP reference every ratio is taken against.
    pub np_bits: u64,
    pub sp_bits: Option<u64>,
    pub dp_bits: Option<u64>,
    pub dp_metadata_bits: u64,
    pub dp_padding_bits: u64,
}

impl LayerTraffic {
    pub fn ratio(&self, scheme: Scheme) -> Option<f64> {
        let bits = match scheme {
            Scheme::Np => Some(self.np_bits),
            Scheme::Sp => self.sp_bits,
            Scheme::Dp => self.dp_bits,
        }?;
        Some(if self.np_bits == 0 {
            0.0
        } else {
            bits as f64 / self.np_bits as f64
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub layers: Vec<LayerTraffic>,
    pub total: LayerTraffic,
}

impl TrafficReport {
    /// DP metadata as a percentage of the compressed DP traffic.
    pub fn metadata_overhead_pct(&self) -> Option<f64> {
        let dp = self.total.dp_bits?;
        Some(if dp == 0 {
            0.0
        } else {
            100.0 * self.total.dp_metadata_bits as f64 / dp as f64
        })
    }
}

/// Aggregates per-layer streams. Every stream of a layer must describe the
/// same tensor, so their uncompressed sizes agree.
pub fn traffic_report(layers: &[(String, Vec<EncodedStream>)]) -> Result<TrafficReport> {
    let mut rows = Vec::with_capacity(layers.len());
    for (name, streams) in layers {
        let Some(first) = streams.first() else {
            return Err(Error::Unsupported(format!("layer {name} has no streams")));
        };
        let mut row = LayerTraffic {
            layer: name.clone(),
            np_bits: first.original_bits,
            sp_bits: None,
            dp_bits: None,
            dp_metadata_bits: 0,
            dp_padding_bits: 0,
        };
        for s in streams {
            if s.original_bits != row.np_bits {
                return Err(Error::Unsupported(format!(
                    "layer {name}: streams describe tensors of different size"
                )));
            }
            match s.scheme {
                Scheme::Np => {}
                Scheme::Sp => row.sp_bits = Some(s.total_bits),
                Scheme::Dp => {
                    row.dp_bits = Some(s.total_bits);
                    row.dp_metadata_bits = s.metadata_bits;
                    row.dp_padding_bits = s.padding_bits;
                }
            }
        }
        rows.push(row);
    }
    let sum = |f: fn(&LayerTraffic) -> Option<u64>| -> Option<u64> {
        rows.iter().map(f).sum::<Option<u64>>()
    };
    let total = LayerTraffic {
        layer: "total".into(),
        np_bits: rows.iter().map(|r| r.np_bits).sum(),
        sp_bits: sum(|r| r.sp_bits),
        dp_bits: sum(|r| r.dp_bits),
        dp_metadata_bits: rows.iter().map(|r| r.dp_metadata_bits).sum(),
        dp_padding_bits: rows.iter().map(|r| r.dp_padding_bits).sum(),
    };
    Ok(TrafficReport {
        layers: rows,
        total,
    })
}
