// SPDX-License-Identifier: Apache-2.0

//! Bandwidth-limited layer timing.
//!
//! Transfers overlap compute perfectly, so a layer takes the longer of its
//! compute cycles and the cycles needed to move its off-chip traffic. Input
//! activations that do not fit the activation memory are fetched once per
//! AM-sized tile of the working set; weights are read once per layer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{EncodedStream, Scheme};
use crate::error::{Error, Result};
use crate::simcore::{Design, LayerGeometry};

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * KIB;

/// Memory technology, peak bandwidth and on-chip buffer sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub name: String,
    /// Peak off-chip bandwidth in GB/s; `None` for unlimited.
    pub bandwidth_gbps: Option<f64>,
    #[serde(default = "default_clock")]
    pub clock_mhz: f64,
    /// Fraction of the peak bandwidth actually delivered.
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
    /// Activation memory; `None` for unlimited.
    #[serde(default = "default_am")]
    pub am_bytes: Option<u64>,
    #[serde(default = "default_wm")]
    pub wm_bytes_per_tile: u64,
}

fn default_clock() -> f64 {
    980.0
}

fn default_efficiency() -> f64 {
    0.7
}

fn default_am() -> Option<u64> {
    Some(4 * MIB)
}

fn default_wm() -> u64 {
    320 * KIB
}

impl MemoryConfig {
    pub fn new(name: impl Into<String>, bandwidth_gbps: Option<f64>) -> Self {
        MemoryConfig {
            name: name.into(),
            bandwidth_gbps,
            clock_mhz: default_clock(),
            efficiency: default_efficiency(),
            am_bytes: default_am(),
            wm_bytes_per_tile: default_wm(),
        }
    }

    pub fn ddr4_3200_x2() -> Self {
        Self::new("DDR4-3200x2", Some(51.2))
    }

    pub fn lpddr4_4267() -> Self {
        Self::new("LPDDR4-4267", Some(34.1))
    }

    pub fn hbm() -> Self {
        Self::new("HBM", Some(128.0))
    }

    pub fn hbm2() -> Self {
        Self::new("HBM2", Some(256.0))
    }

    pub fn infinite() -> Self {
        MemoryConfig {
            am_bytes: None,
            ..Self::new("INF", None)
        }
    }

    pub fn presets() -> Vec<MemoryConfig> {
        vec![
            Self::ddr4_3200_x2(),
            Self::lpddr4_4267(),
            Self::hbm(),
            Self::hbm2(),
            Self::infinite(),
        ]
    }

    pub fn preset(name: &str) -> Result<MemoryConfig> {
        Self::presets()
            .into_iter()
            .find(|m| m.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::UnknownFixture(format!("memory preset `{name}`")))
    }

    pub fn with_am(mut self, am_bytes: Option<u64>) -> Self {
        self.am_bytes = am_bytes;
        self
    }

    pub fn with_efficiency(mut self, efficiency: f64) -> Self {
        self.efficiency = efficiency;
        self
    }

    /// Reads a JSON list of configurations.
    pub fn load_list(path: impl AsRef<Path>) -> Result<Vec<MemoryConfig>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let list: Vec<MemoryConfig> = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        for m in &list {
            m.validate()?;
        }
        Ok(list)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Profile(format!("memory {}: {what}", self.name)));
        if let Some(bw) = self.bandwidth_gbps {
            if !(bw.is_finite() && bw > 0.0) {
                return bad("bandwidth must be positive");
            }
        }
        if !(self.clock_mhz.is_finite() && self.clock_mhz > 0.0) {
            return bad("clock must be positive");
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return bad("efficiency must lie in (0, 1]");
        }
        if self.am_bytes == Some(0) || self.wm_bytes_per_tile == 0 {
            return bad("buffer sizes must be positive");
        }
        Ok(())
    }

    /// Delivered bytes per accelerator cycle; `None` when unlimited.
    pub fn bytes_per_cycle(&self) -> Option<f64> {
        self.bandwidth_gbps
            .map(|bw| bw * 1e9 * self.efficiency / (self.clock_mhz * 1e6))
    }

    pub fn am_label(&self) -> String {
        match self.am_bytes {
            None => "INF".into(),
            Some(b) if b % MIB == 0 => format!("{}MB", b / MIB),
            Some(b) if b % KIB == 0 => format!("{}KB", b / KIB),
            Some(b) => format!("{b}B"),
        }
    }
}

/// Off-chip bytes a layer moves, before refetching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDemand {
    pub layer: String,
    pub compute_cycles: u64,
    pub act_in_bytes: u64,
    pub weight_bytes: u64,
    pub act_out_bytes: u64,
}

impl LayerDemand {
    /// Traffic from the encoded input activations, plus weights and
    /// (optionally) encoded outputs.
    pub fn from_streams(
        layer: impl Into<String>,
        compute_cycles: u64,
        input: &EncodedStream,
        weight_bytes: u64,
        output: Option<&EncodedStream>,
    ) -> Self {
        LayerDemand {
            layer: layer.into(),
            compute_cycles,
            act_in_bytes: input.total_bits.div_ceil(8),
            weight_bytes,
            act_out_bytes: output.map_or(0, |s| s.total_bits.div_ceil(8)),
        }
    }

    /// Traffic estimated from layer shape at `width` bits, each part scaled
    /// by its compression ratio.
    pub fn from_geometry(
        layer: &LayerGeometry,
        compute_cycles: u64,
        width_bits: u32,
        act_ratio: f64,
        weight_ratio: f64,
    ) -> Self {
        let (ins, outs) = layer.activation_counts();
        let bytes = |n: u64, r: f64| (n as f64 * width_bits as f64 * r / 8.0).ceil() as u64;
        LayerDemand {
            layer: layer.name.clone(),
            compute_cycles,
            act_in_bytes: bytes(ins, act_ratio),
            weight_bytes: bytes(layer.weight_count(), weight_ratio),
            act_out_bytes: bytes(outs, act_ratio),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Compute,
    Memory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub layer: String,
    pub compute_cycles: u64,
    /// Bytes moved, refetches included.
    pub traffic_bytes: u64,
    pub refetch: u64,
    pub memory_cycles: u64,
    pub time_cycles: u64,
    pub bound: Bound,
}

impl LayerTiming {
    /// Performance relative to the same layer with unlimited memory.
    pub fn normalized_perf(&self) -> f64 {
        if self.time_cycles == 0 {
            1.0
        } else {
            self.compute_cycles as f64 / self.time_cycles as f64
        }
    }
}

/// Times an input working set is streamed through the activation memory.
pub fn refetch_factor(working_set: u64, am_bytes: Option<u64>) -> u64 {
    match am_bytes {
        Some(am) if working_set > am => working_set.div_ceil(am),
        _ => 1,
    }
}

pub fn layer_time(demand: &LayerDemand, mem: &MemoryConfig) -> LayerTiming {
    let refetch = refetch_factor(demand.act_in_bytes, mem.am_bytes);
    let traffic = demand.act_in_bytes * refetch + demand.weight_bytes + demand.act_out_bytes;
    let memory_cycles = match mem.bytes_per_cycle() {
        Some(bpc) => (traffic as f64 / bpc).ceil() as u64,
        None => 0,
    };
    let time = demand.compute_cycles.max(memory_cycles);
    LayerTiming {
        layer: demand.layer.clone(),
        compute_cycles: demand.compute_cycles,
        traffic_bytes: traffic,
        refetch,
        memory_cycles,
        time_cycles: time,
        bound: if memory_cycles > demand.compute_cycles {
            Bound::Memory
        } else {
            Bound::Compute
        },
    }
}

/// Layer demands of one network under one design and scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCase {
    pub network: String,
    pub design: Design,
    pub scheme: Scheme,
    pub layers: Vec<LayerDemand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub network: String,
    pub layer: String,
    pub design: Design,
    pub scheme: Scheme,
    pub memory: String,
    pub am: String,
    pub compute_cycles: u64,
    pub time_cycles: u64,
    pub refetch: u64,
    pub normalized_perf: f64,
}

/// Every case under every memory configuration, one row per layer plus a
/// `total` row per combination.
pub fn sweep(cases: &[SweepCase], memories: &[MemoryConfig]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for case in cases {
        for mem in memories {
            let row = |layer: &str, compute: u64, time: u64, refetch: u64| SweepRow {
                network: case.network.clone(),
                layer: layer.to_string(),
                design: case.design,
                scheme: case.scheme,
                memory: mem.name.clone(),
                am: mem.am_label(),
                compute_cycles: compute,
                time_cycles: time,
                refetch,
                normalized_perf: if time == 0 {
                    1.0
                } else {
                    compute as f64 / time as f64
                },
            };
            let (mut compute, mut time, mut refetch) = (0, 0, 1);
            for d in &case.layers {
                let t = layer_time(d, mem);
                compute += t.compute_cycles;
                time += t.time_cycles;
                refetch = refetch.max(t.refetch);
                rows.push(row(&d.layer, t.compute_cycles, t.time_cycles, t.refetch));
            }
            rows.push(row("total", compute, time, refetch));
        }
    }
    rows
}
