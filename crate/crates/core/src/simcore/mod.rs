// SPDX-License-Identifier: Apache-2.0

//! Cycle models for the bit-parallel baseline and the bit-serial designs,
//! and a functional SIP emulator used to check them.
//!
//! A conv step dispatches one brick from each of `columns` windows to every
//! tile; the 16 tiles hold 16 filters each, so a step covers
//! `columns * 16` activations against 256 filters. BASE takes `width` cycles
//! per step (16 at 16 bits); the bit-serial designs take one cycle per
//! activation bit, or per two bits with `bits_per_cycle = 2`, which halves
//! the SIP columns.

mod conv;
mod fc;
mod functional;
mod geometry;
mod loom;
mod sip;

pub use conv::simulate_conv;
pub use fc::{simulate_fc, FcPrecision};
pub use functional::functional_check;
pub use geometry::{LayerGeometry, LayerShape};
pub use loom::{loom_steps, simulate_loom};
pub use sip::{
    accumulator_bits, serial_inner_product, serial_inner_product_bits, truncated_dot,
    PrecisionBroadcast,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::LayerProfile;
use crate::tensors::{BitWidth, FixedTensor};
use crate::BRICK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Base,
    Stripes,
    DStripes,
    Trt,
    Loom,
}

impl Design {
    pub const ALL: [Design; 5] = [
        Design::Base,
        Design::Stripes,
        Design::DStripes,
        Design::Trt,
        Design::Loom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Design::Base => "BASE",
            Design::Stripes => "Stripes",
            Design::DStripes => "DStripes",
            Design::Trt => "TRT",
            Design::Loom => "Loom",
        }
    }

    /// Whether conv steps are charged per detected group precision.
    pub fn is_dynamic(self) -> bool {
        matches!(self, Design::DStripes | Design::Trt)
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Design::Base),
            "stripes" => Ok(Design::Stripes),
            "dstripes" => Ok(Design::DStripes),
            "trt" | "dstripes_t" => Ok(Design::Trt),
            "loom" => Ok(Design::Loom),
            other => Err(Error::Unsupported(format!("unknown design `{other}`"))),
        }
    }
}

/// Which activations share one detected precision in a dynamic design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicGroup {
    /// Everything dispatched in one step (256 activations at one bit per
    /// cycle).
    #[default]
    Dispatch,
    /// Each SIP column's 16 activations on its own; a block of steps then
    /// takes as long as its slowest column.
    Column,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorConfig {
    pub design: Design,
    pub tiles: u32,
    pub filters_per_tile: u32,
    pub weights_per_filter: u32,
    pub sip_columns: u32,
    pub bits_per_cycle: u8,
    pub width: BitWidth,
    pub dynamic_group: DynamicGroup,
    /// Force the FC cascade slice count instead of picking the fastest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade_slices: Option<u32>,
    /// Bit-parallel cycles a Loom step is compared against; `width^2` when
    /// unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loom_baseline_charge: Option<u32>,
    pub loom_macs_per_step: u64,
    /// Keep a per-step record in the results.
    #[serde(default)]
    pub trace: bool,
}

impl AcceleratorConfig {
    pub fn new(design: Design) -> Self {
        AcceleratorConfig {
            design,
            tiles: 16,
            filters_per_tile: 16,
            weights_per_filter: BRICK as u32,
            sip_columns: 16,
            bits_per_cycle: 1,
            width: BitWidth::W16,
            dynamic_group: DynamicGroup::Dispatch,
            cascade_slices: None,
            loom_baseline_charge: None,
            loom_macs_per_step: 32768,
            trace: false,
        }
    }

    pub fn with_design(&self, design: Design) -> Self {
        AcceleratorConfig {
            design,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tiles == 0 || self.filters_per_tile == 0 || self.sip_columns == 0 {
            return Err(Error::Unsupported("zero-sized accelerator".into()));
        }
        if self.weights_per_filter as usize != BRICK {
            return Err(Error::Unsupported(format!(
                "weights per filter must equal the brick size {BRICK}"
            )));
        }
        if !(1..=2).contains(&self.bits_per_cycle) {
            return Err(Error::Unsupported(format!(
                "bits per cycle must be 1 or 2, got {}",
                self.bits_per_cycle
            )));
        }
        if self.bits_per_cycle == 2 && !self.sip_columns.is_multiple_of(2) {
            return Err(Error::Unsupported(
                "two bits per cycle needs an even SIP column count".into(),
            ));
        }
        if self.loom_macs_per_step == 0 || self.loom_baseline_charge == Some(0) {
            return Err(Error::Unsupported("Loom step parameters must be positive".into()));
        }
        Ok(())
    }

    /// SIP columns in use: halved when two bits are consumed per cycle.
    pub fn columns(&self) -> usize {
        (self.sip_columns / self.bits_per_cycle as u32) as usize
    }

    /// Filters processed concurrently.
    pub fn filters_per_pass(&self) -> usize {
        (self.tiles * self.filters_per_tile) as usize
    }

    /// Peak MACs per cycle of the bit-parallel baseline.
    pub fn peak_macs(&self) -> u64 {
        self.tiles as u64 * self.filters_per_tile as u64 * self.weights_per_filter as u64
    }

    /// Cycles one bit-serial step takes at precision `p`. A group that
    /// detects as all zero still spends its end-of-group cycle.
    pub fn charge(&self, p: u8) -> u64 {
        (p as u64).div_ceil(self.bits_per_cycle as u64).max(1)
    }

    pub fn loom_baseline(&self) -> u64 {
        self.loom_baseline_charge
            .map(u64::from)
            .unwrap_or((self.width.bits() * self.width.bits()) as u64)
    }
}

/// Where a conv layer's activation precisions come from.
#[derive(Debug, Clone, Copy)]
pub enum PrecisionSource<'a> {
    /// Static per-layer precisions; dynamic designs fall back to `P_a`.
    Profile(&'a LayerProfile),
    /// One precision per activation step, in dispatch order
    /// (group, window block, kernel row, kernel column, channel brick).
    /// Repeated for every filter pass. Static designs use the maximum.
    Steps(&'a [u8]),
    /// Detect from the layer's input tensor, truncating below the profile's
    /// `n_l`. Static designs use the profile's `P_a`.
    Activations {
        tensor: &'a FixedTensor,
        profile: &'a LayerProfile,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub p_a: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_w: Option<u8>,
    pub cycles: u64,
    /// MACs performed, padding excluded.
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCycles {
    pub layer: String,
    pub design: Design,
    pub fc: bool,
    pub macs: u64,
    pub steps: u64,
    pub cycles: u64,
    pub base_cycles: u64,
    /// Cycles with no rounding losses: every step is charged in proportion
    /// to the MACs it actually performs.
    pub ideal_cycles: f64,
    pub ideal_base_cycles: f64,
    /// TRT weight pipeline fill, included in `cycles`.
    pub fill_cycles: u64,
    /// Cascade reduction cycles, included in `cycles`.
    pub reduction_cycles: u64,
    pub cascade_slices: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<StepRecord>,
}

impl LayerCycles {
    pub fn speedup(&self) -> f64 {
        ratio(self.base_cycles as f64, self.cycles as f64)
    }

    pub fn ideal_speedup(&self) -> f64 {
        ratio(self.ideal_base_cycles, self.ideal_cycles)
    }

    /// Fraction of cycles doing useful work at the charged precision.
    pub fn utilization(&self) -> f64 {
        ratio(self.ideal_cycles, self.cycles as f64)
    }

    pub fn fill_overhead(&self) -> f64 {
        ratio(self.fill_cycles as f64, self.cycles as f64)
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        1.0
    } else {
        a / b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub design: Design,
    pub layers: Vec<LayerCycles>,
}

impl CycleReport {
    pub fn new(design: Design, layers: Vec<LayerCycles>) -> Self {
        CycleReport { design, layers }
    }

    pub fn cycles(&self) -> u64 {
        self.layers.iter().map(|l| l.cycles).sum()
    }

    pub fn base_cycles(&self) -> u64 {
        self.layers.iter().map(|l| l.base_cycles).sum()
    }

    pub fn ideal_cycles(&self) -> f64 {
        self.layers.iter().map(|l| l.ideal_cycles).sum()
    }

    pub fn ideal_base_cycles(&self) -> f64 {
        self.layers.iter().map(|l| l.ideal_base_cycles).sum()
    }

    pub fn fill_cycles(&self) -> u64 {
        self.layers.iter().map(|l| l.fill_cycles).sum()
    }

    pub fn speedup(&self) -> f64 {
        ratio(self.base_cycles() as f64, self.cycles() as f64)
    }

    pub fn ideal_speedup(&self) -> f64 {
        ratio(self.ideal_base_cycles(), self.ideal_cycles())
    }

    pub fn fill_overhead(&self) -> f64 {
        ratio(self.fill_cycles() as f64, self.cycles() as f64)
    }

    /// Restricts the report to conv or FC layers.
    pub fn filter(&self, fc: bool) -> CycleReport {
        CycleReport {
            design: self.design,
            layers: self.layers.iter().filter(|l| l.fc == fc).cloned().collect(),
        }
    }
}

/// Simulates one layer with static precisions, or with precisions detected
/// from `activations` when given.
pub fn simulate_layer(
    config: &AcceleratorConfig,
    layer: &LayerGeometry,
    profile: &LayerProfile,
    activations: Option<&FixedTensor>,
) -> Result<LayerCycles> {
    match config.design {
        Design::Loom => simulate_loom(config, layer, &[profile.p_a], &[profile.p_w]),
        _ if layer.is_fc() => {
            let precision = FcPrecision {
                p_a: profile.p_a,
                p_w: profile.p_w,
                n_l: profile.n_l,
                activations,
            };
            simulate_fc(config, layer, &precision)
        }
        _ => {
            let source = match activations {
                Some(tensor) => PrecisionSource::Activations { tensor, profile },
                None => PrecisionSource::Profile(profile),
            };
            simulate_conv(config, layer, source)
        }
    }
}

/// Simulates every layer of a network with static profiles.
pub fn simulate_network(
    config: &AcceleratorConfig,
    layers: &[(LayerGeometry, LayerProfile)],
) -> Result<CycleReport> {
    let rows = layers
        .iter()
        .map(|(g, p)| simulate_layer(config, g, p, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(CycleReport::new(config.design, rows))
}
