// SPDX-License-Identifier: Apache-2.0

use crate::error::{Error, Result};
use crate::precision::leading_one;
use crate::tensors::{FixedTensor, Layout};
use crate::BRICK;

use super::{
    AcceleratorConfig, Design, DynamicGroup, LayerCycles, LayerGeometry, LayerShape,
    PrecisionSource, StepRecord,
};

/// Dispatch geometry of one conv layer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvPlan {
    pub groups: usize,
    pub channels_per_group: usize,
    pub filters_per_group: usize,
    pub kernel: (usize, usize),
    pub channel_bricks: usize,
    pub windows: usize,
    pub out_w: usize,
    pub in_dims: (usize, usize),
    pub stride: usize,
    pub pad: usize,
    pub columns: usize,
    pub filters_per_pass: usize,
}

impl ConvPlan {
    pub fn new(layer: &LayerGeometry, columns: usize, filters_per_pass: usize) -> Result<Self> {
        layer.validate()?;
        let LayerShape::Conv {
            in_h,
            in_w,
            channels,
            kernel_h,
            kernel_w,
            stride,
            pad,
            filters,
            groups,
        } = layer.shape
        else {
            return Err(Error::Geometry(format!("{} is not a conv layer", layer.name)));
        };
        let cg = channels / groups;
        Ok(ConvPlan {
            groups,
            channels_per_group: cg,
            filters_per_group: filters / groups,
            kernel: (kernel_h, kernel_w),
            channel_bricks: cg.div_ceil(BRICK),
            windows: layer.windows(),
            out_w: layer.output_dims().1,
            in_dims: (in_h, in_w),
            stride,
            pad,
            columns,
            filters_per_pass,
        })
    }

    pub fn blocks(&self) -> usize {
        self.windows.div_ceil(self.columns)
    }

    pub fn bricks_per_window(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.channel_bricks
    }

    pub fn passes(&self) -> usize {
        self.filters_per_group.div_ceil(self.filters_per_pass)
    }

    /// Activation steps per filter pass, over all groups.
    pub fn unique_steps(&self) -> usize {
        self.groups * self.blocks() * self.bricks_per_window()
    }

    pub fn real_windows(&self, block: usize) -> usize {
        self.columns.min(self.windows - block * self.columns)
    }

    pub fn real_channels(&self, cb: usize) -> usize {
        BRICK.min(self.channels_per_group - cb * BRICK)
    }

    pub fn real_filters(&self, pass: usize) -> usize {
        self.filters_per_pass
            .min(self.filters_per_group - pass * self.filters_per_pass)
    }

    /// Splits a brick index within a window into `(ky, kx, channel brick)`.
    pub fn brick_coords(&self, brick: usize) -> (usize, usize, usize) {
        let cb = brick % self.channel_bricks;
        let k = brick / self.channel_bricks;
        (k / self.kernel.1, k % self.kernel.1, cb)
    }

    /// Whether `tensor` holds this layer's input activations.
    pub fn accepts(&self, tensor: &FixedTensor) -> bool {
        let s = tensor.shape();
        let dims = match tensor.layout() {
            Layout::Nhwc => Some((s[1], s[2])),
            Layout::Nchw => Some((s[2], s[3])),
            _ => None,
        };
        tensor.channels() == self.channels_per_group * self.groups
            && tensor.positions() == self.in_dims.0 * self.in_dims.1
            && dims.is_none_or(|d| d == self.in_dims)
    }

    /// Input position `(iy, ix)` read by window `w` at kernel offset
    /// `(ky, kx)`, or `None` inside the zero padding.
    pub fn input_position(&self, w: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let (oy, ox) = (w / self.out_w, w % self.out_w);
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad)?;
        (iy < self.in_dims.0 && ix < self.in_dims.1).then_some((iy, ix))
    }
}

/// Input activations prepared for detection: magnitudes with the bits below
/// `n_l` dropped.
struct Detector<'a> {
    plan: &'a ConvPlan,
    tensor: &'a FixedTensor,
    values: Vec<u32>,
}

impl<'a> Detector<'a> {
    fn new(plan: &'a ConvPlan, layer: &LayerGeometry, tensor: &'a FixedTensor, n_l: u8) -> Result<Self> {
        if !plan.accepts(tensor) {
            let channels = plan.channels_per_group * plan.groups;
            return Err(Error::Geometry(format!(
                "{}: tensor of shape {:?} does not hold {}x{}x{channels} activations",
                layer.name,
                tensor.shape(),
                plan.in_dims.0,
                plan.in_dims.1
            )));
        }
        let values = tensor.magnitudes()?.into_iter().map(|v| v >> n_l).collect();
        Ok(Detector {
            plan,
            tensor,
            values,
        })
    }

    /// OR of the brick window `w` reads at `brick` in channel group `g`.
    fn brick_or(&self, g: usize, w: usize, brick: usize) -> u32 {
        let (ky, kx, cb) = self.plan.brick_coords(brick);
        let Some((iy, ix)) = self.plan.input_position(w, ky, kx) else {
            return 0;
        };
        let pos = iy * self.plan.in_dims.1 + ix;
        let ch0 = g * self.plan.channels_per_group + cb * BRICK;
        (0..self.plan.real_channels(cb))
            .map(|i| self.values[self.tensor.flat_index(pos, ch0 + i)])
            .fold(0, |a, v| a | v)
    }
}

fn precision_of(signals: u32) -> u8 {
    leading_one(signals).map_or(0, |n| n + 1)
}

/// Cycles of every activation step, in dispatch order, plus the
/// precision each was charged at.
struct Charges {
    /// Per unique step, or per window block in column mode.
    cycles: Vec<u64>,
    precisions: Vec<u8>,
    /// Sum over steps of `real windows * real channels * charge`; column
    /// mode sums per column.
    weighted: f64,
    per_block: bool,
}

pub fn simulate_conv(
    config: &AcceleratorConfig,
    layer: &LayerGeometry,
    source: PrecisionSource<'_>,
) -> Result<LayerCycles> {
    config.validate()?;
    if config.design == Design::Loom {
        return Err(Error::Unsupported(
            "Loom layers are simulated with simulate_loom".into(),
        ));
    }
    let width = config.width.bits() as u8;
    let static_pa = match source {
        PrecisionSource::Profile(p) | PrecisionSource::Activations { profile: p, .. } => {
            p.validate(config.width)?;
            p.p_a
        }
        PrecisionSource::Steps(steps) => {
            if let Some(&bad) = steps.iter().find(|&&p| p > width) {
                return Err(Error::Profile(format!(
                    "step precision {bad} exceeds width {width}"
                )));
            }
            steps.iter().copied().max().unwrap_or(1).max(1)
        }
    };

    let base_plan = ConvPlan::new(layer, config.sip_columns as usize, config.filters_per_pass())?;
    let base = run(
        config,
        layer,
        &base_plan,
        &uniform(&base_plan, width as u64, width),
        config.trace && config.design == Design::Base,
    );
    if config.design == Design::Base {
        return Ok(base);
    }

    let plan = ConvPlan::new(layer, config.columns(), config.filters_per_pass())?;
    let charges = match (config.design, source) {
        (Design::Stripes, _) | (_, PrecisionSource::Profile(_)) => {
            uniform(&plan, config.charge(static_pa), static_pa)
        }
        (_, PrecisionSource::Steps(steps)) => {
            if steps.len() != plan.unique_steps() {
                return Err(Error::Geometry(format!(
                    "{}: {} step precisions given, layer has {} steps",
                    layer.name,
                    steps.len(),
                    plan.unique_steps()
                )));
            }
            from_step_precisions(config, &plan, steps.to_vec())
        }
        (_, PrecisionSource::Activations { tensor, profile }) => {
            let det = Detector::new(&plan, layer, tensor, profile.n_l)?;
            match config.dynamic_group {
                DynamicGroup::Dispatch => {
                    from_step_precisions(config, &plan, dispatch_precisions(&plan, &det))
                }
                DynamicGroup::Column => column_charges(config, &plan, &det),
            }
        }
    };
    let mut out = run(config, layer, &plan, &charges, config.trace);
    out.base_cycles = base.cycles;
    out.ideal_base_cycles = base.ideal_cycles;
    Ok(out)
}

fn uniform(plan: &ConvPlan, charge: u64, p: u8) -> Charges {
    let n = plan.unique_steps();
    let mut weighted = 0.0;
    for b in 0..plan.blocks() {
        for cb in 0..plan.channel_bricks {
            weighted += (plan.real_windows(b) * plan.real_channels(cb)) as f64;
        }
    }
    weighted *= (plan.groups * plan.kernel.0 * plan.kernel.1) as f64 * charge as f64;
    Charges {
        cycles: vec![charge; n],
        precisions: vec![p; n],
        weighted,
        per_block: false,
    }
}

fn from_step_precisions(config: &AcceleratorConfig, plan: &ConvPlan, precisions: Vec<u8>) -> Charges {
    let bpw = plan.bricks_per_window();
    let mut weighted = 0.0;
    let cycles: Vec<u64> = precisions.iter().map(|&p| config.charge(p)).collect();
    for (u, &c) in cycles.iter().enumerate() {
        let block = (u / bpw) % plan.blocks();
        let (_, _, cb) = plan.brick_coords(u % bpw);
        weighted += (plan.real_windows(block) * plan.real_channels(cb)) as f64 * c as f64;
    }
    Charges {
        cycles,
        precisions,
        weighted,
        per_block: false,
    }
}

fn dispatch_precisions(plan: &ConvPlan, det: &Detector<'_>) -> Vec<u8> {
    let mut out = Vec::with_capacity(plan.unique_steps());
    for g in 0..plan.groups {
        for b in 0..plan.blocks() {
            let first = b * plan.columns;
            for brick in 0..plan.bricks_per_window() {
                let signals = (first..first + plan.real_windows(b))
                    .fold(0, |a, w| a | det.brick_or(g, w, brick));
                out.push(precision_of(signals));
            }
        }
    }
    out
}

/// Per-column detection: a block of steps lasts as long as its slowest
/// column.
fn column_charges(config: &AcceleratorConfig, plan: &ConvPlan, det: &Detector<'_>) -> Charges {
    let mut cycles = Vec::with_capacity(plan.groups * plan.blocks());
    let mut precisions = Vec::with_capacity(cycles.capacity());
    let mut weighted = 0.0;
    for g in 0..plan.groups {
        for b in 0..plan.blocks() {
            let mut slowest = 0u64;
            let mut p_max = 0u8;
            for w in b * plan.columns..b * plan.columns + plan.real_windows(b) {
                let mut column = 0u64;
                for brick in 0..plan.bricks_per_window() {
                    let p = precision_of(det.brick_or(g, w, brick));
                    let c = config.charge(p);
                    let (_, _, cb) = plan.brick_coords(brick);
                    column += c;
                    weighted += (plan.real_channels(cb) as u64 * c) as f64;
                    p_max = p_max.max(p);
                }
                slowest = slowest.max(column);
            }
            cycles.push(slowest);
            precisions.push(p_max);
        }
    }
    Charges {
        cycles,
        precisions,
        weighted,
        per_block: true,
    }
}

fn run(
    config: &AcceleratorConfig,
    layer: &LayerGeometry,
    plan: &ConvPlan,
    charges: &Charges,
    trace: bool,
) -> LayerCycles {
    let passes = plan.passes() as u64;
    let per_pass: u64 = charges.cycles.iter().sum();
    let full_step = (plan.columns * BRICK * plan.filters_per_pass) as f64;
    let ideal = charges.weighted * plan.filters_per_group as f64 / full_step;

    let mut records = Vec::new();
    if trace {
        let bpw = plan.bricks_per_window();
        for pass in 0..plan.passes() {
            let rf = plan.real_filters(pass) as u64;
            for (i, (&c, &p)) in charges.cycles.iter().zip(&charges.precisions).enumerate() {
                let macs = if charges.per_block {
                    let b = i % plan.blocks();
                    (plan.real_windows(b) * bpw_channels(plan)) as u64 * rf
                } else {
                    let b = (i / bpw) % plan.blocks();
                    let (_, _, cb) = plan.brick_coords(i % bpw);
                    (plan.real_windows(b) * plan.real_channels(cb)) as u64 * rf
                };
                records.push(StepRecord {
                    p_a: p,
                    p_w: None,
                    cycles: c,
                    macs,
                });
            }
        }
    }

    let steps = passes * (plan.unique_steps() as u64);
    let cycles = passes * per_pass;
    LayerCycles {
        layer: layer.name.clone(),
        design: config.design,
        fc: false,
        macs: layer.macs(),
        steps,
        cycles,
        base_cycles: cycles,
        ideal_cycles: ideal,
        ideal_base_cycles: ideal,
        fill_cycles: 0,
        reduction_cycles: 0,
        cascade_slices: 1,
        trace: records,
    }
}

/// Real channels a window reads over all its bricks.
fn bpw_channels(plan: &ConvPlan) -> usize {
    plan.kernel.0 * plan.kernel.1 * plan.channels_per_group
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precision::LayerProfile;
    use crate::tensors::BitWidth;

    fn cfg(d: Design) -> AcceleratorConfig {
        AcceleratorConfig::new(d)
    }

    #[test]
    fn stripes_static_speedup() {
        let layer = LayerGeometry::conv("c", (16, 16, 64), (3, 3), 1, 1, 256, 1);
        let prof = LayerProfile::new("c", 8, 16);
        let r = simulate_conv(&cfg(Design::Stripes), &layer, PrecisionSource::Profile(&prof)).unwrap();
        assert_eq!(r.speedup(), 2.0);
        assert!((r.ideal_speedup() - 2.0).abs() < 1e-12);
        let base = simulate_conv(&cfg(Design::Base), &layer, PrecisionSource::Profile(&prof)).unwrap();
        assert_eq!(base.speedup(), 1.0);
        assert!((base.ideal_cycles - layer.macs() as f64 / 4096.0).abs() < 1e-6);
    }

    #[test]
    fn four_dynamic_steps() {
        // 16 windows, one 1x1 kernel over 64 channels: four bricks per window
        let layer = LayerGeometry::conv("c", (4, 4, 64), (1, 1), 1, 0, 16, 1);
        let steps = [12, 6, 6, 8];
        let mut c = cfg(Design::DStripes);
        c.trace = true;
        let r = simulate_conv(&c, &layer, PrecisionSource::Steps(&steps)).unwrap();
        assert_eq!(r.cycles, 32);
        assert_eq!(r.base_cycles, 64);
        assert_eq!(r.speedup(), 2.0);
        assert_eq!(r.trace.iter().map(|s| s.cycles).collect::<Vec<_>>(), vec![12, 6, 6, 8]);
        assert_eq!(r.trace.iter().map(|s| s.macs).sum::<u64>(), layer.macs());
        let s = simulate_conv(&cfg(Design::Stripes), &layer, PrecisionSource::Steps(&steps)).unwrap();
        assert_eq!(s.cycles, 48);
    }

    #[test]
    fn wrong_step_count() {
        let layer = LayerGeometry::conv("c", (4, 4, 64), (1, 1), 1, 0, 16, 1);
        assert!(matches!(
            simulate_conv(&cfg(Design::DStripes), &layer, PrecisionSource::Steps(&[1, 2])),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn detected_steps_and_all_zero_minimum() {
        let layer = LayerGeometry::conv("c", (4, 4, 16), (1, 1), 1, 0, 4, 1);
        let mut values = vec![0i32; 4 * 4 * 16];
        values[5] = 0b101;
        let t = FixedTensor::new(vec![1, 4, 4, 16], values, BitWidth::W16, crate::tensors::Signedness::Unsigned, Layout::Nhwc).unwrap();
        let prof = LayerProfile::new("c", 8, 8);
        let src = PrecisionSource::Activations {
            tensor: &t,
            profile: &prof,
        };
        let r = simulate_conv(&cfg(Design::DStripes), &layer, src).unwrap();
        assert_eq!(r.cycles, 3);

        let zero = FixedTensor::new(vec![1, 4, 4, 16], vec![0; 256], BitWidth::W16, crate::tensors::Signedness::Unsigned, Layout::Nhwc).unwrap();
        let src = PrecisionSource::Activations {
            tensor: &zero,
            profile: &prof,
        };
        assert_eq!(simulate_conv(&cfg(Design::Trt), &layer, src).unwrap().cycles, 1);

        let bad = FixedTensor::new(vec![1, 2, 8, 16], vec![0; 256], BitWidth::W16, crate::tensors::Signedness::Unsigned, Layout::Nhwc).unwrap();
        let src = PrecisionSource::Activations {
            tensor: &bad,
            profile: &prof,
        };
        assert!(matches!(
            simulate_conv(&cfg(Design::Trt), &layer, src),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn partial_tiles_lose_utilization() {
        // 17 windows need two blocks; 20 filters leave most of a pass idle
        let layer = LayerGeometry::conv("c", (17, 1, 16), (1, 1), 1, 0, 20, 1);
        let prof = LayerProfile::new("c", 16, 16);
        let r = simulate_conv(&cfg(Design::Stripes), &layer, PrecisionSource::Profile(&prof)).unwrap();
        assert_eq!(r.cycles, 32);
        assert!(r.utilization() < 0.1);
    }

    #[test]
    fn two_bits_per_cycle() {
        let layer = LayerGeometry::conv("c", (16, 16, 64), (3, 3), 1, 1, 256, 1);
        let prof = LayerProfile::new("c", 7, 16);
        let mut c = cfg(Design::Stripes);
        let one = simulate_conv(&c, &layer, PrecisionSource::Profile(&prof)).unwrap();
        c.bits_per_cycle = 2;
        let two = simulate_conv(&c, &layer, PrecisionSource::Profile(&prof)).unwrap();
        assert_eq!(two.steps, 2 * one.steps);
        assert_eq!(two.cycles, one.cycles / 7 * 8);
    }
}
