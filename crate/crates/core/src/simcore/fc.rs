// SPDX-License-Identifier: Apache-2.0

use crate::error::{Error, Result};
use crate::precision::leading_one;
use crate::tensors::FixedTensor;
use crate::BRICK;

use super::{AcceleratorConfig, Design, LayerCycles, LayerGeometry, LayerShape, StepRecord};

/// Precisions for a fully-connected layer.
#[derive(Debug, Clone, Copy)]
pub struct FcPrecision<'a> {
    pub p_a: u8,
    pub p_w: u8,
    pub n_l: u8,
    /// When given, TRT charges each step at the precision detected over the
    /// input bricks it processes instead of `p_a`.
    pub activations: Option<&'a FixedTensor>,
}

impl FcPrecision<'_> {
    pub fn fixed(p_a: u8, p_w: u8) -> Self {
        FcPrecision {
            p_a,
            p_w,
            n_l: 0,
            activations: None,
        }
    }
}

/// A TRT schedule for one slice count.
#[derive(Debug, Clone)]
pub(crate) struct Cascade {
    pub slices: usize,
    /// Outputs in flight per pass.
    pub slots: usize,
    pub passes: usize,
    /// Steady-state step charges of one pass, with the precision each used.
    pub charges: Vec<(u8, u64)>,
    /// Real inputs each step covers.
    pub inputs: Vec<usize>,
}

impl Cascade {
    fn reduction(&self) -> u64 {
        if self.slices > 1 {
            self.slices as u64
        } else {
            0
        }
    }

    pub fn cycles_without_fill(&self) -> u64 {
        let per_pass: u64 = self.charges.iter().map(|c| c.1).sum();
        self.passes as u64 * (per_pass + self.reduction())
    }
}

fn fc_dims(layer: &LayerGeometry) -> Result<(usize, usize)> {
    layer.validate()?;
    match layer.shape {
        LayerShape::Fc { inputs, outputs } => Ok((inputs, outputs)),
        LayerShape::Conv { .. } => Err(Error::Geometry(format!(
            "{} is not a fully-connected layer",
            layer.name
        ))),
    }
}

pub(crate) fn cascade(
    config: &AcceleratorConfig,
    inputs: usize,
    outputs: usize,
    slices: usize,
    brick_p: &dyn Fn(usize) -> u8,
    p_w: u8,
) -> Cascade {
    let bricks = inputs.div_ceil(BRICK);
    let slots = config.filters_per_pass() * (config.columns() / slices);
    let steps = bricks.div_ceil(slices);
    let mut charges = Vec::with_capacity(steps);
    let mut real = Vec::with_capacity(steps);
    for s in 0..steps {
        let mut p = 0u8;
        let mut n = 0usize;
        for j in 0..slices {
            let b = j * steps + s;
            if b < bricks {
                p = p.max(brick_p(b));
                n += BRICK.min(inputs - b * BRICK);
            }
        }
        charges.push((p, config.charge(p.max(p_w))));
        real.push(n);
    }
    Cascade {
        slices,
        slots,
        passes: outputs.div_ceil(slots),
        charges,
        inputs: real,
    }
}

pub fn simulate_fc(
    config: &AcceleratorConfig,
    layer: &LayerGeometry,
    precision: &FcPrecision<'_>,
) -> Result<LayerCycles> {
    config.validate()?;
    let (inputs, outputs) = fc_dims(layer)?;
    let width = config.width.bits() as u8;
    for (what, p) in [("P_a", precision.p_a), ("P_w", precision.p_w)] {
        if !(1..=width).contains(&p) {
            return Err(Error::Profile(format!(
                "{}: {what} = {p} outside [1, {width}]",
                layer.name
            )));
        }
    }

    let bricks = inputs.div_ceil(BRICK);
    let base_passes = outputs.div_ceil(config.filters_per_pass());
    // a narrower baseline packs 16 / width times the MACs into a cycle
    let base_cycles = ((base_passes * bricks) as u64 * width as u64).div_ceil(BRICK as u64);
    let ideal_base =
        layer.macs() as f64 * width as f64 / (BRICK as f64 * config.peak_macs() as f64);
    let mut out = LayerCycles {
        layer: layer.name.clone(),
        design: config.design,
        fc: true,
        macs: layer.macs(),
        steps: base_cycles,
        cycles: base_cycles,
        base_cycles,
        ideal_cycles: ideal_base,
        ideal_base_cycles: ideal_base,
        fill_cycles: 0,
        reduction_cycles: 0,
        cascade_slices: 1,
        trace: Vec::new(),
    };

    match config.design {
        Design::Loom => Err(Error::Unsupported(
            "Loom layers are simulated with simulate_loom".into(),
        )),
        // weights arrive one brick per cycle whatever the precision
        Design::Base | Design::Stripes | Design::DStripes => {
            if config.trace {
                let p_a = if config.design == Design::Base {
                    width
                } else {
                    precision.p_a
                };
                for pass in 0..base_passes {
                    let rows = config
                        .filters_per_pass()
                        .min(outputs - pass * config.filters_per_pass());
                    for b in 0..bricks {
                        out.trace.push(StepRecord {
                            p_a,
                            p_w: None,
                            cycles: 1,
                            macs: (rows * BRICK.min(inputs - b * BRICK)) as u64,
                        });
                    }
                }
            }
            Ok(out)
        }
        Design::Trt => {
            let detected = match precision.activations {
                Some(t) => Some(brick_precisions(layer, t, inputs, precision.n_l)?),
                None => None,
            };
            let brick_p = |b: usize| match &detected {
                Some(d) => d[b],
                None => precision.p_a,
            };
            let columns = config.columns();
            let plan = match config.cascade_slices {
                Some(np) => {
                    let np = np as usize;
                    if np == 0 || np > columns {
                        return Err(Error::Unsupported(format!(
                            "{}: {np} cascade slices on {columns} SIP columns",
                            layer.name
                        )));
                    }
                    if outputs * np < config.filters_per_pass() {
                        return Err(Error::Unsupported(format!(
                            "{}: {outputs} outputs cannot fill the tiles with {np} slices",
                            layer.name
                        )));
                    }
                    cascade(config, inputs, outputs, np, &brick_p, precision.p_w)
                }
                None => (1..=columns)
                    .map(|np| cascade(config, inputs, outputs, np, &brick_p, precision.p_w))
                    .min_by_key(|c| (c.cycles_without_fill(), c.slices))
                    .expect("at least one column"),
            };

            let fill = config.charge(precision.p_w);
            let full_step = (config.filters_per_pass() * columns * BRICK) as f64;
            let weighted: f64 = plan
                .charges
                .iter()
                .zip(&plan.inputs)
                .map(|(&(_, c), &n)| (n as u64 * c) as f64)
                .sum();
            out.ideal_cycles = weighted * outputs as f64 / full_step;
            out.steps = (plan.passes * plan.charges.len()) as u64;
            out.fill_cycles = fill;
            out.reduction_cycles = plan.passes as u64 * plan.reduction();
            out.cycles = plan.cycles_without_fill() + fill;
            out.cascade_slices = plan.slices as u32;
            if config.trace {
                for pass in 0..plan.passes {
                    let rows = plan.slots.min(outputs - pass * plan.slots);
                    for (&(p, c), &n) in plan.charges.iter().zip(&plan.inputs) {
                        out.trace.push(StepRecord {
                            p_a: p,
                            p_w: Some(precision.p_w),
                            cycles: c,
                            macs: (rows * n) as u64,
                        });
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Detected precision of each input brick after dropping bits below `n_l`.
pub(crate) fn brick_precisions(
    layer: &LayerGeometry,
    tensor: &FixedTensor,
    inputs: usize,
    n_l: u8,
) -> Result<Vec<u8>> {
    if tensor.len() != inputs {
        return Err(Error::Geometry(format!(
            "{}: {} activations given for {inputs} inputs",
            layer.name,
            tensor.len()
        )));
    }
    let values = tensor.magnitudes()?;
    Ok(values
        .chunks(BRICK)
        .map(|c| {
            let signals = c.iter().fold(0, |a, &v| a | (v >> n_l));
            leading_one(signals).map_or(0, |n| n + 1)
        })
        .collect())
}
