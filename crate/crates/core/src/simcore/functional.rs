// SPDX-License-Identifier: Apache-2.0

//! Computes a layer's outputs the way a design would (bit-serial SIPs fed in
//! dispatch order, cascade slices summed at the end) and compares them with
//! a bit-parallel reference on truncated activations.

use crate::error::{Error, Result};
use crate::precision::leading_one;
use crate::tensors::{FixedTensor, Signedness};
use crate::BRICK;

use super::conv::ConvPlan;
use super::fc::cascade;
use super::sip::{serial_inner_product, serial_inner_product_bits};
use super::{AcceleratorConfig, Design, DynamicGroup, LayerGeometry, LayerShape};

/// Conv weights are `[filters, kh, kw, channels per group]`; FC weights are
/// `[outputs, inputs]`. Activation bits below `n_l` are dropped on both
/// sides of the comparison.
pub fn functional_check(
    config: &AcceleratorConfig,
    layer: &LayerGeometry,
    activations: &FixedTensor,
    weights: &FixedTensor,
    n_l: u8,
) -> Result<()> {
    config.validate()?;
    if activations.signedness() != Signedness::Unsigned {
        return Err(Error::Unsupported(
            "bit-serial activations must be unsigned".into(),
        ));
    }
    let mask = !((1u32 << n_l) - 1);
    let acts: Vec<u32> = activations.values().iter().map(|&v| v as u32 & mask).collect();
    if let LayerShape::Fc { inputs, outputs } = layer.shape {
        layer.validate()?;
        check_len(layer, "activations", acts.len(), inputs)?;
        check_len(layer, "weights", weights.len(), inputs * outputs)?;
        fc_check(config, &acts, weights, inputs, outputs, n_l)
    } else {
        conv_check(config, layer, activations, &acts, weights, n_l)
    }
}

fn check_len(layer: &LayerGeometry, what: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::Geometry(format!(
            "{}: {found} {what}, layer needs {expected}",
            layer.name
        )));
    }
    Ok(())
}

fn mismatch(coord: Vec<usize>, expected: i64, actual: i64) -> Error {
    Error::Mismatch {
        coord,
        expected,
        actual,
    }
}

/// One brick through the design's datapath.
fn brick_product(config: &AcceleratorConfig, w: &[i32; BRICK], a: &[u32; BRICK], n_h: u8, n_l: u8) -> i64 {
    match config.design {
        Design::Base => w.iter().zip(a).map(|(&w, &a)| w as i64 * a as i64).sum(),
        Design::Loom => loom_product(config, w, a, n_h, n_l),
        _ => serial_inner_product_bits(w, a, n_h, n_l, config.bits_per_cycle),
    }
}

/// Serial over weight bits too; the top bit of a two's-complement weight
/// carries negative weight.
fn loom_product(config: &AcceleratorConfig, w: &[i32; BRICK], a: &[u32; BRICK], n_h: u8, n_l: u8) -> i64 {
    let width = config.width.bits();
    let mut acc = 0i64;
    for i in 0..width {
        let mut bits = [0i32; BRICK];
        for (b, &wj) in bits.iter_mut().zip(w) {
            *b = ((wj as u32 >> i) & 1) as i32;
        }
        let part = serial_inner_product(&bits, a, n_h, n_l) << i;
        if i == width - 1 {
            acc -= part;
        } else {
            acc += part;
        }
    }
    acc
}

fn n_h_of(signals: u32, n_l: u8) -> u8 {
    leading_one(signals).unwrap_or(n_l)
}

fn fc_check(
    config: &AcceleratorConfig,
    acts: &[u32],
    weights: &FixedTensor,
    inputs: usize,
    outputs: usize,
    n_l: u8,
) -> Result<()> {
    let wv = weights.values();
    let bricks = inputs.div_ceil(BRICK);
    let brick = |b: usize| -> [u32; BRICK] {
        let mut out = [0u32; BRICK];
        for (i, slot) in out.iter_mut().enumerate() {
            if let Some(&v) = acts.get(b * BRICK + i).filter(|_| i < inputs - b * BRICK) {
                *slot = v;
            }
        }
        out
    };
    let wbrick = |o: usize, b: usize| -> [i32; BRICK] {
        let mut out = [0i32; BRICK];
        for (i, slot) in out.iter_mut().enumerate() {
            if b * BRICK + i < inputs {
                *slot = wv[o * inputs + b * BRICK + i];
            }
        }
        out
    };
    let a_bricks: Vec<[u32; BRICK]> = (0..bricks).map(brick).collect();
    let layer_nh = n_h_of(acts.iter().fold(0, |x, &v| x | v), n_l);
    let slices = if config.design == Design::Trt {
        let p = |b: usize| {
            leading_one(a_bricks[b].iter().fold(0, |x, &v| x | v) >> n_l).map_or(0, |n| n + 1)
        };
        match config.cascade_slices {
            Some(np) => np as usize,
            None => (1..=config.columns())
                .map(|np| cascade(config, inputs, outputs, np, &p, 1))
                .min_by_key(|c| (c.cycles_without_fill(), c.slices))
                .map_or(1, |c| c.slices),
        }
    } else {
        1
    };
    let steps = bricks.div_ceil(slices);
    for o in 0..outputs {
        let expected: i64 = (0..inputs).map(|i| wv[o * inputs + i] as i64 * acts[i] as i64).sum();
        let mut partials = vec![0i64; slices];
        for (j, partial) in partials.iter_mut().enumerate() {
            for s in 0..steps {
                let b = j * steps + s;
                if b >= bricks {
                    continue;
                }
                // slices share a step and hence its detected precision
                let n_h = if config.design.is_dynamic() {
                    let sig = (0..slices)
                        .map(|k| k * steps + s)
                        .filter(|&k| k < bricks)
                        .fold(0, |x, k| x | a_bricks[k].iter().fold(0, |y, &v| y | v));
                    n_h_of(sig, n_l)
                } else {
                    layer_nh
                };
                *partial += brick_product(config, &wbrick(o, b), &a_bricks[b], n_h, n_l);
            }
        }
        let actual: i64 = partials.iter().sum();
        if actual != expected {
            return Err(mismatch(vec![o], expected, actual));
        }
    }
    Ok(())
}

fn conv_check(
    config: &AcceleratorConfig,
    layer: &LayerGeometry,
    activations: &FixedTensor,
    acts: &[u32],
    weights: &FixedTensor,
    n_l: u8,
) -> Result<()> {
    let columns = if config.design == Design::Base {
        config.sip_columns as usize
    } else {
        config.columns()
    };
    let plan = ConvPlan::new(layer, columns, config.filters_per_pass())?;
    let (kh, kw) = plan.kernel;
    let cg = plan.channels_per_group;
    let fg = plan.filters_per_group;
    let filters = fg * plan.groups;
    check_len(layer, "weights", weights.len(), filters * kh * kw * cg)?;
    if !plan.accepts(activations) {
        return Err(Error::Geometry(format!(
            "{}: activation shape {:?} does not match the layer",
            layer.name,
            activations.shape()
        )));
    }
    let wv = weights.values();
    let act_at = |g: usize, w: usize, ky: usize, kx: usize, c: usize| -> u32 {
        match plan.input_position(w, ky, kx) {
            Some((iy, ix)) => acts[activations.flat_index(iy * plan.in_dims.1 + ix, g * cg + c)],
            None => 0,
        }
    };
    let weight_at = |f: usize, ky: usize, kx: usize, c: usize| wv[((f * kh + ky) * kw + kx) * cg + c];
    let layer_nh = n_h_of(acts.iter().fold(0, |x, &v| x | v), n_l);

    let mut out = vec![0i64; plan.windows * filters];
    for g in 0..plan.groups {
        for b in 0..plan.blocks() {
            let ws: Vec<usize> = (b * columns..b * columns + plan.real_windows(b)).collect();
            for brick in 0..plan.bricks_per_window() {
                let (ky, kx, cb) = plan.brick_coords(brick);
                let a_bricks: Vec<[u32; BRICK]> = ws
                    .iter()
                    .map(|&w| {
                        let mut a = [0u32; BRICK];
                        for (i, slot) in a.iter_mut().enumerate().take(plan.real_channels(cb)) {
                            *slot = act_at(g, w, ky, kx, cb * BRICK + i);
                        }
                        a
                    })
                    .collect();
                let or_of = |a: &[u32; BRICK]| a.iter().fold(0, |x, &v| x | v);
                let step_nh = n_h_of(a_bricks.iter().fold(0, |x, a| x | or_of(a)), n_l);
                for f in g * fg..(g + 1) * fg {
                    let mut wb = [0i32; BRICK];
                    for (i, slot) in wb.iter_mut().enumerate().take(plan.real_channels(cb)) {
                        *slot = weight_at(f, ky, kx, cb * BRICK + i);
                    }
                    for (a, &w) in a_bricks.iter().zip(&ws) {
                        let n_h = match (config.design.is_dynamic(), config.dynamic_group) {
                            (false, _) => layer_nh,
                            (true, DynamicGroup::Dispatch) => step_nh,
                            (true, DynamicGroup::Column) => n_h_of(or_of(a), n_l),
                        };
                        out[w * filters + f] += brick_product(config, &wb, a, n_h, n_l);
                    }
                }
            }
        }
    }

    // reference convolution, straight from the definition
    let out_w = plan.out_w;
    for w in 0..plan.windows {
        for f in 0..filters {
            let g = f / fg;
            let mut expected = 0i64;
            for ky in 0..kh {
                for kx in 0..kw {
                    for c in 0..cg {
                        expected += weight_at(f, ky, kx, c) as i64 * act_at(g, w, ky, kx, c) as i64;
                    }
                }
            }
            let actual = out[w * filters + f];
            if actual != expected {
                return Err(mismatch(vec![w / out_w, w % out_w, f], expected, actual));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensors::{BitWidth, Layout};

    fn unsigned(shape: Vec<usize>, values: Vec<i32>, layout: Layout) -> FixedTensor {
        FixedTensor::new(shape, values, BitWidth::W16, Signedness::Unsigned, layout).unwrap()
    }

    fn signed(shape: Vec<usize>, values: Vec<i32>, layout: Layout) -> FixedTensor {
        FixedTensor::new(shape, values, BitWidth::W16, Signedness::TwosComplement, layout).unwrap()
    }

    #[test]
    fn identity_1x1_conv() {
        let layer = LayerGeometry::conv("id", (3, 3, 4), (1, 1), 1, 0, 4, 1);
        let acts = unsigned(vec![1, 3, 3, 4], (0..36).collect(), Layout::Nhwc);
        let mut w = vec![0; 16];
        for i in 0..4 {
            w[i * 4 + i] = 1;
        }
        let weights = signed(vec![4, 1, 1, 4], w, Layout::Ohwi);
        for d in Design::ALL {
            functional_check(&AcceleratorConfig::new(d), &layer, &acts, &weights, 0).unwrap();
            functional_check(&AcceleratorConfig::new(d), &layer, &acts, &weights, 2).unwrap();
        }
    }

    #[test]
    fn signed_activations_rejected() {
        let layer = LayerGeometry::fc("fc", 4, 1);
        let acts = signed(vec![4], vec![1, -1, 0, 0], Layout::Flat);
        let weights = signed(vec![1, 4], vec![1; 4], Layout::Oi);
        assert!(functional_check(&AcceleratorConfig::new(Design::Trt), &layer, &acts, &weights, 0).is_err());
    }
}
