// SPDX-License-Identifier: Apache-2.0

//! Loom-style design: serial in both activations and weights, so a step
//! takes `P_a * P_w` cycles. Compared against a bit-parallel engine of equal
//! throughput that spends `loom_baseline()` cycles per step.

use crate::error::{Error, Result};

use super::{AcceleratorConfig, Design, LayerCycles, LayerGeometry, StepRecord};

/// Steps needed to cover a layer's MACs.
pub fn loom_steps(config: &AcceleratorConfig, layer: &LayerGeometry) -> u64 {
    layer.macs().div_ceil(config.loom_macs_per_step)
}

/// Charges one step per entry of `activations` / `weights`. A single-entry
/// slice is broadcast; two single entries cover the whole layer.
pub fn simulate_loom(
    config: &AcceleratorConfig,
    layer: &LayerGeometry,
    activations: &[u8],
    weights: &[u8],
) -> Result<LayerCycles> {
    config.validate()?;
    layer.validate()?;
    if config.design != Design::Loom {
        return Err(Error::Unsupported(format!(
            "simulate_loom called with design {}",
            config.design
        )));
    }
    let width = config.width.bits() as u8;
    if let Some(&p) = activations.iter().chain(weights).find(|&&p| p > width) {
        return Err(Error::Profile(format!(
            "{}: precision {p} exceeds width {width}",
            layer.name
        )));
    }
    let steps = match (activations.len(), weights.len()) {
        (0, _) | (_, 0) => {
            return Err(Error::Profile(format!("{}: no precisions given", layer.name)))
        }
        (1, 1) => loom_steps(config, layer) as usize,
        (1, n) | (n, 1) => n,
        (a, w) if a == w => a,
        (a, w) => {
            return Err(Error::Geometry(format!(
                "{}: {a} activation groups against {w} weight groups",
                layer.name
            )))
        }
    };
    let at = |s: usize, v: &[u8]| if v.len() == 1 { v[0] } else { v[s] };
    let base_charge = config.loom_baseline();
    let macs = layer.macs();
    let per_step = config.loom_macs_per_step;

    let mut cycles = 0u64;
    let mut ideal = 0.0;
    let mut trace = Vec::new();
    for s in 0..steps {
        let (pa, pw) = (at(s, activations), at(s, weights));
        let c = pa.max(1) as u64 * pw.max(1) as u64;
        let step_macs = per_step.min(macs.saturating_sub(s as u64 * per_step));
        cycles += c;
        ideal += step_macs as f64 / per_step as f64 * c as f64;
        if config.trace {
            trace.push(StepRecord {
                p_a: pa,
                p_w: Some(pw),
                cycles: c,
                macs: step_macs,
            });
        }
    }
    Ok(LayerCycles {
        layer: layer.name.clone(),
        design: Design::Loom,
        fc: layer.is_fc(),
        macs,
        steps: steps as u64,
        cycles,
        base_cycles: steps as u64 * base_charge,
        ideal_cycles: ideal,
        ideal_base_cycles: macs as f64 / per_step as f64 * base_charge as f64,
        fill_cycles: 0,
        reduction_cycles: 0,
        cascade_slices: 1,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensors::BitWidth;

    #[test]
    fn product_charge() {
        let mut c = AcceleratorConfig::new(Design::Loom);
        c.width = BitWidth::W8;
        let layer = LayerGeometry::fc("fc", 4096, 4096);
        let r = simulate_loom(&c, &layer, &[4], &[4]).unwrap();
        assert_eq!(r.steps, 512);
        assert_eq!(r.speedup(), 4.0);
        let full = simulate_loom(&c, &layer, &[8], &[8]).unwrap();
        assert_eq!(full.speedup(), 1.0);
    }

    #[test]
    fn per_group_lists() {
        let c = AcceleratorConfig::new(Design::Loom);
        let layer = LayerGeometry::fc("fc", 64, 1024);
        let r = simulate_loom(&c, &layer, &[2, 0, 16], &[3]).unwrap();
        assert_eq!(r.cycles, 6 + 3 + 48);
        assert_eq!(r.base_cycles, 3 * 256);
        assert!(simulate_loom(&c, &layer, &[1, 2], &[1, 2, 3]).is_err());
        assert!(simulate_loom(&AcceleratorConfig::new(Design::Trt), &layer, &[1], &[1]).is_err());
    }
}
