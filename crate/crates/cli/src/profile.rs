// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use dpred::precision::{effective_precision, layer_precision, precision_histogram};
use dpred::tensors::{load_tensor, FixedTensor};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::OutDir;
use crate::{invalid, Global};

#[derive(Args, Debug, Serialize)]
pub struct ProfileArgs {
    /// Tensor manifests to profile.
    pub manifests: Vec<PathBuf>,
    /// Profile a seeded synthetic ReLU-like tensor of shape H,W,C instead.
    #[arg(long, value_delimiter = ',')]
    pub synthetic: Vec<usize>,
    /// Low-order bits dropped before detection.
    #[arg(long, default_value_t = 0)]
    pub n_l: u8,
}

#[derive(Serialize)]
struct HistRow {
    tensor: String,
    group_size: usize,
    precision: u8,
    groups: u64,
    cdf: f64,
}

#[derive(Serialize, Clone)]
struct EffRow {
    tensor: String,
    group_size: usize,
    width: u32,
    layer_precision: u8,
    effective_precision: f64,
    reduction_pct: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: String,
    group_size: usize,
    tensors: usize,
    mean_effective_precision: f64,
    mean_layer_precision: f64,
    reduction_pct: f64,
    layers: &'a [EffRow],
}

fn reduction(effective: f64, layer: f64) -> f64 {
    if layer == 0.0 {
        0.0
    } else {
        100.0 * (1.0 - effective / layer)
    }
}

fn label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn run(g: &Global, args: &ProfileArgs) -> Result<()> {
    if g.group_size.contains(&0) {
        return Err(invalid("group sizes must be positive"));
    }
    let mut tensors: Vec<(String, FixedTensor)> = args
        .manifests
        .par_iter()
        .map(|p| Ok((label(p), load_tensor(p)?)))
        .collect::<Result<_>>()?;
    match args.synthetic.as_slice() {
        [] => {}
        &[h, w, c] => tensors.push((
            "synthetic".into(),
            crate::simulate::relu_like(g.bit_width().bits() as u8).tensor((h, w, c), g.bit_width(), g.seed)?,
        )),
        _ => return Err(invalid("--synthetic takes H,W,C")),
    }
    if tensors.is_empty() {
        return Err(invalid("nothing to profile: pass manifests or --synthetic"));
    }
    if let Some(w) = g.width {
        if let Some((name, t)) = tensors.iter().find(|(_, t)| t.width().bits() != w) {
            return Err(invalid(format!("{name} is {}-bit, --width is {w}", t.width().bits())));
        }
    }

    let per_tensor: Vec<(Vec<HistRow>, Vec<EffRow>)> = tensors
        .par_iter()
        .map(|(name, t)| {
            let layer_p = layer_precision(t, args.n_l)?.p;
            let mut hist = Vec::new();
            let mut eff = Vec::new();
            for &gs in &g.group_size {
                for (p, count, cdf) in precision_histogram(t, gs, args.n_l)?.rows() {
                    hist.push(HistRow {
                        tensor: name.clone(),
                        group_size: gs,
                        precision: p,
                        groups: count,
                        cdf,
                    });
                }
                let e = effective_precision(t, gs, args.n_l, None)?;
                eff.push(EffRow {
                    tensor: name.clone(),
                    group_size: gs,
                    width: t.width().bits(),
                    layer_precision: layer_p,
                    effective_precision: e,
                    reduction_pct: reduction(e, layer_p as f64),
                });
            }
            Ok((hist, eff))
        })
        .collect::<Result<_>>()?;
    let (hist, eff): (Vec<_>, Vec<_>) = per_tensor.into_iter().unzip();
    let hist: Vec<HistRow> = hist.into_iter().flatten().collect();
    let eff: Vec<EffRow> = eff.into_iter().flatten().collect();

    let out = OutDir::create(&g.out_dir())?;
    let hash = out.record("profile", &(g, args))?;
    out.csv("histograms.csv", &hist)?;
    out.csv("effective_precision.csv", &eff)?;
    let grouped: Vec<(usize, Vec<EffRow>)> = g
        .group_size
        .iter()
        .map(|&gs| (gs, eff.iter().filter(|r| r.group_size == gs).cloned().collect()))
        .collect();
    let summaries: Vec<Summary> = grouped
        .iter()
        .map(|(gs, rows)| {
            let n = rows.len() as f64;
            let e = rows.iter().map(|r| r.effective_precision).sum::<f64>() / n;
            let l = rows.iter().map(|r| r.layer_precision as f64).sum::<f64>() / n;
            Summary {
                config_hash: hash.clone(),
                group_size: *gs,
                tensors: rows.len(),
                mean_effective_precision: e,
                mean_layer_precision: l,
                reduction_pct: reduction(e, l),
                layers: rows,
            }
        })
        .collect();
    out.json("summary.json", &summaries)?;
    for s in &summaries {
        let per_layer: Vec<String> = s.layers.iter().map(|r| format!("{:.2}", r.effective_precision)).collect();
        println!(
            "group {:>4}: {}  reduction {:.2}%",
            s.group_size,
            per_layer.join("-"),
            s.reduction_pct
        );
    }
    Ok(())
}
