// SPDX-License-Identifier: Apache-2.0

use anyhow::Result;
use clap::Args;
use dpred::fixtures;
use dpred::simcore::{simulate_network, AcceleratorConfig, Design};
use serde::Serialize;

use crate::output::OutDir;
use crate::{invalid, Global};

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// Profile rows to include, by accuracy kept (percent).
    #[arg(long, value_delimiter = ',', default_value = "100,99")]
    pub accuracy: Vec<u8>,
}

#[derive(Serialize)]
struct SpeedupRow {
    network: String,
    accuracy: u8,
    part: &'static str,
    layers: usize,
    ideal_speedup: f64,
    published: Option<f64>,
    rel_error_pct: Option<f64>,
    speedup: f64,
    fill_overhead_pct: f64,
}

#[derive(Serialize)]
struct EffectiveRow {
    network: String,
    kind: &'static str,
    layers: usize,
    mean_effective_precision: f64,
    published_reduction_pct: f64,
}

#[derive(Serialize)]
struct Report<'a> {
    config_hash: String,
    speedups: &'a [SpeedupRow],
    effective_precision: &'a [EffectiveRow],
}

pub fn run(g: &Global, args: &ReportArgs) -> Result<()> {
    if g.width == Some(8) {
        return Err(invalid("the published profiles are 16-bit"));
    }
    let mut config = AcceleratorConfig::new(Design::Trt);
    config.width = g.bit_width();
    let mut speedups = Vec::new();
    for row in fixtures::profile_rows()
        .into_iter()
        .filter(|r| args.accuracy.contains(&r.accuracy))
    {
        let net = fixtures::network(&row.network)?;
        let layers = net.profiled(&row, config.width.bits() as u8)?;
        let report = simulate_network(&config, &layers)?;
        for (part, fc, published) in [("conv", false, row.ideal_conv), ("fc", true, Some(row.ideal_fc))] {
            let r = report.filter(fc);
            if r.layers.is_empty() {
                continue;
            }
            let ideal = r.ideal_speedup();
            speedups.push(SpeedupRow {
                network: row.network.clone(),
                accuracy: row.accuracy,
                part,
                layers: r.layers.len(),
                ideal_speedup: ideal,
                published,
                rel_error_pct: published.map(|p| 100.0 * (ideal - p) / p),
                speedup: r.speedup(),
                fill_overhead_pct: 100.0 * r.fill_overhead(),
            });
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let effective: Vec<EffectiveRow> = fixtures::effective_precisions()
        .into_iter()
        .flat_map(|e| {
            [
                EffectiveRow {
                    network: e.network.clone(),
                    kind: "activations",
                    layers: e.activations.len(),
                    mean_effective_precision: mean(&e.activations),
                    published_reduction_pct: e.activation_reduction_pct,
                },
                EffectiveRow {
                    network: e.network.clone(),
                    kind: "weights",
                    layers: e.weights.len(),
                    mean_effective_precision: mean(&e.weights),
                    published_reduction_pct: e.weight_reduction_pct,
                },
            ]
        })
        .collect();

    let out = OutDir::create(&g.out_dir())?;
    let hash = out.record("report", &(g, args))?;
    out.csv("speedups.csv", &speedups)?;
    out.csv("effective_precision.csv", &effective)?;
    out.json(
        "report.json",
        &Report {
            config_hash: hash,
            speedups: &speedups,
            effective_precision: &effective,
        },
    )?;
    println!("network     acc  part  ideal  published  error   fill");
    for r in &speedups {
        println!(
            "{:<10} {:>4}  {:<4} {:>6.2}  {:>9}  {:>6}  {:>5.2}%",
            r.network,
            r.accuracy,
            r.part,
            r.ideal_speedup,
            r.published.map_or("-".into(), |p| format!("{p:.2}")),
            r.rel_error_pct.map_or("-".into(), |e| format!("{e:+.1}%")),
            r.fill_overhead_pct
        );
    }
    Ok(())
}
