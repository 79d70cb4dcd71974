// SPDX-License-Identifier: Apache-2.0

//! `simulate` and `sweep`: designs over network fixtures, then the memory
//! model over the resulting compute times.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use dpred::codec::{encode_stream, EncodeParams, Scheme};
use dpred::fixtures::{self, Network, TraceKind};
use dpred::memmodel::{layer_time, sweep as sweep_rows, LayerDemand, MemoryConfig, SweepCase, KIB, MIB};
use dpred::precision::{effective_precision, LayerProfile};
use dpred::simcore::{simulate_layer, AcceleratorConfig, CycleReport, Design, LayerGeometry, LayerShape};
use dpred::synth::ReluLike;
use dpred::tensors::{load_tensor, BitWidth, FixedTensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::output::OutDir;
use crate::{invalid, Global};

/// Where layer activations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ActivationSource {
    /// Static profile precisions; traffic estimated on synthetic data.
    #[default]
    Profile,
    /// Seeded ReLU-like tensors bounded by each layer's profile precision.
    Synthetic,
    /// Captured tensors under the trace directory.
    Trace,
}

/// Which layers of the network to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    #[default]
    All,
    Conv,
    Fc,
}

impl LayerKind {
    fn keeps(self, l: &LayerGeometry) -> bool {
        match self {
            LayerKind::All => true,
            LayerKind::Conv => !l.is_fc(),
            LayerKind::Fc => l.is_fc(),
        }
    }
}

fn all_designs() -> Vec<Design> {
    Design::ALL.to_vec()
}

fn all_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

fn preset_names() -> Vec<String> {
    MemoryConfig::presets().into_iter().map(|m| m.name).collect()
}

fn default_group_sizes() -> Vec<usize> {
    vec![16]
}

fn default_accuracy() -> u8 {
    100
}

/// One experiment: a network fixture under a set of designs, schemes and
/// memories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub network: String,
    #[serde(default = "all_designs")]
    pub designs: Vec<Design>,
    #[serde(default = "all_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default = "preset_names")]
    pub memories: Vec<String>,
    #[serde(default = "default_group_sizes")]
    pub group_sizes: Vec<usize>,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    /// Profile row to use (percent of top-1 accuracy kept).
    #[serde(default = "default_accuracy")]
    pub accuracy: u8,
    #[serde(default)]
    pub activations: ActivationSource,
    /// Uniform precision used instead of a profile row.
    #[serde(default)]
    pub precision: Option<u8>,
    #[serde(default)]
    pub layers: LayerKind,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let net = fixtures::network(&self.network)?;
        if !net.layers.iter().any(|l| self.layers.keeps(l)) {
            return Err(invalid(format!("{} has no {:?} layers", net.name, self.layers).to_lowercase()));
        }
        if self.designs.is_empty() {
            return Err(invalid("an experiment needs at least one design"));
        }
        if self.schemes.is_empty() || self.memories.is_empty() {
            return Err(invalid("an experiment needs at least one scheme and one memory"));
        }
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return Err(invalid("group sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SelectArgs {
    /// Designs to run, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "base,stripes,dstripes,trt,loom")]
    pub designs: Vec<Design>,
    /// Storage schemes for the memory model, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "np,sp,dp")]
    pub schemes: Vec<Scheme>,
    /// Memory presets, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "DDR4-3200x2,LPDDR4-4267,HBM,HBM2,INF")]
    pub memories: Vec<String>,
    /// JSON list of extra memory configurations.
    #[arg(long)]
    pub memory_file: Option<PathBuf>,
    /// Profile row to use (percent of top-1 accuracy kept).
    #[arg(long, default_value_t = 100)]
    pub accuracy: u8,
    #[arg(long, value_enum, default_value_t = ActivationSource::Profile)]
    pub activations: ActivationSource,
    /// Uniform activation precision, for networks without a profile row.
    #[arg(long)]
    pub precision: Option<u8>,
    #[arg(long, value_enum, default_value_t = LayerKind::All)]
    pub layers: LayerKind,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Network fixture name.
    #[arg(long, required_unless_present = "spec")]
    pub network: Option<String>,
    /// Experiment spec (JSON); replaces the selection flags.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[command(flatten)]
    pub select: SelectArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    /// Networks, comma separated [default: every network with a profile row]
    #[arg(long, value_delimiter = ',')]
    pub networks: Vec<String>,
    /// Activation memory sizes, e.g. 512KiB,4MiB,inf.
    #[arg(long, value_delimiter = ',', default_value = "1MiB,2MiB,4MiB,8MiB,inf")]
    pub am: Vec<String>,
    #[command(flatten)]
    pub select: SelectArgs,
}

/// Parses `4MiB`, `512KiB`, `1048576` or `inf`.
pub fn parse_size(s: &str) -> Result<Option<u64>> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("inf") {
        return Ok(None);
    }
    let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let n: u64 = num.parse().map_err(|_| invalid(format!("bad size `{s}`")))?;
    let mult = match unit.to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => KIB,
        "m" | "mb" | "mib" => MIB,
        _ => return Err(invalid(format!("bad size unit in `{s}`"))),
    };
    if n == 0 {
        return Err(invalid("sizes must be positive"));
    }
    Ok(Some(n * mult))
}

/// Synthetic activations valid at `bits` bits.
pub fn relu_like(bits: u8) -> ReluLike {
    let d = ReluLike::default();
    let max = ((1u64 << bits) - 1) as u32;
    ReluLike {
        max_magnitude: d.max_magnitude.min(max),
        mean_magnitude: d.mean_magnitude.min((max as f64 / 2.0).max(1.0)),
        ..d
    }
}

fn resolve_memories(names: &[String], file: Option<&Path>) -> Result<Vec<MemoryConfig>> {
    let mut out = names
        .iter()
        .map(|n| MemoryConfig::preset(n))
        .collect::<dpred::Result<Vec<_>>>()?;
    if let Some(path) = file {
        out.extend(MemoryConfig::load_list(path)?);
    }
    Ok(out)
}

/// A layer ready to simulate.
struct Prepared {
    geometry: LayerGeometry,
    profile: LayerProfile,
    /// Input activations (trace or synthetic).
    activations: FixedTensor,
    weights: Option<FixedTensor>,
}

fn layer_profiles(net: &Network, spec: &ExperimentSpec, width: BitWidth) -> Result<Vec<(LayerGeometry, LayerProfile)>> {
    let w = width.bits() as u8;
    let layers = match spec.precision {
        Some(p) => net
            .layers
            .iter()
            .map(|l| {
                let mut prof = LayerProfile::new(l.name.clone(), p, if l.is_fc() { p } else { w });
                prof.work = l.macs();
                (l.clone(), prof)
            })
            .collect(),
        None => {
            let row = fixtures::profile_row(&net.name, spec.accuracy)
                .with_context(|| format!("{} has no profile row at {}%; pass --precision", net.name, spec.accuracy))?;
            net.profiled(&row, w)?
        }
    };
    for (_, p) in &layers {
        p.validate(width)?;
    }
    Ok(layers)
}

fn input_dims(l: &LayerGeometry) -> (usize, usize, usize) {
    match l.shape {
        LayerShape::Conv {
            in_h, in_w, channels, ..
        } => (in_h, in_w, channels),
        LayerShape::Fc { inputs, .. } => (1, 1, inputs),
    }
}

fn layer_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn prepare(net: &Network, spec: &ExperimentSpec, width: BitWidth, seed: u64) -> Result<Vec<Prepared>> {
    let layers = layer_profiles(net, spec, width)?;
    let trace_dir = match spec.activations {
        ActivationSource::Trace => Some(fixtures::trace_dir().ok_or_else(|| {
            invalid(format!("--activations trace needs {} to name a directory", fixtures::TRACE_DIR_ENV))
        })?),
        _ => None,
    };
    let kept: Vec<_> = layers
        .into_iter()
        .enumerate()
        .filter(|(_, (l, _))| spec.layers.keeps(l))
        .collect();
    kept.into_par_iter()
        .map(|(i, (geometry, profile))| {
            let (activations, weights) = match &trace_dir {
                Some(dir) => trace_tensors(dir, net, &geometry)?,
                None => (synthetic(&geometry, profile.p_a, width, layer_seed(seed, i))?, None),
            };
            Ok(Prepared {
                geometry,
                profile,
                activations,
                weights,
            })
        })
        .collect()
}

fn trace_tensors(dir: &Path, net: &Network, l: &LayerGeometry) -> Result<(FixedTensor, Option<FixedTensor>)> {
    let act = fixtures::trace_manifest(dir, &net.name, TraceKind::Activations, &l.name);
    let a = load_tensor(&act)?;
    let wgt = fixtures::trace_manifest(dir, &net.name, TraceKind::Weights, &l.name);
    let w = if wgt.exists() {
        Some(load_tensor(&wgt)?)
    } else {
        None
    };
    Ok((a, w))
}

fn synthetic(l: &LayerGeometry, p_a: u8, width: BitWidth, seed: u64) -> Result<FixedTensor> {
    let gen = relu_like(p_a);
    let dims = input_dims(l);
    Ok(if l.is_fc() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FixedTensor::unsigned(gen.sample(dims.2, &mut rng), width)?
    } else {
        gen.tensor(dims, width, seed)?
    })
}

#[derive(Serialize)]
struct CycleRow<'a> {
    network: &'a str,
    design: Design,
    layer: &'a str,
    fc: bool,
    p_a: u8,
    p_w: u8,
    macs: u64,
    steps: u64,
    cycles: u64,
    base_cycles: u64,
    speedup: f64,
    ideal_speedup: f64,
    utilization: f64,
    fill_cycles: u64,
    fill_overhead: f64,
    cascade_slices: u32,
}

#[derive(Serialize, Clone, Copy)]
struct Ratios {
    act: f64,
    weight: f64,
}

#[derive(Serialize)]
struct TrafficRow<'a> {
    network: &'a str,
    layer: &'a str,
    scheme: Scheme,
    activation_ratio: f64,
    weight_ratio: f64,
}

#[derive(Serialize)]
struct TimingRow<'a> {
    network: &'a str,
    design: Design,
    scheme: Scheme,
    memory: &'a str,
    am: String,
    layer: &'a str,
    compute_cycles: u64,
    traffic_bytes: u64,
    refetch: u64,
    memory_cycles: u64,
    time_cycles: u64,
    bound: dpred::memmodel::Bound,
    /// Relative to the same design with unlimited memory.
    perf_vs_inf: f64,
    /// BASE compute time over this time.
    speedup_vs_base: f64,
}

#[derive(Serialize)]
struct PrecisionRow<'a> {
    network: &'a str,
    layer: &'a str,
    group_size: usize,
    p_a: u8,
    effective_precision: f64,
}

#[derive(Serialize)]
struct DesignSummary {
    design: Design,
    cycles: u64,
    base_cycles: u64,
    speedup: f64,
    ideal_speedup: f64,
    conv_ideal_speedup: Option<f64>,
    fc_ideal_speedup: Option<f64>,
    fill_overhead: f64,
    memory: Vec<MemorySummary>,
}

#[derive(Serialize)]
struct MemorySummary {
    scheme: Scheme,
    memory: String,
    time_cycles: u64,
    perf_vs_inf: f64,
    speedup_vs_base: f64,
}

#[derive(Serialize)]
struct SimSummary<'a> {
    config_hash: String,
    spec: &'a ExperimentSpec,
    designs: Vec<DesignSummary>,
}

/// Cycle reports, one per design, in the spec's design order.
fn run_designs(spec: &ExperimentSpec, layers: &[Prepared], width: BitWidth) -> Result<Vec<CycleReport>> {
    let use_tensors = spec.activations != ActivationSource::Profile;
    spec.designs
        .par_iter()
        .map(|&design| {
            let mut config = AcceleratorConfig::new(design);
            config.width = width;
            let cycles = layers
                .par_iter()
                .map(|l| {
                    let acts = use_tensors.then_some(&l.activations);
                    simulate_layer(&config, &l.geometry, &l.profile, acts)
                        .with_context(|| format!("{} on {}", design, l.geometry.name))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CycleReport::new(design, cycles))
        })
        .collect()
}

/// Stored size of each layer's activations and weights relative to NP.
fn traffic_ratios(spec: &ExperimentSpec, layers: &[Prepared], width: BitWidth) -> Result<Vec<Vec<Ratios>>> {
    let w = width.bits() as f64;
    layers
        .par_iter()
        .map(|l| {
            spec.schemes
                .iter()
                .map(|&scheme| {
                    let a = encode_stream(&l.activations, scheme, &EncodeParams::activations(&l.profile))?;
                    let weight = match (&l.weights, scheme) {
                        (_, Scheme::Np) => 1.0,
                        (Some(t), _) => encode_stream(t, scheme, &EncodeParams::weights(&l.profile))?.ratio(),
                        (None, _) => l.profile.p_w as f64 / w,
                    };
                    Ok(Ratios {
                        act: a.ratio(),
                        weight,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

struct Simulated {
    layers: Vec<Prepared>,
    reports: Vec<CycleReport>,
    ratios: Vec<Vec<Ratios>>,
}

fn simulate_spec(spec: &ExperimentSpec, g: &Global) -> Result<Simulated> {
    spec.validate()?;
    let width = g.bit_width();
    let net = fixtures::network(&spec.network)?;
    let layers = prepare(&net, spec, width, g.seed)?;
    let reports = run_designs(spec, &layers, width)?;
    let ratios = traffic_ratios(spec, &layers, width)?;
    Ok(Simulated {
        layers,
        reports,
        ratios,
    })
}

fn demand(sim: &Simulated, report: &CycleReport, scheme_index: usize, width: BitWidth) -> Vec<LayerDemand> {
    sim.layers
        .iter()
        .zip(&report.layers)
        .zip(&sim.ratios)
        .map(|((l, c), r)| {
            let r = r[scheme_index];
            LayerDemand::from_geometry(&l.geometry, c.cycles, width.bits(), r.act, r.weight)
        })
        .collect()
}

fn spec_from_args(args: &SimulateArgs, g: &Global) -> Result<ExperimentSpec> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ExperimentSpec>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentSpec {
            network: args.network.clone().unwrap_or_default(),
            designs: args.select.designs.clone(),
            schemes: args.select.schemes.clone(),
            memories: args.select.memories.clone(),
            group_sizes: g.group_size.clone(),
            out: None,
            accuracy: args.select.accuracy,
            activations: args.select.activations,
            precision: args.select.precision,
            layers: args.select.layers,
        },
    };
    if spec.out.is_none() {
        spec.out = Some(g.out_dir());
    }
    Ok(spec)
}

pub fn run(g: &Global, args: &SimulateArgs) -> Result<()> {
    let spec = spec_from_args(args, g)?;
    spec.validate()?;
    let memories = resolve_memories(&spec.memories, args.select.memory_file.as_deref())?;
    let width = g.bit_width();
    let sim = simulate_spec(&spec, g)?;
    let net = spec.network.as_str();

    let mut cycle_rows = Vec::new();
    let mut timing_rows = Vec::new();
    let mut summaries = Vec::new();
    for report in &sim.reports {
        for (l, c) in sim.layers.iter().zip(&report.layers) {
            cycle_rows.push(CycleRow {
                network: net,
                design: report.design,
                layer: &c.layer,
                fc: c.fc,
                p_a: l.profile.p_a,
                p_w: l.profile.p_w,
                macs: c.macs,
                steps: c.steps,
                cycles: c.cycles,
                base_cycles: c.base_cycles,
                speedup: c.speedup(),
                ideal_speedup: c.ideal_speedup(),
                utilization: c.utilization(),
                fill_cycles: c.fill_cycles,
                fill_overhead: c.fill_overhead(),
                cascade_slices: c.cascade_slices,
            });
        }
        let mut mem_summaries = Vec::new();
        for (si, &scheme) in spec.schemes.iter().enumerate() {
            let demands = demand(&sim, report, si, width);
            for mem in &memories {
                let mut time = 0;
                for (d, c) in demands.iter().zip(&report.layers) {
                    let t = layer_time(d, mem);
                    time += t.time_cycles;
                    timing_rows.push(TimingRow {
                        network: net,
                        design: report.design,
                        scheme,
                        memory: &mem.name,
                        am: mem.am_label(),
                        layer: &c.layer,
                        compute_cycles: t.compute_cycles,
                        traffic_bytes: t.traffic_bytes,
                        refetch: t.refetch,
                        memory_cycles: t.memory_cycles,
                        time_cycles: t.time_cycles,
                        bound: t.bound,
                        perf_vs_inf: t.normalized_perf(),
                        speedup_vs_base: c.base_cycles as f64 / t.time_cycles.max(1) as f64,
                    });
                }
                mem_summaries.push(MemorySummary {
                    scheme,
                    memory: mem.name.clone(),
                    time_cycles: time,
                    perf_vs_inf: report.cycles() as f64 / time.max(1) as f64,
                    speedup_vs_base: report.base_cycles() as f64 / time.max(1) as f64,
                });
            }
        }
        let part = |fc: bool| {
            let r = report.filter(fc);
            (!r.layers.is_empty()).then(|| r.ideal_speedup())
        };
        summaries.push(DesignSummary {
            design: report.design,
            cycles: report.cycles(),
            base_cycles: report.base_cycles(),
            speedup: report.speedup(),
            ideal_speedup: report.ideal_speedup(),
            conv_ideal_speedup: part(false),
            fc_ideal_speedup: part(true),
            fill_overhead: report.fill_overhead(),
            memory: mem_summaries,
        });
    }
    let traffic_rows: Vec<TrafficRow> = sim
        .layers
        .iter()
        .zip(&sim.ratios)
        .flat_map(|(l, r)| {
            spec.schemes.iter().zip(r).map(move |(&scheme, r)| TrafficRow {
                network: net,
                layer: &l.geometry.name,
                scheme,
                activation_ratio: r.act,
                weight_ratio: r.weight,
            })
        })
        .collect();
    let precision_rows: Vec<PrecisionRow> = sim
        .layers
        .par_iter()
        .map(|l| {
            spec.group_sizes
                .iter()
                .map(|&gs| {
                    Ok(PrecisionRow {
                        network: net,
                        layer: &l.geometry.name,
                        group_size: gs,
                        p_a: l.profile.p_a,
                        effective_precision: effective_precision(&l.activations, gs, l.profile.n_l, None)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let out = OutDir::create(spec.out.as_deref().unwrap_or(Path::new("dpred-out")))?;
    let hash = out.record("simulate", &(g, &spec, &memories))?;
    out.csv("cycles.csv", &cycle_rows)?;
    out.csv("traffic.csv", &traffic_rows)?;
    out.csv("timing.csv", &timing_rows)?;
    out.csv("precision.csv", &precision_rows)?;
    for s in &summaries {
        let conv = s.conv_ideal_speedup.map_or("-".into(), |v| format!("{v:.2}"));
        let fc = s.fc_ideal_speedup.map_or("-".into(), |v| format!("{v:.2}"));
        println!(
            "{:<8} {:<9} speedup {:>6.3}  ideal conv {conv:>5} fc {fc:>5}  fill {:.2}%",
            spec.network,
            s.design.name(),
            s.speedup,
            s.fill_overhead * 100.0
        );
    }
    out.json(
        "summary.json",
        &SimSummary {
            config_hash: hash,
            spec: &spec,
            designs: summaries,
        },
    )?;
    Ok(())
}

pub fn sweep(g: &Global, args: &SweepArgs) -> Result<()> {
    let networks: Vec<String> = if args.networks.is_empty() {
        let has_layers = |name: &str| {
            fixtures::network(name).is_ok_and(|n| n.layers.iter().any(|l| args.select.layers.keeps(l)))
        };
        let mut names: Vec<String> = fixtures::profile_rows()
            .into_iter()
            .filter(|r| r.accuracy == args.select.accuracy && has_layers(&r.network))
            .map(|r| r.network)
            .collect();
        names.dedup();
        names
    } else {
        args.networks.clone()
    };
    let ams = args.am.iter().map(|s| parse_size(s)).collect::<Result<Vec<_>>>()?;
    if ams.is_empty() {
        return Err(invalid("at least one AM size is needed"));
    }
    let memories: Vec<MemoryConfig> = resolve_memories(&args.select.memories, args.select.memory_file.as_deref())?
        .into_iter()
        .flat_map(|m| ams.iter().map(move |&am| m.clone().with_am(am)))
        .collect();
    let width = g.bit_width();
    let specs = networks
        .iter()
        .map(|n| {
            let spec = ExperimentSpec {
                network: n.clone(),
                designs: args.select.designs.clone(),
                schemes: args.select.schemes.clone(),
                memories: args.select.memories.clone(),
                group_sizes: g.group_size.clone(),
                out: None,
                accuracy: args.select.accuracy,
                activations: args.select.activations,
                precision: args.select.precision,
                layers: args.select.layers,
            };
            spec.validate()?;
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cases = Vec::new();
    for spec in &specs {
        let sim = simulate_spec(spec, g)?;
        for report in &sim.reports {
            for (si, &scheme) in spec.schemes.iter().enumerate() {
                cases.push(SweepCase {
                    network: spec.network.clone(),
                    design: report.design,
                    scheme,
                    layers: demand(&sim, report, si, width),
                });
            }
        }
    }
    let rows = sweep_rows(&cases, &memories);
    let out = OutDir::create(&g.out_dir())?;
    out.record("sweep", &(g, args, &memories))?;
    let path = out.csv("sweep.csv", &rows)?;
    let totals = rows.iter().filter(|r| r.layer == "total").count();
    println!("{} rows ({totals} network totals) written to {}", rows.len(), path.display());
    Ok(())
}
