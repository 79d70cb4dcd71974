// SPDX-License-Identifier: Apache-2.0

//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits nonzero on any FAIL.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dpred::codec::{
    decode_group, encode_group, encode_stream, BitReader, BitWriter, EncodeParams, GroupContainer,
    Scheme,
};
use dpred::fixtures::{self, TraceKind};
use dpred::memmodel::{layer_time, LayerDemand, MemoryConfig, MIB};
use dpred::precision::{effective_precision, layer_precision, precision_histogram, LayerProfile};
use dpred::simcore::{
    serial_inner_product, serial_inner_product_bits, simulate_conv, simulate_fc,
    simulate_network, AcceleratorConfig, Design, FcPrecision, LayerGeometry, PrecisionSource,
};
use dpred::synth::ReluLike;
use dpred::tensors::{load_tensor, BitWidth};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type GatedCheck = (&'static str, Box<dyn Fn(&Path) -> Gated>);

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let detail = f()?;
    let took = start.elapsed();
    if took > limit {
        return Err(format!("{detail}; took {took:.2?}, limit {limit:?}"));
    }
    Ok(format!("{detail}; {took:.2?}"))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// codec

/// Bit count of a container, computed without the codec's helpers.
fn oracle_container_bits(values: &[u32]) -> u64 {
    let nnz = values.iter().filter(|&&v| v != 0).count() as u64;
    let mut top = 0u64;
    for &v in values {
        let mut bits = 0;
        let mut x = v;
        while x != 0 {
            bits += 1;
            x >>= 1;
        }
        top = top.max(bits);
    }
    let mut total = 4 + 16 + nnz * top;
    while !total.is_multiple_of(64) {
        total += 1;
    }
    total
}

/// A group with exactly `nnz` nonzero slots whose widest value needs `p` bits.
fn make_group(rng: &mut ChaCha8Rng, nnz: usize, p: u32) -> [u32; 16] {
    let mut slots: Vec<usize> = (0..16).collect();
    for i in 0..16 {
        let j = rng.random_range(i..16);
        slots.swap(i, j);
    }
    let mut g = [0u32; 16];
    for (k, &s) in slots[..nnz].iter().enumerate() {
        g[s] = if k == 0 {
            1 << (p - 1) | rng.random_range(0..(1u32 << (p - 1)))
        } else {
            rng.random_range(1..(1u64 << p)) as u32
        };
    }
    g
}

fn codec_correctness() -> Outcome {
    timed(Duration::from_secs(10), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0DEC);
        let mut combos = 0usize;
        let mut groups = 0usize;
        let mut worst = 0.0f64;
        let mut check = |g: &[u32; 16], width: BitWidth| -> Result<(), String> {
            let c = encode_group(g, 0, width).map_err(|e| e.to_string())?;
            let mut w = BitWriter::new();
            c.write(&mut w);
            let bits = w.bit_len();
            let bytes = w.into_bytes();
            let back = GroupContainer::read(&mut BitReader::new(&bytes), width)
                .map_err(|e| e.to_string())?;
            let values = decode_group(&back, 0).map_err(|e| e.to_string())?;
            ensure(&values == g, || format!("round trip failed for {g:?}"))?;
            let oracle = oracle_container_bits(g);
            ensure(bits == oracle && c.bit_len() == oracle, || {
                format!("size {bits} vs oracle {oracle} for {g:?}")
            })?;
            if width == BitWidth::W16 {
                worst = worst.max(bits as f64 / 256.0);
            }
            Ok(())
        };
        for width in [BitWidth::W16, BitWidth::W8] {
            let w = width.bits();
            check(&[0; 16], width)?;
            groups += 1;
            combos += 1;
            for nnz in 1..=16 {
                for p in 1..=w {
                    check(&make_group(&mut rng, nnz, p), width)?;
                    groups += 1;
                    combos += 1;
                }
            }
            check(&[(1 << w) - 1; 16], width)?;
            groups += 1;
        }
        while groups < 100_000 {
            let width = if rng.random_bool(0.5) { BitWidth::W16 } else { BitWidth::W8 };
            let nnz = rng.random_range(0..=16);
            let g = if nnz == 0 {
                [0; 16]
            } else {
                let p = rng.random_range(1..=width.bits());
                make_group(&mut rng, nnz, p)
            };
            check(&g, width)?;
            groups += 1;
        }
        ensure(worst == 1.25, || format!("width-16 worst-case expansion {worst}, expected 1.25"))?;
        Ok(format!(
            "{groups} groups, {combos} (width, nnz, p) combinations, width-16 worst expansion {worst}"
        ))
    })
}

// ---------------------------------------------------------------------------
// bit-serial arithmetic

fn oracle_dot(w: &[i32; 16], a: &[u32; 16], n_l: u8) -> i64 {
    let mut sum = 0i64;
    for j in 0..16 {
        let t = (a[j] >> n_l) << n_l;
        sum += w[j] as i64 * t as i64;
    }
    sum
}

fn bit_serial_oracle() -> Outcome {
    timed(Duration::from_secs(30), || {
        let mut cases = 0u64;
        let mut rng = ChaCha8Rng::seed_from_u64(0x51F);
        // two live slots swept exhaustively; the remaining slots hold a fixed
        // random background that is re-drawn per offset pair
        for n_h in 0..4u8 {
            for n_l in 0..=n_h {
                let limit = 1u32 << (n_h + 1);
                let mut bg_w = [0i32; 16];
                let mut bg_a = [0u32; 16];
                for j in 2..16 {
                    bg_w[j] = rng.random_range(-8..8);
                    bg_a[j] = rng.random_range(0..limit);
                }
                for w0 in -8..8 {
                    for a0 in 0..limit {
                        for w1 in -8..8 {
                            for a1 in 0..limit {
                                let mut w = bg_w;
                                let mut a = bg_a;
                                w[0] = w0;
                                a[0] = a0;
                                w[1] = w1;
                                a[1] = a1;
                                let expected = oracle_dot(&w, &a, n_l);
                                for bits in [1, 2] {
                                    let got = serial_inner_product_bits(&w, &a, n_h, n_l, bits);
                                    if got != expected {
                                        return Err(format!(
                                            "4-bit case w={w:?} a={a:?} n_h={n_h} n_l={n_l} b={bits}: {got} != {expected}"
                                        ));
                                    }
                                }
                                cases += 1;
                            }
                        }
                    }
                }
            }
        }
        let exhaustive = cases;
        for _ in 0..100_000 {
            let n_h: u8 = rng.random_range(0..16);
            let n_l: u8 = rng.random_range(0..=n_h);
            let mut w = [0i32; 16];
            let mut a = [0u32; 16];
            for j in 0..16 {
                w[j] = rng.random_range(i16::MIN as i32..=i16::MAX as i32);
                a[j] = rng.random_range(0..(1u32 << (n_h + 1)));
            }
            let expected = oracle_dot(&w, &a, n_l);
            let got = serial_inner_product(&w, &a, n_h, n_l);
            if got != expected {
                return Err(format!("16-bit case n_h={n_h} n_l={n_l}: {got} != {expected}"));
            }
            cases += 1;
        }
        Ok(format!(
            "{exhaustive} exhaustive 4-bit cases, {} random 16-bit cases",
            cases - exhaustive
        ))
    })
}

// ---------------------------------------------------------------------------
// speedup laws

fn speedup_laws() -> Outcome {
    let layer = LayerGeometry::conv("l", (32, 32, 64), (3, 3), 1, 1, 256, 1);
    for p in 1..=16u8 {
        let prof = LayerProfile::new("l", p, 16);
        let r = simulate_conv(
            &AcceleratorConfig::new(Design::Stripes),
            &layer,
            PrecisionSource::Profile(&prof),
        )
        .map_err(|e| e.to_string())?;
        ensure(r.base_cycles * p as u64 == r.cycles * 16, || {
            format!("Stripes P_a={p}: {} vs {} cycles", r.cycles, r.base_cycles)
        })?;
    }

    let fc = LayerGeometry::fc("fc", 16 * 4096, 4096);
    let mut worst_fc = 0.0f64;
    for p_a in 1..=16u8 {
        for p_w in [1u8, 5, 9, 12, 16] {
            let r = simulate_fc(
                &AcceleratorConfig::new(Design::Trt),
                &fc,
                &FcPrecision::fixed(p_a, p_w),
            )
            .map_err(|e| e.to_string())?;
            let law = 16.0 / p_a.max(p_w) as f64;
            let err = (r.speedup() - law).abs() / law;
            ensure(r.steps >= 1000 && err < 0.01, || {
                format!(
                    "TRT FC ({p_a}, {p_w}): speedup {} vs {law} over {} steps",
                    r.speedup(),
                    r.steps
                )
            })?;
            worst_fc = worst_fc.max(err);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xD57);
    for i in 0..100 {
        let k = [1, 3, 5][rng.random_range(0..3)];
        let size = rng.random_range(k..k + 12);
        let channels = rng.random_range(1..80);
        let filters = rng.random_range(1..300);
        let layer = LayerGeometry::conv("r", (size, size, channels), (k, k), 1, k / 2, filters, 1);
        let data = ReluLike {
            zero_fraction: rng.random_range(0.0..0.9),
            mean_magnitude: rng.random_range(1.0..500.0),
            max_magnitude: rng.random_range(1..65536),
        };
        let t = data
            .tensor((size, size, channels), BitWidth::W16, i)
            .map_err(|e| e.to_string())?;
        let p_a = layer_precision(&t, 0).map_err(|e| e.to_string())?.p.max(1);
        let prof = LayerProfile::new("r", p_a, 16);
        let src = PrecisionSource::Activations {
            tensor: &t,
            profile: &prof,
        };
        let run = |d| simulate_conv(&AcceleratorConfig::new(d), &layer, src);
        let (dyn_, st, base) = (
            run(Design::DStripes).map_err(|e| e.to_string())?,
            run(Design::Stripes).map_err(|e| e.to_string())?,
            run(Design::Base).map_err(|e| e.to_string())?,
        );
        ensure(dyn_.cycles <= st.cycles && st.cycles <= base.cycles, || {
            format!(
                "random layer {i}: DStripes {} Stripes {} BASE {}",
                dyn_.cycles, st.cycles, base.cycles
            )
        })?;
    }
    Ok(format!(
        "Stripes 16/p exact for p=1..16; TRT FC worst error {:.3}%; 100 random layers ordered",
        worst_fc * 100.0
    ))
}

// ---------------------------------------------------------------------------
// published profiles

fn table3() -> Outcome {
    timed(Duration::from_secs(5), || {
        let mut lines = Vec::new();
        let mut failures = Vec::new();
        for row in fixtures::profile_rows().into_iter().filter(|r| r.accuracy == 100) {
            let net = fixtures::network(&row.network).map_err(|e| e.to_string())?;
            let layers = net.profiled(&row, 16).map_err(|e| e.to_string())?;
            let report = simulate_network(&AcceleratorConfig::new(Design::Trt), &layers)
                .map_err(|e| e.to_string())?;
            let mut check = |what: &str, got: f64, want: f64| {
                let err = (got - want).abs() / want;
                lines.push(format!("{} {what} {got:.2}/{want}", row.network));
                if err > 0.05 {
                    failures.push(format!("{} {what}: {got:.3} vs {want}", row.network));
                }
            };
            if let Some(want) = row.ideal_conv {
                check("conv", report.filter(false).ideal_speedup(), want);
            }
            check("fc", report.filter(true).ideal_speedup(), row.ideal_fc);
        }
        if failures.is_empty() {
            Ok(lines.join(", "))
        } else {
            Err(failures.join("; "))
        }
    })
}

fn trt_fill_overhead() -> Outcome {
    let mut worst_layer = (0.0f64, String::new());
    let mut worst_net = (0.0f64, String::new());
    for row in fixtures::profile_rows() {
        let net = fixtures::network(&row.network).map_err(|e| e.to_string())?;
        let layers = net.profiled(&row, 16).map_err(|e| e.to_string())?;
        let report = simulate_network(&AcceleratorConfig::new(Design::Trt), &layers)
            .map_err(|e| e.to_string())?;
        for l in &report.layers {
            if l.fill_overhead() > worst_layer.0 {
                worst_layer = (l.fill_overhead(), format!("{}/{}@{}", row.network, l.layer, row.accuracy));
            }
        }
        if report.fill_overhead() > worst_net.0 {
            worst_net = (report.fill_overhead(), format!("{}@{}", row.network, row.accuracy));
        }
    }
    let msg = format!(
        "worst layer {:.2}% ({}), worst network {:.2}% ({})",
        worst_layer.0 * 100.0,
        worst_layer.1,
        worst_net.0 * 100.0,
        worst_net.1
    );
    if worst_layer.0 <= 0.06 && worst_net.0 <= 0.02 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------
// synthetic substitutes for trace-dependent results

fn synthetic_properties() -> Outcome {
    let data = ReluLike::default();
    let mut dp_sum = 0.0;
    let mut sp_sum = 0.0;
    let seeds = 32u64;
    for seed in 0..seeds {
        let t = data
            .tensor((28, 28, 96), BitWidth::W16, seed)
            .map_err(|e| e.to_string())?;
        let p = layer_precision(&t, 0).map_err(|e| e.to_string())?.p;
        let prof = LayerProfile::new("synthetic", p, 16);
        let params = EncodeParams::activations(&prof);
        let size = |s| encode_stream(&t, s, &params).map(|e| e.total_bits).map_err(|e| e.to_string());
        let (np, sp, dp) = (size(Scheme::Np)?, size(Scheme::Sp)?, size(Scheme::Dp)?);
        ensure(dp < sp && sp < np, || {
            format!("seed {seed}: DP {dp} SP {sp} NP {np} bits")
        })?;
        dp_sum += dp as f64 / np as f64;
        sp_sum += sp as f64 / np as f64;
        let eff: Vec<f64> = [256, 64, 16]
            .iter()
            .map(|&g| effective_precision(&t, g, 0, None))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure(eff[0] >= eff[1] && eff[1] >= eff[2], || {
            format!("seed {seed}: effective precision by group size 256/64/16 = {eff:?}")
        })?;
    }
    Ok(format!(
        "{seeds} seeds: DP/NP {:.3}, SP/NP {:.3}; refinement monotone",
        dp_sum / seeds as f64,
        sp_sum / seeds as f64
    ))
}

fn memory_monotonicity() -> Outcome {
    timed(Duration::from_secs(5), || {
        let bandwidths = [8.0, 17.0, 34.1, 51.2, 128.0, 256.0, 1024.0];
        let ams = [Some(MIB / 2), Some(MIB), Some(2 * MIB), Some(4 * MIB), Some(16 * MIB), None];
        let mut points = 0usize;
        for name in ["alexnet", "vgg_19", "googlenet", "nin", "denoise"] {
            let net = fixtures::network(name).map_err(|e| e.to_string())?;
            for (layer, design) in net.layers.iter().flat_map(|l| {
                [Design::Base, Design::Stripes, Design::Trt].map(move |d| (l, d))
            }) {
                let prof = LayerProfile::new(&layer.name, 8, 8);
                let cycles = dpred::simcore::simulate_layer(&AcceleratorConfig::new(design), layer, &prof, None)
                    .map_err(|e| e.to_string())?
                    .cycles;
                for ratio in [1.0, 0.5, 0.3] {
                    let demand = LayerDemand::from_geometry(layer, cycles, 16, ratio, ratio);
                    let inf = layer_time(&demand, &MemoryConfig::infinite());
                    ensure(inf.normalized_perf() == 1.0, || {
                        format!("{name}/{}: INF normalized {}", layer.name, inf.normalized_perf())
                    })?;
                    // grid: rows are AM sizes (ascending), columns bandwidths (ascending)
                    let grid: Vec<Vec<f64>> = ams
                        .iter()
                        .map(|&am| {
                            bandwidths
                                .iter()
                                .map(|&bw| {
                                    let mem = MemoryConfig::new("grid", Some(bw)).with_am(am);
                                    layer_time(&demand, &mem).normalized_perf()
                                })
                                .collect()
                        })
                        .collect();
                    for (i, row) in grid.iter().enumerate() {
                        for (j, &v) in row.iter().enumerate() {
                            points += 1;
                            ensure(v > 0.0 && v <= 1.0, || format!("perf {v} out of range"))?;
                            if j > 0 {
                                ensure(row[j - 1] <= v, || {
                                    format!("{name}/{}: perf rises as bandwidth shrinks", layer.name)
                                })?;
                            }
                            if i > 0 {
                                ensure(grid[i - 1][j] <= v, || {
                                    format!("{name}/{}: perf rises as AM shrinks", layer.name)
                                })?;
                            }
                        }
                    }
                }
            }
        }
        Ok(format!("{points} grid points monotone, INF = 1.0"))
    })
}

// ---------------------------------------------------------------------------
// trace-gated checks

enum Gated {
    Skipped(String),
    Done(Outcome),
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want.abs()
}

fn trace_effective_precision(dir: &Path, kind: TraceKind) -> Gated {
    let mut checked = 0usize;
    let mut failures = Vec::new();
    for expect in fixtures::effective_precisions() {
        let Ok(net) = fixtures::network(&expect.network) else {
            continue;
        };
        let targets = match kind {
            TraceKind::Activations => &expect.activations,
            TraceKind::Weights => &expect.weights,
        };
        for (layer, &want) in net.conv_layers().zip(targets) {
            let path = fixtures::trace_manifest(dir, &net.name, kind, &layer.name);
            if !path.exists() {
                continue;
            }
            let got = match load_tensor(&path).and_then(|t| effective_precision(&t, 16, 0, None)) {
                Ok(v) => v,
                Err(e) => return Gated::Done(Err(format!("{}: {e}", path.display()))),
            };
            checked += 1;
            if !within(got, want, 0.10) {
                failures.push(format!("{}/{}: {got:.2} vs {want}", net.name, layer.name));
            }
        }
    }
    if checked == 0 {
        return Gated::Skipped("no matching traces".into());
    }
    Gated::Done(if failures.is_empty() {
        Ok(format!("{checked} layers within 10%"))
    } else {
        Err(failures.join("; "))
    })
}

fn trace_traffic(dir: &Path) -> Gated {
    let (mut np, mut sp, mut dp) = (0u64, 0u64, 0u64);
    for net in fixtures::networks() {
        let row = fixtures::profile_row(&net.name, 100).ok();
        let mut conv_index = 0;
        for layer in &net.layers {
            let profile_pa = row.as_ref().and_then(|r| {
                if layer.is_fc() {
                    None
                } else {
                    r.conv.get(conv_index).copied()
                }
            });
            if !layer.is_fc() {
                conv_index += 1;
            }
            let path = fixtures::trace_manifest(dir, &net.name, TraceKind::Activations, &layer.name);
            if !path.exists() {
                continue;
            }
            let result = load_tensor(&path).and_then(|t| {
                let p = match profile_pa {
                    Some(p) => p,
                    None => layer_precision(&t, 0)?.p.max(1),
                };
                let params = EncodeParams::activations(&LayerProfile::new(&layer.name, p, 16));
                Ok((
                    encode_stream(&t, Scheme::Np, &params)?.total_bits,
                    encode_stream(&t, Scheme::Sp, &params)?.total_bits,
                    encode_stream(&t, Scheme::Dp, &params)?.total_bits,
                ))
            });
            match result {
                Ok((a, b, c)) => {
                    np += a;
                    sp += b;
                    dp += c;
                }
                Err(e) => return Gated::Done(Err(format!("{}: {e}", path.display()))),
            }
        }
    }
    if np == 0 {
        return Gated::Skipped("no activation traces".into());
    }
    let (dr, sr) = (dp as f64 / np as f64, sp as f64 / np as f64);
    let msg = format!("DP/NP {dr:.3} (0.38), SP/NP {sr:.3} (0.50)");
    Gated::Done(if within(dr, 0.38, 0.10) && within(sr, 0.50, 0.10) {
        Ok(msg)
    } else {
        Err(msg)
    })
}

fn trace_googlenet_cdf(dir: &Path) -> Gated {
    let path = fixtures::trace_manifest(dir, "googlenet", TraceKind::Activations, "conv1/7x7_s2");
    if !path.exists() {
        return Gated::Skipped("no GoogleNet conv1 trace".into());
    }
    Gated::Done(
        load_tensor(&path)
            .and_then(|t| precision_histogram(&t, 256, 0))
            .map_err(|e| e.to_string())
            .and_then(|h| {
                let at6 = h.cdf()[6];
                let msg = format!("{:.1}% of 256-groups at <= 6 bits", at6 * 100.0);
                if at6 >= 0.8 * 0.9 {
                    Ok(msg)
                } else {
                    Err(msg)
                }
            }),
    )
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("codec correctness", codec_correctness),
        ("bit-serial oracle", bit_serial_oracle),
        ("speedup laws", speedup_laws),
        ("ideal speedups of published profiles", table3),
        ("TRT fill overhead", trt_fill_overhead),
        ("synthetic traffic ordering and refinement", synthetic_properties),
        ("memory model monotonicity", memory_monotonicity),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }

    let gated: Vec<GatedCheck> = vec![
        (
            "trace: effective activation precision",
            Box::new(|d| trace_effective_precision(d, TraceKind::Activations)),
        ),
        (
            "trace: effective weight precision",
            Box::new(|d| trace_effective_precision(d, TraceKind::Weights)),
        ),
        ("trace: whole-network traffic", Box::new(trace_traffic)),
        ("trace: GoogleNet conv1 precision CDF", Box::new(trace_googlenet_cdf)),
    ];
    let dir = fixtures::trace_dir();
    for (name, f) in gated {
        let result = match &dir {
            None => Gated::Skipped(format!("{} not set", fixtures::TRACE_DIR_ENV)),
            Some(d) => f(d),
        };
        match result {
            Gated::Skipped(why) => println!("SKIP  {name}: {why}"),
            Gated::Done(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Gated::Done(Err(detail)) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
