// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use dpred::codec::{encode_stream, EncodeParams, EncodedStream, Scheme};
use dpred::precision::layer_precision;
use dpred::tensors::{load_tensor, save_tensor};
use dpred::BRICK;
use serde::Serialize;

use crate::output::config_hash;
use crate::{invalid, Global};

#[derive(Args, Debug, Serialize)]
pub struct EncodeArgs {
    /// Tensor manifest to encode.
    pub manifest: PathBuf,
    /// np, sp or dp.
    #[arg(long, default_value = "dp")]
    pub scheme: Scheme,
    /// Static precision for SP [default: the tensor's own layer precision]
    #[arg(long)]
    pub precision: Option<u8>,
    /// Low-order bits dropped (lossy below this bit).
    #[arg(long, default_value_t = 0)]
    pub n_l: u8,
    /// Record a random re-access point every this many DP groups.
    #[arg(long)]
    pub loop_interval: Option<u32>,
}

#[derive(Args, Debug, Serialize)]
pub struct DecodeArgs {
    /// Stream file written by `encode`.
    pub stream: PathBuf,
}

#[derive(Serialize)]
struct StreamSummary<'a> {
    config_hash: String,
    input: &'a str,
    output: &'a str,
    scheme: &'static str,
    width: u32,
    values: usize,
    total_bits: u64,
    original_bits: u64,
    ratio: f64,
    metadata_bits: u64,
    padding_bits: u64,
    saturated: usize,
    file_bytes: usize,
}

fn summary<'a>(hash: String, input: &'a str, output: &'a str, s: &EncodedStream, file_bytes: usize) -> StreamSummary<'a> {
    StreamSummary {
        config_hash: hash,
        input,
        output,
        scheme: s.scheme.name(),
        width: s.width.bits(),
        values: s.value_count(),
        total_bits: s.total_bits,
        original_bits: s.original_bits,
        ratio: s.ratio(),
        metadata_bits: s.metadata_bits,
        padding_bits: s.padding_bits,
        saturated: s.saturated,
        file_bytes,
    }
}

pub fn encode(g: &Global, args: &EncodeArgs) -> Result<()> {
    if g.group_size != [BRICK] {
        return Err(invalid(format!("containers hold groups of {BRICK} values")));
    }
    let tensor = load_tensor(&args.manifest)?;
    if let Some(w) = g.width {
        if w != tensor.width().bits() {
            return Err(invalid(format!("tensor is {}-bit, --width is {w}", tensor.width().bits())));
        }
    }
    let precision = match args.precision {
        Some(p) => p,
        None => layer_precision(&tensor, 0)?.p.max(1),
    };
    let params = EncodeParams {
        n_l: args.n_l,
        sp_precision: precision,
        loop_interval: args.loop_interval,
    };
    let stream = encode_stream(&tensor, args.scheme, &params)?;
    let bytes = stream.to_bytes();
    let out = g.out.clone().unwrap_or_else(|| args.manifest.with_extension("dpr"));
    fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    let hash = config_hash(&(g, args));
    let input = args.manifest.display().to_string();
    let output = out.display().to_string();
    println!(
        "{}",
        serde_json::to_string_pretty(&summary(hash, &input, &output, &stream, bytes.len()))?
    );
    Ok(())
}

pub fn decode(g: &Global, args: &DecodeArgs) -> Result<()> {
    let bytes = fs::read(&args.stream).with_context(|| format!("reading {}", args.stream.display()))?;
    let stream = EncodedStream::from_bytes(&bytes).with_context(|| format!("decoding {}", args.stream.display()))?;
    let tensor = stream.decode()?;
    let out = g.out.clone().unwrap_or_else(|| args.stream.with_extension("json"));
    if out == args.stream {
        return Err(invalid("output would overwrite the stream file"));
    }
    save_tensor(&tensor, &out)?;
    let hash = config_hash(&(g, args));
    let input = args.stream.display().to_string();
    let output = out.display().to_string();
    println!(
        "{}",
        serde_json::to_string_pretty(&summary(hash, &input, &output, &stream, bytes.len()))?
    );
    Ok(())
}
