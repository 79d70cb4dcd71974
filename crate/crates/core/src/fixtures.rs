// SPDX-License-Identifier: Apache-2.0

//! Network layer geometries and published per-layer precision tables.
//!
//! `fixtures/networks.json` is produced by [`generate_networks`] (run the
//! `gen_fixtures` example to rewrite it); the precision tables are
//! transcriptions kept as hand-edited JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::LayerProfile;
use crate::simcore::LayerGeometry;

const NETWORKS_JSON: &str = include_str!("../fixtures/networks.json");
const PROFILES_JSON: &str = include_str!("../fixtures/profiles.json");
const EFFECTIVE_JSON: &str = include_str!("../fixtures/effective_precision.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    pub layers: Vec<LayerGeometry>,
}

impl Network {
    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerGeometry> {
        self.layers.iter().filter(|l| !l.is_fc())
    }

    pub fn fc_layers(&self) -> impl Iterator<Item = &LayerGeometry> {
        self.layers.iter().filter(|l| l.is_fc())
    }

    pub fn macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs()).sum()
    }

    /// Pairs layers with a profile row. Conv layers take the activation
    /// precisions in order with full-width weights; FC layers use the FC
    /// precision for both operands. A single FC value covers every FC layer.
    pub fn profiled(&self, row: &ProfileRow, width: u8) -> Result<Vec<(LayerGeometry, LayerProfile)>> {
        let convs: Vec<_> = self.conv_layers().collect();
        let fcs: Vec<_> = self.fc_layers().collect();
        if row.conv.len() != convs.len() {
            return Err(Error::Profile(format!(
                "{}: {} conv precisions for {} conv layers",
                self.name,
                row.conv.len(),
                convs.len()
            )));
        }
        if row.fc.len() != fcs.len() && row.fc.len() != 1 {
            return Err(Error::Profile(format!(
                "{}: {} FC precisions for {} FC layers",
                self.name,
                row.fc.len(),
                fcs.len()
            )));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        let (mut ci, mut fi) = (0, 0);
        for l in &self.layers {
            let (p_a, p_w) = if l.is_fc() {
                let p = row.fc[fi.min(row.fc.len() - 1)];
                fi += 1;
                (p, p)
            } else {
                ci += 1;
                (row.conv[ci - 1], width)
            };
            let mut prof = LayerProfile::new(l.name.clone(), p_a, p_w);
            prof.work = l.macs();
            out.push((l.clone(), prof));
        }
        Ok(out)
    }
}

/// Per-layer precisions that keep a given accuracy, with the reported ideal
/// speedups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub network: String,
    /// Relative top-1 accuracy the precisions preserve, in percent.
    pub accuracy: u8,
    pub conv: Vec<u8>,
    pub fc: Vec<u8>,
    pub ideal_conv: Option<f64>,
    pub ideal_fc: f64,
}

/// Average per-layer precisions at a group size of 16.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivePrecision {
    pub network: String,
    pub activations: Vec<f64>,
    pub activation_reduction_pct: f64,
    pub weights: Vec<f64>,
    pub weight_reduction_pct: f64,
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> T {
    serde_json::from_str(text).unwrap_or_else(|e| panic!("embedded fixture {what} is invalid: {e}"))
}

pub fn networks() -> Vec<Network> {
    parse("networks.json", NETWORKS_JSON)
}

fn canonical(name: &str) -> String {
    name.to_ascii_lowercase().replace(['-', ' '], "_")
}

pub fn network(name: &str) -> Result<Network> {
    let key = canonical(name);
    networks()
        .into_iter()
        .find(|n| n.name == key)
        .ok_or_else(|| Error::UnknownFixture(format!("network `{name}`")))
}

pub fn profile_rows() -> Vec<ProfileRow> {
    parse("profiles.json", PROFILES_JSON)
}

pub fn profile_row(network: &str, accuracy: u8) -> Result<ProfileRow> {
    let key = canonical(network);
    profile_rows()
        .into_iter()
        .find(|r| r.network == key && r.accuracy == accuracy)
        .ok_or_else(|| {
            Error::UnknownFixture(format!("profile for `{network}` at {accuracy}% accuracy"))
        })
}

pub fn effective_precisions() -> Vec<EffectivePrecision> {
    parse("effective_precision.json", EFFECTIVE_JSON)
}

pub fn effective_precision(network: &str) -> Result<EffectivePrecision> {
    let key = canonical(network);
    effective_precisions()
        .into_iter()
        .find(|r| r.network == key)
        .ok_or_else(|| Error::UnknownFixture(format!("effective precisions for `{network}`")))
}

/// Environment variable naming the directory of user-supplied traces.
pub const TRACE_DIR_ENV: &str = "DPRED_TRACE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Activations,
    Weights,
}

/// Manifest path of a captured layer input (`<dir>/<network>/act/<layer>.json`)
/// or weight tensor (`.../wgt/...`). Slashes in layer names become dots.
pub fn trace_manifest(dir: &Path, network: &str, kind: TraceKind, layer: &str) -> PathBuf {
    let sub = match kind {
        TraceKind::Activations => "act",
        TraceKind::Weights => "wgt",
    };
    dir.join(canonical(network))
        .join(sub)
        .join(format!("{}.json", layer.replace('/', ".")))
}

/// The trace directory from the environment, if set and present.
pub fn trace_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os(TRACE_DIR_ENV)?);
    dir.is_dir().then_some(dir)
}

fn conv(
    name: &str,
    input: (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    filters: usize,
    groups: usize,
) -> LayerGeometry {
    LayerGeometry::conv(name, input, (k, k), stride, pad, filters, groups).with_macs()
}

fn fc(name: &str, inputs: usize, outputs: usize) -> LayerGeometry {
    LayerGeometry::fc(name, inputs, outputs).with_macs()
}

fn classifier(inputs: usize) -> [LayerGeometry; 3] {
    [
        fc("fc6", inputs, 4096),
        fc("fc7", 4096, 4096),
        fc("fc8", 4096, 1000),
    ]
}

fn alexnet() -> Vec<LayerGeometry> {
    let mut v = vec![
        conv("conv1", (227, 227, 3), 11, 4, 0, 96, 1),
        conv("conv2", (27, 27, 96), 5, 1, 2, 256, 2),
        conv("conv3", (13, 13, 256), 3, 1, 1, 384, 1),
        conv("conv4", (13, 13, 384), 3, 1, 1, 384, 2),
        conv("conv5", (13, 13, 384), 3, 1, 1, 256, 2),
    ];
    v.extend(classifier(6 * 6 * 256));
    v
}

fn vgg_s() -> Vec<LayerGeometry> {
    let mut v = vec![
        conv("conv1", (224, 224, 3), 7, 2, 0, 96, 1),
        conv("conv2", (37, 37, 96), 5, 1, 0, 256, 1),
        conv("conv3", (17, 17, 256), 3, 1, 1, 512, 1),
        conv("conv4", (17, 17, 512), 3, 1, 1, 512, 1),
        conv("conv5", (17, 17, 512), 3, 1, 1, 512, 1),
    ];
    v.extend(classifier(6 * 6 * 512));
    v
}

fn vgg_m() -> Vec<LayerGeometry> {
    let mut v = vec![
        conv("conv1", (224, 224, 3), 7, 2, 0, 96, 1),
        conv("conv2", (54, 54, 96), 5, 2, 1, 256, 1),
        conv("conv3", (13, 13, 256), 3, 1, 1, 512, 1),
        conv("conv4", (13, 13, 512), 3, 1, 1, 512, 1),
        conv("conv5", (13, 13, 512), 3, 1, 1, 512, 1),
    ];
    v.extend(classifier(6 * 6 * 512));
    v
}

fn vgg_19() -> Vec<LayerGeometry> {
    let stages: [(usize, usize, usize); 5] = [(224, 64, 2), (112, 128, 2), (56, 256, 4), (28, 512, 4), (14, 512, 4)];
    let mut v = Vec::new();
    let mut channels = 3;
    for (s, &(size, filters, count)) in stages.iter().enumerate() {
        for i in 0..count {
            let name = format!("conv{}_{}", s + 1, i + 1);
            v.push(conv(&name, (size, size, channels), 3, 1, 1, filters, 1));
            channels = filters;
        }
    }
    v.extend(classifier(7 * 7 * 512));
    v
}

fn nin() -> Vec<LayerGeometry> {
    vec![
        conv("conv1", (224, 224, 3), 11, 4, 0, 96, 1),
        conv("cccp1", (54, 54, 96), 1, 1, 0, 96, 1),
        conv("cccp2", (54, 54, 96), 1, 1, 0, 96, 1),
        conv("conv2", (27, 27, 96), 5, 1, 2, 256, 1),
        conv("cccp3", (27, 27, 256), 1, 1, 0, 256, 1),
        conv("cccp4", (27, 27, 256), 1, 1, 0, 256, 1),
        conv("conv3", (13, 13, 256), 3, 1, 1, 384, 1),
        conv("cccp5", (13, 13, 384), 1, 1, 0, 384, 1),
        conv("cccp6", (13, 13, 384), 1, 1, 0, 384, 1),
        conv("conv4", (6, 6, 384), 3, 1, 1, 1024, 1),
        conv("cccp7", (6, 6, 1024), 1, 1, 0, 1024, 1),
        conv("cccp8", (6, 6, 1024), 1, 1, 0, 1000, 1),
    ]
}

fn googlenet() -> Vec<LayerGeometry> {
    // (name, size, 1x1, 3x3 reduce, 3x3, 5x5 reduce, 5x5, pool proj)
    const INCEPTIONS: [(&str, usize, [usize; 6]); 9] = [
        ("3a", 28, [64, 96, 128, 16, 32, 32]),
        ("3b", 28, [128, 128, 192, 32, 96, 64]),
        ("4a", 14, [192, 96, 208, 16, 48, 64]),
        ("4b", 14, [160, 112, 224, 24, 64, 64]),
        ("4c", 14, [128, 128, 256, 24, 64, 64]),
        ("4d", 14, [112, 144, 288, 32, 64, 64]),
        ("4e", 14, [256, 160, 320, 32, 128, 128]),
        ("5a", 7, [256, 160, 320, 32, 128, 128]),
        ("5b", 7, [384, 192, 384, 48, 128, 128]),
    ];
    let mut v = vec![
        conv("conv1/7x7_s2", (224, 224, 3), 7, 2, 3, 64, 1),
        conv("conv2/3x3_reduce", (56, 56, 64), 1, 1, 0, 64, 1),
        conv("conv2/3x3", (56, 56, 64), 3, 1, 1, 192, 1),
    ];
    let mut channels = 192;
    for (id, s, [c1, r3, c3, r5, c5, pp]) in INCEPTIONS {
        let n = |suffix: &str| format!("inception_{id}/{suffix}");
        v.push(conv(&n("1x1"), (s, s, channels), 1, 1, 0, c1, 1));
        v.push(conv(&n("3x3_reduce"), (s, s, channels), 1, 1, 0, r3, 1));
        v.push(conv(&n("3x3"), (s, s, r3), 3, 1, 1, c3, 1));
        v.push(conv(&n("5x5_reduce"), (s, s, channels), 1, 1, 0, r5, 1));
        v.push(conv(&n("5x5"), (s, s, r5), 5, 1, 2, c5, 1));
        v.push(conv(&n("pool_proj"), (s, s, channels), 1, 1, 0, pp, 1));
        channels = c1 + c3 + c5 + pp;
    }
    v.push(fc("loss3/classifier", channels, 1000));
    v
}

fn neuraltalk() -> Vec<LayerGeometry> {
    // LSTM gates over [word embedding, hidden state], then the word decoder
    vec![fc("lstm", 512 + 512, 4 * 512), fc("decoder", 512, 8791)]
}

fn denoise() -> Vec<LayerGeometry> {
    let dims = [1521, 3072, 3072, 2559, 2047, 289];
    dims.windows(2)
        .enumerate()
        .map(|(i, d)| fc(&format!("fc{}", i + 1), d[0], d[1]))
        .collect()
}

/// Layer geometries of every fixture network, from published layer
/// dimensions.
pub fn generate_networks() -> Vec<Network> {
    let n = |name: &str, layers| Network {
        name: name.into(),
        layers,
    };
    vec![
        n("alexnet", alexnet()),
        n("nin", nin()),
        n("googlenet", googlenet()),
        n("vgg_s", vgg_s()),
        n("vgg_m", vgg_m()),
        n("vgg_19", vgg_19()),
        n("neuraltalk", neuraltalk()),
        n("denoise", denoise()),
    ]
}

/// The JSON text `networks.json` should hold.
pub fn networks_json() -> String {
    let mut s = serde_json::to_string_pretty(&generate_networks()).expect("serializable");
    s.push('\n');
    s
}
