//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain values and returns a JSON string; the page does
//! the drawing. The pure `*_json` functions carry the logic so they can be
//! tested natively.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use trg_core::augment::{random_occlusion, rotate_axial};
use trg_core::io::{decode_embedding_payload, LabelSidecar};
use trg_core::metrics::{evaluate_sequence, runs};
use trg_core::pipeline::{synth_generate, synth_topology, SynthConfig};
use trg_core::textgraph::{
    build_relational_graph_with, DistanceMetric, GraphConfig, GraphNormalization, LabeledEmbeddings,
};

struct Source {
    name: &'static str,
    payload: &'static [u8],
    labels: &'static str,
}

macro_rules! source {
    ($name:literal) => {
        Source {
            name: $name,
            payload: include_bytes!(concat!("../../../fixtures/embeddings/", $name, ".trge")),
            labels: include_str!(concat!("../../../fixtures/embeddings/", $name, ".labels.json")),
        }
    };
}

const SOURCES: [Source; 4] = [
    source!("pku_joints"),
    source!("pku_actions"),
    source!("synth_joints"),
    source!("synth_actions"),
];

/// Names accepted by [`graph_heatmap`].
pub fn source_names() -> Vec<&'static str> {
    SOURCES.iter().map(|s| s.name).collect()
}

fn embeddings(name: &str) -> Result<LabeledEmbeddings, String> {
    let src = SOURCES
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| format!("unknown embedding set {name:?}"))?;
    let matrix = decode_embedding_payload(src.payload).map_err(|e| e.to_string())?;
    let side: LabelSidecar = serde_json::from_str(src.labels).map_err(|e| e.to_string())?;
    LabeledEmbeddings::new(side.labels, matrix).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Heatmap {
    labels: Vec<String>,
    values: Vec<Vec<f64>>,
}

pub fn graph_json(source: &str, metric: &str, normalization: &str) -> Result<String, String> {
    let metric = match metric {
        "l2" => DistanceMetric::L2,
        "l1" => DistanceMetric::L1,
        "cosine" => DistanceMetric::Cosine,
        m => return Err(format!("unknown metric {m:?}")),
    };
    let normalization = match normalization {
        "min-max" => GraphNormalization::MinMax,
        "z-score" => GraphNormalization::ZScore,
        "sigmoid" => GraphNormalization::Sigmoid,
        n => return Err(format!("unknown normalization {n:?}")),
    };
    let e = embeddings(source)?;
    let g = build_relational_graph_with(&e, GraphConfig { metric, normalization }).map_err(|e| e.to_string())?;
    let n = g.len();
    let out = Heatmap {
        labels: g.labels().to_vec(),
        values: (0..n).map(|i| (0..n).map(|j| g.get(i, j)).collect()).collect(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Preview {
    joints: Vec<String>,
    edges: Vec<[usize; 2]>,
    before: Vec<[f64; 3]>,
    after: Vec<[f64; 3]>,
    occluded: Vec<usize>,
    theta: f64,
}

/// One frame of a synthetic sequence before and after augmentation.
/// `mode` is `rotate` (by `theta_deg` about the vertical axis) or `occlude`
/// (a seeded random subset of at most half the joints).
pub fn augment_json(mode: &str, theta_deg: f64, seed: u64, frame: usize) -> Result<String, String> {
    let cfg = SynthConfig {
        sequences: 1,
        frames: 60,
        min_segments: 1,
        max_segments: 3,
        seed,
        ..SynthConfig::default()
    };
    let data = synth_generate(&cfg).map_err(|e| e.to_string())?;
    // positions only; the trailing channels are velocities
    let x = &data.sequences[0].x;
    let [c, t, v] = x.shape()[..] else { unreachable!() };
    let positions = trg_core::tensor::Tensor::from_fn([3, t, v], |k| x.data()[k]);
    debug_assert!(c >= 3);
    let (after, occluded, theta) = match mode {
        "rotate" => {
            let theta = theta_deg.to_radians();
            (rotate_axial(&positions, 1, theta).map_err(|e| e.to_string())?, vec![], theta)
        }
        "occlude" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (y, joints) = random_occlusion(&positions, 0.5, &mut rng).map_err(|e| e.to_string())?;
            (y, joints, 0.0)
        }
        m => return Err(format!("unknown augmentation {m:?}")),
    };
    let f = frame.min(t - 1);
    let pick = |m: &trg_core::tensor::Tensor| -> Vec<[f64; 3]> {
        (0..v).map(|j| std::array::from_fn(|a| m.get(&[a, f, j]))).collect()
    };
    let topo = synth_topology();
    let out = Preview {
        joints: topo.joints().to_vec(),
        edges: topo.edges().to_vec(),
        before: pick(&positions),
        after: pick(&after),
        occluded,
        theta,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Parse labels written as `0 0 1 1` or with run-length shorthand `0*10 1*5`
/// (commas also separate).
pub fn parse_labels(text: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for tok in text.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()) {
        let (label, count) = match tok.split_once('*') {
            Some((l, n)) => (l, n.parse::<usize>().map_err(|_| format!("bad repeat in {tok:?}"))?),
            None => (tok, 1),
        };
        let label = label.parse::<usize>().map_err(|_| format!("bad label {tok:?}"))?;
        out.extend(std::iter::repeat_n(label, count));
    }
    Ok(out)
}

#[derive(Serialize)]
struct Segment {
    class: usize,
    start: usize,
    end: usize,
}

#[derive(Serialize)]
struct MetricsOut {
    acc: f64,
    edit: f64,
    f1_10: f64,
    f1_25: f64,
    f1_50: f64,
    pred: Vec<Segment>,
    gt: Vec<Segment>,
}

pub fn metrics_json(pred: &str, gt: &str) -> Result<String, String> {
    let (p, g) = (parse_labels(pred)?, parse_labels(gt)?);
    let s = evaluate_sequence(&p, &g, None).map_err(|e| e.to_string())?;
    let segs = |l: &[usize]| {
        runs(l, None)
            .into_iter()
            .map(|r| Segment { class: r.class, start: r.start, end: r.end })
            .collect()
    };
    let out = MetricsOut {
        acc: s.acc,
        edit: s.edit,
        f1_10: s.f1_10,
        f1_25: s.f1_25,
        f1_50: s.f1_50,
        pred: segs(&p),
        gt: segs(&g),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Similarity graph over a bundled embedding set, as `{labels, values}`.
#[wasm_bindgen]
pub fn graph_heatmap(source: &str, metric: &str, normalization: &str) -> Result<String, JsValue> {
    js(graph_json(source, metric, normalization))
}

#[wasm_bindgen]
pub fn augment_preview(mode: &str, theta_deg: f64, seed: u32, frame: u32) -> Result<String, JsValue> {
    js(augment_json(mode, theta_deg, seed as u64, frame as usize))
}

#[wasm_bindgen]
pub fn segment_metrics(pred: &str, gt: &str) -> Result<String, JsValue> {
    js(metrics_json(pred, gt))
}

#[wasm_bindgen]
pub fn embedding_sources() -> String {
    serde_json::to_string(&source_names()).unwrap_or_default()
}
