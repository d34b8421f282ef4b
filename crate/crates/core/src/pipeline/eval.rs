use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{aggregate, evaluate_sequence, Scores};
use crate::nn::{Ctx, Mode};
use crate::refine::{argmax_labels, boundary_guided_relabel};
use crate::tensor::{Tape, Tensor};

use super::config::EvalConfig;
use super::data::Dataset;
use super::par_map;
use super::train::TrainedModel;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Final labels (relabelled if enabled).
    pub labels: Vec<usize>,
    /// Per-frame argmax of the last class stage.
    pub raw_labels: Vec<usize>,
    /// `Q x T`, last class stage.
    pub class_probs: Vec<f64>,
    /// Last boundary stage, one value per frame.
    pub boundary: Vec<f64>,
}

/// Eval-mode forward pass on one `C0 x T x V` sequence.
pub fn predict(model: &TrainedModel, x: &Tensor, cfg: &EvalConfig) -> Result<Prediction> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &model.store, Mode::Eval);
    let graph = model.joint_graph();
    let out = model.net.forward(&ctx, ctx.constant(x.clone()), &graph)?;
    let q = model.net.classes;
    let class_probs = out.class_stages.last().expect("class stage").value().data().to_vec();
    let boundary = out
        .boundary_stages
        .last()
        .map(|b| b.value().data().to_vec())
        .unwrap_or_else(|| vec![0.0; class_probs.len() / q]);
    let raw_labels = argmax_labels(&class_probs, q);
    let labels = if cfg.relabel {
        boundary_guided_relabel(&class_probs, q, &boundary, cfg.boundary_threshold)?
    } else {
        raw_labels.clone()
    };
    Ok(Prediction {
        labels,
        raw_labels,
        class_probs,
        boundary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScores {
    pub id: String,
    pub frames: usize,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Scores,
    pub per_sequence: Vec<SequenceScores>,
}

/// Score `model` on every sequence of `data`. With `out_dir`, per-sequence
/// predictions go to `predictions/<id>.csv` and the report to
/// `metrics.json`.
pub fn evaluate(
    model: &TrainedModel,
    data: &Dataset,
    cfg: &EvalConfig,
    threads: usize,
    out_dir: Option<&Path>,
) -> Result<EvalReport> {
    data.validate()?;
    if data.actions != model.meta.actions {
        return Err(Error::CheckpointMismatch(format!(
            "dataset actions {:?} differ from checkpoint actions {:?}",
            data.actions, model.meta.actions
        )));
    }
    if let Some(s) = data.sequences.first() {
        if s.joints() != model.net.joints || s.channels() != model.net.config.in_channels {
            return Err(Error::CheckpointMismatch(format!(
                "sequences have {} channels x {} joints, model expects {} x {}",
                s.channels(),
                s.joints(),
                model.net.config.in_channels,
                model.net.joints
            )));
        }
    }
    let preds = par_map(&data.sequences, threads, |_, s| predict(model, &s.x, cfg));
    let mut per_sequence = Vec::with_capacity(preds.len());
    let mut labels = Vec::with_capacity(preds.len());
    for (p, s) in preds.into_iter().zip(&data.sequences) {
        let p = p?;
        per_sequence.push(SequenceScores {
            id: s.id.clone(),
            frames: s.frames(),
            scores: evaluate_sequence(&p.labels, &s.labels, cfg.ignore_class)?,
        });
        labels.push(p.labels);
    }
    let overall = aggregate(
        &per_sequence
            .iter()
            .map(|s| (s.scores, s.frames))
            .collect::<Vec<_>>(),
    )?;
    let report = EvalReport { overall, per_sequence };
    if let Some(dir) = out_dir {
        let pred_dir = dir.join("predictions");
        std::fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
        for (s, l) in data.sequences.iter().zip(&labels) {
            io::write_labels(&pred_dir.join(format!("{}.csv", s.id)), l)?;
        }
        io::write_text(&dir.join("metrics.json"), &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}
