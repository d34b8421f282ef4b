use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_saep, Treatment};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{ModelConfig, TrgNet};
use crate::nn::{apply_bn_updates, BnUpdate, Ctx, Mode, ParamStore};
use crate::refine::{argmax_labels, boundary_targets};
use crate::spatial::SkeletonTopology;
use crate::supervision::{total_loss, LossInputs};
use crate::tensor::{Tape, Tensor};
use crate::textgraph::{build_relational_graph_with, load_embedding_file, GraphConfig, LabeledEmbeddings};

use super::config::RunConfig;
use super::data::Dataset;
use super::optim::Adam;
use super::{par_map, worker_threads};

/// Fixed inputs shared by every sequence: the skeleton, the joint graph,
/// and the action embeddings and graph in class-id order.
#[derive(Debug, Clone)]
pub struct Resources {
    pub topology: SkeletonTopology,
    pub joint_graph: Tensor,
    /// `Q x Ct`
    pub action_embeddings: Tensor,
    pub action_graph: Tensor,
}

fn select_rows(e: &LabeledEmbeddings, wanted: &[String], what: &str) -> Result<LabeledEmbeddings> {
    let d = e.dim();
    let mut data = Vec::with_capacity(wanted.len() * d);
    for w in wanted {
        let i = e
            .labels()
            .iter()
            .position(|l| l == w)
            .ok_or_else(|| Error::invalid(format!("{what} embeddings have no entry for {w:?}")))?;
        data.extend_from_slice(e.row(i));
    }
    LabeledEmbeddings::new(wanted.to_vec(), Tensor::new([wanted.len(), d], data)?)
}

impl Resources {
    pub fn build(
        topology: SkeletonTopology,
        joints: &LabeledEmbeddings,
        actions: &LabeledEmbeddings,
        action_names: &[String],
        graph: GraphConfig,
    ) -> Result<Self> {
        let joints = select_rows(joints, topology.joints(), "joint")?;
        let actions = select_rows(actions, action_names, "action")?;
        let joint_graph = build_relational_graph_with(&joints, graph)?.to_tensor();
        let action_graph = build_relational_graph_with(&actions, graph)?.to_tensor();
        Ok(Resources {
            topology,
            joint_graph,
            action_embeddings: actions.matrix().clone(),
            action_graph,
        })
    }
}

/// Load topology and embeddings named in `cfg` and order them for
/// `action_names`.
pub fn load_resources(cfg: &RunConfig, action_names: &[String]) -> Result<Resources> {
    let topology = SkeletonTopology::load(&cfg.topology)?;
    let joints = load_embedding_file(&cfg.joint_embeddings)?;
    let actions = load_embedding_file(&cfg.action_embeddings)?;
    Resources::build(topology, &joints, &actions, action_names, cfg.graph)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub tmse: f64,
    pub bce: f64,
    pub abs: f64,
    pub rel: f64,
    /// Frame accuracy of the last class stage during the training pass.
    pub acc: f64,
    pub seconds: f64,
}

/// Everything needed to rebuild a trained network next to its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub actions: Vec<String>,
    pub joints: Vec<String>,
    pub edges: Vec<[usize; 2]>,
    pub joint_graph: Vec<Vec<f64>>,
}

pub struct TrainedModel {
    pub net: TrgNet,
    pub store: ParamStore,
    pub meta: CheckpointMeta,
    pub logs: Vec<EpochLog>,
}

impl TrainedModel {
    pub fn joint_graph(&self) -> Tensor {
        let v = self.meta.joint_graph.len();
        Tensor::new([v, v], self.meta.joint_graph.concat()).expect("square joint graph")
    }
}

fn meta_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    io::write_checkpoint(path, store.iter())?;
    io::write_text(&meta_path(path), &serde_json::to_string_pretty(meta)?)
}

/// Rebuild the network described by the metadata next to `path` and load
/// its weights.
pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let meta: CheckpointMeta = serde_json::from_str(&io::read_text(&meta_path(path))?)?;
    let tensors = io::read_checkpoint(path)?;
    let topology = SkeletonTopology::new(meta.joints.clone(), meta.edges.clone())?;
    let mut store = ParamStore::new();
    let net = TrgNet::new(&meta.model, &topology, meta.actions.len(), &mut store, 0)?;
    store.assign_from(&tensors)?;
    Ok(TrainedModel {
        net,
        store,
        meta,
        logs: Vec::new(),
    })
}

struct SeqResult {
    grads: BTreeMap<String, Tensor>,
    bn: Vec<BnUpdate>,
    parts: [f64; 6],
    pred: Vec<usize>,
}

fn mix_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed ^ ((epoch as u64) << 32) ^ index as u64;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct StepInput<'a> {
    x: &'a Tensor,
    labels: &'a [usize],
    targets: Vec<f64>,
    dropout_seed: u64,
}

fn sequence_step(
    net: &TrgNet,
    store: &ParamStore,
    res: &Resources,
    cfg: &RunConfig,
    inp: &StepInput<'_>,
) -> Result<SeqResult> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store, Mode::Train).with_dropout(cfg.model.dropout, inp.dropout_seed);
    let out = net.forward(&ctx, tape.constant(inp.x.clone()), &res.joint_graph)?;
    let use_text = cfg.loss.lambda_abs != 0.0 || cfg.loss.lambda_rel != 0.0;
    let parts = total_loss(
        &LossInputs {
            class_stages: &out.class_stages,
            boundary_stages: &out.boundary_stages,
            representation: use_text.then_some(out.representation),
            labels: inp.labels,
            boundary_targets: &inp.targets,
            action_embeddings: &res.action_embeddings,
            action_graph: &res.action_graph,
        },
        &cfg.loss,
    )?;
    let summary = [parts.total.item(), parts.ce, parts.tmse, parts.bce, parts.abs, parts.rel];
    let last = out.class_stages.last().expect("class stage").value();
    let pred = argmax_labels(last.data(), net.classes);
    if summary.iter().any(|v| !v.is_finite()) {
        return Ok(SeqResult {
            grads: BTreeMap::new(),
            bn: Vec::new(),
            parts: summary,
            pred,
        });
    }
    let grads = tape.backward(parts.total)?;
    Ok(SeqResult {
        grads: ctx.param_grads(&grads),
        bn: ctx.take_bn_updates(),
        parts: summary,
        pred,
    })
}

fn describe(parts: &[f64; 6]) -> String {
    format!(
        "total={} ce={} tmse={} bce={} abs={} rel={}",
        parts[0], parts[1], parts[2], parts[3], parts[4], parts[5]
    )
}

/// Train on an in-memory dataset. `on_epoch` sees each log entry as it is
/// produced. Results do not depend on `threads`: per-sequence gradients are
/// reduced in a fixed order.
pub fn train_on(
    cfg: &RunConfig,
    data: &Dataset,
    res: &Resources,
    threads: usize,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainedModel> {
    cfg.validate()?;
    data.validate()?;
    if data.sequences.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let q = data.num_classes();
    if res.action_embeddings.shape()[0] != q {
        return Err(Error::invalid(format!(
            "{q} actions but {} action embeddings",
            res.action_embeddings.shape()[0]
        )));
    }
    let mut store = ParamStore::new();
    let net = TrgNet::new(&cfg.model, &res.topology, q, &mut store, cfg.train.seed)?;
    let mut opt = Adam::new(cfg.train.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    log::info!(
        "training {} sequences, {} parameters, seed {}",
        data.sequences.len(),
        store.num_trainable_values(),
        cfg.train.seed
    );

    let targets: Vec<Vec<f64>> = data
        .sequences
        .iter()
        .map(|s| boundary_targets(&s.labels, cfg.train.boundary_radius))
        .collect();
    let mut logs = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..data.sequences.len()).collect();
        order.shuffle(&mut rng);
        let inputs: Vec<Tensor> = order.iter().map(|&i| data.sequences[i].x.clone()).collect();
        let inputs = if cfg.train.augment {
            let (aug, plan) = apply_saep(&inputs, &cfg.augment, &mut rng, Mode::Train)?;
            log::debug!(
                "epoch {epoch}: {} occluded, {} rotated",
                plan.iter().filter(|&&t| t == Treatment::Occluded).count(),
                plan.iter().filter(|&&t| t == Treatment::Rotated).count()
            );
            aug
        } else {
            inputs
        };

        let mut sums = [0.0; 6];
        let mut correct = 0usize;
        let mut frames = 0usize;
        for (b, batch) in order.chunks(cfg.train.batch_size).enumerate() {
            let base = b * cfg.train.batch_size;
            let step_inputs: Vec<StepInput<'_>> = batch
                .iter()
                .enumerate()
                .map(|(k, &i)| StepInput {
                    x: &inputs[base + k],
                    labels: &data.sequences[i].labels,
                    targets: targets[i].clone(),
                    dropout_seed: mix_seed(cfg.train.seed, epoch, base + k),
                })
                .collect();
            let results = par_map(&step_inputs, threads, |_, inp| {
                sequence_step(&net, &store, res, cfg, inp)
            });
            let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
            let mut updates = Vec::new();
            for (r, &i) in results.into_iter().zip(batch) {
                let r = r?;
                let seq = &data.sequences[i];
                if r.parts.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        sequence: seq.id.clone(),
                        components: describe(&r.parts),
                    });
                }
                for (s, p) in sums.iter_mut().zip(&r.parts) {
                    *s += p;
                }
                correct += r.pred.iter().zip(&seq.labels).filter(|(a, b)| a == b).count();
                frames += seq.labels.len();
                for (name, g) in r.grads {
                    match acc.get_mut(&name) {
                        Some(a) => {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                        None => {
                            acc.insert(name, g);
                        }
                    }
                }
                updates.extend(r.bn);
            }
            let scale = 1.0 / batch.len() as f64;
            for g in acc.values_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            opt.step(&mut store, &acc);
            apply_bn_updates(&mut store, &updates);
        }
        let n = data.sequences.len() as f64;
        let entry = EpochLog {
            epoch,
            loss: sums[0] / n,
            ce: sums[1] / n,
            tmse: sums[2] / n,
            bce: sums[3] / n,
            abs: sums[4] / n,
            rel: sums[5] / n,
            acc: 100.0 * correct as f64 / frames.max(1) as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} ce {:.4} abs {:.4} rel {:.4} acc {:.1}",
            entry.loss,
            entry.ce,
            entry.abs,
            entry.rel,
            entry.acc
        );
        on_epoch(&entry);
        logs.push(entry);
    }
    let meta = CheckpointMeta {
        model: cfg.model.clone(),
        actions: data.actions.clone(),
        joints: res.topology.joints().to_vec(),
        edges: res.topology.edges().to_vec(),
        joint_graph: res
            .joint_graph
            .data()
            .chunks(res.topology.num_joints())
            .map(<[f64]>::to_vec)
            .collect(),
    };
    Ok(TrainedModel {
        net,
        store,
        meta,
        logs,
    })
}

/// Full run from a config: load data and resources, train, and write
/// `model.trgw`, `model.json` and `train_log.jsonl` to the output directory.
pub fn train(cfg: &RunConfig) -> Result<(TrainedModel, PathBuf)> {
    let data = Dataset::load(&cfg.train_dir)?;
    let res = load_resources(cfg, &data.actions)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join("train_log.jsonl");
    let mut log_file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut write_err = None;
    let model = train_on(cfg, &data, &res, worker_threads(), |entry| {
        let line = serde_json::to_string(entry).expect("log entry serialises");
        if let Err(e) = writeln!(log_file, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(Error::io(&log_path, e));
    }
    let ckpt = out.join("model.trgw");
    save_checkpoint(&ckpt, &model.store, &model.meta)?;
    let train_scores = super::eval::evaluate(&model, &data, &cfg.eval, worker_threads(), None)?;
    log::info!(
        "final train scores: acc {:.1} edit {:.1} f1@50 {:.1}",
        train_scores.overall.acc,
        train_scores.overall.edit,
        train_scores.overall.f1_50
    );
    Ok((model, ckpt))
}
