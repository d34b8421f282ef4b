use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;

/// One recording: `C0 x T x V` features and a label per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl SkeletonSequence {
    pub fn new(id: impl Into<String>, x: Tensor, labels: Vec<usize>) -> Result<Self> {
        let id = id.into();
        let [_, t, _] = x.shape()[..] else {
            return Err(Error::invalid(format!("{id}: features must be C0 x T x V, got {:?}", x.shape())));
        };
        if labels.len() != t {
            return Err(Error::invalid(format!("{id}: {} labels for {t} frames", labels.len())));
        }
        if t == 0 {
            return Err(Error::invalid(format!("{id}: empty sequence")));
        }
        Ok(SkeletonSequence { id, x, labels })
    }

    pub fn channels(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.x.shape()[2]
    }
}

/// A split directory: `<id>.skel` + `<id>.csv` per sequence and an
/// `actions.json` map from class id to action name.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub actions: Vec<String>,
    pub sequences: Vec<SkeletonSequence>,
}

pub const ACTIONS_FILE: &str = "actions.json";

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.num_classes();
        let Some(first) = self.sequences.first() else {
            return Ok(());
        };
        let (c, v) = (first.channels(), first.joints());
        for s in &self.sequences {
            if s.channels() != c || s.joints() != v {
                return Err(Error::invalid(format!(
                    "{}: shape {:?} differs from {c} channels x {v} joints",
                    s.id,
                    s.x.shape()
                )));
            }
            if let Some(&l) = s.labels.iter().find(|&&l| l >= q) {
                return Err(Error::invalid(format!("{}: label {l} but only {q} actions", s.id)));
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let actions = read_actions(&dir.join(ACTIONS_FILE))?;
        let mut ids = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|e| e == "skel") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        let sequences = ids
            .into_iter()
            .map(|id| {
                let x = io::read_sequence(&dir.join(format!("{id}.skel")))?;
                let labels = io::read_labels(&dir.join(format!("{id}.csv")))?;
                SkeletonSequence::new(id, x, labels)
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Dataset { actions, sequences };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_actions(&dir.join(ACTIONS_FILE), &self.actions)?;
        for s in &self.sequences {
            io::write_sequence(&dir.join(format!("{}.skel", s.id)), &s.x)?;
            io::write_labels(&dir.join(format!("{}.csv", s.id)), &s.labels)?;
        }
        Ok(())
    }
}

pub fn read_actions(path: &Path) -> Result<Vec<String>> {
    let map: BTreeMap<String, String> = serde_json::from_str(&io::read_text(path)?)?;
    let mut by_id: Vec<(usize, String)> = map
        .into_iter()
        .map(|(k, v)| {
            k.parse::<usize>()
                .map(|i| (i, v))
                .map_err(|_| Error::invalid(format!("{}: class id {k:?} is not an integer", path.display())))
        })
        .collect::<Result<_>>()?;
    by_id.sort();
    for (expect, (i, _)) in by_id.iter().enumerate() {
        if *i != expect {
            return Err(Error::invalid(format!(
                "{}: class ids must be 0..{}, missing {expect}",
                path.display(),
                by_id.len()
            )));
        }
    }
    Ok(by_id.into_iter().map(|(_, v)| v).collect())
}

pub fn write_actions(path: &Path, actions: &[String]) -> Result<()> {
    let map: serde_json::Map<String, serde_json::Value> = actions
        .iter()
        .enumerate()
        .map(|(i, a)| (i.to_string(), serde_json::Value::String(a.clone())))
        .collect();
    io::write_text(path, &serde_json::to_string_pretty(&map)?)
}

/// Turn raw `A x T x V` joint coordinates into `2A x T x V` features: the
/// first `A` channels are positions relative to `root` in the same frame,
/// the next `A` are frame-to-frame displacements (zero in frame 0).
pub fn preprocess(raw: &Tensor, root: usize) -> Result<Tensor> {
    let [a, t, v] = raw.shape()[..] else {
        return Err(Error::invalid(format!("raw positions must be A x T x V, got {:?}", raw.shape())));
    };
    if root >= v {
        return Err(Error::invalid(format!("root joint {root} out of range for {v} joints")));
    }
    if !raw.all_finite() {
        return Err(Error::NonFinite("raw joint positions".into()));
    }
    let p = raw.data();
    let at = |c: usize, ti: usize, j: usize| p[(c * t + ti) * v + j];
    Ok(Tensor::from_fn([2 * a, t, v], |k| {
        let (c, r) = (k / (t * v), k % (t * v));
        let (ti, j) = (r / v, r % v);
        if c < a {
            at(c, ti, j) - at(c, ti, root)
        } else if ti == 0 {
            0.0
        } else {
            at(c - a, ti, j) - at(c - a, ti - 1, j)
        }
    }))
}
