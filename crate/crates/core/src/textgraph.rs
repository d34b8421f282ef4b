//! Relational graphs over joint or action text embeddings.
//!
//! A graph entry is the pairwise distance between two embeddings, mapped
//! through an inverse min-max normalisation so the closest pair scores 1 and
//! the farthest scores 0. Graphs are computed once and never trained.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;

/// Per-label text embeddings, one row per label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    labels: Vec<String>,
    matrix: Tensor,
}

impl LabeledEmbeddings {
    pub fn new(labels: Vec<String>, matrix: Tensor) -> Result<Self> {
        let [rows, cols] = matrix.shape()[..] else {
            return Err(Error::invalid(format!(
                "embedding matrix must be 2-D, got {:?}",
                matrix.shape()
            )));
        };
        if labels.len() != rows {
            return Err(Error::LabelMismatch {
                labels: labels.len(),
                rows,
            });
        }
        let mut seen = HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::invalid(format!("duplicate label {dup:?}")));
        }
        if !matrix.all_finite() {
            return Err(Error::NonFinite("embedding matrix".into()));
        }
        for (r, label) in labels.iter().enumerate() {
            if matrix.data()[r * cols..(r + 1) * cols].iter().all(|&v| v == 0.0) {
                return Err(Error::invalid(format!("all-zero embedding row for {label:?}")));
            }
        }
        Ok(LabeledEmbeddings { labels, matrix })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// `n x d` matrix, one row per label.
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.matrix.data()[i * d..(i + 1) * d]
    }
}

/// Read a TRGE embedding file and its `.labels.json` sidecar.
pub fn load_embedding_file(path: impl AsRef<Path>) -> Result<LabeledEmbeddings> {
    io::read_embeddings(path.as_ref())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    L2,
    L1,
    /// `1 - cos(a, b)`
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphNormalization {
    /// `1 - (d - min) / (max - min)`
    #[default]
    MinMax,
    /// `(mean - d) / std`
    ZScore,
    /// `2 * (1 - sigmoid(d))`
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphConfig {
    #[serde(default)]
    pub metric: DistanceMetric,
    #[serde(default)]
    pub normalization: GraphNormalization,
}

/// Square similarity matrix over a label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationalGraph {
    labels: Vec<String>,
    matrix: Vec<Vec<f64>>,
}

impl RelationalGraph {
    pub fn from_tensor(labels: Vec<String>, m: &Tensor) -> Result<Self> {
        let n = labels.len();
        if m.shape() != [n, n] {
            return Err(Error::invalid(format!(
                "graph of {n} labels needs a {n}x{n} matrix, got {:?}",
                m.shape()
            )));
        }
        let matrix = m.data().chunks(n.max(1)).map(<[f64]>::to_vec).collect();
        Ok(RelationalGraph { labels, matrix })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i][j]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn to_tensor(&self) -> Tensor {
        let n = self.len();
        Tensor::new([n, n], self.matrix.iter().flatten().copied().collect())
            .expect("square graph")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: RelationalGraph = serde_json::from_str(s)?;
        let n = g.labels.len();
        if g.matrix.len() != n || g.matrix.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("graph matrix is not square over its labels"));
        }
        Ok(g)
    }
}

fn check_rows(e: &Tensor) -> Result<(usize, usize)> {
    match e.shape()[..] {
        [n, d] if n >= 2 && d >= 1 => Ok((n, d)),
        [n, _] if n < 2 => Err(Error::Degenerate(format!(
            "pairwise distances need at least 2 rows, got {n}"
        ))),
        _ => Err(Error::invalid(format!("expected an n x d matrix, got {:?}", e.shape()))),
    }
}

/// `D[i][j] = ||row_i - row_j||_2`.
pub fn pairwise_l2(e: &Tensor) -> Result<Tensor> {
    pairwise_distance(e, DistanceMetric::L2)
}

pub fn pairwise_distance(e: &Tensor, metric: DistanceMetric) -> Result<Tensor> {
    let (n, d) = check_rows(e)?;
    let rows: Vec<&[f64]> = e.data().chunks(d).collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut out = Tensor::zeros([n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (rows[i], rows[j]);
            let v = match metric {
                DistanceMetric::L2 => a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
                DistanceMetric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
                DistanceMetric::Cosine => {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let denom = norms[i] * norms[j];
                    if denom == 0.0 {
                        1.0
                    } else {
                        1.0 - dot / denom
                    }
                }
            };
            out.set(&[i, j], v);
            out.set(&[j, i], v);
        }
    }
    Ok(out)
}

/// `1 - (D - min) / (max - min)`. A constant matrix maps to all ones.
pub fn inverse_minmax(d: &Tensor) -> Tensor {
    let (lo, hi) = d
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 0.0) {
        return Tensor::ones(d.shape().to_vec());
    }
    d.map(|v| 1.0 - (v - lo) / span)
}

pub fn inverse_normalize(d: &Tensor, norm: GraphNormalization) -> Tensor {
    match norm {
        GraphNormalization::MinMax => inverse_minmax(d),
        GraphNormalization::ZScore => {
            let n = d.numel() as f64;
            let mean = d.data().iter().sum::<f64>() / n;
            let std = (d.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            if !(std > 0.0) {
                return Tensor::ones(d.shape().to_vec());
            }
            d.map(|v| (mean - v) / std)
        }
        GraphNormalization::Sigmoid => d.map(|v| 2.0 * (1.0 - crate::tensor::sigmoid(v))),
    }
}

/// L2 distances followed by inverse min-max normalisation.
pub fn build_relational_graph(e: &LabeledEmbeddings) -> Result<RelationalGraph> {
    build_relational_graph_with(e, GraphConfig::default())
}

pub fn build_relational_graph_with(
    e: &LabeledEmbeddings,
    config: GraphConfig,
) -> Result<RelationalGraph> {
    let d = pairwise_distance(e.matrix(), config.metric)?;
    let g = inverse_normalize(&d, config.normalization);
    RelationalGraph::from_tensor(e.labels.clone(), &g)
}
