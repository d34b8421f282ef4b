use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::model::ModelConfig;
use crate::supervision::LossWeights;
use crate::textgraph::GraphConfig;

use super::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Apply occlusion/rotation augmentation during training.
    pub augment: bool,
    /// Frames on either side of a label change marked as boundary.
    pub boundary_radius: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 8,
            epochs: 300,
            seed: 0,
            augment: true,
            boundary_radius: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub boundary_threshold: f64,
    /// Relabel segments between detected boundaries; plain per-frame argmax
    /// otherwise.
    pub relabel: bool,
    /// Class excluded from segment matching.
    pub ignore_class: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            boundary_threshold: 0.5,
            relabel: true,
            ignore_class: None,
        }
    }
}

/// Everything a training or evaluation run needs. Relative paths are
/// resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train_dir: PathBuf,
    pub test_dir: Option<PathBuf>,
    pub topology: PathBuf,
    pub joint_embeddings: PathBuf,
    pub action_embeddings: PathBuf,
    pub output_dir: PathBuf,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_dir: "data/train".into(),
            test_dir: None,
            topology: "fixtures/topology/pku25.json".into(),
            joint_embeddings: "fixtures/embeddings/pku_joints.trge".into(),
            action_embeddings: "fixtures/embeddings/pku_actions.trge".into(),
            output_dir: "runs/default".into(),
            graph: GraphConfig::default(),
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_json(&io::read_text(path)?)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    /// Prefix every relative path with `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train_dir);
        if let Some(t) = &mut self.test_dir {
            fix(t);
        }
        fix(&mut self.topology);
        fix(&mut self.joint_embeddings);
        fix(&mut self.action_embeddings);
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.augment.validate()?;
        self.synth.validate()?;
        let t = &self.train;
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("train.learning_rate {} is invalid", t.learning_rate)));
        }
        if t.batch_size == 0 {
            return Err(Error::invalid("train.batch_size must be positive"));
        }
        let th = self.eval.boundary_threshold;
        if !(th > 0.0 && th < 1.0) {
            return Err(Error::invalid(format!("eval.boundary_threshold {th} outside (0, 1)")));
        }
        if !(self.loss.sigma > 0.0) || !(self.loss.tau > 0.0) {
            return Err(Error::invalid("loss.sigma and loss.tau must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"model": {"channels": 16, "graph_channels": 4}}"#).unwrap();
        assert_eq!(cfg.model.channels, 16);
        assert_eq!(cfg.model.layers, 10);
        assert_eq!(cfg.train.batch_size, 8);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(r#"{"modle": {}}"#).is_err());
    }

    #[test]
    fn relative_paths_resolved() {
        let mut cfg = RunConfig::default();
        cfg.resolve_paths(Path::new("/base"));
        assert_eq!(cfg.train_dir, Path::new("/base/data/train"));
    }
}
