//! The full network: spatial block, temporal backbone, prediction heads,
//! refinement stages and the text-space projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamStore};
use crate::refine::{BoundaryStage, ClassStage};
use crate::spatial::{MultiScaleGcn, SkeletonTopology, SpatialBlock, TextAdaptiveGcn};
use crate::temporal::{TemporalDims, TemporalStack};
use crate::tensor::{Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input channels per joint.
    pub in_channels: usize,
    pub channels: usize,
    /// Adaptive graph groups.
    pub graph_channels: usize,
    /// Per-joint width inside the spatial merge.
    pub merge_channels: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Width of the text embedding space.
    pub text_dim: usize,
    pub layers: usize,
    /// Hop scales of the multi-scale GCN; `None` picks 13 for 25-joint
    /// skeletons and `diameter + 1` otherwise.
    pub scales: Option<usize>,
    pub class_stages: usize,
    pub boundary_stages: usize,
    pub refine_layers: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 6,
            channels: 64,
            graph_channels: 16,
            merge_channels: 8,
            heads: 4,
            head_dim: 16,
            text_dim: 768,
            layers: 10,
            scales: None,
            class_stages: 1,
            boundary_stages: 2,
            refine_layers: 10,
            dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn scales_for(&self, topology: &SkeletonTopology) -> usize {
        self.scales.unwrap_or(if topology.num_joints() == 25 {
            13
        } else {
            topology.diameter() + 1
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("channels", self.channels),
            ("graph_channels", self.graph_channels),
            ("merge_channels", self.merge_channels),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("text_dim", self.text_dim),
            ("layers", self.layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model.{name} must be positive")));
        }
        if self.channels % self.graph_channels != 0 {
            return Err(Error::invalid(format!(
                "model.channels {} is not a multiple of graph_channels {}",
                self.channels, self.graph_channels
            )));
        }
        if self.scales == Some(0) {
            return Err(Error::invalid("model.scales must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("model.dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Per-stage predictions and the features the losses need.
pub struct Outputs<'t> {
    /// `Q x T` probabilities: backbone first, then each refinement stage.
    pub class_stages: Vec<Var<'t>>,
    /// `1 x T` probabilities in the same order.
    pub boundary_stages: Vec<Var<'t>>,
    /// Backbone output, `C x T`.
    pub features: Var<'t>,
    /// Backbone output projected to the text space, `Ct x T`.
    pub representation: Var<'t>,
}

#[derive(Debug, Clone)]
pub struct TrgNet {
    pub config: ModelConfig,
    pub classes: usize,
    pub joints: usize,
    spatial: SpatialBlock,
    temporal: TemporalStack,
    class_head: Linear,
    boundary_head: Linear,
    class_refiners: Vec<ClassStage>,
    boundary_refiners: Vec<BoundaryStage>,
    projection: Linear,
}

impl TrgNet {
    /// Build the network and register freshly initialised weights in
    /// `store`. Initialisation depends only on `seed`.
    pub fn new(
        config: &ModelConfig,
        topology: &SkeletonTopology,
        classes: usize,
        store: &mut ParamStore,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
        }
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let v = topology.num_joints();
        let scales = config.scales_for(topology);
        let spatial = SpatialBlock {
            gcn: MultiScaleGcn::new(store, "spatial.gcn", topology, scales, config.in_channels, c, rng),
            adaptive: TextAdaptiveGcn::new(store, "spatial.adaptive", c, config.graph_channels, rng)?,
        };
        let dims = TemporalDims {
            channels: c,
            merge_channels: config.merge_channels,
            joints: v,
            heads: config.heads,
            head_dim: config.head_dim,
            layers: config.layers,
        };
        let temporal = TemporalStack::new(store, "temporal", &dims, rng);
        let class_head = Linear::new(store, "head.class", c, classes, rng);
        let boundary_head = Linear::new(store, "head.boundary", c, 1, rng);
        let class_refiners = (0..config.class_stages)
            .map(|s| {
                ClassStage::new(
                    store,
                    &format!("refine.class.{s}"),
                    classes,
                    c,
                    config.refine_layers,
                    config.heads,
                    config.head_dim,
                    rng,
                )
            })
            .collect();
        let boundary_refiners = (0..config.boundary_stages)
            .map(|s| BoundaryStage::new(store, &format!("refine.boundary.{s}"), c, config.refine_layers, rng))
            .collect();
        let projection = Linear::new(store, "projection", c, config.text_dim, rng);
        Ok(TrgNet {
            config: config.clone(),
            classes,
            joints: v,
            spatial,
            temporal,
            class_head,
            boundary_head,
            class_refiners,
            boundary_refiners,
            projection,
        })
    }

    /// Forward pass over one `C0 x T x V` sequence.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>, joint_graph: &Tensor) -> Result<Outputs<'t>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[0] != self.config.in_channels || shape[2] != self.joints {
            return Err(Error::invalid(format!(
                "input {shape:?} does not match a model for {} channels and {} joints",
                self.config.in_channels, self.joints
            )));
        }
        let fs = self.spatial.forward(ctx, x, joint_graph)?;
        let features = self.temporal.forward(ctx, fs)?;
        let mut class_stages = vec![self.class_head.forward(ctx, features)?.softmax(0)?];
        let mut boundary_stages = vec![self.boundary_head.forward(ctx, features)?.sigmoid()];

        let mut prev_features = features;
        for stage in &self.class_refiners {
            let prev = *class_stages.last().expect("backbone stage");
            let (f, p) = stage.forward(ctx, prev, prev_features)?;
            prev_features = f;
            class_stages.push(p);
        }
        for stage in &self.boundary_refiners {
            let prev = *boundary_stages.last().expect("backbone stage");
            boundary_stages.push(stage.forward(ctx, prev)?);
        }
        let representation = self.projection.forward(ctx, features)?;
        Ok(Outputs {
            class_stages,
            boundary_stages,
            features,
            representation,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::tensor::Tape;

    fn tiny() -> ModelConfig {
        ModelConfig {
            in_channels: 3,
            channels: 8,
            graph_channels: 2,
            merge_channels: 2,
            heads: 2,
            head_dim: 4,
            text_dim: 5,
            layers: 2,
            scales: None,
            class_stages: 1,
            boundary_stages: 2,
            refine_layers: 2,
            dropout: 0.5,
        }
    }

    #[test]
    fn output_shapes_and_normalisation() {
        let topo = SkeletonTopology::chain(4);
        let mut store = ParamStore::new();
        let net = TrgNet::new(&tiny(), &topo, 3, &mut store, 7).unwrap();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, Mode::Eval);
        let x = tape.constant(Tensor::from_fn([3, 10, 4], |i| (i as f64 * 0.37).sin()));
        let out = net.forward(&ctx, x, &Tensor::eye(4)).unwrap();
        assert_eq!(out.class_stages.len(), 2);
        assert_eq!(out.boundary_stages.len(), 3);
        assert_eq!(out.representation.shape(), vec![5, 10]);
        for p in &out.class_stages {
            let p = p.value();
            assert_eq!(p.shape(), &[3, 10]);
            for t in 0..10 {
                let s: f64 = (0..3).map(|q| p.get(&[q, t])).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        for b in &out.boundary_stages {
            assert!(b.value().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let topo = SkeletonTopology::chain(4);
        let (mut a, mut b) = (ParamStore::new(), ParamStore::new());
        TrgNet::new(&tiny(), &topo, 3, &mut a, 1).unwrap();
        TrgNet::new(&tiny(), &topo, 3, &mut b, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_joint_count_rejected() {
        let topo = SkeletonTopology::chain(4);
        let mut store = ParamStore::new();
        let net = TrgNet::new(&tiny(), &topo, 3, &mut store, 7).unwrap();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, Mode::Eval);
        let x = tape.constant(Tensor::zeros([3, 10, 5]));
        assert!(net.forward(&ctx, x, &Tensor::eye(5)).is_err());
    }
}
