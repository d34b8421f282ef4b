//! Finite-difference checks for every loss and layer on tiny shapes
//! (C = 8, T = 8, V = 4, Q = 3). Each function returns the worst relative
//! error over the input and every trainable parameter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trg_core::model::{ModelConfig, TrgNet};
use trg_core::nn::{Ctx, Mode, ParamStore};
use trg_core::refine::{BoundaryStage, ClassStage, DilatedResidual};
use trg_core::spatial::{AdaptiveGraphs, MultiScaleGcn, SkeletonTopology, TextAdaptiveGcn};
use trg_core::supervision::{
    absolute_loss, boundary_bce, cross_entropy, gs_tmse, relative_loss, total_loss, LossInputs, LossWeights,
};
use trg_core::tensor::{finite_diff_check, Tape, Tensor, Var};
use trg_core::temporal::{Fusion, LinearAttention, SpatialMerge, TemporalDims, TemporalStack};
use trg_core::Result;

use super::{all_params_check, probe, random, random_probs};

pub const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

const C: usize = 8;
const T: usize = 8;
const V: usize = 4;
const Q: usize = 3;
const LABELS: [usize; T] = [0, 0, 1, 1, 1, 2, 2, 0];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn worst(errs: impl IntoIterator<Item = f64>) -> f64 {
    errs.into_iter().fold(0.0, f64::max)
}

/// Input check plus every parameter, for a layer `f(ctx, x)`.
fn layer_check<F>(store: &ParamStore, x: &Tensor, f: F) -> f64
where
    F: for<'t, 's> Fn(&Ctx<'t, 's>, Var<'t>) -> Result<Var<'t>>,
{
    let input = finite_diff_check(
        |tape: &Tape, xv| {
            let ctx = Ctx::new(tape, store, Mode::Train);
            f(&ctx, xv)
        },
        x,
        EPS,
    )
    .unwrap();
    let params = all_params_check(store, EPS, |ctx| f(ctx, ctx.constant(x.clone())));
    worst(std::iter::once(input).chain(params.into_iter().map(|(_, e)| e)))
}

fn loss_check<F>(x: &Tensor, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    finite_diff_check(f, x, EPS).unwrap()
}

pub fn cross_entropy_grad() -> f64 {
    let p = random_probs(Q, T, &mut rng(1));
    loss_check(&p, |_, x| cross_entropy(x, &LABELS))
}

pub fn gs_tmse_grad() -> f64 {
    let p = random_probs(Q, T, &mut rng(2));
    let free = loss_check(&p, |_, x| gs_tmse(x, 1.0, 4.0));
    // small tau puts most terms on the clamp
    let clamped = loss_check(&p, |_, x| gs_tmse(x, 1.0, 0.3));
    free.max(clamped)
}

pub fn boundary_bce_grad() -> f64 {
    let mut r = rng(3);
    let b = Tensor::from_fn([1, T], |_| rand::Rng::random_range(&mut r, 0.05..0.95));
    let targets = [0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
    loss_check(&b, |_, x| boundary_bce(x, &targets))
}

pub fn absolute_grad() -> f64 {
    let classes = [0, 1, 2, 0];
    let af = random(&[C, 4], &mut rng(4));
    let ae = random(&[C, 4], &mut rng(5));
    loss_check(&af, |_, x| absolute_loss(x, &ae, &classes))
}

pub fn relative_grad() -> f64 {
    let classes = [0, 1, 2, 0];
    let af = random(&[C, 4], &mut rng(6));
    let g = Tensor::new([Q, Q], vec![1.0, 0.4, 0.1, 0.4, 1.0, 0.7, 0.1, 0.7, 1.0]).unwrap();
    loss_check(&af, |_, x| relative_loss(x, &classes, &g))
}

/// The combined objective with two class stages, two boundary stages and a
/// representation, all sliced out of one input so every path is checked.
pub fn total_grad() -> f64 {
    let ct = 5;
    let x = random(&[2 * Q + 2 + ct, T], &mut rng(7));
    let ae = random(&[Q, ct], &mut rng(8));
    let g = Tensor::new([Q, Q], vec![1.0, 0.3, 0.2, 0.3, 1.0, 0.6, 0.2, 0.6, 1.0]).unwrap();
    let targets = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0];
    let w = LossWeights::default();
    loss_check(&x, |_, x| {
        let c0 = x.narrow(0, 0, Q)?.softmax(0)?;
        let c1 = x.narrow(0, Q, Q)?.softmax(0)?;
        let b0 = x.narrow(0, 2 * Q, 1)?.sigmoid();
        let b1 = x.narrow(0, 2 * Q + 1, 1)?.sigmoid();
        let rep = x.narrow(0, 2 * Q + 2, ct)?;
        let parts = total_loss(
            &LossInputs {
                class_stages: &[c0, c1],
                boundary_stages: &[b0, b1],
                representation: Some(rep),
                labels: &LABELS,
                boundary_targets: &targets,
                action_embeddings: &ae,
                action_graph: &g,
            },
            &w,
        )?;
        Ok(parts.total)
    })
}

pub fn multiscale_gcn_grad() -> f64 {
    let mut r = rng(10);
    let mut store = ParamStore::new();
    let topo = SkeletonTopology::chain(V);
    let gcn = MultiScaleGcn::new(&mut store, "gcn", &topo, 3, 6, C, &mut r);
    // nonzero learned offsets so that path is exercised
    let off = random(&[V, 3 * V], &mut r);
    *store.get_mut("gcn.offset").unwrap() = off.map(|v| 0.1 * v);
    let x = random(&[6, T, V], &mut r);
    layer_check(&store, &x, |ctx, x| probe(gcn.forward(ctx, x)?, 11))
}

pub fn adaptive_graphs_grad() -> f64 {
    let mut r = rng(12);
    let mut store = ParamStore::new();
    let ag = AdaptiveGraphs::new(&mut store, "ag", C, 4, &mut r);
    let x = random(&[C, T, V], &mut r);
    layer_check(&store, &x, |ctx, x| {
        let (gm, gn) = ag.forward(ctx, x)?;
        Ok(probe(gm, 13)?.add(&probe(gn, 14)?)?)
    })
}

pub fn text_adaptive_grad() -> f64 {
    let mut r = rng(15);
    let mut store = ParamStore::new();
    let layer = TextAdaptiveGcn::new(&mut store, "ta", C, 4, &mut r).unwrap();
    let x = random(&[C, T, V], &mut r);
    let gj = Tensor::from_fn([V, V], |k| if k / V == k % V { 1.0 } else { 0.3 + 0.1 * ((k / V + k % V) as f64) });
    layer_check(&store, &x, |ctx, x| probe(layer.forward(ctx, x, &gj)?, 16))
}

pub fn spatial_merge_grad() -> f64 {
    let mut r = rng(17);
    let mut store = ParamStore::new();
    let m = SpatialMerge::new(&mut store, "m", C, 2, V, &mut r);
    let x = random(&[C, T, V], &mut r);
    layer_check(&store, &x, |ctx, x| probe(m.forward(ctx, x)?, 18))
}

pub fn linear_attention_grad() -> f64 {
    let mut r = rng(19);
    let mut store = ParamStore::new();
    let att = LinearAttention::new(&mut store, "att", C, 2, 4, &mut r);
    let x = random(&[C, T], &mut r);
    let src = random(&[C, T], &mut r);
    let self_att = layer_check(&store, &x, |ctx, x| probe(att.forward(ctx, x, x)?, 20));
    let cross = layer_check(&store, &x, |ctx, x| {
        probe(att.forward(ctx, x, ctx.constant(src.clone()))?, 21)
    });
    self_att.max(cross)
}

pub fn fusion_grad() -> f64 {
    let mut r = rng(22);
    let mut store = ParamStore::new();
    let f = Fusion::new(&mut store, "f", C, &mut r);
    let x = random(&[2 * C, T], &mut r);
    layer_check(&store, &x, |ctx, x| {
        let s = x.narrow(0, 0, C)?;
        let p = x.narrow(0, C, C)?;
        probe(f.forward(ctx, s, p)?, 23)
    })
}

pub fn temporal_stack_grad() -> f64 {
    let mut r = rng(24);
    let mut store = ParamStore::new();
    let dims = TemporalDims {
        channels: C,
        merge_channels: 2,
        joints: V,
        heads: 2,
        head_dim: 4,
        layers: 2,
    };
    let stack = TemporalStack::new(&mut store, "ts", &dims, &mut r);
    let x = random(&[C, T, V], &mut r);
    layer_check(&store, &x, |ctx, x| probe(stack.forward(ctx, x)?, 25))
}

pub fn class_stage_grad() -> f64 {
    let mut r = rng(26);
    let mut store = ParamStore::new();
    let stage = ClassStage::new(&mut store, "cs", Q, C, 2, 2, 4, &mut r);
    let probs = random_probs(Q, T, &mut r);
    let feats = random(&[C, T], &mut r);
    let x = Tensor::from_fn([Q + C, T], |k| {
        let (row, t) = (k / T, k % T);
        if row < Q {
            probs.get(&[row, t])
        } else {
            feats.get(&[row - Q, t])
        }
    });
    layer_check(&store, &x, |ctx, x| {
        let (h, p) = stage.forward(ctx, x.narrow(0, 0, Q)?, x.narrow(0, Q, C)?)?;
        Ok(probe(h, 27)?.add(&probe(p, 28)?)?)
    })
}

pub fn dilated_residual_grad() -> f64 {
    let mut r = rng(29);
    let mut store = ParamStore::new();
    let layer = DilatedResidual::new(&mut store, "dr", C, 2, &mut r);
    let x = random(&[C, T], &mut r);
    layer_check(&store, &x, |ctx, x| probe(layer.forward(ctx, x)?, 30))
}

pub fn boundary_stage_grad() -> f64 {
    let mut r = rng(31);
    let mut store = ParamStore::new();
    let stage = BoundaryStage::new(&mut store, "bs", C, 3, &mut r);
    let x = Tensor::from_fn([1, T], |k| 0.1 + 0.1 * k as f64);
    layer_check(&store, &x, |ctx, x| probe(stage.forward(ctx, x)?, 32))
}

/// Whole network plus the full objective on a 4-joint, 8-frame, 3-class toy.
pub fn end_to_end_grad() -> f64 {
    let topo = SkeletonTopology::chain(V);
    let cfg = ModelConfig {
        in_channels: 6,
        channels: C,
        graph_channels: 4,
        merge_channels: 2,
        heads: 2,
        head_dim: 4,
        text_dim: 5,
        layers: 2,
        scales: Some(2),
        class_stages: 1,
        boundary_stages: 1,
        refine_layers: 2,
        dropout: 0.0,
    };
    let mut store = ParamStore::new();
    let net = TrgNet::new(&cfg, &topo, Q, &mut store, 33).unwrap();
    let mut r = rng(34);
    let x = random(&[6, T, V], &mut r);
    let gj = Tensor::from_fn([V, V], |k| if k / V == k % V { 1.0 } else { 0.5 });
    let ae = random(&[Q, 5], &mut r);
    let g = Tensor::new([Q, Q], vec![1.0, 0.3, 0.2, 0.3, 1.0, 0.6, 0.2, 0.6, 1.0]).unwrap();
    let targets = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0];
    let w = LossWeights::default();
    layer_check(&store, &x, |ctx, x| {
        let out = net.forward(ctx, x, &gj)?;
        let parts = total_loss(
            &LossInputs {
                class_stages: &out.class_stages,
                boundary_stages: &out.boundary_stages,
                representation: Some(out.representation),
                labels: &LABELS,
                boundary_targets: &targets,
                action_embeddings: &ae,
                action_graph: &g,
            },
            &w,
        )?;
        Ok(parts.total)
    })
}

pub type Case = (&'static str, fn() -> f64);

pub const CASES: [Case; 17] = [
    ("loss/ce", cross_entropy_grad),
    ("loss/gs_tmse", gs_tmse_grad),
    ("loss/boundary_bce", boundary_bce_grad),
    ("loss/absolute", absolute_grad),
    ("loss/relative", relative_grad),
    ("loss/total", total_grad),
    ("layer/multiscale_gcn", multiscale_gcn_grad),
    ("layer/adaptive_graphs", adaptive_graphs_grad),
    ("layer/text_adaptive_gcn", text_adaptive_grad),
    ("layer/spatial_merge", spatial_merge_grad),
    ("layer/linear_attention", linear_attention_grad),
    ("layer/fusion", fusion_grad),
    ("layer/temporal_stack", temporal_stack_grad),
    ("layer/class_refinement", class_stage_grad),
    ("layer/dilated_residual", dilated_residual_grad),
    ("layer/boundary_refinement", boundary_stage_grad),
    ("model/end_to_end", end_to_end_grad),
];
