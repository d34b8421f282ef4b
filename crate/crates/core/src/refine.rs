//! Refinement stages for class and boundary predictions, and the
//! boundary-guided relabelling used at inference.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamStore};
use crate::temporal::LinearAttention;
use crate::tensor::Var;

/// Cross-attention refinement of class probabilities. Queries and keys come
/// from the stage's running features; values come from the previous stage's
/// final features.
#[derive(Debug, Clone)]
pub struct ClassStage {
    lift: Linear,
    layers: Vec<LinearAttention>,
    head: Linear,
}

impl ClassStage {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        classes: usize,
        channels: usize,
        layers: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        ClassStage {
            lift: Linear::new(store, &format!("{name}.lift"), classes, channels, rng),
            layers: (0..layers)
                .map(|i| LinearAttention::new(store, &format!("{name}.{i}"), channels, heads, head_dim, rng))
                .collect(),
            head: Linear::new(store, &format!("{name}.head"), channels, classes, rng),
        }
    }

    /// Returns the stage's final features and its `Q x T` probabilities.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t, '_>,
        prev_probs: Var<'t>,
        prev_features: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let mut x = self.lift.forward(ctx, prev_probs)?;
        for layer in &self.layers {
            x = ctx.dropout(layer.forward(ctx, x, prev_features)?)?;
        }
        let probs = self.head.forward(ctx, x)?.softmax(0)?;
        Ok((x, probs))
    }
}

/// `x + Dropout(W_2 ReLU(dilated_conv(x)))`, kernel 3.
#[derive(Debug, Clone)]
pub struct DilatedResidual {
    conv: Linear,
    point: Linear,
    pub dilation: usize,
}

impl DilatedResidual {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, dilation: usize, rng: &mut impl Rng) -> Self {
        DilatedResidual {
            conv: Linear::new(store, &format!("{name}.conv"), channels * 3, channels, rng),
            point: Linear::new(store, &format!("{name}.point"), channels, channels, rng),
            dilation,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.conv.forward(ctx, x.temporal_unfold(3, self.dilation)?)?.relu();
        let h = ctx.dropout(self.point.forward(ctx, h)?)?;
        Ok(x.add(&h)?)
    }
}

/// Dilated temporal convolution refinement of boundary probabilities.
#[derive(Debug, Clone)]
pub struct BoundaryStage {
    lift: Linear,
    layers: Vec<DilatedResidual>,
    head: Linear,
}

impl BoundaryStage {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, layers: usize, rng: &mut impl Rng) -> Self {
        BoundaryStage {
            lift: Linear::new(store, &format!("{name}.lift"), 1, channels, rng),
            layers: (0..layers)
                .map(|i| DilatedResidual::new(store, &format!("{name}.{i}"), channels, 1 << i, rng))
                .collect(),
            head: Linear::new(store, &format!("{name}.head"), channels, 1, rng),
        }
    }

    /// `1 x T` probabilities in, `1 x T` probabilities out.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, prev: Var<'t>) -> Result<Var<'t>> {
        let mut x = self.lift.forward(ctx, prev)?;
        for layer in &self.layers {
            x = layer.forward(ctx, x)?;
        }
        Ok(self.head.forward(ctx, x)?.sigmoid())
    }
}

/// Frames `t >= 1` that are above `threshold` and the maximum of the window
/// `t-radius..=t+radius`; on ties the earlier frame wins.
pub fn detect_boundaries(b: &[f64], threshold: f64, radius: usize) -> Vec<usize> {
    let n = b.len();
    (1..n)
        .filter(|&t| {
            b[t] > threshold
                && (t.saturating_sub(radius)..t).all(|s| b[t] > b[s])
                && (t + 1..(t + radius + 1).min(n)).all(|s| b[t] >= b[s])
        })
        .collect()
}

pub const BOUNDARY_WINDOW: usize = 2;

/// Split at detected boundaries and give every frame of a segment the class
/// with the highest mean probability over that segment. `probs` is `Q x T`
/// row-major.
pub fn boundary_guided_relabel(
    probs: &[f64],
    classes: usize,
    boundary: &[f64],
    threshold: f64,
) -> Result<Vec<usize>> {
    let t = boundary.len();
    if probs.len() != classes * t {
        return Err(Error::invalid(format!(
            "{} class probabilities for {classes} classes x {t} frames",
            probs.len()
        )));
    }
    let mut cuts = detect_boundaries(boundary, threshold, BOUNDARY_WINDOW);
    cuts.insert(0, 0);
    cuts.push(t);
    let mut labels = vec![0; t];
    for w in cuts.windows(2) {
        let (s, e) = (w[0], w[1]);
        let mut best = (0, f64::NEG_INFINITY);
        for q in 0..classes {
            let m = probs[q * t + s..q * t + e].iter().sum::<f64>() / (e - s) as f64;
            if m > best.1 {
                best = (q, m);
            }
        }
        labels[s..e].fill(best.0);
    }
    Ok(labels)
}

/// 1.0 at the first frame of every new segment, widened by `radius` frames
/// on both sides.
pub fn boundary_targets(labels: &[usize], radius: usize) -> Vec<f64> {
    let n = labels.len();
    let mut out = vec![0.0; n];
    for t in 1..n {
        if labels[t] != labels[t - 1] {
            let lo = t.saturating_sub(radius);
            let hi = (t + radius + 1).min(n);
            out[lo..hi].fill(1.0);
        }
    }
    out
}

/// Per-frame argmax over a `Q x T` row-major probability matrix.
pub fn argmax_labels(probs: &[f64], classes: usize) -> Vec<usize> {
    let t = probs.len() / classes.max(1);
    (0..t)
        .map(|ti| {
            let mut best = 0;
            for q in 1..classes {
                if probs[q * t + ti] > probs[best * t + ti] {
                    best = q;
                }
            }
            best
        })
        .collect()
}
