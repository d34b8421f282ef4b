//! Training losses: frame classification with a smoothing term, boundary
//! cross-entropy, and the absolute/relative inter-class supervision that
//! aligns pooled segment features with action text embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Added inside every logarithm.
pub const LOG_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Maximal runs of equal labels; they tile `0..T` in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSet {
    segments: Vec<Segment>,
    frames: usize,
}

impl SegmentSet {
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut segments = Vec::new();
        let mut start = 0;
        for t in 1..=labels.len() {
            if t == labels.len() || labels[t] != labels[start] {
                segments.push(Segment {
                    start,
                    end: t,
                    class: labels[start],
                });
                start = t;
            }
        }
        SegmentSet {
            segments,
            frames: labels.len(),
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.class).collect()
    }
}

/// Mean of `features` (`D x T`) over each segment: `D x N`.
pub fn segment_pool<'t>(features: Var<'t>, segments: &SegmentSet) -> Result<Var<'t>> {
    let t = features.shape()[1];
    if segments.frames() != t {
        return Err(Error::invalid(format!(
            "segments cover {} frames, features have {t}",
            segments.frames()
        )));
    }
    let n = segments.len();
    let mut pool = Tensor::zeros([t, n]);
    for (j, s) in segments.segments().iter().enumerate() {
        if s.is_empty() {
            return Err(Error::invalid(format!("empty segment {j}")));
        }
        for ti in s.start..s.end {
            pool.set(&[ti, j], 1.0 / s.len() as f64);
        }
    }
    Ok(features.matmul(&features.tape().constant(pool))?)
}

/// `(1/N^2) sum U (log U - log W)` with `W` fixed.
fn kl_to_target<'t>(u: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    let n = u.numel() as f64;
    let lw = u.tape().constant(w.map(|x| (x + LOG_EPS).ln()));
    let lu = u.add_scalar(LOG_EPS).log();
    Ok(u.mul(&lu.sub(&lw)?)?.sum().scale(1.0 / n))
}

fn same_class(classes: &[usize]) -> Tensor {
    let n = classes.len();
    Tensor::from_fn([n, n], |k| {
        if classes[k / n] == classes[k % n] {
            1.0
        } else {
            0.0
        }
    })
}

fn unit_columns<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let [d, n] = x.shape()[..] else {
        return Err(Error::invalid("expected a D x N matrix"));
    };
    let norms = x.square().sum_axis(0, true)?;
    if norms.data().contains(&0.0) {
        return Err(Error::Degenerate("zero-norm feature column".into()));
    }
    Ok(x.div(&norms.sqrt().expand([d, n])?)?)
}

/// Contrastive alignment between pooled segment features `af` and the text
/// embeddings `ae` of their classes (both `D x N`). The cosine similarity
/// matrix is softmaxed along rows and along columns and each result is
/// pulled toward the same-class indicator, normalised the same way.
pub fn absolute_loss<'t>(af: Var<'t>, ae: &Tensor, classes: &[usize]) -> Result<Var<'t>> {
    let n = classes.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("absolute loss needs 2 segments, got {n}")));
    }
    if af.shape() != ae.shape() || af.shape()[1] != n {
        return Err(Error::invalid(format!(
            "features {:?}, embeddings {:?}, {n} classes",
            af.shape(),
            ae.shape()
        )));
    }
    let tape = af.tape();
    let f = unit_columns(af)?;
    let e = unit_columns(tape.constant(ae.clone()))?;
    let sim = f.transpose()?.matmul(&e)?;
    let sf = sim.softmax(1)?;
    let se = sim.softmax(0)?;

    let gt = same_class(classes);
    let counts: Vec<f64> = (0..n).map(|i| gt.data()[i * n..(i + 1) * n].iter().sum()).collect();
    let gt_rows = Tensor::from_fn([n, n], |k| gt.data()[k] / counts[k / n]);
    let gt_cols = Tensor::from_fn([n, n], |k| gt.data()[k] / counts[k % n]);
    let l = kl_to_target(sf, &gt_rows)?.add(&kl_to_target(se, &gt_cols)?)?;
    Ok(l.scale(0.5))
}

/// Relational graph over the columns of `af`: pairwise L2 distances mapped
/// by `1 - (d - min) / (max - min)`. All ones when every distance is equal.
pub fn feature_graph<'t>(af: Var<'t>) -> Result<Var<'t>> {
    let d = af.transpose()?.pairwise_l2()?;
    let shape = d.shape();
    let lo = d.min_all()?;
    let hi = d.max_all()?;
    if hi.item() - lo.item() <= 0.0 {
        return Ok(af.tape().constant(Tensor::ones(shape)));
    }
    let num = d.sub(&lo.broadcast_scalar(&shape)?)?;
    let den = hi.sub(&lo)?.broadcast_scalar(&shape)?;
    Ok(num.div(&den)?.neg().add_scalar(1.0))
}

/// Generalised KL between the feature graph of `af` and the action graph
/// entries picked by class: `(1/N^2) sum [U log(U/W) - U + W]`.
pub fn relative_loss<'t>(af: Var<'t>, classes: &[usize], action_graph: &Tensor) -> Result<Var<'t>> {
    let n = classes.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("relative loss needs 2 segments, got {n}")));
    }
    let q = action_graph.shape()[0];
    if let Some(&c) = classes.iter().find(|&&c| c >= q) {
        return Err(Error::invalid(format!("class {c} outside a {q}-class graph")));
    }
    let g = feature_graph(af)?;
    let target = Tensor::from_fn([n, n], |k| action_graph.get(&[classes[k / n], classes[k % n]]));
    let tape = af.tape();
    let lw = tape.constant(target.map(|x| (x + LOG_EPS).ln()));
    let lu = g.add_scalar(LOG_EPS).log();
    let per = g.mul(&lu.sub(&lw)?)?.sub(&g)?.add(&tape.constant(target))?;
    Ok(per.sum().scale(1.0 / (n * n) as f64))
}

fn tmse_weights(p: &[f64], q: usize, t: usize, sigma: f64) -> Vec<f64> {
    (1..t)
        .map(|ti| {
            let d2: f64 = (0..q)
                .map(|c| {
                    let d = p[c * t + ti] - p[c * t + ti - 1];
                    d * d
                })
                .sum();
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Smoothing loss over consecutive frames of `Q x T` probabilities: squared
/// log-ratio clamped at `tau^2`, weighted by `exp(-|p_t - p_{t-1}|^2 / 2 sigma^2)`
/// and averaged over `T * Q`.
pub fn gs_tmse<'t>(probs: Var<'t>, sigma: f64, tau: f64) -> Result<Var<'t>> {
    let [q, t] = probs.shape()[..] else {
        return Err(Error::invalid("expected Q x T probabilities"));
    };
    let tape = probs.tape();
    if t < 2 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let dp = probs.narrow(1, 1, t - 1)?.sub(&probs.narrow(1, 0, t - 1)?)?;
    let w = dp
        .square()
        .sum_axis(0, true)?
        .scale(-1.0 / (2.0 * sigma * sigma))
        .exp()
        .expand([q, t - 1])?;
    let lp = probs.add_scalar(LOG_EPS).log();
    let d = lp.narrow(1, 1, t - 1)?.sub(&lp.narrow(1, 0, t - 1)?)?;
    let terms = d.square().clamp(0.0, tau * tau).mul(&w)?;
    Ok(terms.sum().scale(1.0 / (t * q) as f64))
}

/// The individual weighted terms summed by [`gs_tmse`], `Q x (T-1)`
/// row-major, before the `1/(T Q)` average.
pub fn gs_tmse_terms(probs: &Tensor, sigma: f64, tau: f64) -> Vec<f64> {
    let (q, t) = (probs.shape()[0], probs.shape()[1]);
    let p = probs.data();
    let w = tmse_weights(p, q, t, sigma);
    let mut out = Vec::with_capacity(q * t.saturating_sub(1));
    for c in 0..q {
        for ti in 1..t {
            let d = (p[c * t + ti] + LOG_EPS).ln() - (p[c * t + ti - 1] + LOG_EPS).ln();
            out.push(w[ti - 1] * (d * d).min(tau * tau));
        }
    }
    out
}

/// Mean negative log probability of the true class per frame.
pub fn cross_entropy<'t>(probs: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let [q, t] = probs.shape()[..] else {
        return Err(Error::invalid("expected Q x T probabilities"));
    };
    if labels.len() != t {
        return Err(Error::invalid(format!("{} labels for {t} frames", labels.len())));
    }
    if let Some(&c) = labels.iter().find(|&&c| c >= q) {
        return Err(Error::invalid(format!("label {c} outside {q} classes")));
    }
    let onehot = Tensor::from_fn([q, t], |k| if labels[k % t] == k / t { 1.0 } else { 0.0 });
    let lp = probs.add_scalar(LOG_EPS).log();
    Ok(lp.mul(&probs.tape().constant(onehot))?.sum().scale(-1.0 / t as f64))
}

/// Mean binary cross-entropy of `1 x T` probabilities against targets.
pub fn boundary_bce<'t>(probs: Var<'t>, targets: &[f64]) -> Result<Var<'t>> {
    let t = probs.numel();
    if targets.len() != t {
        return Err(Error::invalid(format!("{} targets for {t} frames", targets.len())));
    }
    let tape = probs.tape();
    let shape = probs.shape();
    let y = tape.constant(Tensor::new(shape.clone(), targets.to_vec())?);
    let y1 = tape.constant(Tensor::new(shape, targets.iter().map(|v| 1.0 - v).collect())?);
    let pos = probs.add_scalar(LOG_EPS).log().mul(&y)?;
    let neg = probs.neg().add_scalar(1.0 + LOG_EPS).log().mul(&y1)?;
    Ok(pos.add(&neg)?.sum().scale(-1.0 / t as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_abs: f64,
    pub lambda_rel: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_abs: 1.0,
            lambda_rel: 1.0,
            sigma: 1.0,
            tau: 4.0,
        }
    }
}

/// Everything the combined loss needs from one sequence.
pub struct LossInputs<'a, 't> {
    pub class_stages: &'a [Var<'t>],
    pub boundary_stages: &'a [Var<'t>],
    /// `Ct x T` projected backbone features; `None` skips the inter-class
    /// terms.
    pub representation: Option<Var<'t>>,
    pub labels: &'a [usize],
    pub boundary_targets: &'a [f64],
    /// `Q x Ct`, one row per class.
    pub action_embeddings: &'a Tensor,
    pub action_graph: &'a Tensor,
}

/// Scalar loss plus its components, each summed over stages.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub ce: f64,
    pub tmse: f64,
    pub bce: f64,
    pub abs: f64,
    pub rel: f64,
}

impl LossParts<'_> {
    pub fn describe(&self) -> String {
        format!(
            "total={} ce={} tmse={} bce={} abs={} rel={}",
            self.total.item(),
            self.ce,
            self.tmse,
            self.bce,
            self.abs,
            self.rel
        )
    }
}

/// `sum_stages (ce + gs_tmse) + sum_stages bce + lambda_abs abs + lambda_rel rel`.
pub fn total_loss<'t>(inp: &LossInputs<'_, 't>, w: &LossWeights) -> Result<LossParts<'t>> {
    let first = inp
        .class_stages
        .first()
        .ok_or_else(|| Error::invalid("no class stages"))?;
    let tape = first.tape();
    let mut total = tape.constant(Tensor::scalar(0.0));
    let (mut ce, mut tmse, mut bce, mut abs, mut rel) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &p in inp.class_stages {
        let a = cross_entropy(p, inp.labels)?;
        let b = gs_tmse(p, w.sigma, w.tau)?;
        ce += a.item();
        tmse += b.item();
        total = total.add(&a)?.add(&b)?;
    }
    for &b in inp.boundary_stages {
        let l = boundary_bce(b, inp.boundary_targets)?;
        bce += l.item();
        total = total.add(&l)?;
    }
    if let Some(rep) = inp.representation {
        let segs = SegmentSet::from_labels(inp.labels);
        if segs.len() >= 2 {
            let classes = segs.classes();
            let af = segment_pool(rep, &segs)?;
            let ct = af.shape()[0];
            let emb = inp.action_embeddings;
            if emb.shape().get(1) != Some(&ct) {
                return Err(Error::invalid(format!(
                    "action embeddings {:?} do not match representation width {ct}",
                    emb.shape()
                )));
            }
            let n = classes.len();
            let ae = Tensor::from_fn([ct, n], |k| emb.get(&[classes[k % n], k / n]));
            let a = absolute_loss(af, &ae, &classes)?;
            let r = relative_loss(af, &classes, inp.action_graph)?;
            abs = a.item();
            rel = r.item();
            total = total.add(&a.scale(w.lambda_abs))?.add(&r.scale(w.lambda_rel))?;
        }
    }
    Ok(LossParts {
        total,
        ce,
        tmse,
        bce,
        abs,
        rel,
    })
}
