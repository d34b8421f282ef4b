//! Temporal backbone: per-layer spatial merge, linear attention and
//! spatio-temporal fusion.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamStore};
use crate::tensor::{Tensor, Var};

/// Collapse `C x T x V` spatial features to `C x T`.
#[derive(Debug, Clone)]
pub struct SpatialMerge {
    squeeze: Linear,
    expand: Linear,
    pub joints: usize,
}

impl SpatialMerge {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        merge_channels: usize,
        joints: usize,
        rng: &mut impl Rng,
    ) -> Self {
        SpatialMerge {
            squeeze: Linear::new(store, &format!("{name}.squeeze"), channels, merge_channels, rng),
            expand: Linear::new(store, &format!("{name}.expand"), merge_channels * joints, channels, rng),
            joints,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, fs: Var<'t>) -> Result<Var<'t>> {
        let [_, t, v] = fs.shape()[..] else {
            return Err(Error::invalid(format!("merge input must be C x T x V, got {:?}", fs.shape())));
        };
        if v != self.joints {
            return Err(Error::invalid(format!("merge built for {} joints, got {v}", self.joints)));
        }
        let z = self.squeeze.forward(ctx, fs)?;
        let c2 = z.shape()[0];
        let z = z.permute(&[0, 2, 1])?.reshape([c2 * v, t])?;
        self.expand.forward(ctx, z)
    }
}

/// Multi-head linear attention with sigmoid feature maps:
/// `ReLU(W_t [phi(Q) (phi(K)^T V) / T] + residual)`.
///
/// The `1/T` keeps the sum over frames from growing with sequence length;
/// without it long sequences saturate every downstream softmax.
///
/// Queries and keys come from one feature map and values from another; the
/// two coincide for self-attention.
#[derive(Debug, Clone)]
pub struct LinearAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    pub heads: usize,
    pub head_dim: usize,
}

impl LinearAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let inner = heads * head_dim;
        LinearAttention {
            query: Linear::new(store, &format!("{name}.query"), channels, inner, rng),
            key: Linear::new(store, &format!("{name}.key"), channels, inner, rng),
            value: Linear::new(store, &format!("{name}.value"), channels, inner, rng),
            out: Linear::new(store, &format!("{name}.out"), inner, channels, rng),
            heads,
            head_dim,
        }
    }

    /// Concatenated head outputs, `heads * head_dim x T`, before the output
    /// projection.
    pub fn attend<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>, source: Var<'t>) -> Result<Var<'t>> {
        let t = x.shape()[1];
        if source.shape()[1] != t {
            return Err(Error::invalid(format!(
                "attention length mismatch: {} vs {}",
                t,
                source.shape()[1]
            )));
        }
        let (h, d) = (self.heads, self.head_dim);
        let split = |v: Var<'t>| v.reshape([h, d, t]);
        let q = split(self.query.forward(ctx, x)?)?.sigmoid();
        let k = split(self.key.forward(ctx, x)?)?.sigmoid();
        let v = split(self.value.forward(ctx, source)?)?;
        // kv[h][a][b] = sum_t phi(k)[h][a][t] v[h][b][t]
        let kv = k.matmul(&v.transpose()?)?;
        let y = kv.transpose()?.matmul(&q)?.scale(1.0 / t as f64);
        Ok(y.reshape([h * d, t])?)
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>, source: Var<'t>) -> Result<Var<'t>> {
        let y = self.out.forward(ctx, self.attend(ctx, x, source)?)?;
        Ok(y.add(&x)?.relu())
    }
}

/// `GeLU(W_l W_f [F^s ; F^t]) + F^t`.
#[derive(Debug, Clone)]
pub struct Fusion {
    fuse: Linear,
    mix: Linear,
}

impl Fusion {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Fusion {
            fuse: Linear::without_bias(store, &format!("{name}.fuse"), 2 * channels, channels, rng),
            mix: Linear::without_bias(store, &format!("{name}.mix"), channels, channels, rng),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, spatial: Var<'t>, temporal: Var<'t>) -> Result<Var<'t>> {
        if spatial.shape() != temporal.shape() {
            return Err(Error::invalid(format!(
                "fusion inputs differ: {:?} vs {:?}",
                spatial.shape(),
                temporal.shape()
            )));
        }
        let cat = Var::concat(&[spatial, temporal], 0)?;
        let y = self.mix.forward(ctx, self.fuse.forward(ctx, cat)?)?;
        Ok(y.gelu().add(&temporal)?)
    }
}

/// One backbone layer: its own spatial merge, an optional fusion with the
/// previous layer's output, and self-attention.
#[derive(Debug, Clone)]
pub struct TemporalLayer {
    pub merge: SpatialMerge,
    pub fusion: Option<Fusion>,
    pub attention: LinearAttention,
}

#[derive(Debug, Clone)]
pub struct TemporalStack {
    pub layers: Vec<TemporalLayer>,
}

pub struct TemporalDims {
    pub channels: usize,
    pub merge_channels: usize,
    pub joints: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub layers: usize,
}

impl TemporalStack {
    pub fn new(store: &mut ParamStore, name: &str, dims: &TemporalDims, rng: &mut impl Rng) -> Self {
        let c = dims.channels;
        let layers = (0..dims.layers)
            .map(|l| {
                let p = format!("{name}.{l}");
                TemporalLayer {
                    merge: SpatialMerge::new(store, &format!("{p}.merge"), c, dims.merge_channels, dims.joints, rng),
                    fusion: (l > 0).then(|| Fusion::new(store, &format!("{p}.fusion"), c, rng)),
                    attention: LinearAttention::new(store, &format!("{p}.attn"), c, dims.heads, dims.head_dim, rng),
                }
            })
            .collect();
        TemporalStack { layers }
    }

    /// `C x T x V` spatial features to `C x T`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, fs: Var<'t>) -> Result<Var<'t>> {
        let mut prev: Option<Var<'t>> = None;
        for layer in &self.layers {
            let merged = layer.merge.forward(ctx, fs)?;
            let input = match (&layer.fusion, prev) {
                (Some(f), Some(p)) => f.forward(ctx, merged, p)?,
                _ => merged,
            };
            let out = layer.attention.forward(ctx, input, input)?;
            prev = Some(ctx.dropout(out)?);
        }
        prev.ok_or_else(|| Error::invalid("temporal stack has no layers"))
    }
}

/// Explicit `O(T^2)` form of [`LinearAttention::attend`] for one head:
/// `out[:, t] = (1/T) sum_s (phi(q_t) . phi(k_s)) v_s`.
pub fn quadratic_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    let (d, t) = (q.shape()[0], q.shape()[1]);
    let dv = v.shape()[0];
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut out = Tensor::zeros([dv, t]);
    for ti in 0..t {
        for s in 0..t {
            let w: f64 = (0..d).map(|a| sig(q.get(&[a, ti])) * sig(k.get(&[a, s]))).sum::<f64>() / t as f64;
            for b in 0..dv {
                let cur = out.get(&[b, ti]);
                out.set(&[b, ti], cur + w * v.get(&[b, s]));
            }
        }
    }
    out
}
