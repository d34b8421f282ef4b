//! Spatial feature extraction: a multi-scale graph convolution over the
//! skeleton followed by text-guided adaptive graph convolution.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::nn::{BatchNorm, Ctx, Linear, ParamStore};
use crate::tensor::{Tensor, Var};

/// Added to every degree before the symmetric normalisation.
pub const DEGREE_EPS: f64 = 0.001;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopologyFile {
    joints: Vec<String>,
    edges: Vec<[usize; 2]>,
}

/// Joint names, bone list and the cached all-pairs hop distances.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    joints: Vec<String>,
    edges: Vec<[usize; 2]>,
    hops: Vec<Vec<usize>>,
}

impl SkeletonTopology {
    pub fn new(joints: Vec<String>, edges: Vec<[usize; 2]>) -> Result<Self> {
        let v = joints.len();
        if v == 0 {
            return Err(Error::invalid("topology has no joints"));
        }
        let mut adj = vec![Vec::new(); v];
        for &[i, j] in &edges {
            if i >= v || j >= v {
                return Err(Error::invalid(format!("edge ({i}, {j}) out of range for {v} joints")));
            }
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let mut hops = Vec::with_capacity(v);
        for src in 0..v {
            let mut d = vec![usize::MAX; v];
            d[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if d[w] == usize::MAX {
                        d[w] = d[u] + 1;
                        queue.push_back(w);
                    }
                }
            }
            if let Some(j) = d.iter().position(|&x| x == usize::MAX) {
                return Err(Error::invalid(format!(
                    "topology is not connected: {} unreachable from {}",
                    joints[j], joints[src]
                )));
            }
            hops.push(d);
        }
        Ok(SkeletonTopology { joints, edges, hops })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: TopologyFile = serde_json::from_str(text)?;
        Self::new(f.joints, f.edges)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TopologyFile {
            joints: self.joints.clone(),
            edges: self.edges.clone(),
        })?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&io::read_text(path.as_ref())?)
    }

    /// Chain `0 - 1 - ... - (n-1)`.
    pub fn chain(n: usize) -> Self {
        let joints = (0..n).map(|i| format!("j{i}")).collect();
        let edges = (1..n).map(|i| [i - 1, i]).collect();
        Self::new(joints, edges).expect("chain is connected")
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn hops(&self, i: usize, j: usize) -> usize {
        self.hops[i][j]
    }

    pub fn diameter(&self) -> usize {
        self.hops.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Joints at exactly `k` hops, plus self-loops.
    pub fn k_adjacency(&self, k: usize) -> Tensor {
        let v = self.num_joints();
        Tensor::from_fn([v, v], |n| {
            let (i, j) = (n / v, n % v);
            if i == j || self.hops[i][j] == k {
                1.0
            } else {
                0.0
            }
        })
    }

    /// `V x KV` concatenation of normalised adjacencies for hop counts
    /// `0..scales`.
    pub fn multiscale_adjacency(&self, scales: usize) -> Tensor {
        let v = self.num_joints();
        let blocks: Vec<Tensor> = (0..scales)
            .map(|k| normalize_adjacency(&self.k_adjacency(k)))
            .collect();
        Tensor::from_fn([v, scales * v], |n| {
            let (i, c) = (n / (scales * v), n % (scales * v));
            blocks[c / v].get(&[i, c % v])
        })
    }
}

/// `D^-1/2 A D^-1/2` with `D_ii = sum_j A_ij + DEGREE_EPS`.
pub fn normalize_adjacency(a: &Tensor) -> Tensor {
    let v = a.shape()[0];
    let inv: Vec<f64> = (0..v)
        .map(|i| {
            let deg: f64 = a.data()[i * v..(i + 1) * v].iter().sum();
            1.0 / (deg + DEGREE_EPS).sqrt()
        })
        .collect();
    Tensor::from_fn([v, v], |n| {
        let (i, j) = (n / v, n % v);
        inv[i] * a.data()[n] * inv[j]
    })
}

/// `ReLU(W_s . reshape((A + B) X))` over a `C0 x T x V` input.
#[derive(Debug, Clone)]
pub struct MultiScaleGcn {
    adjacency: Tensor,
    offset: String,
    mix: Linear,
    pub scales: usize,
    pub in_channels: usize,
}

impl MultiScaleGcn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        topology: &SkeletonTopology,
        scales: usize,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let v = topology.num_joints();
        let offset = format!("{name}.offset");
        store.insert_param(&offset, Tensor::zeros([v, scales * v]));
        MultiScaleGcn {
            adjacency: topology.multiscale_adjacency(scales),
            offset,
            mix: Linear::new(store, &format!("{name}.mix"), scales * in_channels, out_channels, rng),
            scales,
            in_channels,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let [c0, t, v] = x.shape()[..] else {
            return Err(Error::invalid(format!("gcn input must be C0 x T x V, got {:?}", x.shape())));
        };
        if c0 != self.in_channels || v * self.scales != self.adjacency.shape()[1] {
            return Err(Error::invalid(format!(
                "gcn expects {} channels and {} joints, got {c0} x {v}",
                self.in_channels,
                self.adjacency.shape()[0]
            )));
        }
        let k = self.scales;
        let a = ctx.constant(self.adjacency.clone()).add(&ctx.param(&self.offset)?)?;
        let y = x.reshape([c0 * t, v])?.matmul(&a)?;
        let y = y
            .reshape([c0, t, k, v])?
            .permute(&[2, 0, 1, 3])?
            .reshape([k * c0, t, v])?;
        Ok(self.mix.forward(ctx, y)?.relu())
    }
}

/// Frame-level `T x V x V` and channel-level `C1 x V x V` graphs built from
/// differences of pooled head outputs.
#[derive(Debug, Clone)]
pub struct AdaptiveGraphs {
    p_head: Linear,
    q_head: Linear,
}

impl AdaptiveGraphs {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        graph_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        AdaptiveGraphs {
            p_head: Linear::new(store, &format!("{name}.p"), channels, graph_channels, rng),
            q_head: Linear::new(store, &format!("{name}.q"), channels, graph_channels, rng),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, fg: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let p = self.p_head.forward(ctx, fg)?;
        let q = self.q_head.forward(ctx, fg)?;
        let [c1, t, v] = p.shape()[..] else {
            return Err(Error::invalid("adaptive graph input must be C x T x V"));
        };
        let diff = |a: Var<'t>, b: Var<'t>, n: usize| -> Result<Var<'t>> {
            let rows = a.reshape([n, v, 1])?.expand([n, v, v])?;
            let cols = b.reshape([n, 1, v])?.expand([n, v, v])?;
            Ok(rows.sub(&cols)?)
        };
        let gm = diff(p.mean_axis(0, false)?, q.mean_axis(0, false)?, t)?;
        let gn = diff(p.mean_axis(1, false)?, q.mean_axis(1, false)?, c1)?;
        Ok((gm, gn))
    }
}

/// `ReLU(BN(F^j G^T + F^j G^C))` where both graphs add the fixed joint graph
/// to an adaptive component.
#[derive(Debug, Clone)]
pub struct TextAdaptiveGcn {
    graphs: AdaptiveGraphs,
    joint_head: Linear,
    bn: BatchNorm,
    pub channels: usize,
    pub graph_channels: usize,
}

impl TextAdaptiveGcn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        graph_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if graph_channels == 0 || channels % graph_channels != 0 {
            return Err(Error::invalid(format!(
                "{channels} channels cannot be split into {graph_channels} graph groups"
            )));
        }
        Ok(TextAdaptiveGcn {
            graphs: AdaptiveGraphs::new(store, &format!("{name}.graph"), channels, graph_channels, rng),
            joint_head: Linear::new(store, &format!("{name}.joint"), channels, channels, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), channels),
            channels,
            graph_channels,
        })
    }

    /// Pre-normalisation sum `F^j G^T + F^j G^C`.
    pub fn aggregate<'t>(&self, ctx: &Ctx<'t, '_>, fg: Var<'t>, joint_graph: &Tensor) -> Result<Var<'t>> {
        let [c, t, v] = fg.shape()[..] else {
            return Err(Error::invalid(format!("features must be C x T x V, got {:?}", fg.shape())));
        };
        if joint_graph.shape() != [v, v] {
            return Err(Error::invalid(format!(
                "joint graph {:?} does not match {v} joints",
                joint_graph.shape()
            )));
        }
        let c1 = self.graph_channels;
        let (gm, gn) = self.graphs.forward(ctx, fg)?;
        let gj = ctx.constant(joint_graph.clone()).reshape([1, v, v])?;
        let g_frame = gj.expand([t, v, v])?.add(&gm)?;
        let g_chan = gj.expand([c1, v, v])?.add(&gn)?;

        let fj = self.joint_head.forward(ctx, fg)?;
        let per_frame = fj
            .permute(&[1, 0, 2])?
            .matmul(&g_frame)?
            .permute(&[1, 0, 2])?;
        let per_group = fj
            .reshape([c1, (c / c1) * t, v])?
            .matmul(&g_chan)?
            .reshape([c, t, v])?;
        Ok(per_frame.add(&per_group)?)
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, fg: Var<'t>, joint_graph: &Tensor) -> Result<Var<'t>> {
        let s = self.aggregate(ctx, fg, joint_graph)?;
        Ok(self.bn.forward(ctx, s)?.relu())
    }
}

/// Multi-scale GCN followed by the text-adaptive graph convolution.
#[derive(Debug, Clone)]
pub struct SpatialBlock {
    pub gcn: MultiScaleGcn,
    pub adaptive: TextAdaptiveGcn,
}

impl SpatialBlock {
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>, joint_graph: &Tensor) -> Result<Var<'t>> {
        let fg = self.gcn.forward(ctx, x)?;
        self.adaptive.forward(ctx, fg, joint_graph)
    }
}
