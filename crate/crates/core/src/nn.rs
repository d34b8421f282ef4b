//! Named parameters, the per-forward context and the small layers shared by
//! every model block.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    tensor: Tensor,
    trainable: bool,
}

/// Every weight and buffer of a model, keyed by dotted name. Iteration order
/// is the sorted name order, which fixes checkpoint layout and optimizer
/// traversal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor) {
        self.insert(name.into(), t, true);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor) {
        self.insert(name.into(), t, false);
    }

    fn insert(&mut self, name: String, tensor: Tensor, trainable: bool) {
        let prev = self.entries.insert(name.clone(), Entry { tensor, trainable });
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.tensor)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    /// All tensors, trainable or not, in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.tensor))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(k, e)| (k.as_str(), &e.tensor))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_trainable_values(&self) -> usize {
        self.trainable().map(|(_, t)| t.numel()).sum()
    }

    /// Overwrite values from `other`, requiring an identical name set and
    /// identical shapes.
    pub fn assign_from(&mut self, other: &BTreeMap<String, Tensor>) -> Result<()> {
        for name in other.keys() {
            if !self.entries.contains_key(name) {
                return Err(Error::CheckpointMismatch(format!("unexpected tensor {name}")));
            }
        }
        for (name, entry) in &mut self.entries {
            let src = other
                .get(name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name}")))?;
            if src.shape() != entry.tensor.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    src.shape(),
                    entry.tensor.shape()
                )));
            }
            entry.tensor = src.clone();
        }
        Ok(())
    }
}

/// Batch statistics observed by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// State for one forward pass: the tape, parameter bindings, dropout RNG and
/// collected batch-norm statistics.
pub struct Ctx<'t, 's> {
    pub tape: &'t Tape,
    store: &'s ParamStore,
    mode: Mode,
    track_grads: bool,
    dropout: f64,
    bound: RefCell<HashMap<String, Var<'t>>>,
    rng: RefCell<ChaCha8Rng>,
    bn_updates: RefCell<Vec<BnUpdate>>,
}

impl<'t, 's> Ctx<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParamStore, mode: Mode) -> Self {
        Ctx {
            tape,
            store,
            mode,
            track_grads: mode == Mode::Train,
            dropout: 0.0,
            bound: RefCell::new(HashMap::new()),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    /// Inverted-dropout rate used by [`Ctx::dropout`] in training mode.
    pub fn with_dropout(mut self, rate: f64, seed: u64) -> Self {
        self.dropout = rate;
        self.rng = RefCell::new(ChaCha8Rng::seed_from_u64(seed));
        self
    }

    /// Record parameters as trainable leaves even in eval mode.
    pub fn with_grads(mut self, on: bool) -> Self {
        self.track_grads = on;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    /// Bind `name` to an existing variable instead of the stored tensor.
    pub fn bind(&self, name: &str, v: Var<'t>) {
        self.bound.borrow_mut().insert(name.to_string(), v);
    }

    pub fn param(&self, name: &str) -> Result<Var<'t>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let t = self
            .store
            .get(name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("unknown parameter {name}")))?
            .clone();
        let v = if self.track_grads && self.store.is_trainable(name) {
            self.tape.leaf(t)
        } else {
            self.tape.constant(t)
        };
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }

    pub fn dropout(&self, x: Var<'t>) -> Result<Var<'t>> {
        if self.mode == Mode::Eval || self.dropout <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.dropout;
        let mut rng = self.rng.borrow_mut();
        let mask = Tensor::from_fn(x.shape(), |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        Ok(x.mul(&self.tape.constant(mask))?)
    }

    pub(crate) fn push_bn_update(&self, u: BnUpdate) {
        self.bn_updates.borrow_mut().push(u);
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates.borrow_mut())
    }

    /// Gradients of every trainable parameter touched by this forward pass.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .borrow()
            .iter()
            .filter(|(name, _)| self.store.is_trainable(name))
            .filter_map(|(name, v)| grads.get(*v).map(|g| (name.clone(), g)))
            .collect()
    }
}

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..=bound))
}

/// Dense map over the leading axis: `[in, N] -> [out, N]`. Serves both as
/// a linear layer on `C x T` features and as a 1x1 convolution once the
/// trailing axes are flattened.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: String,
    bias: Option<String>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut lin = Self::without_bias(store, name, in_dim, out_dim, rng);
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let bias = format!("{name}.bias");
        store.insert_param(&bias, uniform(&[out_dim], bound, rng));
        lin.bias = Some(bias);
        lin
    }

    pub fn without_bias(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = format!("{name}.weight");
        store.insert_param(&weight, uniform(&[out_dim, in_dim], bound, rng));
        Linear {
            weight,
            bias: None,
            in_dim,
            out_dim,
        }
    }

    pub fn weight_name(&self) -> &str {
        &self.weight
    }

    pub fn bias_name(&self) -> Option<&str> {
        self.bias.as_deref()
    }

    /// Applies to any `[in, ...]` tensor; trailing axes are preserved.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let n: usize = shape[1..].iter().product();
        let flat = x.reshape([shape[0], n])?;
        let mut y = ctx.param(&self.weight)?.matmul(&flat)?;
        if let Some(bias) = &self.bias {
            let b = ctx.param(bias)?;
            y = y.add(&b.reshape([self.out_dim, 1])?.expand([self.out_dim, n])?)?;
        }
        let mut out_shape = shape;
        out_shape[0] = self.out_dim;
        Ok(y.reshape(out_shape)?)
    }
}

/// Batch normalisation over axis 0 with running statistics for eval mode.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    prefix: String,
    pub channels: usize,
    pub eps: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        store.insert_param(format!("{name}.gamma"), Tensor::ones([channels]));
        store.insert_param(format!("{name}.beta"), Tensor::zeros([channels]));
        store.insert_buffer(format!("{name}.running_mean"), Tensor::zeros([channels]));
        store.insert_buffer(format!("{name}.running_var"), Tensor::ones([channels]));
        BatchNorm {
            prefix: name.to_string(),
            channels,
            eps: 1e-5,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let gamma = ctx.param(&format!("{}.gamma", self.prefix))?;
        let beta = ctx.param(&format!("{}.beta", self.prefix))?;
        match ctx.mode() {
            Mode::Train => {
                let (y, mean, var) = x.batch_norm(&gamma, &beta, self.eps)?;
                ctx.push_bn_update(BnUpdate {
                    prefix: self.prefix.clone(),
                    mean,
                    var,
                    count: x.numel() / self.channels.max(1),
                });
                Ok(y)
            }
            Mode::Eval => {
                let shape = x.shape();
                let c = self.channels;
                let m = x.numel() / c.max(1);
                let rm = ctx.param(&format!("{}.running_mean", self.prefix))?.value();
                let rv = ctx.param(&format!("{}.running_var", self.prefix))?.value();
                let shift = Tensor::from_fn([c, m], |i| -rm.data()[i / m]);
                let inv = Tensor::from_fn([c, m], |i| 1.0 / (rv.data()[i / m] + self.eps).sqrt());
                let flat = x.reshape([c, m])?;
                let xhat = flat.add(&ctx.constant(shift))?.mul(&ctx.constant(inv))?;
                let g = gamma.reshape([c, 1])?.expand([c, m])?;
                let b = beta.reshape([c, 1])?.expand([c, m])?;
                Ok(xhat.mul(&g)?.add(&b)?.reshape(shape)?)
            }
        }
    }
}

/// Fold observed batch statistics into the running buffers.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) {
    let m = BatchNorm::MOMENTUM;
    for u in updates {
        let unbias = if u.count > 1 {
            u.count as f64 / (u.count - 1) as f64
        } else {
            1.0
        };
        if let Some(rm) = store.get_mut(&format!("{}.running_mean", u.prefix)) {
            for (r, &b) in rm.data_mut().iter_mut().zip(&u.mean) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
        if let Some(rv) = store.get_mut(&format!("{}.running_var", u.prefix)) {
            for (r, &b) in rv.data_mut().iter_mut().zip(&u.var) {
                *r = (1.0 - m) * *r + m * b * unbias;
            }
        }
    }
}
