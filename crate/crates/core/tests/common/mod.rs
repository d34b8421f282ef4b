#![allow(dead_code)]

use std::path::PathBuf;

pub mod gradsuite;

use rand::Rng;
use trg_core::nn::{Ctx, Mode, ParamStore};
use trg_core::tensor::{Tape, Tensor, Var};
use trg_core::Result;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Columns of a random `Q x T` matrix pushed through a softmax.
pub fn random_probs(q: usize, t: usize, rng: &mut impl Rng) -> Tensor {
    let raw = Tensor::from_fn([q, t], |_| rng.random_range(-2.0..2.0f64).exp());
    let sums: Vec<f64> = (0..t).map(|ti| (0..q).map(|c| raw.get(&[c, ti])).sum()).collect();
    Tensor::from_fn([q, t], |k| raw.data()[k] / sums[k % t])
}

/// Reduce `y` to a scalar with fixed random weights so no direction of the
/// output is invisible to the check.
pub fn probe<'t>(y: Var<'t>, seed: u64) -> Result<Var<'t>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w = random(&y.shape(), &mut rng);
    Ok(y.mul(&y.tape().constant(w))?.sum())
}

/// Worst relative error between the tape gradient of `f` with respect to
/// parameter `name` and central differences, `|a - n| / max(1, |a|)`.
pub fn param_check<F>(store: &ParamStore, name: &str, eps: f64, f: F) -> f64
where
    F: for<'t, 's> Fn(&Ctx<'t, 's>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store, Mode::Train);
    let loss = f(&ctx).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic = ctx
        .param_grads(&grads)
        .remove(name)
        .unwrap_or_else(|| panic!("no gradient for {name}"));

    let eval = |s: &ParamStore| {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, s, Mode::Train);
        f(&ctx).unwrap().item()
    };
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for i in 0..analytic.numel() {
        let orig = probe.get(name).unwrap().data()[i];
        probe.get_mut(name).unwrap().data_mut()[i] = orig + eps;
        let up = eval(&probe);
        probe.get_mut(name).unwrap().data_mut()[i] = orig - eps;
        let down = eval(&probe);
        probe.get_mut(name).unwrap().data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    worst
}

/// Every trainable parameter of `store` checked against `f`.
pub fn all_params_check<F>(store: &ParamStore, eps: f64, f: F) -> Vec<(String, f64)>
where
    F: for<'t, 's> Fn(&Ctx<'t, 's>) -> Result<Var<'t>>,
{
    let names: Vec<String> = store.trainable().map(|(n, _)| n.to_string()).collect();
    names.into_iter().map(|n| {
        let e = param_check(store, &n, eps, &f);
        (n, e)
    }).collect()
}
