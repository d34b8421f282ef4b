use super::{Tape, Tensor, TensorError, Var};

/// Compares the tape gradient of a scalar function against central finite
/// differences. Returns the largest `|analytic - numeric| / max(1, |analytic|)`
/// over the elements of `x`.
pub fn finite_diff_check<F, E>(f: F, x: &Tensor, eps: f64) -> Result<f64, E>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, E>,
    E: From<TensorError>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let loss = f(&tape, xv)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get(xv).unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let eval = |probe: &Tensor| -> Result<f64, E> {
        let tape = Tape::new();
        let v = tape.constant(probe.clone());
        Ok(f(&tape, v)?.item())
    };

    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
