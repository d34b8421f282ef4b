//! Differentiable operations on [`Var`].

use std::rc::Rc;

use super::kernels::{gemm, permute, split_axis, strides_of, Mat};
use super::tape::GradSink;
use super::{shape_err, Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'t> Var<'t> {
    fn check_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::Detached)
        }
    }

    fn check_same_shape(&self, op: &'static str, other: &Var<'_>) -> Result<Vec<usize>> {
        self.check_tape(other)?;
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(shape_err(op, format!("{a:?} vs {b:?}")));
        }
        Ok(a)
    }

    fn record(
        &self,
        inputs: &[Var<'t>],
        shape: Vec<usize>,
        data: Vec<f64>,
        backward: impl Fn(&[f64], &mut GradSink<'_>) + 'static,
    ) -> Var<'t> {
        let requires = inputs.iter().any(|v| v.requires_grad());
        let bw: Option<super::tape::BackwardFn> = if requires {
            Some(Box::new(backward))
        } else {
            None
        };
        self.tape.push(shape, data, requires, bw)
    }

    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let x = self.data();
        let y: Rc<[f64]> = x.iter().map(|&v| f(v)).collect();
        let id = self.id;
        let (xc, yc) = (x.clone(), y.clone());
        self.record(&[*self], self.shape(), y.to_vec(), move |g, sink| {
            if let Some(gx) = sink.grad(id) {
                for i in 0..gx.len() {
                    gx[i] += g[i] * df(xc[i], yc[i]);
                }
            }
        })
    }

    // ---- elementwise binary -------------------------------------------------

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let shape = self.check_same_shape("add", other)?;
        let (a, b) = (self.data(), other.data());
        let out = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();
        let (ia, ib) = (self.id, other.id);
        Ok(self.record(&[*self, *other], shape, out, move |g, sink| {
            if let Some(ga) = sink.grad(ia) {
                add_into(ga, g);
            }
            if let Some(gb) = sink.grad(ib) {
                add_into(gb, g);
            }
        }))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let shape = self.check_same_shape("sub", other)?;
        let (a, b) = (self.data(), other.data());
        let out = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
        let (ia, ib) = (self.id, other.id);
        Ok(self.record(&[*self, *other], shape, out, move |g, sink| {
            if let Some(ga) = sink.grad(ia) {
                add_into(ga, g);
            }
            if let Some(gb) = sink.grad(ib) {
                for (d, s) in gb.iter_mut().zip(g) {
                    *d -= s;
                }
            }
        }))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let shape = self.check_same_shape("mul", other)?;
        let (a, b) = (self.data(), other.data());
        let out = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        let (ia, ib) = (self.id, other.id);
        Ok(self.record(&[*self, *other], shape, out, move |g, sink| {
            if let Some(ga) = sink.grad(ia) {
                for i in 0..ga.len() {
                    ga[i] += g[i] * b[i];
                }
            }
            if let Some(gb) = sink.grad(ib) {
                for i in 0..gb.len() {
                    gb[i] += g[i] * a[i];
                }
            }
        }))
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let shape = self.check_same_shape("div", other)?;
        let (a, b) = (self.data(), other.data());
        let out = a.iter().zip(b.iter()).map(|(x, y)| x / y).collect();
        let (ia, ib) = (self.id, other.id);
        Ok(self.record(&[*self, *other], shape, out, move |g, sink| {
            if let Some(ga) = sink.grad(ia) {
                for i in 0..ga.len() {
                    ga[i] += g[i] / b[i];
                }
            }
            if let Some(gb) = sink.grad(ib) {
                for i in 0..gb.len() {
                    gb[i] -= g[i] * a[i] / (b[i] * b[i]);
                }
            }
        }))
    }

    // ---- elementwise unary --------------------------------------------------

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(|x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Var<'t> {
        self.unary(|x| x + s, |_, _| 1.0)
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Var<'t> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    /// GeLU, tanh approximation.
    pub fn gelu(&self) -> Var<'t> {
        self.unary(gelu, |x, _| gelu_grad(x))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero wherever the bound is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    // ---- linear algebra -----------------------------------------------------

    /// Matrix product over the last two axes. Either operand may be a 2-D
    /// matrix broadcast over the other's leading batch axis.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.check_tape(other)?;
        let (sa, sb) = (self.shape(), other.shape());
        let (a_batch, m, k) = match sa.as_slice() {
            [m, k] => (None, *m, *k),
            [b, m, k] => (Some(*b), *m, *k),
            _ => return Err(shape_err("matmul", format!("lhs rank {}", sa.len()))),
        };
        let (b_batch, k2, n) = match sb.as_slice() {
            [k, n] => (None, *k, *n),
            [b, k, n] => (Some(*b), *k, *n),
            _ => return Err(shape_err("matmul", format!("rhs rank {}", sb.len()))),
        };
        if k != k2 {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let batch = match (a_batch, b_batch) {
            (Some(x), Some(y)) if x != y => {
                return Err(shape_err("matmul", format!("batch {sa:?} x {sb:?}")))
            }
            (Some(x), _) | (None, Some(x)) => Some(x),
            (None, None) => None,
        };
        let nb = batch.unwrap_or(1);
        let (a, b) = (self.data(), other.data());
        let a_step = if a_batch.is_some() { m * k } else { 0 };
        let b_step = if b_batch.is_some() { k * n } else { 0 };
        let mut out = vec![0.0; nb * m * n];
        for i in 0..nb {
            gemm(
                Mat::new(&a[i * a_step..], m, k),
                Mat::new(&b[i * b_step..], k, n),
                &mut out[i * m * n..],
                0.0,
            );
        }
        let shape = match batch {
            Some(x) => vec![x, m, n],
            None => vec![m, n],
        };
        let (ia, ib) = (self.id, other.id);
        Ok(self.record(&[*self, *other], shape, out, move |g, sink| {
            if let Some(ga) = sink.grad(ia) {
                for i in 0..nb {
                    gemm(
                        Mat::new(&g[i * m * n..], m, n),
                        Mat::new(&b[i * b_step..], k, n).t(),
                        &mut ga[i * a_step..],
                        1.0,
                    );
                }
            }
            if let Some(gb) = sink.grad(ib) {
                for i in 0..nb {
                    gemm(
                        Mat::new(&a[i * a_step..], m, k).t(),
                        Mat::new(&g[i * m * n..], m, n),
                        &mut gb[i * b_step..],
                        1.0,
                    );
                }
            }
        }))
    }

    // ---- layout -------------------------------------------------------------

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let shape = shape.into();
        let from = self.shape();
        if shape.iter().product::<usize>() != from.iter().product::<usize>() {
            return Err(shape_err("reshape", format!("{from:?} -> {shape:?}")));
        }
        let id = self.id;
        Ok(self.record(&[*self], shape, self.data().to_vec(), move |g, sink| {
            if let Some(ga) = sink.grad(id) {
                add_into(ga, g);
            }
        }))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(shape_err("permute", format!("{perm:?} for {shape:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let out = permute(&self.data(), &shape, perm);
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let id = self.id;
        let oshape = out_shape.clone();
        Ok(self.record(&[*self], out_shape, out, move |g, sink| {
            if let Some(ga) = sink.grad(id) {
                add_into(ga, &permute(g, &oshape, &inv));
            }
        }))
    }

    /// Swap the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(shape_err("transpose", format!("rank {r}")));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    /// Repeat size-1 axes up to `shape`. Ranks must match.
    pub fn expand(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let target = shape.into();
        let from = self.shape();
        if from.len() != target.len()
            || from
                .iter()
                .zip(&target)
                .any(|(&f, &t)| f != t && f != 1)
        {
            return Err(shape_err("expand", format!("{from:?} -> {target:?}")));
        }
        let in_strides = strides_of(&from);
        let src_strides: Vec<usize> = from
            .iter()
            .zip(&in_strides)
            .map(|(&f, &s)| if f == 1 { 0 } else { s })
            .collect();
        let index: Rc<[usize]> = expand_index(&target, &src_strides).into();
        let x = self.data();
        let out = index.iter().map(|&i| x[i]).collect();
        let id = self.id;
        Ok(self.record(&[*self], target, out, move |g, sink| {
            if let Some(ga) = sink.grad(id) {
                for (o, &i) in index.iter().enumerate() {
                    ga[i] += g[o];
                }
            }
        }))
    }

    /// Broadcast a one-element variable to `shape`.
    pub fn broadcast_scalar(&self, shape: &[usize]) -> Result<Var<'t>> {
        if self.numel() != 1 {
            return Err(shape_err("broadcast_scalar", format!("{:?}", self.shape())));
        }
        self.reshape(vec![1; shape.len()])?.expand(shape.to_vec())
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            first.check_tape(p)?;
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{base:?} vs {s:?} on axis {axis}")));
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = split_axis(&base, axis);
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        let datas: Vec<Rc<[f64]>> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (d, &len) in datas.iter().zip(&lens) {
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(first.record(parts, shape, out, move |g, sink| {
            let mut start = 0;
            for (&id, &len) in ids.iter().zip(&lens) {
                if let Some(gp) = sink.grad(id) {
                    for o in 0..outer {
                        let src = &g[(o * total + start) * inner..(o * total + start + len) * inner];
                        add_into(&mut gp[o * len * inner..(o + 1) * len * inner], src);
                    }
                }
                start += len;
            }
        }))
    }

    /// Slice `len` entries along `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] {
            return Err(shape_err(
                "narrow",
                format!("{start}+{len} exceeds axis {axis} of {shape:?}"),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let id = self.id;
        Ok(self.record(&[*self], oshape, out, move |g, sink| {
            if let Some(ga) = sink.grad(id) {
                for o in 0..outer {
                    add_into(
                        &mut ga[(o * n + start) * inner..(o * n + start + len) * inner],
                        &g[o * len * inner..(o + 1) * len * inner],
                    );
                }
            }
        }))
    }

    // ---- reductions ---------------------------------------------------------

    pub fn sum(&self) -> Var<'t> {
        let total = self.data().iter().sum();
        let id = self.id;
        self.record(&[*self], vec![], vec![total], move |g, sink| {
            if let Some(ga) = sink.grad(id) {
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
        })
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sum along `axis`; the axis is kept with extent 1 when `keepdim`.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "sum_axis",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let row = &x[(o * n + i) * inner..(o * n + i + 1) * inner];
                add_into(&mut out[o * inner..(o + 1) * inner], row);
            }
        }
        let mut oshape = shape;
        if keepdim {
            oshape[axis] = 1;
        } else {
            oshape.remove(axis);
        }
        let id = self.id;
        Ok(self.record(&[*self], oshape, out, move |g, sink| {
            if let Some(ga) = sink.grad(id) {
                for o in 0..outer {
                    for i in 0..n {
                        add_into(
                            &mut ga[(o * n + i) * inner..(o * n + i + 1) * inner],
                            &g[o * inner..(o + 1) * inner],
                        );
                    }
                }
            }
        }))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Var<'t>> {
        let n = *self.shape().get(axis).ok_or(TensorError::Axis {
            op: "mean_axis",
            axis,
            rank: self.shape().len(),
        })?;
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / n.max(1) as f64))
    }

    /// Largest element (first occurrence receives the gradient).
    pub fn max_all(&self) -> Result<Var<'t>> {
        self.extremum("max_all", |a, b| a > b)
    }

    /// Smallest element (first occurrence receives the gradient).
    pub fn min_all(&self) -> Result<Var<'t>> {
        self.extremum("min_all", |a, b| a < b)
    }

    fn extremum(&self, op: &'static str, better: impl Fn(f64, f64) -> bool) -> Result<Var<'t>> {
        let x = self.data();
        if x.is_empty() {
            return Err(shape_err(op, "empty tensor"));
        }
        let mut best = 0;
        for i in 1..x.len() {
            if better(x[i], x[best]) {
                best = i;
            }
        }
        let id = self.id;
        Ok(self.record(&[*self], vec![], vec![x[best]], move |g, sink| {
            if let Some(ga) = sink.grad(id) {
                ga[best] += g[0];
            }
        }))
    }

    // ---- nonlinear layers ---------------------------------------------------

    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * n + i) * inner + j;
                let m = (0..n).map(|i| x[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in 0..n {
                    let e = (x[at(i)] - m).exp();
                    y[at(i)] = e;
                    z += e;
                }
                for i in 0..n {
                    y[at(i)] /= z;
                }
            }
        }
        let yc: Rc<[f64]> = y.clone().into();
        let id = self.id;
        Ok(self.record(&[*self], shape, y, move |g, sink| {
            if let Some(ga) = sink.grad(id) {
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |i: usize| (o * n + i) * inner + j;
                        let dot: f64 = (0..n).map(|i| g[at(i)] * yc[at(i)]).sum();
                        for i in 0..n {
                            ga[at(i)] += yc[at(i)] * (g[at(i)] - dot);
                        }
                    }
                }
            }
        }))
    }

    /// Training-mode batch normalisation. Axis 0 holds channels; statistics
    /// are taken over every remaining axis. Returns the normalised output and
    /// the batch mean and biased variance per channel.
    pub fn batch_norm(
        &self,
        gamma: &Var<'t>,
        beta: &Var<'t>,
        eps: f64,
    ) -> Result<(Var<'t>, Vec<f64>, Vec<f64>)> {
        self.check_tape(gamma)?;
        self.check_tape(beta)?;
        let shape = self.shape();
        let c = *shape
            .first()
            .ok_or_else(|| shape_err("batch_norm", "rank 0 input"))?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(shape_err(
                "batch_norm",
                format!("{c} channels, gamma {:?}, beta {:?}", gamma.shape(), beta.shape()),
            ));
        }
        let m = self.numel() / c.max(1);
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let mut xhat = vec![0.0; x.len()];
        let mut inv = vec![0.0; c];
        let mut out = vec![0.0; x.len()];
        for ch in 0..c {
            let row = &x[ch * m..(ch + 1) * m];
            let mu = row.iter().sum::<f64>() / m as f64;
            let v = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            mean[ch] = mu;
            var[ch] = v;
            inv[ch] = 1.0 / (v + eps).sqrt();
            for i in 0..m {
                let h = (row[i] - mu) * inv[ch];
                xhat[ch * m + i] = h;
                out[ch * m + i] = gm[ch] * h + bt[ch];
            }
        }
        let (ix, ig, ib) = (self.id, gamma.id, beta.id);
        let y = self.record(&[*self, *gamma, *beta], shape, out, move |g, sink| {
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for ch in 0..c {
                for i in 0..m {
                    sum_g[ch] += g[ch * m + i];
                    sum_gx[ch] += g[ch * m + i] * xhat[ch * m + i];
                }
            }
            if let Some(gb) = sink.grad(ib) {
                add_into(gb, &sum_g);
            }
            if let Some(gg) = sink.grad(ig) {
                add_into(gg, &sum_gx);
            }
            if let Some(gx) = sink.grad(ix) {
                for ch in 0..c {
                    let k = gm[ch] * inv[ch] / m as f64;
                    for i in 0..m {
                        let j = ch * m + i;
                        gx[j] += k * (m as f64 * g[j] - sum_g[ch] - xhat[j] * sum_gx[ch]);
                    }
                }
            }
        });
        Ok((y, mean, var))
    }

    /// Zero-padded temporal unfold for a `[C, T]` input: output row
    /// `c * kernel + j` holds the input shifted by `(j - kernel / 2) * dilation`.
    /// A matmul with a `[C_out, C * kernel]` weight then gives a dilated
    /// temporal convolution.
    pub fn temporal_unfold(&self, kernel: usize, dilation: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        let [c, t] = shape[..] else {
            return Err(shape_err("temporal_unfold", format!("want [C, T], got {shape:?}")));
        };
        if kernel % 2 == 0 {
            return Err(shape_err("temporal_unfold", format!("even kernel {kernel}")));
        }
        let half = (kernel / 2) as isize;
        let x = self.data();
        let mut out = vec![0.0; c * kernel * t];
        let src = move |j: usize, ti: usize| -> Option<usize> {
            let s = ti as isize + (j as isize - half) * dilation as isize;
            (s >= 0 && s < t as isize).then_some(s as usize)
        };
        for ch in 0..c {
            for j in 0..kernel {
                let row = (ch * kernel + j) * t;
                for ti in 0..t {
                    if let Some(s) = src(j, ti) {
                        out[row + ti] = x[ch * t + s];
                    }
                }
            }
        }
        let id = self.id;
        Ok(self.record(&[*self], vec![c * kernel, t], out, move |g, sink| {
            if let Some(ga) = sink.grad(id) {
                for ch in 0..c {
                    for j in 0..kernel {
                        let row = (ch * kernel + j) * t;
                        for ti in 0..t {
                            if let Some(s) = src(j, ti) {
                                ga[ch * t + s] += g[row + ti];
                            }
                        }
                    }
                }
            }
        }))
    }

    /// Euclidean distances between the rows of an `[n, d]` matrix. The
    /// gradient of a zero distance is taken as zero.
    pub fn pairwise_l2(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        let [n, d] = shape[..] else {
            return Err(shape_err("pairwise_l2", format!("want [n, d], got {shape:?}")));
        };
        let x = self.data();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let s: f64 = (0..d)
                    .map(|k| {
                        let diff = x[i * d + k] - x[j * d + k];
                        diff * diff
                    })
                    .sum();
                out[i * n + j] = s.sqrt();
                out[j * n + i] = s.sqrt();
            }
        }
        let dist: Rc<[f64]> = out.clone().into();
        let id = self.id;
        Ok(self.record(&[*self], vec![n, n], out, move |g, sink| {
            if let Some(gx) = sink.grad(id) {
                for i in 0..n {
                    for j in 0..n {
                        let dij = dist[i * n + j];
                        if i == j || dij == 0.0 {
                            continue;
                        }
                        let c = g[i * n + j] / dij;
                        for k in 0..d {
                            let diff = c * (x[i * d + k] - x[j * d + k]);
                            gx[i * d + k] += diff;
                            gx[j * d + k] -= diff;
                        }
                    }
                }
            }
        }))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// Flat source offsets for every output element of an expand.
fn expand_index(target: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let n: usize = target.iter().product();
    let rank = target.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < target[ax] {
                break;
            }
            src -= src_strides[ax] * target[ax];
            idx[ax] = 0;
        }
    }
    out
}

impl Tensor {
    /// Elementwise sigmoid on a plain tensor.
    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }
}
