use super::kernels;
use super::{Reduce, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `x * w^T` with `w` stored as `[out x in]`.
    Linear {
        x: Var,
        w: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        row: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Concat(Vec<Var>),
    Mean(Vec<Var>),
    Max {
        parts: Vec<Var>,
        arg: Vec<u32>,
    },
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Single-threaded computation record.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` replays it in reverse.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar root with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf. Its gradient is populated by `backward`.
    pub fn param(&mut self, value: &Tensor<T>) -> Var {
        let mut v = value.clone();
        v.grad = None;
        self.push(v, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Probabilities cached by a `softmax_xent` node.
    pub fn probs(&self, loss: Var) -> Option<Tensor<T>> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxXent { logits, probs, .. } => {
                let (r, k) = self.value(*logits).dims2();
                Tensor::new(vec![r, k], probs.clone()).ok()
            }
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2();
        let (k2, n) = bv.dims2();
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(av.data(), bv.data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    /// `x * w^T` where `x` is `[B x in]` and `w` is `[out x in]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (b, din) = xv.dims2();
        let (dout, din2) = wv.dims2();
        if din != din2 {
            return Err(shape_err("linear", xv, wv));
        }
        let mut out = vec![T::zero(); b * dout];
        kernels::matmul_bt_acc(xv.data(), wv.data(), &mut out, b, din, dout);
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(Tensor::new(vec![b, dout], out)?, Op::Linear { x, w }, needs))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dims2() != bv.dims2() {
            return Err(shape_err(op_name, av, bv));
        }
        let (r, cols) = av.dims2();
        let out = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![r, cols], out)?, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `[d]` row to every row of `x[B x d]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let (b, d) = xv.dims2();
        if rv.len() != d {
            return Err(shape_err("add_row", xv, rv));
        }
        let mut out = xv.data().to_vec();
        for r in 0..b {
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(rv.data()) {
                *o += v;
            }
        }
        let needs = self.needs(x) || self.needs(row);
        Ok(self.push(Tensor::new(vec![b, d], out)?, Op::AddRow { x, row }, needs))
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let xv = self.value(x);
        let (r, cols) = xv.dims2();
        let out = xv.data().iter().map(|&v| scale * v + shift).collect();
        let needs = self.needs(x);
        self.push(
            Tensor::new(vec![r, cols], out).expect("shape preserved"),
            Op::Affine { x, scale },
            needs,
        )
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let xv = self.value(x);
        let (r, cols) = xv.dims2();
        let out = match kind {
            Activation::Sigmoid => xv.data().iter().map(|&v| kernels::sigmoid(v)).collect(),
            Activation::Tanh => xv.data().iter().map(|&v| v.tanh()).collect(),
        };
        let needs = self.needs(x);
        self.push(
            Tensor::new(vec![r, cols], out).expect("shape preserved"),
            Op::Act { x, kind },
            needs,
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    /// Normalizes each row over its features, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let (rows, d) = xv.dims2();
        if d == 0 {
            return Err(Error::Argument("layer norm over zero features".into()));
        }
        if gv.len() != d {
            return Err(shape_err("layer_norm gain", xv, gv));
        }
        if bv.len() != d {
            return Err(shape_err("layer_norm bias", xv, bv));
        }
        let (out, xhat, inv_std) =
            kernels::layer_norm(xv.data(), gv.data(), bv.data(), rows, d, eps);
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::new(vec![rows, d], out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Concatenates along the feature axis, keeping part order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat of an empty list".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(shape_err("concat", self.value(*first), self.value(*p)));
            }
        }
        let width: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            Tensor::new(vec![rows, width], out)?,
            Op::Concat(parts.to_vec()),
            needs,
        ))
    }

    /// Reduces a list of same-shape per-timestep values into one.
    pub fn temporal_reduce(&mut self, steps: &[Var], kind: Reduce) -> Result<Var> {
        let first = steps
            .first()
            .ok_or_else(|| Error::Argument("temporal reduction over zero timesteps".into()))?;
        let dims = self.value(*first).dims2();
        for s in steps {
            if self.value(*s).dims2() != dims {
                return Err(shape_err("temporal_reduce", self.value(*first), self.value(*s)));
            }
        }
        let n = dims.0 * dims.1;
        let rows: Vec<&[T]> = steps.iter().map(|s| self.value(*s).data()).collect();
        let needs = steps.iter().any(|s| self.needs(*s));
        let shape = vec![dims.0, dims.1];
        Ok(match kind {
            Reduce::Mean => {
                let out = kernels::mean_rows(&rows, n);
                self.push(Tensor::new(shape, out)?, Op::Mean(steps.to_vec()), needs)
            }
            Reduce::Max => {
                let (out, arg) = kernels::max_rows(&rows, n);
                self.push(
                    Tensor::new(shape, out)?,
                    Op::Max {
                        parts: steps.to_vec(),
                        arg,
                    },
                    needs,
                )
            }
        })
    }

    /// Mean cross-entropy of row-wise softmax against `labels`; a `[1]` scalar.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, k) = lv.dims2();
        if labels.len() != rows {
            return Err(Error::Shape {
                op: "softmax_xent labels",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                len: k,
            });
        }
        let probs = softmax_rows(lv.data(), rows, k);
        let mut loss = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            loss -= probs[r * k + l].max(T::min_positive_value()).ln();
        }
        loss /= T::from_usize_lossy(rows.max(1));
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::vector(vec![loss]),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(Tensor::vector(vec![s]), Op::Sum(x), needs)
    }

    /// Reverse-mode sweep from a single-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::Argument(format!(
                "backward root must be a scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(up) = grads[i].take() else { continue };
            self.propagate(node, &up, &mut grads);
            grads[i] = Some(up);
        }
        Ok(Gradients { grads })
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.needs(v) {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn propagate(&self, node: &Node<T>, up: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).cols();
                let bd = self.value(*b).data();
                if let Some(ga) = self.buf(grads, *a) {
                    // dA = dC * B^T ; B is [k x n] so B^T rows are B's rows
                    kernels::matmul_bt_acc(up, bd, ga, m, n, k);
                }
                let ad = self.value(*a).data();
                if let Some(gb) = self.buf(grads, *b) {
                    kernels::matmul_at_acc(ad, up, gb, m, k, n);
                }
            }
            Op::Linear { x, w } => {
                let (b, din) = self.value(*x).dims2();
                let dout = self.value(*w).rows();
                let wd = self.value(*w).data();
                if let Some(gx) = self.buf(grads, *x) {
                    kernels::matmul_acc(up, wd, gx, b, dout, din);
                }
                let xd = self.value(*x).data();
                if let Some(gw) = self.buf(grads, *w) {
                    kernels::matmul_at_acc(up, xd, gw, b, dout, din);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = self.buf(grads, v) {
                        g.iter_mut().zip(up).for_each(|(g, &u)| *g += u);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.buf(grads, *a) {
                    g.iter_mut().zip(up).for_each(|(g, &u)| *g += u);
                }
                if let Some(g) = self.buf(grads, *b) {
                    g.iter_mut().zip(up).for_each(|(g, &u)| *g -= u);
                }
            }
            Op::Mul(a, b) => {
                let bd = self.value(*b).data();
                if let Some(g) = self.buf(grads, *a) {
                    for ((g, &u), &y) in g.iter_mut().zip(up).zip(bd) {
                        *g += u * y;
                    }
                }
                let ad = self.value(*a).data();
                if let Some(g) = self.buf(grads, *b) {
                    for ((g, &u), &x) in g.iter_mut().zip(up).zip(ad) {
                        *g += u * x;
                    }
                }
            }
            Op::AddRow { x, row } => {
                if let Some(g) = self.buf(grads, *x) {
                    g.iter_mut().zip(up).for_each(|(g, &u)| *g += u);
                }
                let d = self.value(*row).len();
                if let Some(g) = self.buf(grads, *row) {
                    for chunk in up.chunks(d) {
                        g.iter_mut().zip(chunk).for_each(|(g, &u)| *g += u);
                    }
                }
            }
            Op::Affine { x, scale } => {
                if let Some(g) = self.buf(grads, *x) {
                    g.iter_mut().zip(up).for_each(|(g, &u)| *g += *scale * u);
                }
            }
            Op::Act { x, kind } => {
                let y = node.value.data();
                if let Some(g) = self.buf(grads, *x) {
                    match kind {
                        Activation::Sigmoid => {
                            for ((g, &u), &s) in g.iter_mut().zip(up).zip(y) {
                                *g += u * s * (T::one() - s);
                            }
                        }
                        Activation::Tanh => {
                            for ((g, &u), &t) in g.iter_mut().zip(up).zip(y) {
                                *g += u * (T::one() - t * t);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, d) = self.value(*x).dims2();
                let gd = self.value(*gain).data().to_vec();
                if let Some(g) = self.buf(grads, *bias) {
                    for chunk in up.chunks(d) {
                        g.iter_mut().zip(chunk).for_each(|(g, &u)| *g += u);
                    }
                }
                if let Some(g) = self.buf(grads, *gain) {
                    for (uc, xc) in up.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            g[j] += uc[j] * xc[j];
                        }
                    }
                }
                if let Some(g) = self.buf(grads, *x) {
                    let dn = T::from_usize_lossy(d);
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..rows {
                        let ur = &up[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = ur[j] * gd[j];
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() / dn;
                        let mean_dx = kernels::dot(&dxhat, xr) / dn;
                        let gr = &mut g[r * d..(r + 1) * d];
                        for j in 0..d {
                            gr[j] += inv_std[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let width = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if let Some(g) = self.buf(grads, *p) {
                        for r in 0..rows {
                            let src = &up[r * width + offset..r * width + offset + w];
                            g[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(g, &u)| *g += u);
                        }
                    }
                    offset += w;
                }
            }
            Op::Mean(parts) => {
                let inv = T::one() / T::from_usize_lossy(parts.len());
                for p in parts {
                    if let Some(g) = self.buf(grads, *p) {
                        g.iter_mut().zip(up).for_each(|(g, &u)| *g += u * inv);
                    }
                }
            }
            Op::Max { parts, arg } => {
                for (pi, p) in parts.iter().enumerate() {
                    if let Some(g) = self.buf(grads, *p) {
                        for (j, &a) in arg.iter().enumerate() {
                            if a as usize == pi {
                                g[j] += up[j];
                            }
                        }
                    }
                }
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                let k = self.value(*logits).cols();
                let scale = up[0] / T::from_usize_lossy(labels.len().max(1));
                if let Some(g) = self.buf(grads, *logits) {
                    for (r, &l) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == l { T::one() } else { T::zero() };
                            g[r * k + j] += scale * (probs[r * k + j] - onehot);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(g) = self.buf(grads, *x) {
                    g.iter_mut().for_each(|g| *g += up[0]);
                }
            }
        }
    }
}

/// Numerically stable row-wise softmax.
pub(crate) fn softmax_rows<T: Scalar>(logits: &[T], rows: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * k];
    for r in 0..rows {
        let lr = &logits[r * k..(r + 1) * k];
        let mx = lr.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for j in 0..k {
            let e = (lr[j] - mx).exp();
            out[r * k + j] = e;
            z += e;
        }
        out[r * k..(r + 1) * k].iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Softmax over the last axis of a plain tensor.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (r, k) = logits.dims2();
    Tensor::new(logits.shape().to_vec(), softmax_rows(logits.data(), r, k))
        .expect("shape preserved")
}

/// Layer-norm epsilon used throughout the network.
pub fn ln_eps<T: Scalar>() -> T {
    c(1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_examples_on_tape() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = g.constant(Tensor::identity(2));
        let z = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let ai = g.matmul(a, i).unwrap();
        assert_eq!(g.value(ai).data(), &[1.0, 2.0, 3.0, 4.0]);
        let az = g.matmul(a, z).unwrap();
        assert!(g.value(az).data().iter().all(|&v| v == 0.0));
        let ab = g.matmul(a, b).unwrap();
        assert_eq!(g.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);
        let bad = g.constant(Tensor::zeros(&[3, 1]));
        let err = g.matmul(a, bad).unwrap_err().to_string();
        assert!(err.contains("[2, 2]") && err.contains("[3, 1]"), "{err}");
    }

    #[test]
    fn matmul_backward_formula() {
        let mut g = Graph::new();
        let a = g.param(&t(&[1, 2], &[1.0, 2.0]));
        let b = g.param(&t(&[2, 1], &[3.0, 4.0]));
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        // dA = dC * B^T, dB = A^T * dC
        assert_eq!(grads.get(a).unwrap(), &[3.0, 4.0]);
        assert_eq!(grads.get(b).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn activation_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[0.0, 1.7, -0.3]));
        let nx = g.affine(x, -1.0, 0.0);
        let s = g.sigmoid(x);
        let sn = g.sigmoid(nx);
        let th = g.tanh(x);
        assert_eq!(g.value(s).data()[0], 0.5);
        assert_eq!(g.value(th).data()[0], 0.0);
        for j in 0..3 {
            let total = g.value(s).data()[j] + g.value(sn).data()[j];
            assert!((total - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::<f64>::new();
        let ones = g.constant(Tensor::full(&[4], 1.0));
        let zeros = g.constant(Tensor::zeros(&[4]));
        let flat = g.constant(Tensor::full(&[4], 3.5));
        let y = g.layer_norm(flat, ones, zeros, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let one2 = g.constant(Tensor::full(&[2], 1.0));
        let zero2 = g.constant(Tensor::zeros(&[2]));
        let x = g.constant(t(&[2], &[1.0, 3.0]));
        let y = g.layer_norm(x, one2, zero2, 1e-12).unwrap();
        let out = g.value(y).data();
        assert!((out[0] + 1.0).abs() < 1e-9 && (out[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_xent_examples() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::zeros(&[4]));
        let loss = g.softmax_xent(l, &[2]).unwrap();
        assert!((g.value(loss).data()[0] - 4f64.ln()).abs() < 1e-12);
        assert!(g.probs(loss).unwrap().data().iter().all(|&p| (p - 0.25).abs() < 1e-15));

        let a = g.constant(t(&[3], &[0.3, -1.2, 2.0]));
        let b = g.constant(t(&[3], &[100.3, 98.8, 102.0]));
        let la = g.softmax_xent(a, &[0]).unwrap();
        let lb = g.softmax_xent(b, &[0]).unwrap();
        let (pa, pb) = (g.probs(la).unwrap(), g.probs(lb).unwrap());
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() < 1e-12);
        }

        let err = g.softmax_xent(a, &[3]).unwrap_err();
        assert!(matches!(err, Error::Index { index: 3, len: 3, .. }));
    }

    #[test]
    fn concat_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.param(&t(&[2], &[1.0, 2.0]));
        let b = g.param(&t(&[1], &[3.0]));
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);
        let single = g.concat(&[a]).unwrap();
        assert_eq!(g.value(single).data(), g.value(a).data());
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[1.0, 1.0]);
        assert_eq!(grads.get(b).unwrap(), &[1.0]);
        assert!(matches!(g.concat(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn max_reduction_routes_gradient_to_first_argmax() {
        let mut g = Graph::<f64>::new();
        let a = g.param(&t(&[2], &[1.0, 3.0]));
        let b = g.param(&t(&[2], &[1.0, 5.0]));
        let m = g.temporal_reduce(&[a, b], Reduce::Max).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 5.0]);
        let s = g.sum(m);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[1.0, 0.0]);
        assert_eq!(grads.get(b).unwrap(), &[0.0, 1.0]);
        assert!(g.temporal_reduce(&[], Reduce::Mean).is_err());
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::<f64>::new();
        let a = g.param(&t(&[2], &[1.0, 3.0]));
        assert!(g.backward(a).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(&t(&[2], &[1.0, 3.0]));
        let k = g.constant(t(&[2], &[2.0, 2.0]));
        let p = g.mul(a, k).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[2.0, 2.0]);
        assert!(grads.get(k).is_none());
    }
}
