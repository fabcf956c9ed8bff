//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends one record to the tape holding its output value and
//! the ids of its inputs. [`Tape::backward`] walks the records in exact reverse
//! order, so gradients are a deterministic function of the tape.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            // Several times cheaper than libm tanhf; saturates cleanly since
            // exp overflows to inf and underflows to 0.
            Activation::Tanh => {
                let two = T::one() + T::one();
                T::one() - two / ((two * x).exp() + T::one())
            }
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }
}

/// Floor applied to probabilities inside the log of the NLL loss.
pub const NLL_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    ScaleShift { x: Var, scale: T },
    Activation { x: Var, kind: Activation },
    Softmax { x: Var },
    ConcatCols { a: Var, b: Var },
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<usize> },
    StackRows { parts: Vec<Var> },
    OuterSum { a: Var, b: Var },
    MaxPool { inputs: Vec<Var>, argmax: Vec<u32> },
    Reshape { x: Var },
    NllRows { probs: Var, gold: Vec<usize> },
    Sum { x: Var },
}

/// Records operations and their outputs for one forward/backward pass.
pub struct Tape<T: Real> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    requires_grad: Vec<bool>,
    leaf_grads: Vec<Option<Tensor<T>>>,
    stochastic: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            requires_grad: Vec::new(),
            leaf_grads: Vec::new(),
            stochastic: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.requires_grad.push(requires_grad);
        self.leaf_grads.push(None);
        Var(self.values.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Marks the tape as containing a random operation (dropout). Gradient
    /// checks refuse such tapes.
    pub fn mark_stochastic(&mut self) {
        self.stochastic = true;
    }

    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    /// `x·Wᵀ + b` for `x` of shape `[k]` or `[r, k]` and `W` of shape `[m, k]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        if wv.shape().len() != 2 || xv.cols() != wv.shape()[1] {
            return Err(dim_err("linear", wv, xv));
        }
        let (m, k) = (wv.shape()[0], wv.shape()[1]);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != m {
                return Err(dim_err("linear(bias)", wv, bv));
            }
        }
        let r = xv.rows();
        let mut out = vec![T::zero(); r * m];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bias);
            }
        }
        if r <= SMALL_ROWS || m <= SMALL_ROWS {
            for (xr, or) in xv.data().chunks(k).zip(out.chunks_mut(m)) {
                for (o, wr) in or.iter_mut().zip(wv.data().chunks(k)) {
                    *o = *o + dot(xr, wr);
                }
            }
        } else {
            let beta = if b.is_some() { T::one() } else { T::zero() };
            T::gemm(
                r,
                k,
                m,
                T::one(),
                xv.data(),
                k as isize,
                1,
                wv.data(),
                1,
                k as isize,
                beta,
                &mut out,
                m as isize,
                1,
            );
        }
        let shape = if xv.shape().len() == 1 {
            vec![m]
        } else {
            vec![r, m]
        };
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, rg))
    }

    /// The single-vector affine map `W·x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        if self.value(x).shape().len() != 1 {
            return Err(dim_err("affine", self.value(w), self.value(x)));
        }
        self.linear(x, w, Some(b))
    }

    /// Matrix product `A·B`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(dim_err("matmul", av, bv));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            av.data(),
            k as isize,
            1,
            bv.data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul { a, b }, rg))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(dim_err(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    /// `scale * x + shift`, elementwise.
    pub fn scale_shift(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push(out, Op::ScaleShift { x, scale }, rg)
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let out = self.value(x).map(|v| kind.apply(v));
        let rg = self.rg(x);
        self.push(out, Op::Activation { x, kind }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(Activation::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    /// Softmax over the trailing dimension (each row independently).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if cols == 0 {
            return Err(Error::usage("softmax over an empty dimension"));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax { x }, rg))
    }

    /// Column-wise concatenation. Rank-1 inputs concatenate as vectors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let out = if av.shape().len() == 1 && bv.shape().len() == 1 {
            let mut data = av.data().to_vec();
            data.extend_from_slice(bv.data());
            Tensor::vector(data)
        } else {
            if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[0] != bv.shape()[0] {
                return Err(dim_err("concat", av, bv));
            }
            let (r, ca, cb) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            let mut data = Vec::with_capacity(r * (ca + cb));
            for i in 0..r {
                data.extend_from_slice(&av.data()[i * ca..(i + 1) * ca]);
                data.extend_from_slice(&bv.data()[i * cb..(i + 1) * cb]);
            }
            Tensor::matrix(r, ca + cb, data)?
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols { a, b }, rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if start >= end || end > cols {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let rows = xv.rows();
        let width = end - start;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&xv.data()[r * cols + start..r * cols + end]);
        }
        let shape = if xv.shape().len() == 1 {
            vec![width]
        } else {
            vec![rows, width]
        };
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceCols { x, start }, rg))
    }

    /// Rows of `x` selected (with repetition allowed) by `index`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(Error::Dimension {
                    op: "gather_rows",
                    lhs: xv.shape().to_vec(),
                    rhs: vec![i],
                });
            }
            data.extend_from_slice(&xv.data()[i * cols..(i + 1) * cols]);
        }
        let out = Tensor::matrix(index.len(), cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Contiguous row block `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let index: Vec<usize> = (start..start + len).collect();
        self.gather_rows(x, &index)
    }

    /// Vertical concatenation of matrices (or vectors as single rows).
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::usage("stack_rows of an empty list"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(dim_err("stack_rows", self.value(*first), pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::StackRows {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Row `i * m + j` of the output is `a[i] + b[j]`.
    pub fn outer_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.cols() != bv.cols() {
            return Err(dim_err("outer_sum", av, bv));
        }
        let (n, m, d) = (av.rows(), bv.rows(), av.cols());
        let mut data = Vec::with_capacity(n * m * d);
        for i in 0..n {
            let ar = &av.data()[i * d..(i + 1) * d];
            for j in 0..m {
                let br = &bv.data()[j * d..(j + 1) * d];
                data.extend(ar.iter().zip(br).map(|(&x, &y)| x + y));
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(n * m, d, data)?, Op::OuterSum { a, b }, rg))
    }

    /// Elementwise maximum over a nonempty set of same-shaped tensors. The
    /// gradient of each element goes to the first input attaining the max.
    pub fn maxpool_set(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::usage("maxpool over an empty set"))?;
        let mut out = self.value(first).clone();
        let mut argmax = vec![0u32; out.len()];
        for (k, &v) in inputs.iter().enumerate().skip(1) {
            let vv = self.value(v);
            if vv.shape() != out.shape() {
                return Err(dim_err("maxpool_set", &out, vv));
            }
            for ((o, a), &x) in out.data_mut().iter_mut().zip(argmax.iter_mut()).zip(vv.data()) {
                if x > *o {
                    *o = x;
                    *a = k as u32;
                }
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            out,
            Op::MaxPool {
                inputs: inputs.to_vec(),
                argmax,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    /// Sum over rows of `-log(max(p[row][gold[row]], 1e-12))`.
    pub fn nll_rows(&mut self, probs: Var, gold: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        let cols = pv.cols();
        if pv.rows() != gold.len() {
            return Err(Error::Dimension {
                op: "nll_rows",
                lhs: pv.shape().to_vec(),
                rhs: vec![gold.len()],
            });
        }
        let floor = T::from_f64(NLL_FLOOR);
        let mut loss = T::zero();
        for (r, &g) in gold.iter().enumerate() {
            if g >= cols {
                return Err(Error::usage(format!("gold label {g} outside 0..{cols}")));
            }
            loss = loss - pv.at2(r, g).max(floor).ln();
        }
        let rg = self.rg(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::NllRows {
                probs,
                gold: gold.to_vec(),
            },
            rg,
        ))
    }

    /// Negative log likelihood of one probability vector.
    pub fn nll_loss(&mut self, probs: Var, gold: usize) -> Result<Var> {
        if self.value(probs).shape().len() != 1 {
            return Err(Error::usage("nll_loss expects a probability vector"));
        }
        self.nll_rows(probs, &[gold])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Accumulates d(root)/d(leaf) into every gradient-requiring leaf.
    /// Repeated calls add to the existing leaf gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::usage(format!(
                "backward from a non-scalar node of shape {:?}",
                self.value(root).shape()
            )));
        }
        if !self.rg(root) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![T::one()]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.requires_grad[id] {
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
            if let Op::Leaf = self.ops[id] {
                let shape = self.values[id].shape().to_vec();
                match &mut self.leaf_grads[id] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, &b)| *a = *a + b),
                    slot => *slot = Some(Tensor::new(shape, g)?),
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let rg = &self.requires_grad;
        let vals = &self.values;
        match &self.ops[id] {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = &vals[x.0];
                let wv = &vals[w.0];
                let (m, k) = (wv.shape()[0], wv.shape()[1]);
                let r = xv.rows();
                let small = r <= SMALL_ROWS || m <= SMALL_ROWS;
                if rg[x.0] {
                    let gx = acc(grads, *x, r * k);
                    if small {
                        for (gr, gxr) in g.chunks(m).zip(gx.chunks_mut(k)) {
                            for (&d, wr) in gr.iter().zip(wv.data().chunks(k)) {
                                axpy(d, wr, gxr);
                            }
                        }
                    } else {
                        T::gemm(r, m, k, T::one(), g, m as isize, 1, wv.data(), k as isize, 1, T::one(), gx, k as isize, 1);
                    }
                }
                if rg[w.0] {
                    let gw = acc(grads, *w, m * k);
                    if small {
                        for (gr, xr) in g.chunks(m).zip(xv.data().chunks(k)) {
                            for (&d, gwr) in gr.iter().zip(gw.chunks_mut(k)) {
                                axpy(d, xr, gwr);
                            }
                        }
                    } else {
                        T::gemm(m, r, k, T::one(), g, 1, m as isize, xv.data(), k as isize, 1, T::one(), gw, k as isize, 1);
                    }
                }
                if let Some(b) = b {
                    if rg[b.0] {
                        let gb = acc(grads, *b, m);
                        for row in g.chunks(m) {
                            gb.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let av = &vals[a.0];
                let bv = &vals[b.0];
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if rg[a.0] {
                    let ga = acc(grads, *a, m * k);
                    T::gemm(m, n, k, T::one(), g, n as isize, 1, bv.data(), 1, n as isize, T::one(), ga, k as isize, 1);
                }
                if rg[b.0] {
                    let gb = acc(grads, *b, k * n);
                    T::gemm(k, m, n, T::one(), av.data(), 1, k as isize, g, n as isize, 1, T::one(), gb, n as isize, 1);
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if rg[v.0] {
                        add_into(acc(grads, *v, g.len()), g);
                    }
                }
            }
            Op::Sub { a, b } => {
                if rg[a.0] {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if rg[b.0] {
                    let gb = acc(grads, *b, g.len());
                    gb.iter_mut().zip(g).for_each(|(o, &d)| *o = *o - d);
                }
            }
            Op::Mul { a, b } => {
                if rg[a.0] {
                    let other = vals[b.0].data();
                    let ga = acc(grads, *a, g.len());
                    for ((o, &d), &y) in ga.iter_mut().zip(g).zip(other) {
                        *o = *o + d * y;
                    }
                }
                if rg[b.0] {
                    let other = vals[a.0].data();
                    let gb = acc(grads, *b, g.len());
                    for ((o, &d), &y) in gb.iter_mut().zip(g).zip(other) {
                        *o = *o + d * y;
                    }
                }
            }
            Op::ScaleShift { x, scale } => {
                if rg[x.0] {
                    let gx = acc(grads, *x, g.len());
                    gx.iter_mut().zip(g).for_each(|(o, &d)| *o = *o + *scale * d);
                }
            }
            Op::Activation { x, kind } => {
                if rg[x.0] {
                    let y = vals[id].data();
                    let xin = vals[x.0].data();
                    let gx = acc(grads, *x, g.len());
                    match kind {
                        Activation::Relu => {
                            for ((o, &d), &xi) in gx.iter_mut().zip(g).zip(xin) {
                                if xi > T::zero() {
                                    *o = *o + d;
                                }
                            }
                        }
                        Activation::Tanh => {
                            for ((o, &d), &yi) in gx.iter_mut().zip(g).zip(y) {
                                *o = *o + d * (T::one() - yi * yi);
                            }
                        }
                        Activation::Sigmoid => {
                            for ((o, &d), &yi) in gx.iter_mut().zip(g).zip(y) {
                                *o = *o + d * yi * (T::one() - yi);
                            }
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                if rg[x.0] {
                    let y = &vals[id];
                    let cols = y.cols();
                    let gx = acc(grads, *x, g.len());
                    for ((yr, gr), or) in y.data().chunks(cols).zip(g.chunks(cols)).zip(gx.chunks_mut(cols)) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((o, &yi), &gi) in or.iter_mut().zip(yr).zip(gr) {
                            *o = *o + yi * (gi - dot);
                        }
                    }
                }
            }
            Op::ConcatCols { a, b } => {
                let (ca, cb) = (vals[a.0].cols(), vals[b.0].cols());
                let both_vectors = vals[a.0].shape().len() == 1 && vals[b.0].shape().len() == 1;
                if both_vectors {
                    if rg[a.0] {
                        add_into(acc(grads, *a, ca), &g[..ca]);
                    }
                    if rg[b.0] {
                        add_into(acc(grads, *b, cb), &g[ca..]);
                    }
                } else {
                    let rows = vals[a.0].rows();
                    let w = ca + cb;
                    if rg[a.0] {
                        let ga = acc(grads, *a, rows * ca);
                        for r in 0..rows {
                            add_into(&mut ga[r * ca..(r + 1) * ca], &g[r * w..r * w + ca]);
                        }
                    }
                    if rg[b.0] {
                        let gb = acc(grads, *b, rows * cb);
                        for r in 0..rows {
                            add_into(&mut gb[r * cb..(r + 1) * cb], &g[r * w + ca..(r + 1) * w]);
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if rg[x.0] {
                    let xv = &vals[x.0];
                    let (rows, cols) = (xv.rows(), xv.cols());
                    let width = vals[id].cols();
                    let gx = acc(grads, *x, rows * cols);
                    for r in 0..rows {
                        add_into(
                            &mut gx[r * cols + start..r * cols + start + width],
                            &g[r * width..(r + 1) * width],
                        );
                    }
                }
            }
            Op::GatherRows { x, index } => {
                if rg[x.0] {
                    let xv = &vals[x.0];
                    let cols = xv.cols();
                    let gx = acc(grads, *x, xv.len());
                    for (k, &i) in index.iter().enumerate() {
                        add_into(&mut gx[i * cols..(i + 1) * cols], &g[k * cols..(k + 1) * cols]);
                    }
                }
            }
            Op::StackRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let len = vals[p.0].len();
                    if rg[p.0] {
                        add_into(acc(grads, *p, len), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::OuterSum { a, b } => {
                let (n, m, d) = (vals[a.0].rows(), vals[b.0].rows(), vals[a.0].cols());
                if rg[a.0] {
                    let ga = acc(grads, *a, n * d);
                    for i in 0..n {
                        for j in 0..m {
                            let row = (i * m + j) * d;
                            add_into(&mut ga[i * d..(i + 1) * d], &g[row..row + d]);
                        }
                    }
                }
                if rg[b.0] {
                    let gb = acc(grads, *b, m * d);
                    for i in 0..n {
                        for j in 0..m {
                            let row = (i * m + j) * d;
                            add_into(&mut gb[j * d..(j + 1) * d], &g[row..row + d]);
                        }
                    }
                }
            }
            Op::MaxPool { inputs, argmax } => {
                for (k, v) in inputs.iter().enumerate() {
                    if !rg[v.0] {
                        continue;
                    }
                    let gv = acc(grads, *v, g.len());
                    for ((o, &d), &a) in gv.iter_mut().zip(g).zip(argmax) {
                        if a as usize == k {
                            *o = *o + d;
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if rg[x.0] {
                    add_into(acc(grads, *x, g.len()), g);
                }
            }
            Op::NllRows { probs, gold } => {
                if rg[probs.0] {
                    let pv = &vals[probs.0];
                    let cols = pv.cols();
                    let floor = T::from_f64(NLL_FLOOR);
                    let gp = acc(grads, *probs, pv.len());
                    for (r, &c) in gold.iter().enumerate() {
                        let p = pv.at2(r, c);
                        if p > floor {
                            let o = &mut gp[r * cols + c];
                            *o = *o - g[0] / p;
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if rg[x.0] {
                    let gx = acc(grads, *x, vals[x.0].len());
                    gx.iter_mut().for_each(|o| *o = *o + g[0]);
                }
            }
        }
    }
}

fn acc<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(a, &b)| *a = *a + b);
}

/// Numerically stable softmax with max subtraction.
/// With this few input rows or output columns `linear` uses direct loops;
/// packing for the blocked kernel costs more than it saves.
const SMALL_ROWS: usize = 8;

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            lanes[l] = lanes[l] + x[l] * y[l];
        }
    }
    let tail = ra.iter().zip(rb).fold(T::zero(), |s, (&x, &y)| s + x * y);
    lanes.iter().fold(tail, |s, &v| s + v)
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    if alpha == T::zero() {
        return;
    }
    y.iter_mut().zip(x).for_each(|(o, &v)| *o = *o + alpha * v);
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn affine_identity_and_definition() {
        let mut tape = Tape::<f64>::new();
        let w = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let x = tape.constant(t(&[2], &[3.0, 4.0]));
        let b = tape.constant(t(&[2], &[0.0, 0.0]));
        let y = tape.affine(w, x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);

        let w = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[1], &[5.0]));
        let y = tape.affine(w, x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[16.0]);
    }

    #[test]
    fn affine_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let w = tape.constant(Tensor::zeros(&[2, 3]));
        let x = tape.constant(Tensor::zeros(&[4]));
        let b = tape.constant(Tensor::zeros(&[2]));
        match tape.affine(w, x, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn activations_on_reference_points() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let z = tape.constant(t(&[1], &[0.0]));
        let th = tape.tanh(z);
        let sg = tape.sigmoid(z);
        assert_eq!(tape.value(th).data(), &[0.0]);
        assert_eq!(tape.value(sg).data(), &[0.5]);
    }

    #[test]
    fn relu_gradient_is_zero_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_uniform_and_overflow_safe() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[4], &[0.0; 4]));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25; 4]);

        let x = tape.constant(t(&[2], &[1000.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        let p = tape.value(y).data();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300);

        let mut tape32 = Tape::<f32>::new();
        let x = tape32.constant(Tensor::vector(vec![1000.0f32, 0.0]));
        let y = tape32.softmax(x).unwrap();
        assert_eq!(tape32.value(y).data(), &[1.0, 0.0]);
    }

    #[test]
    fn maxpool_examples() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[1.0, 5.0]));
        let b = tape.constant(t(&[2], &[3.0, 2.0]));
        let m = tape.maxpool_set(&[a, b]).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0, 5.0]);
        let single = tape.maxpool_set(&[a]).unwrap();
        assert_eq!(tape.value(single).data(), tape.value(a).data());
        assert!(matches!(tape.maxpool_set(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn maxpool_ties_route_to_lowest_index() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(t(&[2], &[2.0, 1.0]));
        let b = tape.param(t(&[2], &[2.0, 1.0]));
        let m = tape.maxpool_set(&[a, b]).unwrap();
        let s = tape.sum(m);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 1.0]);
        assert!(tape.grad(b).is_none_or(|g| g.data() == [0.0, 0.0]));
    }

    #[test]
    fn concat_examples() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[1], &[1.0]));
        let b = tape.constant(t(&[2], &[2.0, 3.0]));
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
        let empty = tape.constant(Tensor::new(vec![0], vec![]).unwrap());
        let d = tape.concat(b, empty).unwrap();
        assert_eq!(tape.value(d).data(), &[2.0, 3.0]);
        let x = tape.constant(Tensor::zeros(&[3]));
        let y = tape.constant(Tensor::zeros(&[5]));
        let z = tape.concat(x, y).unwrap();
        assert_eq!(tape.value(z).shape(), &[8]);
    }

    #[test]
    fn nll_reference_values() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(t(&[4], &[1.0, 0.0, 0.0, 0.0]));
        let l = tape.nll_loss(p, 0).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);
        let u = tape.constant(t(&[4], &[0.25; 4]));
        for gold in 0..4 {
            let l = tape.nll_loss(u, gold).unwrap();
            assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-15);
        }
        assert!(matches!(tape.nll_loss(u, 4), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_of_sum_is_ones_and_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn softmax_nll_gradient_is_probs_minus_onehot() {
        let z = [0.3, -1.2, 2.0, 0.7];
        for gold in 0..4 {
            let mut tape = Tape::<f64>::new();
            let x = tape.param(t(&[4], &z));
            let p = tape.softmax(x).unwrap();
            let l = tape.nll_loss(p, gold).unwrap();
            tape.backward(l).unwrap();
            let probs = tape.value(p).data().to_vec();
            let g = tape.grad(x).unwrap().data();
            for c in 0..4 {
                let expected = probs[c] - if c == gold { 1.0 } else { 0.0 };
                assert!((g[c] - expected).abs() < 1e-14);
            }
        }
    }
}
