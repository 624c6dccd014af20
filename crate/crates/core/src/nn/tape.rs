//! A small reverse-mode automatic differentiation tape over 2-D matrices.
//!
//! Parameters are borrowed from their [`ParamStore`] rather than copied onto
//! the tape, so a forward pass costs no parameter clones. A tape is built
//! per sample and dropped after the backward pass.

use std::ptr;

use ndarray::{Array2, Axis, Zip};

use super::params::{ParamGrads, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    MeanRows(Var),
}

enum Value<'a> {
    Owned(Array2<f64>),
    Borrowed(&'a ParamStore),
}

struct Node<'a> {
    op: Op,
    value: Value<'a>,
}

pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match (&node.value, node.op) {
            (Value::Owned(a), _) => a,
            (Value::Borrowed(store), Op::Param(id)) => store.get(id),
            (Value::Borrowed(_), _) => unreachable!("borrowed value on a non-parameter node"),
        }
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1));
        a[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Value::Borrowed(store),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    /// `a` (n×k) plus the row vector `b` (1×k) broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.nrows(), 1, "add_row expects a row vector");
        let v = av + bv;
        self.push(Op::AddRow(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(Op::Scale(a, k), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), v)
    }

    /// Softmax within each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        self.push(Op::SoftmaxRows(a), v)
    }

    /// Softmax down each column (over rows), e.g. attention scores n×1.
    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut col in v.columns_mut() {
            let mut buf: Vec<f64> = col.to_vec();
            softmax_in_place(&mut buf);
            col.iter_mut().zip(buf).for_each(|(x, y)| *x = y);
        }
        self.push(Op::SoftmaxCols(a), v)
    }

    /// Column means: n×k → 1×k.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean over empty matrix")
            .insert_axis(Axis(0));
        self.push(Op::MeanRows(a), v)
    }

    /// `x · W + b` with `W` (in×out) and `b` (1×out).
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    /// Reverse pass from `output`, seeding its gradient with `seed` (same
    /// shape as the output).
    pub fn backward_with(&self, output: Var, seed: Array2<f64>) -> Gradients<'_, 'a> {
        self.backward_multi(vec![(output, seed)])
    }

    /// Backpropagates several seeded outputs at once; seeds on the same
    /// variable add up.
    pub fn backward_multi(&self, seeds: Vec<(Var, Array2<f64>)>) -> Gradients<'_, 'a> {
        let last = seeds.iter().map(|(v, _)| v.0 + 1).max().unwrap_or(0);
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; last];
        for (v, seed) in seeds {
            accumulate(&mut grads, v, seed);
        }
        for i in (0..last).rev() {
            let Some(g) = grads[i].take() else { continue };
            let op = self.nodes[i].op;
            match op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(b).t());
                    let gb = self.value(a).t().dot(&g);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g.clone());
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, gb);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(b);
                    let gb = &g * self.value(a);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Scale(a, k) => accumulate(&mut grads, a, &g * k),
                Op::Relu(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga)
                        .and(self.value(a))
                        .for_each(|d, &x| {
                            if x <= 0.0 {
                                *d = 0.0
                            }
                        });
                    accumulate(&mut grads, a, ga);
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(i));
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                    accumulate(&mut grads, a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = self.value(Var(i));
                    let mut ga = g.clone();
                    Zip::from(&mut ga).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads, a, ga);
                }
                Op::Transpose(a) => accumulate(&mut grads, a, g.t().to_owned()),
                Op::SoftmaxRows(a) => {
                    let y = self.value(Var(i));
                    let mut ga = Array2::zeros(y.raw_dim());
                    for ((mut out, yr), gr) in ga.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        Zip::from(&mut out)
                            .and(&yr)
                            .and(&gr)
                            .for_each(|o, &y, &d| *o = y * (d - dot));
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::SoftmaxCols(a) => {
                    let y = self.value(Var(i));
                    let mut ga = Array2::zeros(y.raw_dim());
                    for ((mut out, yc), gc) in ga
                        .columns_mut()
                        .into_iter()
                        .zip(y.columns())
                        .zip(g.columns())
                    {
                        let dot: f64 = yc.iter().zip(gc.iter()).map(|(a, b)| a * b).sum();
                        Zip::from(&mut out)
                            .and(&yc)
                            .and(&gc)
                            .for_each(|o, &y, &d| *o = y * (d - dot));
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::MeanRows(a) => {
                    let n = self.value(a).nrows();
                    let row = &g / n as f64;
                    let ga = row
                        .broadcast(self.value(a).raw_dim())
                        .expect("row broadcast")
                        .to_owned();
                    accumulate(&mut grads, a, ga);
                }
            }
            grads[i] = Some(g);
        }
        Gradients { tape: self, grads }
    }

    /// Reverse pass from a scalar (1×1) output with seed `d_output`.
    pub fn backward(&self, output: Var, d_output: f64) -> Gradients<'_, 'a> {
        self.backward_with(output, Array2::from_elem((1, 1), d_output))
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
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

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Result of a backward pass.
pub struct Gradients<'t, 'a> {
    tape: &'t Tape<'a>,
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients<'_, '_> {
    /// Gradient with respect to any node reached by the backward pass.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter of `store` touched on this tape.
    pub fn for_store(&self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        self.accumulate_into(store, &mut out);
        out
    }

    /// Like [`Gradients::for_store`] but moves the buffers out instead of copying.
    pub fn into_store(mut self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for (i, node) in self.tape.nodes.iter().enumerate() {
            if let (Op::Param(id), Value::Borrowed(owner)) = (node.op, &node.value) {
                if ptr::eq(*owner, store) {
                    if let Some(g) = self.grads.get_mut(i).and_then(Option::take) {
                        out.add_owned(id, g);
                    }
                }
            }
        }
        out
    }

    pub fn accumulate_into(&self, store: &ParamStore, out: &mut ParamGrads) {
        for (i, node) in self.tape.nodes.iter().enumerate() {
            if let (Op::Param(id), Value::Borrowed(owner)) = (node.op, &node.value) {
                if ptr::eq(*owner, store) {
                    if let Some(g) = self.grads.get(i).and_then(Option::as_ref) {
                        out.add(id, g);
                    }
                }
            }
        }
    }
}
