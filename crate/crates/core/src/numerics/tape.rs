//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive applied to a [`Var`] appends one node to its [`Tape`].
//! Nodes are stored in creation order, which is a topological order of the
//! computation, so [`Tape::backward`] is a single reverse sweep.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use super::NumericsError;

type Result<T> = std::result::Result<T, NumericsError>;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize),
    MaskedNll {
        x: usize,
        probs: Vec<f64>,
        targets: Vec<usize>,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Transpose(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Reshape(usize),
    Sum(usize),
    MeanRows(usize),
    MaxRows(usize, Vec<usize>),
    Dropout(usize, Vec<f64>),
    GatherRows(usize, Vec<usize>),
    SegmentMean(usize, Vec<Vec<usize>>),
    GatherCols(usize, Vec<usize>),
    ScatterCols(usize, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of primitive applications. Not `Sync`: one tape per forward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<BTreeMap<ParamId, usize>>,
    rng: RefCell<ChaCha8Rng>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    bound: BTreeMap<ParamId, usize>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of a bound parameter, if it took part in the computation.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.bound.get(&id).and_then(|&n| self.grads[n].as_ref())
    }

    /// `(parameter, gradient)` pairs in parameter order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.bound
            .iter()
            .filter_map(|(&p, &n)| self.grads[n].as_ref().map(|g| (p, g)))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_seed(0)
    }

    /// Tape whose dropout masks are drawn from a generator seeded with `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(BTreeMap::new()),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a stored parameter as a leaf; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&n) = self.bound.borrow().get(&id) {
            return Var { tape: self, id: n };
        }
        let var = self.leaf(store.get(id).clone());
        self.bound.borrow_mut().insert(id, var.id);
        var
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    pub fn backward(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Tensor::ones(nodes[output.id].value.shape()));
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients {
            grads,
            bound: self.bound.borrow().clone(),
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, contribution: Tensor) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let node = &nodes[id];
    let out = &node.value;
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].needs_grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (n, k, m) = (av.rows(), av.cols(), bv.cols());
            if wants(*a) {
                let mut ga = vec![0.0; n * k];
                matmul_nt_into(g.data(), bv.data(), &mut ga, n, m, k);
                accumulate(grads, nodes, *a, Tensor::matrix(n, k, ga));
            }
            if wants(*b) {
                let mut gb = vec![0.0; k * m];
                matmul_tn_into(av.data(), g.data(), &mut gb, n, k, m);
                accumulate(grads, nodes, *b, Tensor::matrix(k, m, gb));
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                accumulate(grads, nodes, *a, zip(g, val(*b), |x, y| x * y));
            }
            if wants(*b) {
                accumulate(grads, nodes, *b, zip(g, val(*a), |x, y| x * y));
            }
        }
        Op::AddRow(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            if wants(*b) {
                let c = g.cols();
                let mut gb = vec![0.0; c];
                for r in 0..g.rows() {
                    for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                accumulate(grads, nodes, *b, Tensor::matrix(1, c, gb));
            }
        }
        Op::MulCol(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (r, c) = (av.rows(), av.cols());
            if wants(*a) {
                let mut ga = g.clone();
                for i in 0..r {
                    let s = bv.data()[i];
                    for v in &mut ga.data_mut()[i * c..(i + 1) * c] {
                        *v *= s;
                    }
                }
                accumulate(grads, nodes, *a, ga);
            }
            if wants(*b) {
                let gb = (0..r)
                    .map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum())
                    .collect();
                accumulate(grads, nodes, *b, Tensor::matrix(r, 1, gb));
            }
        }
        Op::Scale(a, s) => accumulate(grads, nodes, *a, g.map(|v| v * s)),
        Op::Relu(a) => {
            let x = val(*a);
            accumulate(grads, nodes, *a, zip(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
        }
        Op::Sigmoid(a) => {
            accumulate(grads, nodes, *a, zip(g, out, |gv, y| gv * y * (1.0 - y)));
        }
        Op::Tanh(a) => {
            accumulate(grads, nodes, *a, zip(g, out, |gv, y| gv * (1.0 - y * y)));
        }
        Op::Softmax(a) => {
            let (r, c) = (out.rows(), out.cols());
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                let y = out.row(i);
                let gr = g.row(i);
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    gx[i * c + j] = y[j] * (gr[j] - dot);
                }
            }
            accumulate(grads, nodes, *a, Tensor::matrix(r, c, gx));
        }
        Op::MaskedNll { x, probs, targets } => {
            let xv = val(*x);
            let c = xv.cols();
            let scale = g.item();
            let mut gx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (r, &t) in targets.iter().enumerate() {
                gx[r * c + t] -= scale;
            }
            accumulate(grads, nodes, *x, Tensor::matrix(xv.rows(), c, gx));
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let (r, c) = (out.rows(), out.cols());
            let gain_v = val(*gain).data();
            if wants(*x) {
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let gr = g.row(i);
                    let xh = &xhat[i * c..(i + 1) * c];
                    let gxh: Vec<f64> = gr.iter().zip(gain_v).map(|(a, b)| a * b).collect();
                    let sum_g: f64 = gxh.iter().sum();
                    let sum_gx: f64 = gxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                    let n = c as f64;
                    for j in 0..c {
                        gx[i * c + j] = inv_std[i] / n * (n * gxh[j] - sum_g - xh[j] * sum_gx);
                    }
                }
                accumulate(grads, nodes, *x, Tensor::matrix(r, c, gx));
            }
            if wants(*gain) {
                let mut gg = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        gg[j] += g.get(i, j) * xhat[i * c + j];
                    }
                }
                accumulate(grads, nodes, *gain, Tensor::matrix(1, c, gg));
            }
            if wants(*bias) {
                let mut gb = vec![0.0; c];
                for i in 0..r {
                    for (acc, v) in gb.iter_mut().zip(g.row(i)) {
                        *acc += v;
                    }
                }
                accumulate(grads, nodes, *bias, Tensor::matrix(1, c, gb));
            }
        }
        Op::Transpose(a) => accumulate(grads, nodes, *a, g.transpose()),
        Op::ConcatCols(parts) => {
            let r = g.rows();
            let mut offset = 0;
            for &p in parts {
                let pc = val(p).cols();
                if wants(p) {
                    let mut gp = Vec::with_capacity(r * pc);
                    for i in 0..r {
                        gp.extend_from_slice(&g.row(i)[offset..offset + pc]);
                    }
                    accumulate(grads, nodes, p, Tensor::matrix(r, pc, gp));
                }
                offset += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let c = g.cols();
            let mut offset = 0;
            for &p in parts {
                let pr = val(p).rows();
                if wants(p) {
                    let gp = g.data()[offset * c..(offset + pr) * c].to_vec();
                    accumulate(grads, nodes, p, Tensor::matrix(pr, c, gp));
                }
                offset += pr;
            }
        }
        Op::SliceRows(a, start) => {
            let xv = val(*a);
            let c = xv.cols();
            let mut gx = Tensor::zeros(&[xv.rows(), c]);
            gx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
            accumulate(grads, nodes, *a, gx);
        }
        Op::SliceCols(a, start) => {
            let xv = val(*a);
            let (r, c) = (xv.rows(), xv.cols());
            let w = g.cols();
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                gx[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
            }
            accumulate(grads, nodes, *a, Tensor::matrix(r, c, gx));
        }
        Op::Reshape(a) => {
            let shape = val(*a).shape().to_vec();
            let gx = Tensor::new(shape, g.data().to_vec()).expect("reshape preserves length");
            accumulate(grads, nodes, *a, gx);
        }
        Op::Sum(a) => {
            let xv = val(*a);
            accumulate(grads, nodes, *a, Tensor::full(xv.shape(), g.item()));
        }
        Op::MeanRows(a) => {
            let xv = val(*a);
            let (r, c) = (xv.rows(), xv.cols());
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g.data()[j] / r as f64;
                }
            }
            accumulate(grads, nodes, *a, Tensor::matrix(r, c, gx));
        }
        Op::MaxRows(a, argmax) => {
            let xv = val(*a);
            let (r, c) = (xv.rows(), xv.cols());
            let mut gx = vec![0.0; r * c];
            for (j, &i) in argmax.iter().enumerate() {
                gx[i * c + j] += g.data()[j];
            }
            accumulate(grads, nodes, *a, Tensor::matrix(r, c, gx));
        }
        Op::Dropout(a, mask) => {
            let gx = g.data().iter().zip(mask).map(|(v, m)| v * m).collect();
            accumulate(grads, nodes, *a, Tensor::matrix(g.rows(), g.cols(), gx));
        }
        Op::GatherRows(a, ids) => {
            let xv = val(*a);
            let c = xv.cols();
            let mut gx = Tensor::zeros(&[xv.rows(), c]);
            for (r, &src) in ids.iter().enumerate() {
                for (acc, v) in gx.data_mut()[src * c..(src + 1) * c].iter_mut().zip(g.row(r)) {
                    *acc += v;
                }
            }
            accumulate(grads, nodes, *a, gx);
        }
        Op::SegmentMean(a, segments) => {
            let xv = val(*a);
            let c = xv.cols();
            let mut gx = Tensor::zeros(&[xv.rows(), c]);
            for (s, members) in segments.iter().enumerate() {
                let w = 1.0 / members.len() as f64;
                for &src in members {
                    for (acc, v) in gx.data_mut()[src * c..(src + 1) * c].iter_mut().zip(g.row(s)) {
                        *acc += v * w;
                    }
                }
            }
            accumulate(grads, nodes, *a, gx);
        }
        Op::GatherCols(a, idx) => {
            let xv = val(*a);
            let (r, c) = (xv.rows(), xv.cols());
            let k = g.cols();
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..k {
                    gx[i * c + idx[i * k + j]] += g.get(i, j);
                }
            }
            accumulate(grads, nodes, *a, Tensor::matrix(r, c, gx));
        }
        Op::ScatterCols(a, idx) => {
            let xv = val(*a);
            let (r, k) = (xv.rows(), xv.cols());
            let w = g.cols();
            let gx = (0..r * k)
                .map(|p| {
                    let i = p / k;
                    g.data()[i * w + idx[p]]
                })
                .collect();
            accumulate(grads, nodes, *a, Tensor::matrix(r, k, gx));
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same length")
}

fn shape_err(op: &'static str, left: &Tensor, right: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn check_mask(op: &'static str, x: &Tensor, mask: Option<&[bool]>) -> Result<()> {
    match mask {
        Some(m) if m.len() != x.len() => Err(NumericsError::ShapeMismatch {
            op,
            left: x.shape().to_vec(),
            right: vec![m.len()],
        }),
        _ => Ok(()),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn rows(&self) -> usize {
        self.with_value(Tensor::rows)
    }

    pub fn cols(&self) -> usize {
        self.with_value(Tensor::cols)
    }

    pub fn item(&self) -> f64 {
        self.with_value(Tensor::item)
    }

    fn unary(self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        let out = self.with_value(f);
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(out, op, needs)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        check: impl FnOnce(&Tensor, &Tensor) -> bool,
        f: impl FnOnce(&Tensor, &Tensor) -> Tensor,
        op: Op,
    ) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if !check(a, b) {
                return Err(shape_err(name, a, b));
            }
            f(a, b)
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(out, op, needs))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "matmul",
            |a, b| a.cols() == b.rows(),
            |a, b| {
                let (n, k, m) = (a.rows(), a.cols(), b.cols());
                let mut out = vec![0.0; n * m];
                matmul_into(a.data(), b.data(), &mut out, n, k, m);
                Tensor::matrix(n, m, out)
            },
            Op::MatMul(self.id, other.id),
        )
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "add",
            |a, b| a.shape() == b.shape(),
            |a, b| zip(a, b, |x, y| x + y),
            Op::Add(self.id, other.id),
        )
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "sub",
            |a, b| a.shape() == b.shape(),
            |a, b| zip(a, b, |x, y| x - y),
            Op::Sub(self.id, other.id),
        )
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "mul",
            |a, b| a.shape() == b.shape(),
            |a, b| zip(a, b, |x, y| x * y),
            Op::Mul(self.id, other.id),
        )
    }

    /// Adds a `1 x c` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            row,
            "add_row",
            |a, b| b.rows() == 1 && a.cols() == b.cols(),
            |a, b| {
                let c = a.cols();
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(p, x)| x + b.data()[p % c])
                    .collect();
                Tensor::matrix(a.rows(), c, data)
            },
            Op::AddRow(self.id, row.id),
        )
    }

    /// Scales row `i` by entry `i` of an `r x 1` column.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            col,
            "mul_col",
            |a, b| b.cols() == 1 && a.rows() == b.rows(),
            |a, b| {
                let c = a.cols();
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(p, x)| x * b.data()[p / c])
                    .collect();
                Tensor::matrix(a.rows(), c, data)
            },
            Op::MulCol(self.id, col.id),
        )
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |x| x.map(|v| v * s))
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(self) -> Var<'t> {
        // Shares the Scale backward rule: d(1 - x) = -dx.
        self.unary(Op::Scale(self.id, -1.0), |x| x.map(|v| 1.0 - v))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.map(|v| v.max(0.0)))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |x| x.map(sigmoid))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |x| x.map(f64::tanh))
    }

    /// Row-wise softmax. Masked entries (`false`) are exactly zero.
    pub fn softmax_rows(self, mask: Option<&[bool]>) -> Result<Var<'t>> {
        let out = self.with_value(|x| {
            check_mask("softmax_rows", x, mask)?;
            let (r, c) = (x.rows(), x.cols());
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                let row = x.row(i);
                let allowed = |j: usize| mask.map_or(true, |m| m[i * c + j]);
                let max = (0..c)
                    .filter(|&j| allowed(j))
                    .map(|j| row[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(NumericsError::FullyMaskedRow { row: i });
                }
                let mut total = 0.0;
                for j in (0..c).filter(|&j| allowed(j)) {
                    let e = (row[j] - max).exp();
                    data[i * c + j] = e;
                    total += e;
                }
                for v in &mut data[i * c..(i + 1) * c] {
                    *v /= total;
                }
            }
            Ok(Tensor::matrix(r, c, data))
        })?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Softmax(self.id), needs))
    }

    /// Sum over rows of `-log softmax(x_row)[target_row]`, restricted to the
    /// unmasked entries of each row. Returns a `1 x 1` value.
    pub fn masked_nll(self, mask: Option<&[bool]>, targets: &[usize]) -> Result<Var<'t>> {
        let (loss, probs) = self.with_value(|x| {
            check_mask("masked_nll", x, mask)?;
            let (r, c) = (x.rows(), x.cols());
            if targets.len() != r {
                return Err(NumericsError::InvalidArgument(format!(
                    "masked_nll: {} targets for {} rows",
                    targets.len(),
                    r
                )));
            }
            let mut probs = vec![0.0; r * c];
            let mut loss = 0.0;
            for (i, &t) in targets.iter().enumerate() {
                let allowed = |j: usize| mask.map_or(true, |m| m[i * c + j]);
                if t >= c || !allowed(t) {
                    return Err(NumericsError::InvalidArgument(format!(
                        "masked_nll: target {t} is not an allowed class in row {i}"
                    )));
                }
                let row = x.row(i);
                let max = (0..c)
                    .filter(|&j| allowed(j))
                    .map(|j| row[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in (0..c).filter(|&j| allowed(j)) {
                    let e = (row[j] - max).exp();
                    probs[i * c + j] = e;
                    total += e;
                }
                for v in &mut probs[i * c..(i + 1) * c] {
                    *v /= total;
                }
                loss += (max - row[t]) + total.ln();
            }
            Ok((loss, probs))
        })?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::MaskedNll {
                x: self.id,
                probs,
                targets: targets.to_vec(),
            },
            needs,
        ))
    }

    /// Per-row normalisation to zero mean and unit variance followed by an
    /// affine map; `gain` and `bias` are `1 x c`.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let (out, xhat, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (gv, bv) = (&nodes[gain.id].value, &nodes[bias.id].value);
            let c = x.cols();
            if gv.len() != c || bv.len() != c {
                return Err(shape_err("layer_norm", x, gv));
            }
            let r = x.rows();
            let mut xhat = vec![0.0; r * c];
            let mut inv_std = vec![0.0; r];
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                let row = x.row(i);
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std[i] = inv;
                for j in 0..c {
                    let h = (row[j] - mean) * inv;
                    xhat[i * c + j] = h;
                    out[i * c + j] = h * gv.data()[j] + bv.data()[j];
                }
            }
            (Tensor::matrix(r, c, out), xhat, inv_std)
        };
        let needs = self.tape.needs(&[self.id, gain.id, bias.id]);
        Ok(self.tape.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    pub fn transpose(self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), Tensor::transpose)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.with_value(|x| x.reshaped(shape))?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Reshape(self.id), needs))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let out = self.with_value(|x| {
            if start > end || end > x.rows() {
                return Err(NumericsError::IndexOutOfRange {
                    op: "slice_rows",
                    index: end,
                    bound: x.rows(),
                });
            }
            let c = x.cols();
            Ok(Tensor::matrix(end - start, c, x.data()[start * c..end * c].to_vec()))
        })?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::SliceRows(self.id, start), needs))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let out = self.with_value(|x| {
            if start > end || end > x.cols() {
                return Err(NumericsError::IndexOutOfRange {
                    op: "slice_cols",
                    index: end,
                    bound: x.cols(),
                });
            }
            let mut data = Vec::with_capacity(x.rows() * (end - start));
            for i in 0..x.rows() {
                data.extend_from_slice(&x.row(i)[start..end]);
            }
            Ok(Tensor::matrix(x.rows(), end - start, data))
        })?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::SliceCols(self.id, start), needs))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |x| Tensor::scalar(x.data().iter().sum()))
    }

    /// Mean over the row axis, `r x c -> 1 x c`.
    pub fn mean_rows(self) -> Var<'t> {
        self.unary(Op::MeanRows(self.id), |x| {
            let (r, c) = (x.rows(), x.cols());
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (acc, v) in out.iter_mut().zip(x.row(i)) {
                    *acc += v;
                }
            }
            for v in &mut out {
                *v /= r as f64;
            }
            Tensor::matrix(1, c, out)
        })
    }

    /// Maximum over the row axis, `r x c -> 1 x c`, with the winning row of
    /// each column. Ties go to the lowest row index.
    pub fn max_rows(self) -> (Var<'t>, Vec<usize>) {
        let (out, argmax) = self.with_value(|x| {
            let (r, c) = (x.rows(), x.cols());
            let mut best = vec![0usize; c];
            for i in 1..r {
                for j in 0..c {
                    if x.get(i, j) > x.get(best[j], j) {
                        best[j] = i;
                    }
                }
            }
            let vals = (0..c).map(|j| x.get(best[j], j)).collect();
            (Tensor::matrix(1, c, vals), best)
        });
        let needs = self.tape.needs(&[self.id]);
        let var = self.tape.push(out, Op::MaxRows(self.id, argmax.clone()), needs);
        (var, argmax)
    }

    /// Inverted dropout: identity when `train` is false or `rate` is zero.
    pub fn dropout(self, rate: f64, train: bool) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericsError::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !train || rate == 0.0 {
            return Ok(self);
        }
        let keep = 1.0 - rate;
        let n = self.with_value(Tensor::len);
        let mask: Vec<f64> = {
            let mut rng = self.tape.rng.borrow_mut();
            (0..n)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect()
        };
        let out = self.with_value(|x| {
            let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            Tensor::matrix(x.rows(), x.cols(), data)
        });
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::Dropout(self.id, mask), needs))
    }

    /// Embedding lookup: row `i` of the result is row `ids[i]` of `self`.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Var<'t>> {
        let out = self.with_value(|x| {
            let c = x.cols();
            let mut data = Vec::with_capacity(ids.len() * c);
            for &id in ids {
                if id >= x.rows() {
                    return Err(NumericsError::IndexOutOfRange {
                        op: "gather_rows",
                        index: id,
                        bound: x.rows(),
                    });
                }
                data.extend_from_slice(x.row(id));
            }
            Ok(Tensor::matrix(ids.len(), c, data))
        })?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::GatherRows(self.id, ids.to_vec()), needs))
    }

    /// Row `s` of the result is the mean of the rows listed in `segments[s]`.
    pub fn segment_mean(self, segments: &[Vec<usize>]) -> Result<Var<'t>> {
        let out = self.with_value(|x| {
            let c = x.cols();
            let mut data = vec![0.0; segments.len() * c];
            for (s, members) in segments.iter().enumerate() {
                if members.is_empty() {
                    return Err(NumericsError::InvalidArgument(format!(
                        "segment_mean: segment {s} is empty"
                    )));
                }
                let dst = &mut data[s * c..(s + 1) * c];
                for &src in members {
                    if src >= x.rows() {
                        return Err(NumericsError::IndexOutOfRange {
                            op: "segment_mean",
                            index: src,
                            bound: x.rows(),
                        });
                    }
                    for (acc, v) in dst.iter_mut().zip(x.row(src)) {
                        *acc += v;
                    }
                }
                let w = members.len() as f64;
                for v in dst.iter_mut() {
                    *v /= w;
                }
            }
            Ok(Tensor::matrix(segments.len(), c, data))
        })?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::SegmentMean(self.id, segments.to_vec()), needs))
    }

    /// `out[i][j] = self[i][idx[i * k + j]]` for an `r x k` index grid.
    pub fn gather_cols(self, idx: &[usize], k: usize) -> Result<Var<'t>> {
        let out = self.with_value(|x| {
            let (r, c) = (x.rows(), x.cols());
            if idx.len() != r * k {
                return Err(NumericsError::InvalidArgument(format!(
                    "gather_cols: index grid has {} entries, expected {}",
                    idx.len(),
                    r * k
                )));
            }
            let mut data = vec![0.0; r * k];
            for i in 0..r {
                for j in 0..k {
                    let col = idx[i * k + j];
                    if col >= c {
                        return Err(NumericsError::IndexOutOfRange {
                            op: "gather_cols",
                            index: col,
                            bound: c,
                        });
                    }
                    data[i * k + j] = x.get(i, col);
                }
            }
            Ok(Tensor::matrix(r, k, data))
        })?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::GatherCols(self.id, idx.to_vec()), needs))
    }

    /// Adjoint of [`Var::gather_cols`]: `out[i][idx[i * k + j]] += self[i][j]`,
    /// producing an `r x width` result.
    pub fn scatter_cols(self, idx: &[usize], width: usize) -> Result<Var<'t>> {
        let out = self.with_value(|x| {
            let (r, k) = (x.rows(), x.cols());
            if idx.len() != r * k {
                return Err(NumericsError::InvalidArgument(format!(
                    "scatter_cols: index grid has {} entries, expected {}",
                    idx.len(),
                    r * k
                )));
            }
            let mut data = vec![0.0; r * width];
            for i in 0..r {
                for j in 0..k {
                    let col = idx[i * k + j];
                    if col >= width {
                        return Err(NumericsError::IndexOutOfRange {
                            op: "scatter_cols",
                            index: col,
                            bound: width,
                        });
                    }
                    data[i * width + col] += x.get(i, j);
                }
            }
            Ok(Tensor::matrix(r, width, data))
        })?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::ScatterCols(self.id, idx.to_vec()), needs))
    }
}

/// Concatenates along the last dimension.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| NumericsError::InvalidArgument("concat_cols: no inputs".into()))?;
    let tape = first.tape;
    let out = {
        let nodes = tape.nodes.borrow();
        let r = nodes[first.id].value.rows();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let v = &nodes[p.id].value;
            if v.rows() != r {
                return Err(shape_err("concat_cols", &nodes[first.id].value, v));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(nodes[p.id].value.row(i));
            }
        }
        Tensor::matrix(r, total, data)
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let needs = tape.needs(&ids);
    Ok(tape.push(out, Op::ConcatCols(ids), needs))
}

/// Stacks row blocks with equal column counts.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| NumericsError::InvalidArgument("concat_rows: no inputs".into()))?;
    let tape = first.tape;
    let out = {
        let nodes = tape.nodes.borrow();
        let c = nodes[first.id].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = &nodes[p.id].value;
            if v.cols() != c {
                return Err(shape_err("concat_rows", &nodes[first.id].value, v));
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        Tensor::matrix(rows, c, data)
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let needs = tape.needs(&ids);
    Ok(tape.push(out, Op::ConcatRows(ids), needs))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows)
    }

    #[test]
    fn matmul_identity_and_orthogonal() {
        let tape = Tape::new();
        let i2 = tape.constant(Tensor::identity(2));
        let a = tape.constant(m(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        assert_eq!(i2.matmul(a).unwrap().value(), a.value());
        let r = tape.constant(m(&[vec![1.0, 0.0]]));
        let c = tape.constant(m(&[vec![0.0], vec![5.0]]));
        assert_eq!(r.matmul(c).unwrap().value(), m(&[vec![0.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let msg = a.matmul(b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::new();
        let x = tape.constant(m(&[vec![0.0, 0.0], vec![2f64.ln(), 0.0], vec![1e9, 0.0]]));
        let y = x.softmax_rows(None).unwrap().value();
        assert_eq!(y.row(0), &[0.5, 0.5]);
        assert!((y.get(1, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(y.row(2), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_masked_entries_are_zero_and_full_mask_errors() {
        let tape = Tape::new();
        let x = tape.constant(m(&[vec![1.0, 2.0, 3.0]]));
        let y = x.softmax_rows(Some(&[true, false, true])).unwrap().value();
        assert_eq!(y.get(0, 1), 0.0);
        assert!((y.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let err = x.softmax_rows(Some(&[false, false, false])).unwrap_err();
        assert!(matches!(err, NumericsError::FullyMaskedRow { row: 0 }));
    }

    #[test]
    fn layer_norm_examples() {
        let tape = Tape::new();
        let gain = tape.constant(Tensor::ones(&[1, 3]));
        let bias = tape.constant(Tensor::zeros(&[1, 3]));
        let x = tape.constant(m(&[vec![4.0, 4.0, 4.0]]));
        assert_eq!(x.layer_norm(gain, bias).unwrap().value().row(0), &[0.0, 0.0, 0.0]);
        let g2 = tape.constant(Tensor::ones(&[1, 2]));
        let b2 = tape.constant(Tensor::zeros(&[1, 2]));
        let y = tape.constant(m(&[vec![1.0, -1.0]])).layer_norm(g2, b2).unwrap().value();
        assert!((y.get(0, 0) - 1.0).abs() < 1e-5 && (y.get(0, 1) + 1.0).abs() < 1e-5);
    }

    #[test]
    fn pointwise_examples() {
        let tape = Tape::new();
        let x = tape.constant(m(&[vec![1.0, -1.0]]));
        assert_eq!(x.relu().value().row(0), &[1.0, 0.0]);
        assert_eq!(tape.constant(Tensor::scalar(0.0)).sigmoid().item(), 0.5);
        let d = x.dropout(0.3, false).unwrap();
        assert_eq!(d.id(), x.id());
        assert_eq!(d.value(), x.value());
    }

    #[test]
    fn max_rows_ties_go_to_lowest_index() {
        let tape = Tape::new();
        let x = tape.constant(m(&[vec![1.0, 5.0], vec![1.0, 2.0], vec![0.5, 5.0]]));
        let (v, idx) = x.max_rows();
        assert_eq!(v.value().row(0), &[1.0, 5.0]);
        assert_eq!(idx, vec![0, 0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(m(&[vec![3.0, -2.0]]));
        let y = x.add(x).unwrap().sum();
        let grads = tape.backward(y);
        assert_eq!(grads.get(x).unwrap().row(0), &[2.0, 2.0]);
    }

    #[test]
    fn forced_choice_nll_is_exactly_zero() {
        let tape = Tape::new();
        let x = tape.leaf(m(&[vec![0.3, -7.1, 2.5]]));
        let loss = x.masked_nll(Some(&[false, true, false]), &[1]).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn gather_and_scatter_are_adjoint() {
        let tape = Tape::new();
        let x = tape.constant(m(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]));
        let idx = [2, 0, 1, 1];
        let g = x.gather_cols(&idx, 2).unwrap().value();
        assert_eq!(g.to_rows(), vec![vec![3.0, 1.0], vec![5.0, 5.0]]);
        let y = tape.constant(m(&[vec![1.0, 1.0], vec![2.0, 3.0]]));
        let s = y.scatter_cols(&idx, 3).unwrap().value();
        assert_eq!(s.to_rows(), vec![vec![1.0, 0.0, 1.0], vec![0.0, 5.0, 0.0]]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(m(&[vec![1.0]]));
        let x = tape.leaf(m(&[vec![2.0]]));
        let grads = tape.backward(c.mul(x).unwrap());
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item(), 1.0);
    }
}
