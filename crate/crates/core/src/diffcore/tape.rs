use std::rc::Rc;

use super::graph::{canonical_sum, Neighborhoods};
use super::param::{ParamId, ParamStore};
use super::tensor::{matrix_dims, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Pointwise unary functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    /// Negative-side slope in (0, 1). The derivative at exactly 0 is 1.
    LeakyRelu(f64),
}

/// Pointwise binary functions over equal shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    ScaleRows {
        x: Var,
        factors: Rc<[f64]>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Softmax(Var),
    Sum(Var),
    Mse {
        pred: Var,
        target: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Rc<[Option<usize>]>,
        probs: Vec<f64>,
        scale: f64,
    },
    Gather {
        table: Var,
        ids: Rc<[usize]>,
    },
    NeighborSoftmax {
        scores: Var,
        graph: Rc<Neighborhoods>,
    },
    NeighborSum {
        alpha: Var,
        msgs: Var,
        graph: Rc<Neighborhoods>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Linear record of forward operations, replayed in reverse for gradients.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A free input whose gradient is tracked.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Snapshot of a stored parameter. [`Tape::backward`] routes its gradient
    /// back into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
            requires_grad: true,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            &mut out,
            false,
        );
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(value, Op::MatMul { a, b, trans_b: false }, &[a, b]))
    }

    /// `a · bᵀ` for `a: [m x k]`, `b: [n x k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dim("matmul_nt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (1, k as isize),
            &mut out,
            false,
        );
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(value, Op::MatMul { a, b, trans_b: true }, &[a, b]))
    }

    /// Affine map applied row-wise: `x · wᵀ + b` with `w: [out x in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[1] {
            return Err(Error::dim("linear", &sx, &sw));
        }
        let (out_dim, in_dim) = (sw[0], sw[1]);
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(Error::dim("linear bias", self.shape(b), &[out_dim]));
            }
        }
        let (rows, _) = matrix_dims(&sx);
        let mut out = vec![0.0; rows * out_dim];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(out_dim.max(1)) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            rows,
            in_dim,
            out_dim,
            self.value(x).data(),
            (in_dim as isize, 1),
            self.value(w).data(),
            (1, in_dim as isize),
            &mut out,
            true,
        );
        let shape = if sx.len() == 1 {
            vec![out_dim]
        } else {
            vec![rows, out_dim]
        };
        let value = Tensor::from_parts(shape, out);
        let inputs: Vec<Var> = std::iter::once(x).chain(Some(w)).chain(b).collect();
        Ok(self.push(value, Op::Linear { x, w, b }, &inputs))
    }

    // ---- pointwise ----

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("elementwise", self.shape(a), self.shape(b)));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data: Vec<f64> = match op {
            Binary::Add => va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect(),
            Binary::Sub => va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect(),
            Binary::Mul => va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect(),
        };
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(value, Op::Binary(op, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Result<Var> {
        let f: Box<dyn Fn(f64) -> f64> = match op {
            Unary::Tanh => Box::new(f64::tanh),
            Unary::Sigmoid => Box::new(sigmoid),
            Unary::Exp => Box::new(f64::exp),
            Unary::LeakyRelu(slope) => {
                if !(slope > 0.0 && slope < 1.0) {
                    return Err(Error::Domain(format!("leaky_relu slope {slope} outside (0, 1)")));
                }
                Box::new(move |v| if v >= 0.0 { v } else { slope * v })
            }
        };
        let vx = self.value(x);
        let value = Tensor::from_parts(vx.shape().to_vec(), vx.data().iter().map(|&v| f(v)).collect());
        Ok(self.push(value, Op::Unary(op, x), &[x]))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x).expect("tanh is total")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x).expect("sigmoid is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x).expect("exp is total")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(Unary::LeakyRelu(slope), x)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let vx = self.value(x);
        let value = Tensor::from_parts(
            vx.shape().to_vec(),
            vx.data().iter().map(|&v| scale * v + shift).collect(),
        );
        self.push(value, Op::Affine { x, scale }, &[x])
    }

    /// Multiplies row `r` of `x` by the constant `factors[r]`.
    pub fn scale_rows(&mut self, x: Var, factors: &[f64]) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2();
        if factors.len() != rows {
            return Err(Error::dim("scale_rows", self.shape(x), &[factors.len()]));
        }
        let mut data = self.value(x).data().to_vec();
        for (r, f) in factors.iter().enumerate() {
            data[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v *= f);
        }
        let value = Tensor::from_parts(self.shape(x).to_vec(), data);
        Ok(self.push(
            value,
            Op::ScaleRows {
                x,
                factors: factors.into(),
            },
            &[x],
        ))
    }

    // ---- structural ----

    /// Joins along the last axis. Rank-1 inputs give rank-1 output; rank-2
    /// inputs must agree on the row count.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa.is_empty() || (sa.len() == 2 && sa[0] != sb[0]) {
            return Err(Error::dim("concat", &sa, &sb));
        }
        let (rows, ca) = matrix_dims(&sa);
        let cb = sb[sb.len() - 1];
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(&va[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&vb[r * cb..(r + 1) * cb]);
        }
        let shape = if sa.len() == 1 {
            vec![ca + cb]
        } else {
            vec![rows, ca + cb]
        };
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat { a, b }, &[a, b]))
    }

    /// Stacks rank-2 blocks with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let cols = self.value(first).cols();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(Error::dim("concat_rows", self.shape(first), s));
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_parts(vec![rows, cols], data);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (rows, cols) = matrix_dims(&s);
        if s.is_empty() || start + len > cols {
            return Err(Error::dim("slice_cols", &s, &[start, len]));
        }
        let v = self.value(x).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&v[r * cols + start..r * cols + start + len]);
        }
        let shape = if s.len() == 1 { vec![len] } else { vec![rows, len] };
        Ok(self.push(Tensor::from_parts(shape, data), Op::SliceCols { x, start }, &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start + len > s[0] {
            return Err(Error::dim("slice_rows", &s, &[start, len]));
        }
        let cols = s[1];
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        Ok(self.push(
            Tensor::from_parts(vec![len, cols], data),
            Op::SliceRows { x, start },
            &[x],
        ))
    }

    /// Row lookup into an embedding table `[vocab x dim]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("gather_rows", &s, &[]));
        }
        let (vocab, dim) = (s[0], s[1]);
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    what: "embedding row",
                    index: id,
                    bound: vocab,
                });
            }
            data.extend_from_slice(&t[id * dim..(id + 1) * dim]);
        }
        let value = Tensor::from_parts(vec![ids.len(), dim], data);
        Ok(self.push(value, Op::Gather { table, ids: ids.into() }, &[table]))
    }

    // ---- reductions and losses ----

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (rows, cols) = vx.dims2();
        if vx.is_empty() || cols == 0 {
            return Err(Error::Domain("softmax of an empty tensor".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(softmax_row(vx.row(r)));
        }
        let value = Tensor::from_parts(vx.shape().to_vec(), data);
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Mean of squared differences over all entries.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::dim("mse", self.shape(pred), self.shape(target)));
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let n = p.len().max(1) as f64;
        let loss = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }, &[pred, target]))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let rows = self.value(logits).rows();
        let t: Vec<Option<usize>> = targets.iter().copied().map(Some).collect();
        self.cross_entropy_masked(logits, &t, 1.0 / rows.max(1) as f64)
    }

    /// `scale * Σ_r -log softmax(logits_r)[target_r]`, skipping `None` rows.
    pub fn cross_entropy_masked(&mut self, logits: Var, targets: &[Option<usize>], scale: f64) -> Result<Var> {
        let vl = self.value(logits);
        let (rows, vocab) = vl.dims2();
        if targets.len() != rows {
            return Err(Error::dim("cross_entropy", vl.shape(), &[targets.len()]));
        }
        if vocab == 0 {
            return Err(Error::Domain("cross entropy over zero classes".into()));
        }
        let mut probs = Vec::with_capacity(rows * vocab);
        let mut loss = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let row = vl.row(r);
            let top = (0..vocab).fold(0, |best, i| if row[i] > row[best] { i } else { best });
            let max = row[top];
            // ln Σ exp(v - max) = ln(1 + rest), kept accurate when rest is tiny
            let rest: f64 = (0..vocab).filter(|&i| i != top).map(|i| (row[i] - max).exp()).sum();
            let log_norm = rest.ln_1p();
            let lse = max + log_norm;
            probs.extend(row.iter().map(|v| (v - lse).exp()));
            if let Some(t) = *target {
                if t >= vocab {
                    return Err(Error::Index {
                        what: "class",
                        index: t,
                        bound: vocab,
                    });
                }
                loss += (max - row[t]) + log_norm;
            }
        }
        let op = Op::CrossEntropy {
            logits,
            targets: targets.into(),
            probs,
            scale,
        };
        Ok(self.push(Tensor::scalar(scale * loss), op, &[logits]))
    }

    // ---- graph ops ----

    /// Per-receiver softmax of per-source scores `[n x 1]`.
    ///
    /// Output is indexed by edge: entry `e` in receiver `v`'s edge range is the
    /// weight of source `graph.sources()[e]` as heard by `v`.
    pub fn neighbor_softmax(&mut self, scores: Var, graph: &Rc<Neighborhoods>) -> Result<Var> {
        let vs = self.value(scores);
        if vs.len() != graph.num_nodes() {
            return Err(Error::dim("neighbor_softmax", vs.shape(), &[graph.num_nodes(), 1]));
        }
        let s = vs.data();
        let mut alpha = vec![0.0; graph.num_edges()];
        let mut buf = Vec::new();
        for v in 0..graph.num_nodes() {
            let range = graph.edge_range(v);
            if range.is_empty() {
                continue;
            }
            let srcs = graph.neighbors(v);
            let max = srcs.iter().map(|&u| s[u]).fold(f64::NEG_INFINITY, f64::max);
            buf.clear();
            buf.extend(srcs.iter().map(|&u| (s[u] - max).exp()));
            let mut terms = buf.clone();
            let denom = canonical_sum(&mut terms);
            for (slot, e) in alpha[range].iter_mut().zip(&buf) {
                *slot = e / denom;
            }
        }
        let value = Tensor::from_parts(vec![graph.num_edges()], alpha);
        Ok(self.push(
            value,
            Op::NeighborSoftmax {
                scores,
                graph: Rc::clone(graph),
            },
            &[scores],
        ))
    }

    /// `out_v = Σ_{e into v} alpha_e · msgs[source(e)]`; empty neighborhoods
    /// give zero rows.
    pub fn neighbor_sum(&mut self, alpha: Var, msgs: Var, graph: &Rc<Neighborhoods>) -> Result<Var> {
        let (va, vm) = (self.value(alpha), self.value(msgs));
        if va.len() != graph.num_edges() {
            return Err(Error::dim("neighbor_sum alpha", va.shape(), &[graph.num_edges()]));
        }
        let (rows, cols) = vm.dims2();
        if vm.rank() != 2 || rows != graph.num_nodes() {
            return Err(Error::dim("neighbor_sum msgs", vm.shape(), &[graph.num_nodes()]));
        }
        let (a, m) = (va.data(), vm.data());
        let mut out = vec![0.0; rows * cols];
        let mut terms = Vec::new();
        for v in 0..rows {
            let range = graph.edge_range(v);
            if range.is_empty() {
                continue;
            }
            for j in 0..cols {
                terms.clear();
                for e in range.clone() {
                    let u = graph.sources()[e];
                    terms.push(a[e] * m[u * cols + j]);
                }
                out[v * cols + j] = canonical_sum(&mut terms);
            }
        }
        let value = Tensor::from_parts(vec![rows, cols], out);
        Ok(self.push(
            value,
            Op::NeighborSum {
                alpha,
                msgs,
                graph: Rc::clone(graph),
            },
            &[alpha, msgs],
        ))
    }

    // ---- reverse pass ----

    /// Reverse accumulation from a scalar; returns gradients of all leaves.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // only leaves keep their gradients
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    /// Runs the reverse pass and adds parameter gradients into `store`.
    ///
    /// Gradients accumulate: call [`ParamStore::zero_grads`] between steps.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, &grads.grads[i]) {
                store.accumulate_grad(id, g);
            }
        }
        Ok(())
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = node.value.shape()[1];
                if let Some(da) = self.grad_slot(grads, *a) {
                    // dA = dC · Bᵀ (or dC · B when B was transposed)
                    let bs = if *trans_b { (k as isize, 1) } else { (1, n as isize) };
                    gemm(m, n, k, g, (n as isize, 1), vb.data(), bs, da, true);
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    if *trans_b {
                        // dB = dCᵀ · A, shape [n x k]
                        gemm(n, m, k, g, (1, n as isize), va.data(), (k as isize, 1), db, true);
                    } else {
                        // dB = Aᵀ · dC, shape [k x n]
                        gemm(k, m, n, va.data(), (1, k as isize), g, (n as isize, 1), db, true);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (out_dim, in_dim) = (vw.shape()[0], vw.shape()[1]);
                let rows = vx.rows();
                if let Some(dx) = self.grad_slot(grads, *x) {
                    gemm(
                        rows,
                        out_dim,
                        in_dim,
                        g,
                        (out_dim as isize, 1),
                        vw.data(),
                        (in_dim as isize, 1),
                        dx,
                        true,
                    );
                }
                if let Some(dw) = self.grad_slot(grads, *w) {
                    gemm(
                        out_dim,
                        rows,
                        in_dim,
                        g,
                        (1, out_dim as isize),
                        vx.data(),
                        (in_dim as isize, 1),
                        dw,
                        true,
                    );
                }
                if let Some(b) = b {
                    if let Some(db) = self.grad_slot(grads, *b) {
                        for row in g.chunks(out_dim.max(1)) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    }
                }
            }
            Op::Binary(op, a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                match op {
                    Binary::Add | Binary::Sub => {
                        if let Some(da) = self.grad_slot(grads, *a) {
                            da.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                        }
                        let sign = if *op == Binary::Add { 1.0 } else { -1.0 };
                        if let Some(db) = self.grad_slot(grads, *b) {
                            db.iter_mut().zip(g).for_each(|(d, v)| *d += sign * v);
                        }
                    }
                    Binary::Mul => {
                        if let Some(da) = self.grad_slot(grads, *a) {
                            for i in 0..g.len() {
                                da[i] += g[i] * vb[i];
                            }
                        }
                        if let Some(db) = self.grad_slot(grads, *b) {
                            for i in 0..g.len() {
                                db[i] += g[i] * va[i];
                            }
                        }
                    }
                }
            }
            Op::Unary(op, x) => {
                let out = node.value.data();
                let vx = self.value(*x).data();
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for i in 0..g.len() {
                        let local = match op {
                            Unary::Tanh => 1.0 - out[i] * out[i],
                            Unary::Sigmoid => out[i] * (1.0 - out[i]),
                            Unary::Exp => out[i],
                            Unary::LeakyRelu(slope) => {
                                if vx[i] >= 0.0 {
                                    1.0
                                } else {
                                    *slope
                                }
                            }
                        };
                        dx[i] += g[i] * local;
                    }
                }
            }
            Op::Affine { x, scale } => {
                if let Some(dx) = self.grad_slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, v)| *d += scale * v);
                }
            }
            Op::ScaleRows { x, factors } => {
                let cols = node.value.cols();
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for (r, f) in factors.iter().enumerate() {
                        for c in 0..cols {
                            dx[r * cols + c] += f * g[r * cols + c];
                        }
                    }
                }
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = node.value.rows();
                if let Some(da) = self.grad_slot(grads, *a) {
                    for r in 0..rows {
                        for c in 0..ca {
                            da[r * ca + c] += g[r * (ca + cb) + c];
                        }
                    }
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    for r in 0..rows {
                        for c in 0..cb {
                            db[r * cb + c] += g[r * (ca + cb) + ca + c];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(dp) = self.grad_slot(grads, *p) {
                        dp.iter_mut().zip(&g[offset..offset + len]).for_each(|(d, v)| *d += v);
                    }
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).cols();
                let (rows, len) = node.value.dims2();
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for r in 0..rows {
                        for c in 0..len {
                            dx[r * cols + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let cols = node.value.cols();
                if let Some(dx) = self.grad_slot(grads, *x) {
                    dx[start * cols..start * cols + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, v)| *d += v);
                }
            }
            Op::Gather { table, ids } => {
                let dim = node.value.cols();
                if let Some(dt) = self.grad_slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..dim {
                            dt[id * dim + c] += g[r * dim + c];
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let (rows, cols) = node.value.dims2();
                let y = node.value.data();
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            dx[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.grad_slot(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let k = 2.0 * g[0] / p.len().max(1) as f64;
                if let Some(dp) = self.grad_slot(grads, *pred) {
                    for i in 0..p.len() {
                        dp[i] += k * (p[i] - t[i]);
                    }
                }
                if let Some(dt) = self.grad_slot(grads, *target) {
                    for i in 0..p.len() {
                        dt[i] -= k * (p[i] - t[i]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                scale,
            } => {
                let vocab = self.value(*logits).cols();
                if let Some(dl) = self.grad_slot(grads, *logits) {
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        let k = g[0] * scale;
                        for c in 0..vocab {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            dl[r * vocab + c] += k * (probs[r * vocab + c] - onehot);
                        }
                    }
                }
            }
            Op::NeighborSoftmax { scores, graph } => {
                let alpha = node.value.data();
                if let Some(ds) = self.grad_slot(grads, *scores) {
                    for v in 0..graph.num_nodes() {
                        let range = graph.edge_range(v);
                        let dot: f64 = range.clone().map(|e| alpha[e] * g[e]).sum();
                        for e in range {
                            ds[graph.sources()[e]] += alpha[e] * (g[e] - dot);
                        }
                    }
                }
            }
            Op::NeighborSum { alpha, msgs, graph } => {
                let (a, m) = (self.value(*alpha).data(), self.value(*msgs).data());
                let cols = node.value.cols();
                let src = graph.sources();
                if let Some(da) = self.grad_slot(grads, *alpha) {
                    for v in 0..graph.num_nodes() {
                        for e in graph.edge_range(v) {
                            let u = src[e];
                            da[e] += (0..cols).map(|j| g[v * cols + j] * m[u * cols + j]).sum::<f64>();
                        }
                    }
                }
                if let Some(dm) = self.grad_slot(grads, *msgs) {
                    for v in 0..graph.num_nodes() {
                        for e in graph.edge_range(v) {
                            let u = src[e];
                            for j in 0..cols {
                                dm[u * cols + j] += a[e] * g[v * cols + j];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `c (m x n) [+]= a (m x k) · b (k x n)` with `(row, col)` strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover every element addressed by the given dims and
    // strides (asserted above), and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
