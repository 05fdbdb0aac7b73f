use std::cell::RefCell;

use crate::error::{Result, TcglError};
use crate::numcore::tensor::Tensor;

/// Elementwise operation kinds exposed by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Elem { kind: ElemKind, broadcast: bool },
    Matmul,
    Relu,
    SoftmaxCrossEntropy { target: usize },
    L2Normalize,
    Conv3d,
    SubTemporalMean,
    GlobalAvgPool,
    Row { index: usize },
    StackRows,
    ConcatVec,
    Dot,
    Exp,
    Log,
    Scale { factor: f64 },
    SumAll,
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
    tracked: bool,
}

/// Handle to a tensor on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var {
    id: usize,
}

/// Gradients produced by a reverse pass, indexed by tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient accumulated at `var`, or None when the node was not tracked.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

/// Single-threaded computation record. Nodes are appended in topological
/// order; replaying the record reproduces identical forward values.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, inputs: Vec<usize>, value: Tensor) -> Var {
        let tracked = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].tracked)
        };
        self.push_with_tracked(op, inputs, value, tracked)
    }

    fn push_with_tracked(&self, op: Op, inputs: Vec<usize>, value: Tensor, tracked: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, inputs, value, tracked });
        Var { id: nodes.len() - 1 }
    }

    pub fn value(&self, var: Var) -> Tensor {
        self.nodes.borrow()[var.id].value.clone()
    }

    pub fn shape(&self, var: Var) -> Vec<usize> {
        self.nodes.borrow()[var.id].value.shape.clone()
    }

    pub fn scalar_value(&self, var: Var) -> f64 {
        self.nodes.borrow()[var.id].value.scalar_value()
    }

    /// Insert a gradient-tracked leaf (a parameter).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push_with_tracked(Op::Leaf, vec![], value, true)
    }

    /// Insert a constant leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_with_tracked(Op::Leaf, vec![], value, false)
    }

    /// Elementwise add/sub/mul. Shapes must match exactly, or `b` may be a
    /// vector broadcast along the last axis of `a`.
    pub fn elementwise(&self, a: Var, b: Var, kind: ElemKind) -> Result<Var> {
        let (value, broadcast) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let tb = &nodes[b.id].value;
            if ta.shape == tb.shape {
                let data = ta
                    .data
                    .iter()
                    .zip(&tb.data)
                    .map(|(x, y)| apply_elem(kind, *x, *y))
                    .collect();
                (Tensor::new(ta.shape.clone(), data), false)
            } else if tb.shape.len() == 1
                && !ta.shape.is_empty()
                && *ta.shape.last().unwrap() == tb.shape[0]
            {
                let cols = tb.shape[0];
                let data = ta
                    .data
                    .iter()
                    .enumerate()
                    .map(|(i, x)| apply_elem(kind, *x, tb.data[i % cols]))
                    .collect();
                (Tensor::new(ta.shape.clone(), data), true)
            } else {
                return Err(TcglError::ShapeMismatch(format!(
                    "elementwise {:?}: {:?} vs {:?}",
                    kind, ta.shape, tb.shape
                )));
            }
        };
        Ok(self.push(Op::Elem { kind, broadcast }, vec![a.id, b.id], value))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElemKind::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElemKind::Sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElemKind::Mul)
    }

    /// Matrix product of a `[M,K]` and a `[K,N]` tensor.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let tb = &nodes[b.id].value;
            if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
                return Err(TcglError::ShapeMismatch(format!(
                    "matmul: {:?} x {:?}",
                    ta.shape, tb.shape
                )));
            }
            matmul_raw(ta, tb)
        };
        Ok(self.push(Op::Matmul, vec![a.id, b.id], value))
    }

    pub fn relu(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            Tensor::new(t.shape.clone(), t.data.iter().map(|v| v.max(0.0)).collect())
        };
        self.push(Op::Relu, vec![x.id], value)
    }

    /// -log(softmax(logits)[target]) with max-subtraction for stability.
    pub fn softmax_cross_entropy(&self, logits: Var, target: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[logits.id].value;
            if t.shape.len() != 1 || t.shape[0] < 2 {
                return Err(TcglError::ShapeMismatch(format!(
                    "softmax_cross_entropy expects a logits vector of length >= 2, got {:?}",
                    t.shape
                )));
            }
            if target >= t.shape[0] {
                return Err(TcglError::TargetOutOfRange { target, classes: t.shape[0] });
            }
            let probs = softmax_raw(&t.data);
            Tensor::scalar(-probs[target].ln())
        };
        Ok(self.push(Op::SoftmaxCrossEntropy { target }, vec![logits.id], value))
    }

    /// Softmax probabilities of a logits vector (forward-only helper).
    pub fn softmax_probs(&self, logits: Var) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        softmax_raw(&nodes[logits.id].value.data)
    }

    /// x / ||x||2 for a vector; errors on near-zero norm.
    pub fn l2_normalize(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            if t.shape.len() != 1 {
                return Err(TcglError::ShapeMismatch(format!(
                    "l2_normalize expects a vector, got {:?}",
                    t.shape
                )));
            }
            let norm = t.data.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= crate::numcore::EPS_NORM {
                return Err(TcglError::DegenerateInput(format!(
                    "l2_normalize: norm {norm} below threshold"
                )));
            }
            Tensor::new(t.shape.clone(), t.data.iter().map(|v| v / norm).collect())
        };
        Ok(self.push(Op::L2Normalize, vec![x.id], value))
    }

    /// 3D convolution, stride 1, zero same-padding. Input `[C,L,H,W]`,
    /// kernel `[O,C,t,d,d]` with t, d odd, output `[O,L,H,W]`.
    pub fn conv3d(&self, input: Var, kernel: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let ti = &nodes[input.id].value;
            let tk = &nodes[kernel.id].value;
            conv3d_check(&ti.shape, &tk.shape)?;
            conv3d_forward(ti, tk)
        };
        Ok(self.push(Op::Conv3d, vec![input.id, kernel.id], value))
    }

    /// Subtract the temporal mean from every frame of a `[C,L,H,W]` tensor.
    pub fn sub_temporal_mean(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            if t.shape.len() != 4 {
                return Err(TcglError::ShapeMismatch(format!(
                    "sub_temporal_mean expects [C,L,H,W], got {:?}",
                    t.shape
                )));
            }
            sub_temporal_mean_raw(t)
        };
        Ok(self.push(Op::SubTemporalMean, vec![x.id], value))
    }

    /// Global spatiotemporal average pooling: `[C,L,H,W]` -> `[C]`.
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            if t.shape.len() != 4 {
                return Err(TcglError::ShapeMismatch(format!(
                    "global_avg_pool expects [C,L,H,W], got {:?}",
                    t.shape
                )));
            }
            let (c, rest) = (t.shape[0], t.shape[1] * t.shape[2] * t.shape[3]);
            let mut out = vec![0.0; c];
            for ci in 0..c {
                out[ci] = t.data[ci * rest..(ci + 1) * rest].iter().sum::<f64>() / rest as f64;
            }
            Tensor::vector(out)
        };
        Ok(self.push(Op::GlobalAvgPool, vec![x.id], value))
    }

    /// Extract row `index` of a matrix as a vector.
    pub fn row(&self, x: Var, index: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            if t.shape.len() != 2 || index >= t.shape[0] {
                return Err(TcglError::ShapeMismatch(format!(
                    "row {} of {:?}",
                    index, t.shape
                )));
            }
            let cols = t.shape[1];
            Tensor::vector(t.data[index * cols..(index + 1) * cols].to_vec())
        };
        Ok(self.push(Op::Row { index }, vec![x.id], value))
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&self, rows: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            if rows.is_empty() {
                return Err(TcglError::ShapeMismatch("stack_rows of nothing".into()));
            }
            let cols = nodes[rows[0].id].value.shape.clone();
            if cols.len() != 1 {
                return Err(TcglError::ShapeMismatch("stack_rows expects vectors".into()));
            }
            let cols = cols[0];
            let mut data = Vec::with_capacity(rows.len() * cols);
            for r in rows {
                let t = &nodes[r.id].value;
                if t.shape != vec![cols] {
                    return Err(TcglError::ShapeMismatch(format!(
                        "stack_rows: {:?} vs [{}]",
                        t.shape, cols
                    )));
                }
                data.extend_from_slice(&t.data);
            }
            Tensor::matrix(rows.len(), cols, data)
        };
        Ok(self.push(Op::StackRows, rows.iter().map(|v| v.id).collect(), value))
    }

    /// Concatenate vectors (or scalars) into one vector.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let mut data = Vec::new();
            for p in parts {
                let t = &nodes[p.id].value;
                if t.shape.len() > 1 {
                    return Err(TcglError::ShapeMismatch(
                        "concat expects scalars or vectors".into(),
                    ));
                }
                data.extend_from_slice(&t.data);
            }
            Tensor::vector(data)
        };
        Ok(self.push(Op::ConcatVec, parts.iter().map(|v| v.id).collect(), value))
    }

    /// Dot product of two equal-length vectors.
    pub fn dot(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let tb = &nodes[b.id].value;
            if ta.shape.len() != 1 || ta.shape != tb.shape {
                return Err(TcglError::ShapeMismatch(format!(
                    "dot: {:?} vs {:?}",
                    ta.shape, tb.shape
                )));
            }
            Tensor::scalar(ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).sum())
        };
        Ok(self.push(Op::Dot, vec![a.id, b.id], value))
    }

    pub fn exp(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            Tensor::new(t.shape.clone(), t.data.iter().map(|v| v.exp()).collect())
        };
        self.push(Op::Exp, vec![x.id], value)
    }

    pub fn log(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            Tensor::new(t.shape.clone(), t.data.iter().map(|v| v.ln()).collect())
        };
        self.push(Op::Log, vec![x.id], value)
    }

    pub fn scale(&self, x: Var, factor: f64) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            Tensor::new(t.shape.clone(), t.data.iter().map(|v| v * factor).collect())
        };
        self.push(Op::Scale { factor }, vec![x.id], value)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            Tensor::scalar(nodes[x.id].value.data.iter().sum())
        };
        self.push(Op::SumAll, vec![x.id], value)
    }

    /// Sum a list of scalars.
    pub fn sum_scalars(&self, parts: &[Var]) -> Result<Var> {
        let v = self.concat(parts)?;
        Ok(self.sum_all(v))
    }

    /// Affine map of a vector: x.W + b, with `w` of shape [in, out].
    pub fn affine_vec(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let row = self.stack_rows(&[x])?;
        let mm = self.matmul(row, w)?;
        let sum = self.add(mm, b)?;
        self.row(sum, 0)
    }

    /// Reverse pass from a scalar loss. Gradients accumulate additively
    /// across fan-out; untracked subgraphs are skipped.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.data.len() != 1 {
            return Err(TcglError::ShapeMismatch(format!(
                "backward expects a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::new(
            nodes[loss.id].value.shape.clone(),
            vec![1.0],
        ));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.tracked {
                continue;
            }
            let gout = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            backward_node(node, &nodes, &gout, &mut grads);
            grads[id] = Some(gout);
        }
        Ok(Gradients { grads })
    }
}

fn apply_elem(kind: ElemKind, a: f64, b: f64) -> f64 {
    match kind {
        ElemKind::Add => a + b,
        ElemKind::Sub => a - b,
        ElemKind::Mul => a * b,
    }
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], update: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| Tensor::zeros(shape.to_vec()));
    update(&mut g.data);
}

fn backward_node(node: &Node, nodes: &[Node], gout: &Tensor, grads: &mut Vec<Option<Tensor>>) {
    let input_tracked = |i: usize| nodes[node.inputs[i]].tracked;
    match &node.op {
        Op::Leaf => {}
        Op::Elem { kind, broadcast } => {
            let (a, b) = (node.inputs[0], node.inputs[1]);
            let ta = &nodes[a].value;
            let tb = &nodes[b].value;
            if input_tracked(0) {
                accumulate(&mut grads[a], &ta.shape, |g| match kind {
                    ElemKind::Add | ElemKind::Sub => {
                        for (gi, go) in g.iter_mut().zip(&gout.data) {
                            *gi += go;
                        }
                    }
                    ElemKind::Mul => {
                        if *broadcast {
                            let cols = tb.data.len();
                            for (i, go) in gout.data.iter().enumerate() {
                                g[i] += go * tb.data[i % cols];
                            }
                        } else {
                            for (i, go) in gout.data.iter().enumerate() {
                                g[i] += go * tb.data[i];
                            }
                        }
                    }
                });
            }
            if input_tracked(1) {
                let sign = if *kind == ElemKind::Sub { -1.0 } else { 1.0 };
                accumulate(&mut grads[b], &tb.shape, |g| match kind {
                    ElemKind::Add | ElemKind::Sub => {
                        if *broadcast {
                            let cols = tb.data.len();
                            for (i, go) in gout.data.iter().enumerate() {
                                g[i % cols] += sign * go;
                            }
                        } else {
                            for (gi, go) in g.iter_mut().zip(&gout.data) {
                                *gi += sign * go;
                            }
                        }
                    }
                    ElemKind::Mul => {
                        if *broadcast {
                            let cols = tb.data.len();
                            for (i, go) in gout.data.iter().enumerate() {
                                g[i % cols] += go * ta.data[i];
                            }
                        } else {
                            for (i, go) in gout.data.iter().enumerate() {
                                g[i] += go * ta.data[i];
                            }
                        }
                    }
                });
            }
        }
        Op::Matmul => {
            let (a, b) = (node.inputs[0], node.inputs[1]);
            let ta = &nodes[a].value;
            let tb = &nodes[b].value;
            let (m, k) = (ta.shape[0], ta.shape[1]);
            let n = tb.shape[1];
            // dA = dC . B^T, dB = A^T . dC
            if input_tracked(0) {
                accumulate(&mut grads[a], &ta.shape, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            let go = gout.data[i * n + j];
                            if go == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                g[i * k + kk] += go * tb.data[kk * n + j];
                            }
                        }
                    }
                });
            }
            if input_tracked(1) {
                accumulate(&mut grads[b], &tb.shape, |g| {
                    for i in 0..m {
                        for kk in 0..k {
                            let av = ta.data[i * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                g[kk * n + j] += av * gout.data[i * n + j];
                            }
                        }
                    }
                });
            }
        }
        Op::Relu => {
            let x = node.inputs[0];
            let tx = &nodes[x].value;
            if input_tracked(0) {
                // gradient 0 at x == 0 (documented tie-break)
                accumulate(&mut grads[x], &tx.shape, |g| {
                    for (i, go) in gout.data.iter().enumerate() {
                        if tx.data[i] > 0.0 {
                            g[i] += go;
                        }
                    }
                });
            }
        }
        Op::SoftmaxCrossEntropy { target } => {
            let x = node.inputs[0];
            let tx = &nodes[x].value;
            if input_tracked(0) {
                let probs = softmax_raw(&tx.data);
                let go = gout.data[0];
                accumulate(&mut grads[x], &tx.shape, |g| {
                    for (i, p) in probs.iter().enumerate() {
                        let one_hot = if i == *target { 1.0 } else { 0.0 };
                        g[i] += go * (p - one_hot);
                    }
                });
            }
        }
        Op::L2Normalize => {
            let x = node.inputs[0];
            let tx = &nodes[x].value;
            if input_tracked(0) {
                let norm = tx.data.iter().map(|v| v * v).sum::<f64>().sqrt();
                let y = &node.value.data;
                let gy: f64 = gout.data.iter().zip(y.iter()).map(|(g, yi)| g * yi).sum();
                accumulate(&mut grads[x], &tx.shape, |g| {
                    for i in 0..g.len() {
                        g[i] += (gout.data[i] - gy * y[i]) / norm;
                    }
                });
            }
        }
        Op::Conv3d => {
            let (xin, kin) = (node.inputs[0], node.inputs[1]);
            let ti = &nodes[xin].value;
            let tk = &nodes[kin].value;
            if input_tracked(0) {
                accumulate(&mut grads[xin], &ti.shape, |g| {
                    conv3d_backward_input(tk, gout, &ti.shape, g);
                });
            }
            if input_tracked(1) {
                accumulate(&mut grads[kin], &tk.shape, |g| {
                    conv3d_backward_kernel(ti, gout, &tk.shape, g);
                });
            }
        }
        Op::SubTemporalMean => {
            let x = node.inputs[0];
            let tx = &nodes[x].value;
            if input_tracked(0) {
                // out = (I - mean_t) x and the operator is symmetric, so
                // grad_in = gout - temporal_mean(gout)
                let gmean = sub_temporal_mean_raw(gout);
                accumulate(&mut grads[x], &tx.shape, |g| {
                    for (gi, gv) in g.iter_mut().zip(&gmean.data) {
                        *gi += gv;
                    }
                });
            }
        }
        Op::GlobalAvgPool => {
            let x = node.inputs[0];
            let tx = &nodes[x].value;
            if input_tracked(0) {
                let rest = tx.shape[1] * tx.shape[2] * tx.shape[3];
                accumulate(&mut grads[x], &tx.shape, |g| {
                    for c in 0..tx.shape[0] {
                        let gc = gout.data[c] / rest as f64;
                        for v in &mut g[c * rest..(c + 1) * rest] {
                            *v += gc;
                        }
                    }
                });
            }
        }
        Op::Row { index } => {
            let x = node.inputs[0];
            let tx = &nodes[x].value;
            if input_tracked(0) {
                let cols = tx.shape[1];
                accumulate(&mut grads[x], &tx.shape, |g| {
                    for (j, go) in gout.data.iter().enumerate() {
                        g[index * cols + j] += go;
                    }
                });
            }
        }
        Op::StackRows => {
            let cols = node.value.shape[1];
            for (r, &inp) in node.inputs.iter().enumerate() {
                if nodes[inp].tracked {
                    let shape = nodes[inp].value.shape.clone();
                    accumulate(&mut grads[inp], &shape, |g| {
                        for j in 0..cols {
                            g[j] += gout.data[r * cols + j];
                        }
                    });
                }
            }
        }
        Op::ConcatVec => {
            let mut offset = 0;
            for &inp in &node.inputs {
                let len = nodes[inp].value.data.len();
                if nodes[inp].tracked {
                    let shape = nodes[inp].value.shape.clone();
                    accumulate(&mut grads[inp], &shape, |g| {
                        for j in 0..len {
                            g[j] += gout.data[offset + j];
                        }
                    });
                }
                offset += len;
            }
        }
        Op::Dot => {
            let (a, b) = (node.inputs[0], node.inputs[1]);
            let ta = &nodes[a].value;
            let tb = &nodes[b].value;
            let go = gout.data[0];
            if input_tracked(0) {
                accumulate(&mut grads[a], &ta.shape, |g| {
                    for (gi, bv) in g.iter_mut().zip(&tb.data) {
                        *gi += go * bv;
                    }
                });
            }
            if input_tracked(1) {
                accumulate(&mut grads[b], &tb.shape, |g| {
                    for (gi, av) in g.iter_mut().zip(&ta.data) {
                        *gi += go * av;
                    }
                });
            }
        }
        Op::Exp => {
            let x = node.inputs[0];
            if input_tracked(0) {
                let shape = nodes[x].value.shape.clone();
                accumulate(&mut grads[x], &shape, |g| {
                    for (i, go) in gout.data.iter().enumerate() {
                        g[i] += go * node.value.data[i];
                    }
                });
            }
        }
        Op::Log => {
            let x = node.inputs[0];
            let tx = &nodes[x].value;
            if input_tracked(0) {
                accumulate(&mut grads[x], &tx.shape, |g| {
                    for (i, go) in gout.data.iter().enumerate() {
                        g[i] += go / tx.data[i];
                    }
                });
            }
        }
        Op::Scale { factor } => {
            let x = node.inputs[0];
            if input_tracked(0) {
                let shape = nodes[x].value.shape.clone();
                accumulate(&mut grads[x], &shape, |g| {
                    for (gi, go) in g.iter_mut().zip(&gout.data) {
                        *gi += factor * go;
                    }
                });
            }
        }
        Op::SumAll => {
            let x = node.inputs[0];
            if input_tracked(0) {
                let shape = nodes[x].value.shape.clone();
                let go = gout.data[0];
                accumulate(&mut grads[x], &shape, |g| {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                });
            }
        }
    }
}

fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a.data[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::matrix(m, n, out)
}

fn softmax_raw(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn sub_temporal_mean_raw(t: &Tensor) -> Tensor {
    let (c, l, h, w) = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
    let frame = h * w;
    let mut out = t.data.clone();
    for ci in 0..c {
        let base = ci * l * frame;
        for px in 0..frame {
            // anchor the mean at frame 0 so a temporally constant pixel
            // cancels exactly instead of leaving rounding residue
            let anchor = t.data[base + px];
            let mut dev = 0.0;
            for z in 0..l {
                dev += t.data[base + z * frame + px] - anchor;
            }
            let mean = anchor + dev / l as f64;
            for z in 0..l {
                out[base + z * frame + px] -= mean;
            }
        }
    }
    Tensor::new(t.shape.clone(), out)
}

fn conv3d_check(in_shape: &[usize], k_shape: &[usize]) -> Result<()> {
    if in_shape.len() != 4 || k_shape.len() != 5 {
        return Err(TcglError::ShapeMismatch(format!(
            "conv3d expects input [C,L,H,W] and kernel [O,C,t,d,d], got {:?} / {:?}",
            in_shape, k_shape
        )));
    }
    let (c, l, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (kc, t, d1, d2) = (k_shape[1], k_shape[2], k_shape[3], k_shape[4]);
    if kc != c || d1 != d2 {
        return Err(TcglError::ShapeMismatch(format!(
            "conv3d kernel {:?} incompatible with input {:?}",
            k_shape, in_shape
        )));
    }
    if t % 2 == 0 || d1 % 2 == 0 {
        return Err(TcglError::InvalidConfig(format!(
            "conv3d kernel sizes must be odd, got t={t}, d={d1}"
        )));
    }
    // kernels larger than the input are fine: zero same-padding covers the
    // taps that fall outside
    let _ = (l, h, w);
    Ok(())
}

fn conv3d_forward(input: &Tensor, kernel: &Tensor) -> Tensor {
    let (c, l, h, w) = (input.shape[0], input.shape[1], input.shape[2], input.shape[3]);
    let (o, t, d) = (kernel.shape[0], kernel.shape[2], kernel.shape[3]);
    let mut out = Tensor::zeros(vec![o, l, h, w]);
    conv3d_accumulate(
        c, l, h, w, o, t, d,
        |oi, ci, kt, ky, kx| kernel.data[(((oi * c + ci) * t + kt) * d + ky) * d + kx],
        |weight, in_idx, out_idx| {
            out.data[out_idx] += weight * input.data[in_idx];
        },
    );
    out
}

fn conv3d_backward_input(kernel: &Tensor, gout: &Tensor, in_shape: &[usize], gin: &mut [f64]) {
    let (c, l, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (o, t, d) = (kernel.shape[0], kernel.shape[2], kernel.shape[3]);
    conv3d_accumulate(
        c, l, h, w, o, t, d,
        |oi, ci, kt, ky, kx| kernel.data[(((oi * c + ci) * t + kt) * d + ky) * d + kx],
        |weight, in_idx, out_idx| {
            gin[in_idx] += weight * gout.data[out_idx];
        },
    );
}

fn conv3d_backward_kernel(input: &Tensor, gout: &Tensor, k_shape: &[usize], gk: &mut [f64]) {
    let (c, l, h, w) = (input.shape[0], input.shape[1], input.shape[2], input.shape[3]);
    let (o, t, d) = (k_shape[0], k_shape[2], k_shape[3]);
    // reuse the same index walk, accumulating into the kernel slot instead
    let half_t = t / 2;
    let half_d = d / 2;
    for oi in 0..o {
        for ci in 0..c {
            for kt in 0..t {
                let zoff = kt as isize - half_t as isize;
                for ky in 0..d {
                    let yoff = ky as isize - half_d as isize;
                    for kx in 0..d {
                        let xoff = kx as isize - half_d as isize;
                        let mut acc = 0.0;
                        for z in range_for(l, zoff) {
                            let zi = (z as isize + zoff) as usize;
                            for y in range_for(h, yoff) {
                                let yi = (y as isize + yoff) as usize;
                                let in_row = ((ci * l + zi) * h + yi) * w;
                                let out_row = ((oi * l + z) * h + y) * w;
                                for x in range_for(w, xoff) {
                                    let xi = (x as isize + xoff) as usize;
                                    acc += input.data[in_row + xi] * gout.data[out_row + x];
                                }
                            }
                        }
                        gk[(((oi * c + ci) * t + kt) * d + ky) * d + kx] += acc;
                    }
                }
            }
        }
    }
}

fn range_for(len: usize, off: isize) -> std::ops::Range<usize> {
    let start = (-off).max(0) as usize;
    let end = ((len as isize - off).min(len as isize)).max(0) as usize;
    start..end
}

fn conv3d_accumulate(
    c: usize,
    l: usize,
    h: usize,
    w: usize,
    o: usize,
    t: usize,
    d: usize,
    weight_at: impl Fn(usize, usize, usize, usize, usize) -> f64,
    mut visit: impl FnMut(f64, usize, usize),
) {
    let half_t = t / 2;
    let half_d = d / 2;
    for oi in 0..o {
        for ci in 0..c {
            for kt in 0..t {
                let zoff = kt as isize - half_t as isize;
                for ky in 0..d {
                    let yoff = ky as isize - half_d as isize;
                    for kx in 0..d {
                        let xoff = kx as isize - half_d as isize;
                        let weight = weight_at(oi, ci, kt, ky, kx);
                        if weight == 0.0 {
                            continue;
                        }
                        for z in range_for(l, zoff) {
                            let zi = (z as isize + zoff) as usize;
                            for y in range_for(h, yoff) {
                                let yi = (y as isize + yoff) as usize;
                                let in_row = ((ci * l + zi) * h + yi) * w;
                                let out_row = ((oi * l + z) * h + y) * w;
                                for x in range_for(w, xoff) {
                                    let xi = (x as isize + xoff) as usize;
                                    visit(weight, in_row + xi, out_row + x);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
