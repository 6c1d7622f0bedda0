use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How gradients pass through ReLU nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackpropMode {
    #[default]
    Standard,
    /// Only non-negative upstream gradients pass a ReLU.
    Guided,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Embedding { ids: Vec<usize> },
    MatMul,
    MatMulBt,
    Add,
    Sub,
    Mul,
    AddRow,
    MulRow,
    Scale(T),
    Relu,
    Sigmoid,
    Tanh,
    SoftmaxRows,
    NormalizeRows { inv_std: Vec<T> },
    SliceCols { start: usize, end: usize },
    Row { index: usize },
    Select { index: usize },
    ConcatCols,
    StackRows,
    MaxRows { argmax: Vec<usize> },
    MeanRows,
    SumAll,
    Unfold { window: usize },
    Reshape,
    Dropout { mask: Vec<T> },
    CrossEntropy { target: usize, probs: Vec<T> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<Var>,
    needs_grad: bool,
}

/// Tape of tensor operations supporting one reverse sweep at a time.
///
/// Nodes are appended in evaluation order, so node ids are a topological
/// order. Every forward and backward kernel adds its multiply/add count to
/// the graph's FLOP counter: 2 per multiply-accumulate, 1 per elementwise
/// add, multiply, comparison or transcendental.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    flops: u64,
    mode: BackpropMode,
}

fn mat_dims(shape: &[usize]) -> (usize, usize) {
    if shape.len() == 2 {
        (shape[0], shape[1])
    } else {
        (1, shape[0])
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            flops: 0,
            mode: BackpropMode::Standard,
        }
    }

    pub fn with_mode(mode: BackpropMode) -> Self {
        Self {
            mode,
            ..Self::new()
        }
    }

    pub fn mode(&self) -> BackpropMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: BackpropMode) {
        self.mode = mode;
    }

    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        self.grad(v).map(|g| {
            Tensor::new(self.shape(v).to_vec(), g.to_vec()).expect("grad shape matches value")
        })
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<Var>) -> Var {
        let needs_grad = match op {
            Op::Leaf => value.requires_grad,
            _ => inputs.iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            inputs,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a leaf. Its gradient is tracked when `t.requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, vec![])
    }

    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn param(&mut self, mut t: Tensor<T>, requires_grad: bool) -> Var {
        t.requires_grad = requires_grad;
        self.leaf(t)
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::InvalidTensor("embedding table must be 2-D".into()));
        }
        let (vocab, dim) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::IndexOutOfVocab { id, vocab });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::matrix(ids.len(), dim, data)?;
        Ok(self.push(out, Op::Embedding { ids: ids.to_vec() }, vec![table]))
    }

    /// Matrix product. A rank-1 left operand is treated as a single row and
    /// yields a rank-1 result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = mat_dims(self.shape(a));
        let bs = self.shape(b);
        if bs.len() != 2 || bs[0] != k {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: bs.to_vec(),
            });
        }
        let n = bs[1];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let s = av[i * k + p];
                if s == T::zero() {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bb) in orow.iter_mut().zip(brow) {
                    *o = *o + s * bb;
                }
            }
        }
        self.flops += 2 * (m * k * n) as u64;
        let shape = if self.shape(a).len() == 1 {
            vec![n]
        } else {
            vec![m, n]
        };
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul, vec![a, b]))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = mat_dims(self.shape(a));
        let (n, k2) = mat_dims(self.shape(b));
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_bt",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bv[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            }
        }
        self.flops += 2 * (m * k * n) as u64;
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulBt, vec![a, b]))
    }

    fn zip_op(&mut self, a: Var, b: Var, op: Op<T>, name: &'static str) -> Result<Var> {
        self.check_same(name, a, b)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let out: Vec<T> = match op {
            Op::Add => av.iter().zip(bv).map(|(&x, &y)| x + y).collect(),
            Op::Sub => av.iter().zip(bv).map(|(&x, &y)| x - y).collect(),
            Op::Mul => av.iter().zip(bv).map(|(&x, &y)| x * y).collect(),
            _ => unreachable!(),
        };
        self.flops += out.len() as u64;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, op, vec![a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, Op::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, Op::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, Op::Mul, "mul")
    }

    fn row_op(&mut self, a: Var, b: Var, op: Op<T>, name: &'static str) -> Result<Var> {
        let (m, n) = mat_dims(self.shape(a));
        let bs = self.shape(b);
        if bs.len() != 1 || bs[0] != n {
            return Err(Error::ShapeMismatch {
                op: name,
                left: self.shape(a).to_vec(),
                right: bs.to_vec(),
            });
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let arow = &av[i * n..(i + 1) * n];
            match op {
                Op::AddRow => out.extend(arow.iter().zip(bv).map(|(&x, &y)| x + y)),
                _ => out.extend(arow.iter().zip(bv).map(|(&x, &y)| x * y)),
            }
        }
        self.flops += (m * n) as u64;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, op, vec![a, b]))
    }

    /// Adds vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_op(a, b, Op::AddRow, "add_row")
    }

    /// Multiplies every row of `a` elementwise by vector `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_op(a, b, Op::MulRow, "mul_row")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out: Vec<T> = self.value(a).data().iter().map(|&x| x * s).collect();
        self.flops += out.len() as u64;
        let shape = self.shape(a).to_vec();
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            Op::Scale(s),
            vec![a],
        )
    }

    fn unary(&mut self, a: Var, op: Op<T>, cost: u64, f: impl Fn(T) -> T) -> Var {
        let out: Vec<T> = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.flops += cost * out.len() as u64;
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out).expect("same shape"), op, vec![a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu, 1, |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        // exp, add, divide
        self.unary(a, Op::Sigmoid, 3, sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh, 1, |x| x.tanh())
    }

    /// Row-wise softmax; a vector is one row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = mat_dims(self.shape(a));
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(softmax(&av[i * n..(i + 1) * n]));
        }
        self.flops += 5 * (m * n) as u64;
        let shape = self.shape(a).to_vec();
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            Op::SoftmaxRows,
            vec![a],
        )
    }

    /// Normalizes every row to zero mean and unit variance (layer norm
    /// without the affine part).
    pub fn normalize_rows(&mut self, a: Var, eps: T) -> Var {
        let (m, n) = mat_dims(self.shape(a));
        let av = self.value(a).data();
        let nn = T::from_usize_lossy(n);
        let mut out = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nn;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / nn;
            let r = T::one() / (var + eps).sqrt();
            inv_std.push(r);
            out.extend(row.iter().map(|&x| (x - mean) * r));
        }
        self.flops += (6 * m * n + 3 * m) as u64;
        let shape = self.shape(a).to_vec();
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            Op::NormalizeRows { inv_std },
            vec![a],
        )
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = mat_dims(self.shape(a));
        if start > end || end > n {
            return Err(Error::InvalidTensor(format!(
                "column slice {start}..{end} out of {n}"
            )));
        }
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + end]);
        }
        let shape = if self.shape(a).len() == 1 {
            vec![end - start]
        } else {
            vec![m, end - start]
        };
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::SliceCols { start, end },
            vec![a],
        ))
    }

    /// Row `index` of a matrix as a vector.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let (m, _) = mat_dims(self.shape(a));
        if index >= m {
            return Err(Error::InvalidTensor(format!("row {index} out of {m}")));
        }
        let out = self.value(a).row(index).to_vec();
        Ok(self.push(Tensor::vector(out), Op::Row { index }, vec![a]))
    }

    /// Element `index` of a flattened tensor, as a one-element tensor.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let n = self.value(a).len();
        if index >= n {
            return Err(Error::InvalidTensor(format!(
                "element {index} out of {n}"
            )));
        }
        let v = self.value(a).data()[index];
        Ok(self.push(Tensor::scalar(v), Op::Select { index }, vec![a]))
    }

    /// Concatenates along the last dimension. All inputs must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidTensor("concat of nothing".into()))?;
        let rank = self.shape(first).len();
        let (m, _) = mat_dims(self.shape(first));
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = mat_dims(self.shape(p));
            if pm != m || self.shape(p).len() != rank {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            total += pn;
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let shape = if rank == 1 { vec![total] } else { vec![m, total] };
        Ok(self.push(Tensor::new(shape, out)?, Op::ConcatCols, parts.to_vec()))
    }

    /// Stacks equal-length vectors (or row blocks) vertically.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidTensor("stack of nothing".into()))?;
        let (_, n) = mat_dims(self.shape(first));
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pn) = mat_dims(self.shape(p));
            if pn != n {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            rows += pm;
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::matrix(rows, n, out)?, Op::StackRows, parts.to_vec()))
    }

    /// Column-wise maximum over rows (global max pooling).
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = mat_dims(self.shape(a));
        if m == 0 {
            return Err(Error::InvalidTensor("max over zero rows".into()));
        }
        let av = self.value(a).data();
        let mut out = av[..n].to_vec();
        let mut argmax = vec![0; n];
        for i in 1..m {
            for j in 0..n {
                if av[i * n + j] > out[j] {
                    out[j] = av[i * n + j];
                    argmax[j] = i;
                }
            }
        }
        self.flops += (m * n) as u64;
        Ok(self.push(Tensor::vector(out), Op::MaxRows { argmax }, vec![a]))
    }

    /// Column-wise mean over rows.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = mat_dims(self.shape(a));
        if m == 0 {
            return Err(Error::InvalidTensor("mean over zero rows".into()));
        }
        let av = self.value(a).data();
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for j in 0..n {
                out[j] = out[j] + av[i * n + j];
            }
        }
        let mm = T::from_usize_lossy(m);
        for o in &mut out {
            *o = *o / mm;
        }
        self.flops += ((m + 1) * n) as u64;
        Ok(self.push(Tensor::vector(out), Op::MeanRows, vec![a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.flops += self.value(a).len() as u64;
        self.push(Tensor::scalar(s), Op::SumAll, vec![a])
    }

    /// Sliding windows: row `p` of the result is rows `p..p+window` of `a`
    /// laid end to end.
    pub fn unfold(&mut self, a: Var, window: usize) -> Result<Var> {
        let (l, d) = mat_dims(self.shape(a));
        if window == 0 || l < window {
            return Err(Error::SequenceTooShort { len: l, window });
        }
        let av = self.value(a).data();
        let positions = l - window + 1;
        let mut out = Vec::with_capacity(positions * window * d);
        for p in 0..positions {
            out.extend_from_slice(&av[p * d..(p + window) * d]);
        }
        Ok(self.push(
            Tensor::matrix(positions, window * d, out)?,
            Op::Unfold { window },
            vec![a],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push(t, Op::Reshape, vec![a]))
    }

    /// Multiplies by a precomputed (already rescaled) dropout mask.
    pub fn dropout(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(Error::LengthMismatch(mask.len(), self.value(a).len()));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        self.flops += out.len() as u64;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Dropout { mask }, vec![a]))
    }

    /// Negative log-likelihood of `target` under softmax of a logit vector.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits).data();
        if target >= lv.len() {
            return Err(Error::InvalidTensor(format!(
                "target {target} out of {} classes",
                lv.len()
            )));
        }
        let probs = softmax(lv);
        let max = lv.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + lv.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
        let loss = lse - lv[target];
        self.flops += (5 * lv.len() + 2) as u64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { target, probs },
            vec![logits],
        ))
    }

    /// Reverse sweep from a one-element output. Gradients of every node
    /// reachable from a gradient-requiring leaf are available afterwards via
    /// [`Graph::grad`]; leaf tensors with `requires_grad` also get their
    /// `grad` field set.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let n_out = self.value(output).len();
        if n_out != 1 {
            return Err(Error::NotScalar { len: n_out });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![T::one()]);
        let mut flops = 0u64;
        for id in (0..=output.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(id, &g, &mut grads, &mut flops)?;
            grads[id] = Some(g);
        }
        self.flops += flops;
        for (id, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad {
                node.value.grad = Some(
                    grads
                        .get(id)
                        .and_then(|g| g.clone())
                        .unwrap_or_else(|| vec![T::zero(); node.value.len()]),
                );
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(
        &self,
        id: usize,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        flops: &mut u64,
    ) -> Result<()> {
        let node = &self.nodes[id];
        let inputs = &node.inputs;
        let wants = |i: usize| self.nodes[inputs[i].0].needs_grad;
        let mut acc = |v: Var, contrib: Vec<T>, flops: &mut u64| {
            let slot = &mut grads[v.0];
            match slot {
                Some(existing) => {
                    *flops += contrib.len() as u64;
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e = *e + c;
                    }
                }
                None => *slot = Some(contrib),
            }
        };
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Embedding { ids } => {
                if wants(0) {
                    let table = self.value(inputs[0]);
                    let d = table.cols();
                    let mut contrib = vec![T::zero(); table.len()];
                    for (j, &id) in ids.iter().enumerate() {
                        for k in 0..d {
                            contrib[id * d + k] = contrib[id * d + k] + g[j * d + k];
                        }
                    }
                    *flops += (ids.len() * d) as u64;
                    acc(inputs[0], contrib, flops);
                }
            }
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k) = mat_dims(self.shape(a));
                let n = self.shape(b)[1];
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if wants(0) {
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    *flops += 2 * (m * k * n) as u64;
                    acc(a, da, flops);
                }
                if wants(1) {
                    let mut db = vec![T::zero(); k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let s = av[i * k + p];
                            if s == T::zero() {
                                continue;
                            }
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, &gg) in drow.iter_mut().zip(grow) {
                                *d = *d + s * gg;
                            }
                        }
                    }
                    *flops += 2 * (m * k * n) as u64;
                    acc(b, db, flops);
                }
            }
            Op::MatMulBt => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k) = mat_dims(self.shape(a));
                let (n, _) = mat_dims(self.shape(b));
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if wants(0) {
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        let drow = &mut da[i * k..(i + 1) * k];
                        for j in 0..n {
                            let s = g[i * n + j];
                            for (d, &bb) in drow.iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                                *d = *d + s * bb;
                            }
                        }
                    }
                    *flops += 2 * (m * k * n) as u64;
                    acc(a, da, flops);
                }
                if wants(1) {
                    let mut db = vec![T::zero(); n * k];
                    for i in 0..m {
                        let arow = &av[i * k..(i + 1) * k];
                        for j in 0..n {
                            let s = g[i * n + j];
                            for (d, &aa) in db[j * k..(j + 1) * k].iter_mut().zip(arow) {
                                *d = *d + s * aa;
                            }
                        }
                    }
                    *flops += 2 * (m * k * n) as u64;
                    acc(b, db, flops);
                }
            }
            Op::Add | Op::Sub => {
                let neg = matches!(node.op, Op::Sub);
                if wants(0) {
                    acc(inputs[0], g.to_vec(), flops);
                }
                if wants(1) {
                    let c: Vec<T> = if neg {
                        *flops += g.len() as u64;
                        g.iter().map(|&x| -x).collect()
                    } else {
                        g.to_vec()
                    };
                    acc(inputs[1], c, flops);
                }
            }
            Op::Mul => {
                let av = self.value(inputs[0]).data();
                let bv = self.value(inputs[1]).data();
                if wants(0) {
                    *flops += g.len() as u64;
                    acc(inputs[0], g.iter().zip(bv).map(|(&x, &y)| x * y).collect(), flops);
                }
                if wants(1) {
                    *flops += g.len() as u64;
                    acc(inputs[1], g.iter().zip(av).map(|(&x, &y)| x * y).collect(), flops);
                }
            }
            Op::AddRow | Op::MulRow => {
                let (m, n) = mat_dims(self.shape(inputs[0]));
                let av = self.value(inputs[0]).data();
                let bv = self.value(inputs[1]).data();
                let is_mul = matches!(node.op, Op::MulRow);
                if wants(0) {
                    let c = if is_mul {
                        *flops += (m * n) as u64;
                        (0..m * n).map(|idx| g[idx] * bv[idx % n]).collect()
                    } else {
                        g.to_vec()
                    };
                    acc(inputs[0], c, flops);
                }
                if wants(1) {
                    let mut c = vec![T::zero(); n];
                    for i in 0..m {
                        for j in 0..n {
                            let t = if is_mul {
                                g[i * n + j] * av[i * n + j]
                            } else {
                                g[i * n + j]
                            };
                            c[j] = c[j] + t;
                        }
                    }
                    *flops += if is_mul { 2 * m * n } else { m * n } as u64;
                    acc(inputs[1], c, flops);
                }
            }
            Op::Scale(s) => {
                *flops += g.len() as u64;
                acc(inputs[0], g.iter().map(|&x| x * *s).collect(), flops);
            }
            Op::Relu => {
                let guided = self.mode == BackpropMode::Guided;
                let xv = self.value(inputs[0]).data();
                *flops += g.len() as u64;
                let c = g
                    .iter()
                    .zip(xv)
                    .map(|(&gg, &x)| {
                        let gg = if guided && gg < T::zero() { T::zero() } else { gg };
                        if x > T::zero() {
                            gg
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                acc(inputs[0], c, flops);
            }
            Op::Sigmoid => {
                *flops += 3 * g.len() as u64;
                let c = g
                    .iter()
                    .zip(out)
                    .map(|(&gg, &y)| gg * y * (T::one() - y))
                    .collect();
                acc(inputs[0], c, flops);
            }
            Op::Tanh => {
                *flops += 3 * g.len() as u64;
                let c = g
                    .iter()
                    .zip(out)
                    .map(|(&gg, &y)| gg * (T::one() - y * y))
                    .collect();
                acc(inputs[0], c, flops);
            }
            Op::SoftmaxRows => {
                let (m, n) = mat_dims(node.value.shape());
                let mut c = Vec::with_capacity(m * n);
                for i in 0..m {
                    let y = &out[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    c.extend(y.iter().zip(gr).map(|(&yy, &gg)| yy * (gg - dot)));
                }
                *flops += 4 * (m * n) as u64;
                acc(inputs[0], c, flops);
            }
            Op::NormalizeRows { inv_std } => {
                let (m, n) = mat_dims(node.value.shape());
                let nn = T::from_usize_lossy(n);
                let mut c = Vec::with_capacity(m * n);
                for i in 0..m {
                    let y = &out[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let mean_g = gr.iter().copied().sum::<T>() / nn;
                    let mean_gy = y.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>() / nn;
                    let r = inv_std[i];
                    c.extend(
                        y.iter()
                            .zip(gr)
                            .map(|(&yy, &gg)| r * (gg - mean_g - yy * mean_gy)),
                    );
                }
                *flops += 8 * (m * n) as u64;
                acc(inputs[0], c, flops);
            }
            Op::SliceCols { start, end } => {
                let (m, n) = mat_dims(self.shape(inputs[0]));
                let w = end - start;
                let mut c = vec![T::zero(); m * n];
                for i in 0..m {
                    c[i * n + start..i * n + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                acc(inputs[0], c, flops);
            }
            Op::Row { index } => {
                let (m, n) = mat_dims(self.shape(inputs[0]));
                let mut c = vec![T::zero(); m * n];
                c[index * n..(index + 1) * n].copy_from_slice(g);
                acc(inputs[0], c, flops);
            }
            Op::Select { index } => {
                let mut c = vec![T::zero(); self.value(inputs[0]).len()];
                c[*index] = g[0];
                acc(inputs[0], c, flops);
            }
            Op::ConcatCols => {
                let (m, total) = mat_dims(node.value.shape());
                let mut offset = 0;
                for (idx, &p) in inputs.iter().enumerate() {
                    let (_, pn) = mat_dims(self.shape(p));
                    if wants(idx) {
                        let mut c = Vec::with_capacity(m * pn);
                        for i in 0..m {
                            c.extend_from_slice(&g[i * total + offset..i * total + offset + pn]);
                        }
                        acc(p, c, flops);
                    }
                    offset += pn;
                }
            }
            Op::StackRows => {
                let mut offset = 0;
                for (idx, &p) in inputs.iter().enumerate() {
                    let len = self.value(p).len();
                    if wants(idx) {
                        acc(p, g[offset..offset + len].to_vec(), flops);
                    }
                    offset += len;
                }
            }
            Op::MaxRows { argmax } => {
                let (m, n) = mat_dims(self.shape(inputs[0]));
                let mut c = vec![T::zero(); m * n];
                for (j, &i) in argmax.iter().enumerate() {
                    c[i * n + j] = g[j];
                }
                acc(inputs[0], c, flops);
            }
            Op::MeanRows => {
                let (m, n) = mat_dims(self.shape(inputs[0]));
                let mm = T::from_usize_lossy(m);
                let mut c = Vec::with_capacity(m * n);
                for _ in 0..m {
                    c.extend(g.iter().map(|&x| x / mm));
                }
                *flops += (m * n) as u64;
                acc(inputs[0], c, flops);
            }
            Op::SumAll => {
                let len = self.value(inputs[0]).len();
                acc(inputs[0], vec![g[0]; len], flops);
            }
            Op::Unfold { window } => {
                let (l, d) = mat_dims(self.shape(inputs[0]));
                let positions = l - window + 1;
                let wd = window * d;
                let mut c = vec![T::zero(); l * d];
                for p in 0..positions {
                    let grow = &g[p * wd..(p + 1) * wd];
                    for (dst, &src) in c[p * d..(p + window) * d].iter_mut().zip(grow) {
                        *dst = *dst + src;
                    }
                }
                *flops += (positions * wd) as u64;
                acc(inputs[0], c, flops);
            }
            Op::Reshape => acc(inputs[0], g.to_vec(), flops),
            Op::Dropout { mask } => {
                *flops += g.len() as u64;
                acc(
                    inputs[0],
                    g.iter().zip(mask).map(|(&x, &m)| x * m).collect(),
                    flops,
                );
            }
            Op::CrossEntropy { target, probs } => {
                let mut c: Vec<T> = probs.iter().map(|&p| p * g[0]).collect();
                c[*target] = c[*target] - g[0];
                *flops += (probs.len() + 1) as u64;
                acc(inputs[0], c, flops);
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax of one vector.
pub fn softmax<T: Scalar>(v: &[T]) -> Vec<T> {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
