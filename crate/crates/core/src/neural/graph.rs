//! Tape-style reverse-mode autodiff over the ops the models need.
//!
//! A `Graph` records one forward pass as an append-only list of nodes, so
//! every input id is smaller than its consumer and a single reverse sweep
//! propagates gradients. Sequences are stored time-major as `[steps*batch,
//! features]` with row `t*batch + b`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::NeuralError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a · bᵀ` — the tied decoder projects with the embedding matrix.
    MatMulNt(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    OneMinus(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Dropout {
        x: NodeId,
        mask: Vec<T>,
    },
    /// Row `r` of `x` scaled by `mask[r]`; used for embedding-row dropout
    /// and for zeroing padded sequence rows.
    RowScale {
        x: NodeId,
        mask: Vec<T>,
    },
    Embedding {
        table: NodeId,
        ids: Vec<u32>,
    },
    /// Rows shifted down by `offset` with zero fill (one timestep of lag).
    ShiftRows {
        x: NodeId,
        offset: usize,
    },
    ConcatCols(NodeId, NodeId),
    FoPool {
        f: NodeId,
        z: NodeId,
        c0: NodeId,
        mask: Option<Vec<T>>,
        steps: usize,
        batch: usize,
    },
    ConcatPool {
        h: NodeId,
        steps: usize,
        batch: usize,
        mask: Vec<T>,
        argmax: Vec<usize>,
        counts: Vec<T>,
    },
    SmoothedCe {
        logits: NodeId,
        targets: Vec<u32>,
        epsilon: T,
        probs: Vec<T>,
    },
    Mse {
        pred: NodeId,
        target: Vec<T>,
    },
    SumAll(NodeId),
}

struct Node<T> {
    value: Tensor<T>,
    grad: Tensor<T>,
    op: Op<T>,
    label: &'static str,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    train: bool,
    check_finite: bool,
}

impl<T: Scalar> Graph<T> {
    /// Training-mode graph: dropout ops apply their masks.
    pub fn train() -> Self {
        Self {
            nodes: Vec::new(),
            train: true,
            check_finite: true,
        }
    }

    /// Evaluation-mode graph: dropout is identity.
    pub fn eval() -> Self {
        Self {
            nodes: Vec::new(),
            train: false,
            check_finite: true,
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].grad
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        op: Op<T>,
        label: &'static str,
    ) -> Result<NodeId, NeuralError> {
        if self.check_finite && !value.all_finite() {
            return Err(NeuralError::NonFinite {
                what: format!("output of {label} (node {})", self.nodes.len()),
            });
        }
        self.nodes.push(Node {
            value,
            grad: Tensor::zeros(&[0]),
            op,
            label,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Insert a leaf (an input or a parameter snapshot).
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<NodeId, NeuralError> {
        self.push(value, Op::Leaf, "leaf")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuralError> {
        let (av, bv) = (self.value(a), self.value(b));
        check_rank2("matmul", av)?;
        check_rank2("matmul", bv)?;
        if av.shape()[1] != bv.shape()[0] {
            return Err(NeuralError::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let value = av.matmul(bv);
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuralError> {
        let (av, bv) = (self.value(a), self.value(b));
        check_rank2("matmul_nt", av)?;
        check_rank2("matmul_nt", bv)?;
        if av.shape()[1] != bv.shape()[1] {
            return Err(NeuralError::shape(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", av.shape(), bv.shape()),
            ));
        }
        let value = av.matmul_nt(bv);
        self.push(value, Op::MatMulNt(a, b), "matmul_nt")
    }

    /// `[m,n] + [n]` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NeuralError> {
        let (av, bv) = (self.value(a), self.value(bias));
        check_rank2("add_row", av)?;
        let n = av.shape()[1];
        if bv.shape() != [n] {
            return Err(NeuralError::shape(
                "add_row",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut value = av.clone();
        for row in value.data_mut().chunks_mut(n) {
            for (x, &b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        self.push(value, Op::AddRow(a, bias), "add_row")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuralError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NeuralError::shape(
                "add",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ));
        }
        let value = av.zip_map(bv, |x, y| x + y);
        self.push(value, Op::Add(a, b), "add")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuralError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NeuralError::shape(
                "mul",
                format!("{:?} * {:?}", av.shape(), bv.shape()),
            ));
        }
        let value = av.zip_map(bv, |x, y| x * y);
        self.push(value, Op::Mul(a, b), "mul")
    }

    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId, NeuralError> {
        let value = self.value(a).map(|x| T::one() - x);
        self.push(value, Op::OneMinus(a), "one_minus")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, NeuralError> {
        let value = self.value(a).map(|x| x.tanh());
        self.push(value, Op::Tanh(a), "tanh")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, NeuralError> {
        let value = self.value(a).map(sigmoid_scalar);
        self.push(value, Op::Sigmoid(a), "sigmoid")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, NeuralError> {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(value, Op::Relu(a), "relu")
    }

    /// Inverted dropout: in train mode each unit is kept with probability
    /// `1-rate` and scaled by `1/(1-rate)`; in eval mode (or at rate 0) this
    /// is the identity.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId, NeuralError> {
        if !self.train || rate <= 0.0 {
            return Ok(x);
        }
        if !(rate < 1.0) {
            return Err(NeuralError::InvalidConfig(format!(
                "dropout rate must be in [0,1), got {rate}"
            )));
        }
        let keep_scale = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with an explicit mask (exposed for gradient checking).
    pub fn dropout_with_mask(
        &mut self,
        x: NodeId,
        mask: Vec<T>,
    ) -> Result<NodeId, NeuralError> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(NeuralError::shape(
                "dropout",
                format!("mask {} vs tensor {}", mask.len(), xv.len()),
            ));
        }
        let mut value = xv.clone();
        for (v, &m) in value.data_mut().iter_mut().zip(&mask) {
            *v = *v * m;
        }
        self.push(value, Op::Dropout { x, mask }, "dropout")
    }

    /// Scale row `r` by `mask[r]` (rank-2 input).
    pub fn row_scale(&mut self, x: NodeId, mask: Vec<T>) -> Result<NodeId, NeuralError> {
        let xv = self.value(x);
        check_rank2("row_scale", xv)?;
        let (rows, cols) = xv.dims2();
        if mask.len() != rows {
            return Err(NeuralError::shape(
                "row_scale",
                format!("mask {} vs rows {rows}", mask.len()),
            ));
        }
        let mut value = xv.clone();
        for (r, row) in value.data_mut().chunks_mut(cols).enumerate() {
            for v in row {
                *v = *v * mask[r];
            }
        }
        self.push(value, Op::RowScale { x, mask }, "row_scale")
    }

    /// Drop whole rows of an embedding-style matrix with probability `rate`,
    /// scaling kept rows by `1/(1-rate)` (train mode only).
    pub fn row_dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId, NeuralError> {
        if !self.train || rate <= 0.0 {
            return Ok(x);
        }
        if !(rate < 1.0) {
            return Err(NeuralError::InvalidConfig(format!(
                "row dropout rate must be in [0,1), got {rate}"
            )));
        }
        let xv = self.value(x);
        check_rank2("row_dropout", xv)?;
        let rows = xv.dims2().0;
        let keep_scale = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..rows)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        self.row_scale(x, mask)
    }

    /// Gather rows of `table` by id: output row `i` is `table[ids[i]]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId, NeuralError> {
        let tv = self.value(table);
        check_rank2("embedding", tv)?;
        let (vocab, dim) = tv.dims2();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            let id = id as usize;
            if id >= vocab {
                return Err(NeuralError::shape(
                    "embedding",
                    format!("id {id} out of range for vocab {vocab}"),
                ));
            }
            data.extend_from_slice(&tv.data()[id * dim..(id + 1) * dim]);
        }
        let value = Tensor::new(vec![ids.len(), dim], data);
        self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            "embedding",
        )
    }

    /// Shift rows down by `offset`, zero-filling the first `offset` rows.
    /// With time-major layout and `offset = batch`, row `t` becomes row
    /// `t-1`'s content: one timestep of lag.
    pub fn shift_rows(&mut self, x: NodeId, offset: usize) -> Result<NodeId, NeuralError> {
        let xv = self.value(x);
        check_rank2("shift_rows", xv)?;
        let (rows, cols) = xv.dims2();
        let mut value = Tensor::zeros(&[rows, cols]);
        if rows > offset {
            let src = &xv.data()[..(rows - offset) * cols];
            value.data_mut()[offset * cols..].copy_from_slice(src);
        }
        self.push(value, Op::ShiftRows { x, offset }, "shift_rows")
    }

    /// `[m,n1] ++ [m,n2] → [m,n1+n2]`
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuralError> {
        let (av, bv) = (self.value(a), self.value(b));
        check_rank2("concat_cols", av)?;
        check_rank2("concat_cols", bv)?;
        let (m, n1) = av.dims2();
        let (m2, n2) = bv.dims2();
        if m != m2 {
            return Err(NeuralError::shape(
                "concat_cols",
                format!("{:?} ++ {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut data = Vec::with_capacity(m * (n1 + n2));
        for i in 0..m {
            data.extend_from_slice(&av.data()[i * n1..(i + 1) * n1]);
            data.extend_from_slice(&bv.data()[i * n2..(i + 1) * n2]);
        }
        let value = Tensor::new(vec![m, n1 + n2], data);
        self.push(value, Op::ConcatCols(a, b), "concat_cols")
    }

    /// fo-pooling recurrence `c_t = f_t ⊙ c_{t-1} + (1-f_t) ⊙ z_t` over a
    /// time-major `[steps*batch, hidden]` gate pair. Rows whose mask entry is
    /// zero carry the previous state through unchanged.
    pub fn fo_pool(
        &mut self,
        f: NodeId,
        z: NodeId,
        c0: NodeId,
        steps: usize,
        batch: usize,
        mask: Option<&[T]>,
    ) -> Result<NodeId, NeuralError> {
        let (fv, zv, cv) = (self.value(f), self.value(z), self.value(c0));
        check_rank2("fo_pool", fv)?;
        let (rows, hidden) = fv.dims2();
        if rows != steps * batch
            || zv.shape() != fv.shape()
            || cv.shape() != [batch, hidden]
            || mask.is_some_and(|m| m.len() != rows)
        {
            return Err(NeuralError::shape(
                "fo_pool",
                format!(
                    "f {:?}, z {:?}, c0 {:?}, steps {steps}, batch {batch}",
                    fv.shape(),
                    zv.shape(),
                    cv.shape()
                ),
            ));
        }
        let mut out = Tensor::zeros(&[rows, hidden]);
        {
            let (fd, zd) = (fv.data(), zv.data());
            let mut prev = cv.data().to_vec();
            let od = out.data_mut();
            for t in 0..steps {
                for b in 0..batch {
                    let r = t * batch + b;
                    let base = r * hidden;
                    let live = mask.map_or(true, |m| m[r] != T::zero());
                    for h in 0..hidden {
                        let c_prev = prev[b * hidden + h];
                        od[base + h] = if live {
                            let ft = fd[base + h];
                            ft * c_prev + (T::one() - ft) * zd[base + h]
                        } else {
                            c_prev
                        };
                    }
                    prev[b * hidden..(b + 1) * hidden]
                        .copy_from_slice(&od[base..base + hidden]);
                }
            }
        }
        self.push(
            out,
            Op::FoPool {
                f,
                z,
                c0,
                mask: mask.map(<[T]>::to_vec),
                steps,
                batch,
            },
            "fo_pool",
        )
    }

    /// Concat pooling over time: `[last ++ max ++ mean]` per sequence,
    /// honoring the row mask (1 = real token, 0 = padding). Sequences are
    /// left-padded, so "last" is the final timestep.
    pub fn concat_pool(
        &mut self,
        h: NodeId,
        steps: usize,
        batch: usize,
        mask: &[T],
    ) -> Result<NodeId, NeuralError> {
        let hv = self.value(h);
        check_rank2("concat_pool", hv)?;
        let (rows, dim) = hv.dims2();
        if rows != steps * batch || mask.len() != rows {
            return Err(NeuralError::shape(
                "concat_pool",
                format!("h {:?}, steps {steps}, batch {batch}", hv.shape()),
            ));
        }
        let hd = hv.data();
        let mut out = Tensor::zeros(&[batch, 3 * dim]);
        let mut argmax = vec![0usize; batch * dim];
        let mut counts = vec![T::zero(); batch];
        {
            let od = out.data_mut();
            for b in 0..batch {
                let mut count = T::zero();
                let mut max_val = vec![T::neg_infinity(); dim];
                let mut max_t = vec![usize::MAX; dim];
                let mut sum = vec![T::zero(); dim];
                for t in 0..steps {
                    let r = t * batch + b;
                    if mask[r] == T::zero() {
                        continue;
                    }
                    count += T::one();
                    let row = &hd[r * dim..(r + 1) * dim];
                    for (k, &v) in row.iter().enumerate() {
                        if v > max_val[k] || max_t[k] == usize::MAX {
                            max_val[k] = v;
                            max_t[k] = t;
                        }
                        sum[k] += v;
                    }
                }
                if count == T::zero() {
                    return Err(NeuralError::shape(
                        "concat_pool",
                        format!("sequence {b} has no unmasked timesteps"),
                    ));
                }
                let last_row = &hd[((steps - 1) * batch + b) * dim..][..dim];
                od[b * 3 * dim..b * 3 * dim + dim].copy_from_slice(last_row);
                for k in 0..dim {
                    od[b * 3 * dim + dim + k] = max_val[k];
                    od[b * 3 * dim + 2 * dim + k] = sum[k] / count;
                    argmax[b * dim + k] = max_t[k];
                }
                counts[b] = count;
            }
        }
        self.push(
            out,
            Op::ConcatPool {
                h,
                steps,
                batch,
                mask: mask.to_vec(),
                argmax,
                counts,
            },
            "concat_pool",
        )
    }

    /// Mean label-smoothed cross-entropy over rows of `[n, classes]` logits.
    pub fn smoothed_ce(
        &mut self,
        logits: NodeId,
        targets: &[u32],
        epsilon: f64,
    ) -> Result<NodeId, NeuralError> {
        let lv = self.value(logits);
        check_rank2("smoothed_ce", lv)?;
        let (n, k) = lv.dims2();
        if n != targets.len() || n == 0 {
            return Err(NeuralError::shape(
                "smoothed_ce",
                format!("{n} logit rows vs {} targets", targets.len()),
            ));
        }
        if !(0.0..1.0).contains(&epsilon) || k < 2 {
            return Err(NeuralError::InvalidConfig(format!(
                "smoothed_ce needs epsilon in [0,1) and >=2 classes, got {epsilon}, {k}"
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t as usize >= k) {
            return Err(NeuralError::shape(
                "smoothed_ce",
                format!("target {t} out of range for {k} classes"),
            ));
        }
        let eps = T::from_f64_lossy(epsilon);
        let uniform = eps / T::from_f64_lossy(k as f64);
        let confident = T::one() - eps;
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        for (i, &target) in targets.iter().enumerate() {
            let row = &lv.data()[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for &x in row {
                denom += (x - max).exp();
            }
            let log_denom = denom.ln();
            let mut loss = T::zero();
            for (j, &x) in row.iter().enumerate() {
                let logp = x - max - log_denom;
                probs[i * k + j] = logp.exp();
                let tj = uniform + if j == target as usize { confident } else { T::zero() };
                loss -= tj * logp;
            }
            total += loss;
        }
        let value = Tensor::scalar(total / T::from_f64_lossy(n as f64));
        self.push(
            value,
            Op::SmoothedCe {
                logits,
                targets: targets.to_vec(),
                epsilon: eps,
                probs,
            },
            "smoothed_ce",
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: NodeId, target: &[T]) -> Result<NodeId, NeuralError> {
        let pv = self.value(pred);
        if pv.len() != target.len() || target.is_empty() {
            return Err(NeuralError::shape(
                "mse",
                format!("{} predictions vs {} targets", pv.len(), target.len()),
            ));
        }
        let n = T::from_f64_lossy(target.len() as f64);
        let mut total = T::zero();
        for (&p, &t) in pv.data().iter().zip(target) {
            let d = p - t;
            total += d * d;
        }
        let value = Tensor::scalar(total / n);
        self.push(
            value,
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            "mse",
        )
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, NeuralError> {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::SumAll(a), "sum_all")
    }

    /// Reverse sweep from a scalar loss; gradients accumulate by summation
    /// over every use of a node.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), NeuralError> {
        if self.nodes.is_empty() {
            return Err(NeuralError::NoForwardRecorded);
        }
        if loss.0 >= self.nodes.len() || self.nodes[loss.0].value.len() != 1 {
            return Err(NeuralError::shape("backward", "loss must be a recorded scalar"));
        }
        for node in &mut self.nodes {
            node.grad = Tensor::zeros(node.value.shape());
        }
        self.nodes[loss.0].grad.fill(T::one());

        for idx in (0..=loss.0).rev() {
            let grad = self.nodes[idx].grad.clone();
            if grad.data().iter().all(|&g| g == T::zero()) {
                continue;
            }
            self.propagate(idx, &grad)?;
            if self.check_finite && !self.nodes[idx].grad.all_finite() {
                return Err(NeuralError::NonFinite {
                    what: format!("gradient of {} (node {idx})", self.nodes[idx].label),
                });
            }
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, grad: &Tensor<T>) -> Result<(), NeuralError> {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                // c = a·b: da = g·bᵀ, db = aᵀ·g
                let da = grad.matmul_nt(self.value(b));
                let db = self.value(a).matmul_tn(grad);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::MatMulNt(a, b) => {
                let (a, b) = (*a, *b);
                // c = a·bᵀ: da = g·b, db = gᵀ·a
                let da = grad.matmul(self.value(b));
                let db = grad.matmul_tn(self.value(a));
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::AddRow(a, bias) => {
                let (a, bias) = (*a, *bias);
                let n = grad.shape()[1];
                let mut db = Tensor::zeros(&[n]);
                for row in grad.data().chunks(n) {
                    for (d, &g) in db.data_mut().iter_mut().zip(row) {
                        *d += g;
                    }
                }
                self.accumulate(a, grad);
                self.accumulate(bias, &db);
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, grad);
                self.accumulate(b, grad);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let da = grad.zip_map(self.value(b), |g, y| g * y);
                let db = grad.zip_map(self.value(a), |g, x| g * x);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::OneMinus(a) => {
                let a = *a;
                let da = grad.map(|g| -g);
                self.accumulate(a, &da);
            }
            Op::Tanh(a) => {
                let a = *a;
                let da = grad.zip_map(&self.nodes[idx].value, |g, y| g * (T::one() - y * y));
                self.accumulate(a, &da);
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let da = grad.zip_map(&self.nodes[idx].value, |g, y| g * y * (T::one() - y));
                self.accumulate(a, &da);
            }
            Op::Relu(a) => {
                let a = *a;
                let da = grad.zip_map(&self.nodes[idx].value, |g, y| {
                    if y > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(a, &da);
            }
            Op::Dropout { x, mask } => {
                let x = *x;
                let mut da = grad.clone();
                for (d, &m) in da.data_mut().iter_mut().zip(mask) {
                    *d = *d * m;
                }
                self.accumulate(x, &da);
            }
            Op::RowScale { x, mask } => {
                let x = *x;
                let cols = grad.shape()[1];
                let mask = mask.clone();
                let mut da = grad.clone();
                for (r, row) in da.data_mut().chunks_mut(cols).enumerate() {
                    for d in row {
                        *d = *d * mask[r];
                    }
                }
                self.accumulate(x, &da);
            }
            Op::Embedding { table, ids } => {
                let table = *table;
                let ids = ids.clone();
                let dim = grad.shape()[1];
                let mut dt = Tensor::zeros(self.value(table).shape());
                for (i, &id) in ids.iter().enumerate() {
                    let dst = &mut dt.data_mut()[id as usize * dim..(id as usize + 1) * dim];
                    let src = &grad.data()[i * dim..(i + 1) * dim];
                    for (d, &g) in dst.iter_mut().zip(src) {
                        *d += g;
                    }
                }
                self.accumulate(table, &dt);
            }
            Op::ShiftRows { x, offset } => {
                let (x, offset) = (*x, *offset);
                let (rows, cols) = grad.dims2();
                let mut da = Tensor::zeros(&[rows, cols]);
                if rows > offset {
                    let src = &grad.data()[offset * cols..];
                    da.data_mut()[..(rows - offset) * cols].copy_from_slice(src);
                }
                self.accumulate(x, &da);
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let n1 = self.value(a).shape()[1];
                let n2 = self.value(b).shape()[1];
                let m = grad.shape()[0];
                let mut da = Tensor::zeros(&[m, n1]);
                let mut db = Tensor::zeros(&[m, n2]);
                for i in 0..m {
                    let row = &grad.data()[i * (n1 + n2)..(i + 1) * (n1 + n2)];
                    da.data_mut()[i * n1..(i + 1) * n1].copy_from_slice(&row[..n1]);
                    db.data_mut()[i * n2..(i + 1) * n2].copy_from_slice(&row[n1..]);
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::FoPool {
                f,
                z,
                c0,
                mask,
                steps,
                batch,
            } => {
                let (f, z, c0) = (*f, *z, *c0);
                let (steps, batch) = (*steps, *batch);
                let mask = mask.clone();
                let hidden = grad.shape()[1];
                let fd = self.value(f).data().to_vec();
                let zd = self.value(z).data().to_vec();
                let c0d = self.value(c0).data().to_vec();
                let cd = self.nodes[idx].value.data().to_vec();

                let mut df = Tensor::zeros(&[steps * batch, hidden]);
                let mut dz = Tensor::zeros(&[steps * batch, hidden]);
                let mut dc0 = Tensor::zeros(&[batch, hidden]);
                // Running gradient of the loss w.r.t. c_t, swept backwards.
                let mut acc = vec![T::zero(); batch * hidden];
                for t in (0..steps).rev() {
                    for b in 0..batch {
                        let r = t * batch + b;
                        let base = r * hidden;
                        let live = mask.as_ref().map_or(true, |m| m[r] != T::zero());
                        for h in 0..hidden {
                            let a = acc[b * hidden + h] + grad.data()[base + h];
                            if live {
                                let ft = fd[base + h];
                                let c_prev = if t == 0 {
                                    c0d[b * hidden + h]
                                } else {
                                    cd[(r - batch) * hidden + h]
                                };
                                df.data_mut()[base + h] = a * (c_prev - zd[base + h]);
                                dz.data_mut()[base + h] = a * (T::one() - ft);
                                acc[b * hidden + h] = a * ft;
                            } else {
                                acc[b * hidden + h] = a;
                            }
                        }
                    }
                }
                dc0.data_mut().copy_from_slice(&acc);
                self.accumulate(f, &df);
                self.accumulate(z, &dz);
                self.accumulate(c0, &dc0);
            }
            Op::ConcatPool {
                h,
                steps,
                batch,
                mask,
                argmax,
                counts,
            } => {
                let h = *h;
                let (steps, batch) = (*steps, *batch);
                let (mask, argmax, counts) = (mask.clone(), argmax.clone(), counts.clone());
                let dim = self.value(h).shape()[1];
                let mut dh = Tensor::zeros(&[steps * batch, dim]);
                for b in 0..batch {
                    let g = &grad.data()[b * 3 * dim..(b + 1) * 3 * dim];
                    // last
                    let last_base = ((steps - 1) * batch + b) * dim;
                    for k in 0..dim {
                        dh.data_mut()[last_base + k] += g[k];
                    }
                    // max
                    for k in 0..dim {
                        let r = argmax[b * dim + k] * batch + b;
                        dh.data_mut()[r * dim + k] += g[dim + k];
                    }
                    // mean
                    for t in 0..steps {
                        let r = t * batch + b;
                        if mask[r] == T::zero() {
                            continue;
                        }
                        for k in 0..dim {
                            dh.data_mut()[r * dim + k] += g[2 * dim + k] / counts[b];
                        }
                    }
                }
                self.accumulate(h, &dh);
            }
            Op::SmoothedCe {
                logits,
                targets,
                epsilon,
                probs,
            } => {
                let logits = *logits;
                let (targets, eps, probs) = (targets.clone(), *epsilon, probs.clone());
                let (n, k) = self.value(logits).dims2();
                let g = grad.item() / T::from_f64_lossy(n as f64);
                let uniform = eps / T::from_f64_lossy(k as f64);
                let confident = T::one() - eps;
                let mut dl = Tensor::zeros(&[n, k]);
                for i in 0..n {
                    for j in 0..k {
                        let tj = uniform
                            + if j == targets[i] as usize {
                                confident
                            } else {
                                T::zero()
                            };
                        dl.data_mut()[i * k + j] = g * (probs[i * k + j] - tj);
                    }
                }
                self.accumulate(logits, &dl);
            }
            Op::Mse { pred, target } => {
                let pred = *pred;
                let target = target.clone();
                let n = T::from_f64_lossy(target.len() as f64);
                let g = grad.item();
                let two = T::from_f64_lossy(2.0);
                let mut dp = self.value(pred).clone();
                for (d, &t) in dp.data_mut().iter_mut().zip(&target) {
                    *d = g * two * (*d - t) / n;
                }
                self.accumulate(pred, &dp);
            }
            Op::SumAll(a) => {
                let a = *a;
                let g = grad.item();
                let da = self.value(a).map(|_| g);
                self.accumulate(a, &da);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: &Tensor<T>) {
        self.nodes[id.0].grad.add_scaled(delta, T::one());
    }
}

fn check_rank2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(), NeuralError> {
    if t.shape().len() == 2 {
        Ok(())
    } else {
        Err(NeuralError::shape(op, format!("expected rank 2, got {:?}", t.shape())))
    }
}

fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
