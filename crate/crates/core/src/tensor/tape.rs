use super::{Tensor, TensorError};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// A recorded primitive. Inputs always precede outputs on the tape, so a
/// single reverse scan visits every operation exactly once.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    /// out = A · B, A: [m,k], B: [k,n]
    MatMul { a: TensorId, b: TensorId },
    /// out = A · Bᵀ, A: [m,k], B: [n,k]
    MatMulTB { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    /// bias is a [1,n] row added to every row of a [m,n] matrix
    AddBias { a: TensorId, bias: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { a: TensorId, c: f64 },
    /// row-wise softmax, stabilized by row-max subtraction
    SoftmaxRows { a: TensorId },
    /// per-row zero mean / unit variance, then elementwise gain and bias
    LayerNormRows {
        a: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    },
    Gelu { a: TensorId },
    Relu { a: TensorId },
    /// out[i, :] = a[rows[i], :]; backward scatter-adds
    GatherRows { a: TensorId, rows: Vec<usize> },
    ConcatCols { parts: Vec<TensorId> },
    MeanAll { a: TensorId },
    SumAll { a: TensorId },
    /// mean over rows of −log softmax(logits)[i, targets[i]], in log space
    CrossEntropyRows { logits: TensorId, targets: Vec<usize> },
    /// mean over elements of the stable binary cross-entropy
    /// y·softplus(−z) + (1−y)·softplus(z)
    BceWithLogits { logits: TensorId, labels: Vec<f64> },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Ordered record of primitive operations over owned tensors.
///
/// One tape is used by one thread at a time; a fresh tape is built per
/// training step and dropped after the gradients are read out.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor, op: Op) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { tensor, op });
        id
    }

    /// Record a leaf that participates in gradient flow.
    pub fn param(&mut self, t: &Tensor) -> TensorId {
        let mut t = t.clone();
        t.requires_grad = true;
        t.grad = None;
        self.push(t, Op::Leaf)
    }

    /// Record a leaf excluded from gradient flow.
    pub fn constant(&mut self, t: Tensor) -> TensorId {
        let mut t = t;
        t.requires_grad = false;
        t.grad = None;
        self.push(t, Op::Leaf)
    }

    pub fn constant_row(&mut self, data: Vec<f64>) -> TensorId {
        self.constant(Tensor::row(data))
    }

    pub fn constant_scalar(&mut self, x: f64) -> TensorId {
        self.constant(Tensor::scalar(x))
    }

    /// Same values as `a`, excluded from gradient flow.
    pub fn detach(&mut self, a: TensorId) -> TensorId {
        let t = Tensor::new(self.rows(a), self.cols(a), self.data(a).to_vec());
        self.constant(t)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].tensor.data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub fn rows(&self, id: TensorId) -> usize {
        self.nodes[id.0].tensor.rows()
    }

    pub fn cols(&self, id: TensorId) -> usize {
        self.nodes[id.0].tensor.cols()
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].tensor.numel(), 1);
        self.nodes[id.0].tensor.data[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].tensor.requires_grad
    }

    /// Input ids of the op that produced `id`. Lets tests assert graph
    /// wiring, e.g. that exposed attention logits are the exact softmax
    /// inputs.
    pub fn op_inputs(&self, id: TensorId) -> Vec<TensorId> {
        match &self.nodes[id.0].op {
            Op::Leaf => vec![],
            Op::MatMul { a, b }
            | Op::MatMulTB { a, b }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b } => vec![*a, *b],
            Op::AddBias { a, bias } => vec![*a, *bias],
            Op::Scale { a, .. }
            | Op::SoftmaxRows { a }
            | Op::Gelu { a }
            | Op::Relu { a }
            | Op::GatherRows { a, .. }
            | Op::MeanAll { a }
            | Op::SumAll { a } => vec![*a],
            Op::LayerNormRows { a, gain, bias, .. } => vec![*a, *gain, *bias],
            Op::ConcatCols { parts } => parts.clone(),
            Op::CrossEntropyRows { logits, .. } | Op::BceWithLogits { logits, .. } => {
                vec![*logits]
            }
        }
    }

    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.tensor.grad = None;
        }
    }

    fn flows(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].tensor.requires_grad)
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (m, k) = (self.rows(a), self.cols(a));
        let (k2, n) = (self.rows(b), self.cols(b));
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let ad = self.data(a);
            let bd = self.data(b);
            for i in 0..m {
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += aip * brow[j];
                    }
                }
            }
        }
        let mut t = Tensor::new(m, n, out);
        t.requires_grad = self.flows(&[a, b]);
        Ok(self.push(t, Op::MatMul { a, b }))
    }

    /// A · Bᵀ without materializing the transpose.
    pub fn matmul_tb(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (m, k) = (self.rows(a), self.cols(a));
        let (n, k2) = (self.rows(b), self.cols(b));
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_tb",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let ad = self.data(a);
            let bd = self.data(b);
            for i in 0..m {
                let arow = &ad[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &bd[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += arow[p] * brow[p];
                    }
                    out[i * n + j] = acc;
                }
            }
        }
        let mut t = Tensor::new(m, n, out);
        t.requires_grad = self.flows(&[a, b]);
        Ok(self.push(t, Op::MatMulTB { a, b }))
    }

    fn zip_elementwise(
        &mut self,
        op_name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b).iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let mut t = Tensor::new(self.rows(a), self.cols(a), data);
        t.requires_grad = self.flows(&[a, b]);
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_elementwise("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_elementwise("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_elementwise("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId, TensorError> {
        let (m, n) = (self.rows(a), self.cols(a));
        if self.rows(bias) != 1 || self.cols(bias) != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let mut data = self.data(a).to_vec();
        {
            let bd = self.data(bias);
            for i in 0..m {
                for j in 0..n {
                    data[i * n + j] += bd[j];
                }
            }
        }
        let mut t = Tensor::new(m, n, data);
        t.requires_grad = self.flows(&[a, bias]);
        Ok(self.push(t, Op::AddBias { a, bias }))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|&x| c * x).collect();
        let mut t = Tensor::new(self.rows(a), self.cols(a), data);
        t.requires_grad = self.flows(&[a]);
        self.push(t, Op::Scale { a, c })
    }

    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId, TensorError> {
        if self.data(a).iter().any(|x| x.is_nan()) {
            return Err(TensorError::NonFinite { op: "softmax_rows" });
        }
        let (m, n) = (self.rows(a), self.cols(a));
        let mut data = vec![0.0; m * n];
        {
            let ad = self.data(a);
            for i in 0..m {
                let row = &ad[i * n..(i + 1) * n];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (row[j] - max).exp();
                    data[i * n + j] = e;
                    sum += e;
                }
                for j in 0..n {
                    data[i * n + j] /= sum;
                }
            }
        }
        let mut t = Tensor::new(m, n, data);
        t.requires_grad = self.flows(&[a]);
        Ok(self.push(t, Op::SoftmaxRows { a }))
    }

    pub fn layernorm_rows(
        &mut self,
        a: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        let (m, n) = (self.rows(a), self.cols(a));
        for other in [gain, bias] {
            if self.rows(other) != 1 || self.cols(other) != n {
                return Err(TensorError::ShapeMismatch {
                    op: "layernorm_rows",
                    lhs: self.shape(a).to_vec(),
                    rhs: self.shape(other).to_vec(),
                });
            }
        }
        let mut data = vec![0.0; m * n];
        {
            let ad = self.data(a);
            let gd = self.data(gain);
            let bd = self.data(bias);
            for i in 0..m {
                let row = &ad[i * n..(i + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                let inv = 1.0 / (var + eps).sqrt();
                for j in 0..n {
                    data[i * n + j] = (row[j] - mean) * inv * gd[j] + bd[j];
                }
            }
        }
        let mut t = Tensor::new(m, n, data);
        t.requires_grad = self.flows(&[a, gain, bias]);
        Ok(self.push(t, Op::LayerNormRows { a, gain, bias, eps }))
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|&x| gelu(x)).collect();
        let mut t = Tensor::new(self.rows(a), self.cols(a), data);
        t.requires_grad = self.flows(&[a]);
        self.push(t, Op::Gelu { a })
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        let mut t = Tensor::new(self.rows(a), self.cols(a), data);
        t.requires_grad = self.flows(&[a]);
        self.push(t, Op::Relu { a })
    }

    pub fn gather_rows(
        &mut self,
        a: TensorId,
        rows: Vec<usize>,
    ) -> Result<TensorId, TensorError> {
        let (m, n) = (self.rows(a), self.cols(a));
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in &rows {
            if r >= m {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    size: m,
                });
            }
            data.extend_from_slice(&self.data(a)[r * n..(r + 1) * n]);
        }
        let mut t = Tensor::new(rows.len(), n, data);
        t.requires_grad = self.flows(&[a]);
        Ok(self.push(t, Op::GatherRows { a, rows }))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, TensorError> {
        assert!(!parts.is_empty(), "concat_cols: empty part list");
        let m = self.rows(parts[0]);
        for &p in parts {
            if self.rows(p) != m {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.cols(p)).sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let n = self.cols(p);
                data.extend_from_slice(&self.data(p)[i * n..(i + 1) * n]);
            }
        }
        let mut t = Tensor::new(m, total, data);
        t.requires_grad = self.flows(parts);
        Ok(self.push(t, Op::ConcatCols { parts: parts.to_vec() }))
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.data(a).len() as f64;
        let v = self.data(a).iter().sum::<f64>() / n;
        let mut t = Tensor::scalar(v);
        t.requires_grad = self.flows(&[a]);
        self.push(t, Op::MeanAll { a })
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let v = self.data(a).iter().sum::<f64>();
        let mut t = Tensor::scalar(v);
        t.requires_grad = self.flows(&[a]);
        self.push(t, Op::SumAll { a })
    }

    /// Mean of −log p(target) over rows, computed in log space so that
    /// large logits never overflow.
    pub fn cross_entropy_rows(
        &mut self,
        logits: TensorId,
        targets: Vec<usize>,
    ) -> Result<TensorId, TensorError> {
        let (m, v) = (self.rows(logits), self.cols(logits));
        assert_eq!(m, targets.len(), "cross_entropy_rows: one target per row");
        for &t in &targets {
            if t >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy_rows",
                    index: t,
                    size: v,
                });
            }
        }
        let mut acc = 0.0;
        {
            let ld = self.data(logits);
            for (i, &target) in targets.iter().enumerate() {
                let row = &ld[i * v..(i + 1) * v];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for &z in row {
                    sum += (z - max).exp();
                }
                // −log softmax[target] = log Σe^{z−max} − (z_t − max)
                acc += sum.ln() - (row[target] - max);
            }
        }
        let mut t = Tensor::scalar(acc / m as f64);
        t.requires_grad = self.flows(&[logits]);
        Ok(self.push(t, Op::CrossEntropyRows { logits, targets }))
    }

    /// Mean binary cross-entropy with logits; `labels[i]` is 1.0 for the
    /// positive class. Stable log-sigmoid form.
    pub fn bce_with_logits(
        &mut self,
        logits: TensorId,
        labels: Vec<f64>,
    ) -> Result<TensorId, TensorError> {
        let n = self.data(logits).len();
        if n != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![1, labels.len()],
            });
        }
        let mut acc = 0.0;
        for (&z, &y) in self.data(logits).iter().zip(labels.iter()) {
            acc += y * softplus(-z) + (1.0 - y) * softplus(z);
        }
        let mut t = Tensor::scalar(acc / n as f64);
        t.requires_grad = self.flows(&[logits]);
        Ok(self.push(t, Op::BceWithLogits { logits, labels }))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Gradients accumulate into every
    /// `requires_grad` tensor reachable from it; repeated calls without
    /// [`Tape::reset_grads`] keep accumulating. Each pass propagates
    /// through its own working buffer so earlier passes never leak into
    /// the chain rule of the current one.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.nodes[loss.0].tensor.numel() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut work: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].tensor.requires_grad {
            work[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].tensor.requires_grad {
                continue;
            }
            let Some(g) = work[idx].clone() else { continue };
            let op = self.nodes[idx].op.clone();
            self.backward_op(TensorId(idx), &op, &g, &mut work);
        }
        for (idx, wg) in work.into_iter().enumerate() {
            let Some(wg) = wg else { continue };
            let t = &mut self.nodes[idx].tensor;
            match &mut t.grad {
                Some(old) => {
                    for (o, n) in old.iter_mut().zip(wg) {
                        *o += n;
                    }
                }
                None => t.grad = Some(wg),
            }
        }
        Ok(())
    }

    fn acc(&self, work: &mut [Option<Vec<f64>>], id: TensorId, delta: &[f64]) {
        Self::accumulate(work, self.requires_grad(id), id, delta);
    }

    fn accumulate(work: &mut [Option<Vec<f64>>], flows: bool, id: TensorId, delta: &[f64]) {
        if !flows {
            return;
        }
        match &mut work[id.0] {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta.iter()) {
                    *gi += di;
                }
            }
            None => work[id.0] = Some(delta.to_vec()),
        }
    }

    fn backward_op(&self, out: TensorId, op: &Op, g: &[f64], work: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.rows(*a), self.cols(*a));
                let n = self.cols(*b);
                if self.requires_grad(*a) {
                    // dA = dOut · Bᵀ
                    let bd = self.data(*b);
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bd[p * n + j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    self.acc(work, *a, &da);
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · dOut
                    let ad = self.data(*a);
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for i in 0..m {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    self.acc(work, *b, &db);
                }
            }
            Op::MatMulTB { a, b } => {
                let (m, k) = (self.rows(*a), self.cols(*a));
                let n = self.rows(*b);
                if self.requires_grad(*a) {
                    // dA = dOut · B
                    let bd = self.data(*b);
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += gij * bd[j * k + p];
                            }
                        }
                    }
                    self.acc(work, *a, &da);
                }
                if self.requires_grad(*b) {
                    // dB = dOutᵀ · A
                    let ad = self.data(*a);
                    let mut db = vec![0.0; n * k];
                    for j in 0..n {
                        for i in 0..m {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                db[j * k + p] += gij * ad[i * k + p];
                            }
                        }
                    }
                    self.acc(work, *b, &db);
                }
            }
            Op::Add { a, b } => {
                self.acc(work, *a, g);
                self.acc(work, *b, g);
            }
            Op::AddBias { a, bias } => {
                self.acc(work, *a, g);
                if self.requires_grad(*bias) {
                    let (m, n) = (self.rows(*a), self.cols(*a));
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += g[i * n + j];
                        }
                    }
                    self.acc(work, *bias, &db);
                }
            }
            Op::Sub { a, b } => {
                self.acc(work, *a, g);
                if self.requires_grad(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    self.acc(work, *b, &neg);
                }
            }
            Op::Mul { a, b } => {
                if self.requires_grad(*a) {
                    let da: Vec<f64> =
                        g.iter().zip(self.data(*b).iter()).map(|(x, y)| x * y).collect();
                    self.acc(work, *a, &da);
                }
                if self.requires_grad(*b) {
                    let db: Vec<f64> =
                        g.iter().zip(self.data(*a).iter()).map(|(x, y)| x * y).collect();
                    self.acc(work, *b, &db);
                }
            }
            Op::Scale { a, c } => {
                let da: Vec<f64> = g.iter().map(|x| c * x).collect();
                self.acc(work, *a, &da);
            }
            Op::SoftmaxRows { a } => {
                let (m, n) = (self.rows(out), self.cols(out));
                let y = self.data(out);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let mut dot = 0.0;
                    for j in 0..n {
                        dot += gr[j] * yr[j];
                    }
                    for j in 0..n {
                        da[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.acc(work, *a, &da);
            }
            Op::LayerNormRows { a, gain, bias, eps } => {
                let (m, n) = (self.rows(*a), self.cols(*a));
                let ad = self.data(*a).to_vec();
                let gd = self.data(*gain).to_vec();
                let mut da = vec![0.0; m * n];
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                for i in 0..m {
                    let row = &ad[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var =
                        row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|x| (x - mean) * inv).collect();
                    // d wrt normalized input
                    let dxhat: Vec<f64> =
                        gr.iter().zip(gd.iter()).map(|(go, ga)| go * ga).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dxhat_xhat = dxhat
                        .iter()
                        .zip(xhat.iter())
                        .map(|(d, x)| d * x)
                        .sum::<f64>()
                        / n as f64;
                    for j in 0..n {
                        da[i * n + j] =
                            inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                    }
                }
                self.acc(work, *a, &da);
                self.acc(work, *gain, &dgain);
                self.acc(work, *bias, &dbias);
            }
            Op::Gelu { a } => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.data(*a).iter())
                    .map(|(go, &x)| go * gelu_deriv(x))
                    .collect();
                self.acc(work, *a, &da);
            }
            Op::Relu { a } => {
                let da: Vec<f64> = g
                    .iter()
                    .zip(self.data(*a).iter())
                    .map(|(go, &x)| if x > 0.0 { *go } else { 0.0 })
                    .collect();
                self.acc(work, *a, &da);
            }
            Op::GatherRows { a, rows } => {
                let n = self.cols(*a);
                let mut da = vec![0.0; self.rows(*a) * n];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..n {
                        da[r * n + j] += g[i * n + j];
                    }
                }
                self.acc(work, *a, &da);
            }
            Op::ConcatCols { parts } => {
                let m = self.rows(out);
                let total = self.cols(out);
                let mut offset = 0;
                for &p in parts {
                    let n = self.cols(p);
                    if self.requires_grad(p) {
                        let mut dp = vec![0.0; m * n];
                        for i in 0..m {
                            for j in 0..n {
                                dp[i * n + j] = g[i * total + offset + j];
                            }
                        }
                        self.acc(work, p, &dp);
                    }
                    offset += n;
                }
            }
            Op::MeanAll { a } => {
                let n = self.data(*a).len() as f64;
                let d = g[0] / n;
                let da = vec![d; self.data(*a).len()];
                self.acc(work, *a, &da);
            }
            Op::SumAll { a } => {
                let da = vec![g[0]; self.data(*a).len()];
                self.acc(work, *a, &da);
            }
            Op::CrossEntropyRows { logits, targets } => {
                let (m, v) = (self.rows(*logits), self.cols(*logits));
                let ld = self.data(*logits);
                let scale = g[0] / m as f64;
                let mut da = vec![0.0; m * v];
                for (i, &target) in targets.iter().enumerate() {
                    let row = &ld[i * v..(i + 1) * v];
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for (j, &z) in row.iter().enumerate() {
                        let e = (z - max).exp();
                        da[i * v + j] = e;
                        sum += e;
                    }
                    for j in 0..v {
                        da[i * v + j] /= sum;
                    }
                    da[i * v + target] -= 1.0;
                    for j in 0..v {
                        da[i * v + j] *= scale;
                    }
                }
                self.acc(work, *logits, &da);
            }
            Op::BceWithLogits { logits, labels } => {
                let n = labels.len() as f64;
                let da: Vec<f64> = self
                    .data(*logits)
                    .iter()
                    .zip(labels.iter())
                    .map(|(&z, &y)| g[0] * (sigmoid(z) - y) / n)
                    .collect();
                self.acc(work, *logits, &da);
            }
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape.constant(Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let out = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.data(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_all_ones() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(1, 2, vec![1.0, 1.0]));
        let b = tape.constant(Tensor::new(2, 1, vec![1.0, 1.0]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.data(out), &[2.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a: Vec<f64> = (0..12).map(|_| next()).collect();
        let b: Vec<f64> = (0..8).map(|_| next()).collect();
        let mut expect = vec![0.0; 3 * 2];
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a[i * 4 + k] * b[k * 2 + j];
                }
                expect[i * 2 + j] = acc;
            }
        }
        let mut tape = Tape::new();
        let ta = tape.constant(Tensor::new(3, 4, a));
        let tb = tape.constant(Tensor::new(4, 2, b));
        let out = tape.matmul(ta, tb).unwrap();
        for (got, want) in tape.data(out).iter().zip(expect.iter()) {
            assert!(close(*got, *want, 1e-12), "{got} vs {want}");
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![0.0, 0.0]));
        let s = tape.softmax_rows(a).unwrap();
        assert_eq!(tape.data(s), &[0.5, 0.5]);

        let x = tape.constant(Tensor::row(vec![0.3, -1.2, 2.0]));
        let xs = tape.softmax_rows(x).unwrap();
        let y = tape.constant(Tensor::row(vec![0.3 + 7.5, -1.2 + 7.5, 2.0 + 7.5]));
        let ys = tape.softmax_rows(y).unwrap();
        for (a, b) in tape.data(xs).iter().zip(tape.data(ys).iter()) {
            assert!(close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn softmax_matches_exp_sum_oracle() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let s = tape.softmax_rows(a).unwrap();
        let exps: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (got, e) in tape.data(s).iter().zip(exps.iter()) {
            assert!(close(*got, e / sum, 1e-12));
        }
        let total: f64 = tape.data(s).iter().sum();
        assert!(close(total, 1.0, 1e-9));
    }

    #[test]
    fn softmax_nan_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![f64::NAN, 0.0]));
        assert!(matches!(
            tape.softmax_rows(a),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn layernorm_constant_row_is_zero() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![3.0, 3.0, 3.0]));
        let gain = tape.constant_row(vec![1.0; 3]);
        let bias = tape.constant_row(vec![0.0; 3]);
        let out = tape.layernorm_rows(a, gain, bias, 1e-5).unwrap();
        for v in tape.data(out) {
            assert!(close(*v, 0.0, 1e-9));
        }
    }

    #[test]
    fn layernorm_already_normalized() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![1.0, -1.0]));
        let gain = tape.constant_row(vec![1.0; 2]);
        let bias = tape.constant_row(vec![0.0; 2]);
        let out = tape.layernorm_rows(a, gain, bias, 1e-12).unwrap();
        assert!(close(tape.data(out)[0], 1.0, 1e-6));
        assert!(close(tape.data(out)[1], -1.0, 1e-6));
    }

    #[test]
    fn layernorm_matches_two_pass_oracle() {
        let row = vec![0.4, -2.2, 1.9, 0.05, 3.3];
        let n = row.len();
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let eps = 1e-5;
        let expect: Vec<f64> = row.iter().map(|x| (x - mean) / (var + eps).sqrt()).collect();

        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(row));
        let gain = tape.constant_row(vec![1.0; n]);
        let bias = tape.constant_row(vec![0.0; n]);
        let out = tape.layernorm_rows(a, gain, bias, eps).unwrap();
        for (got, want) in tape.data(out).iter().zip(expect.iter()) {
            assert!(close(*got, *want, 1e-10));
        }
    }

    #[test]
    fn cross_entropy_near_certain_prediction() {
        let mut tape = Tape::new();
        let mut logits = vec![0.0; 5];
        logits[2] = 30.0;
        let l = tape.constant(Tensor::new(1, 5, logits));
        let loss = tape.cross_entropy_rows(l, vec![2]).unwrap();
        assert!(tape.scalar(loss) < 1e-9);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_v() {
        let mut tape = Tape::new();
        let v = 7;
        let l = tape.constant(Tensor::new(1, v, vec![0.0; v]));
        let loss = tape.cross_entropy_rows(l, vec![3]).unwrap();
        assert!(close(tape.scalar(loss), (v as f64).ln(), 1e-12));
    }

    #[test]
    fn cross_entropy_matches_naive_oracle() {
        let logits = [0.2f64, -1.1, 2.3, 0.7];
        let target = 1usize;
        let exps: Vec<f64> = logits.iter().map(|x| x.exp()).collect();
        let p = exps[target] / exps.iter().sum::<f64>();
        let expect = -p.ln();

        let mut tape = Tape::new();
        let l = tape.constant(Tensor::new(1, 4, logits.to_vec()));
        let loss = tape.cross_entropy_rows(l, vec![target]).unwrap();
        assert!(close(tape.scalar(loss), expect, 1e-9));
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::new(1, 4, vec![0.0; 4]));
        assert!(matches!(
            tape.cross_entropy_rows(l, vec![4]),
            Err(TensorError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn detach_blocks_gradient() {
        // loss = sum(detach(x) * x) → d loss/dx = detach(x) values, not 2x
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::row(vec![2.0]));
        let d = tape.detach(x);
        assert_eq!(tape.data(d), tape.data(x));
        let prod = tape.mul(d, x).unwrap();
        let loss = tape.sum_all(prod);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
        assert!(tape.grad(d).is_none());
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::new(2, 3, vec![0.5; 6]));
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::row(vec![3.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::row(vec![1.0, 2.0]));
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NotScalar { .. })
        ));
    }

    #[test]
    fn bce_half_is_ln2() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::row(vec![0.0, 0.0]));
        let loss = tape.bce_with_logits(z, vec![1.0, 0.0]).unwrap();
        assert!(close(tape.scalar(loss), std::f64::consts::LN_2, 1e-12));
    }

    #[test]
    fn gather_rows_and_backward_scatter() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::new(3, 2, vec![1., 2., 3., 4., 5., 6.]));
        let g = tape.gather_rows(x, vec![2, 0, 2]).unwrap();
        assert_eq!(tape.data(g), &[5., 6., 1., 2., 5., 6.]);
        let loss = tape.sum_all(g);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1., 1., 0., 0., 2., 2.]);
    }

    #[test]
    fn concat_cols_splits_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(&Tensor::new(2, 1, vec![1., 2.]));
        let b = tape.param(&Tensor::new(2, 2, vec![3., 4., 5., 6.]));
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.data(c), &[1., 3., 4., 2., 5., 6.]);
        let loss = tape.sum_all(c);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1., 1.]);
        assert_eq!(tape.grad(b).unwrap(), &[1., 1., 1., 1.]);
    }
}
