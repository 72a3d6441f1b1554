//! Define-by-run autodiff tape.
//!
//! Operations append nodes in execution order, so the node list is already a
//! topological order; [`Tape::backward`] walks it once in reverse. A tape
//! supports a single backward pass and refuses further recording afterwards.
//! A tape is confined to one thread; the tensors it produces are plain
//! values.

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const GELU_COEF: f64 = 0.044715;

enum Op {
    Leaf,
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddRow { a: Var, bias: Var },
    Scale { a: Var, factor: f64 },
    Transpose { a: Var },
    Reshape { a: Var },
    Softmax { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu { a: Var },
    Dropout { a: Var, mask: Vec<f64> },
    Sum { a: Var },
    Mean { a: Var },
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Recorded computation graph for one forward/backward cycle.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    /// Gradient of the last backward pass with respect to `v` (zeros before
    /// backward has run).
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape.clone(), node.data.clone()).expect("tape values are valid tensors")
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value on tape (node {})",
            self.nodes.len()
        );
        let grad = vec![0.0; data.len()];
        self.nodes.push(Node {
            shape,
            data,
            grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_recording(&self) -> Result<()> {
        if self.consumed {
            Err(Error::GraphConsumed)
        } else {
            Ok(())
        }
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::Shape(format!("{what} must be 2-D, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    /// Records an input value (parameter or data) as a graph leaf.
    pub fn leaf(&mut self, t: &Tensor) -> Result<Var> {
        self.check_recording()?;
        Ok(self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf))
    }

    pub fn leaf_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        self.leaf(&Tensor::new(shape, data)?)
    }

    /// `[m×k] · [k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_recording()?;
        let (m, ka) = self.matrix_dims(a, "matmul lhs")?;
        let (kb, n) = self.matrix_dims(b, "matmul rhs")?;
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dims differ: [{m}x{ka}] . [{kb}x{n}]"
            )));
        }
        let out = matmul_raw(self.value(a), self.value(b), m, ka, n);
        Ok(self.push(vec![m, n], out, Op::Matmul { a, b }))
    }

    /// Elementwise sum of two tensors with identical shapes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_recording()?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Add { a, b }))
    }

    /// `[r×c] + [c]`: adds `bias` to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.check_recording()?;
        let c = *self.shape(a).last().ok_or_else(|| {
            Error::Shape("add_row operand must have at least one axis".into())
        })?;
        let bs = self.shape(bias);
        if bs != [c] {
            return Err(Error::Shape(format!(
                "bias shape {bs:?} does not match row width {c}"
            )));
        }
        let bias_data = self.value(bias).to_vec();
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + bias_data[i % c])
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::AddRow { a, bias }))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.check_recording()?;
        let data: Vec<f64> = self.value(a).iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Scale { a, factor }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check_recording()?;
        let (r, c) = self.matrix_dims(a, "transpose operand")?;
        let src = self.value(a);
        let mut data = vec![0.0; src.len()];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], data, Op::Transpose { a }))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.check_recording()?;
        let numel: usize = shape.iter().product();
        if numel != self.value(a).len() {
            return Err(Error::Shape(format!(
                "reshape to {shape:?} changes element count"
            )));
        }
        let data = self.value(a).to_vec();
        Ok(self.push(shape, data, Op::Reshape { a }))
    }

    /// Numerically stable softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.check_recording()?;
        let width = *self
            .shape(a)
            .last()
            .ok_or_else(|| Error::Shape("softmax operand must have at least one axis".into()))?;
        let mut data = self.value(a).to_vec();
        for row in data.chunks_mut(width) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Softmax { a }))
    }

    /// Per-row normalization to zero mean and unit population variance,
    /// then an affine transform by `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.check_recording()?;
        let d = *self
            .shape(x)
            .last()
            .ok_or_else(|| Error::Shape("layer_norm operand must have at least one axis".into()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape(format!(
                "layer_norm affine params must have shape [{d}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let rows = self.value(x).len() / d;
        let gamma_data = self.value(gamma).to_vec();
        let beta_data = self.value(beta).to_vec();
        let src = self.value(x);
        let mut data = vec![0.0; src.len()];
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..d {
                let xh = (row[j] - mean) * istd;
                xhat[r * d + j] = xh;
                data[r * d + j] = gamma_data[j] * xh + beta_data[j];
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            data,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Elementwise GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.check_recording()?;
        let data: Vec<f64> = self.value(a).iter().map(|&x| gelu_scalar(x)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Gelu { a }))
    }

    /// Inverted dropout: kept entries scaled by `1/(1-rate)`.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut DetRng) -> Result<Var> {
        self.check_recording()?;
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidInput(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep_scale })
            .collect();
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, data, Op::Dropout { a, mask }))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check_recording()?;
        let total: f64 = self.value(a).iter().sum();
        Ok(self.push(vec![1], vec![total], Op::Sum { a }))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check_recording()?;
        let n = self.value(a).len() as f64;
        let total: f64 = self.value(a).iter().sum();
        Ok(self.push(vec![1], vec![total / n], Op::Mean { a }))
    }

    /// Contiguous row range `[start, start+len)` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.check_recording()?;
        let (r, c) = self.matrix_dims(a, "slice_rows operand")?;
        if start + len > r || len == 0 {
            return Err(Error::Shape(format!(
                "row slice {start}..{} out of range for {r} rows",
                start + len
            )));
        }
        let data = self.value(a)[start * c..(start + len) * c].to_vec();
        Ok(self.push(vec![len, c], data, Op::SliceRows { a, start }))
    }

    /// Contiguous column range `[start, start+len)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.check_recording()?;
        let (r, c) = self.matrix_dims(a, "slice_cols operand")?;
        if start + len > c || len == 0 {
            return Err(Error::Shape(format!(
                "column slice {start}..{} out of range for {c} columns",
                start + len
            )));
        }
        let src = self.value(a);
        let mut data = vec![0.0; r * len];
        for i in 0..r {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * c + start..i * c + start + len]);
        }
        Ok(self.push(vec![r, len], data, Op::SliceCols { a, start }))
    }

    /// Vertical stack of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.check_recording()?;
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat_rows needs at least one part".into()))?;
        let (_, c) = self.matrix_dims(first, "concat_rows part")?;
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.matrix_dims(p, "concat_rows part")?;
            if pc != c {
                return Err(Error::Shape(format!(
                    "concat_rows column mismatch: {pc} vs {c}"
                )));
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(self.value(p));
        }
        Ok(self.push(
            vec![rows, c],
            data,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Horizontal stack of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.check_recording()?;
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat_cols needs at least one part".into()))?;
        let (r, _) = self.matrix_dims(first, "concat_cols part")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.matrix_dims(p, "concat_cols part")?;
            if pr != r {
                return Err(Error::Shape(format!("concat_cols row mismatch: {pr} vs {r}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p);
            for i in 0..r {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(
            vec![r, total],
            data,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Mean negative log-likelihood of `labels` under softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check_recording()?;
        let (b, c) = self.matrix_dims(logits, "cross_entropy logits")?;
        if labels.len() != b {
            return Err(Error::Shape(format!(
                "{} labels for batch of {b}",
                labels.len()
            )));
        }
        for &l in labels {
            if l >= c {
                return Err(Error::LabelOutOfRange { label: l, classes: c });
            }
        }
        let src = self.value(logits);
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                probs[i * c + j] = e;
                sum += e;
            }
            for j in 0..c {
                probs[i * c + j] /= sum;
            }
            loss -= probs[i * c + labels[i]].ln();
        }
        loss /= b as f64;
        // A label probability can underflow to zero under extreme logits;
        // surface that as an error rather than an infinite loss.
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                op: "cross_entropy",
            });
        }
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse pass from a scalar loss. Consumes the graph: recording or a
    /// second backward afterwards is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_recording()?;
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        self.consumed = true;
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            propagate(node, head);
        }
        Ok(())
    }
}

/// Applies `node`'s local gradients to its parents (all at lower indices).
fn propagate(node: &Node, parents: &mut [Node]) {
    let gout = &node.grad;
    match &node.op {
        Op::Leaf => {}
        Op::Matmul { a, b } => {
            let (m, k) = (parents[a.0].shape[0], parents[a.0].shape[1]);
            let n = parents[b.0].shape[1];
            // dA = dC . B^T, dB = A^T . dC
            let da = matmul_nt(gout, &parents[b.0].data, m, n, k);
            let db = matmul_tn(&parents[a.0].data, gout, m, k, n);
            accumulate(&mut parents[a.0].grad, &da);
            accumulate(&mut parents[b.0].grad, &db);
        }
        Op::Add { a, b } => {
            accumulate(&mut parents[a.0].grad, gout);
            accumulate(&mut parents[b.0].grad, gout);
        }
        Op::AddRow { a, bias } => {
            accumulate(&mut parents[a.0].grad, gout);
            let c = parents[bias.0].data.len();
            for (i, g) in gout.iter().enumerate() {
                parents[bias.0].grad[i % c] += g;
            }
        }
        Op::Scale { a, factor } => {
            for (g, &go) in parents[a.0].grad.iter_mut().zip(gout) {
                *g += go * factor;
            }
        }
        Op::Transpose { a } => {
            let (r, c) = (parents[a.0].shape[0], parents[a.0].shape[1]);
            // node is [c x r]
            for i in 0..r {
                for j in 0..c {
                    parents[a.0].grad[i * c + j] += gout[j * r + i];
                }
            }
        }
        Op::Reshape { a } => {
            accumulate(&mut parents[a.0].grad, gout);
        }
        Op::Softmax { a } => {
            let width = *node.shape.last().expect("softmax output has an axis");
            let y = &node.data;
            let ga = &mut parents[a.0].grad;
            for r in 0..y.len() / width {
                let row = r * width;
                let dot: f64 = (0..width).map(|j| gout[row + j] * y[row + j]).sum();
                for j in 0..width {
                    ga[row + j] += y[row + j] * (gout[row + j] - dot);
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let d = parents[gamma.0].data.len();
            let rows = xhat.len() / d;
            let gamma_data = parents[gamma.0].data.clone();
            for r in 0..rows {
                let row = r * d;
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for j in 0..d {
                    let g = gout[row + j] * gamma_data[j];
                    m1 += g;
                    m2 += g * xhat[row + j];
                }
                m1 /= d as f64;
                m2 /= d as f64;
                for j in 0..d {
                    let g = gout[row + j] * gamma_data[j];
                    parents[x.0].grad[row + j] += inv_std[r] * (g - m1 - xhat[row + j] * m2);
                    parents[gamma.0].grad[j] += gout[row + j] * xhat[row + j];
                    parents[beta.0].grad[j] += gout[row + j];
                }
            }
        }
        Op::Gelu { a } => {
            for (j, &go) in gout.iter().enumerate() {
                let x = parents[a.0].data[j];
                parents[a.0].grad[j] += go * gelu_derivative(x);
            }
        }
        Op::Dropout { a, mask } => {
            for (j, &go) in gout.iter().enumerate() {
                parents[a.0].grad[j] += go * mask[j];
            }
        }
        Op::Sum { a } => {
            let go = gout[0];
            for g in parents[a.0].grad.iter_mut() {
                *g += go;
            }
        }
        Op::Mean { a } => {
            let go = gout[0] / parents[a.0].data.len() as f64;
            for g in parents[a.0].grad.iter_mut() {
                *g += go;
            }
        }
        Op::SliceRows { a, start } => {
            let c = parents[a.0].shape[1];
            for (j, &go) in gout.iter().enumerate() {
                parents[a.0].grad[start * c + j] += go;
            }
        }
        Op::SliceCols { a, start } => {
            let c = parents[a.0].shape[1];
            let len = node.shape[1];
            for i in 0..node.shape[0] {
                for j in 0..len {
                    parents[a.0].grad[i * c + start + j] += gout[i * len + j];
                }
            }
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for &p in parts {
                let n = parents[p.0].data.len();
                accumulate(&mut parents[p.0].grad, &gout[offset..offset + n]);
                offset += n;
            }
        }
        Op::ConcatCols { parts } => {
            let total = node.shape[1];
            let rows = node.shape[0];
            let mut offset = 0;
            for &p in parts {
                let w = parents[p.0].shape[1];
                for i in 0..rows {
                    for j in 0..w {
                        parents[p.0].grad[i * w + j] += gout[i * total + offset + j];
                    }
                }
                offset += w;
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let go = gout[0];
            let b = labels.len();
            let c = probs.len() / b;
            for i in 0..b {
                for j in 0..c {
                    let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                    parents[logits.0].grad[i * c + j] +=
                        go * (probs[i * c + j] - onehot) / b as f64;
                }
            }
        }
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `C[m,n] = A[m,k] . B[k,n]`.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// `C[m,k] = A[m,n] . B[k,n]^T`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..k {
            let mut s = 0.0;
            for p in 0..n {
                s += a[i * n + p] * b[j * n + p];
            }
            c[i * k + j] = s;
        }
    }
    c
}

/// `C[k,n] = A[m,k]^T . B[m,n]`.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for p in 0..m {
        for i in 0..k {
            let av = a[p * k + i];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEF * x * x)
}
