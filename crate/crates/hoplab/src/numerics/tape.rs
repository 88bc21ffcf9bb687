//! Wengert tape: records primitive ops during the forward pass, then runs a
//! single reverse sweep to compute gradients.
//!
//! Ops are appended in execution order, so an op's inputs always have smaller
//! ids than its output and walking node ids backwards is exactly reverse
//! execution order. Gradients accumulate by plain summation in that fixed
//! order, which keeps the sweep deterministic.

use super::{NumericsError, Result, Tensor};

/// Index of a value on the tape.
pub type ValueId = usize;

const LAYER_NORM_EPS: f64 = 1e-5;

// tanh-form GELU constants
const GELU_COEF: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_CUBIC: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    AddBiasRow { a: ValueId, bias: ValueId },
    Scale { a: ValueId, factor: f64 },
    Transpose { a: ValueId },
    ConcatRows { parts: Vec<ValueId> },
    RowSoftmax { a: ValueId },
    LayerNorm { a: ValueId, gain: ValueId, bias: ValueId },
    Gelu { a: ValueId },
    EmbeddingGather { table: ValueId, ids: Vec<usize> },
    CrossEntropy { logits: ValueId, labels: Vec<u8> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode AD tape over dense f64 tensors.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
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

    /// The forward value of a recorded node.
    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: &'static str, value: Tensor, op_record: Op) -> Result<ValueId> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op });
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: op_record,
        });
        Ok(id)
    }

    fn check_id(&self, id: ValueId) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(NumericsError::NotOnTape { id });
        }
        Ok(())
    }

    /// Register an input value (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Result<ValueId> {
        self.push("leaf", value, Op::Leaf)
    }

    /// `a @ b` for 2-D tensors `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        self.push(
            "matmul",
            Tensor::new(vec![m, n], out).expect("matmul output shape"),
            Op::Matmul { a, b },
        )
    }

    /// Elementwise `a + b`, shapes must match exactly.
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_id(a)?;
        self.check_id(b)?;
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.shape() != tb.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        self.push(
            "add",
            Tensor::new(ta.shape().to_vec(), data).expect("add output shape"),
            Op::Add { a, b },
        )
    }

    /// Add a bias vector `[n]` to every row of `a [m,n]`. The only broadcast
    /// this tape supports.
    pub fn add_bias_row(&mut self, a: ValueId, bias: ValueId) -> Result<ValueId> {
        self.check_id(a)?;
        self.check_id(bias)?;
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[bias].value);
        if ta.shape().len() != 2 || tb.shape().len() != 1 || ta.shape()[1] != tb.shape()[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "add_bias_row",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let n = ta.shape()[1];
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tb.data()[i % n])
            .collect();
        self.push(
            "add_bias_row",
            Tensor::new(ta.shape().to_vec(), data).expect("bias output shape"),
            Op::AddBiasRow { a, bias },
        )
    }

    /// `a * factor` elementwise for a constant factor.
    pub fn scale(&mut self, a: ValueId, factor: f64) -> Result<ValueId> {
        self.check_id(a)?;
        if !factor.is_finite() {
            return Err(NumericsError::InvalidArgument {
                op: "scale",
                msg: format!("non-finite factor {factor}"),
            });
        }
        let ta = &self.nodes[a].value;
        let data: Vec<f64> = ta.data().iter().map(|x| x * factor).collect();
        self.push(
            "scale",
            Tensor::new(ta.shape().to_vec(), data).expect("scale output shape"),
            Op::Scale { a, factor },
        )
    }

    /// Matrix transpose `[m,n] -> [n,m]`.
    pub fn transpose(&mut self, a: ValueId) -> Result<ValueId> {
        self.check_id(a)?;
        let ta = &self.nodes[a].value;
        if ta.shape().len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "transpose",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = ta.data()[i * n + j];
            }
        }
        self.push(
            "transpose",
            Tensor::new(vec![n, m], data).expect("transpose output shape"),
            Op::Transpose { a },
        )
    }

    /// Stack 2-D tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(NumericsError::InvalidArgument {
                op: "concat_rows",
                msg: "no parts".to_string(),
            });
        }
        for &p in parts {
            self.check_id(p)?;
        }
        let cols = self.nodes[parts[0]].value.shape().get(1).copied();
        let mut rows = 0;
        for &p in parts {
            let s = self.nodes[p].value.shape();
            if s.len() != 2 || s.get(1).copied() != cols {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.nodes[parts[0]].value.shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            rows += s[0];
        }
        let cols = cols.expect("2-D parts");
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.nodes[p].value.data());
        }
        self.push(
            "concat_rows",
            Tensor::new(vec![rows, cols], data).expect("concat output shape"),
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        )
    }

    /// Numerically stable softmax over each row of a 2-D tensor.
    pub fn row_softmax(&mut self, a: ValueId) -> Result<ValueId> {
        self.check_id(a)?;
        let ta = &self.nodes[a].value;
        if ta.shape().len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "row_softmax",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            softmax_row(&ta.data()[r * n..(r + 1) * n], &mut data[r * n..(r + 1) * n]);
        }
        self.push(
            "row_softmax",
            Tensor::new(vec![m, n], data).expect("softmax output shape"),
            Op::RowSoftmax { a },
        )
    }

    /// Row-wise layer normalization with per-column gain and bias vectors.
    pub fn layer_norm(&mut self, a: ValueId, gain: ValueId, bias: ValueId) -> Result<ValueId> {
        self.check_id(a)?;
        self.check_id(gain)?;
        self.check_id(bias)?;
        let ta = &self.nodes[a].value;
        let tg = &self.nodes[gain].value;
        let tb = &self.nodes[bias].value;
        if ta.shape().len() != 2 || tg.shape() != [ta.shape()[1]] || tb.shape() != [ta.shape()[1]]
        {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                lhs: ta.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            let row = &ta.data()[r * n..(r + 1) * n];
            let (mean, var) = row_moments(row);
            let inv_std = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            for c in 0..n {
                let xhat = (row[c] - mean) * inv_std;
                data[r * n + c] = tg.data()[c] * xhat + tb.data()[c];
            }
        }
        self.push(
            "layer_norm",
            Tensor::new(vec![m, n], data).expect("layer_norm output shape"),
            Op::LayerNorm { a, gain, bias },
        )
    }

    /// GELU activation (tanh form), elementwise.
    pub fn gelu(&mut self, a: ValueId) -> Result<ValueId> {
        self.check_id(a)?;
        let ta = &self.nodes[a].value;
        let data: Vec<f64> = ta.data().iter().map(|&x| gelu_fwd(x)).collect();
        self.push(
            "gelu",
            Tensor::new(ta.shape().to_vec(), data).expect("gelu output shape"),
            Op::Gelu { a },
        )
    }

    /// Gather rows of `table [v,d]` at the given indices -> `[len(ids), d]`.
    pub fn embedding_gather(&mut self, table: ValueId, ids: &[usize]) -> Result<ValueId> {
        self.check_id(table)?;
        let tt = &self.nodes[table].value;
        if tt.shape().len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "embedding_gather",
                lhs: tt.shape().to_vec(),
                rhs: vec![],
            });
        }
        if ids.is_empty() {
            return Err(NumericsError::InvalidArgument {
                op: "embedding_gather",
                msg: "empty id list".to_string(),
            });
        }
        let (v, d) = (tt.shape()[0], tt.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NumericsError::InvalidArgument {
                op: "embedding_gather",
                msg: format!("id {bad} out of range for table with {v} rows"),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&tt.data()[i * d..(i + 1) * d]);
        }
        self.push(
            "embedding_gather",
            Tensor::new(vec![ids.len(), d], data).expect("gather output shape"),
            Op::EmbeddingGather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Mean softmax cross-entropy of `logits [n,c]` against integer labels.
    /// Output is a `[1,1]` scalar.
    pub fn cross_entropy(&mut self, logits: ValueId, labels: &[u8]) -> Result<ValueId> {
        self.check_id(logits)?;
        let tl = &self.nodes[logits].value;
        if tl.shape().len() != 2 || tl.shape()[0] != labels.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (n, c) = (tl.shape()[0], tl.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= c) {
            return Err(NumericsError::InvalidArgument {
                op: "cross_entropy",
                msg: format!("label {bad} out of range for {c} classes"),
            });
        }
        let mut total = 0.0;
        for r in 0..n {
            let row = &tl.data()[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &z in row {
                sum += libm::exp(z - max);
            }
            total += libm::log(sum) + max - row[labels[r] as usize];
        }
        let loss = total / n as f64;
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    /// Reverse sweep from a scalar loss. Returns one gradient tensor per
    /// requested parameter id, in order; parameters the loss does not reach
    /// get zero gradients.
    pub fn grad(&self, loss: ValueId, params: &[ValueId]) -> Result<Vec<Tensor>> {
        self.check_id(loss)?;
        for &p in params {
            self.check_id(p)?;
        }
        let loss_tensor = &self.nodes[loss].value;
        if loss_tensor.numel() != 1 {
            return Err(NumericsError::LossNotScalar {
                shape: loss_tensor.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            let upstream = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_op(id, &upstream, &mut grads);
            grads[id] = Some(upstream);
        }

        let mut out = Vec::with_capacity(params.len());
        for &p in params {
            let shape = self.nodes[p].value.shape().to_vec();
            match &grads[p] {
                Some(g) => out.push(Tensor::new(shape, g.clone()).expect("grad shape")),
                None => out.push(Tensor::zeros(shape)),
            }
        }
        Ok(out)
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: ValueId, delta: &[f64]) {
        match &mut grads[id] {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => grads[id] = Some(delta.to_vec()),
        }
    }

    fn backward_op(&self, id: ValueId, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let ta = &self.nodes[*a].value;
                let tb = &self.nodes[*b].value;
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                // dA = dC @ B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += up[i * n + j] * tb.data()[p * n + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                // dB = A^T @ dC
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += ta.data()[i * k + p] * up[i * n + j];
                        }
                        db[p * n + j] = s;
                    }
                }
                Self::accumulate(grads, *a, &da);
                Self::accumulate(grads, *b, &db);
            }
            Op::Add { a, b } => {
                Self::accumulate(grads, *a, up);
                Self::accumulate(grads, *b, up);
            }
            Op::AddBiasRow { a, bias } => {
                Self::accumulate(grads, *a, up);
                let n = self.nodes[*bias].value.numel();
                let mut db = vec![0.0; n];
                for (i, u) in up.iter().enumerate() {
                    db[i % n] += u;
                }
                Self::accumulate(grads, *bias, &db);
            }
            Op::Scale { a, factor } => {
                let da: Vec<f64> = up.iter().map(|u| u * factor).collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::Transpose { a } => {
                let ta = &self.nodes[*a].value;
                let (m, n) = (ta.shape()[0], ta.shape()[1]);
                // upstream has shape [n, m]
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = up[j * m + i];
                    }
                }
                Self::accumulate(grads, *a, &da);
            }
            Op::ConcatRows { parts } => {
                let cols = self.nodes[*parts.first().expect("parts")].value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let rows = self.nodes[p].value.shape()[0];
                    let slice = &up[offset..offset + rows * cols];
                    Self::accumulate(grads, p, slice);
                    offset += rows * cols;
                }
            }
            Op::RowSoftmax { a } => {
                let ty = &self.nodes[id].value;
                let (m, n) = (ty.shape()[0], ty.shape()[1]);
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    let y = &ty.data()[r * n..(r + 1) * n];
                    let u = &up[r * n..(r + 1) * n];
                    let mut dot = 0.0;
                    for c in 0..n {
                        dot += u[c] * y[c];
                    }
                    for c in 0..n {
                        da[r * n + c] = y[c] * (u[c] - dot);
                    }
                }
                Self::accumulate(grads, *a, &da);
            }
            Op::LayerNorm { a, gain, bias } => {
                let ta = &self.nodes[*a].value;
                let tg = &self.nodes[*gain].value;
                let (m, n) = (ta.shape()[0], ta.shape()[1]);
                let mut da = vec![0.0; m * n];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for r in 0..m {
                    let row = &ta.data()[r * n..(r + 1) * n];
                    let u = &up[r * n..(r + 1) * n];
                    let (mean, var) = row_moments(row);
                    let inv_std = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
                    // dxhat, plus its row means against 1 and xhat
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    let mut xhat = vec![0.0; n];
                    let mut dxhat = vec![0.0; n];
                    for c in 0..n {
                        xhat[c] = (row[c] - mean) * inv_std;
                        dxhat[c] = u[c] * tg.data()[c];
                        mean_dxhat += dxhat[c];
                        mean_dxhat_xhat += dxhat[c] * xhat[c];
                        dg[c] += u[c] * xhat[c];
                        db[c] += u[c];
                    }
                    mean_dxhat /= n as f64;
                    mean_dxhat_xhat /= n as f64;
                    for c in 0..n {
                        da[r * n + c] =
                            inv_std * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                    }
                }
                Self::accumulate(grads, *a, &da);
                Self::accumulate(grads, *gain, &dg);
                Self::accumulate(grads, *bias, &db);
            }
            Op::Gelu { a } => {
                let ta = &self.nodes[*a].value;
                let da: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(up)
                    .map(|(&x, u)| u * gelu_grad(x))
                    .collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::EmbeddingGather { table, ids } => {
                let tt = &self.nodes[*table].value;
                let d = tt.shape()[1];
                let mut dt = vec![0.0; tt.numel()];
                for (row, &i) in ids.iter().enumerate() {
                    for c in 0..d {
                        dt[i * d + c] += up[row * d + c];
                    }
                }
                Self::accumulate(grads, *table, &dt);
            }
            Op::CrossEntropy { logits, labels } => {
                let tl = &self.nodes[*logits].value;
                let (n, c) = (tl.shape()[0], tl.shape()[1]);
                let scale = up[0] / n as f64;
                let mut dl = vec![0.0; n * c];
                let mut probs = vec![0.0; c];
                for r in 0..n {
                    softmax_row(&tl.data()[r * c..(r + 1) * c], &mut probs);
                    for j in 0..c {
                        let indicator = if j == labels[r] as usize { 1.0 } else { 0.0 };
                        dl[r * c + j] = scale * (probs[j] - indicator);
                    }
                }
                Self::accumulate(grads, *logits, &dl);
            }
        }
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += av * b[p * n + j];
            }
        }
    }
    c
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = libm::exp(z - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Mean and biased variance of a row.
fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mut mean = 0.0;
    for &x in row {
        mean += x;
    }
    mean /= n;
    let mut var = 0.0;
    for &x in row {
        var += (x - mean) * (x - mean);
    }
    var /= n;
    (mean, var)
}

fn gelu_fwd(x: f64) -> f64 {
    let u = GELU_COEF * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + libm::tanh(u))
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_COEF * (x + GELU_CUBIC * x * x * x);
    let t = libm::tanh(u);
    let du = GELU_COEF * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;
    use crate::rng::rng_from;
    use rand::Rng;

    fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_identity_leaves_matrix_unchanged() {
        let mut tape = Tape::new();
        let eye = tape
            .leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let a = tape
            .leaf(Tensor::matrix(2, 2, vec![3.5, -1.0, 0.25, 7.0]).unwrap())
            .unwrap();
        let out = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(out), tape.value(a));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let z = tape
            .leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap())
            .unwrap();
        let y = tape.row_softmax(z).unwrap();
        assert!((tape.value(y).data()[0] - 0.5).abs() < 1e-15);
        assert!((tape.value(y).data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_grad_matches_hand_derivation() {
        // softmax-CE at logits [0,0] with label 1: d/dz = softmax - onehot = [0.5, -0.5]
        let mut tape = Tape::new();
        let z = tape
            .leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap())
            .unwrap();
        let loss = tape.cross_entropy(z, &[1]).unwrap();
        let grads = tape.grad(loss, &[z]).unwrap();
        assert!((grads[0].data()[0] - 0.5).abs() < 1e-12);
        assert!((grads[0].data()[1] + 0.5).abs() < 1e-12);
        // and the loss itself is ln 2
        assert!((tape.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn grad_of_sum_is_ones_and_unreached_params_get_zero() {
        let mut tape = Tape::new();
        let theta = tape
            .leaf(Tensor::matrix(1, 3, vec![0.3, -0.7, 2.0]).unwrap())
            .unwrap();
        let unused = tape
            .leaf(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap())
            .unwrap();
        let ones = tape.leaf(Tensor::matrix(3, 1, vec![1.0; 3]).unwrap()).unwrap();
        let loss = tape.matmul(theta, ones).unwrap();
        let grads = tape.grad(loss, &[theta, unused]).unwrap();
        assert_eq!(grads[0].data(), &[1.0, 1.0, 1.0]);
        assert_eq!(grads[1].data(), &[0.0; 4]);
    }

    #[test]
    fn grad_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape
            .leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap())
            .unwrap();
        let err = tape.grad(a, &[a]).unwrap_err();
        assert!(matches!(err, NumericsError::LossNotScalar { .. }));
    }

    #[test]
    fn grad_rejects_id_not_on_tape() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(
            tape.grad(42, &[a]).unwrap_err(),
            NumericsError::NotOnTape { id: 42 }
        ));
    }

    #[test]
    fn shape_mismatch_error_names_the_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
        let b = tape.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "error should name the op: {msg}");
        assert!(msg.contains("[2, 3]"), "error should carry shapes: {msg}");
    }

    #[test]
    fn non_finite_output_is_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1e308)).unwrap();
        let b = tape.scale(a, 1e10);
        assert!(matches!(b, Err(NumericsError::NonFinite { op: "scale" })));
    }

    /// Reduce an arbitrary 2-D tape value to a scalar with fixed (non-uniform)
    /// weights so transposed or mis-indexed gradients cannot cancel out.
    fn spread_to_scalar(tape: &mut Tape, v: ValueId) -> ValueId {
        let (r, c) = {
            let t = tape.value(v);
            (t.shape()[0], t.shape()[1])
        };
        let left: Vec<f64> = (0..r).map(|i| 0.3 + 0.17 * i as f64).collect();
        let right: Vec<f64> = (0..c).map(|j| 0.2 - 0.11 * j as f64).collect();
        let lw = tape.leaf(Tensor::matrix(1, r, left).unwrap()).unwrap();
        let rw = tape.leaf(Tensor::matrix(c, 1, right).unwrap()).unwrap();
        let rowred = tape.matmul(lw, v).unwrap();
        tape.matmul(rowred, rw).unwrap()
    }

    /// Gradient check for one op family: build the graph, compare tape grads
    /// against central finite differences at eps = 1e-5.
    fn check_against_fd(
        build: impl Fn(&mut Tape, &[ValueId]) -> ValueId,
        params: Vec<Tensor>,
    ) {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = params
            .iter()
            .map(|p| tape.leaf(p.clone()).unwrap())
            .collect();
        let loss = build(&mut tape, &ids);
        let analytic = tape.grad(loss, &ids).unwrap();

        let fd = finite_diff_grad::<NumericsError>(
            |ps| {
                let mut t = Tape::new();
                let ids: Vec<ValueId> = ps.iter().map(|p| t.leaf(p.clone()).unwrap()).collect();
                let loss = build(&mut t, &ids);
                Ok(t.value(loss).item())
            },
            &params,
            1e-5,
        )
        .unwrap();

        for (a, f) in analytic.iter().zip(&fd) {
            for (x, y) in a.data().iter().zip(f.data()) {
                let denom = y.abs().max(1.0);
                assert!(
                    (x - y).abs() / denom < 1e-4,
                    "gradient mismatch: analytic {x} vs fd {y}"
                );
            }
        }
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut rng = rng_from(20_240_817);

        // matmul + add + bias row
        let a = random_tensor(&mut rng, 3, 4);
        let b = random_tensor(&mut rng, 4, 2);
        let c = random_tensor(&mut rng, 3, 2);
        let bias = Tensor::new(vec![2], vec![0.3, -0.6]).unwrap();
        check_against_fd(
            |t, ids| {
                let mm = t.matmul(ids[0], ids[1]).unwrap();
                let s = t.add(mm, ids[2]).unwrap();
                let sb = t.add_bias_row(s, ids[3]).unwrap();
                spread_to_scalar(t, sb)
            },
            vec![a, b, c, bias],
        );

        // scale + transpose + softmax
        let a = random_tensor(&mut rng, 3, 3);
        check_against_fd(
            |t, ids| {
                let tr = t.transpose(ids[0]).unwrap();
                let sc = t.scale(tr, 0.7).unwrap();
                let sm = t.row_softmax(sc).unwrap();
                spread_to_scalar(t, sm)
            },
            vec![a],
        );

        // layer norm
        let a = random_tensor(&mut rng, 2, 5);
        let gain: Vec<f64> = (0..5).map(|_| rng.gen_range(0.5..1.5)).collect();
        let bias: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.5..0.5)).collect();
        check_against_fd(
            |t, ids| {
                let ln = t.layer_norm(ids[0], ids[1], ids[2]).unwrap();
                spread_to_scalar(t, ln)
            },
            vec![
                a,
                Tensor::new(vec![5], gain).unwrap(),
                Tensor::new(vec![5], bias).unwrap(),
            ],
        );

        // gelu
        let a = random_tensor(&mut rng, 2, 4);
        check_against_fd(
            |t, ids| {
                let g = t.gelu(ids[0]).unwrap();
                spread_to_scalar(t, g)
            },
            vec![a],
        );

        // embedding gather (repeated index to exercise accumulation)
        let table = random_tensor(&mut rng, 5, 3);
        check_against_fd(
            |t, ids| {
                let g = t.embedding_gather(ids[0], &[0, 3, 3, 1]).unwrap();
                spread_to_scalar(t, g)
            },
            vec![table],
        );

        // concat rows + cross entropy
        let a = random_tensor(&mut rng, 1, 2);
        let b = random_tensor(&mut rng, 2, 2);
        check_against_fd(
            |t, ids| {
                let cat = t.concat_rows(&[ids[0], ids[1]]).unwrap();
                t.cross_entropy(cat, &[1, 0, 1]).unwrap()
            },
            vec![a, b],
        );
    }

    #[test]
    fn reverse_sweep_is_linear_in_the_loss() {
        // grad(a*L1 + b*L2) == a*grad(L1) + b*grad(L2) within 1e-12
        let mut rng = rng_from(7);
        let theta = random_tensor(&mut rng, 2, 2);
        let w = random_tensor(&mut rng, 2, 2);

        let build = |with_combo: Option<(f64, f64)>| -> (Vec<Tensor>, Option<Vec<Tensor>>) {
            let mut tape = Tape::new();
            let th = tape.leaf(theta.clone()).unwrap();
            let wv = tape.leaf(w.clone()).unwrap();
            let prod = tape.matmul(th, wv).unwrap();
            let l1 = tape.cross_entropy(prod, &[0, 1]).unwrap();
            let sm = tape.row_softmax(prod).unwrap();
            let l2 = spread_to_scalar(&mut tape, sm);
            match with_combo {
                None => {
                    let g1 = tape.grad(l1, &[th, wv]).unwrap();
                    let g2 = tape.grad(l2, &[th, wv]).unwrap();
                    (g1, Some(g2))
                }
                Some((a, b)) => {
                    let l1s = tape.scale(l1, a).unwrap();
                    let l2s = tape.scale(l2, b).unwrap();
                    let combo = tape.add(l1s, l2s).unwrap();
                    (tape.grad(combo, &[th, wv]).unwrap(), None)
                }
            }
        };

        let (g1, g2) = build(None);
        let g2 = g2.unwrap();
        let (a, b) = (1.7, -0.4);
        let (combo, _) = build(Some((a, b)));
        for i in 0..2 {
            for (c, (x, y)) in combo[i].data().iter().zip(g1[i].data().iter().zip(g2[i].data())) {
                assert!((c - (a * x + b * y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_is_deterministic() {
        let run = || {
            let mut rng = rng_from(99);
            let mut tape = Tape::new();
            let a = tape.leaf(random_tensor(&mut rng, 3, 3)).unwrap();
            let b = tape.leaf(random_tensor(&mut rng, 3, 3)).unwrap();
            let mm = tape.matmul(a, b).unwrap();
            let sm = tape.row_softmax(mm).unwrap();
            let loss = tape.cross_entropy(sm, &[0, 2, 1]).unwrap();
            let grads = tape.grad(loss, &[a, b]).unwrap();
            (tape.value(loss).item(), grads)
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert!(l1.to_bits() == l2.to_bits());
        for (x, y) in g1.iter().zip(&g2) {
            assert_eq!(x, y);
        }
    }
}
