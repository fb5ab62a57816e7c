//! Tape-based reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation eagerly as it executes the forward
//! pass. Each operation appends a node holding its output value and the
//! indices of its parents, so parents always sit at smaller indices than
//! their children. [`Tape::backward`] walks the node list once in reverse,
//! accumulating gradients into every node that contributed to the loss.
//!
//! Gradients are allocated lazily: nodes off the path to the loss never
//! allocate a gradient matrix. A tape is built for one loss evaluation and
//! discarded; call [`Tape::backward`] at most once per tape.

use crate::math::{
    cst, gelu_deriv, gelu_value, l2_normalize_rows, layer_norm_rows, matmul, matmul_nt, matmul_tn,
    softmax_rows, Mat, Real,
};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    MatMul { a: usize, b: usize },
    MatMulNt { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddRow { a: usize, row: usize },
    Scale { a: usize, k: F },
    Gelu { a: usize },
    SoftmaxRows { a: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, means: Vec<F>, rstds: Vec<F> },
    GatherRows { src: usize, indices: Vec<usize> },
    SliceCols { src: usize, start: usize },
    ConcatCols { parts: Vec<usize> },
    ConcatRows { parts: Vec<usize> },
    MeanPoolRows { src: usize, kept: Vec<usize> },
    L2NormalizeRows { src: usize, norms: Vec<F> },
    LogSumExpRows { src: usize },
    GatherRowItems { src: usize, items: Vec<(usize, usize)> },
    MeanAll { src: usize },
}

struct Node<F> {
    value: Mat<F>,
    grad: Option<Mat<F>>,
    op: Op<F>,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, grad: None, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Mat<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat<F> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v`, if it lay on the path to the loss.
    pub fn grad(&self, v: Var) -> Option<&Mat<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(&self.nodes[a.0].value, &self.nodes[b.0].value);
        self.push(value, Op::MatMul { a: a.0, b: b.0 })
    }

    /// `a · bᵀ` with `b` stored untransposed.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = matmul_nt(&self.nodes[a.0].value, &self.nodes[b.0].value);
        self.push(value, Op::MatMulNt { a: a.0, b: b.0 })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.nodes[a.0].value.clone();
        value.add_assign_mat(&self.nodes[b.0].value);
        self.push(value, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.nodes[a.0].value.clone();
        value.add_scaled(&self.nodes[b.0].value, -F::one());
        self.push(value, Op::Sub { a: a.0, b: b.0 })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let mut value = av.clone();
        for (x, &y) in value.data_mut().iter_mut().zip(bv.data().iter()) {
            *x *= y;
        }
        self.push(value, Op::Mul { a: a.0, b: b.0 })
    }

    /// Broadcast-add a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let rv = &self.nodes[row.0].value;
        assert_eq!(rv.shape(), (1, av.cols()), "add_row shape mismatch");
        let mut value = av.clone();
        for r in 0..value.rows() {
            let out = value.row_mut(r);
            for (x, &y) in out.iter_mut().zip(rv.row(0).iter()) {
                *x += y;
            }
        }
        self.push(value, Op::AddRow { a: a.0, row: row.0 })
    }

    pub fn scale(&mut self, a: Var, k: F) -> Var {
        let value = self.nodes[a.0].value.map(|x| x * k);
        self.push(value, Op::Scale { a: a.0, k })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(gelu_value);
        self.push(value, Op::Gelu { a: a.0 })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(&self.nodes[a.0].value);
        self.push(value, Op::SoftmaxRows { a: a.0 })
    }

    /// Per-row layer normalization with learned `gamma` and `beta` (`1×n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (value, means, rstds) = layer_norm_rows(
            &self.nodes[x.0].value,
            &self.nodes[gamma.0].value,
            &self.nodes[beta.0].value,
        );
        self.push(value, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, means, rstds })
    }

    /// Select rows of `src` by index; an index may repeat.
    pub fn gather_rows(&mut self, src: Var, indices: &[usize]) -> Var {
        let sv = &self.nodes[src.0].value;
        let mut value = Mat::zeros(indices.len(), sv.cols());
        for (i, &ri) in indices.iter().enumerate() {
            value.row_mut(i).copy_from_slice(sv.row(ri));
        }
        self.push(value, Op::GatherRows { src: src.0, indices: indices.to_vec() })
    }

    /// Columns `start..start + width` of `src`.
    pub fn slice_cols(&mut self, src: Var, start: usize, width: usize) -> Var {
        let sv = &self.nodes[src.0].value;
        assert!(start + width <= sv.cols(), "slice_cols out of range");
        let mut value = Mat::zeros(sv.rows(), width);
        for r in 0..sv.rows() {
            value.row_mut(r).copy_from_slice(&sv.row(r)[start..start + width]);
        }
        self.push(value, Op::SliceCols { src: src.0, start })
    }

    /// Horizontal concatenation; all parts share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.nodes[parts[0].0].value.rows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
        let mut value = Mat::zeros(rows, total);
        let mut offset = 0;
        for p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                value.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(value, Op::ConcatCols { parts: parts.iter().map(|p| p.0).collect() })
    }

    /// Vertical concatenation; all parts share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let cols = self.nodes[parts[0].0].value.cols();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.rows()).sum();
        let mut value = Mat::zeros(total, cols);
        let mut offset = 0;
        for p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            for r in 0..pv.rows() {
                value.row_mut(offset + r).copy_from_slice(pv.row(r));
            }
            offset += pv.rows();
        }
        self.push(value, Op::ConcatRows { parts: parts.iter().map(|p| p.0).collect() })
    }

    /// Mean of the listed rows of `src`, as a `1×n` matrix.
    pub fn mean_pool_rows(&mut self, src: Var, kept: &[usize]) -> Var {
        assert!(!kept.is_empty(), "mean_pool_rows needs at least one row");
        let sv = &self.nodes[src.0].value;
        let inv = F::one() / cst::<F>(kept.len() as f64);
        let mut value = Mat::zeros(1, sv.cols());
        for &r in kept {
            let out = value.row_mut(0);
            for (x, &y) in out.iter_mut().zip(sv.row(r).iter()) {
                *x += y;
            }
        }
        for x in value.data_mut() {
            *x *= inv;
        }
        self.push(value, Op::MeanPoolRows { src: src.0, kept: kept.to_vec() })
    }

    /// Normalize each row of `src` to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, src: Var) -> Var {
        let (value, norms) = l2_normalize_rows(&self.nodes[src.0].value);
        self.push(value, Op::L2NormalizeRows { src: src.0, norms })
    }

    /// Per-row `ln Σ exp`, as an `m×1` matrix. Max-subtracted for stability.
    pub fn logsumexp_rows(&mut self, src: Var) -> Var {
        let sv = &self.nodes[src.0].value;
        let mut value = Mat::zeros(sv.rows(), 1);
        for r in 0..sv.rows() {
            let row = sv.row(r);
            let mut max = row[0];
            for &v in row {
                if v > max {
                    max = v;
                }
            }
            let mut sum = F::zero();
            for &v in row {
                sum += (v - max).exp();
            }
            value.set(r, 0, max + sum.ln());
        }
        self.push(value, Op::LogSumExpRows { src: src.0 })
    }

    /// Pick individual `(row, col)` entries of `src`, as a `len×1` matrix.
    pub fn gather_row_items(&mut self, src: Var, items: &[(usize, usize)]) -> Var {
        let sv = &self.nodes[src.0].value;
        let mut value = Mat::zeros(items.len(), 1);
        for (i, &(r, c)) in items.iter().enumerate() {
            value.set(i, 0, sv.get(r, c));
        }
        self.push(value, Op::GatherRowItems { src: src.0, items: items.to_vec() })
    }

    /// Mean over every entry, as a `1×1` matrix.
    pub fn mean_all(&mut self, src: Var) -> Var {
        let sv = &self.nodes[src.0].value;
        let inv = F::one() / cst::<F>((sv.rows() * sv.cols()) as f64);
        let mut sum = F::zero();
        for &v in sv.data() {
            sum += v;
        }
        self.push(Mat::from_vec(1, 1, vec![sum * inv]), Op::MeanAll { src: src.0 })
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> F {
        let m = &self.nodes[v.0].value;
        assert_eq!(m.shape(), (1, 1), "scalar expects a 1×1 node");
        m.get(0, 0)
    }

    /// Run the reverse pass from a `1×1` loss node.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.nodes[loss.0].value.shape(), (1, 1), "loss must be 1×1");
        self.nodes[loss.0].grad = Some(Mat::filled(1, 1, F::one()));
        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let Some(g) = node.grad.take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let da = matmul_nt(&g, &before[*b].value);
                    let db = matmul_tn(&before[*a].value, &g);
                    accumulate(&mut before[*a].grad, &da);
                    accumulate(&mut before[*b].grad, &db);
                }
                Op::MatMulNt { a, b } => {
                    let da = matmul(&g, &before[*b].value);
                    let db = matmul_tn(&g, &before[*a].value);
                    accumulate(&mut before[*a].grad, &da);
                    accumulate(&mut before[*b].grad, &db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut before[*a].grad, &g);
                    accumulate(&mut before[*b].grad, &g);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut before[*a].grad, &g);
                    accumulate_scaled(&mut before[*b].grad, &g, -F::one());
                }
                Op::Mul { a, b } => {
                    let mut da = g.clone();
                    for (x, &y) in da.data_mut().iter_mut().zip(before[*b].value.data().iter()) {
                        *x *= y;
                    }
                    let mut db = g.clone();
                    for (x, &y) in db.data_mut().iter_mut().zip(before[*a].value.data().iter()) {
                        *x *= y;
                    }
                    accumulate(&mut before[*a].grad, &da);
                    accumulate(&mut before[*b].grad, &db);
                }
                Op::AddRow { a, row } => {
                    let mut drow = Mat::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        let out = drow.row_mut(0);
                        for (x, &y) in out.iter_mut().zip(g.row(r).iter()) {
                            *x += y;
                        }
                    }
                    accumulate(&mut before[*a].grad, &g);
                    accumulate(&mut before[*row].grad, &drow);
                }
                Op::Scale { a, k } => {
                    accumulate_scaled(&mut before[*a].grad, &g, *k);
                }
                Op::Gelu { a } => {
                    let mut da = g.clone();
                    for (x, &v) in da.data_mut().iter_mut().zip(before[*a].value.data().iter()) {
                        *x *= gelu_deriv(v);
                    }
                    accumulate(&mut before[*a].grad, &da);
                }
                Op::SoftmaxRows { a } => {
                    let s = &node.value;
                    let mut da = Mat::zeros(s.rows(), s.cols());
                    for r in 0..s.rows() {
                        let s_row = s.row(r);
                        let g_row = g.row(r);
                        let mut dot = F::zero();
                        for (&gt, &st) in g_row.iter().zip(s_row.iter()) {
                            dot += gt * st;
                        }
                        let out = da.row_mut(r);
                        for (c, x) in out.iter_mut().enumerate() {
                            *x = s_row[c] * (g_row[c] - dot);
                        }
                    }
                    accumulate(&mut before[*a].grad, &da);
                }
                Op::LayerNorm { x, gamma, beta, means, rstds } => {
                    let xv = &before[*x].value;
                    let gv = &before[*gamma].value;
                    let d = xv.cols();
                    let inv_d = F::one() / cst::<F>(d as f64);
                    let mut dx = Mat::zeros(xv.rows(), d);
                    let mut dgamma = Mat::zeros(1, d);
                    let mut dbeta = Mat::zeros(1, d);
                    for r in 0..xv.rows() {
                        let mean = means[r];
                        let rstd = rstds[r];
                        let x_row = xv.row(r);
                        let g_row = g.row(r);
                        let mut sum_dxh = F::zero();
                        let mut sum_dxh_xh = F::zero();
                        for c in 0..d {
                            let xh = (x_row[c] - mean) * rstd;
                            let dxh = g_row[c] * gv.get(0, c);
                            dgamma.data_mut()[c] += g_row[c] * xh;
                            dbeta.data_mut()[c] += g_row[c];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh;
                        }
                        let mean_dxh = sum_dxh * inv_d;
                        let mean_dxh_xh = sum_dxh_xh * inv_d;
                        let out = dx.row_mut(r);
                        for (c, slot) in out.iter_mut().enumerate() {
                            let xh = (x_row[c] - mean) * rstd;
                            let dxh = g_row[c] * gv.get(0, c);
                            *slot = rstd * (dxh - mean_dxh - xh * mean_dxh_xh);
                        }
                    }
                    accumulate(&mut before[*x].grad, &dx);
                    accumulate(&mut before[*gamma].grad, &dgamma);
                    accumulate(&mut before[*beta].grad, &dbeta);
                }
                Op::GatherRows { src, indices } => {
                    let sv_shape = before[*src].value.shape();
                    let mut dsrc = Mat::zeros(sv_shape.0, sv_shape.1);
                    for (i, &ri) in indices.iter().enumerate() {
                        let out = dsrc.row_mut(ri);
                        for (x, &y) in out.iter_mut().zip(g.row(i).iter()) {
                            *x += y;
                        }
                    }
                    accumulate(&mut before[*src].grad, &dsrc);
                }
                Op::SliceCols { src, start } => {
                    let sv_shape = before[*src].value.shape();
                    let mut dsrc = Mat::zeros(sv_shape.0, sv_shape.1);
                    for r in 0..g.rows() {
                        dsrc.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut before[*src].grad, &dsrc);
                }
                Op::ConcatCols { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv_cols = before[p].value.cols();
                        let mut dp = Mat::zeros(g.rows(), pv_cols);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + pv_cols]);
                        }
                        accumulate(&mut before[p].grad, &dp);
                        offset += pv_cols;
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv_rows = before[p].value.rows();
                        let mut dp = Mat::zeros(pv_rows, g.cols());
                        for r in 0..pv_rows {
                            dp.row_mut(r).copy_from_slice(g.row(offset + r));
                        }
                        accumulate(&mut before[p].grad, &dp);
                        offset += pv_rows;
                    }
                }
                Op::MeanPoolRows { src, kept } => {
                    let sv_shape = before[*src].value.shape();
                    let inv = F::one() / cst::<F>(kept.len() as f64);
                    let mut dsrc = Mat::zeros(sv_shape.0, sv_shape.1);
                    for &r in kept {
                        let out = dsrc.row_mut(r);
                        for (x, &y) in out.iter_mut().zip(g.row(0).iter()) {
                            *x += y * inv;
                        }
                    }
                    accumulate(&mut before[*src].grad, &dsrc);
                }
                Op::L2NormalizeRows { src, norms } => {
                    let y = &node.value;
                    let mut dsrc = Mat::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let y_row = y.row(r);
                        let g_row = g.row(r);
                        let mut dot = F::zero();
                        for (&gt, &yt) in g_row.iter().zip(y_row.iter()) {
                            dot += gt * yt;
                        }
                        let inv_n = F::one() / norms[r];
                        let out = dsrc.row_mut(r);
                        for (c, x) in out.iter_mut().enumerate() {
                            *x = (g_row[c] - dot * y_row[c]) * inv_n;
                        }
                    }
                    accumulate(&mut before[*src].grad, &dsrc);
                }
                Op::LogSumExpRows { src } => {
                    let xv = &before[*src].value;
                    let lse = &node.value;
                    let mut dsrc = Mat::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let gr = g.get(r, 0);
                        let l = lse.get(r, 0);
                        let x_row = xv.row(r);
                        let out = dsrc.row_mut(r);
                        for (c, slot) in out.iter_mut().enumerate() {
                            *slot = (x_row[c] - l).exp() * gr;
                        }
                    }
                    accumulate(&mut before[*src].grad, &dsrc);
                }
                Op::GatherRowItems { src, items } => {
                    let sv_shape = before[*src].value.shape();
                    let mut dsrc = Mat::zeros(sv_shape.0, sv_shape.1);
                    for (i, &(r, c)) in items.iter().enumerate() {
                        let cur = dsrc.get(r, c);
                        dsrc.set(r, c, cur + g.get(i, 0));
                    }
                    accumulate(&mut before[*src].grad, &dsrc);
                }
                Op::MeanAll { src } => {
                    let sv_shape = before[*src].value.shape();
                    let scale = g.get(0, 0) / cst::<F>((sv_shape.0 * sv_shape.1) as f64);
                    let delta = Mat::filled(sv_shape.0, sv_shape.1, scale);
                    accumulate(&mut before[*src].grad, &delta);
                }
            }
            rest[0].grad = Some(g);
        }
    }
}

fn accumulate<F: Real>(slot: &mut Option<Mat<F>>, delta: &Mat<F>) {
    match slot {
        Some(m) => m.add_assign_mat(delta),
        None => *slot = Some(delta.clone()),
    }
}

fn accumulate_scaled<F: Real>(slot: &mut Option<Mat<F>>, delta: &Mat<F>, k: F) {
    match slot {
        Some(m) => m.add_scaled(delta, k),
        None => {
            let mut m = Mat::zeros(delta.rows(), delta.cols());
            m.add_scaled(delta, k);
            *slot = Some(m);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat<f64> {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Mat::from_vec(rows, cols, data)
    }

    /// Checks analytic input gradients against central finite differences.
    ///
    /// `build` receives leaves for each input and must return a 1×1 loss.
    fn fd_check(inputs: &[Mat<f64>], build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let eval = |mats: &[Mat<f64>]| -> f64 {
            let mut tape = Tape::new();
            let leaves: Vec<Var> = mats.iter().map(|m| tape.leaf(m.clone())).collect();
            let loss = build(&mut tape, &leaves);
            tape.scalar(loss)
        };

        let mut tape = Tape::new();
        let leaves: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let loss = build(&mut tape, &leaves);
        tape.backward(loss);

        let h = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let grad = tape.grad(*leaf).expect("input should receive a gradient").clone();
            for r in 0..inputs[li].rows() {
                for c in 0..inputs[li].cols() {
                    let mut plus = inputs.to_vec();
                    plus[li].set(r, c, inputs[li].get(r, c) + h);
                    let mut minus = inputs.to_vec();
                    minus[li].set(r, c, inputs[li].get(r, c) - h);
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let an = grad.get(r, c);
                    let denom = fd.abs().max(an.abs()).max(1e-8);
                    assert!(
                        (fd - an).abs() / denom < 1e-5,
                        "input {li} entry ({r},{c}): fd={fd} analytic={an}"
                    );
                }
            }
        }
    }

    /// Weighted mean turns any matrix output into a scalar with distinct
    /// per-entry gradient contributions.
    fn weighted_loss(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
        let shape = tape.value(out).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = tape.leaf(random_mat(&mut rng, shape.0, shape.1));
        let prod = tape.mul(out, w);
        tape.mean_all(prod)
    }

    #[test]
    fn matmul_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_mat(&mut rng, 3, 4);
        let b = random_mat(&mut rng, 4, 2);
        fd_check(&[a, b], |t, vs| {
            let c = t.matmul(vs[0], vs[1]);
            weighted_loss(t, c, 11)
        });
    }

    #[test]
    fn matmul_nt_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_mat(&mut rng, 3, 4);
        let b = random_mat(&mut rng, 5, 4);
        fd_check(&[a, b], |t, vs| {
            let c = t.matmul_nt(vs[0], vs[1]);
            weighted_loss(t, c, 12)
        });
    }

    #[test]
    fn add_sub_mul_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_mat(&mut rng, 2, 3);
        let b = random_mat(&mut rng, 2, 3);
        let c = random_mat(&mut rng, 2, 3);
        fd_check(&[a, b, c], |t, vs| {
            let s = t.add(vs[0], vs[1]);
            let d = t.sub(s, vs[2]);
            let m = t.mul(d, vs[0]);
            weighted_loss(t, m, 13)
        });
    }

    #[test]
    fn add_row_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_mat(&mut rng, 3, 4);
        let row = random_mat(&mut rng, 1, 4);
        fd_check(&[a, row], |t, vs| {
            let s = t.add_row(vs[0], vs[1]);
            weighted_loss(t, s, 14)
        });
    }

    #[test]
    fn scale_gelu_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_mat(&mut rng, 2, 5);
        fd_check(&[a], |t, vs| {
            let s = t.scale(vs[0], 1.7);
            let g = t.gelu(s);
            weighted_loss(t, g, 15)
        });
    }

    #[test]
    fn softmax_rows_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_mat(&mut rng, 3, 4);
        fd_check(&[a], |t, vs| {
            let s = t.softmax_rows(vs[0]);
            weighted_loss(t, s, 16)
        });
    }

    #[test]
    fn layer_norm_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_mat(&mut rng, 3, 6);
        let gamma = random_mat(&mut rng, 1, 6);
        let beta = random_mat(&mut rng, 1, 6);
        fd_check(&[x, gamma, beta], |t, vs| {
            let y = t.layer_norm(vs[0], vs[1], vs[2]);
            weighted_loss(t, y, 17)
        });
    }

    #[test]
    fn gather_rows_backward_with_repeats() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let src = random_mat(&mut rng, 4, 3);
        fd_check(&[src], |t, vs| {
            let g = t.gather_rows(vs[0], &[2, 0, 2, 3]);
            weighted_loss(t, g, 18)
        });
    }

    #[test]
    fn slice_concat_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src = random_mat(&mut rng, 3, 6);
        fd_check(&[src], |t, vs| {
            let left = t.slice_cols(vs[0], 0, 2);
            let mid = t.slice_cols(vs[0], 2, 3);
            let right = t.slice_cols(vs[0], 5, 1);
            let joined = t.concat_cols(&[right, left, mid]);
            weighted_loss(t, joined, 19)
        });
    }

    #[test]
    fn concat_rows_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_mat(&mut rng, 2, 3);
        let b = random_mat(&mut rng, 1, 3);
        fd_check(&[a, b], |t, vs| {
            let joined = t.concat_rows(&[vs[1], vs[0]]);
            weighted_loss(t, joined, 20)
        });
    }

    #[test]
    fn mean_pool_rows_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let src = random_mat(&mut rng, 5, 3);
        fd_check(&[src], |t, vs| {
            let pooled = t.mean_pool_rows(vs[0], &[0, 2, 3]);
            weighted_loss(t, pooled, 21)
        });
    }

    #[test]
    fn l2_normalize_rows_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let src = random_mat(&mut rng, 3, 4);
        fd_check(&[src], |t, vs| {
            let y = t.l2_normalize_rows(vs[0]);
            weighted_loss(t, y, 22)
        });
    }

    #[test]
    fn logsumexp_rows_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let src = random_mat(&mut rng, 3, 5);
        fd_check(&[src], |t, vs| {
            let lse = t.logsumexp_rows(vs[0]);
            weighted_loss(t, lse, 23)
        });
    }

    #[test]
    fn gather_row_items_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let src = random_mat(&mut rng, 3, 4);
        fd_check(&[src], |t, vs| {
            let picked = t.gather_row_items(vs[0], &[(0, 1), (2, 3), (0, 1)]);
            weighted_loss(t, picked, 24)
        });
    }

    #[test]
    fn cross_entropy_composite_backward() {
        // Softmax cross-entropy assembled the way the contrastive loss
        // builds it: logsumexp minus the target logit.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let logits = random_mat(&mut rng, 4, 5);
        fd_check(&[logits], |t, vs| {
            let lse = t.logsumexp_rows(vs[0]);
            let targets = t.gather_row_items(vs[0], &[(0, 0), (1, 2), (2, 4), (3, 1)]);
            let per_row = t.sub(lse, targets);
            t.mean_all(per_row)
        });
    }

    #[test]
    fn grads_absent_off_the_loss_path() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(Mat::filled(2, 2, 1.0));
        let b = tape.leaf(Mat::filled(2, 2, 2.0));
        let _unused = tape.mul(a, b);
        let used = tape.mul(a, a);
        let loss = tape.mean_all(used);
        tape.backward(loss);
        assert!(tape.grad(a).is_some());
        assert!(tape.grad(b).is_none());
    }

    #[test]
    fn gradient_accumulates_across_multiple_uses() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(Mat::filled(1, 1, 3.0));
        let sq = tape.mul(a, a);
        let loss = tape.mean_all(sq);
        tape.backward(loss);
        // d(a²)/da = 2a = 6
        assert!((tape.grad(a).unwrap().get(0, 0) - 6.0).abs() < 1e-12);
    }
}
