//! Reverse-mode automatic differentiation over f64 tensors.
//!
//! A [`Tape`] records every operation of a forward pass eagerly; a
//! single [`Tape::backward`] sweep then accumulates exact gradients
//! for every parameter that participated. The op set is exactly what
//! the VAE needs: dense algebra, 1-d (de)convolutions, row gathers and
//! segment means for graph message passing, and fused losses.
//!
//! Everything is f64 and sequential, so results are bitwise
//! reproducible and finite-difference checks are meaningful.

use super::params::{ParamGrads, ParamSet};

/// A dense row-major tensor. Rank is 1 or 2 almost everywhere;
/// convolution weights are rank 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }
}

/// out[m,n] += a[m,k] * b[k,n], ikj order over contiguous rows.
fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            if a_ik == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                *o += a_ik * b_kj;
            }
        }
    }
}

/// out[m,n] += a[k,m]^T * b[k,n]
fn matmul_at_b_acc(out: &mut [f64], a: &[f64], b: &[f64], k: usize, m: usize, n: usize) {
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for (i, &a_ki) in a_row.iter().enumerate() {
            if a_ki == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                *o += a_ki * b_kj;
            }
        }
    }
}

/// out[m,k] += a[m,n] * b[k,n]^T
fn matmul_a_bt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o += acc;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

enum Op {
    /// Parameter leaf; value lives in the [`ParamSet`].
    Leaf(usize),
    /// Constant input; no gradient.
    Const,
    MatMul { a: VarId, b: VarId },
    /// [m,n] plus a broadcast [n] bias row.
    AddRow { a: VarId, bias: VarId },
    Add { a: VarId, b: VarId },
    Scale { a: VarId, c: f64 },
    /// Elementwise product with a constant tensor.
    MulConst { a: VarId, c: Vec<f64> },
    Relu { a: VarId },
    Sigmoid { a: VarId },
    Exp { a: VarId },
    /// Row selection: out.row(i) = a.row(idx[i]).
    GatherRows { a: VarId, idx: Vec<usize> },
    /// Mean of rows grouped by segment id; empty segments yield zeros.
    SegmentMean { a: VarId, seg: Vec<usize>, counts: Vec<usize> },
    Reshape { a: VarId },
    /// Column-wise concatenation of two matrices with equal row count.
    ConcatCols { a: VarId, b: VarId },
    SliceCols { a: VarId, from: usize, to: usize },
    Conv1d { x: VarId, w: VarId, b: VarId, stride: usize, pad: usize },
    ConvT1d { x: VarId, w: VarId, b: VarId, stride: usize, pad: usize },
    /// Mean binary cross-entropy with logits against constant targets.
    BceMean { logits: VarId, targets: Vec<f64> },
    /// Mean softmax cross-entropy; one target class per row.
    CeMean { logits: VarId, targets: Vec<usize> },
    /// 0.5 * sum(exp(2*ls) + mu^2 - 1 - 2*ls).
    GaussKld { mu: VarId, logsigma: VarId },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// An eager forward-computation tape bound to one parameter set.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Tape<'p> {
        Tape { params, nodes: Vec::with_capacity(256) }
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> VarId {
        self.nodes.push(Node { op, value });
        VarId(self.nodes.len() - 1)
    }

    /// Brings a parameter onto the tape.
    pub fn param(&mut self, param_id: usize) -> VarId {
        let p = &self.params.entries[param_id];
        let value = Tensor::from_vec(&p.shape, p.data.clone());
        self.push(Op::Leaf(param_id), value)
    }

    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.push(Op::Const, t)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = Tensor::zeros(&[m, n]);
        matmul_acc(&mut out.data, &ta.data, &tb.data, m, k, n);
        self.push(Op::MatMul { a, b }, out)
    }

    pub fn add_row(&mut self, a: VarId, bias: VarId) -> VarId {
        let (ta, tb) = (self.value(a), self.value(bias));
        let n = ta.cols();
        assert_eq!(tb.numel(), n, "bias length");
        let mut out = ta.clone();
        for row in out.data.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(&tb.data) {
                *o += b;
            }
        }
        self.push(Op::AddRow { a, bias }, out)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "add shapes");
        let mut out = ta.clone();
        for (o, x) in out.data.iter_mut().zip(&tb.data) {
            *o += x;
        }
        self.push(Op::Add { a, b }, out)
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let mut out = self.value(a).clone();
        for o in &mut out.data {
            *o *= c;
        }
        self.push(Op::Scale { a, c }, out)
    }

    pub fn mul_const(&mut self, a: VarId, c: &[f64]) -> VarId {
        let ta = self.value(a);
        assert_eq!(ta.numel(), c.len(), "mul_const length");
        let mut out = ta.clone();
        for (o, x) in out.data.iter_mut().zip(c) {
            *o *= x;
        }
        self.push(Op::MulConst { a, c: c.to_vec() }, out)
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let mut out = self.value(a).clone();
        for o in &mut out.data {
            if *o < 0.0 {
                *o = 0.0;
            }
        }
        self.push(Op::Relu { a }, out)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let mut out = self.value(a).clone();
        for o in &mut out.data {
            *o = 1.0 / (1.0 + (-*o).exp());
        }
        self.push(Op::Sigmoid { a }, out)
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        let mut out = self.value(a).clone();
        for o in &mut out.data {
            *o = o.exp();
        }
        self.push(Op::Exp { a }, out)
    }

    pub fn gather_rows(&mut self, a: VarId, idx: &[usize]) -> VarId {
        let ta = self.value(a);
        let n = ta.cols();
        let mut out = Tensor::zeros(&[idx.len(), n]);
        for (i, &r) in idx.iter().enumerate() {
            out.data[i * n..(i + 1) * n].copy_from_slice(&ta.data[r * n..(r + 1) * n]);
        }
        self.push(Op::GatherRows { a, idx: idx.to_vec() }, out)
    }

    /// Mean of `a`'s rows grouped by `seg[row]`; segments with no rows
    /// come out as zero rows.
    pub fn segment_mean(&mut self, a: VarId, seg: &[usize], n_seg: usize) -> VarId {
        let ta = self.value(a);
        assert_eq!(ta.rows(), seg.len(), "segment count");
        let n = ta.cols();
        let mut counts = vec![0usize; n_seg];
        for &s in seg {
            counts[s] += 1;
        }
        let mut out = Tensor::zeros(&[n_seg, n]);
        for (row, &s) in seg.iter().enumerate() {
            let src = &ta.data[row * n..(row + 1) * n];
            let dst = &mut out.data[s * n..(s + 1) * n];
            for (d, x) in dst.iter_mut().zip(src) {
                *d += x;
            }
        }
        for (s, &cnt) in counts.iter().enumerate() {
            if cnt > 1 {
                let inv = 1.0 / cnt as f64;
                for d in &mut out.data[s * n..(s + 1) * n] {
                    *d *= inv;
                }
            }
        }
        self.push(Op::SegmentMean { a, seg: seg.to_vec(), counts }, out)
    }

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> VarId {
        let ta = self.value(a);
        assert_eq!(ta.numel(), shape.iter().product::<usize>(), "reshape numel");
        let out = Tensor::from_vec(shape, ta.data.clone());
        self.push(Op::Reshape { a }, out)
    }

    pub fn concat_cols(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows(), tb.rows(), "concat rows");
        let (m, na, nb) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(&[m, na + nb]);
        for i in 0..m {
            out.data[i * (na + nb)..i * (na + nb) + na]
                .copy_from_slice(&ta.data[i * na..(i + 1) * na]);
            out.data[i * (na + nb) + na..(i + 1) * (na + nb)]
                .copy_from_slice(&tb.data[i * nb..(i + 1) * nb]);
        }
        self.push(Op::ConcatCols { a, b }, out)
    }

    pub fn slice_cols(&mut self, a: VarId, from: usize, to: usize) -> VarId {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        assert!(from < to && to <= n, "slice bounds");
        let w = to - from;
        let mut out = Tensor::zeros(&[m, w]);
        for i in 0..m {
            out.data[i * w..(i + 1) * w].copy_from_slice(&ta.data[i * n + from..i * n + to]);
        }
        self.push(Op::SliceCols { a, from, to }, out)
    }

    /// x: [c_in, len], w: [c_out, c_in, k], b: [c_out].
    pub fn conv1d(&mut self, x: VarId, w: VarId, b: VarId, stride: usize, pad: usize) -> VarId {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (c_in, len) = (tx.shape[0], tx.shape[1]);
        let (c_out, c_in2, k) = (tw.shape[0], tw.shape[1], tw.shape[2]);
        assert_eq!(c_in, c_in2, "conv channels");
        assert_eq!(tb.numel(), c_out, "conv bias");
        let l_out = (len + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[c_out, l_out]);
        for co in 0..c_out {
            for j in 0..l_out {
                let mut acc = tb.data[co];
                for ci in 0..c_in {
                    for kk in 0..k {
                        let pos = j * stride + kk;
                        if pos < pad || pos - pad >= len {
                            continue;
                        }
                        acc += tx.data[ci * len + pos - pad] * tw.data[(co * c_in + ci) * k + kk];
                    }
                }
                out.data[co * l_out + j] = acc;
            }
        }
        self.push(Op::Conv1d { x, w, b, stride, pad }, out)
    }

    /// Transposed conv: x: [c_in, len], w: [c_in, c_out, k], b: [c_out].
    /// Output length (len-1)*stride + k - 2*pad.
    pub fn conv1d_transpose(&mut self, x: VarId, w: VarId, b: VarId, stride: usize, pad: usize) -> VarId {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (c_in, len) = (tx.shape[0], tx.shape[1]);
        let (c_in2, c_out, k) = (tw.shape[0], tw.shape[1], tw.shape[2]);
        assert_eq!(c_in, c_in2, "deconv channels");
        assert_eq!(tb.numel(), c_out, "deconv bias");
        let l_out = (len - 1) * stride + k - 2 * pad;
        let mut out = Tensor::zeros(&[c_out, l_out]);
        for co in 0..c_out {
            for i in 0..l_out {
                out.data[co * l_out + i] = tb.data[co];
            }
        }
        for ci in 0..c_in {
            for j in 0..len {
                let xv = tx.data[ci * len + j];
                if xv == 0.0 {
                    continue;
                }
                for co in 0..c_out {
                    for kk in 0..k {
                        let pos = j * stride + kk;
                        if pos < pad || pos - pad >= l_out {
                            continue;
                        }
                        out.data[co * l_out + pos - pad] += xv * tw.data[(ci * c_out + co) * k + kk];
                    }
                }
            }
        }
        self.push(Op::ConvT1d { x, w, b, stride, pad }, out)
    }

    /// Numerically stable mean BCE-with-logits against 0/1 targets.
    pub fn bce_with_logits_mean(&mut self, logits: VarId, targets: &[f64]) -> VarId {
        let tl = self.value(logits);
        assert_eq!(tl.numel(), targets.len(), "bce target length");
        let n = targets.len().max(1) as f64;
        let mut total = 0.0;
        for (&x, &t) in tl.data.iter().zip(targets) {
            total += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
        }
        self.push(
            Op::BceMean { logits, targets: targets.to_vec() },
            Tensor::scalar(total / n),
        )
    }

    /// Mean softmax cross-entropy over rows; `targets[i]` is row i's class.
    pub fn cross_entropy_mean(&mut self, logits: VarId, targets: &[usize]) -> VarId {
        let tl = self.value(logits);
        assert_eq!(tl.rows(), targets.len(), "ce target rows");
        let v = tl.cols();
        let n = targets.len().max(1) as f64;
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &tl.data[i * v..(i + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let logsum = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            total += logsum - row[t];
        }
        self.push(
            Op::CeMean { logits, targets: targets.to_vec() },
            Tensor::scalar(total / n),
        )
    }

    /// KL(N(mu, sigma) || N(0, 1)) with sigma = exp(logsigma), summed
    /// over dimensions.
    pub fn gauss_kld(&mut self, mu: VarId, logsigma: VarId) -> VarId {
        let (tm, tl) = (self.value(mu), self.value(logsigma));
        assert_eq!(tm.numel(), tl.numel(), "kld dims");
        let mut total = 0.0;
        for (&m, &ls) in tm.data.iter().zip(&tl.data) {
            total += 0.5 * ((2.0 * ls).exp() + m * m - 1.0 - 2.0 * ls);
        }
        self.push(Op::GaussKld { mu, logsigma }, Tensor::scalar(total))
    }

    /// Reverse sweep from a scalar output, accumulating parameter
    /// gradients into `grads`.
    pub fn backward(&self, output: VarId, grads: &mut ParamGrads) {
        assert_eq!(self.value(output).numel(), 1, "backward needs a scalar output");
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let Some(grad) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf(param_id) => {
                    let g = &mut grads.grads[*param_id];
                    for (o, x) in g.iter_mut().zip(&grad) {
                        *o += x;
                    }
                }
                Op::Const => {}
                Op::MatMul { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let ga = ensure(&mut adj, *a, ta.numel());
                    matmul_a_bt_acc(ga, &grad, &tb.data, m, n, k);
                    let gb = ensure(&mut adj, *b, tb.numel());
                    matmul_at_b_acc(gb, &ta.data, &grad, m, k, n);
                }
                Op::AddRow { a, bias } => {
                    let n = self.value(*bias).numel();
                    accumulate(&mut adj, *a, &grad);
                    let gb = ensure(&mut adj, *bias, n);
                    for row in grad.chunks(n) {
                        for (o, x) in gb.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut adj, *a, &grad);
                    accumulate(&mut adj, *b, &grad);
                }
                Op::Scale { a, c } => {
                    let ga = ensure(&mut adj, *a, grad.len());
                    for (o, x) in ga.iter_mut().zip(&grad) {
                        *o += c * x;
                    }
                }
                Op::MulConst { a, c } => {
                    let ga = ensure(&mut adj, *a, grad.len());
                    for ((o, x), m) in ga.iter_mut().zip(&grad).zip(c) {
                        *o += x * m;
                    }
                }
                Op::Relu { a } => {
                    let ga = ensure(&mut adj, *a, grad.len());
                    for ((o, x), &y) in ga.iter_mut().zip(&grad).zip(&node.value.data) {
                        if y > 0.0 {
                            *o += x;
                        }
                    }
                }
                Op::Sigmoid { a } => {
                    let ga = ensure(&mut adj, *a, grad.len());
                    for ((o, x), &y) in ga.iter_mut().zip(&grad).zip(&node.value.data) {
                        *o += x * y * (1.0 - y);
                    }
                }
                Op::Exp { a } => {
                    let ga = ensure(&mut adj, *a, grad.len());
                    for ((o, x), &y) in ga.iter_mut().zip(&grad).zip(&node.value.data) {
                        *o += x * y;
                    }
                }
                Op::GatherRows { a, idx } => {
                    let ta = self.value(*a);
                    let n = ta.cols();
                    let ga = ensure(&mut adj, *a, ta.numel());
                    for (i, &r) in idx.iter().enumerate() {
                        let src = &grad[i * n..(i + 1) * n];
                        for (o, x) in ga[r * n..(r + 1) * n].iter_mut().zip(src) {
                            *o += x;
                        }
                    }
                }
                Op::SegmentMean { a, seg, counts, .. } => {
                    let ta = self.value(*a);
                    let n = ta.cols();
                    let ga = ensure(&mut adj, *a, ta.numel());
                    for (row, &s) in seg.iter().enumerate() {
                        let inv = 1.0 / counts[s] as f64;
                        let src = &grad[s * n..(s + 1) * n];
                        for (o, x) in ga[row * n..(row + 1) * n].iter_mut().zip(src) {
                            *o += x * inv;
                        }
                    }
                }
                Op::Reshape { a } => {
                    accumulate(&mut adj, *a, &grad);
                }
                Op::ConcatCols { a, b } => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, na, nb) = (ta.rows(), ta.cols(), tb.cols());
                    {
                        let ga = ensure(&mut adj, *a, ta.numel());
                        for i in 0..m {
                            let src = &grad[i * (na + nb)..i * (na + nb) + na];
                            for (o, x) in ga[i * na..(i + 1) * na].iter_mut().zip(src) {
                                *o += x;
                            }
                        }
                    }
                    let gb = ensure(&mut adj, *b, tb.numel());
                    for i in 0..m {
                        let src = &grad[i * (na + nb) + na..(i + 1) * (na + nb)];
                        for (o, x) in gb[i * nb..(i + 1) * nb].iter_mut().zip(src) {
                            *o += x;
                        }
                    }
                }
                Op::SliceCols { a, from, to } => {
                    let ta = self.value(*a);
                    let (n, w) = (ta.cols(), to - from);
                    let ga = ensure(&mut adj, *a, ta.numel());
                    for i in 0..ta.rows() {
                        let src = &grad[i * w..(i + 1) * w];
                        for (o, x) in ga[i * n + from..i * n + to].iter_mut().zip(src) {
                            *o += x;
                        }
                    }
                }
                Op::Conv1d { x, w, b, stride, pad } => {
                    let (tx, tw) = (self.value(*x), self.value(*w));
                    let (c_in, len) = (tx.shape[0], tx.shape[1]);
                    let (c_out, _, k) = (tw.shape[0], tw.shape[1], tw.shape[2]);
                    let l_out = node.value.shape[1];
                    {
                        let gx = ensure(&mut adj, *x, tx.numel());
                        for co in 0..c_out {
                            for j in 0..l_out {
                                let g = grad[co * l_out + j];
                                if g == 0.0 {
                                    continue;
                                }
                                for ci in 0..c_in {
                                    for kk in 0..k {
                                        let pos = j * stride + kk;
                                        if pos < *pad || pos - pad >= len {
                                            continue;
                                        }
                                        gx[ci * len + pos - pad] += g * tw.data[(co * c_in + ci) * k + kk];
                                    }
                                }
                            }
                        }
                    }
                    {
                        let gw = ensure(&mut adj, *w, tw.numel());
                        for co in 0..c_out {
                            for j in 0..l_out {
                                let g = grad[co * l_out + j];
                                if g == 0.0 {
                                    continue;
                                }
                                for ci in 0..c_in {
                                    for kk in 0..k {
                                        let pos = j * stride + kk;
                                        if pos < *pad || pos - pad >= len {
                                            continue;
                                        }
                                        gw[(co * c_in + ci) * k + kk] += g * tx.data[ci * len + pos - pad];
                                    }
                                }
                            }
                        }
                    }
                    let gb = ensure(&mut adj, *b, c_out);
                    for co in 0..c_out {
                        for j in 0..l_out {
                            gb[co] += grad[co * l_out + j];
                        }
                    }
                }
                Op::ConvT1d { x, w, b, stride, pad } => {
                    let (tx, tw) = (self.value(*x), self.value(*w));
                    let (c_in, len) = (tx.shape[0], tx.shape[1]);
                    let (_, c_out, k) = (tw.shape[0], tw.shape[1], tw.shape[2]);
                    let l_out = node.value.shape[1];
                    {
                        let gx = ensure(&mut adj, *x, tx.numel());
                        for ci in 0..c_in {
                            for j in 0..len {
                                let mut acc = 0.0;
                                for co in 0..c_out {
                                    for kk in 0..k {
                                        let pos = j * stride + kk;
                                        if pos < *pad || pos - pad >= l_out {
                                            continue;
                                        }
                                        acc += grad[co * l_out + pos - pad] * tw.data[(ci * c_out + co) * k + kk];
                                    }
                                }
                                gx[ci * len + j] += acc;
                            }
                        }
                    }
                    {
                        let gw = ensure(&mut adj, *w, tw.numel());
                        for ci in 0..c_in {
                            for j in 0..len {
                                let xv = tx.data[ci * len + j];
                                if xv == 0.0 {
                                    continue;
                                }
                                for co in 0..c_out {
                                    for kk in 0..k {
                                        let pos = j * stride + kk;
                                        if pos < *pad || pos - pad >= l_out {
                                            continue;
                                        }
                                        gw[(ci * c_out + co) * k + kk] += xv * grad[co * l_out + pos - pad];
                                    }
                                }
                            }
                        }
                    }
                    let gb = ensure(&mut adj, *b, c_out);
                    for co in 0..c_out {
                        for i in 0..l_out {
                            gb[co] += grad[co * l_out + i];
                        }
                    }
                }
                Op::BceMean { logits, targets } => {
                    let tl = self.value(*logits);
                    let n = targets.len().max(1) as f64;
                    let g0 = grad[0];
                    let gl = ensure(&mut adj, *logits, tl.numel());
                    for ((o, &x), &t) in gl.iter_mut().zip(&tl.data).zip(targets) {
                        let s = 1.0 / (1.0 + (-x).exp());
                        *o += g0 * (s - t) / n;
                    }
                }
                Op::CeMean { logits, targets } => {
                    let tl = self.value(*logits);
                    let v = tl.cols();
                    let n = targets.len().max(1) as f64;
                    let g0 = grad[0];
                    let gl = ensure(&mut adj, *logits, tl.numel());
                    for (i, &t) in targets.iter().enumerate() {
                        let row = &tl.data[i * v..(i + 1) * v];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|x| (x - max).exp()).sum();
                        for (j, o) in gl[i * v..(i + 1) * v].iter_mut().enumerate() {
                            let softmax = (row[j] - max).exp() / denom;
                            let indicator = if j == t { 1.0 } else { 0.0 };
                            *o += g0 * (softmax - indicator) / n;
                        }
                    }
                }
                Op::GaussKld { mu, logsigma } => {
                    let (tm, tl) = (self.value(*mu), self.value(*logsigma));
                    let g0 = grad[0];
                    {
                        let gm = ensure(&mut adj, *mu, tm.numel());
                        for (o, &m) in gm.iter_mut().zip(&tm.data) {
                            *o += g0 * m;
                        }
                    }
                    let gl = ensure(&mut adj, *logsigma, tl.numel());
                    for (o, &ls) in gl.iter_mut().zip(&tl.data) {
                        *o += g0 * ((2.0 * ls).exp() - 1.0);
                    }
                }
            }
        }
    }
}

fn ensure<'a>(adj: &'a mut [Option<Vec<f64>>], v: VarId, len: usize) -> &'a mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: VarId, grad: &[f64]) {
    let g = adj[v.0].get_or_insert_with(|| vec![0.0; grad.len()]);
    for (o, x) in g.iter_mut().zip(grad) {
        *o += x;
    }
}

/// Central-difference gradients of `loss` with respect to every
/// parameter element; the reference implementation for gradient checks.
pub fn finite_difference_gradients(
    params: &mut ParamSet,
    eps: f64,
    mut loss: impl FnMut(&ParamSet) -> f64,
) -> ParamGrads {
    let mut out = ParamGrads::zeros_like(params);
    for p in 0..params.entries.len() {
        for i in 0..params.entries[p].data.len() {
            let orig = params.entries[p].data[i];
            params.entries[p].data[i] = orig + eps;
            let plus = loss(params);
            params.entries[p].data[i] = orig - eps;
            let minus = loss(params);
            params.entries[p].data[i] = orig;
            out.grads[p][i] = (plus - minus) / (2.0 * eps);
        }
    }
    out
}
