use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{gemm_a_bt_acc, gemm_at_b_acc, ShapeError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse weighted gather-sum: output row `i` is
/// `Σ_k weights[k] · input[sources[k]]` for `k` in `offsets[i]..offsets[i+1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregation {
    pub offsets: Vec<usize>,
    pub sources: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Aggregation {
    pub fn new() -> Self {
        Self {
            offsets: vec![0],
            sources: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        for (s, w) in entries {
            self.sources.push(s);
            self.weights.push(w);
        }
        self.offsets.push(self.sources.len());
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.sources[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddConst(Var),
    Relu(Var),
    RowSelect(Var, Rc<[usize]>),
    RowScatter {
        base: Var,
        rows: Rc<[usize]>,
        updates: Var,
    },
    Aggregate(Var, Rc<Aggregation>),
    SegmentMean(Var, Rc<[usize]>),
    Dropout(Var, Vec<f64>),
    LogSoftmax(Var),
    NllLoss(Var, Vec<usize>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the variable does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when it does not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

/// Records dense-matrix operations for reverse-mode differentiation.
/// Nodes are appended in evaluation order, so reverse index order is a
/// valid topological order for the backward sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> ShapeError {
    ShapeError::Mismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Elementwise sum of equal shapes, or a `1×c` row broadcast over `b`'s
    /// position when `b` has a single row and `a` has several.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let mut out = ta.clone();
            out.axpy(1.0, tb)?;
            return Ok(self.push(out, Op::Add(a, b)));
        }
        if tb.rows() == 1 && tb.cols() == ta.cols() {
            let mut out = ta.clone();
            let bias = tb.row(0);
            for r in 0..out.rows() {
                for (o, x) in out.row_mut(r).iter_mut().zip(bias) {
                    *o += x;
                }
            }
            return Ok(self.push(out, Op::AddRow(a, b)));
        }
        Err(mismatch("add", ta, tb))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    /// Multiplies every entry of `a` by the `1×1` value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, ShapeError> {
        let ts = self.value(s);
        if ts.shape() != (1, 1) {
            return Err(ShapeError::NotScalar {
                op: "scale_by",
                shape: ts.shape(),
            });
        }
        let k = ts.get(0, 0);
        let out = self.value(a).map(|x| x * k);
        Ok(self.push(out, Op::ScaleBy(a, s)))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Gathers the listed rows (duplicates allowed) into a new matrix.
    pub fn row_mask_select(&mut self, a: Var, rows: Rc<[usize]>) -> Result<Var, ShapeError> {
        let ta = self.value(a);
        let mut out = Tensor::zeros(rows.len(), ta.cols());
        for (i, &r) in rows.iter().enumerate() {
            if r >= ta.rows() {
                return Err(ShapeError::RowIndex {
                    op: "row_mask_select",
                    index: r,
                    rows: ta.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(ta.row(r));
        }
        Ok(self.push(out, Op::RowSelect(a, rows)))
    }

    /// Copy of `base` with row `rows[i]` replaced by row `i` of `updates`.
    /// Rows must be distinct. Unlisted rows pass through unchanged, and so
    /// does their gradient.
    pub fn masked_row_scatter(
        &mut self,
        base: Var,
        rows: Rc<[usize]>,
        updates: Var,
    ) -> Result<Var, ShapeError> {
        let (tb, tu) = (self.value(base), self.value(updates));
        if tu.rows() != rows.len() || tu.cols() != tb.cols() {
            return Err(mismatch("masked_row_scatter", tb, tu));
        }
        let mut out = tb.clone();
        for (i, &r) in rows.iter().enumerate() {
            if r >= tb.rows() {
                return Err(ShapeError::RowIndex {
                    op: "masked_row_scatter",
                    index: r,
                    rows: tb.rows(),
                });
            }
            out.row_mut(r).copy_from_slice(tu.row(i));
        }
        Ok(self.push(
            out,
            Op::RowScatter {
                base,
                rows,
                updates,
            },
        ))
    }

    pub fn aggregate(&mut self, a: Var, plan: Rc<Aggregation>) -> Result<Var, ShapeError> {
        let ta = self.value(a);
        if let Some(&bad) = plan.sources.iter().find(|&&s| s >= ta.rows()) {
            return Err(ShapeError::RowIndex {
                op: "aggregate",
                index: bad,
                rows: ta.rows(),
            });
        }
        let mut out = Tensor::zeros(plan.num_rows(), ta.cols());
        for i in 0..plan.num_rows() {
            let (lo, hi) = (plan.offsets[i], plan.offsets[i + 1]);
            let dst = &mut out.data_mut()[i * ta.cols()..(i + 1) * ta.cols()];
            for k in lo..hi {
                let w = plan.weights[k];
                for (o, x) in dst.iter_mut().zip(ta.row(plan.sources[k])) {
                    *o += w * x;
                }
            }
        }
        Ok(self.push(out, Op::Aggregate(a, plan)))
    }

    /// Mean over all rows, giving `1×c`.
    pub fn mean_pool_rows(&mut self, a: Var) -> Result<Var, ShapeError> {
        let n = self.value(a).rows();
        self.segment_mean_rows(a, Rc::from(vec![0, n]))
    }

    /// Mean over consecutive row segments `offsets[g]..offsets[g+1]`, one
    /// output row per segment.
    pub fn segment_mean_rows(&mut self, a: Var, offsets: Rc<[usize]>) -> Result<Var, ShapeError> {
        let ta = self.value(a);
        let segments = offsets.len().saturating_sub(1);
        if offsets.last().copied() != Some(ta.rows()) || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(ShapeError::Mismatch {
                op: "segment_mean_rows",
                lhs: ta.shape(),
                rhs: (segments, offsets.last().copied().unwrap_or(0)),
            });
        }
        let mut out = Tensor::zeros(segments, ta.cols());
        for g in 0..segments {
            let (lo, hi) = (offsets[g], offsets[g + 1]);
            if hi == lo {
                continue;
            }
            let inv = 1.0 / (hi - lo) as f64;
            for r in lo..hi {
                for (o, x) in out.row_mut(g).iter_mut().zip(ta.row(r)) {
                    *o += x * inv;
                }
            }
        }
        Ok(self.push(out, Op::SegmentMean(a, offsets)))
    }

    /// Inverted dropout: each entry is zeroed with probability `rate` and
    /// survivors are scaled by `1/(1-rate)`.
    pub fn dropout(&mut self, a: Var, rate: f64, seed: u64) -> Var {
        assert!(
            (0.0..1.0).contains(&rate),
            "dropout rate must lie in [0, 1)"
        );
        if rate == 0.0 {
            return a;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mut out = self.value(a).clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout(a, mask))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Mean negative log-likelihood of `targets` under row-wise
    /// log-probabilities.
    pub fn nll_loss(&mut self, log_probs: Var, targets: &[usize]) -> Result<Var, ShapeError> {
        let lp = self.value(log_probs);
        if lp.rows() != targets.len() || lp.rows() == 0 {
            return Err(ShapeError::Mismatch {
                op: "nll_loss",
                lhs: lp.shape(),
                rhs: (targets.len(), 1),
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= lp.cols()) {
            return Err(ShapeError::RowIndex {
                op: "nll_loss",
                index: t,
                rows: lp.cols(),
            });
        }
        let loss = -targets
            .iter()
            .enumerate()
            .map(|(i, &t)| lp.get(i, t))
            .sum::<f64>()
            / targets.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::NllLoss(log_probs, targets.to_vec()),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Gradients of a scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients, ShapeError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(ShapeError::NotScalar {
                op: "backward",
                shape,
            });
        }
        self.backward_from(loss, Tensor::scalar(1.0))
    }

    /// Vector–Jacobian product: propagates `seed` (shaped like `output`)
    /// back through the tape.
    pub fn backward_from(&self, output: Var, seed: Tensor) -> Result<Gradients, ShapeError> {
        self.value(output)
            .check_same_shape(&seed, "backward_from")?;
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &g).expect("gradient shapes agree"),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let mut ga = Tensor::zeros(m, k);
                    gemm_a_bt_acc(gout.data(), tb.data(), ga.data_mut(), m, n, k);
                    let mut gb = Tensor::zeros(k, n);
                    gemm_at_b_acc(ta.data(), gout.data(), gb.data_mut(), m, k, n);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, gout.clone());
                    acc(&mut grads, *a, gout.clone());
                }
                Op::AddRow(a, b) => {
                    let mut gb = Tensor::zeros(1, gout.cols());
                    for r in 0..gout.rows() {
                        for (o, x) in gb.row_mut(0).iter_mut().zip(gout.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, gout.clone());
                }
                Op::Scale(a, k) => acc(&mut grads, *a, gout.map(|x| x * k)),
                Op::ScaleBy(a, s) => {
                    let k = self.value(*s).get(0, 0);
                    let ds: f64 = gout
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(g, x)| g * x)
                        .sum();
                    acc(&mut grads, *s, Tensor::scalar(ds));
                    acc(&mut grads, *a, gout.map(|x| x * k));
                }
                Op::AddConst(a) => acc(&mut grads, *a, gout.clone()),
                Op::Relu(a) => {
                    let mut g = gout.clone();
                    for (gv, &y) in g.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::RowSelect(a, rows) => {
                    let ta = self.value(*a);
                    let mut g = Tensor::zeros(ta.rows(), ta.cols());
                    for (i, &r) in rows.iter().enumerate() {
                        for (o, x) in g.row_mut(r).iter_mut().zip(gout.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::RowScatter {
                    base,
                    rows,
                    updates,
                } => {
                    let mut gu = Tensor::zeros(rows.len(), gout.cols());
                    let mut gb = gout.clone();
                    for (i, &r) in rows.iter().enumerate() {
                        gu.row_mut(i).copy_from_slice(gout.row(r));
                        gb.row_mut(r).fill(0.0);
                    }
                    acc(&mut grads, *updates, gu);
                    acc(&mut grads, *base, gb);
                }
                Op::Aggregate(a, plan) => {
                    let ta = self.value(*a);
                    let mut g = Tensor::zeros(ta.rows(), ta.cols());
                    for i in 0..plan.num_rows() {
                        for (s, w) in plan.row(i) {
                            let src = gout.row(i);
                            for (o, x) in g.row_mut(s).iter_mut().zip(src) {
                                *o += w * x;
                            }
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::SegmentMean(a, offsets) => {
                    let ta = self.value(*a);
                    let mut g = Tensor::zeros(ta.rows(), ta.cols());
                    for s in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[s], offsets[s + 1]);
                        if hi == lo {
                            continue;
                        }
                        let inv = 1.0 / (hi - lo) as f64;
                        for r in lo..hi {
                            for (o, x) in g.row_mut(r).iter_mut().zip(gout.row(s)) {
                                *o += x * inv;
                            }
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Dropout(a, mask) => {
                    let mut g = gout.clone();
                    for (gv, m) in g.data_mut().iter_mut().zip(mask) {
                        *gv *= m;
                    }
                    acc(&mut grads, *a, g);
                }
                Op::LogSoftmax(a) => {
                    let mut g = gout.clone();
                    for r in 0..g.rows() {
                        let total: f64 = gout.row(r).iter().sum();
                        for (gv, &y) in g.row_mut(r).iter_mut().zip(node.value.row(r)) {
                            *gv -= y.exp() * total;
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::NllLoss(a, targets) => {
                    let shape = self.value(*a).shape();
                    let mut g = Tensor::zeros(shape.0, shape.1);
                    let k = -gout.get(0, 0) / targets.len() as f64;
                    for (i, &t) in targets.iter().enumerate() {
                        g.set(i, t, k);
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape();
                    acc(
                        &mut grads,
                        *a,
                        Tensor::filled(shape.0, shape.1, gout.get(0, 0)),
                    );
                }
            }
            grads[idx] = Some(gout);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }
}
