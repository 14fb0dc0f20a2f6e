//! Reverse-mode automatic differentiation over matrix-level primitives.
//!
//! A [`Tape`] records one forward computation as a topologically ordered list
//! of nodes; [`Tape::backward`] replays it in reverse and accumulates exact
//! analytic gradients for every tracked parameter. Primitives are whole-matrix
//! operations (matmul, sparse aggregation, activations, row softmax, dropout,
//! reductions, fused losses), which keeps training at usable speed.
//!
//! A tape is confined to a single training step; values are immutable once
//! written. Independent tapes may live on different threads.

use std::sync::Arc;

use crate::error::{GraphDrError, Result};
use crate::matrix::DenseMatrix;
use crate::rng::Rng;
use crate::sparse::SparseAdjacency;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Spmm {
        adj: Arc<SparseAdjacency>,
        h: Var,
    },
    /// Broadcast-add a 1 x c bias row to every row of x.
    AddBias {
        x: Var,
        b: Var,
    },
    Add {
        x: Var,
        y: Var,
    },
    Scale {
        x: Var,
        s: f64,
    },
    Relu {
        x: Var,
    },
    Elu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    /// Inverted dropout; mask entries are 0 or 1/keep.
    Dropout {
        x: Var,
        mask: Arc<Vec<f64>>,
    },
    SoftmaxRows {
        x: Var,
    },
    Sum {
        x: Var,
    },
    /// Per-edge attention logit e_k = a_self . z[i_k] + a_neigh . z[j_k] for
    /// edge k = (i_k, j_k) in CSR order; att stacks [a_self; a_neigh].
    EdgeScore {
        z: Var,
        att: Var,
        adj: Arc<SparseAdjacency>,
    },
    /// Softmax over each node's edge segment (CSR row).
    EdgeSoftmax {
        e: Var,
        adj: Arc<SparseAdjacency>,
    },
    /// out[i] = sum over edges k=(i,j) of alpha_k * z[j].
    EdgeAggregate {
        alpha: Var,
        z: Var,
        adj: Arc<SparseAdjacency>,
    },
    /// Mean of -log softmax(logits)[label] over masked rows. Stores the
    /// softmax probabilities of masked rows for the backward pass.
    MaskedCrossEntropy {
        logits: Var,
        labels: Arc<Vec<usize>>,
        mask: Arc<Vec<bool>>,
        probs: DenseMatrix,
        masked_count: usize,
    },
    /// Mean squared error against a constant target.
    Mse {
        pred: Var,
        target: Arc<DenseMatrix>,
    },
}

struct Node {
    op: Op,
    value: DenseMatrix,
    requires_grad: bool,
}

/// Recorded forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a tracked variable (zeros if the loss does
    /// not depend on it).
    pub fn get(&self, var: Var) -> Option<&DenseMatrix> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
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
            params: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: DenseMatrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var, op: &'static str) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(GraphDrError::InvalidArgument {
                context: op,
                message: format!("variable {} not on this tape", v.0),
            });
        }
        Ok(())
    }

    /// Record an untracked constant.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Record a tracked parameter; backward will produce its gradient.
    pub fn param(&mut self, value: DenseMatrix) -> Var {
        let v = self.push(Op::Leaf, value, true);
        self.params.push(v);
        v
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::MatMul { a, b }, value, rg))
    }

    pub fn spmm(&mut self, adj: Arc<SparseAdjacency>, h: Var) -> Result<Var> {
        self.check(h, "spmm")?;
        let value = adj.spmm(self.value(h))?;
        let rg = self.requires(h);
        Ok(self.push(Op::Spmm { adj, h }, value, rg))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check(x, "add_bias")?;
        self.check(b, "add_bias")?;
        let (bx, bc) = self.value(b).shape();
        if bx != 1 || bc != self.value(x).cols() {
            return Err(GraphDrError::ShapeMismatch {
                op: "add_bias",
                left: format!("{}x{}", self.value(x).rows(), self.value(x).cols()),
                right: format!("{bx}x{bc}"),
            });
        }
        let xm = self.value(x);
        let bm = self.value(b);
        let mut value = xm.clone();
        for i in 0..value.rows() {
            for (o, &bv) in value.row_mut(i).iter_mut().zip(bm.row(0)) {
                *o += bv;
            }
        }
        let rg = self.requires(x) || self.requires(b);
        Ok(self.push(Op::AddBias { x, b }, value, rg))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        self.check(x, "add")?;
        self.check(y, "add")?;
        let value = self.value(x).add(self.value(y))?;
        let rg = self.requires(x) || self.requires(y);
        Ok(self.push(Op::Add { x, y }, value, rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.check(x, "scale")?;
        let value = self.value(x).scale(s);
        let rg = self.requires(x);
        Ok(self.push(Op::Scale { x, s }, value, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x, "relu")?;
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.requires(x);
        Ok(self.push(Op::Relu { x }, value, rg))
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.check(x, "elu")?;
        let value = self.value(x).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        let rg = self.requires(x);
        Ok(self.push(Op::Elu { x }, value, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.check(x, "leaky_relu")?;
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.requires(x);
        Ok(self.push(Op::LeakyRelu { x, slope }, value, rg))
    }

    /// Inverted dropout: at train time each entry is kept with probability
    /// 1-rate and scaled by 1/(1-rate), so evaluation needs no rescaling.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng) -> Result<Var> {
        self.check(x, "dropout")?;
        if !(0.0..1.0).contains(&rate) {
            return Err(GraphDrError::InvalidArgument {
                context: "dropout",
                message: format!("rate {rate} outside [0,1)"),
            });
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let inv = 1.0 / keep;
        let xm = self.value(x);
        let mask: Vec<f64> = (0..xm.rows() * xm.cols())
            .map(|_| if rng.uniform() < keep { inv } else { 0.0 })
            .collect();
        let data: Vec<f64> = xm.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = DenseMatrix::from_vec(xm.rows(), xm.cols(), data)?;
        let rg = self.requires(x);
        Ok(self.push(
            Op::Dropout {
                x,
                mask: Arc::new(mask),
            },
            value,
            rg,
        ))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.check(x, "softmax_rows")?;
        let xm = self.value(x);
        let mut value = xm.clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_mut(i));
        }
        let rg = self.requires(x);
        Ok(self.push(Op::SoftmaxRows { x }, value, rg))
    }

    /// Sum of all entries, as a 1x1 matrix.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x, "sum")?;
        let total: f64 = self.value(x).data().iter().sum();
        let value = DenseMatrix::from_vec(1, 1, vec![total])?;
        let rg = self.requires(x);
        Ok(self.push(Op::Sum { x }, value, rg))
    }

    pub fn edge_score(&mut self, z: Var, att: Var, adj: Arc<SparseAdjacency>) -> Result<Var> {
        self.check(z, "edge_score")?;
        self.check(att, "edge_score")?;
        let zm = self.value(z);
        let am = self.value(att);
        let h = zm.cols();
        if am.rows() != 2 * h || am.cols() != 1 {
            return Err(GraphDrError::ShapeMismatch {
                op: "edge_score",
                left: format!("z {}x{}", zm.rows(), h),
                right: format!("att {}x{}", am.rows(), am.cols()),
            });
        }
        if adj.n() != zm.rows() {
            return Err(GraphDrError::ShapeMismatch {
                op: "edge_score",
                left: format!("adj n={}", adj.n()),
                right: format!("z rows={}", zm.rows()),
            });
        }
        let a_self = &am.data()[..h];
        let a_neigh = &am.data()[h..];
        let mut scores = Vec::with_capacity(adj.nnz());
        for i in 0..adj.n() {
            let zi = zm.row(i);
            let self_part: f64 = a_self.iter().zip(zi).map(|(&a, &v)| a * v).sum();
            for (j, _) in adj.row(i) {
                let zj = zm.row(j);
                let neigh_part: f64 = a_neigh.iter().zip(zj).map(|(&a, &v)| a * v).sum();
                scores.push(self_part + neigh_part);
            }
        }
        let value = DenseMatrix::from_vec(adj.nnz(), 1, scores)?;
        let rg = self.requires(z) || self.requires(att);
        Ok(self.push(Op::EdgeScore { z, att, adj }, value, rg))
    }

    pub fn edge_softmax(&mut self, e: Var, adj: Arc<SparseAdjacency>) -> Result<Var> {
        self.check(e, "edge_softmax")?;
        let em = self.value(e);
        if em.rows() != adj.nnz() || em.cols() != 1 {
            return Err(GraphDrError::ShapeMismatch {
                op: "edge_softmax",
                left: format!("{}x{}", em.rows(), em.cols()),
                right: format!("nnz={}", adj.nnz()),
            });
        }
        let mut value = em.clone();
        for i in 0..adj.n() {
            let range = adj.row_range(i);
            softmax_in_place(&mut value.data_mut()[range]);
        }
        let rg = self.requires(e);
        Ok(self.push(Op::EdgeSoftmax { e, adj }, value, rg))
    }

    pub fn edge_aggregate(
        &mut self,
        alpha: Var,
        z: Var,
        adj: Arc<SparseAdjacency>,
    ) -> Result<Var> {
        self.check(alpha, "edge_aggregate")?;
        self.check(z, "edge_aggregate")?;
        let am = self.value(alpha);
        let zm = self.value(z);
        if am.rows() != adj.nnz() || am.cols() != 1 || zm.rows() != adj.n() {
            return Err(GraphDrError::ShapeMismatch {
                op: "edge_aggregate",
                left: format!("alpha {}x{}", am.rows(), am.cols()),
                right: format!("adj nnz={} n={}", adj.nnz(), adj.n()),
            });
        }
        let h = zm.cols();
        let mut value = DenseMatrix::zeros(adj.n(), h);
        for i in 0..adj.n() {
            let range = adj.row_range(i);
            let coeffs = &am.data()[range.clone()];
            let out_range = i * h..(i + 1) * h;
            for ((j, _), &a) in adj.row(i).zip(coeffs) {
                let src = zm.row(j);
                for (o, &s) in value.data_mut()[out_range.clone()].iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
        let rg = self.requires(alpha) || self.requires(z);
        Ok(self.push(Op::EdgeAggregate { alpha, z, adj }, value, rg))
    }

    /// Mean over masked rows of -log softmax(logits)[label]. Gradients at
    /// unmasked rows are exactly zero.
    pub fn masked_cross_entropy(
        &mut self,
        logits: Var,
        labels: Arc<Vec<usize>>,
        mask: Arc<Vec<bool>>,
    ) -> Result<Var> {
        self.check(logits, "masked_cross_entropy")?;
        let lm = self.value(logits);
        let (n, c) = lm.shape();
        if labels.len() != n || mask.len() != n {
            return Err(GraphDrError::ShapeMismatch {
                op: "masked_cross_entropy",
                left: format!("{n} rows"),
                right: format!("{} labels / {} mask", labels.len(), mask.len()),
            });
        }
        let masked_count = mask.iter().filter(|&&m| m).count();
        if masked_count == 0 {
            return Err(GraphDrError::EmptyMask);
        }
        let mut probs = DenseMatrix::zeros(n, c);
        let mut total = 0.0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let label = labels[i];
            if label >= c {
                return Err(GraphDrError::LabelOutOfRange {
                    label,
                    num_classes: c,
                });
            }
            let row = lm.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += (v - max).exp();
            }
            let log_denom = denom.ln() + max;
            total += log_denom - row[label];
            for (j, &v) in row.iter().enumerate() {
                probs.set(i, j, (v - max).exp() / denom);
            }
        }
        let loss = total / masked_count as f64;
        if !loss.is_finite() {
            return Err(GraphDrError::NonFinite {
                op: "masked_cross_entropy",
            });
        }
        let value = DenseMatrix::from_vec(1, 1, vec![loss])?;
        let rg = self.requires(logits);
        Ok(self.push(
            Op::MaskedCrossEntropy {
                logits,
                labels,
                mask,
                probs,
                masked_count,
            },
            value,
            rg,
        ))
    }

    /// Mean squared error against a constant target, over all entries.
    pub fn mse(&mut self, pred: Var, target: Arc<DenseMatrix>) -> Result<Var> {
        self.check(pred, "mse")?;
        let pm = self.value(pred);
        if pm.shape() != target.shape() {
            return Err(GraphDrError::ShapeMismatch {
                op: "mse",
                left: format!("{}x{}", pm.rows(), pm.cols()),
                right: format!("{}x{}", target.rows(), target.cols()),
            });
        }
        let numel = (pm.rows() * pm.cols()) as f64;
        let sum: f64 = pm
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let value = DenseMatrix::from_vec(1, 1, vec![sum / numel])?;
        let rg = self.requires(pred);
        Ok(self.push(Op::Mse { pred, target }, value, rg))
    }

    /// Reverse pass from a scalar loss. Returns one gradient per node that
    /// needed one; tracked parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss, "backward")?;
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(GraphDrError::InvalidArgument {
                context: "backward",
                message: format!("loss must be scalar, got {}x{}", lv.rows(), lv.cols()),
            });
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(DenseMatrix::from_vec(1, 1, vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut grads)?;
            }
            // reinsert so callers can read gradients of intermediate vars
            grads[idx] = Some(g);
        }

        // Every tracked parameter gets a gradient exactly once; unreachable
        // parameters get zeros.
        for &p in &self.params {
            if grads[p.0].is_none() {
                let v = self.value(p);
                grads[p.0] = Some(DenseMatrix::zeros(v.rows(), v.cols()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<DenseMatrix>],
        target: Var,
        delta: DenseMatrix,
    ) -> Result<()> {
        if !self.requires(target) {
            return Ok(());
        }
        match &mut grads[target.0] {
            Some(existing) => {
                *existing = existing.add(&delta)?;
            }
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn propagate(
        &self,
        idx: usize,
        g: &DenseMatrix,
        grads: &mut [Option<DenseMatrix>],
    ) -> Result<()> {
        let output = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                if self.requires(*a) {
                    let delta = g.matmul(&self.value(*b).transpose())?;
                    self.accumulate(grads, *a, delta)?;
                }
                if self.requires(*b) {
                    let delta = self.value(*a).transpose().matmul(g)?;
                    self.accumulate(grads, *b, delta)?;
                }
            }
            Op::Spmm { adj, h } => {
                if self.requires(*h) {
                    let delta = adj.spmm_transpose(g)?;
                    self.accumulate(grads, *h, delta)?;
                }
            }
            Op::AddBias { x, b } => {
                if self.requires(*x) {
                    self.accumulate(grads, *x, g.clone())?;
                }
                if self.requires(*b) {
                    let mut colsum = DenseMatrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in colsum.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *b, colsum)?;
                }
            }
            Op::Add { x, y } => {
                self.accumulate(grads, *x, g.clone())?;
                self.accumulate(grads, *y, g.clone())?;
            }
            Op::Scale { x, s } => {
                self.accumulate(grads, *x, g.scale(*s))?;
            }
            Op::Relu { x } => {
                let xm = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xm.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(
                    grads,
                    *x,
                    DenseMatrix::from_vec(g.rows(), g.cols(), data)?,
                )?;
            }
            Op::Elu { x } => {
                let xm = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xm.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { gv * xv.exp() })
                    .collect();
                self.accumulate(
                    grads,
                    *x,
                    DenseMatrix::from_vec(g.rows(), g.cols(), data)?,
                )?;
            }
            Op::LeakyRelu { x, slope } => {
                let xm = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xm.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { gv * slope })
                    .collect();
                self.accumulate(
                    grads,
                    *x,
                    DenseMatrix::from_vec(g.rows(), g.cols(), data)?,
                )?;
            }
            Op::Dropout { x, mask } => {
                let data = g
                    .data()
                    .iter()
                    .zip(mask.iter())
                    .map(|(&gv, &m)| gv * m)
                    .collect();
                self.accumulate(
                    grads,
                    *x,
                    DenseMatrix::from_vec(g.rows(), g.cols(), data)?,
                )?;
            }
            Op::SoftmaxRows { x } => {
                // dx_j = y_j * (g_j - sum_k g_k y_k) per row
                let y = output;
                let mut dx = DenseMatrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let dot: f64 = g
                        .row(i)
                        .iter()
                        .zip(y.row(i))
                        .map(|(&gv, &yv)| gv * yv)
                        .sum();
                    for (slot, (&gv, &yv)) in dx
                        .row_mut(i)
                        .iter_mut()
                        .zip(g.row(i).iter().zip(y.row(i)))
                    {
                        *slot = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::Sum { x } => {
                let xm = self.value(*x);
                let gv = g.get(0, 0);
                let delta =
                    DenseMatrix::from_vec(xm.rows(), xm.cols(), vec![gv; xm.rows() * xm.cols()])?;
                self.accumulate(grads, *x, delta)?;
            }
            Op::EdgeScore { z, att, adj } => {
                let zm = self.value(*z);
                let am = self.value(*att);
                let h = zm.cols();
                let a_self = &am.data()[..h];
                let a_neigh = &am.data()[h..];
                let need_z = self.requires(*z);
                let need_att = self.requires(*att);
                let mut dz = DenseMatrix::zeros(zm.rows(), h);
                let mut datt = DenseMatrix::zeros(2 * h, 1);
                let mut k = 0usize;
                for i in 0..adj.n() {
                    for (j, _) in adj.row(i) {
                        let gk = g.get(k, 0);
                        if gk != 0.0 {
                            if need_z {
                                for d in 0..h {
                                    *dz.row_mut(i).get_mut(d).expect("in range") +=
                                        gk * a_self[d];
                                    *dz.row_mut(j).get_mut(d).expect("in range") +=
                                        gk * a_neigh[d];
                                }
                            }
                            if need_att {
                                let zi = zm.row(i);
                                let zj = zm.row(j);
                                for d in 0..h {
                                    datt.data_mut()[d] += gk * zi[d];
                                    datt.data_mut()[h + d] += gk * zj[d];
                                }
                            }
                        }
                        k += 1;
                    }
                }
                if need_z {
                    self.accumulate(grads, *z, dz)?;
                }
                if need_att {
                    self.accumulate(grads, *att, datt)?;
                }
            }
            Op::EdgeSoftmax { e, adj } => {
                // softmax Jacobian per CSR row segment, using this node's own
                // output alpha
                let alpha = output;
                let mut de = DenseMatrix::zeros(alpha.rows(), 1);
                for i in 0..adj.n() {
                    let range = adj.row_range(i);
                    let a = &alpha.data()[range.clone()];
                    let gseg = &g.data()[range.clone()];
                    let dot: f64 = a.iter().zip(gseg).map(|(&av, &gv)| av * gv).sum();
                    for (slot, (&av, &gv)) in de.data_mut()[range].iter_mut().zip(a.iter().zip(gseg))
                    {
                        *slot = av * (gv - dot);
                    }
                }
                self.accumulate(grads, *e, de)?;
            }
            Op::EdgeAggregate { alpha, z, adj } => {
                let am = self.value(*alpha);
                let zm = self.value(*z);
                let h = zm.cols();
                if self.requires(*alpha) {
                    let mut da = DenseMatrix::zeros(am.rows(), 1);
                    let mut k = 0usize;
                    for i in 0..adj.n() {
                        for (j, _) in adj.row(i) {
                            let dot: f64 = g
                                .row(i)
                                .iter()
                                .zip(zm.row(j))
                                .map(|(&gv, &zv)| gv * zv)
                                .sum();
                            da.data_mut()[k] = dot;
                            k += 1;
                        }
                    }
                    self.accumulate(grads, *alpha, da)?;
                }
                if self.requires(*z) {
                    let mut dz = DenseMatrix::zeros(zm.rows(), h);
                    let mut k = 0usize;
                    for i in 0..adj.n() {
                        for (j, _) in adj.row(i) {
                            let a = am.get(k, 0);
                            let gi = i * h..(i + 1) * h;
                            for (d, &gv) in g.data()[gi].iter().enumerate() {
                                dz.data_mut()[j * h + d] += a * gv;
                            }
                            k += 1;
                        }
                    }
                    self.accumulate(grads, *z, dz)?;
                }
            }
            Op::MaskedCrossEntropy {
                logits,
                labels,
                mask,
                probs,
                masked_count,
            } => {
                let gv = g.get(0, 0);
                let (n, c) = probs.shape();
                let scale = gv / *masked_count as f64;
                let mut delta = DenseMatrix::zeros(n, c);
                for i in 0..n {
                    if !mask[i] {
                        continue;
                    }
                    for j in 0..c {
                        let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                        delta.set(i, j, scale * (probs.get(i, j) - onehot));
                    }
                }
                self.accumulate(grads, *logits, delta)?;
            }
            Op::Mse { pred, target } => {
                let pm = self.value(*pred);
                let gv = g.get(0, 0);
                let numel = (pm.rows() * pm.cols()) as f64;
                let data = pm
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| gv * 2.0 * (p - t) / numel)
                    .collect();
                self.accumulate(
                    grads,
                    *pred,
                    DenseMatrix::from_vec(pm.rows(), pm.cols(), data)?,
                )?;
            }
        }
        Ok(())
    }
}

fn softmax_in_place(row: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        denom += *v;
    }
    for v in row.iter_mut() {
        *v /= denom;
    }
}
