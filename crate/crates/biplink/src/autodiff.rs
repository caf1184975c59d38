//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records operations in append order during the forward pass;
//! [`Tape::backward`] walks the records in reverse and accumulates
//! gradients for every leaf registered with `requires_grad`. The graph is
//! define-by-run: callers rebuild the tape on every forward pass, so
//! parameters live outside the tape as plain `Array2<f64>` and are
//! re-registered each time.
//!
//! Shape mismatches and out-of-range indices are programming errors and
//! panic; non-finite values are rejected at op boundaries.

use ndarray::{Array2, Axis};
use std::collections::HashMap;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Scale(usize, f64),
    ConcatCols(Vec<usize>),
    MeanStack(Vec<usize>),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    SegmentSoftmax {
        logits: usize,
        segments: Vec<usize>,
    },
    GatherRows {
        src: usize,
        idx: Vec<usize>,
    },
    SegmentWeightedSum {
        vals: usize,
        weights: usize,
        segments: Vec<usize>,
    },
    PairwiseSqDists(usize),
    ExpNeg(usize, f64),
    FrobeniusSq(usize),
    TraceQuadratic {
        arg: usize,
        metric: Array2<f64>,
    },
    Transpose(usize),
}

struct Node {
    value: Array2<f64>,
    requires_grad: bool,
    op: Op,
}

/// Gradients keyed by leaf handle, as returned by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    by_id: HashMap<usize, Array2<f64>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&Array2<f64>> {
        self.by_id.get(&t.id)
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }
}

/// Recording tape for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn assert_finite(what: &str, a: &Array2<f64>) {
    if !a.iter().all(|x| x.is_finite()) {
        panic!("non-finite values in {what}");
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

    /// Current value of a recorded tensor.
    pub fn value(&self, t: Tensor) -> &Array2<f64> {
        &self.nodes[t.id].value
    }

    /// Value of a 1x1 tensor as a plain scalar.
    pub fn scalar(&self, t: Tensor) -> f64 {
        assert_eq!(t.shape(), (1, 1), "scalar() on non-1x1 tensor");
        self.nodes[t.id].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, requires_grad: bool, op: Op) -> Tensor {
        assert_finite("op output", &value);
        let id = self.nodes.len();
        let (rows, cols) = value.dim();
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Tensor { id, rows, cols }
    }

    /// Register a constant leaf (no gradient).
    pub fn constant(&mut self, value: Array2<f64>) -> Tensor {
        self.push(value, false, Op::Leaf)
    }

    /// Register a trainable leaf; [`Tape::backward`] reports its gradient.
    pub fn variable(&mut self, value: Array2<f64>) -> Tensor {
        self.push(value, true, Op::Leaf)
    }

    /// Standard matrix product, `(m x k) . (k x n) -> (m x n)`.
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(
            a.cols, b.rows,
            "matmul shape mismatch: {:?} x {:?}",
            a.shape(),
            b.shape()
        );
        let v = self.nodes[a.id].value.dot(&self.nodes[b.id].value);
        self.push(v, false, Op::Matmul(a.id, b.id))
    }

    /// Elementwise sum. A `1 x n` operand broadcasts across the rows of
    /// the other `m x n` operand.
    pub fn add(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let compatible = a.shape() == b.shape()
            || (a.rows == 1 && a.cols == b.cols)
            || (b.rows == 1 && b.cols == a.cols);
        assert!(
            compatible,
            "add shape mismatch: {:?} + {:?}",
            a.shape(),
            b.shape()
        );
        let v = &self.nodes[a.id].value + &self.nodes[b.id].value;
        self.push(v, false, Op::Add(a.id, b.id))
    }

    /// Multiply every entry by a constant.
    pub fn scale(&mut self, a: Tensor, c: f64) -> Tensor {
        let v = self.nodes[a.id].value.mapv(|x| c * x);
        self.push(v, false, Op::Scale(a.id, c))
    }

    /// Column-wise concatenation of same-row-count tensors.
    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_cols of empty list");
        let rows = parts[0].rows;
        assert!(
            parts.iter().all(|p| p.rows == rows),
            "concat_cols row mismatch"
        );
        let total: usize = parts.iter().map(|p| p.cols).sum();
        let mut v = Array2::zeros((rows, total));
        let mut at = 0;
        for p in parts {
            v.slice_mut(ndarray::s![.., at..at + p.cols])
                .assign(&self.nodes[p.id].value);
            at += p.cols;
        }
        self.push(v, false, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
    }

    /// Elementwise average of same-shape tensors.
    pub fn mean_stack(&mut self, parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "mean_stack of empty list");
        let shape = parts[0].shape();
        assert!(
            parts.iter().all(|p| p.shape() == shape),
            "mean_stack shape mismatch"
        );
        let mut v = self.nodes[parts[0].id].value.clone();
        for p in &parts[1..] {
            v += &self.nodes[p.id].value;
        }
        v.mapv_inplace(|x| x / parts.len() as f64);
        self.push(v, false, Op::MeanStack(parts.iter().map(|p| p.id).collect()))
    }

    /// `x` if `x > 0` else `slope * x`, elementwise.
    pub fn leaky_relu(&mut self, a: Tensor, slope: f64) -> Tensor {
        let v = self.nodes[a.id]
            .value
            .mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, false, Op::LeakyRelu(a.id, slope))
    }

    /// Logistic function `1 / (1 + exp(-x))`, elementwise.
    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        let v = self.nodes[a.id].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, false, Op::Sigmoid(a.id))
    }

    /// Softmax over an `E x 1` logit column, computed independently within
    /// each owner segment. Subtracts the per-segment max before
    /// exponentiation; the result is invariant under per-segment logit
    /// shifts.
    pub fn segment_softmax(&mut self, logits: Tensor, segments: &[usize]) -> Tensor {
        assert_eq!(logits.cols, 1, "segment_softmax expects an E x 1 column");
        assert_eq!(
            logits.rows,
            segments.len(),
            "segment_softmax: one segment id per logit"
        );
        let x = &self.nodes[logits.id].value;
        let groups = group_segments(segments);
        let mut v = Array2::zeros((logits.rows, 1));
        for idxs in groups.values() {
            let m = idxs
                .iter()
                .map(|&e| x[[e, 0]])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &e in idxs {
                let w = (x[[e, 0]] - m).exp();
                v[[e, 0]] = w;
                z += w;
            }
            for &e in idxs {
                v[[e, 0]] /= z;
            }
        }
        self.push(
            v,
            false,
            Op::SegmentSoftmax {
                logits: logits.id,
                segments: segments.to_vec(),
            },
        )
    }

    /// Row selection: `out[e, :] = a[idx[e], :]`.
    pub fn gather_rows(&mut self, a: Tensor, idx: &[usize]) -> Tensor {
        assert!(
            idx.iter().all(|&i| i < a.rows),
            "gather_rows index out of range"
        );
        let src = &self.nodes[a.id].value;
        let mut v = Array2::zeros((idx.len(), a.cols));
        for (e, &i) in idx.iter().enumerate() {
            v.row_mut(e).assign(&src.row(i));
        }
        self.push(
            v,
            false,
            Op::GatherRows {
                src: a.id,
                idx: idx.to_vec(),
            },
        )
    }

    /// Per-segment weighted sum: `out[s, :] = sum over e with segments[e] == s
    /// of weights[e] * vals[e, :]`.
    pub fn segment_weighted_sum(
        &mut self,
        vals: Tensor,
        weights: Tensor,
        segments: &[usize],
        n: usize,
    ) -> Tensor {
        assert_eq!(weights.cols, 1, "weights must be E x 1");
        assert_eq!(vals.rows, weights.rows, "vals/weights length mismatch");
        assert_eq!(vals.rows, segments.len(), "vals/segments length mismatch");
        assert!(
            segments.iter().all(|&s| s < n),
            "segment id out of range for n = {n}"
        );
        let v = &self.nodes[vals.id].value;
        let w = &self.nodes[weights.id].value;
        let mut out = Array2::zeros((n, vals.cols));
        for (e, &s) in segments.iter().enumerate() {
            let we = w[[e, 0]];
            let mut row = out.row_mut(s);
            row += &v.row(e).mapv(|x| we * x);
        }
        self.push(
            out,
            false,
            Op::SegmentWeightedSum {
                vals: vals.id,
                weights: weights.id,
                segments: segments.to_vec(),
            },
        )
    }

    /// Squared Euclidean distances between rows: `out[i, j] = ||a_i - a_j||^2`.
    ///
    /// Computed via the Gram-matrix expansion; tiny negative round-off is
    /// clamped to zero and the diagonal is exactly zero.
    pub fn pairwise_sq_dists(&mut self, a: Tensor) -> Tensor {
        let x = &self.nodes[a.id].value;
        let gram = x.dot(&x.t());
        let n = a.rows;
        let mut v = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let d = gram[[i, i]] + gram[[j, j]] - 2.0 * gram[[i, j]];
                v[[i, j]] = if d > 0.0 { d } else { 0.0 };
            }
        }
        self.push(v, false, Op::PairwiseSqDists(a.id))
    }

    /// `exp(-gamma * x)`, elementwise.
    pub fn exp_neg(&mut self, a: Tensor, gamma: f64) -> Tensor {
        let v = self.nodes[a.id].value.mapv(|x| (-gamma * x).exp());
        self.push(v, false, Op::ExpNeg(a.id, gamma))
    }

    /// Squared Frobenius norm as a `1 x 1` tensor.
    pub fn frobenius_sq(&mut self, a: Tensor) -> Tensor {
        let s: f64 = self.nodes[a.id].value.iter().map(|x| x * x).sum();
        self.push(
            Array2::from_elem((1, 1), s),
            false,
            Op::FrobeniusSq(a.id),
        )
    }

    /// `tr(a^T L a)` for a constant metric `L`, as a `1 x 1` tensor.
    pub fn trace_quadratic(&mut self, a: Tensor, metric: &Array2<f64>) -> Tensor {
        assert_eq!(
            metric.dim(),
            (a.rows, a.rows),
            "trace_quadratic metric shape mismatch"
        );
        assert_finite("trace_quadratic metric", metric);
        let x = &self.nodes[a.id].value;
        let lx = metric.dot(x);
        let s: f64 = lx.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
        self.push(
            Array2::from_elem((1, 1), s),
            false,
            Op::TraceQuadratic {
                arg: a.id,
                metric: metric.clone(),
            },
        )
    }

    /// Matrix transpose.
    pub fn transpose(&mut self, a: Tensor) -> Tensor {
        let v = self.nodes[a.id].value.t().to_owned();
        self.push(v, false, Op::Transpose(a.id))
    }

    /// Backpropagate from a scalar loss; returns gradients for every
    /// `requires_grad` leaf (zeros for leaves the loss does not reach).
    /// The tape is cleared afterwards and handles become invalid.
    ///
    /// Panics if `loss` is not `1 x 1`.
    pub fn backward(&mut self, loss: Tensor) -> Gradients {
        assert_eq!(
            loss.shape(),
            (1, 1),
            "backward requires a scalar (1 x 1) loss"
        );
        let n = self.nodes.len();
        let mut grad: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();
        grad[loss.id] = Some(Array2::from_elem((1, 1), 1.0));

        for id in (0..n).rev() {
            let g = match grad[id].take() {
                Some(g) => g,
                None => continue,
            };
            // Leaves keep their gradient for collection below.
            if matches!(self.nodes[id].op, Op::Leaf) {
                grad[id] = Some(g);
                continue;
            }
            self.backprop_node(id, &g, &mut grad);
        }

        let mut by_id = HashMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if node.requires_grad {
                let g = grad[id]
                    .take()
                    .unwrap_or_else(|| Array2::zeros(node.value.dim()));
                by_id.insert(id, g);
            }
        }
        self.nodes.clear();
        Gradients { by_id }
    }

    fn backprop_node(&self, id: usize, g: &Array2<f64>, grad: &mut [Option<Array2<f64>>]) {
        let acc = |grad: &mut [Option<Array2<f64>>], target: usize, delta: Array2<f64>| {
            match &mut grad[target] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => unreachable!("leaf handled by caller"),
            Op::Matmul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                acc(grad, *a, g.dot(&bv.t()));
                acc(grad, *b, av.t().dot(g));
            }
            Op::Add(a, b) => {
                for &side in &[*a, *b] {
                    let shape = self.nodes[side].value.dim();
                    if shape == g.dim() {
                        acc(grad, side, g.clone());
                    } else {
                        // 1 x n operand broadcast across rows: sum rows back.
                        let summed = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        acc(grad, side, summed);
                    }
                }
            }
            Op::Scale(a, c) => acc(grad, *a, g.mapv(|x| c * x)),
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = self.nodes[p].value.ncols();
                    let slice = g.slice(ndarray::s![.., at..at + w]).to_owned();
                    acc(grad, p, slice);
                    at += w;
                }
            }
            Op::MeanStack(parts) => {
                let scale = 1.0 / parts.len() as f64;
                for &p in parts {
                    acc(grad, p, g.mapv(|x| scale * x));
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = &self.nodes[*a].value;
                let mut d = g.clone();
                d.zip_mut_with(x, |gi, &xi| {
                    if xi <= 0.0 {
                        *gi *= slope;
                    }
                });
                acc(grad, *a, d);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                let mut d = g.clone();
                d.zip_mut_with(y, |gi, &yi| *gi *= yi * (1.0 - yi));
                acc(grad, *a, d);
            }
            Op::SegmentSoftmax { logits, segments } => {
                let y = &self.nodes[id].value;
                let groups = group_segments(segments);
                let mut d = Array2::zeros(y.dim());
                for idxs in groups.values() {
                    let dot: f64 = idxs.iter().map(|&e| g[[e, 0]] * y[[e, 0]]).sum();
                    for &e in idxs {
                        d[[e, 0]] = y[[e, 0]] * (g[[e, 0]] - dot);
                    }
                }
                acc(grad, *logits, d);
            }
            Op::GatherRows { src, idx } => {
                let mut d = Array2::zeros(self.nodes[*src].value.dim());
                for (e, &i) in idx.iter().enumerate() {
                    let mut row = d.row_mut(i);
                    row += &g.row(e);
                }
                acc(grad, *src, d);
            }
            Op::SegmentWeightedSum {
                vals,
                weights,
                segments,
            } => {
                let v = &self.nodes[*vals].value;
                let w = &self.nodes[*weights].value;
                let mut dv = Array2::zeros(v.dim());
                let mut dw = Array2::zeros(w.dim());
                for (e, &s) in segments.iter().enumerate() {
                    let gs = g.row(s);
                    let we = w[[e, 0]];
                    let mut dve = dv.row_mut(e);
                    dve += &gs.mapv(|x| we * x);
                    dw[[e, 0]] = v.row(e).dot(&gs);
                }
                acc(grad, *vals, dv);
                acc(grad, *weights, dw);
            }
            Op::PairwiseSqDists(a) => {
                // dA = 2 * (rowsum(S) .* A - S A) with S = G + G^T.
                let x = &self.nodes[*a].value;
                let s = g + &g.t();
                let rowsum = s.sum_axis(Axis(1));
                let sa = s.dot(x);
                let mut d = x.clone();
                for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                    let ri = rowsum[i];
                    row.zip_mut_with(&sa.row(i), |xi, &sai| *xi = 2.0 * (ri * *xi - sai));
                }
                acc(grad, *a, d);
            }
            Op::ExpNeg(a, gamma) => {
                let y = &self.nodes[id].value;
                let mut d = g.clone();
                d.zip_mut_with(y, |gi, &yi| *gi *= -gamma * yi);
                acc(grad, *a, d);
            }
            Op::FrobeniusSq(a) => {
                let scale = 2.0 * g[[0, 0]];
                acc(grad, *a, self.nodes[*a].value.mapv(|x| scale * x));
            }
            Op::TraceQuadratic { arg, metric } => {
                let x = &self.nodes[*arg].value;
                let sym = metric + &metric.t();
                acc(grad, *arg, sym.dot(x).mapv(|v| g[[0, 0]] * v));
            }
            Op::Transpose(a) => acc(grad, *a, g.t().to_owned()),
        }
    }
}

fn group_segments(segments: &[usize]) -> std::collections::BTreeMap<usize, Vec<usize>> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (e, &s) in segments.iter().enumerate() {
        groups.entry(s).or_default().push(e);
    }
    groups
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug)]
pub struct GradCheckReport {
    /// Largest relative error across all checked entries.
    pub max_rel_error: f64,
    /// Number of leaf entries compared.
    pub checked: usize,
    /// Entries `(leaf, row, col)` where the perturbed loss was non-finite.
    pub non_finite: Vec<(usize, usize, usize)>,
    /// Tolerance the report was evaluated against.
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite.is_empty() && self.max_rel_error < self.tol
    }
}

/// Evaluate the loss, flagging op-boundary non-finite rejections instead
/// of unwinding.
fn guarded_eval<F>(eval: &F, vals: &[Array2<f64>]) -> Option<f64>
where
    F: Fn(&[Array2<f64>], bool) -> (f64, Option<Vec<Array2<f64>>>),
{
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| eval(vals, false).0));
    match result {
        Ok(v) if v.is_finite() => Some(v),
        _ => None,
    }
}

/// Compare analytic gradients against central finite differences.
///
/// `build` must construct the scalar loss from the given leaf tensors on
/// the supplied tape; it is re-invoked for every `±eps` perturbation, so
/// it must be a pure function of the leaf values. Differences below the
/// `1e-8` absolute floor count as zero relative error.
pub fn check_gradients<F>(leaves: &[Array2<f64>], eps: f64, tol: f64, build: F) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Tensor]) -> Tensor,
{
    let eval = |vals: &[Array2<f64>], want_grads: bool| -> (f64, Option<Vec<Array2<f64>>>) {
        let mut tape = Tape::new();
        let handles: Vec<Tensor> = vals
            .iter()
            .map(|v| {
                if want_grads {
                    tape.variable(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        let loss = build(&mut tape, &handles);
        let value = tape.scalar(loss);
        if want_grads {
            let grads = tape.backward(loss);
            let collected = handles
                .iter()
                .map(|h| grads.get(h).expect("leaf gradient").clone())
                .collect();
            (value, Some(collected))
        } else {
            (value, None)
        }
    };

    let (_, analytic) = eval(leaves, true);
    let analytic = analytic.unwrap();

    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    let mut non_finite = Vec::new();
    let mut work: Vec<Array2<f64>> = leaves.to_vec();

    for (li, leaf) in leaves.iter().enumerate() {
        for r in 0..leaf.nrows() {
            for c in 0..leaf.ncols() {
                let orig = leaf[[r, c]];
                work[li][[r, c]] = orig + eps;
                let f_plus = guarded_eval(&eval, &work);
                work[li][[r, c]] = orig - eps;
                let f_minus = guarded_eval(&eval, &work);
                work[li][[r, c]] = orig;

                let (f_plus, f_minus) = match (f_plus, f_minus) {
                    (Some(p), Some(m)) => (p, m),
                    _ => {
                        non_finite.push((li, r, c));
                        continue;
                    }
                };
                let fd = (f_plus - f_minus) / (2.0 * eps);
                let an = analytic[li][[r, c]];
                let diff = (an - fd).abs();
                // 1e-8 absolute floor, relative above it.
                let rel = if diff <= 1e-8 {
                    0.0
                } else {
                    diff / an.abs().max(fd.abs())
                };
                max_rel_error = max_rel_error.max(rel);
                checked += 1;
            }
        }
    }

    GradCheckReport {
        max_rel_error,
        checked,
        non_finite,
        tol,
    }
}
