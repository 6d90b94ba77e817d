//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in execution order, so node inputs
//! always precede the node itself and the backward sweep is a single reverse
//! pass over the node list. Tapes are single-use: build one per step, call
//! [`Tape::backward`] once, read gradients, drop it.
//!
//! ```
//! use imsvd::autodiff::Tape;
//! use imsvd::tensor::Matrix;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Matrix::from_rows(&[vec![1.0, -2.0, 3.0]]));
//! let y = tape.relu(x).unwrap();
//! let loss = tape.total_sum(y).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().as_slice(), &[1.0, 0.0, 1.0]);
//! ```

use crate::discretize::BlockLayout;
use crate::error::{ImsvdError, Result};
use crate::tensor::{compensated_sum, Matrix};

/// Clamp floor used by [`Tape::log_eps`].
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`]. Cheap to copy; only meaningful for the
/// tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Hadamard(usize, usize),
    Transpose(usize),
    RowSum(usize),
    TotalSum(usize),
    Mean(usize),
    Relu(usize),
    LogEps(usize, f64),
    Exp(usize),
    BlockSoftmax(usize, BlockLayout),
}

impl Op {
    fn inputs(&self) -> (Option<usize>, Option<usize>) {
        match *self {
            Op::Leaf => (None, None),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Hadamard(a, b) => {
                (Some(a), Some(b))
            }
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Transpose(a)
            | Op::RowSum(a)
            | Op::TotalSum(a)
            | Op::Mean(a)
            | Op::Relu(a)
            | Op::LogEps(a, _)
            | Op::Exp(a)
            | Op::BlockSoftmax(a, _) => (Some(a), None),
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Matrix>>,
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

    /// Registers a leaf (parameter, input or constant).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push_unchecked(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.id].value
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.as_ref().map(|g| &g[v.id])
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.id].op, Op::Leaf)
    }

    fn push_unchecked(&mut self, op: Op, value: Matrix) -> Var {
        let (rows, cols) = value.shape();
        let id = self.nodes.len();
        self.nodes.push(Node { op, value });
        Var { id, rows, cols }
    }

    fn push(&mut self, op: Op, value: Matrix, name: &'static str) -> Result<Var> {
        if let Some(bad) = value.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(ImsvdError::Numeric {
                op: name,
                detail: format!("output contains {bad}"),
            });
        }
        Ok(self.push_unchecked(op, value))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(ImsvdError::Dimension {
                op,
                left: a.shape(),
                right: b.shape(),
            });
        }
        Ok(())
    }

    fn require_finite(&self, a: Var, op: &'static str) -> Result<()> {
        if !self.value(a).is_finite() {
            return Err(ImsvdError::Numeric {
                op,
                detail: "input is not finite".into(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a.id, b.id), value, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a.id, b.id), value, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a.id, b.id), value, "sub")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a.id, c), value, "scale")
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + c);
        self.push(Op::Offset(a.id), value, "offset")
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "hadamard")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Hadamard(a.id, b.id), value, "hadamard")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a.id), value, "transpose")
    }

    /// Sums each row: `n×m -> n×1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let mut value = Matrix::zeros(src.rows(), 1);
        for i in 0..src.rows() {
            value.set(i, 0, compensated_sum(src.row(i).iter().copied()));
        }
        self.push(Op::RowSum(a.id), value, "row_sum")
    }

    pub fn total_sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(Op::TotalSum(a.id), value, "total_sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        if src.is_empty() {
            return Err(ImsvdError::contract("mean of an empty matrix"));
        }
        let value = Matrix::scalar(src.sum() / src.len() as f64);
        self.push(Op::Mean(a.id), value, "mean")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a.id), value, "relu")
    }

    /// `ln(max(x, LOG_EPS))`.
    pub fn log_eps(&mut self, a: Var) -> Result<Var> {
        self.log_clamped(a, LOG_EPS)
    }

    /// `ln(max(x, floor))`; the gradient is zero wherever the clamp is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        if !(floor > 0.0) {
            return Err(ImsvdError::contract("log floor must be > 0"));
        }
        self.require_finite(a, "log_eps")?;
        let value = self.value(a).map(|x| x.max(floor).ln());
        self.push(Op::LogEps(a.id, floor), value, "log_eps")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.require_finite(a, "exp")?;
        let value = self.value(a).map(f64::exp);
        self.push(Op::Exp(a.id), value, "exp")
    }

    /// Softmax over every contiguous `units`-wide block of each row.
    pub fn block_softmax(&mut self, z: Var, layout: BlockLayout) -> Result<Var> {
        layout.check_width(z.cols)?;
        self.require_finite(z, "block_softmax")?;
        let value = block_softmax_forward(self.value(z), layout);
        self.push(Op::BlockSoftmax(z.id, layout), value, "block_softmax")
    }

    /// Propagates `∂loss/∂node` to every node. Can only be called once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(ImsvdError::contract("backward already ran on this tape"));
        }
        if loss.shape() != (1, 1) {
            return Err(ImsvdError::contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                loss.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.id] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let contributions = self.local_backward(&node.op, &node.value, &g)?;
            for (input, delta) in contributions {
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            }
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.unwrap_or_else(|| Matrix::zeros(n.value.rows(), n.value.cols())))
            .collect();
        self.grads = Some(grads);
        Ok(())
    }

    fn local_backward(&self, op: &Op, out: &Matrix, g: &Matrix) -> Result<Vec<(usize, Matrix)>> {
        let val = |i: usize| &self.nodes[i].value;
        Ok(match *op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => vec![(a, g.matmul_t(val(b))?), (b, val(a).t_matmul(g)?)],
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|x| -x))],
            Op::Scale(a, c) => vec![(a, g.map(|x| c * x))],
            Op::Offset(a) => vec![(a, g.clone())],
            Op::Hadamard(a, b) => vec![
                (a, g.zip_map(val(b), |x, y| x * y)),
                (b, g.zip_map(val(a), |x, y| x * y)),
            ],
            Op::Transpose(a) => vec![(a, g.transpose())],
            Op::RowSum(a) => {
                let src = val(a);
                vec![(
                    a,
                    Matrix::from_fn(src.rows(), src.cols(), |i, _| g.get(i, 0)),
                )]
            }
            Op::TotalSum(a) => {
                let (r, c) = val(a).shape();
                vec![(a, Matrix::filled(r, c, g.item()))]
            }
            Op::Mean(a) => {
                let (r, c) = val(a).shape();
                vec![(a, Matrix::filled(r, c, g.item() / (r * c) as f64))]
            }
            Op::Relu(a) => vec![(a, g.zip_map(val(a), |x, y| if y > 0.0 { x } else { 0.0 }))],
            Op::LogEps(a, floor) => vec![(
                a,
                g.zip_map(val(a), |x, y| if y > floor { x / y } else { 0.0 }),
            )],
            Op::Exp(a) => vec![(a, g.zip_map(out, |x, y| x * y))],
            Op::BlockSoftmax(a, layout) => {
                let units = layout.units();
                let mut dz = Matrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let s_row = out.row(i);
                    let g_row = g.row(i);
                    let d_row = dz.row_mut(i);
                    for b in 0..layout.variables() {
                        let r = b * units..(b + 1) * units;
                        let s = &s_row[r.clone()];
                        let gb = &g_row[r.clone()];
                        let dot: f64 = s.iter().zip(gb).map(|(x, y)| x * y).sum();
                        for ((d, &sv), &gv) in d_row[r].iter_mut().zip(s).zip(gb) {
                            *d = sv * (gv - dot);
                        }
                    }
                }
                vec![(a, dz)]
            }
        })
    }

    /// Input node ids of `v`, for graph inspection.
    pub fn inputs_of(&self, v: Var) -> Vec<usize> {
        let (a, b) = self.nodes[v.id].op.inputs();
        a.into_iter().chain(b).collect()
    }
}

pub(crate) fn block_softmax_forward(z: &Matrix, layout: BlockLayout) -> Matrix {
    let units = layout.units();
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        let src = z.row(i);
        let dst = out.row_mut(i);
        for (zb, qb) in src.chunks(units).zip(dst.chunks_mut(units)) {
            let max = zb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (q, &x) in qb.iter_mut().zip(zb) {
                *q = (x - max).exp();
                total += *q;
            }
            for q in qb.iter_mut() {
                *q /= total;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat entry index) where the maximum was attained.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares tape gradients of `f` against central finite differences.
///
/// `f` builds a scalar loss on a fresh tape from leaf variables holding
/// `params` (one leaf per matrix, in order). Relative error per entry is
/// `|a - n| / max(1e-8, |a| + |n|)`; the maximum over all entries is reported.
pub fn grad_check<F>(f: F, params: &[Matrix], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(ImsvdError::contract("grad_check step must be > 0"));
    }
    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(ImsvdError::Numeric {
                op: "grad_check",
                detail: format!("objective evaluated to {v}"),
            });
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).item().is_finite() {
        return Err(ImsvdError::Numeric {
            op: "grad_check",
            detail: "objective is not finite".into(),
        });
    }
    tape.backward(loss)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .map(|&v| tape.grad(v).unwrap().clone())
        .collect();

    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        for e in 0..grad.len() {
            let orig = work[pi].as_slice()[e];
            work[pi].as_mut_slice()[e] = orig + h;
            let plus = eval(&work)?;
            work[pi].as_mut_slice()[e] = orig - h;
            let minus = eval(&work)?;
            work[pi].as_mut_slice()[e] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.as_slice()[e];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.entries_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, e);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
