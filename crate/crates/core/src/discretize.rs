//! Soft variable discretization and batch estimates of marginal, joint and
//! cross-joint distributions.
//!
//! A projector output row of width `D = M * D_M` is read as `M` contiguous
//! blocks; block softmax turns each block into a relaxed one-hot variable.
//! Distributions over those variables are plain batch averages of products
//! of soft assignments, so every estimate is differentiable in `q`.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::autodiff::{block_softmax_forward, Tape, Var};
use crate::error::{ImsvdError, Result};
use crate::tensor::Matrix;

/// Largest subset order [`estimate_joint`] will materialize.
pub const MAX_JOINT_ORDER: usize = 4;

/// `M` discrete variables with `D_M` units each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockLayout {
    variables: usize,
    units: usize,
}

impl BlockLayout {
    pub fn new(variables: usize, units: usize) -> Result<Self> {
        if variables < 1 {
            return Err(ImsvdError::Layout("need at least one variable".into()));
        }
        if units < 2 {
            return Err(ImsvdError::Layout(format!(
                "each variable needs at least 2 units, got {units}"
            )));
        }
        Ok(BlockLayout { variables, units })
    }

    /// Number of variables `M`.
    pub fn variables(&self) -> usize {
        self.variables
    }

    /// Units per variable `D_M`.
    pub fn units(&self) -> usize {
        self.units
    }

    /// Total width `D = M * D_M`.
    pub fn dim(&self) -> usize {
        self.variables * self.units
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        if !width.is_multiple_of(self.units) {
            return Err(ImsvdError::Layout(format!(
                "width {width} is not divisible by {} units per variable",
                self.units
            )));
        }
        if width != self.dim() {
            return Err(ImsvdError::Layout(format!(
                "width {width} does not match {} variables x {} units",
                self.variables, self.units
            )));
        }
        Ok(())
    }

    /// Column of unit `d` of variable `m`.
    #[inline]
    pub fn col(&self, m: usize, d: usize) -> usize {
        m * self.units + d
    }
}

/// Soft one-hot activations, stored `N x D` with the block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretizedBatch {
    q: Matrix,
    layout: BlockLayout,
}

impl DiscretizedBatch {
    /// Wraps existing activations after checking every block is a distribution.
    pub fn new(q: Matrix, layout: BlockLayout) -> Result<Self> {
        layout.check_width(q.cols())?;
        for i in 0..q.rows() {
            for m in 0..layout.variables() {
                let block = &q.row(i)[layout.col(m, 0)..layout.col(m, 0) + layout.units()];
                if block.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(ImsvdError::contract(format!(
                        "sample {i} variable {m}: entries must lie in [0, 1]"
                    )));
                }
                let s: f64 = block.iter().sum();
                if (s - 1.0).abs() > 1e-10 {
                    return Err(ImsvdError::contract(format!(
                        "sample {i} variable {m} sums to {s}"
                    )));
                }
            }
        }
        Ok(DiscretizedBatch { q, layout })
    }

    /// Builds a batch of hard one-hot codes; `codes[i][m]` is the active unit.
    pub fn from_codes(codes: &[Vec<usize>], layout: BlockLayout) -> Result<Self> {
        let mut q = Matrix::zeros(codes.len(), layout.dim());
        for (i, code) in codes.iter().enumerate() {
            if code.len() != layout.variables() || code.iter().any(|&d| d >= layout.units()) {
                return Err(ImsvdError::contract(format!(
                    "invalid code {code:?} for {layout:?}"
                )));
            }
            for (m, &d) in code.iter().enumerate() {
                q.set(i, layout.col(m, d), 1.0);
            }
        }
        Ok(DiscretizedBatch { q, layout })
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, m: usize, d: usize) -> f64 {
        self.q.get(i, self.layout.col(m, d))
    }

    pub fn block(&self, i: usize, m: usize) -> &[f64] {
        let start = self.layout.col(m, 0);
        &self.q.row(i)[start..start + self.layout.units()]
    }

    /// Argmax unit of every block, ties to the lowest index.
    pub fn hard_codes(&self) -> Vec<Vec<usize>> {
        (0..self.n())
            .map(|i| {
                (0..self.layout.variables())
                    .map(|m| argmax(self.block(i, m)))
                    .collect()
            })
            .collect()
    }

    pub fn into_matrix(self) -> Matrix {
        self.q
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Plain-forward block softmax of projector outputs.
pub fn discretize_batch(z: &Matrix, layout: BlockLayout) -> Result<DiscretizedBatch> {
    layout.check_width(z.cols())?;
    if !z.is_finite() {
        return Err(ImsvdError::Numeric {
            op: "discretize_batch",
            detail: "projector output is not finite".into(),
        });
    }
    Ok(DiscretizedBatch {
        q: block_softmax_forward(z, layout),
        layout,
    })
}

/// Tape-backed discretization.
pub fn discretize_var(tape: &mut Tape, z: Var, layout: BlockLayout) -> Result<Var> {
    tape.block_softmax(z, layout)
}

/// Per-variable value probabilities, `M x D_M`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalTable {
    p: Matrix,
}

impl MarginalTable {
    pub fn probs(&self) -> &Matrix {
        &self.p
    }

    pub fn row(&self, m: usize) -> &[f64] {
        self.p.row(m)
    }
}

pub fn estimate_marginals(q: &DiscretizedBatch) -> Result<MarginalTable> {
    let n = q.n();
    if n == 0 {
        return Err(ImsvdError::contract(
            "cannot estimate marginals of an empty batch",
        ));
    }
    let layout = q.layout();
    let mut p = Matrix::zeros(layout.variables(), layout.units());
    for i in 0..n {
        for m in 0..layout.variables() {
            for (d, &v) in q.block(i, m).iter().enumerate() {
                let cur = p.get(m, d);
                p.set(m, d, cur + v);
            }
        }
    }
    let inv = 1.0 / n as f64;
    Ok(MarginalTable {
        p: p.map(|v| v * inv),
    })
}

/// Dense joint table over an ordered subset of variables.
///
/// Entry `(d_1, ..., d_r)` lives at the row-major flat index with the last
/// axis varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    vars: Vec<usize>,
    units: usize,
    data: Vec<f64>,
}

impl JointTable {
    pub fn order(&self) -> usize {
        self.vars.len()
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat(idx)]
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &d| acc * self.units + d)
    }

    /// Sums out every axis except `axis`.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let r = self.order();
        let mut out = vec![0.0; self.units];
        for (flat, &v) in self.data.iter().enumerate() {
            let d = (flat / self.units.pow((r - 1 - axis) as u32)) % self.units;
            out[d] += v;
        }
        out
    }
}

/// Joint distribution of `vars` estimated over the batch.
///
/// Duplicate indices (a variable paired with itself) are rejected unless
/// `allow_duplicates` is set.
pub fn estimate_joint(
    q: &DiscretizedBatch,
    vars: &[usize],
    allow_duplicates: bool,
) -> Result<JointTable> {
    let layout = q.layout();
    let r = vars.len();
    if r == 0 {
        return Err(ImsvdError::contract("joint needs at least one variable"));
    }
    if r > MAX_JOINT_ORDER {
        return Err(ImsvdError::Capacity(format!(
            "joint order {r} exceeds the supported maximum {MAX_JOINT_ORDER}"
        )));
    }
    if r > layout.variables() && !allow_duplicates {
        return Err(ImsvdError::contract(format!(
            "joint order {r} exceeds {} variables",
            layout.variables()
        )));
    }
    if let Some(&bad) = vars.iter().find(|&&m| m >= layout.variables()) {
        return Err(ImsvdError::contract(format!(
            "variable index {bad} out of range"
        )));
    }
    if !allow_duplicates {
        for (a, &x) in vars.iter().enumerate() {
            if vars[a + 1..].contains(&x) {
                return Err(ImsvdError::contract(format!(
                    "variable {x} repeated in joint subset {vars:?}"
                )));
            }
        }
    }
    let n = q.n();
    if n == 0 {
        return Err(ImsvdError::contract(
            "cannot estimate a joint of an empty batch",
        ));
    }

    let units = layout.units();
    let size = units.pow(r as u32);
    let mut data = vec![0.0; size];
    let mut idx = vec![0usize; r];
    for i in 0..n {
        for (flat, slot) in data.iter_mut().enumerate() {
            let mut rem = flat;
            for axis in (0..r).rev() {
                idx[axis] = rem % units;
                rem /= units;
            }
            let mut prod = q.get(i, vars[0], idx[0]);
            for axis in 1..r {
                prod *= q.get(i, vars[axis], idx[axis]);
            }
            *slot += prod;
        }
    }
    let inv = 1.0 / n as f64;
    for v in &mut data {
        *v *= inv;
    }
    Ok(JointTable {
        vars: vars.to_vec(),
        units,
        data,
    })
}

/// Block matrix of cross-joint probabilities between two views.
///
/// Row `(m1, d1)` is a unit of view 1, column `(m2, d2)` a unit of view 2;
/// block `(m1, m2)` is the joint of `v_{m1}` in view 1 with `v_{m2}` in view 2.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossJointTable {
    c: Matrix,
    layout: BlockLayout,
}

impl CrossJointTable {
    pub fn from_matrix(c: Matrix, layout: BlockLayout) -> Result<Self> {
        if c.shape() != (layout.dim(), layout.dim()) {
            return Err(ImsvdError::Layout(format!(
                "cross-joint matrix is {:?}, layout needs {}x{}",
                c.shape(),
                layout.dim(),
                layout.dim()
            )));
        }
        Ok(CrossJointTable { c, layout })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.c
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn get(&self, m1: usize, m2: usize, d1: usize, d2: usize) -> f64 {
        self.c.get(self.layout.col(m1, d1), self.layout.col(m2, d2))
    }

    /// Block `(m1, m2)` as a `D_M x D_M` matrix.
    pub fn block(&self, m1: usize, m2: usize) -> Matrix {
        let u = self.layout.units();
        Matrix::from_fn(u, u, |a, b| self.get(m1, m2, a, b))
    }

    pub fn block_sum(&self, m1: usize, m2: usize) -> f64 {
        self.block(m1, m2).sum()
    }

    /// Writes the matrix as CSV: a header of `m{m}_d{d}` column names, then
    /// one row per view-1 unit led by its own name. Values use 17 significant
    /// digits so a read-back reproduces them exactly.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let names = unit_names(self.layout);
        let mut header = vec!["unit".to_string()];
        header.extend(names.iter().cloned());
        out.write_record(&header).map_err(csv_err)?;
        for (r, name) in names.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(self.c.row(r).iter().map(|v| format!("{v:.16e}")));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush().map_err(|e| ImsvdError::format(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let (variables, units) = parse_unit_header(header.iter().skip(1))?;
        let layout = BlockLayout::new(variables, units)?;
        let mut data = Vec::with_capacity(layout.dim() * layout.dim());
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != layout.dim() + 1 {
                return Err(ImsvdError::format(format!(
                    "cross-joint row {rows} has {} fields, expected {}",
                    rec.len(),
                    layout.dim() + 1
                )));
            }
            for f in rec.iter().skip(1) {
                data.push(
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| ImsvdError::format(format!("cross-joint row {rows}: {e}")))?,
                );
            }
            rows += 1;
        }
        let c = Matrix::from_vec(rows, layout.dim(), data)?;
        Self::from_matrix(c, layout)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| ImsvdError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| ImsvdError::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

pub(crate) fn unit_names(layout: BlockLayout) -> Vec<String> {
    (0..layout.variables())
        .flat_map(|m| (0..layout.units()).map(move |d| format!("m{m}_d{d}")))
        .collect()
}

fn parse_unit_header<'a>(names: impl Iterator<Item = &'a str>) -> Result<(usize, usize)> {
    let mut max_m = 0;
    let mut max_d = 0;
    let mut count = 0;
    for name in names {
        let bad = || ImsvdError::format(format!("unexpected column name {name:?}"));
        let rest = name.strip_prefix('m').ok_or_else(bad)?;
        let (m, d) = rest.split_once("_d").ok_or_else(bad)?;
        max_m = max_m.max(m.parse::<usize>().map_err(|_| bad())?);
        max_d = max_d.max(d.parse::<usize>().map_err(|_| bad())?);
        count += 1;
    }
    if count == 0 || count != (max_m + 1) * (max_d + 1) {
        return Err(ImsvdError::format(
            "cross-joint header does not describe a full layout",
        ));
    }
    Ok((max_m + 1, max_d + 1))
}

fn csv_err(e: csv::Error) -> ImsvdError {
    ImsvdError::format(format!("csv: {e}"))
}

/// `(1/N) Q1ᵀ Q2`, view 1 on rows and view 2 on columns.
pub fn cross_joint(q1: &DiscretizedBatch, q2: &DiscretizedBatch) -> Result<CrossJointTable> {
    if q1.n() != q2.n() {
        return Err(ImsvdError::contract(format!(
            "cross-joint needs equal batch sizes, got {} and {}",
            q1.n(),
            q2.n()
        )));
    }
    if q1.layout() != q2.layout() {
        return Err(ImsvdError::Layout(
            "views use different block layouts".into(),
        ));
    }
    if q1.n() == 0 {
        return Err(ImsvdError::contract("cross-joint of an empty batch"));
    }
    let inv = 1.0 / q1.n() as f64;
    let c = q1.q().t_matmul(q2.q())?.map(|v| v * inv);
    Ok(CrossJointTable {
        c,
        layout: q1.layout(),
    })
}

/// Tape-backed cross-joint; gradients flow into both views.
pub fn cross_joint_var(tape: &mut Tape, q1: Var, q2: Var) -> Result<Var> {
    if q1.shape() != q2.shape() {
        return Err(ImsvdError::Dimension {
            op: "cross_joint",
            left: q1.shape(),
            right: q2.shape(),
        });
    }
    let n = q1.shape().0;
    if n == 0 {
        return Err(ImsvdError::contract("cross-joint of an empty batch"));
    }
    let t = tape.transpose(q1)?;
    let prod = tape.matmul(t, q2)?;
    tape.scale(prod, 1.0 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, layout: BlockLayout, seed: u64) -> DiscretizedBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Matrix::from_fn(n, layout.dim(), |_, _| rng.random_range(-3.0..3.0));
        discretize_batch(&z, layout).unwrap()
    }

    #[test]
    fn layout_rules() {
        assert!(BlockLayout::new(0, 4).is_err());
        assert!(BlockLayout::new(3, 1).is_err());
        let l = BlockLayout::new(3, 4).unwrap();
        assert_eq!(l.dim(), 12);
        assert!(matches!(l.check_width(10), Err(ImsvdError::Layout(_))));
    }

    #[test]
    fn zeros_discretize_to_uniform() {
        let layout = BlockLayout::new(3, 4).unwrap();
        let q = discretize_batch(&Matrix::zeros(2, 12), layout).unwrap();
        assert!(q.q().as_slice().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn peaked_block_is_nearly_one_hot() {
        let layout = BlockLayout::new(1, 4).unwrap();
        let q = discretize_batch(&Matrix::from_rows(&[vec![10.0, 0.0, 0.0, 0.0]]), layout).unwrap();
        assert!(q.get(0, 0, 0) > 0.999);
    }

    #[test]
    fn block_shift_invariance() {
        let layout = BlockLayout::new(2, 3).unwrap();
        let z = Matrix::from_rows(&[vec![0.3, -1.2, 2.0, 0.5, 0.1, -0.4]]);
        let shifted = Matrix::from_rows(&[vec![5.3, 3.8, 7.0, 0.5, 0.1, -0.4]]);
        let a = discretize_batch(&z, layout).unwrap();
        let b = discretize_batch(&shifted, layout).unwrap();
        assert!(a.q().max_abs_diff(b.q()) < 1e-15);
    }

    #[test]
    fn non_finite_projector_output() {
        let layout = BlockLayout::new(1, 2).unwrap();
        let z = Matrix::from_rows(&[vec![f64::INFINITY, 0.0]]);
        assert!(matches!(
            discretize_batch(&z, layout),
            Err(ImsvdError::Numeric { .. })
        ));
    }

    #[test]
    fn blocks_sum_to_one() {
        let layout = BlockLayout::new(4, 5).unwrap();
        let q = random_batch(10, layout, 7);
        for i in 0..10 {
            for m in 0..4 {
                let s: f64 = q.block(i, m).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(q.block(i, m).iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn marginals_of_single_sample_and_symmetric_pair() {
        let layout = BlockLayout::new(2, 3).unwrap();
        let q = random_batch(1, layout, 3);
        let p = estimate_marginals(&q).unwrap();
        for m in 0..2 {
            assert_eq!(p.row(m), q.block(0, m));
        }
        let layout = BlockLayout::new(1, 2).unwrap();
        let q = DiscretizedBatch::from_codes(&[vec![0], vec![1]], layout).unwrap();
        assert_eq!(estimate_marginals(&q).unwrap().row(0), &[0.5, 0.5]);
    }

    #[test]
    fn marginals_reject_empty_batch() {
        let layout = BlockLayout::new(1, 2).unwrap();
        let q = DiscretizedBatch::from_codes(&[], layout).unwrap();
        assert!(matches!(
            estimate_marginals(&q),
            Err(ImsvdError::Contract(_))
        ));
    }

    #[test]
    fn joint_of_copied_hard_codes() {
        let layout = BlockLayout::new(2, 2).unwrap();
        let q = DiscretizedBatch::from_codes(&[vec![0, 0], vec![1, 1]], layout).unwrap();
        let j = estimate_joint(&q, &[0, 1], false).unwrap();
        assert_eq!(j.as_slice(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn joint_order_one_is_marginal() {
        let layout = BlockLayout::new(3, 3).unwrap();
        let q = random_batch(6, layout, 4);
        let p = estimate_marginals(&q).unwrap();
        for m in 0..3 {
            let j = estimate_joint(&q, &[m], false).unwrap();
            for (a, b) in j.as_slice().iter().zip(p.row(m)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn joint_errors() {
        let layout = BlockLayout::new(5, 2).unwrap();
        let q = random_batch(3, layout, 5);
        assert!(matches!(
            estimate_joint(&q, &[0, 1, 2, 3, 4], false),
            Err(ImsvdError::Capacity(_))
        ));
        assert!(matches!(
            estimate_joint(&q, &[1, 1], false),
            Err(ImsvdError::Contract(_))
        ));
        assert!(estimate_joint(&q, &[1, 1], true).is_ok());
        assert!(matches!(
            estimate_joint(&q, &[7], false),
            Err(ImsvdError::Contract(_))
        ));
    }

    #[test]
    fn joint_of_independent_uniform_codes_is_flat() {
        let layout = BlockLayout::new(2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 20_000;
        let codes: Vec<Vec<usize>> = (0..n)
            .map(|_| vec![rng.random_range(0..3), rng.random_range(0..3)])
            .collect();
        let q = DiscretizedBatch::from_codes(&codes, layout).unwrap();
        let j = estimate_joint(&q, &[0, 1], false).unwrap();
        let p = 1.0 / 9.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        for &v in j.as_slice() {
            assert!((v - p).abs() < 3.0 * sigma, "{v}");
        }
    }

    #[test]
    fn joint_marginalizes_to_marginals() {
        let layout = BlockLayout::new(3, 4).unwrap();
        let q = random_batch(9, layout, 6);
        let p = estimate_marginals(&q).unwrap();
        let j = estimate_joint(&q, &[2, 0, 1], false).unwrap();
        assert!((j.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for (axis, &m) in [2usize, 0, 1].iter().enumerate() {
            for (a, b) in j.marginal(axis).iter().zip(p.row(m)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cross_joint_of_identical_views_is_self_joint() {
        let layout = BlockLayout::new(3, 3).unwrap();
        let q = random_batch(7, layout, 8);
        let c = cross_joint(&q, &q).unwrap();
        for m1 in 0..3 {
            for m2 in 0..3 {
                let j = estimate_joint(&q, &[m1, m2], true).unwrap();
                for d1 in 0..3 {
                    for d2 in 0..3 {
                        assert!((c.get(m1, m2, d1, d2) - j.get(&[d1, d2])).abs() < 1e-12);
                        assert!((c.get(m1, m2, d1, d2) - c.get(m2, m1, d2, d1)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn cross_joint_single_hard_sample_is_outer_product() {
        let layout = BlockLayout::new(2, 2).unwrap();
        let q1 = DiscretizedBatch::from_codes(&[vec![0, 1]], layout).unwrap();
        let q2 = DiscretizedBatch::from_codes(&[vec![1, 1]], layout).unwrap();
        let c = cross_joint(&q1, &q2).unwrap();
        let expected = Matrix::from_fn(4, 4, |r, col| q1.q().get(0, r) * q2.q().get(0, col));
        assert_eq!(c.matrix(), &expected);
    }

    #[test]
    fn cross_joint_blocks_are_normalized() {
        let layout = BlockLayout::new(3, 5).unwrap();
        let c = cross_joint(&random_batch(11, layout, 1), &random_batch(11, layout, 2)).unwrap();
        for m1 in 0..3 {
            for m2 in 0..3 {
                assert!((c.block_sum(m1, m2) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cross_joint_batch_mismatch() {
        let layout = BlockLayout::new(2, 2).unwrap();
        let r = cross_joint(&random_batch(3, layout, 1), &random_batch(4, layout, 2));
        assert!(matches!(r, Err(ImsvdError::Contract(_))));
    }

    #[test]
    fn tape_cross_joint_matches_plain() {
        let layout = BlockLayout::new(2, 3).unwrap();
        let a = random_batch(5, layout, 1);
        let b = random_batch(5, layout, 2);
        let mut tape = Tape::new();
        let va = tape.leaf(a.q().clone());
        let vb = tape.leaf(b.q().clone());
        let c = cross_joint_var(&mut tape, va, vb).unwrap();
        let plain = cross_joint(&a, &b).unwrap();
        assert!(tape.value(c).max_abs_diff(plain.matrix()) < 1e-15);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let layout = BlockLayout::new(2, 3).unwrap();
        let c = cross_joint(&random_batch(5, layout, 3), &random_batch(5, layout, 4)).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("unit,m0_d0,m0_d1,m0_d2,m1_d0"));
        let back = CrossJointTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back, c);
    }
}
