//! Shannon measures over batch-estimated distributions, in nats.

use crate::autodiff::LOG_EPS;
use crate::discretize::{estimate_joint, BlockLayout, DiscretizedBatch, MAX_JOINT_ORDER};
use crate::error::{ImsvdError, Result};

/// Allowed slack on the total mass of a distribution passed to [`entropy`].
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Size `r` of the variable subsets averaged over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubsetOrder(usize);

impl SubsetOrder {
    pub fn new(r: usize, layout: BlockLayout) -> Result<Self> {
        let cap = layout.variables().min(MAX_JOINT_ORDER);
        if r < 1 || r > cap {
            return Err(ImsvdError::contract(format!(
                "subset order {r} outside 1..={cap} for {} variables",
                layout.variables()
            )));
        }
        Ok(SubsetOrder(r))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if let Some(&bad) = dist.iter().find(|&&p| !(p >= -1e-15) || !p.is_finite()) {
        return Err(ImsvdError::contract(format!(
            "probability {bad} is negative or not finite"
        )));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(ImsvdError::contract(format!(
            "distribution sums to {total}, not 1"
        )));
    }
    Ok(-dist.iter().map(|&p| p * p.max(LOG_EPS).ln()).sum::<f64>())
}

/// All `r`-element subsets of `0..m`, lexicographic.
pub fn subsets(m: usize, r: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, r, &mut Vec::with_capacity(r), &mut out);
    out
}

pub fn joint_entropy(q: &DiscretizedBatch, vars: &[usize]) -> Result<f64> {
    entropy(estimate_joint(q, vars, false)?.as_slice())
}

/// Mean joint entropy over every `r`-variable subset.
pub fn avg_subset_entropy(q: &DiscretizedBatch, r: SubsetOrder) -> Result<f64> {
    let m = q.layout().variables();
    let r = SubsetOrder::new(r.get(), q.layout())?.get();
    let all = subsets(m, r);
    let mut total = 0.0;
    for s in &all {
        total += joint_entropy(q, s)?;
    }
    Ok(total / all.len() as f64)
}

/// `r * S̄(1) - S̄(r)`.
pub fn total_correlation(q: &DiscretizedBatch, r: SubsetOrder) -> Result<f64> {
    let s1 = avg_subset_entropy(q, SubsetOrder::new(1, q.layout())?)?;
    let sr = avg_subset_entropy(q, r)?;
    Ok(r.get() as f64 * s1 - sr)
}

/// `S(v_a) + S(v_b) - S(v_a, v_b)`, without clamping.
pub fn mutual_information_raw(q: &DiscretizedBatch, m1: usize, m2: usize) -> Result<f64> {
    if m1 == m2 {
        return Err(ImsvdError::contract(format!(
            "mutual information needs two distinct variables, got {m1} twice"
        )));
    }
    Ok(joint_entropy(q, &[m1])? + joint_entropy(q, &[m2])? - joint_entropy(q, &[m1, m2])?)
}

/// Pairwise mutual information, clamped at zero for reporting.
pub fn mutual_information(q: &DiscretizedBatch, m1: usize, m2: usize) -> Result<f64> {
    Ok(mutual_information_raw(q, m1, m2)?.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairwiseMi {
    pub max: f64,
    pub mean: f64,
}

/// Max and mean clamped MI over all unordered pairs; zero when `M = 1`.
pub fn pairwise_mi(q: &DiscretizedBatch) -> Result<PairwiseMi> {
    let pairs = subsets(q.layout().variables(), 2);
    if pairs.is_empty() {
        return Ok(PairwiseMi {
            max: 0.0,
            mean: 0.0,
        });
    }
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    for p in &pairs {
        let mi = mutual_information(q, p[0], p[1])?;
        max = max.max(mi);
        sum += mi;
    }
    Ok(PairwiseMi {
        max,
        mean: sum / pairs.len() as f64,
    })
}

/// Summary measures reported per epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InfoSummary {
    pub s1: f64,
    /// `C̄(2)`; zero when there is a single variable.
    pub c2: f64,
    pub max_mi: f64,
    pub mean_mi: f64,
}

pub fn summarize(q: &DiscretizedBatch) -> Result<InfoSummary> {
    let layout = q.layout();
    let s1 = avg_subset_entropy(q, SubsetOrder::new(1, layout)?)?;
    let c2 = if layout.variables() >= 2 {
        total_correlation(q, SubsetOrder::new(2, layout)?)?
    } else {
        0.0
    };
    let mi = pairwise_mi(q)?;
    Ok(InfoSummary {
        s1,
        c2,
        max_mi: mi.max,
        mean_mi: mi.mean,
    })
}
