//! The cross-joint entropy loss and its ablation variants.
//!
//! Terms, all in nats:
//!
//! * **TI**: `-(1/NM) Σ_{i,m} ln max(ε, <q1_i(m,:), q2_i(m,:)>)`, transform invariance.
//! * **TIC**: `-(1/NM) Σ_{i,m,d} q1_i(m,d) ln max(ε, q2_i(m,d))`, the cross-entropy
//!   alternative to TI (view 1 is the target, view 2 the prediction).
//! * **DE**: `(1/M²) Σ_m Σ_d C ln C` over the diagonal entries of the diagonal
//!   blocks of the cross-joint matrix `C`.
//! * **OE**: `(1/M²) Σ_{m1≠m2} Σ_{d1,d2} C ln C` over the off-diagonal blocks.
//!
//! Off-diagonal entries of diagonal blocks never enter the loss. At the
//! optimum (one-hot, uniform, pairwise independent codes) the loss equals
//! `-(2 - 1/M) ln D_M`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::discretize::{cross_joint_var, BlockLayout, CrossJointTable, DiscretizedBatch};
use crate::error::{ImsvdError, Result};
use crate::tensor::Matrix;

/// Clamp floor inside the logarithms of the TI and TIC terms. A floor rather
/// than an additive offset keeps identical one-hot views at exactly zero.
pub const SIMILARITY_EPS: f64 = 1e-8;

/// `λ` scales both entropy terms. `β` is carried for objective-level
/// reporting only; it has no runtime effect on the loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    /// `lambda = 0` is accepted as the TI-only collapse diagnostic.
    pub fn new(lambda: f64, beta: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(ImsvdError::contract(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        if !beta.is_finite() {
            return Err(ImsvdError::contract(format!(
                "beta must be finite, got {beta}"
            )));
        }
        Ok(LossWeights { lambda, beta })
    }

    pub fn is_diagnostic(&self) -> bool {
        self.lambda == 0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossVariant {
    /// Entropy terms only.
    DeOe,
    /// Off-diagonal entropy plus TI.
    OeTi,
    /// Entropy terms plus the cross-entropy invariance term.
    DeOeTic,
    /// Entropy terms plus TI.
    #[default]
    Full,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [
        LossVariant::DeOe,
        LossVariant::OeTi,
        LossVariant::DeOeTic,
        LossVariant::Full,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossVariant::DeOe => "de-oe",
            LossVariant::OeTi => "oe-ti",
            LossVariant::DeOeTic => "de-oe-tic",
            LossVariant::Full => "full",
        }
    }

    pub fn uses_de(&self) -> bool {
        !matches!(self, LossVariant::OeTi)
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = ImsvdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "de-oe" | "de_oe" => Ok(LossVariant::DeOe),
            "oe-ti" | "oe_ti" => Ok(LossVariant::OeTi),
            "de-oe-tic" | "de_oe_tic" => Ok(LossVariant::DeOeTic),
            "full" | "de-oe-ti" | "de_oe_ti" => Ok(LossVariant::Full),
            other => Err(ImsvdError::contract(format!(
                "unknown loss variant {other:?}"
            ))),
        }
    }
}

/// Scalar values of every term. Inactive terms are still evaluated for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ti: f64,
    pub de: f64,
    pub oe: f64,
    pub tic: f64,
}

impl LossBreakdown {
    /// Total recomputed from the terms for `variant`.
    pub fn weighted_sum(&self, weights: LossWeights, variant: LossVariant) -> f64 {
        let l = weights.lambda;
        match variant {
            LossVariant::Full => self.ti + l * (self.de + self.oe),
            LossVariant::DeOe => l * (self.de + self.oe),
            LossVariant::OeTi => self.ti + l * self.oe,
            LossVariant::DeOeTic => self.tic + l * (self.de + self.oe),
        }
    }
}

/// Tape handles for every term of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub ti: Var,
    pub tic: Var,
    pub de: Var,
    pub oe: Var,
    pub cross_joint: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let v = |x: Var| tape.value(x).item();
        LossBreakdown {
            total: v(self.total),
            ti: v(self.ti),
            de: v(self.de),
            oe: v(self.oe),
            tic: v(self.tic),
        }
    }
}

/// `D x M` indicator summing the units of each block.
fn block_sum_matrix(layout: BlockLayout) -> Matrix {
    Matrix::from_fn(layout.dim(), layout.variables(), |c, m| {
        if c / layout.units() == m {
            1.0
        } else {
            0.0
        }
    })
}

fn check_views(q1: Var, q2: Var, layout: BlockLayout) -> Result<()> {
    if q1.shape() != q2.shape() {
        return Err(ImsvdError::Dimension {
            op: "loss",
            left: q1.shape(),
            right: q2.shape(),
        });
    }
    layout.check_width(q1.shape().1)?;
    if q1.shape().0 == 0 {
        return Err(ImsvdError::contract("loss on an empty batch"));
    }
    Ok(())
}

/// Mean negative log inner product between matching blocks of the two views.
pub fn ti_term(tape: &mut Tape, q1: Var, q2: Var, layout: BlockLayout) -> Result<Var> {
    check_views(q1, q2, layout)?;
    let n = q1.shape().0;
    let prod = tape.hadamard(q1, q2)?;
    let sum_blocks = tape.leaf(block_sum_matrix(layout));
    let inner = tape.matmul(prod, sum_blocks)?;
    let logs = tape.log_clamped(inner, SIMILARITY_EPS)?;
    let total = tape.total_sum(logs)?;
    tape.scale(total, -1.0 / (n * layout.variables()) as f64)
}

/// Mean cross-entropy of view 2 against view 1 per block.
pub fn tic_term(tape: &mut Tape, q1: Var, q2: Var, layout: BlockLayout) -> Result<Var> {
    check_views(q1, q2, layout)?;
    let n = q1.shape().0;
    let logs = tape.log_clamped(q2, SIMILARITY_EPS)?;
    let weighted = tape.hadamard(q1, logs)?;
    let total = tape.total_sum(weighted)?;
    tape.scale(total, -1.0 / (n * layout.variables()) as f64)
}

/// Mask selecting DE (diagonal of diagonal blocks) or OE (off-diagonal blocks).
pub(crate) fn entropy_mask(layout: BlockLayout, diagonal: bool) -> Matrix {
    let u = layout.units();
    Matrix::from_fn(layout.dim(), layout.dim(), |r, c| {
        let (m1, d1, m2, d2) = (r / u, r % u, c / u, c % u);
        let hit = if diagonal {
            m1 == m2 && d1 == d2
        } else {
            m1 != m2
        };
        if hit {
            1.0
        } else {
            0.0
        }
    })
}

/// `(de, oe)` over a tape-backed cross-joint matrix.
pub fn entropy_terms_var(tape: &mut Tape, c: Var, layout: BlockLayout) -> Result<(Var, Var)> {
    if c.shape() != (layout.dim(), layout.dim()) {
        return Err(ImsvdError::contract(format!(
            "cross-joint matrix {:?} does not match layout {}x{}",
            c.shape(),
            layout.dim(),
            layout.dim()
        )));
    }
    let norm = 1.0 / (layout.variables() * layout.variables()) as f64;
    let logs = tape.log_eps(c)?;
    let plogp = tape.hadamard(c, logs)?;
    let mut term = |diagonal: bool| -> Result<Var> {
        let mask = tape.leaf(entropy_mask(layout, diagonal));
        let picked = tape.hadamard(plogp, mask)?;
        let total = tape.total_sum(picked)?;
        tape.scale(total, norm)
    };
    let de = term(true)?;
    let oe = term(false)?;
    Ok((de, oe))
}

/// Forward-only `(de, oe)` of a cross-joint table.
pub fn entropy_terms(c: &CrossJointTable, layout: BlockLayout) -> Result<(f64, f64)> {
    if c.layout() != layout {
        return Err(ImsvdError::contract(format!(
            "cross-joint layout {:?} does not match {layout:?}",
            c.layout()
        )));
    }
    let mut tape = Tape::new();
    let cv = tape.leaf(c.matrix().clone());
    let (de, oe) = entropy_terms_var(&mut tape, cv, layout)?;
    Ok((tape.value(de).item(), tape.value(oe).item()))
}

/// Records the full loss for `variant` on the tape.
pub fn imsvd_loss(
    tape: &mut Tape,
    q1: Var,
    q2: Var,
    layout: BlockLayout,
    weights: LossWeights,
    variant: LossVariant,
) -> Result<LossVars> {
    check_views(q1, q2, layout)?;
    let ti = ti_term(tape, q1, q2, layout)?;
    let tic = tic_term(tape, q1, q2, layout)?;
    let c = cross_joint_var(tape, q1, q2)?;
    let (de, oe) = entropy_terms_var(tape, c, layout)?;

    let entropy = if variant.uses_de() {
        tape.add(de, oe)?
    } else {
        oe
    };
    let entropy = tape.scale(entropy, weights.lambda)?;
    let total = match variant {
        LossVariant::Full | LossVariant::OeTi => tape.add(ti, entropy)?,
        LossVariant::DeOe => entropy,
        LossVariant::DeOeTic => tape.add(tic, entropy)?,
    };
    Ok(LossVars {
        total,
        ti,
        tic,
        de,
        oe,
        cross_joint: c,
    })
}

/// Forward-only loss on two discretized views.
pub fn evaluate_loss(
    q1: &DiscretizedBatch,
    q2: &DiscretizedBatch,
    weights: LossWeights,
    variant: LossVariant,
) -> Result<LossBreakdown> {
    if q1.layout() != q2.layout() {
        return Err(ImsvdError::Layout(
            "views use different block layouts".into(),
        ));
    }
    let mut tape = Tape::new();
    let a = tape.leaf(q1.q().clone());
    let b = tape.leaf(q2.q().clone());
    let vars = imsvd_loss(&mut tape, a, b, q1.layout(), weights, variant)?;
    Ok(vars.breakdown(&tape))
}

/// Hard codes realizing the optimum for `(M, D_M)` with `D_M` prime.
///
/// Samples enumerate every `x` in `Z_p^k`; variable `m` takes the value of
/// the `m`-th linear form `f_m · x mod p`. The forms are pairwise linearly
/// independent, so every variable is uniform and every pair of variables is
/// independent. `k` is the smallest dimension with enough distinct forms.
pub fn fixed_point_codes(layout: BlockLayout) -> Result<Vec<Vec<usize>>> {
    let (m, p) = (layout.variables(), layout.units());
    if !(2..p).all(|k| p % k != 0) {
        return Err(ImsvdError::contract(format!(
            "fixed-point construction needs a prime unit count, got {p}"
        )));
    }
    let mut k = 1;
    while (p.pow(k as u32) - 1) / (p - 1) < m {
        k += 1;
    }
    let size = p.pow(k as u32);
    let digits = |mut v: usize| -> Vec<usize> {
        let mut out = vec![0; k];
        for slot in out.iter_mut().rev() {
            *slot = v % p;
            v /= p;
        }
        out
    };
    // One representative per projective point: first non-zero coordinate is 1.
    let forms: Vec<Vec<usize>> = (1..size)
        .map(digits)
        .filter(|f| f.iter().find(|&&c| c != 0) == Some(&1))
        .take(m)
        .collect();
    Ok((0..size)
        .map(|x| {
            let xs = digits(x);
            forms
                .iter()
                .map(|f| f.iter().zip(&xs).map(|(a, b)| a * b).sum::<usize>() % p)
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{cross_joint, discretize_batch};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eval(q1: &DiscretizedBatch, q2: &DiscretizedBatch, variant: LossVariant) -> LossBreakdown {
        evaluate_loss(q1, q2, LossWeights::default(), variant).unwrap()
    }

    fn fixed_point_value(m: usize, u: usize) -> f64 {
        -(2.0 - 1.0 / m as f64) * (u as f64).ln()
    }

    #[test]
    fn ti_of_identical_one_hot_views_is_zero() {
        let layout = BlockLayout::new(2, 3).unwrap();
        let q = DiscretizedBatch::from_codes(&[vec![0, 2], vec![1, 1]], layout).unwrap();
        let b = eval(&q, &q, LossVariant::Full);
        assert_eq!(b.ti, 0.0);
        assert_eq!(b.tic, 0.0);
    }

    #[test]
    fn ti_of_orthogonal_views_hits_the_floor() {
        let layout = BlockLayout::new(1, 2).unwrap();
        let a = DiscretizedBatch::from_codes(&[vec![0]], layout).unwrap();
        let b = DiscretizedBatch::from_codes(&[vec![1]], layout).unwrap();
        let r = eval(&a, &b, LossVariant::Full);
        assert!((r.ti + SIMILARITY_EPS.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_views_give_log_units() {
        let layout = BlockLayout::new(3, 4).unwrap();
        let q = discretize_batch(&Matrix::zeros(5, 12), layout).unwrap();
        let r = eval(&q, &q, LossVariant::Full);
        assert!((r.ti - 4f64.ln()).abs() < 1e-12);
        assert!((r.tic - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn tic_one_hot_against_uniform() {
        let layout = BlockLayout::new(2, 4).unwrap();
        let hot = DiscretizedBatch::from_codes(&[vec![3, 1]], layout).unwrap();
        let flat = discretize_batch(&Matrix::zeros(1, 8), layout).unwrap();
        let r = eval(&hot, &flat, LossVariant::DeOeTic);
        assert!((r.tic - 4f64.ln()).abs() < 1e-12);
        let back = eval(&flat, &hot, LossVariant::DeOeTic);
        assert!((back.tic - r.tic).abs() > 1.0);
    }

    #[test]
    fn fixed_point_two_by_two() {
        let layout = BlockLayout::new(2, 2).unwrap();
        let codes = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
        let q = DiscretizedBatch::from_codes(&codes, layout).unwrap();
        let r = eval(&q, &q, LossVariant::Full);
        assert!((r.de + 0.5 * 2f64.ln()).abs() < 1e-12);
        assert!((r.oe + 2f64.ln()).abs() < 1e-12);
        assert!((r.de + r.oe + 1.039721).abs() < 1e-6);
        assert!((r.total - fixed_point_value(2, 2)).abs() < 1e-9);
    }

    #[test]
    fn constructed_fixed_points() {
        for (m, u) in [(2, 2), (3, 2), (4, 2), (3, 3), (4, 3), (6, 5), (5, 2)] {
            let layout = BlockLayout::new(m, u).unwrap();
            let q =
                DiscretizedBatch::from_codes(&fixed_point_codes(layout).unwrap(), layout).unwrap();
            let r = eval(&q, &q, LossVariant::Full);
            let uf = u as f64;
            assert!((r.de + uf.ln() / m as f64).abs() < 1e-12, "({m},{u})");
            assert!((r.oe + 2.0 * (m - 1) as f64 / m as f64 * uf.ln()).abs() < 1e-12);
            assert!((r.total - fixed_point_value(m, u)).abs() < 1e-9);
        }
        assert!(fixed_point_codes(BlockLayout::new(2, 4).unwrap()).is_err());
        assert_eq!(
            fixed_point_codes(BlockLayout::new(4, 2).unwrap())
                .unwrap()
                .len(),
            8
        );
    }

    #[test]
    fn collapse_scores_zero_entropy() {
        let layout = BlockLayout::new(3, 4).unwrap();
        let q = DiscretizedBatch::from_codes(&vec![vec![1, 2, 0]; 6], layout).unwrap();
        let r = eval(&q, &q, LossVariant::Full);
        assert_eq!(r.de, 0.0);
        assert_eq!(r.oe, 0.0);
    }

    #[test]
    fn breakdown_totals_match_weighted_sum() {
        let layout = BlockLayout::new(3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut z = || Matrix::from_fn(8, 12, |_, _| rng.random_range(-2.0..2.0));
        let a = discretize_batch(&z(), layout).unwrap();
        let b = discretize_batch(&z(), layout).unwrap();
        let w = LossWeights::new(0.7, 1.0).unwrap();
        for v in LossVariant::ALL {
            let r = evaluate_loss(&a, &b, w, v).unwrap();
            assert!((r.total - r.weighted_sum(w, v)).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn entropy_terms_reject_foreign_layout() {
        let layout = BlockLayout::new(2, 2).unwrap();
        let q = DiscretizedBatch::from_codes(&[vec![0, 1]], layout).unwrap();
        let c = cross_joint(&q, &q).unwrap();
        assert!(entropy_terms(&c, BlockLayout::new(1, 4).unwrap()).is_err());
        assert!(entropy_terms(&c, layout).is_ok());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in LossVariant::ALL {
            assert_eq!(v.as_str().parse::<LossVariant>().unwrap(), v);
        }
        assert!("nope".parse::<LossVariant>().is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(-1.0, 1.0).is_err());
        assert!(LossWeights::new(f64::NAN, 1.0).is_err());
        assert!(LossWeights::new(0.0, 1.0).unwrap().is_diagnostic());
    }

    // With two units the diagonal entropy can beat the fixed point: mass 1/e
    // on each diagonal entry scores -2/e < -ln 2.
    #[test]
    fn two_unit_diagonal_undercuts_the_fixed_point() {
        let a = (1.0 + (4.0 / std::f64::consts::E - 1.0).sqrt()) / 2.0;
        let layout = BlockLayout::new(1, 2).unwrap();
        let q = Matrix::from_rows(&[vec![a, 1.0 - a], vec![1.0 - a, a]]);
        let q = DiscretizedBatch::new(q, layout).unwrap();
        let (de, oe) = entropy_terms(&cross_joint(&q, &q).unwrap(), layout).unwrap();
        assert!((de + 2.0 / std::f64::consts::E).abs() < 1e-12);
        assert!(de + oe < fixed_point_value(1, 2));
    }

    proptest! {
        #[test]
        fn entropy_terms_bounded_by_fixed_point(
            m in 1usize..=4,
            u in 3usize..=6,
            n in 1usize..=16,
            seed in any::<u64>(),
        ) {
            let layout = BlockLayout::new(m, u).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut z = || Matrix::from_fn(n, m * u, |_, _| rng.random_range(-4.0..4.0));
            let a = discretize_batch(&z(), layout).unwrap();
            let b = discretize_batch(&z(), layout).unwrap();
            let (de, oe) = entropy_terms(&cross_joint(&a, &b).unwrap(), layout).unwrap();
            prop_assert!(de + oe >= fixed_point_value(m, u) - 1e-12);
        }
    }
}
