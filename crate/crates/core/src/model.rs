//! Fully connected encoder and projector shared by both branches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::discretize::{discretize_batch, discretize_var, BlockLayout, DiscretizedBatch};
use crate::error::{ImsvdError, Result};
use crate::tensor::Matrix;

/// Layer widths, each list including its input width.
///
/// `encoder = [input, h1, ..., H]`, `projector = [H, p1, ..., D]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub encoder: Vec<usize>,
    pub projector: Vec<usize>,
}

impl ArchSpec {
    /// Encoder `input -> 64 -> 64`, projector `64 -> 128 -> M·D_M`.
    pub fn desk_scale(input: usize, layout: BlockLayout) -> Self {
        ArchSpec {
            encoder: vec![input, 64, 64],
            projector: vec![64, 128, layout.dim()],
        }
    }

    pub fn validate(&self, layout: BlockLayout) -> Result<()> {
        for (name, widths) in [("encoder", &self.encoder), ("projector", &self.projector)] {
            if widths.len() < 2 {
                return Err(ImsvdError::contract(format!(
                    "{name} needs at least one layer"
                )));
            }
            if widths.contains(&0) {
                return Err(ImsvdError::contract(format!(
                    "{name} has a zero-width layer: {widths:?}"
                )));
            }
        }
        if self.encoder.last() != self.projector.first() {
            return Err(ImsvdError::contract(format!(
                "encoder output {:?} does not feed projector input {:?}",
                self.encoder.last(),
                self.projector.first()
            )));
        }
        if *self.projector.last().unwrap() != layout.dim() {
            return Err(ImsvdError::Layout(format!(
                "projector output {} must equal layout width {}",
                self.projector.last().unwrap(),
                layout.dim()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0]
    }

    pub fn representation_dim(&self) -> usize {
        *self.encoder.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `fan_in x fan_out`.
    pub weight: Matrix,
    /// `1 x fan_out`.
    pub bias: Matrix,
}

impl Linear {
    fn xavier(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Linear {
            weight: Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound)),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight)?;
        for i in 0..out.rows() {
            for (v, &b) in out.row_mut(i).iter_mut().zip(self.bias.as_slice()) {
                *v += b;
            }
        }
        Ok(out)
    }
}

/// Encoder and projector parameters. There is exactly one copy; both
/// branches of the twin read it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: ArchSpec,
    layout: BlockLayout,
    encoder: Vec<Linear>,
    projector: Vec<Linear>,
}

/// Encoder outputs used by downstream evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationBatch(pub Matrix);

impl RepresentationBatch {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

pub fn init_params(arch: &ArchSpec, layout: BlockLayout, seed: u64) -> Result<ModelParams> {
    arch.validate(layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let build = |widths: &[usize], rng: &mut ChaCha8Rng| {
        widths
            .windows(2)
            .map(|w| Linear::xavier(w[0], w[1], rng))
            .collect::<Vec<_>>()
    };
    let encoder = build(&arch.encoder, &mut rng);
    let projector = build(&arch.projector, &mut rng);
    Ok(ModelParams {
        arch: arch.clone(),
        layout,
        encoder,
        projector,
    })
}

impl ModelParams {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn encoder(&self) -> &[Linear] {
        &self.encoder
    }

    pub fn projector(&self) -> &[Linear] {
        &self.projector
    }

    /// Every parameter matrix: encoder layers then projector layers, weight
    /// before bias.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.encoder
            .iter()
            .chain(&self.projector)
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.encoder
            .iter_mut()
            .chain(self.projector.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// Rebuilds parameters from matrices in [`ModelParams::tensors`] order.
    pub fn from_tensors(arch: ArchSpec, layout: BlockLayout, tensors: Vec<Matrix>) -> Result<Self> {
        arch.validate(layout)?;
        let expected: Vec<(usize, usize)> = arch
            .encoder
            .windows(2)
            .chain(arch.projector.windows(2))
            .flat_map(|w| [(w[0], w[1]), (1, w[1])])
            .collect();
        let got: Vec<(usize, usize)> = tensors.iter().map(Matrix::shape).collect();
        if got != expected {
            return Err(ImsvdError::format(format!(
                "parameter shapes {got:?} do not match architecture {expected:?}"
            )));
        }
        if tensors.iter().any(|t| !t.is_finite()) {
            return Err(ImsvdError::Numeric {
                op: "from_tensors",
                detail: "parameters contain non-finite values".into(),
            });
        }
        let mut it = tensors.into_iter();
        let mut take = |count: usize| {
            (0..count)
                .map(|_| Linear {
                    weight: it.next().unwrap(),
                    bias: it.next().unwrap(),
                })
                .collect::<Vec<_>>()
        };
        let encoder = take(arch.encoder.len() - 1);
        let projector = take(arch.projector.len() - 1);
        Ok(ModelParams {
            arch,
            layout,
            encoder,
            projector,
        })
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.arch.input_dim() {
            return Err(ImsvdError::Dimension {
                op: "forward",
                left: (0, width),
                right: (self.arch.input_dim(), 0),
            });
        }
        Ok(())
    }

    /// Plain forward pass: `(h, z)`.
    pub fn forward(&self, x: &Matrix) -> Result<(RepresentationBatch, Matrix)> {
        self.check_input(x.cols())?;
        let mut h = x.clone();
        for layer in &self.encoder {
            h = layer.apply(&h)?.map(|v| v.max(0.0));
        }
        let mut z = h.clone();
        for (i, layer) in self.projector.iter().enumerate() {
            if i > 0 {
                z = z.map(|v| v.max(0.0));
            }
            z = layer.apply(&z)?;
        }
        Ok((RepresentationBatch(h), z))
    }

    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.0 .0)
    }

    pub fn discretize(&self, x: &Matrix) -> Result<DiscretizedBatch> {
        let (_, z) = self.forward(x)?;
        discretize_batch(&z, self.layout)
    }

    /// Registers every parameter as a tape leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars::new(
            self.tensors()
                .into_iter()
                .map(|t| tape.leaf(t.clone()))
                .collect(),
            self,
        )
    }
}

/// Tape handles for the parameters of a [`ModelParams`], same order as
/// [`ModelParams::tensors`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
    encoder_layers: usize,
}

impl ParamVars {
    /// Wraps leaves created elsewhere (e.g. by gradient checking).
    pub fn new(vars: Vec<Var>, params: &ModelParams) -> Self {
        ParamVars {
            vars,
            encoder_layers: params.encoder.len(),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn layers(&self) -> impl Iterator<Item = (Var, Var)> + '_ {
        self.vars.chunks(2).map(|c| (c[0], c[1]))
    }
}

fn linear_var(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let n = x.shape().0;
    let xw = tape.matmul(x, w)?;
    let ones = tape.leaf(Matrix::ones(n, 1));
    let bias = tape.matmul(ones, b)?;
    tape.add(xw, bias)
}

/// Tape-backed forward: `(h, z)`.
pub fn forward_var(tape: &mut Tape, pv: &ParamVars, x: Var) -> Result<(Var, Var)> {
    let mut h = x;
    for (w, b) in pv.layers().take(pv.encoder_layers) {
        let pre = linear_var(tape, h, w, b)?;
        h = tape.relu(pre)?;
    }
    let mut z = h;
    for (i, (w, b)) in pv.layers().skip(pv.encoder_layers).enumerate() {
        if i > 0 {
            z = tape.relu(z)?;
        }
        z = linear_var(tape, z, w, b)?;
    }
    Ok((h, z))
}

#[derive(Clone, Copy, Debug)]
pub struct TwinOutput {
    pub h1: Var,
    pub h2: Var,
    pub q1: Var,
    pub q2: Var,
}

/// Runs both views through the same parameter leaves, so gradients from the
/// two branches accumulate into one set of parameters.
pub fn twin_forward(
    tape: &mut Tape,
    params: &ModelParams,
    pv: &ParamVars,
    x1: &Matrix,
    x2: &Matrix,
) -> Result<TwinOutput> {
    if x1.shape() != x2.shape() {
        return Err(ImsvdError::Dimension {
            op: "twin_forward",
            left: x1.shape(),
            right: x2.shape(),
        });
    }
    params.check_input(x1.cols())?;
    let a = tape.leaf(x1.clone());
    let b = tape.leaf(x2.clone());
    let (h1, z1) = forward_var(tape, pv, a)?;
    let (h2, z2) = forward_var(tape, pv, b)?;
    let q1 = discretize_var(tape, z1, params.layout)?;
    let q2 = discretize_var(tape, z2, params.layout)?;
    Ok(TwinOutput { h1, h2, q1, q2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn layout() -> BlockLayout {
        BlockLayout::new(2, 4).unwrap()
    }

    fn arch() -> ArchSpec {
        ArchSpec {
            encoder: vec![16, 32, 32],
            projector: vec![32, 8],
        }
    }

    fn input(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_params(&arch(), layout(), 7).unwrap();
        let b = init_params(&arch(), layout(), 7).unwrap();
        let c = init_params(&arch(), layout(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_follow_spec() {
        let p = init_params(&arch(), layout(), 0).unwrap();
        let shapes: Vec<_> = p.tensors().iter().map(|t| t.shape()).collect();
        assert_eq!(
            shapes,
            vec![(16, 32), (1, 32), (32, 32), (1, 32), (32, 8), (1, 8)]
        );
        assert!(p
            .tensors()
            .iter()
            .skip(1)
            .step_by(2)
            .all(|b| b.sum() == 0.0));
        let bound = (6.0f64 / 48.0).sqrt();
        assert!(p.encoder()[0]
            .weight
            .as_slice()
            .iter()
            .all(|w| w.abs() <= bound));
    }

    #[test]
    fn bad_architectures_are_rejected() {
        let mut a = arch();
        a.encoder[1] = 0;
        assert!(matches!(
            init_params(&a, layout(), 0),
            Err(ImsvdError::Contract(_))
        ));
        let mut a = arch();
        a.projector = vec![32, 9];
        assert!(init_params(&a, layout(), 0).is_err());
    }

    #[test]
    fn zero_input_through_zero_bias_layer() {
        let a = ArchSpec {
            encoder: vec![3, 4],
            projector: vec![4, 4],
        };
        let p = init_params(&a, BlockLayout::new(2, 2).unwrap(), 1).unwrap();
        let (h, z) = p.forward(&Matrix::zeros(2, 3)).unwrap();
        assert!(h.matrix().as_slice().iter().all(|&v| v == 0.0));
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_pure_and_matches_tape() {
        let p = init_params(&arch(), layout(), 3).unwrap();
        let x = input(5, 16, 4);
        let (h1, z1) = p.forward(&x).unwrap();
        let (h2, z2) = p.forward(&x).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(z1, z2);

        let mut tape = Tape::new();
        let pv = p.register(&mut tape);
        let xv = tape.leaf(x.clone());
        let (h, z) = forward_var(&mut tape, &pv, xv).unwrap();
        assert_eq!(tape.value(h), h1.matrix());
        assert_eq!(tape.value(z), &z1);
    }

    #[test]
    fn wrong_input_width() {
        let p = init_params(&arch(), layout(), 3).unwrap();
        assert!(matches!(
            p.forward(&Matrix::zeros(2, 15)),
            Err(ImsvdError::Dimension { .. })
        ));
    }

    #[test]
    fn readout_gradient_matches_finite_differences() {
        let p = init_params(&arch(), layout(), 5).unwrap();
        let x = input(6, 16, 6);
        let readout = input(6, 8, 7);
        let tensors: Vec<Matrix> = p.tensors().into_iter().cloned().collect();
        let report = grad_check(
            |tape, vars| {
                let pv = ParamVars::new(vars.to_vec(), &p);
                let xv = tape.leaf(x.clone());
                let (_, z) = forward_var(tape, &pv, xv)?;
                let r = tape.leaf(readout.clone());
                let w = tape.hadamard(z, r)?;
                tape.total_sum(w)
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn identical_views_give_identical_codes() {
        let p = init_params(&arch(), layout(), 9).unwrap();
        let x = input(4, 16, 10);
        let y = input(4, 16, 11);
        let mut tape = Tape::new();
        let pv = p.register(&mut tape);
        let same = twin_forward(&mut tape, &p, &pv, &x, &x).unwrap();
        assert_eq!(tape.value(same.q1), tape.value(same.q2));
        let fwd = twin_forward(&mut tape, &p, &pv, &x, &y).unwrap();
        let rev = twin_forward(&mut tape, &p, &pv, &y, &x).unwrap();
        assert_eq!(tape.value(fwd.q1), tape.value(rev.q2));
        assert_eq!(tape.value(fwd.q2), tape.value(rev.q1));
    }

    #[test]
    fn tensors_round_trip() {
        let p = init_params(&arch(), layout(), 2).unwrap();
        let t: Vec<Matrix> = p.tensors().into_iter().cloned().collect();
        let back = ModelParams::from_tensors(arch(), layout(), t.clone()).unwrap();
        assert_eq!(back, p);
        assert!(ModelParams::from_tensors(arch(), layout(), t[..4].to_vec()).is_err());
    }
}
