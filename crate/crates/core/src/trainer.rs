//! Optimization loop: schedule, optimizers, epoch loop, checkpoints, metrics.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckReport, Tape};
use crate::checkpoint::{load_tensors, manifest_path, save_tensors, Manifest};
use crate::config::{OptimizerKind, TrainConfig};
use crate::data::{mix_seed, BatchStream, Dataset, MultiviewBatch};
use crate::discretize::{BlockLayout, DiscretizedBatch};
use crate::error::{ImsvdError, Result};
use crate::infotheory::summarize;
use crate::loss::{imsvd_loss, LossBreakdown, LossVariant, LossWeights};
use crate::model::{init_params, twin_forward, ArchSpec, ModelParams, ParamVars};
use crate::tensor::Matrix;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Learning rate at `step` of `total_steps`: linear warmup from 0, then a
/// cosine decay from `base_lr` to `final_lr` reached at the last step.
pub fn lr_at(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    let warmup = warmup_steps(total_steps, config);
    if step < warmup {
        return config.base_lr * step as f64 / warmup as f64;
    }
    let span = total_steps.saturating_sub(1).saturating_sub(warmup);
    if span == 0 || step == warmup {
        return config.base_lr;
    }
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    config.final_lr + 0.5 * (config.base_lr - config.final_lr) * (1.0 + (PI * progress).cos())
}

fn warmup_steps(total_steps: usize, config: &TrainConfig) -> usize {
    if config.epochs == 0 {
        return 0;
    }
    config.warmup_epochs * total_steps / config.epochs
}

/// First-order optimizer with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    t: u64,
    /// Adam first moments, or SGD momentum buffers.
    first: Vec<Matrix>,
    /// Adam second moments; empty for SGD.
    second: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ModelParams) -> Self {
        let zeros = || -> Vec<Matrix> {
            params
                .tensors()
                .iter()
                .map(|t| Matrix::zeros(t.rows(), t.cols()))
                .collect()
        };
        let second = match kind {
            OptimizerKind::Adam => zeros(),
            OptimizerKind::SgdMomentum => Vec::new(),
        };
        Optimizer {
            kind,
            t: 0,
            first: zeros(),
            second,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &[Matrix],
        lr: f64,
        config: &TrainConfig,
    ) -> Result<()> {
        let mut tensors = params.tensors_mut();
        if grads.len() != tensors.len() || self.first.len() != tensors.len() {
            return Err(ImsvdError::contract(format!(
                "optimizer holds {} slots, got {} parameters and {} gradients",
                self.first.len(),
                tensors.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let decay = lr * config.weight_decay;
        match self.kind {
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_eps);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                for (i, p) in tensors.iter_mut().enumerate() {
                    let m = self.first[i].as_mut_slice();
                    let v = self.second[i].as_mut_slice();
                    for (((p, &g), m), v) in p
                        .as_mut_slice()
                        .iter_mut()
                        .zip(grads[i].as_slice())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *p -= decay * *p;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
            OptimizerKind::SgdMomentum => {
                let mu = config.momentum;
                for (i, p) in tensors.iter_mut().enumerate() {
                    for ((p, &g), buf) in p
                        .as_mut_slice()
                        .iter_mut()
                        .zip(grads[i].as_slice())
                        .zip(self.first[i].as_mut_slice())
                    {
                        *buf = mu * *buf + g;
                        *p -= decay * *p;
                        *p -= lr * *buf;
                    }
                }
            }
        }
        Ok(())
    }

    /// State as tensors: `[t]`, then first moments, then second moments.
    pub fn state_tensors(&self) -> Vec<Matrix> {
        let mut out = vec![Matrix::scalar(self.t as f64)];
        out.extend(self.first.iter().cloned());
        out.extend(self.second.iter().cloned());
        out
    }

    pub fn from_state_tensors(
        kind: OptimizerKind,
        params: &ModelParams,
        mut state: Vec<Matrix>,
    ) -> Result<Self> {
        let mut fresh = Optimizer::new(kind, params);
        let expected = 1 + fresh.first.len() + fresh.second.len();
        if state.len() != expected {
            return Err(ImsvdError::format(format!(
                "optimizer state has {} tensors, expected {expected} for {kind}",
                state.len()
            )));
        }
        let second = state.split_off(1 + fresh.first.len());
        let first = state.split_off(1);
        let t = state[0].item();
        let shapes = |a: &[Matrix], b: &[Matrix]| {
            a.iter().map(Matrix::shape).eq(b.iter().map(Matrix::shape))
        };
        if !shapes(&first, &fresh.first) || !shapes(&second, &fresh.second) || t < 0.0 {
            return Err(ImsvdError::format(
                "optimizer state does not match the model",
            ));
        }
        fresh.t = t as u64;
        fresh.first = first;
        fresh.second = second;
        Ok(fresh)
    }
}

/// Result of one optimization step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: LossBreakdown,
    /// Soft codes of the first view, before the update.
    pub q1: Matrix,
    /// Mean per-block inner product between the two views.
    pub ti_mean: f64,
}

fn describe(name: &str, m: &Matrix) -> String {
    let v = m.as_slice();
    let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    let non_finite = v.len() - finite.len();
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
    format!("{name}: min {lo:.6e} max {hi:.6e} mean {mean:.6e} non-finite {non_finite}")
}

fn batch_diagnostics(params: &ModelParams, batch: &MultiviewBatch) -> String {
    let max_param = params
        .tensors()
        .iter()
        .flat_map(|t| t.as_slice().iter())
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    let head: Vec<usize> = batch.indices.iter().take(8).copied().collect();
    format!(
        "batch of {} (first indices {head:?}); {}; {}; max |param| {max_param:.6e}",
        batch.indices.len(),
        describe("x1", &batch.x1),
        describe("x2", &batch.x2),
    )
}

fn block_inner_mean(q1: &Matrix, q2: &Matrix, layout: BlockLayout) -> f64 {
    let mut sum = 0.0;
    for (a, b) in q1.as_slice().iter().zip(q2.as_slice()) {
        sum += a * b;
    }
    sum / (q1.rows() * layout.variables()) as f64
}

/// One twin forward/backward pass and one optimizer update at rate `lr`.
pub fn train_step(
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    batch: &MultiviewBatch,
    config: &TrainConfig,
    lr: f64,
) -> Result<StepOutput> {
    let layout = params.layout();
    let weights = config.weights()?;
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let forward = (|| {
        let out = twin_forward(&mut tape, params, &pv, &batch.x1, &batch.x2)?;
        let loss = imsvd_loss(&mut tape, out.q1, out.q2, layout, weights, config.variant)?;
        Ok::<_, ImsvdError>((out, loss))
    })();
    let (out, loss) = match forward {
        Ok(v) => v,
        Err(ImsvdError::Numeric { op, detail }) => {
            return Err(ImsvdError::Numeric {
                op: "train_step",
                detail: format!("{op}: {detail}; {}", batch_diagnostics(params, batch)),
            })
        }
        Err(e) => return Err(e),
    };
    let breakdown = loss.breakdown(&tape);
    if !breakdown.total.is_finite() {
        return Err(ImsvdError::Numeric {
            op: "train_step",
            detail: format!("loss {breakdown:?}; {}", batch_diagnostics(params, batch)),
        });
    }
    tape.backward(loss.total)?;
    let grads: Vec<Matrix> = pv
        .vars()
        .iter()
        .map(|&v| {
            tape.grad(v).cloned().unwrap_or_else(|| {
                let (r, c) = v.shape();
                Matrix::zeros(r, c)
            })
        })
        .collect();
    let q1 = tape.value(out.q1).clone();
    let ti_mean = block_inner_mean(&q1, tape.value(out.q2), layout);
    optimizer.step(params, &grads, lr, config)?;
    Ok(StepOutput {
        loss: breakdown,
        q1,
        ti_mean,
    })
}

/// Fraction of blocks whose largest unit exceeds `threshold`.
pub fn onehot_fraction(q: &DiscretizedBatch, threshold: f64) -> f64 {
    let layout = q.layout();
    let mut hits = 0usize;
    for i in 0..q.n() {
        for m in 0..layout.variables() {
            if q.block(i, m).iter().fold(0.0f64, |a, &b| a.max(b)) > threshold {
                hits += 1;
            }
        }
    }
    hits as f64 / (q.n() * layout.variables()).max(1) as f64
}

/// Per-epoch log record; loss terms are means over the epoch's steps and
/// information measures are computed over the epoch's first-view codes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    /// Learning rate of the epoch's first step.
    pub lr: f64,
    pub loss: LossBreakdown,
    pub s1: f64,
    pub c2: f64,
    pub max_mi: f64,
    pub mean_mi: f64,
    pub onehot_frac_090: f64,
    pub onehot_frac_099: f64,
    pub ti_mean: f64,
}

/// Where and how `fit` persists its artifacts.
#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Output directory; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint directory to resume from.
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: ModelParams,
    pub optimizer: Optimizer,
    pub metrics: Vec<EpochMetrics>,
}

pub const MODEL_FILE: &str = "model.ckpt";
pub const OPTIMIZER_FILE: &str = "optimizer.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RUN_MANIFEST: &str = "run.manifest";

fn widths(ws: &[usize]) -> String {
    ws.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_widths(key: &str, s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|e| ImsvdError::format(format!("manifest key {key:?}: {e}")))
        })
        .collect()
}

/// Writes parameters plus a manifest describing architecture and layout.
pub fn save_model(path: &Path, params: &ModelParams, extra: &Manifest) -> Result<()> {
    save_tensors(path, &params.tensors())?;
    let mut m = extra.clone();
    m.set("format", "imsvd-model")
        .set("version", VERSION)
        .set("arch_encoder", widths(&params.arch().encoder))
        .set("arch_projector", widths(&params.arch().projector))
        .set("layout_m", params.layout().variables())
        .set("layout_dm", params.layout().units());
    m.save(&manifest_path(path))
}

pub fn load_model(path: &Path) -> Result<(ModelParams, Manifest)> {
    let m = Manifest::load(&manifest_path(path))?;
    let arch = ArchSpec {
        encoder: parse_widths("arch_encoder", m.require("arch_encoder")?)?,
        projector: parse_widths("arch_projector", m.require("arch_projector")?)?,
    };
    let layout = BlockLayout::new(m.parse_value("layout_m")?, m.parse_value("layout_dm")?)?;
    arch.validate(layout)?;
    let params = ModelParams::from_tensors(arch, layout, load_tensors(path)?)?;
    Ok((params, m))
}

fn write_metrics(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut text = String::new();
    for m in metrics {
        text.push_str(&serde_json::to_string(m).map_err(|e| ImsvdError::format(e.to_string()))?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| ImsvdError::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| ImsvdError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| ImsvdError::format(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn append_metrics(path: &Path, m: &EpochMetrics) -> Result<()> {
    let line = serde_json::to_string(m).map_err(|e| ImsvdError::format(e.to_string()))?;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| ImsvdError::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| ImsvdError::io(path, e))
}

/// Directory name of the periodic checkpoint after `epoch` completed epochs.
pub fn checkpoint_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("epoch-{epoch:04}"))
}

/// Saves model, optimizer state and metrics so far into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    config: &TrainConfig,
    params: &ModelParams,
    optimizer: &Optimizer,
    metrics: &[EpochMetrics],
    epochs_done: usize,
    step: usize,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ImsvdError::io(dir, e))?;
    let mut m = config.to_manifest();
    m.set("epochs_done", epochs_done).set("step", step);
    save_model(&dir.join(MODEL_FILE), params, &m)?;
    let state = optimizer.state_tensors();
    save_tensors(&dir.join(OPTIMIZER_FILE), &state.iter().collect::<Vec<_>>())?;
    write_metrics(&dir.join(METRICS_FILE), metrics)
}

struct Resumed {
    params: ModelParams,
    optimizer: Optimizer,
    metrics: Vec<EpochMetrics>,
    epochs_done: usize,
}

fn resume_from(dir: &Path, config: &TrainConfig, arch: &ArchSpec) -> Result<Resumed> {
    let (params, m) = load_model(&dir.join(MODEL_FILE))?;
    if params.arch() != arch || params.layout() != config.layout()? {
        return Err(ImsvdError::contract(format!(
            "checkpoint {} does not match the configured architecture",
            dir.display()
        )));
    }
    let mut saved = TrainConfig::default();
    for (k, v) in m.entries() {
        if crate::config::CONFIG_KEYS.iter().any(|(key, _)| *key == k) {
            saved.set(k, v)?;
        }
    }
    if saved != *config {
        return Err(ImsvdError::contract(format!(
            "checkpoint {} was written with a different configuration",
            dir.display()
        )));
    }
    let optimizer = Optimizer::from_state_tensors(
        config.optimizer,
        &params,
        load_tensors(&dir.join(OPTIMIZER_FILE))?,
    )?;
    let metrics = read_metrics(&dir.join(METRICS_FILE))?;
    let epochs_done: usize = m.parse_value("epochs_done")?;
    if metrics.len() != epochs_done {
        return Err(ImsvdError::format(format!(
            "checkpoint {} records {epochs_done} epochs but {} metric lines",
            dir.display(),
            metrics.len()
        )));
    }
    Ok(Resumed {
        params,
        optimizer,
        metrics,
        epochs_done,
    })
}

/// Runs the epoch loop on `data`.
pub fn fit(config: &TrainConfig, data: &Dataset, options: &FitOptions) -> Result<FitResult> {
    config.validate()?;
    let arch = config.arch(data.dim())?;
    let layout = config.layout()?;
    let (mut params, mut optimizer, mut metrics, start) = match &options.resume {
        Some(dir) => {
            let r = resume_from(dir, config, &arch)?;
            (r.params, r.optimizer, r.metrics, r.epochs_done)
        }
        None => {
            let p = init_params(&arch, layout, config.seed_model)?;
            let o = Optimizer::new(config.optimizer, &p);
            (p, o, Vec::new(), 0)
        }
    };

    let stream = BatchStream::new(
        data,
        config.batch_size,
        config.seed_shuffle,
        config.augment_policy(),
    )?;
    let per_epoch = stream.batches_per_epoch();
    let total = per_epoch * config.epochs;

    if let Some(out) = &options.out_dir {
        fs::create_dir_all(out).map_err(|e| ImsvdError::io(out, e))?;
        let mut run = config.to_manifest();
        run.set("version", VERSION)
            .set("samples", data.len())
            .set("input_dim", data.dim())
            .set("batches_per_epoch", per_epoch);
        run.save(&out.join(RUN_MANIFEST))?;
        write_metrics(&out.join(METRICS_FILE), &metrics)?;
    }

    for epoch in start..config.epochs {
        let order = stream.permutation(epoch);
        let mut sums = LossBreakdown::default();
        let mut ti_sum = 0.0;
        let mut codes = Matrix::zeros(per_epoch * config.batch_size, layout.dim());
        let first_lr = lr_at(epoch * per_epoch, total, config);
        for b in 0..per_epoch {
            let step = epoch * per_epoch + b;
            let batch = stream.batch(epoch, b, &order)?;
            let out = train_step(
                &mut params,
                &mut optimizer,
                &batch,
                config,
                lr_at(step, total, config),
            )?;
            sums.total += out.loss.total;
            sums.ti += out.loss.ti;
            sums.de += out.loss.de;
            sums.oe += out.loss.oe;
            sums.tic += out.loss.tic;
            ti_sum += out.ti_mean;
            let len = out.q1.len();
            codes.as_mut_slice()[b * len..(b + 1) * len].copy_from_slice(out.q1.as_slice());
        }
        let k = per_epoch as f64;
        let q = DiscretizedBatch::new(codes, layout)?;
        let info = summarize(&q)?;
        let record = EpochMetrics {
            epoch,
            steps: per_epoch,
            lr: first_lr,
            loss: LossBreakdown {
                total: sums.total / k,
                ti: sums.ti / k,
                de: sums.de / k,
                oe: sums.oe / k,
                tic: sums.tic / k,
            },
            s1: info.s1,
            c2: info.c2,
            max_mi: info.max_mi,
            mean_mi: info.mean_mi,
            onehot_frac_090: onehot_fraction(&q, 0.9),
            onehot_frac_099: onehot_fraction(&q, 0.99),
            ti_mean: ti_sum / k,
        };
        metrics.push(record);
        let done = epoch + 1;
        if let Some(out) = &options.out_dir {
            append_metrics(&out.join(METRICS_FILE), metrics.last().unwrap())?;
            let periodic = config.checkpoint_every > 0 && done % config.checkpoint_every == 0;
            if periodic && done < config.epochs {
                save_checkpoint(
                    &checkpoint_dir(out, done),
                    config,
                    &params,
                    &optimizer,
                    &metrics,
                    done,
                    done * per_epoch,
                )?;
            }
        }
    }

    if let Some(out) = &options.out_dir {
        save_checkpoint(
            out,
            config,
            &params,
            &optimizer,
            &metrics,
            config.epochs,
            total,
        )?;
    }
    Ok(FitResult {
        params,
        optimizer,
        metrics,
    })
}

const INPUT_SPREAD: f64 = 1.0;

/// A random small model and batch for checking loss gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckCase {
    pub m: usize,
    pub dm: usize,
    pub n: usize,
    pub variant: LossVariant,
    pub seed: u64,
}

/// Finite-difference check of the full loss with respect to every model
/// parameter, on two random views of a random batch.
pub fn loss_grad_check(case: &GradCheckCase, h: f64) -> Result<GradCheckReport> {
    let layout = BlockLayout::new(case.m, case.dm)?;
    if case.n < 2 {
        return Err(ImsvdError::contract("gradient check needs n >= 2"));
    }
    let input = 4;
    let arch = ArchSpec {
        encoder: vec![input, 4],
        projector: vec![4, 4, layout.dim()],
    };
    let mut params = init_params(&arch, layout, mix_seed(&[case.seed, 0]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[case.seed, 1]));
    // Zero biases put dead units exactly on the relu kink. Positive hidden
    // biases keep most units active, away from the kink and from the
    // near-dead units whose tiny gradients sit below rounding noise.
    let layers = params.tensors().len() / 2;
    for (i, t) in params.tensors_mut().into_iter().enumerate() {
        if i % 2 == 1 {
            let range = if i / 2 + 1 < layers {
                0.1..0.6
            } else {
                -0.5..0.5
            };
            for v in t.as_mut_slice() {
                *v = rng.random_range(range.clone());
            }
        }
    }
    let x1 = Matrix::from_fn(case.n, input, |_, _| {
        INPUT_SPREAD * rng.random_range(-1.0..1.0)
    });
    let jitter = Matrix::from_fn(case.n, input, |_, _| 0.3 * rng.random_range(-1.0..1.0));
    let x2 = x1.zip_map(&jitter, |a, b| a + b);
    let weights = LossWeights::default();
    let tensors: Vec<Matrix> = params.tensors().into_iter().cloned().collect();
    grad_check(
        |tape, vars| {
            let pv = ParamVars::new(vars.to_vec(), &params);
            let out = twin_forward(tape, &params, &pv, &x1, &x2)?;
            Ok(imsvd_loss(tape, out.q1, out.q2, layout, weights, case.variant)?.total)
        },
        &tensors,
        h,
    )
}
