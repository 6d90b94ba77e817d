//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use imsvd::checkpoint::Manifest;
use imsvd::config::TrainConfig;
use imsvd::data::{write_csv, AttributeWorldSpec, Dataset, DatasetSource};
use imsvd::eval::{
    code_distinctness, embeddings, export_joint, knn_eval, linear_probe, theorem_verify,
    ProbeConfig, VerifyOptions,
};
use imsvd::loss::LossVariant;
use imsvd::model::ModelParams;
use imsvd::trainer::{
    fit, load_model, loss_grad_check, FitOptions, GradCheckCase, MODEL_FILE, VERSION,
};
use imsvd::ImsvdError;

#[derive(Debug, Parser)]
#[command(
    name = "imsvd",
    version,
    about = "Soft variable discretization: training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

// Parsed once per process; boxing the large variants buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic attribute world as CSV files.
    GenData(GenDataArgs),
    /// Train a twin network and write checkpoints and metrics.
    Train(TrainArgs),
    /// kNN accuracy of encoder outputs on one attribute.
    EvalKnn(EvalArgs),
    /// Linear-probe accuracy of encoder outputs on one attribute.
    EvalProbe(EvalArgs),
    /// Fixed-point statistics of the soft codes as JSON.
    Verify(EvalArgs),
    /// Write the cross-joint matrix, marginals and embeddings as CSV.
    ExportJoint(EvalArgs),
    /// Finite-difference check of the loss gradients on a random model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct WorldArgs {
    /// Synthetic world observation noise.
    #[arg(long, default_value_t = AttributeWorldSpec::default().noise_sigma)]
    world_noise: f64,
    /// Comma-separated number of values per attribute.
    #[arg(long, default_value = "8,8,8,8")]
    world_values: String,
    /// Synthetic world observation dimension.
    #[arg(long, default_value_t = AttributeWorldSpec::default().ambient_dim)]
    world_dim: usize,
    #[arg(long, default_value_t = AttributeWorldSpec::default().train_size)]
    train_size: usize,
    #[arg(long, default_value_t = AttributeWorldSpec::default().test_size)]
    test_size: usize,
}

impl WorldArgs {
    fn spec(&self, seed: u64) -> Result<AttributeWorldSpec> {
        let values = self
            .world_values
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("--world-values {:?}", self.world_values))?;
        Ok(AttributeWorldSpec {
            values_per_attribute: values,
            ambient_dim: self.world_dim,
            noise_sigma: self.world_noise,
            seed,
            train_size: self.train_size,
            test_size: self.test_size,
        })
    }

    fn record(&self, m: &mut Manifest, seed: u64) {
        m.set("world_seed", seed)
            .set("world_noise", self.world_noise)
            .set("world_values", &self.world_values)
            .set("world_dim", self.world_dim)
            .set("train_size", self.train_size)
            .set("test_size", self.test_size);
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// World seed [TrainConfig: seed_data].
    #[arg(long, default_value_t = 0)]
    seed_data: u64,
    #[command(flatten)]
    world: WorldArgs,
}

/// Every flag maps onto the TrainConfig key of the same name (with `_`).
/// Unset flags fall back to the config file, then to the built-in default.
#[derive(Debug, Args, Default)]
struct ConfigFlags {
    /// [epochs, default 200]
    #[arg(long)]
    epochs: Option<usize>,
    /// Samples per batch N [batch_size, default 256]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak learning rate [base_lr, default 1e-3]
    #[arg(long)]
    base_lr: Option<f64>,
    /// [warmup_epochs, default 10]
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// [final_lr, default 1e-5]
    #[arg(long)]
    final_lr: Option<f64>,
    /// [weight_decay, default 1e-6]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// adam | sgd_momentum [optimizer, default adam]
    #[arg(long)]
    optimizer: Option<String>,
    /// [momentum, default 0.9]
    #[arg(long)]
    momentum: Option<f64>,
    /// [adam_beta1, default 0.9]
    #[arg(long)]
    adam_beta1: Option<f64>,
    /// [adam_beta2, default 0.999]
    #[arg(long)]
    adam_beta2: Option<f64>,
    /// [adam_eps, default 1e-8]
    #[arg(long)]
    adam_eps: Option<f64>,
    /// Loss variant [variant, default full]
    #[arg(long, value_parser = ["de-oe", "oe-ti", "de-oe-tic", "full"])]
    variant: Option<String>,
    /// Entropy-term weight; 0 gives the TI-only diagnostic [lambda, default 1]
    #[arg(long)]
    lambda: Option<f64>,
    /// Redundancy weight, recorded only [beta, default 1]
    #[arg(long)]
    beta: Option<f64>,
    /// [seed_model, default 0]
    #[arg(long)]
    seed_model: Option<u64>,
    /// Synthetic world seed [seed_data, default 0]
    #[arg(long)]
    seed_data: Option<u64>,
    /// Batch order and augmentation seed [seed_shuffle, default 0]
    #[arg(long)]
    seed_shuffle: Option<u64>,
    /// Number of variables M [m, default 8]
    #[arg(long)]
    m: Option<usize>,
    /// Units per variable D_M [dm, default 8]
    #[arg(long)]
    dm: Option<usize>,
    /// Encoder widths after the input [encoder_hidden, default 64,64]
    #[arg(long)]
    encoder_hidden: Option<String>,
    /// Projector hidden widths [projector_hidden, default 128]
    #[arg(long)]
    projector_hidden: Option<String>,
    /// [aug_noise, default 0.1]
    #[arg(long)]
    aug_noise: Option<f64>,
    /// [aug_dropout, default 0.2]
    #[arg(long)]
    aug_dropout: Option<f64>,
    /// [aug_scale, default 0.1]
    #[arg(long)]
    aug_scale: Option<f64>,
    /// Epochs between checkpoints, 0 = end only [checkpoint_every, default 50]
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    out.push((stringify!($field), v.to_string()));
                })*
            };
        }
        push!(
            epochs,
            batch_size,
            base_lr,
            warmup_epochs,
            final_lr,
            weight_decay,
            optimizer,
            momentum,
            adam_beta1,
            adam_beta2,
            adam_eps,
            variant,
            lambda,
            beta,
            seed_model,
            seed_data,
            seed_shuffle,
            m,
            dm,
            encoder_hidden,
            projector_hidden,
            aug_noise,
            aug_dropout,
            aug_scale,
            checkpoint_every
        );
        out
    }
}

/// Built-in defaults, then the config file, then flags.
fn resolve_config(file: Option<&Path>, flags: &ConfigFlags) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = file {
        let kv = Manifest::load(path)?;
        config
            .apply_manifest(&kv)
            .with_context(|| format!("config file {}", path.display()))?;
    }
    for (k, v) in flags.pairs() {
        config.set(k, &v)?;
    }
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints, metrics and manifests.
    #[arg(long)]
    out: PathBuf,
    /// synthetic | csv:<train>[,<test>] | idx:<images>,<labels>[,<test images>,<test labels>]
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    /// Resume from a checkpoint directory written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
    #[command(flatten)]
    world: WorldArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model checkpoint file, or a run directory containing model.ckpt.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset; defaults to the synthetic world the model was trained on.
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    /// Synthetic world seed; defaults to the seed recorded with the model.
    #[arg(long)]
    seed_data: Option<u64>,
    /// Neighbours for eval-knn.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Label attribute to classify.
    #[arg(long, default_value_t = 0)]
    attribute: usize,
    /// Also report the same evaluation on raw inputs.
    #[arg(long)]
    raw_baseline: bool,
    /// Output directory (required for export-joint, optional elsewhere).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-sample embeddings in export-joint.
    #[arg(long)]
    embeddings: bool,
    /// Seed of the paired augmentations in verify.
    #[arg(long, default_value_t = 0)]
    verify_seed: u64,
    #[command(flatten)]
    world: WorldArgs,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 4)]
    dm: usize,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value = "full", value_parser = ["de-oe", "oe-ti", "de-oe-tic", "full"])]
    variant: String,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

fn load_data(spec: &str, world: &WorldArgs, seed: u64) -> Result<(Dataset, Dataset)> {
    let source: DatasetSource = spec.parse()?;
    Ok(source.load(&world.spec(seed)?)?)
}

fn checkpoint_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MODEL_FILE)
    } else {
        path.to_path_buf()
    }
}

fn write_manifest(dir: &Path, command: &str, mut m: Manifest) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    m.set("command", command).set("version", VERSION);
    m.save(&dir.join(format!("{command}.manifest")))?;
    Ok(())
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let spec = args.world.spec(args.seed_data)?;
    let world = imsvd::data::generate_world(&spec)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_csv(&world.train, &args.out.join("train.csv"))?;
    write_csv(&world.test, &args.out.join("test.csv"))?;
    let mut m = Manifest::new();
    args.world.record(&mut m, args.seed_data);
    write_manifest(&args.out, "gen-data", m)?;
    println!(
        "{}",
        json!({"train": args.out.join("train.csv"), "test": args.out.join("test.csv"),
               "train_size": world.train.len(), "test_size": world.test.len()})
    );
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let config = resolve_config(args.config.as_deref(), &args.flags)?;
    let (train, _) = load_data(&args.dataset, &args.world, config.seed_data)?;
    let result = fit(
        &config,
        &train,
        &FitOptions {
            out_dir: Some(args.out.clone()),
            resume: args.resume.clone(),
        },
    )?;
    let mut m = config.to_manifest();
    m.set("dataset", &args.dataset);
    args.world.record(&mut m, config.seed_data);
    write_manifest(&args.out, "train", m)?;
    let last = result.metrics.last();
    println!(
        "{}",
        json!({"out": args.out, "epochs": result.metrics.len(),
               "final_loss": last.map(|l| l.loss.total),
               "final_onehot_frac_090": last.map(|l| l.onehot_frac_090)})
    );
    Ok(())
}

struct Loaded {
    params: ModelParams,
    train: Dataset,
    test: Dataset,
}

fn load_for_eval(args: &EvalArgs) -> Result<Loaded> {
    let (params, manifest) = load_model(&checkpoint_file(&args.checkpoint))?;
    let seed = match args.seed_data {
        Some(s) => s,
        None => manifest
            .get("seed_data")
            .map(str::parse)
            .transpose()?
            .unwrap_or(0),
    };
    let (train, test) = load_data(&args.dataset, &args.world, seed)?;
    if train.dim() != params.arch().input_dim() {
        bail!(ImsvdError::contract(format!(
            "dataset has {} features but the model expects {}",
            train.dim(),
            params.arch().input_dim()
        )));
    }
    Ok(Loaded {
        params,
        train,
        test,
    })
}

fn eval_manifest(args: &EvalArgs) -> Manifest {
    let mut m = Manifest::new();
    m.set("checkpoint", args.checkpoint.display())
        .set("dataset", &args.dataset)
        .set("k", args.k)
        .set("attribute", args.attribute);
    m
}

fn attribute(d: &Dataset, a: usize) -> Result<Vec<usize>> {
    if d.labels.first().is_some_and(|l| a >= l.len()) {
        bail!(ImsvdError::contract(format!(
            "dataset has no attribute {a}"
        )));
    }
    Ok(d.attribute(a))
}

fn emit(args: &EvalArgs, command: &str, value: serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&value)?;
    println!("{text}");
    if let Some(out) = &args.out {
        write_manifest(out, command, eval_manifest(args))?;
        let path = out.join(format!("{command}.json"));
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn eval_knn(args: &EvalArgs) -> Result<()> {
    let l = load_for_eval(args)?;
    let (ytr, yte) = (
        attribute(&l.train, args.attribute)?,
        attribute(&l.test, args.attribute)?,
    );
    let htr = embeddings(&l.params, &l.train.x)?;
    let hte = embeddings(&l.params, &l.test.x)?;
    let acc = knn_eval(&htr, &ytr, &hte, &yte, args.k)?;
    let raw = if args.raw_baseline {
        Some(knn_eval(&l.train.x, &ytr, &l.test.x, &yte, args.k)?)
    } else {
        None
    };
    emit(
        args,
        "eval-knn",
        json!({"k": args.k, "attribute": args.attribute, "accuracy": acc, "raw_accuracy": raw}),
    )
}

fn eval_probe(args: &EvalArgs) -> Result<()> {
    let l = load_for_eval(args)?;
    let (ytr, yte) = (
        attribute(&l.train, args.attribute)?,
        attribute(&l.test, args.attribute)?,
    );
    let cfg = ProbeConfig::default();
    let htr = embeddings(&l.params, &l.train.x)?;
    let hte = embeddings(&l.params, &l.test.x)?;
    let acc = linear_probe(&htr, &ytr, &hte, &yte, &cfg)?;
    let raw = if args.raw_baseline {
        Some(linear_probe(&l.train.x, &ytr, &l.test.x, &yte, &cfg)?)
    } else {
        None
    };
    emit(
        args,
        "eval-probe",
        json!({"attribute": args.attribute, "accuracy": acc, "raw_accuracy": raw}),
    )
}

fn verify(args: &EvalArgs) -> Result<()> {
    let l = load_for_eval(args)?;
    let opts = VerifyOptions {
        seed: args.verify_seed,
        ..VerifyOptions::default()
    };
    let report = theorem_verify(&l.params, &l.test.x, &opts)?;
    let collisions = code_distinctness(&l.params, &l.test.x, &l.test.labels)?;
    let mut value = serde_json::to_value(report)?;
    value["code_collision_fraction"] = json!(collisions);
    emit(args, "verify", value)
}

fn export(args: &EvalArgs) -> Result<()> {
    let Some(out) = &args.out else {
        bail!(ImsvdError::contract("export-joint needs --out"));
    };
    let l = load_for_eval(args)?;
    let files = export_joint(&l.params, &l.test.x, out, args.embeddings)?;
    write_manifest(out, "export-joint", eval_manifest(args))?;
    println!(
        "{}",
        json!({"joint": files.joint, "marginals": files.marginals, "embeddings": files.embeddings})
    );
    Ok(())
}

/// Returns whether the check passed.
fn gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let variant: LossVariant = args.variant.parse()?;
    let case = GradCheckCase {
        m: args.m,
        dm: args.dm,
        n: args.n,
        variant,
        seed: args.seed,
    };
    let r = loss_grad_check(&case, args.h)?;
    let pass = r.max_rel_error < args.tol;
    println!(
        "{}",
        json!({"max_rel_error": r.max_rel_error, "worst_param": r.worst.0, "worst_entry": r.worst.1,
               "analytic": r.analytic, "numeric": r.numeric, "entries": r.entries_checked, "pass": pass})
    );
    Ok(pass)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::GenData(a) => gen_data(a)?,
        Command::Train(a) => train(a)?,
        Command::EvalKnn(a) => eval_knn(a)?,
        Command::EvalProbe(a) => eval_probe(a)?,
        Command::Verify(a) => verify(a)?,
        Command::ExportJoint(a) => export(a)?,
        Command::Gradcheck(a) => return gradcheck(a),
    }
    Ok(true)
}

/// Exit code: 0 on success, 1 on failures, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    imsvd::tensor::init_threads_from_env();
    match dispatch(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
