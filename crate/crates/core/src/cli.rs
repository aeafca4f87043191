//! The `semcert` command line: data generation, training, certification,
//! attacks, and the gamma/alpha sweep experiments.
//!
//! Every run takes one `--seed`; components derive their own streams from it
//! via tagged sub-seeds (`init`, `train-noise`, `shuffle`, `certify`,
//! `attack`), so a full pipeline repeats bit-identically from the single
//! knob. A `--config path` file in `key=value` lines supplies defaults for
//! any long flag; explicit flags win.
//!
//! Each artifact-producing run writes exactly one `manifest.json` into its
//! output directory (command, resolved config, seeds, paths, tool version,
//! wall-clock duration). Reports themselves contain no timestamps, so reruns
//! with the same seed are byte-identical; the manifest's duration field is
//! the one exception and is excluded from reproducibility comparisons.
//! On error, partially written outputs are removed.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::attacks::{self, AttackMethod, AttackSettings};
use crate::certifier::{self, CertifyParams};
use crate::corpus::{self, Dataset, LoadedCorpus, SyntheticSpec, TokenizedExample};
use crate::net::{load_checkpoint, save_checkpoint, ArchConfig, Model};
use crate::rng::sub_seed;
use crate::trainer::{self, TrainConfig, TRAINING_LOG_HEADER};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config file {path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
    #[error(transparent)]
    Trainer(#[from] trainer::TrainerError),
    #[error(transparent)]
    Certify(#[from] certifier::CertifyError),
    #[error(transparent)]
    Attack(#[from] attacks::AttackError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Parser, Debug)]
#[command(
    name = "semcert",
    version,
    about = "Train, smooth and certify small text classifiers against word substitutions"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus (embeddings, substitution table, splits)
    GenData(GenDataArgs),
    /// Train a model on a data directory
    Train(TrainArgs),
    /// Certify a checkpoint over a dataset split
    Certify(CertifyArgs),
    /// Run an empirical attack against a checkpoint
    Attack(AttackArgs),
    /// Train across a gamma grid and certify each model
    Tradeoff(TradeoffArgs),
    /// Certify one checkpoint under several (t2, alpha) pairs
    AlphaSweep(AlphaSweepArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Single seed; all randomness derives from it
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-example parallelism (0 = all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// key=value file supplying defaults for long flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Validate configuration and print the resolved plan without writing
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    cluster_size: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    /// Content signal strength in [0, 1]
    #[arg(long)]
    signal: Option<f64>,
    /// Base embedding scale (smaller = harder certification task)
    #[arg(long)]
    embedding_scale: Option<f64>,
    /// Style-label correlation rho in [0, 1]
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    train_examples: Option<usize>,
    #[arg(long)]
    test_examples: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Data directory produced by gen-data
    #[arg(long)]
    data: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    noise_samples: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    phase1_epochs: Option<usize>,
    /// Phase-2 (full objective) epochs
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    conv_channels: Option<usize>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Dataset split: train, test or intervened
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    /// Selection draws (t1)
    #[arg(long)]
    t1: Option<u64>,
    /// Estimation draws (t2)
    #[arg(long)]
    t2: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Certify only the first N examples
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    /// greedy, exhaustive or editing
    #[arg(long, default_value = "greedy")]
    method: String,
    #[arg(long)]
    max_passes: Option<usize>,
    /// Exhaustive-oracle neighborhood cap
    #[arg(long)]
    cap: Option<u64>,
    #[arg(long)]
    edit_budget: Option<usize>,
    /// Noise draws per smoothed attacker query
    #[arg(long)]
    draws: Option<u64>,
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct TradeoffArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated gamma grid, e.g. 0.25,1,2,4
    #[arg(long)]
    gammas: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    phase1_epochs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    t1: Option<u64>,
    #[arg(long)]
    t2: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct AlphaSweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated t2:alpha pairs, e.g. 2000:0.001,300:0.05
    #[arg(long)]
    pairs: Option<String>,
}

/// Entry point used by the binary.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        // help and version render through clap's error path but are not errors
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Certify(a) => certify_cmd(a),
        Command::Attack(a) => attack_cmd(a),
        Command::Tradeoff(a) => tradeoff_cmd(a),
        Command::AlphaSweep(a) => alpha_sweep_cmd(a),
    }
}

// ---------------------------------------------------------------------------
// Config file and flag resolution.
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Clone)]
struct ConfigFile {
    values: HashMap<String, String>,
    path: String,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)?;
        let mut values = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: "expected key=value".into(),
                });
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { values, path: path.display().to_string() })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| CliError::Config {
                path: self.path.clone(),
                line: 0,
                message: format!("bad value for {key}: {e}"),
            }),
        }
    }
}

/// flag > config file > default.
fn resolve<T: std::str::FromStr + Copy>(
    flag: Option<T>,
    cfg: &ConfigFile,
    key: &str,
    default: T,
) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    Ok(flag.or(cfg.get(key)?).unwrap_or(default))
}

// ---------------------------------------------------------------------------
// Output directory with cleanup-on-error and a single manifest.
// ---------------------------------------------------------------------------

struct OutputDir {
    dir: PathBuf,
    created: Vec<PathBuf>,
    committed: bool,
    started: Instant,
}

impl OutputDir {
    fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), created: Vec::new(), committed: false, started: Instant::now() })
    }

    /// Registers an output path for cleanup-on-error.
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.created.push(p.clone());
        p
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        std::fs::write(&p, contents)?;
        Ok(p)
    }

    /// Writes the manifest and disarms cleanup.
    fn commit(
        mut self,
        command: &str,
        seed: u64,
        config: serde_json::Value,
        inputs: &[&Path],
    ) -> Result<(), CliError> {
        let manifest = serde_json::json!({
            "command": command,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": config,
            "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "outputs": self
                .created
                .iter()
                .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
                .collect::<Vec<_>>(),
            "duration_seconds": self.started.elapsed().as_secs_f64(),
        });
        std::fs::write(
            self.dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.created {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Shared loading helpers.
// ---------------------------------------------------------------------------

fn load_split(
    data_dir: &Path,
    split: &str,
    corpus: &LoadedCorpus,
) -> Result<Vec<TokenizedExample>, CliError> {
    let file = match split {
        "train" => corpus::TRAIN_FILE,
        "test" => corpus::TEST_FILE,
        "intervened" => corpus::INTERVENED_FILE,
        other => {
            return Err(CliError::Usage(format!(
                "unknown split {other:?} (expected train, test or intervened)"
            )))
        }
    };
    let dataset = Dataset::load(&data_dir.join(file))?;
    Ok(dataset.tokenize(&corpus.embeddings.vocab)?)
}

fn check_labels(examples: &[TokenizedExample], classes: usize) -> Result<(), CliError> {
    for ex in examples {
        if ex.label >= classes {
            return Err(CliError::Usage(format!(
                "example {} has label {} but the model has {} classes",
                ex.id, ex.label, classes
            )));
        }
    }
    Ok(())
}

fn parse_gammas(raw: &str) -> Result<Vec<f64>, CliError> {
    let gammas: Result<Vec<f64>, _> = raw.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let gammas = gammas.map_err(|e| CliError::Usage(format!("bad --gammas: {e}")))?;
    if gammas.is_empty() {
        return Err(CliError::Usage("--gammas must list at least one value".into()));
    }
    Ok(gammas)
}

fn parse_pairs(raw: &str) -> Result<Vec<(u64, f64)>, CliError> {
    raw.split(',')
        .map(|item| {
            let (t2, alpha) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("bad pair {item:?}, expected t2:alpha")))?;
            let t2 = t2.parse::<u64>().map_err(|e| CliError::Usage(format!("bad t2 in {item:?}: {e}")))?;
            let alpha = alpha
                .parse::<f64>()
                .map_err(|e| CliError::Usage(format!("bad alpha in {item:?}: {e}")))?;
            Ok((t2, alpha))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        vocab_size: resolve(a.vocab_size, &cfg, "vocab_size", d.vocab_size)?,
        clusters: resolve(a.clusters, &cfg, "clusters", d.clusters)?,
        cluster_size: resolve(a.cluster_size, &cfg, "cluster_size", d.cluster_size)?,
        embedding_dim: resolve(a.embedding_dim, &cfg, "embedding_dim", d.embedding_dim)?,
        signal_strength: resolve(a.signal, &cfg, "signal", d.signal_strength)?,
        embedding_scale: resolve(a.embedding_scale, &cfg, "embedding_scale", d.embedding_scale)?,
        style_correlation: resolve(a.rho, &cfg, "rho", d.style_correlation)?,
        seq_len: resolve(a.seq_len, &cfg, "seq_len", d.seq_len)?,
        classes: resolve(a.classes, &cfg, "classes", d.classes)?,
        train_examples: resolve(a.train_examples, &cfg, "train_examples", d.train_examples)?,
        test_examples: resolve(a.test_examples, &cfg, "test_examples", d.test_examples)?,
        seed: resolve(a.common.seed, &cfg, "seed", d.seed)?,
    };
    let snapshot = serde_json::json!({
        "vocab_size": spec.vocab_size,
        "clusters": spec.clusters,
        "cluster_size": spec.cluster_size,
        "embedding_dim": spec.embedding_dim,
        "signal": spec.signal_strength,
        "embedding_scale": spec.embedding_scale,
        "rho": spec.style_correlation,
        "seq_len": spec.seq_len,
        "classes": spec.classes,
        "train_examples": spec.train_examples,
        "test_examples": spec.test_examples,
    });
    if a.common.dry_run {
        println!("gen-data (dry run): {snapshot}");
        return Ok(());
    }
    let data = corpus::generate_synthetic(&spec)?;
    let mut out = OutputDir::create(&a.out)?;
    for name in [
        corpus::EMBEDDINGS_FILE,
        corpus::TABLE_FILE,
        corpus::TRAIN_FILE,
        corpus::TEST_FILE,
        corpus::INTERVENED_FILE,
    ] {
        out.path(name);
    }
    data.write_dir(&a.out)?;
    println!(
        "gen-data: vocabulary {}, train {}, test {}, intervened {} -> {}",
        data.embeddings.vocab.len(),
        data.train.len(),
        data.test.len(),
        data.test_intervened.len(),
        a.out.display()
    );
    out.commit("gen-data", spec.seed, snapshot, &[])?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let d = TrainConfig::default();
    let seed = resolve(a.common.seed, &cfg, "seed", 42u64)?;
    let config = TrainConfig {
        sigma: resolve(a.sigma, &cfg, "sigma", d.sigma)?,
        gamma: resolve(a.gamma, &cfg, "gamma", d.gamma)?,
        margin: resolve(a.margin, &cfg, "margin", d.margin)?,
        noise_samples: resolve(a.noise_samples, &cfg, "noise_samples", d.noise_samples)?,
        adam: crate::net::AdamHyper {
            lr: resolve(a.lr, &cfg, "lr", d.adam.lr)?,
            ..d.adam.clone()
        },
        warmup_steps: resolve(a.warmup, &cfg, "warmup", d.warmup_steps)?,
        phase1_epochs: resolve(a.phase1_epochs, &cfg, "phase1_epochs", d.phase1_epochs)?,
        phase2_epochs: resolve(a.epochs, &cfg, "epochs", d.phase2_epochs)?,
        batch_size: resolve(a.batch_size, &cfg, "batch_size", d.batch_size)?,
        seed,
    };
    let da = ArchConfig::default();
    let mut arch = ArchConfig {
        conv_channels: resolve(a.conv_channels, &cfg, "conv_channels", da.conv_channels)?,
        kernel: resolve(a.kernel, &cfg, "kernel", da.kernel)?,
        latent_dim: resolve(a.latent_dim, &cfg, "latent_dim", da.latent_dim)?,
        hidden_dim: resolve(a.hidden_dim, &cfg, "hidden_dim", da.hidden_dim)?,
        classes: da.classes,
    };

    let corpus = LoadedCorpus::load(&a.data)?;
    let examples = load_split(&a.data, "train", &corpus)?;
    let classes = examples.iter().map(|e| e.label).max().map_or(2, |m| (m + 1).max(2));
    arch.classes = classes;

    let snapshot = serde_json::json!({
        "sigma": config.sigma,
        "gamma": config.gamma,
        "margin": config.margin,
        "noise_samples": config.noise_samples,
        "lr": config.adam.lr,
        "warmup": config.warmup_steps,
        "phase1_epochs": config.phase1_epochs,
        "epochs": config.phase2_epochs,
        "batch_size": config.batch_size,
        "conv_channels": arch.conv_channels,
        "kernel": arch.kernel,
        "latent_dim": arch.latent_dim,
        "hidden_dim": arch.hidden_dim,
        "classes": arch.classes,
        "upper_bound_regime": config.upper_bound_regime(),
    });
    if a.common.dry_run {
        println!("train (dry run): {snapshot}");
        return Ok(());
    }
    if config.upper_bound_regime() {
        eprintln!(
            "note: gamma * margin = {} >= 1; the objective upper-bounds the certification error",
            config.gamma * config.margin
        );
    } else {
        eprintln!(
            "note: gamma * margin = {} < 1; objective is not an upper bound on certification error",
            config.gamma * config.margin
        );
    }

    let subs = corpus.table.compile(&corpus.embeddings.vocab);
    let model = Model::init_text_classifier(
        corpus.embeddings.matrix.clone(),
        &arch,
        config.sigma,
        sub_seed(seed, "init"),
    )?;
    let output = trainer::train(model, &examples, &subs, &config)?;

    let mut out = OutputDir::create(&a.out)?;
    let ckpt = out.path("checkpoint.json");
    save_checkpoint(&output.model, &ckpt)?;
    let ckpt1 = out.path("checkpoint_phase1.json");
    save_checkpoint(&output.phase1_model, &ckpt1)?;
    let mut log = String::from(TRAINING_LOG_HEADER);
    log.push('\n');
    for e in &output.epochs {
        log.push_str(&e.csv_row());
        log.push('\n');
    }
    out.write("training_log.csv", &log)?;
    let last = output.epochs.last().expect("at least one epoch");
    println!(
        "train: {} epochs, final loss_cls {:.4}, loss_robust {:.4}, mean_r {:.3}, mean_r_hat {:.3}, hinge violations {}",
        output.epochs.len(),
        last.loss_cls,
        last.loss_robust,
        last.mean_r,
        last.mean_r_hat,
        output.hinge_violations
    );
    out.commit("train", seed, snapshot, &[&a.data])?;
    Ok(())
}

fn certify_cmd(a: CertifyArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let seed = resolve(a.common.seed, &cfg, "seed", 42u64)?;
    let jobs = resolve(a.common.jobs, &cfg, "jobs", 0usize)?;
    let params = CertifyParams {
        t1: resolve(a.t1, &cfg, "t1", 50u64)?,
        t2: resolve(a.t2, &cfg, "t2", 2000u64)?,
        alpha: resolve(a.alpha, &cfg, "alpha", 0.01f64)?,
        seed: sub_seed(seed, "certify"),
    };
    let snapshot = serde_json::json!({
        "checkpoint": a.checkpoint.display().to_string(),
        "split": a.split,
        "t1": params.t1,
        "t2": params.t2,
        "alpha": params.alpha,
        "jobs": jobs,
        "limit": a.limit,
    });
    if a.common.dry_run {
        println!("certify (dry run): {snapshot}");
        return Ok(());
    }
    let corpus = LoadedCorpus::load(&a.data)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let mut examples = load_split(&a.data, &a.split, &corpus)?;
    if let Some(limit) = a.limit {
        examples.truncate(limit);
    }
    check_labels(&examples, model.classes())?;
    let subs = corpus.table.compile(&corpus.embeddings.vocab);
    let report = certifier::certify_dataset(&model, &examples, &subs, &params, jobs)?;

    let mut out = OutputDir::create(&a.out)?;
    let jsonl = out.path("certification.jsonl");
    report.write_jsonl(&jsonl)?;
    let csv = out.path("summary.csv");
    report.write_summary_csv(&csv)?;
    println!(
        "certify: {} examples, certified accuracy {:.4}, clean accuracy {:.4}, abstention rate {:.4}",
        report.summary.examples,
        report.summary.certified_accuracy,
        report.summary.clean_accuracy,
        report.summary.abstention_rate
    );
    out.commit("certify", seed, snapshot, &[&a.checkpoint, &a.data])?;
    Ok(())
}

fn attack_cmd(a: AttackArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let seed = resolve(a.common.seed, &cfg, "seed", 42u64)?;
    let jobs = resolve(a.common.jobs, &cfg, "jobs", 0usize)?;
    let settings = AttackSettings {
        vote_draws: resolve(a.draws, &cfg, "draws", 32u64)?,
        seed: sub_seed(seed, "attack"),
    };
    let method = match a.method.as_str() {
        "greedy" => AttackMethod::Greedy {
            max_passes: resolve(a.max_passes, &cfg, "max_passes", 3usize)?,
        },
        "exhaustive" => AttackMethod::Exhaustive { cap: resolve(a.cap, &cfg, "cap", 4096u64)? },
        "editing" => AttackMethod::Editing {
            edit_budget: resolve(a.edit_budget, &cfg, "edit_budget", 10usize)?,
        },
        other => {
            return Err(CliError::Usage(format!(
                "unknown attack method {other:?} (expected greedy, exhaustive or editing)"
            )))
        }
    };
    let snapshot = serde_json::json!({
        "checkpoint": a.checkpoint.display().to_string(),
        "split": a.split,
        "method": method.name(),
        "draws": settings.vote_draws,
        "jobs": jobs,
        "limit": a.limit,
    });
    if a.common.dry_run {
        println!("attack (dry run): {snapshot}");
        return Ok(());
    }
    let corpus = LoadedCorpus::load(&a.data)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let mut examples = load_split(&a.data, &a.split, &corpus)?;
    if let Some(limit) = a.limit {
        examples.truncate(limit);
    }
    check_labels(&examples, model.classes())?;
    let subs = corpus.table.compile(&corpus.embeddings.vocab);
    let report = attacks::run_attack(&model, &examples, &subs, method, &settings, jobs)?;

    let mut out = OutputDir::create(&a.out)?;
    let jsonl = out.path("attack.jsonl");
    std::fs::write(&jsonl, report.to_jsonl(&corpus.embeddings.vocab))?;
    println!(
        "attack ({}): {} examples, {} successes, empirical robust accuracy {:.4}",
        report.summary.method,
        report.summary.examples,
        report.summary.successes,
        report.summary.empirical_robust_accuracy
    );
    out.commit("attack", seed, snapshot, &[&a.checkpoint, &a.data])?;
    Ok(())
}

fn tradeoff_cmd(a: TradeoffArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let d = TrainConfig::default();
    let seed = resolve(a.common.seed, &cfg, "seed", 42u64)?;
    let jobs = resolve(a.common.jobs, &cfg, "jobs", 0usize)?;
    let gammas_raw = a
        .gammas
        .clone()
        .or(cfg.get::<String>("gammas").ok().flatten())
        .unwrap_or_else(|| "0.25,1,2,4".to_string());
    let gammas = parse_gammas(&gammas_raw)?;
    let base = TrainConfig {
        sigma: resolve(a.sigma, &cfg, "sigma", d.sigma)?,
        margin: resolve(a.margin, &cfg, "margin", d.margin)?,
        adam: crate::net::AdamHyper { lr: resolve(a.lr, &cfg, "lr", d.adam.lr)?, ..d.adam.clone() },
        warmup_steps: resolve(a.warmup, &cfg, "warmup", d.warmup_steps)?,
        phase1_epochs: resolve(a.phase1_epochs, &cfg, "phase1_epochs", d.phase1_epochs)?,
        phase2_epochs: resolve(a.epochs, &cfg, "epochs", d.phase2_epochs)?,
        batch_size: resolve(a.batch_size, &cfg, "batch_size", d.batch_size)?,
        seed,
        ..d
    };
    let params = CertifyParams {
        t1: resolve(a.t1, &cfg, "t1", 50u64)?,
        t2: resolve(a.t2, &cfg, "t2", 1000u64)?,
        alpha: resolve(a.alpha, &cfg, "alpha", 0.01f64)?,
        seed: sub_seed(seed, "certify"),
    };
    let snapshot = serde_json::json!({
        "gammas": gammas,
        "sigma": base.sigma,
        "margin": base.margin,
        "t1": params.t1,
        "t2": params.t2,
        "alpha": params.alpha,
    });
    if a.common.dry_run {
        println!("tradeoff (dry run): {snapshot}");
        return Ok(());
    }
    let corpus = LoadedCorpus::load(&a.data)?;
    let train_set = load_split(&a.data, "train", &corpus)?;
    let test_set = load_split(&a.data, "test", &corpus)?;
    let subs = corpus.table.compile(&corpus.embeddings.vocab);
    let classes = train_set.iter().map(|e| e.label).max().map_or(2, |m| (m + 1).max(2));
    let arch = ArchConfig { classes, ..ArchConfig::default() };

    let mut out = OutputDir::create(&a.out)?;
    let mut rows = String::from("gamma,clean_accuracy,certified_accuracy,abstention_rate\n");
    for &gamma in &gammas {
        let config = TrainConfig { gamma, ..base.clone() };
        let model = Model::init_text_classifier(
            corpus.embeddings.matrix.clone(),
            &arch,
            config.sigma,
            sub_seed(seed, "init"),
        )?;
        let trained = trainer::train(model, &train_set, &subs, &config)?;
        let report = certifier::certify_dataset(&trained.model, &test_set, &subs, &params, jobs)?;
        let ckpt = out.path(&format!("checkpoint_gamma_{gamma}.json"));
        save_checkpoint(&trained.model, &ckpt)?;
        rows.push_str(&format!(
            "{},{},{},{}\n",
            gamma,
            report.summary.clean_accuracy,
            report.summary.certified_accuracy,
            report.summary.abstention_rate
        ));
        println!(
            "tradeoff gamma={gamma}: clean {:.4}, certified {:.4}",
            report.summary.clean_accuracy, report.summary.certified_accuracy
        );
    }
    out.write("tradeoff.csv", &rows)?;
    out.commit("tradeoff", seed, snapshot, &[&a.data])?;
    Ok(())
}

fn alpha_sweep_cmd(a: AlphaSweepArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let seed = resolve(a.common.seed, &cfg, "seed", 42u64)?;
    let jobs = resolve(a.common.jobs, &cfg, "jobs", 0usize)?;
    let pairs_raw = a
        .pairs
        .clone()
        .or(cfg.get::<String>("pairs").ok().flatten())
        .unwrap_or_else(|| "2000:0.001,300:0.05".to_string());
    let pairs = parse_pairs(&pairs_raw)?;
    let snapshot = serde_json::json!({
        "checkpoint": a.checkpoint.display().to_string(),
        "split": a.split,
        "pairs": pairs.iter().map(|(t2, al)| format!("{t2}:{al}")).collect::<Vec<_>>(),
    });
    if a.common.dry_run {
        println!("alpha-sweep (dry run): {snapshot}");
        return Ok(());
    }
    let corpus = LoadedCorpus::load(&a.data)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let examples = load_split(&a.data, &a.split, &corpus)?;
    check_labels(&examples, model.classes())?;
    let subs = corpus.table.compile(&corpus.embeddings.vocab);

    let mut out = OutputDir::create(&a.out)?;
    let mut rows = String::from("t2,alpha,certified_accuracy,clean_accuracy,abstention_rate\n");
    for &(t2, alpha) in &pairs {
        let params = CertifyParams { t1: 50, t2, alpha, seed: sub_seed(seed, "certify") };
        let report = certifier::certify_dataset(&model, &examples, &subs, &params, jobs)?;
        rows.push_str(&format!(
            "{},{},{},{},{}\n",
            t2,
            alpha,
            report.summary.certified_accuracy,
            report.summary.clean_accuracy,
            report.summary.abstention_rate
        ));
        println!(
            "alpha-sweep t2={t2} alpha={alpha}: certified {:.4}, clean {:.4}",
            report.summary.certified_accuracy, report.summary.clean_accuracy
        );
    }
    out.write("alpha_sweep.csv", &rows)?;
    out.commit("alpha-sweep", seed, snapshot, &[&a.checkpoint, &a.data])?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parses_and_flags_win() {
        let dir = std::env::temp_dir().join("semcert-cli-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.conf");
        std::fs::write(&path, "# comment\nseed = 7\nt2=123\n").unwrap();
        let cfg = ConfigFile::load(Some(&path)).unwrap();
        assert_eq!(resolve(None, &cfg, "seed", 0u64).unwrap(), 7);
        assert_eq!(resolve(Some(9u64), &cfg, "seed", 0u64).unwrap(), 9);
        assert_eq!(resolve(None, &cfg, "t2", 0u64).unwrap(), 123);
        assert_eq!(resolve(None, &cfg, "absent", 5u64).unwrap(), 5);
    }

    #[test]
    fn malformed_config_line_is_reported() {
        let dir = std::env::temp_dir().join("semcert-cli-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.conf");
        std::fs::write(&path, "seed\n").unwrap();
        assert!(matches!(
            ConfigFile::load(Some(&path)),
            Err(CliError::Config { line: 1, .. })
        ));
    }

    #[test]
    fn gamma_and_pair_lists_parse() {
        assert_eq!(parse_gammas("0.25, 1,4").unwrap(), vec![0.25, 1.0, 4.0]);
        assert!(parse_gammas("x").is_err());
        assert_eq!(parse_pairs("2000:0.001, 300:0.05").unwrap(), vec![(2000, 0.001), (300, 0.05)]);
        assert!(parse_pairs("2000").is_err());
    }

    #[test]
    fn unknown_split_is_a_usage_error() {
        let spec = crate::corpus::SyntheticSpec {
            train_examples: 5,
            test_examples: 5,
            ..Default::default()
        };
        let data = crate::corpus::generate_synthetic(&spec).unwrap();
        let dir = std::env::temp_dir().join("semcert-cli-tests/split");
        data.write_dir(&dir).unwrap();
        let corpus = LoadedCorpus::load(&dir).unwrap();
        assert!(matches!(
            load_split(&dir, "validation", &corpus),
            Err(CliError::Usage(_))
        ));
        assert_eq!(load_split(&dir, "test", &corpus).unwrap().len(), 5);
    }
}
