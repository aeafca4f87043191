//! Python bindings: the statistics primitives, smoothing radii, model
//! loading/execution, and the synthetic-data -> train -> certify -> attack
//! pipeline, mirroring the CLI's file layout.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use semcert_core::attacks::{self, AttackMethod, AttackSettings};
use semcert_core::certifier::{self, CertifyParams};
use semcert_core::corpus::{self, Dataset, LoadedCorpus, SyntheticSpec, TokenizedExample};
use semcert_core::net::{self, ArchConfig};
use semcert_core::rng::sub_seed;
use semcert_core::smoothing::{self, NoiseSpec};
use semcert_core::stats::{self, Probability};
use semcert_core::trainer::{self, TrainConfig, TRAINING_LOG_HEADER};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn probability(v: f64) -> PyResult<Probability> {
    Probability::new(v).map_err(value_err)
}

/// Standard normal cumulative distribution function.
#[pyfunction]
fn normal_cdf(x: f64) -> PyResult<f64> {
    Ok(stats::std_normal_cdf(x).map_err(value_err)?.value())
}

/// Standard normal quantile; `p` must lie strictly inside (0, 1).
#[pyfunction]
fn normal_quantile(p: f64) -> PyResult<f64> {
    stats::std_normal_quantile(probability(p)?).map_err(value_err)
}

/// Exact two-sided binomial test of `successes ~ Binomial(trials, p0)`.
#[pyfunction]
fn pvalue_binom(successes: u64, trials: u64, p0: f64) -> PyResult<f64> {
    Ok(stats::pvalue_binom(successes, trials, probability(p0)?)
        .map_err(value_err)?
        .value())
}

/// Clopper-Pearson one-sided lower confidence bound.
#[pyfunction]
fn lower_conf_bound(successes: u64, trials: u64, confidence: f64) -> PyResult<f64> {
    Ok(stats::lower_conf_bound(successes, trials, probability(confidence)?)
        .map_err(value_err)?
        .value())
}

/// Soft smoothed-classifier radius `sigma/2 (q(p_top) - q(p_runner))`.
#[pyfunction]
fn soft_radius(p_top: f64, p_runner: f64, sigma: f64) -> PyResult<f64> {
    smoothing::soft_radius(probability(p_top)?, probability(p_runner)?, sigma).map_err(value_err)
}

/// Hard certified radius `sigma * q(p_a_lower)`, or None when the
/// certificate is void (`p_a_lower <= 1/2`).
#[pyfunction]
fn hard_radius(p_a_lower: f64, sigma: f64) -> PyResult<Option<f64>> {
    Ok(smoothing::hard_radius(probability(p_a_lower)?, sigma))
}

/// The `draw_index`-th Gaussian noise vector of the `(sigma, dim, seed)`
/// stream; identical arguments always yield the identical vector.
#[pyfunction]
fn sample_noise(sigma: f64, dim: usize, seed: u64, draw_index: u64) -> PyResult<Vec<f64>> {
    let spec = NoiseSpec::new(sigma, dim, seed).map_err(value_err)?;
    Ok(smoothing::sample_noise(&spec, draw_index).data().to_vec())
}

/// A trained encoder + classifier checkpoint.
#[pyclass]
struct Model {
    inner: net::Model,
}

#[pymethods]
impl Model {
    /// Loads a checkpoint file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: net::load_checkpoint(&path).map_err(runtime_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        net::save_checkpoint(&self.inner, &path).map_err(runtime_err)
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    /// Latent vector `s(x)` for a token-id sequence.
    fn encode(&self, tokens: Vec<usize>) -> PyResult<Vec<f64>> {
        self.inner.encode_tokens(&tokens).map_err(value_err)
    }

    /// Class probabilities of the base classifier on a latent vector.
    fn class_probs(&self, latent: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.class_probs_from_latent(&latent).map_err(value_err)
    }

    /// Monte-Carlo smoothed prediction with abstention: returns the class or
    /// None at confidence `1 - alpha`.
    #[pyo3(signature = (tokens, t=1000, alpha=0.01, seed=0))]
    fn predict(&self, tokens: Vec<usize>, t: u64, alpha: f64, seed: u64) -> PyResult<Option<usize>> {
        let spec = NoiseSpec::for_model(&self.inner, seed);
        let input = net::Tensor::from_token_ids(&tokens);
        certifier::predict(&self.inner, &input, &spec, t, alpha).map_err(value_err)
    }
}

/// Generates the synthetic corpus into `out_dir` (same files as the CLI's
/// `gen-data`).
#[pyfunction]
#[pyo3(signature = (
    out_dir, seed=42, vocab_size=64, clusters=8, cluster_size=3, embedding_dim=12,
    signal=0.95, embedding_scale=1.0, rho=0.8, seq_len=8, classes=2,
    train_examples=1500, test_examples=600,
))]
#[allow(clippy::too_many_arguments)]
fn generate_data(
    out_dir: PathBuf,
    seed: u64,
    vocab_size: usize,
    clusters: usize,
    cluster_size: usize,
    embedding_dim: usize,
    signal: f64,
    embedding_scale: f64,
    rho: f64,
    seq_len: usize,
    classes: usize,
    train_examples: usize,
    test_examples: usize,
) -> PyResult<()> {
    let spec = SyntheticSpec {
        vocab_size,
        clusters,
        cluster_size,
        embedding_dim,
        signal_strength: signal,
        embedding_scale,
        style_correlation: rho,
        seq_len,
        classes,
        train_examples,
        test_examples,
        seed,
    };
    let data = corpus::generate_synthetic(&spec).map_err(value_err)?;
    data.write_dir(&out_dir).map_err(runtime_err)?;
    Ok(())
}

fn load_examples(data_dir: &Path, split: &str, corpus: &LoadedCorpus) -> PyResult<Vec<TokenizedExample>> {
    let file = match split {
        "train" => corpus::TRAIN_FILE,
        "test" => corpus::TEST_FILE,
        "intervened" => corpus::INTERVENED_FILE,
        other => return Err(value_err(format!("unknown split {other:?}"))),
    };
    let dataset = Dataset::load(&data_dir.join(file)).map_err(runtime_err)?;
    dataset.tokenize(&corpus.embeddings.vocab).map_err(value_err)
}

/// Trains a model on a data directory; writes `checkpoint.json`,
/// `checkpoint_phase1.json` and `training_log.csv` into `out_dir` and returns
/// a summary dict.
#[pyfunction]
#[pyo3(signature = (
    data_dir, out_dir, seed=42, sigma=1.0, gamma=4.0, margin=1.0, noise_samples=1,
    lr=0.01, warmup=120, phase1_epochs=5, epochs=10, batch_size=32,
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    data_dir: PathBuf,
    out_dir: PathBuf,
    seed: u64,
    sigma: f64,
    gamma: f64,
    margin: f64,
    noise_samples: usize,
    lr: f64,
    warmup: u64,
    phase1_epochs: usize,
    epochs: usize,
    batch_size: usize,
) -> PyResult<Py<PyDict>> {
    let corpus = LoadedCorpus::load(&data_dir).map_err(runtime_err)?;
    let examples = load_examples(&data_dir, "train", &corpus)?;
    let subs = corpus.table.compile(&corpus.embeddings.vocab);
    let classes = examples.iter().map(|e| e.label).max().map_or(2, |m| (m + 1).max(2));
    let config = TrainConfig {
        sigma,
        gamma,
        margin,
        noise_samples,
        adam: net::AdamHyper { lr, ..Default::default() },
        warmup_steps: warmup,
        phase1_epochs,
        phase2_epochs: epochs,
        batch_size,
        seed,
    };
    let model = net::Model::init_text_classifier(
        corpus.embeddings.matrix.clone(),
        &ArchConfig { classes, ..ArchConfig::default() },
        sigma,
        sub_seed(seed, "init"),
    )
    .map_err(value_err)?;
    let output = trainer::train(model, &examples, &subs, &config).map_err(runtime_err)?;

    std::fs::create_dir_all(&out_dir).map_err(runtime_err)?;
    let ckpt = out_dir.join("checkpoint.json");
    net::save_checkpoint(&output.model, &ckpt).map_err(runtime_err)?;
    net::save_checkpoint(&output.phase1_model, &out_dir.join("checkpoint_phase1.json"))
        .map_err(runtime_err)?;
    let mut log = String::from(TRAINING_LOG_HEADER);
    log.push('\n');
    for e in &output.epochs {
        log.push_str(&e.csv_row());
        log.push('\n');
    }
    std::fs::write(out_dir.join("training_log.csv"), log).map_err(runtime_err)?;

    let last = output.epochs.last().expect("at least one epoch");
    let dict = PyDict::new(py);
    dict.set_item("checkpoint", ckpt.display().to_string())?;
    dict.set_item("epochs", output.epochs.len())?;
    dict.set_item("loss_cls", last.loss_cls)?;
    dict.set_item("loss_robust", last.loss_robust)?;
    dict.set_item("mean_r", last.mean_r)?;
    dict.set_item("mean_r_hat", last.mean_r_hat)?;
    dict.set_item("hinge_violations", output.hinge_violations)?;
    dict.set_item("upper_bound_regime", output.upper_bound_regime)?;
    Ok(dict.into())
}

/// Certifies a checkpoint over a dataset split; returns the summary dict and
/// optionally writes the JSON-lines report + summary CSV into `out_dir`.
#[pyfunction]
#[pyo3(signature = (checkpoint, data_dir, split="test", t1=50, t2=2000, alpha=0.01, seed=42, jobs=0, out_dir=None, limit=None))]
#[allow(clippy::too_many_arguments)]
fn certify(
    py: Python<'_>,
    checkpoint: PathBuf,
    data_dir: PathBuf,
    split: &str,
    t1: u64,
    t2: u64,
    alpha: f64,
    seed: u64,
    jobs: usize,
    out_dir: Option<PathBuf>,
    limit: Option<usize>,
) -> PyResult<Py<PyDict>> {
    let corpus = LoadedCorpus::load(&data_dir).map_err(runtime_err)?;
    let model = net::load_checkpoint(&checkpoint).map_err(runtime_err)?;
    let mut examples = load_examples(&data_dir, split, &corpus)?;
    if let Some(limit) = limit {
        examples.truncate(limit);
    }
    let subs = corpus.table.compile(&corpus.embeddings.vocab);
    let params = CertifyParams { t1, t2, alpha, seed: sub_seed(seed, "certify") };
    let report = certifier::certify_dataset(&model, &examples, &subs, &params, jobs)
        .map_err(runtime_err)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir).map_err(runtime_err)?;
        report.write_jsonl(&dir.join("certification.jsonl")).map_err(runtime_err)?;
        report.write_summary_csv(&dir.join("summary.csv")).map_err(runtime_err)?;
    }
    let dict = PyDict::new(py);
    dict.set_item("examples", report.summary.examples)?;
    dict.set_item("certified_accuracy", report.summary.certified_accuracy)?;
    dict.set_item("clean_accuracy", report.summary.clean_accuracy)?;
    dict.set_item("abstention_rate", report.summary.abstention_rate)?;
    dict.set_item("alpha", report.summary.alpha)?;
    dict.set_item("t1", report.summary.t1)?;
    dict.set_item("t2", report.summary.t2)?;
    Ok(dict.into())
}

/// Runs an empirical attack (greedy, exhaustive or editing) and returns the
/// summary dict.
#[pyfunction]
#[pyo3(signature = (checkpoint, data_dir, split="test", method="greedy", seed=42, draws=32, max_passes=3, cap=4096, edit_budget=10, jobs=0, limit=None))]
#[allow(clippy::too_many_arguments)]
fn attack(
    py: Python<'_>,
    checkpoint: PathBuf,
    data_dir: PathBuf,
    split: &str,
    method: &str,
    seed: u64,
    draws: u64,
    max_passes: usize,
    cap: u64,
    edit_budget: usize,
    jobs: usize,
    limit: Option<usize>,
) -> PyResult<Py<PyDict>> {
    let corpus = LoadedCorpus::load(&data_dir).map_err(runtime_err)?;
    let model = net::load_checkpoint(&checkpoint).map_err(runtime_err)?;
    let mut examples = load_examples(&data_dir, split, &corpus)?;
    if let Some(limit) = limit {
        examples.truncate(limit);
    }
    let subs = corpus.table.compile(&corpus.embeddings.vocab);
    let method = match method {
        "greedy" => AttackMethod::Greedy { max_passes },
        "exhaustive" => AttackMethod::Exhaustive { cap },
        "editing" => AttackMethod::Editing { edit_budget },
        other => return Err(value_err(format!("unknown attack method {other:?}"))),
    };
    let settings = AttackSettings { vote_draws: draws, seed: sub_seed(seed, "attack") };
    let report = attacks::run_attack(&model, &examples, &subs, method, &settings, jobs)
        .map_err(runtime_err)?;
    let dict = PyDict::new(py);
    dict.set_item("method", report.summary.method)?;
    dict.set_item("examples", report.summary.examples)?;
    dict.set_item("successes", report.summary.successes)?;
    dict.set_item("skipped", report.summary.skipped)?;
    dict.set_item("empirical_robust_accuracy", report.summary.empirical_robust_accuracy)?;
    dict.set_item("total_queries", report.summary.total_queries)?;
    Ok(dict.into())
}

#[pymodule]
fn semcert(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(pvalue_binom, m)?)?;
    m.add_function(wrap_pyfunction!(lower_conf_bound, m)?)?;
    m.add_function(wrap_pyfunction!(soft_radius, m)?)?;
    m.add_function(wrap_pyfunction!(hard_radius, m)?)?;
    m.add_function(wrap_pyfunction!(sample_noise, m)?)?;
    m.add_function(wrap_pyfunction!(generate_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(attack, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
