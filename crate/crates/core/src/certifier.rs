//! Abstention-aware prediction and robustness certification.
//!
//! Prediction takes the top two hard-vote counts and returns the winner only
//! if an exact two-sided binomial test against 1/2 rejects at level `alpha`.
//!
//! Certification selects the candidate class on `t1` draws, re-estimates its
//! vote probability on `t2` fresh draws (the two batches use disjoint draw
//! indices by construction), lower-bounds it with a Clopper-Pearson bound
//! `p_a_lower` at confidence `1 - alpha`, and certifies when
//! `p_a_lower > 1/2` and the hard radius `sigma * quantile(p_a_lower)` covers
//! the interval-propagation bound `r_hat`. A record carries a prediction iff
//! `p_a_lower > 1/2`; certification additionally requires the radius check,
//! so a record can be predicted-but-uncertified.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{CorpusError, IdSubstitutionTable, TokenizedExample};
use crate::ibp::{self, IbpError};
use crate::net::{Model, NetError, Tensor};
use crate::smoothing::{self, NoiseSpec, SmoothingError, VoteCounts};
use crate::stats::{self, Probability, StatsError};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("model has no embedding-lookup encoder; token-level certification needs one")]
    NoEmbedding,
    #[error("example {id}: {source}")]
    Example { id: u64, source: Box<CertifyError> },
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Ibp(#[from] IbpError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Monte-Carlo budget and confidence level of one certification run.
#[derive(Debug, Clone, Copy)]
pub struct CertifyParams {
    /// Draws used to select the candidate class.
    pub t1: u64,
    /// Fresh draws used to estimate its vote probability.
    pub t2: u64,
    /// Per-example error budget; certificates hold with confidence `1 - alpha`.
    pub alpha: f64,
    /// Run seed; example `id` uses the noise stream seeded by `seed ^ id`.
    pub seed: u64,
}

impl CertifyParams {
    fn validate(&self) -> Result<(), CertifyError> {
        if self.t1 == 0 || self.t2 == 0 {
            return Err(CertifyError::BadParams("t1 and t2 must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CertifyError::BadParams(format!(
                "alpha must be strictly inside (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-example output of a certification run.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificationRecord {
    pub example_id: u64,
    /// Present iff `p_a_lower > 1/2`; absent records are abstentions.
    pub predicted: Option<usize>,
    pub p_a_lower: f64,
    /// Hard certified radius; 0 when the certificate is void.
    pub radius_r: f64,
    pub radius_r_hat: f64,
    pub certified: bool,
    pub alpha: f64,
    pub t1: u64,
    pub t2: u64,
    pub seed: u64,
}

impl CertificationRecord {
    pub fn abstained(&self) -> bool {
        self.predicted.is_none()
    }

    /// The record-level consistency conditions; emitted records always pass.
    pub fn invariants_hold(&self) -> bool {
        let cert_ok = !self.certified
            || (self.p_a_lower > 0.5 && self.radius_r >= self.radius_r_hat && !self.abstained());
        let abstain_ok = !self.abstained() || !self.certified;
        cert_ok && abstain_ok
    }

    /// The report line: `example_id, predicted, certified, p_a_lower, R, R_hat, seed`.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "example_id": self.example_id,
            "predicted": self.predicted,
            "certified": self.certified,
            "p_a_lower": self.p_a_lower,
            "R": self.radius_r,
            "R_hat": self.radius_r_hat,
            "seed": self.seed,
        })
        .to_string()
    }
}

/// Dataset-level tallies. Abstentions count as incorrect for both accuracy
/// figures; an empty dataset reports zero everywhere.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CertifySummary {
    pub examples: usize,
    pub certified_accuracy: f64,
    pub clean_accuracy: f64,
    pub abstention_rate: f64,
    pub alpha: f64,
    pub t1: u64,
    pub t2: u64,
    pub seed: u64,
}

impl CertifySummary {
    pub const CSV_HEADER: &'static str =
        "examples,certified_accuracy,clean_accuracy,abstention_rate,alpha,t1,t2,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.examples,
            self.certified_accuracy,
            self.clean_accuracy,
            self.abstention_rate,
            self.alpha,
            self.t1,
            self.t2,
            self.seed
        )
    }
}

/// Predicts from vote counts: the top class iff the exact two-sided test on
/// the top-two counts rejects `p = 1/2` at level `alpha`.
pub fn predict_from_votes(votes: &VoteCounts, alpha: f64) -> Result<Option<usize>, CertifyError> {
    let ((cls_a, cnt_a), (_, cnt_b)) = votes.top_two();
    let p = stats::pvalue_binom(cnt_a, cnt_a + cnt_b, Probability::HALF)?;
    Ok(if p.value() <= alpha { Some(cls_a) } else { None })
}

/// Monte-Carlo prediction with abstention; confidence of a returned label is
/// `1 - alpha`.
pub fn predict(
    model: &Model,
    input: &Tensor,
    spec: &NoiseSpec,
    t: u64,
    alpha: f64,
) -> Result<Option<usize>, CertifyError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CertifyError::BadParams(format!("alpha {alpha} outside (0, 1)")));
    }
    let votes = smoothing::hard_votes(model, input, spec, t)?;
    predict_from_votes(&votes, alpha)
}

/// The pure decision rule given the estimation-phase evidence.
///
/// Returns `(p_a_lower, predicted, radius_r, certified)`; monotone in alpha:
/// weakening the confidence requirement never turns a certified example into
/// an abstention.
pub fn decide(
    cnt_a: u64,
    t2: u64,
    alpha: f64,
    sigma: f64,
    r_hat: f64,
) -> Result<(f64, bool, f64, bool), CertifyError> {
    let confidence = Probability::new(1.0 - alpha)
        .map_err(|e| CertifyError::BadParams(e.to_string()))?;
    let p_lower = stats::lower_conf_bound(cnt_a, t2, confidence)?;
    match smoothing::hard_radius(p_lower, sigma) {
        Some(radius) => Ok((p_lower.value(), true, radius, radius >= r_hat)),
        None => Ok((p_lower.value(), false, 0.0, false)),
    }
}

/// Certifies one tokenized example.
pub fn certify(
    model: &Model,
    example: &TokenizedExample,
    subs: &IdSubstitutionTable,
    params: &CertifyParams,
) -> Result<CertificationRecord, CertifyError> {
    params.validate()?;
    let embedding = model.embedding().ok_or(CertifyError::NoEmbedding)?.clone();
    let example_seed = params.seed ^ example.id;
    let spec = NoiseSpec::for_model(model, example_seed);
    let input = Tensor::from_token_ids(&example.token_ids);

    // Selection and estimation use disjoint draw-index windows.
    let selection = smoothing::hard_votes_range(model, &input, &spec, 0..params.t1)?;
    let cls_a = selection.majority();
    let estimation =
        smoothing::hard_votes_range(model, &input, &spec, params.t1..params.t1 + params.t2)?;
    let cnt_a = estimation.count_for(cls_a);

    let latent = model.encode_plain(&input)?;
    let bounds = ibp::input_interval(&example.token_ids, subs, &embedding)?;
    let latent_bounds = ibp::propagate(model.encoder_post_embedding(), &bounds)?;
    let r_hat = ibp::r_hat(&latent, &latent_bounds)?;

    let (p_a_lower, has_prediction, radius_r, certified) =
        decide(cnt_a, params.t2, params.alpha, model.sigma, r_hat)?;

    let record = CertificationRecord {
        example_id: example.id,
        predicted: has_prediction.then_some(cls_a),
        p_a_lower,
        radius_r,
        radius_r_hat: r_hat,
        certified,
        alpha: params.alpha,
        t1: params.t1,
        t2: params.t2,
        seed: example_seed,
    };
    debug_assert!(record.invariants_hold());
    Ok(record)
}

/// Report of a dataset certification run.
#[derive(Debug, Clone)]
pub struct CertifyReport {
    pub records: Vec<CertificationRecord>,
    pub summary: CertifySummary,
}

impl CertifyReport {
    /// JSON-lines serialization: one record object per line, then the summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_json_line());
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.summary).expect("summary serializes"));
        out.push('\n');
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CertifyError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<(), CertifyError> {
        std::fs::write(
            path,
            format!("{}\n{}\n", CertifySummary::CSV_HEADER, self.summary.csv_row()),
        )?;
        Ok(())
    }
}

fn summarize(
    records: &[CertificationRecord],
    labels: &[usize],
    params: &CertifyParams,
) -> CertifySummary {
    let n = records.len();
    let mut certified_correct = 0usize;
    let mut clean_correct = 0usize;
    let mut abstained = 0usize;
    for (r, &label) in records.iter().zip(labels) {
        let correct = r.predicted == Some(label);
        if correct {
            clean_correct += 1;
        }
        if r.certified && correct {
            certified_correct += 1;
        }
        if r.abstained() {
            abstained += 1;
        }
    }
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    CertifySummary {
        examples: n,
        certified_accuracy: frac(certified_correct),
        clean_accuracy: frac(clean_correct),
        abstention_rate: frac(abstained),
        alpha: params.alpha,
        t1: params.t1,
        t2: params.t2,
        seed: params.seed,
    }
}

/// Certifies a whole dataset, optionally in parallel.
///
/// Records come back in dataset order and are bit-identical regardless of
/// `jobs` (each example owns the noise stream seeded by `seed ^ example_id`).
/// `jobs = 0` uses all available threads.
pub fn certify_dataset(
    model: &Model,
    dataset: &[TokenizedExample],
    subs: &IdSubstitutionTable,
    params: &CertifyParams,
    jobs: usize,
) -> Result<CertifyReport, CertifyError> {
    params.validate()?;
    let run = || -> Result<Vec<CertificationRecord>, CertifyError> {
        dataset
            .par_iter()
            .map(|ex| {
                certify(model, ex, subs, params).map_err(|e| CertifyError::Example {
                    id: ex.id,
                    source: Box::new(e),
                })
            })
            .collect()
    };
    let records = if jobs == 0 {
        run()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CertifyError::BadParams(format!("thread pool: {e}")))?;
        pool.install(run)?
    };
    let labels: Vec<usize> = dataset.iter().map(|ex| ex.label).collect();
    let summary = summarize(&records, &labels, params);
    Ok(CertifyReport { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticSpec};
    use crate::net::{ArchConfig, Layer};

    #[test]
    fn lopsided_votes_return_the_class() {
        let votes = VoteCounts::from_counts(vec![100, 0]);
        assert_eq!(predict_from_votes(&votes, 0.001).unwrap(), Some(0));
    }

    #[test]
    fn split_votes_abstain() {
        let votes = VoteCounts::from_counts(vec![5, 5]);
        assert_eq!(predict_from_votes(&votes, 0.5).unwrap(), None);
    }

    #[test]
    fn six_to_four_abstains_at_tight_alpha() {
        // exact two-sided p-value of 6/10 against 1/2 is ~0.754
        let votes = VoteCounts::from_counts(vec![4, 6]);
        assert_eq!(predict_from_votes(&votes, 0.001).unwrap(), None);
        assert_eq!(predict_from_votes(&votes, 0.76).unwrap(), Some(1));
    }

    #[test]
    fn decide_matches_hand_computed_bounds() {
        // all 100 estimation votes for the candidate at alpha = 0.001:
        // p_lower = 0.001^(1/100), radius = sigma * quantile(p_lower)
        let (p_lower, predicted, radius, certified) = decide(100, 100, 0.001, 1.0, 1.0).unwrap();
        let want_p = 0.001f64.powf(0.01);
        assert!((p_lower - want_p).abs() < 1e-6, "{p_lower} vs {want_p}");
        assert!(predicted);
        assert!((radius - 1.5011).abs() < 1e-3, "radius {radius}");
        assert!(certified); // r_hat = 1.0 <= 1.5011
        let (_, _, _, not_certified) = decide(100, 100, 0.001, 1.0, 1.6).unwrap();
        assert!(!not_certified);
    }

    #[test]
    fn minority_count_abstains_regardless_of_r_hat() {
        let (p_lower, predicted, radius, certified) = decide(40, 100, 0.01, 1.0, 0.0).unwrap();
        assert!(p_lower <= 0.5);
        assert!(!predicted);
        assert_eq!(radius, 0.0);
        assert!(!certified);
    }

    #[test]
    fn alpha_monotonicity_never_revokes_certificates() {
        // with votes fixed, increasing alpha (weaker confidence) keeps or
        // gains certificates
        for cnt in [55u64, 70, 90, 100] {
            let mut prev_certified = false;
            for alpha in [0.0005, 0.001, 0.01, 0.05, 0.2] {
                let (_, _, _, certified) = decide(cnt, 100, alpha, 1.0, 0.4).unwrap();
                assert!(
                    certified || !prev_certified,
                    "certificate revoked at cnt={cnt} alpha={alpha}"
                );
                prev_certified = certified;
            }
        }
    }

    fn toy_setup() -> (crate::corpus::SyntheticData, Model) {
        let spec = SyntheticSpec { train_examples: 40, test_examples: 30, ..Default::default() };
        let data = generate_synthetic(&spec).unwrap();
        let model = Model::init_text_classifier(
            data.embeddings.matrix.clone(),
            &ArchConfig::default(),
            1.0,
            5,
        )
        .unwrap();
        (data, model)
    }

    #[test]
    fn zero_width_box_certifies_whenever_majority_is_significant() {
        // a model with constant logits always votes class 1 and has r_hat = 0
        // for substitution-free inputs
        let (data, _) = toy_setup();
        let emb = data.embeddings.matrix.clone();
        let dim = data.embeddings.dim();
        let mut bias = vec![0.0, 0.0];
        bias[1] = 4.0;
        let model = Model::new(
            vec![
                Layer::EmbeddingLookup { weight: emb },
                Layer::Conv1d {
                    weight: Tensor::zeros(vec![4, dim, 3]),
                    bias: Tensor::zeros(vec![4]),
                },
                Layer::MeanPool,
            ],
            vec![
                Layer::Affine {
                    weight: Tensor::zeros(vec![2, 4]),
                    bias: Tensor::new(vec![2], bias).unwrap(),
                },
                Layer::LogSoftmax,
            ],
            1.0,
        )
        .unwrap();
        // tokens without substitutes: style/filler words
        let vocab = &data.embeddings.vocab;
        let style = vocab.id("style0").unwrap();
        let filler = vocab.id("f0").unwrap();
        let ex = TokenizedExample { id: 3, token_ids: vec![style, filler, style, filler], label: 1 };
        let ids = data.table.compile(vocab);
        let record = certify(
            &model,
            &ex,
            &ids,
            &CertifyParams { t1: 20, t2: 100, alpha: 0.01, seed: 9 },
        )
        .unwrap();
        assert_eq!(record.radius_r_hat, 0.0);
        assert!(record.certified);
        assert_eq!(record.predicted, Some(1));
        assert!(record.invariants_hold());
    }

    #[test]
    fn dataset_certification_is_deterministic_across_parallelism() {
        let (data, model) = toy_setup();
        let ids = data.table.compile(&data.embeddings.vocab);
        let examples = data.test.tokenize(&data.embeddings.vocab).unwrap();
        let params = CertifyParams { t1: 10, t2: 50, alpha: 0.05, seed: 123 };
        let a = certify_dataset(&model, &examples, &ids, &params, 1).unwrap();
        let b = certify_dataset(&model, &examples, &ids, &params, 4).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        for r in &a.records {
            assert!(r.invariants_hold());
        }
    }

    #[test]
    fn empty_dataset_reports_zeros() {
        let (data, model) = toy_setup();
        let ids = data.table.compile(&data.embeddings.vocab);
        let params = CertifyParams { t1: 5, t2: 10, alpha: 0.05, seed: 1 };
        let report = certify_dataset(&model, &[], &ids, &params, 1).unwrap();
        assert_eq!(report.summary.examples, 0);
        assert_eq!(report.summary.certified_accuracy, 0.0);
        assert_eq!(report.summary.clean_accuracy, 0.0);
        assert_eq!(report.summary.abstention_rate, 0.0);
    }

    #[test]
    fn bad_params_are_rejected() {
        let (data, model) = toy_setup();
        let ids = data.table.compile(&data.embeddings.vocab);
        let ex = TokenizedExample { id: 0, token_ids: vec![0, 1, 2], label: 0 };
        for params in [
            CertifyParams { t1: 0, t2: 10, alpha: 0.05, seed: 1 },
            CertifyParams { t1: 10, t2: 0, alpha: 0.05, seed: 1 },
            CertifyParams { t1: 10, t2: 10, alpha: 0.0, seed: 1 },
        ] {
            assert!(matches!(
                certify(&model, &ex, &ids, &params),
                Err(CertifyError::BadParams(_))
            ));
        }
    }
}
