//! Joint training of the encoder and base classifier.
//!
//! The objective is `L_cls + gamma_eff * L_robust`:
//!
//! - `L_cls` is the cross-entropy of the classifier on the noisy latent
//!   `s(x) + n`, averaged over the batch and `k` noise samples (k = 1 by
//!   default), with probabilities clamped to `[1e-6, 1 - 1e-6]`;
//! - `L_robust` is `max(0, r_hat - r + m)`, where `r_hat` comes from interval
//!   propagation and `r` is the soft certified radius computed from the
//!   plug-in expectation of the same `k` noisy passes. Gradients flow into
//!   the encoder (through both `r_hat` and `r`) and into the classifier
//!   (through `r`).
//!
//! Training runs in two phases: a cross-entropy-only warm phase, then the
//! full objective with `gamma` ramped linearly from 0 to its target over
//! `warmup_steps` optimizer steps. Whenever `gamma * m >= 1`, the per-example
//! inequality `gamma * hinge >= 1(r_hat >= r)` holds exactly; the trainer
//! asserts it on every batch and reports the violation count (always zero).

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{CorpusError, IdSubstitutionTable, TokenizedExample};
use crate::ibp::{self, IbpError, IntervalNodes};
use crate::net::{
    adam_step, AdamHyper, AdamState, BoundModel, Model, NetError, NodeId, ParamGrads, Tape,
    Tensor,
};
use crate::rng::{mix64, sub_seed, SplitMix64};
use crate::smoothing::{self, NoiseSpec, SmoothingError, PROB_CLAMP_EPS};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("label {label} out of range for {classes} classes (example {id})")]
    LabelOutOfRange { id: u64, label: usize, classes: usize },
    #[error("training diverged at epoch {epoch} (loss {loss}); last good checkpoint attached")]
    Diverged { epoch: usize, loss: f64, last_good: Box<Model> },
    #[error("error-bound check needs gamma * margin >= 1, got {gamma} * {margin} = {product}")]
    NotUpperBoundRegime { gamma: f64, margin: f64, product: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Ibp(#[from] IbpError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Hyper-parameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub sigma: f64,
    pub gamma: f64,
    pub margin: f64,
    /// Noise samples per example per step (the smoothing estimate).
    pub noise_samples: usize,
    pub adam: AdamHyper,
    /// Optimizer steps over which gamma ramps 0 -> gamma in phase 2.
    pub warmup_steps: u64,
    /// Cross-entropy-only epochs.
    pub phase1_epochs: usize,
    /// Full-objective epochs.
    pub phase2_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            gamma: 4.0,
            margin: 1.0,
            noise_samples: 1,
            adam: AdamHyper { lr: 0.01, ..AdamHyper::default() },
            warmup_steps: 120,
            phase1_epochs: 5,
            phase2_epochs: 10,
            batch_size: 32,
            seed: 42,
        }
    }
}

impl TrainConfig {
    /// True when `gamma * margin >= 1`, the regime in which the objective
    /// upper-bounds the expected certification error.
    pub fn upper_bound_regime(&self) -> bool {
        self.gamma * self.margin >= 1.0
    }

    fn validate(&self) -> Result<(), TrainerError> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(TrainerError::BadConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(TrainerError::BadConfig(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if self.noise_samples == 0 {
            return Err(TrainerError::BadConfig("noise_samples must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainerError::BadConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    fn gamma_effective(&self, phase2_step: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.gamma
        } else {
            self.gamma * ((phase2_step as f64) / (self.warmup_steps as f64)).min(1.0)
        }
    }
}

/// Per-step loss decomposition and radius diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostics {
    pub epoch: usize,
    pub phase: u8,
    pub step: u64,
    pub gamma_effective: f64,
    pub loss_cls: f64,
    pub loss_robust: f64,
    pub total_loss: f64,
    pub mean_r: f64,
    pub mean_r_hat: f64,
    /// Mean of `1(r <= r_hat)` over the batch.
    pub cert_error_indicator_mean: f64,
}

/// Per-epoch averages of [`StepDiagnostics`].
#[derive(Debug, Clone, Serialize)]
pub struct EpochDiagnostics {
    pub epoch: usize,
    pub phase: u8,
    pub gamma_effective_end: f64,
    pub loss_cls: f64,
    pub loss_robust: f64,
    pub total_loss: f64,
    pub mean_r: f64,
    pub mean_r_hat: f64,
    pub cert_error_indicator_mean: f64,
}

pub const TRAINING_LOG_HEADER: &str = "epoch,phase,gamma_effective,loss_cls,loss_robust,total_loss,mean_r,mean_r_hat,cert_error_indicator_mean";

impl EpochDiagnostics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.phase,
            self.gamma_effective_end,
            self.loss_cls,
            self.loss_robust,
            self.total_loss,
            self.mean_r,
            self.mean_r_hat,
            self.cert_error_indicator_mean
        )
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub model: Model,
    /// Model at the end of the cross-entropy phase.
    pub phase1_model: Model,
    pub steps: Vec<StepDiagnostics>,
    pub epochs: Vec<EpochDiagnostics>,
    /// Count of examples violating `gamma * hinge >= 1(r_hat >= r)` while
    /// `gamma * margin >= 1`. Zero on every run unless the algebra is broken.
    pub hinge_violations: u64,
    pub upper_bound_regime: bool,
}

const LN_EPS_LO: f64 = -13.815510557964274; // ln(1e-6)

fn ln_one_minus_eps() -> f64 {
    (-PROB_CLAMP_EPS).ln_1p()
}

// ---------------------------------------------------------------------------
// Batch graph construction.
// ---------------------------------------------------------------------------

struct ExampleTerms {
    ce: NodeId,
    hinge: NodeId,
    r_value: f64,
    r_hat_value: f64,
}

struct BatchGraph {
    tape: Tape,
    loss_cls: NodeId,
    loss_robust: NodeId,
    r_values: Vec<f64>,
    r_hat_values: Vec<f64>,
    hinge_values: Vec<f64>,
}

/// Builds the per-example subgraph: noisy cross-entropy terms and (optionally
/// differentiable later) the robust hinge.
fn example_graph(
    tape: &mut Tape,
    bound: &BoundModel<'_>,
    example: &TokenizedExample,
    subs: &IdSubstitutionTable,
    spec: &NoiseSpec,
    k: usize,
    margin: f64,
    first_draw: u64,
) -> Result<ExampleTerms, TrainerError> {
    let model = bound.model();
    let classes = model.classes();
    if example.label >= classes {
        return Err(TrainerError::LabelOutOfRange {
            id: example.id,
            label: example.label,
            classes,
        });
    }
    let embedding = model
        .embedding()
        .ok_or_else(|| TrainerError::BadConfig("training needs an embedding-lookup encoder".into()))?;

    let latent = bound.encode_tokens(tape, &example.token_ids)?;

    // k noisy classifier passes, shared by the cross-entropy terms and the
    // plug-in smoothed expectation.
    let mut ce_terms = Vec::with_capacity(k);
    let mut prob_vecs = Vec::with_capacity(k);
    for j in 0..k {
        let noise = smoothing::sample_noise(spec, first_draw + j as u64);
        let noise_leaf = tape.leaf(noise);
        let z = tape.add(latent, noise_leaf)?;
        let log_probs = bound.classify(tape, z)?;
        // -log of the clamped probability, taken in log space: the clamp on
        // p in [eps, 1-eps] is exactly a clamp on log p.
        let lp_y = tape.gather(log_probs, example.label)?;
        let lp_clamped = tape.clamp_const(lp_y, LN_EPS_LO, ln_one_minus_eps());
        ce_terms.push(tape.neg(lp_clamped));
        prob_vecs.push(tape.exp(log_probs));
    }
    let ce = tape.mean_of(&ce_terms)?;

    // Plug-in soft expectation and the certified radius r.
    let p_hat = tape.mean_of(&prob_vecs)?;
    let p_clamped = tape.clamp_const(p_hat, PROB_CLAMP_EPS, 1.0 - PROB_CLAMP_EPS);
    let runner = {
        let values = tape.value(p_hat).data();
        let mut best: Option<usize> = None;
        for y in 0..classes {
            if y == example.label {
                continue;
            }
            if best.is_none() || values[y] > values[best.unwrap()] {
                best = Some(y);
            }
        }
        let best = best.expect("at least two classes");
        // distance of the runner-up selection to flipping
        let mut gap = f64::INFINITY;
        for y in 0..classes {
            if y == example.label || y == best {
                continue;
            }
            gap = gap.min(values[best] - values[y]);
        }
        if gap.is_finite() {
            tape.note_branch_margin(gap);
        }
        best
    };
    let p_top = tape.gather(p_clamped, example.label)?;
    let p_run = tape.gather(p_clamped, runner)?;
    let q_top = tape.normal_quantile(p_top)?;
    let q_run = tape.normal_quantile(p_run)?;
    let q_diff = tape.sub(q_top, q_run)?;
    let r = tape.scale(q_diff, 0.5 * spec.sigma());

    // Interval propagation and r_hat.
    let input_box = ibp::input_interval(&example.token_ids, subs, embedding)?;
    let lo = tape.leaf(input_box.lower().clone());
    let hi = tape.leaf(input_box.upper().clone());
    let latent_box = ibp::propagate_tape(bound, tape, IntervalNodes { lower: lo, upper: hi })?;
    let r_hat = ibp::r_hat_tape(tape, latent, latent_box)?;

    let diff = tape.sub(r_hat, r)?;
    let shifted = tape.add_scalar(diff, margin);
    let hinge = tape.relu(shifted);

    Ok(ExampleTerms {
        ce,
        hinge,
        r_value: tape.scalar_value(r),
        r_hat_value: tape.scalar_value(r_hat),
    })
}

fn batch_graph(
    model: &Model,
    batch: &[&TokenizedExample],
    subs: &IdSubstitutionTable,
    spec: &NoiseSpec,
    k: usize,
    margin: f64,
    first_draw: u64,
) -> Result<BatchGraph, TrainerError> {
    let mut tape = Tape::new();
    let bound = BoundModel::new(model, &mut tape);
    let mut ce_nodes = Vec::with_capacity(batch.len());
    let mut hinge_nodes = Vec::with_capacity(batch.len());
    let mut r_values = Vec::with_capacity(batch.len());
    let mut r_hat_values = Vec::with_capacity(batch.len());
    let mut hinge_values = Vec::with_capacity(batch.len());
    for (i, ex) in batch.iter().enumerate() {
        let terms = example_graph(
            &mut tape,
            &bound,
            ex,
            subs,
            spec,
            k,
            margin,
            first_draw + (i * k) as u64,
        )?;
        hinge_values.push(tape.scalar_value(terms.hinge));
        ce_nodes.push(terms.ce);
        hinge_nodes.push(terms.hinge);
        r_values.push(terms.r_value);
        r_hat_values.push(terms.r_hat_value);
    }
    let loss_cls = tape.mean_of(&ce_nodes)?;
    let loss_robust = tape.mean_of(&hinge_nodes)?;
    Ok(BatchGraph { tape, loss_cls, loss_robust, r_values, r_hat_values, hinge_values })
}

// ---------------------------------------------------------------------------
// The public loss operations.
// ---------------------------------------------------------------------------

/// Value and parameter gradients of one loss evaluation.
pub struct LossEval {
    pub value: f64,
    pub grads: ParamGrads,
    /// Smallest distance any branching op came to its kink; finite-difference
    /// harnesses use this to skip active-set boundaries.
    pub min_branch_margin: f64,
}

/// Mean noisy cross-entropy over a batch with `k` noise samples per example,
/// using draw indices starting at `first_draw`.
pub fn loss_cls(
    model: &Model,
    batch: &[&TokenizedExample],
    subs: &IdSubstitutionTable,
    spec: &NoiseSpec,
    k: usize,
    first_draw: u64,
) -> Result<LossEval, TrainerError> {
    if k == 0 {
        return Err(TrainerError::BadConfig("k must be at least 1".into()));
    }
    let mut g = batch_graph(model, batch, subs, spec, k, 1.0, first_draw)?;
    let value = g.tape.scalar_value(g.loss_cls);
    let margin = g.tape.min_branch_margin();
    let grads = ParamGrads { entries: g.tape.backward(g.loss_cls, 1.0)?.param_entries() };
    Ok(LossEval { value, grads, min_branch_margin: margin })
}

/// Mean robust hinge `max(0, r_hat - r + m)` over a batch.
pub fn loss_robust(
    model: &Model,
    batch: &[&TokenizedExample],
    subs: &IdSubstitutionTable,
    spec: &NoiseSpec,
    margin: f64,
    k: usize,
    first_draw: u64,
) -> Result<LossEval, TrainerError> {
    if k == 0 {
        return Err(TrainerError::BadConfig("k must be at least 1".into()));
    }
    let mut g = batch_graph(model, batch, subs, spec, k, margin, first_draw)?;
    let value = g.tape.scalar_value(g.loss_robust);
    let branch_margin = g.tape.min_branch_margin();
    let grads = ParamGrads { entries: g.tape.backward(g.loss_robust, 1.0)?.param_entries() };
    Ok(LossEval { value, grads, min_branch_margin: branch_margin })
}

// ---------------------------------------------------------------------------
// The training loop.
// ---------------------------------------------------------------------------

/// Trains `model` on `train_set` under the two-phase schedule. Deterministic
/// in `config.seed`; aborts with the last good checkpoint on divergence.
pub fn train(
    mut model: Model,
    train_set: &[TokenizedExample],
    subs: &IdSubstitutionTable,
    config: &TrainConfig,
) -> Result<TrainOutput, TrainerError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainerError::EmptyDataset);
    }
    for ex in train_set {
        if ex.label >= model.classes() {
            return Err(TrainerError::LabelOutOfRange {
                id: ex.id,
                label: ex.label,
                classes: model.classes(),
            });
        }
    }
    // The config owns sigma: certification must use the training-time value.
    model.sigma = config.sigma;
    let spec = NoiseSpec::new(config.sigma, model.latent_dim(), sub_seed(config.seed, "train-noise"))?;
    let shuffle_seed = sub_seed(config.seed, "shuffle");
    let k = config.noise_samples;
    let upper_bound_regime = config.upper_bound_regime();

    let mut state = AdamState::new(&model);
    let mut steps: Vec<StepDiagnostics> = Vec::new();
    let mut epochs: Vec<EpochDiagnostics> = Vec::new();
    let mut hinge_violations = 0u64;
    let mut draw_counter = 0u64;
    let mut phase2_step = 0u64;
    let mut last_good = model.clone();
    let mut phase1_model = model.clone();

    let total_epochs = config.phase1_epochs + config.phase2_epochs;
    for epoch in 0..total_epochs {
        let phase: u8 = if epoch < config.phase1_epochs { 1 } else { 2 };
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        SplitMix64::new(mix64(shuffle_seed ^ epoch as u64)).shuffle(&mut order);

        let mut epoch_acc = EpochDiagnostics {
            epoch,
            phase,
            gamma_effective_end: 0.0,
            loss_cls: 0.0,
            loss_robust: 0.0,
            total_loss: 0.0,
            mean_r: 0.0,
            mean_r_hat: 0.0,
            cert_error_indicator_mean: 0.0,
        };
        let mut batches_in_epoch = 0usize;

        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TokenizedExample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let gamma_eff = if phase == 2 { config.gamma_effective(phase2_step) } else { 0.0 };

            let mut g = batch_graph(&model, &batch, subs, &spec, k, config.margin, draw_counter)?;
            draw_counter += (batch.len() * k) as u64;

            let cls_value = g.tape.scalar_value(g.loss_cls);
            let rob_value = g.tape.scalar_value(g.loss_robust);

            // The logged total is literally cls + gamma_eff * robust, no reweighting.
            let total_node = if phase == 2 && gamma_eff != 0.0 {
                let scaled = g.tape.scale(g.loss_robust, gamma_eff);
                g.tape.add(g.loss_cls, scaled)?
            } else {
                g.loss_cls
            };
            let total_value = g.tape.scalar_value(total_node);
            debug_assert!(
                (total_value - (cls_value + gamma_eff * rob_value)).abs() <= 1e-12,
                "objective composition drifted"
            );

            if !cls_value.is_finite()
                || !rob_value.is_finite()
                || !total_value.is_finite()
                || total_value > 1e6
            {
                return Err(TrainerError::Diverged {
                    epoch,
                    loss: total_value,
                    last_good: Box::new(last_good),
                });
            }

            // Hinge dominance, exact whenever gamma * margin >= 1.
            let mut indicator_sum = 0.0;
            for (i, (&hv, (&rv, &rhv))) in g
                .hinge_values
                .iter()
                .zip(g.r_values.iter().zip(&g.r_hat_values))
                .enumerate()
            {
                let _ = i;
                let indicator = if rhv >= rv { 1.0 } else { 0.0 };
                indicator_sum += indicator;
                if upper_bound_regime && config.gamma * hv < indicator {
                    hinge_violations += 1;
                }
            }

            let n = batch.len() as f64;
            let diag = StepDiagnostics {
                epoch,
                phase,
                step: steps.len() as u64,
                gamma_effective: gamma_eff,
                loss_cls: cls_value,
                loss_robust: rob_value,
                total_loss: total_value,
                mean_r: g.r_values.iter().sum::<f64>() / n,
                mean_r_hat: g.r_hat_values.iter().sum::<f64>() / n,
                cert_error_indicator_mean: indicator_sum / n,
            };

            let grads = ParamGrads { entries: g.tape.backward(total_node, 1.0)?.param_entries() };
            adam_step(&mut model, &grads, &mut state, &config.adam)?;
            if model.trainable().iter().any(|(_, t)| !t.all_finite()) {
                return Err(TrainerError::Diverged {
                    epoch,
                    loss: f64::NAN,
                    last_good: Box::new(last_good),
                });
            }

            epoch_acc.loss_cls += diag.loss_cls;
            epoch_acc.loss_robust += diag.loss_robust;
            epoch_acc.total_loss += diag.total_loss;
            epoch_acc.mean_r += diag.mean_r;
            epoch_acc.mean_r_hat += diag.mean_r_hat;
            epoch_acc.cert_error_indicator_mean += diag.cert_error_indicator_mean;
            epoch_acc.gamma_effective_end = gamma_eff;
            batches_in_epoch += 1;
            steps.push(diag);

            if phase == 2 {
                phase2_step += 1;
            }
        }

        let inv = 1.0 / batches_in_epoch.max(1) as f64;
        epoch_acc.loss_cls *= inv;
        epoch_acc.loss_robust *= inv;
        epoch_acc.total_loss *= inv;
        epoch_acc.mean_r *= inv;
        epoch_acc.mean_r_hat *= inv;
        epoch_acc.cert_error_indicator_mean *= inv;
        epochs.push(epoch_acc);

        last_good = model.clone();
        if epoch + 1 == config.phase1_epochs {
            phase1_model = model.clone();
        }
    }
    if config.phase1_epochs == 0 {
        phase1_model = model.clone();
    }

    Ok(TrainOutput {
        model,
        phase1_model,
        steps,
        epochs,
        hinge_violations,
        upper_bound_regime,
    })
}

// ---------------------------------------------------------------------------
// High-draw bound diagnostics.
// ---------------------------------------------------------------------------

/// Per-example entries of [`error_bound_check`].
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBoundExample {
    pub example_id: u64,
    pub ce: f64,
    pub hinge: f64,
    pub r: f64,
    pub r_hat: f64,
    pub cert_error_indicator: f64,
}

/// Output of [`error_bound_check`]: the empirical objective against the
/// certification-error rate it upper-bounds.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBoundReport {
    pub examples: usize,
    pub mean_ce: f64,
    pub mean_hinge: f64,
    /// `mean_ce + gamma * mean_hinge`
    pub objective: f64,
    /// `1 - mean(1(r - r_hat > 0))`
    pub cert_error_rate: f64,
    /// `objective - cert_error_rate`; nonnegative whenever no per-example
    /// hinge-dominance violation occurred.
    pub gap: f64,
    pub hinge_violations: u64,
    pub per_example: Vec<ErrorBoundExample>,
}

/// Evaluates the hinge-dominance inequality and the objective-vs-error gap
/// with high-draw soft expectations. Refuses configs with `gamma * m < 1`.
pub fn error_bound_check(
    model: &Model,
    sample: &[TokenizedExample],
    subs: &IdSubstitutionTable,
    config: &TrainConfig,
    high_draws: u64,
) -> Result<ErrorBoundReport, TrainerError> {
    if !config.upper_bound_regime() {
        return Err(TrainerError::NotUpperBoundRegime {
            gamma: config.gamma,
            margin: config.margin,
            product: config.gamma * config.margin,
        });
    }
    let embedding = model
        .embedding()
        .ok_or_else(|| TrainerError::BadConfig("error_bound_check needs an embedding encoder".into()))?;
    let base_seed = sub_seed(config.seed, "bound-check");
    let mut per_example = Vec::with_capacity(sample.len());
    let mut violations = 0u64;

    for ex in sample {
        let spec = NoiseSpec::new(model.sigma, model.latent_dim(), base_seed ^ ex.id)?;
        let input = Tensor::from_token_ids(&ex.token_ids);
        let p_hat = smoothing::soft_expectation(model, &input, &spec, high_draws)?;

        // Empirical E[-log f_y(s(x)+n)] over the same draw budget.
        let ce = noisy_cross_entropy(model, &input, &spec, high_draws, ex.label)?;

        let clamp = |p: f64| p.clamp(PROB_CLAMP_EPS, 1.0 - PROB_CLAMP_EPS);
        let p_top = clamp(p_hat[ex.label]);
        let runner = (0..model.classes())
            .filter(|&y| y != ex.label)
            .max_by(|&a, &b| {
                p_hat[a].partial_cmp(&p_hat[b]).unwrap().then(b.cmp(&a))
            })
            .expect("two classes");
        let p_run = clamp(p_hat[runner]);
        let r = 0.5
            * model.sigma
            * (crate::stats::normal_quantile_raw(p_top) - crate::stats::normal_quantile_raw(p_run));

        let latent = model.encode_plain(&input)?;
        let box_ = ibp::input_interval(&ex.token_ids, subs, embedding)?;
        let latent_box = ibp::propagate(model.encoder_post_embedding(), &box_)?;
        let r_hat = ibp::r_hat(&latent, &latent_box)?;

        let hinge = (r_hat - r + config.margin).max(0.0);
        let indicator = if r <= r_hat { 1.0 } else { 0.0 };
        if config.gamma * hinge < indicator {
            violations += 1;
        }
        per_example.push(ErrorBoundExample {
            example_id: ex.id,
            ce,
            hinge,
            r,
            r_hat,
            cert_error_indicator: indicator,
        });
    }

    let n = per_example.len().max(1) as f64;
    let mean_ce = per_example.iter().map(|e| e.ce).sum::<f64>() / n;
    let mean_hinge = per_example.iter().map(|e| e.hinge).sum::<f64>() / n;
    let cert_error_rate =
        per_example.iter().map(|e| e.cert_error_indicator).sum::<f64>() / n;
    let objective = mean_ce + config.gamma * mean_hinge;
    Ok(ErrorBoundReport {
        examples: per_example.len(),
        mean_ce,
        mean_hinge,
        objective,
        cert_error_rate,
        gap: objective - cert_error_rate,
        hinge_violations: violations,
        per_example,
    })
}

/// Monte-Carlo mean of the clamped `-log f_y(s(x)+n)`.
fn noisy_cross_entropy(
    model: &Model,
    input: &Tensor,
    spec: &NoiseSpec,
    draws: u64,
    label: usize,
) -> Result<f64, TrainerError> {
    if draws == 0 {
        return Err(TrainerError::BadConfig("draws must be at least 1".into()));
    }
    let latent = model.encode_plain(input)?;
    let mut head = crate::net::HeadEval::new(model);
    let mut noisy = vec![0.0; latent.len()];
    let mut acc = 0.0;
    for d in 0..draws {
        smoothing::sample_noise_into(spec, d, &mut noisy);
        for (z, l) in noisy.iter_mut().zip(&latent) {
            *z += l;
        }
        let lp = head.log_probs(&noisy)?[label];
        acc += -lp.clamp(LN_EPS_LO, ln_one_minus_eps());
    }
    Ok(acc / draws as f64)
}
