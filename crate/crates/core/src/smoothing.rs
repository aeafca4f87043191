//! Gaussian latent-noise machinery: reproducible noise streams, smoothed
//! expectations, hard votes, and the certification radii.
//!
//! Noise is generated by inverse-CDF transform of a counter-based uniform
//! stream, so any draw is addressable as a pure function of
//! `(seed, draw_index, coordinate)`: no shared RNG state, identical vectors
//! for identical indices, and parallel draws stay deterministic.

use thiserror::Error;

use crate::net::{HeadEval, Model, NetError, Tensor};
use crate::rng;
use crate::stats::{self, Probability};

/// Probabilities are clamped into `[EPS, 1 - EPS]` before any quantile call;
/// the quantile diverges at the endpoints.
pub const PROB_CLAMP_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SmoothingError {
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("at least one noise draw is required")]
    ZeroDraws,
    #[error("noise dim {spec} does not match model latent dim {model}")]
    DimMismatch { spec: usize, model: usize },
    #[error("soft radius needs p_top >= p_runner, got {p_top} < {p_runner}")]
    RadiusOrder { p_top: f64, p_runner: f64 },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Distribution of the latent noise: `N(0, sigma^2 I)` over `dim`
/// coordinates, with all draws derived from `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    sigma: f64,
    dim: usize,
    seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, dim: usize, seed: u64) -> Result<Self, SmoothingError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(SmoothingError::BadSigma(sigma));
        }
        Ok(Self { sigma, dim, seed })
    }

    /// Noise sized for a model's latent space at its training sigma.
    pub fn for_model(model: &Model, seed: u64) -> Self {
        Self { sigma: model.sigma, dim: model.latent_dim(), seed }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same distribution, reseeded (per-example streams).
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }

    fn check_model(&self, model: &Model) -> Result<(), SmoothingError> {
        if self.dim != model.latent_dim() {
            return Err(SmoothingError::DimMismatch { spec: self.dim, model: model.latent_dim() });
        }
        Ok(())
    }
}

/// Writes the `draw_index`-th noise vector into `out`.
pub fn sample_noise_into(spec: &NoiseSpec, draw_index: u64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), spec.dim);
    for (i, slot) in out.iter_mut().enumerate() {
        let u = rng::u64_to_open01(rng::counter_u64(spec.seed, draw_index, i as u64));
        *slot = stats::normal_quantile_raw(u) * spec.sigma;
    }
}

/// The `draw_index`-th noise vector as a tensor.
pub fn sample_noise(spec: &NoiseSpec, draw_index: u64) -> Tensor {
    let mut out = vec![0.0; spec.dim];
    sample_noise_into(spec, draw_index, &mut out);
    Tensor::vector(out)
}

/// Per-class hard-vote counts; the counts always sum to the number of draws.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteCounts {
    counts: Vec<u64>,
}

impl VoteCounts {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Class with the most votes, ties toward the lowest index.
    pub fn majority(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate().skip(1) {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }

    /// Top two (class, count) pairs, ties toward lower indices.
    pub fn top_two(&self) -> ((usize, u64), (usize, u64)) {
        let a = self.majority();
        let mut b = usize::MAX;
        for i in 0..self.counts.len() {
            if i == a {
                continue;
            }
            if b == usize::MAX || self.counts[i] > self.counts[b] {
                b = i;
            }
        }
        ((a, self.counts[a]), (b, self.counts[b]))
    }

    pub fn count_for(&self, class: usize) -> u64 {
        self.counts[class]
    }
}

/// Monte-Carlo mean of the class probabilities over noise draws
/// `draw_range`; entries sum to 1 within 1e-9.
pub fn soft_expectation_range(
    model: &Model,
    input: &Tensor,
    spec: &NoiseSpec,
    draw_range: std::ops::Range<u64>,
) -> Result<Vec<f64>, SmoothingError> {
    if draw_range.is_empty() {
        return Err(SmoothingError::ZeroDraws);
    }
    spec.check_model(model)?;
    let latent = model.encode_plain(input)?;
    let mut head = HeadEval::new(model);
    let mut noisy = vec![0.0; latent.len()];
    let mut acc = vec![0.0f64; model.classes()];
    for d in draw_range.clone() {
        sample_noise_into(spec, d, &mut noisy);
        for (z, l) in noisy.iter_mut().zip(&latent) {
            *z += l;
        }
        let log_probs = head.log_probs(&noisy)?;
        for (a, lp) in acc.iter_mut().zip(log_probs) {
            *a += lp.exp();
        }
    }
    let inv = 1.0 / (draw_range.end - draw_range.start) as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(acc)
}

/// Monte-Carlo mean over the first `draws` indices.
pub fn soft_expectation(
    model: &Model,
    input: &Tensor,
    spec: &NoiseSpec,
    draws: u64,
) -> Result<Vec<f64>, SmoothingError> {
    soft_expectation_range(model, input, spec, 0..draws)
}

/// Hard votes over noise draws `draw_range`: each draw increments the argmax
/// class (ties toward the lowest index).
pub fn hard_votes_range(
    model: &Model,
    input: &Tensor,
    spec: &NoiseSpec,
    draw_range: std::ops::Range<u64>,
) -> Result<VoteCounts, SmoothingError> {
    if draw_range.is_empty() {
        return Err(SmoothingError::ZeroDraws);
    }
    spec.check_model(model)?;
    let latent = model.encode_plain(input)?;
    let mut head = HeadEval::new(model);
    let mut noisy = vec![0.0; latent.len()];
    let mut counts = vec![0u64; model.classes()];
    for d in draw_range {
        sample_noise_into(spec, d, &mut noisy);
        for (z, l) in noisy.iter_mut().zip(&latent) {
            *z += l;
        }
        counts[head.vote(&noisy)?] += 1;
    }
    Ok(VoteCounts { counts })
}

/// Hard votes over the first `draws` indices.
pub fn hard_votes(
    model: &Model,
    input: &Tensor,
    spec: &NoiseSpec,
    draws: u64,
) -> Result<VoteCounts, SmoothingError> {
    hard_votes_range(model, input, spec, 0..draws)
}

/// Certified radius of the soft smoothed classifier:
/// `sigma/2 * (quantile(p_top) - quantile(p_runner))`, both probabilities
/// clamped into `[PROB_CLAMP_EPS, 1 - PROB_CLAMP_EPS]` first.
pub fn soft_radius(
    p_top: Probability,
    p_runner: Probability,
    sigma: f64,
) -> Result<f64, SmoothingError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(SmoothingError::BadSigma(sigma));
    }
    if p_top.value() < p_runner.value() {
        return Err(SmoothingError::RadiusOrder {
            p_top: p_top.value(),
            p_runner: p_runner.value(),
        });
    }
    let a = p_top.clamped(PROB_CLAMP_EPS).value();
    let b = p_runner.clamped(PROB_CLAMP_EPS).value();
    Ok(0.5 * sigma * (stats::normal_quantile_raw(a) - stats::normal_quantile_raw(b)))
}

/// Certified radius via the hard classifier: `sigma * quantile(p_a_lower)`.
///
/// Returns `None` when `p_a_lower <= 1/2` — the certificate is void, which is
/// an abstention signal rather than an error.
pub fn hard_radius(p_a_lower: Probability, sigma: f64) -> Option<f64> {
    let p = p_a_lower.value();
    if p <= 0.5 {
        return None;
    }
    let p = p_a_lower.clamped(PROB_CLAMP_EPS).value();
    Some(sigma * stats::normal_quantile_raw(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Layer;

    fn spec(sigma: f64, dim: usize, seed: u64) -> NoiseSpec {
        NoiseSpec::new(sigma, dim, seed).unwrap()
    }

    #[test]
    fn same_seed_and_index_reproduce_the_vector() {
        let s = spec(1.3, 8, 99);
        assert_eq!(sample_noise(&s, 5), sample_noise(&s, 5));
        assert_ne!(sample_noise(&s, 5), sample_noise(&s, 6));
    }

    #[test]
    fn noise_moments_match_the_distribution() {
        let dims = 4;
        for &sigma in &[0.5f64, 1.0, 2.0] {
            let s = spec(sigma, dims, 7);
            let n = 100_000u64;
            let mut sum = vec![0.0f64; dims];
            let mut sumsq = vec![0.0f64; dims];
            let mut buf = vec![0.0f64; dims];
            for d in 0..n {
                sample_noise_into(&s, d, &mut buf);
                for i in 0..dims {
                    sum[i] += buf[i];
                    sumsq[i] += buf[i] * buf[i];
                }
            }
            for i in 0..dims {
                let mean = sum[i] / n as f64;
                let std = (sumsq[i] / n as f64 - mean * mean).sqrt();
                assert!(mean.abs() < 0.02 * sigma.max(1.0), "mean {mean} at sigma {sigma}");
                assert!((std - sigma).abs() < 0.02 * sigma, "std {std} at sigma {sigma}");
            }
        }
    }

    fn constant_logit_model(favored: usize, classes: usize) -> Model {
        // classifier weights are zero, so logits = bias regardless of noise
        let mut bias = vec![0.0; classes];
        bias[favored] = 3.0;
        Model::new(
            vec![Layer::Affine {
                weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: Tensor::zeros(vec![2]),
            }],
            vec![
                Layer::Affine {
                    weight: Tensor::zeros(vec![classes, 2]),
                    bias: Tensor::new(vec![classes], bias).unwrap(),
                },
                Layer::LogSoftmax,
            ],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn constant_logits_vote_for_the_favored_class() {
        let model = constant_logit_model(2, 4);
        let s = NoiseSpec::for_model(&model, 1);
        let votes =
            hard_votes(&model, &Tensor::vector(vec![0.1, 0.2]), &s, 50).unwrap();
        assert_eq!(votes.counts(), &[0, 0, 50, 0]);
        assert_eq!(votes.majority(), 2);
        assert_eq!(votes.total(), 50);
    }

    #[test]
    fn zero_draws_is_rejected() {
        let model = constant_logit_model(0, 2);
        let s = NoiseSpec::for_model(&model, 1);
        assert!(matches!(
            hard_votes(&model, &Tensor::vector(vec![0.0, 0.0]), &s, 0),
            Err(SmoothingError::ZeroDraws)
        ));
    }

    fn leaning_model() -> Model {
        Model::new(
            vec![Layer::Affine {
                weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: Tensor::zeros(vec![2]),
            }],
            vec![
                Layer::Affine {
                    weight: Tensor::new(vec![2, 2], vec![1.2, -0.3, -0.8, 0.9]).unwrap(),
                    bias: Tensor::new(vec![2], vec![0.05, -0.05]).unwrap(),
                },
                Layer::LogSoftmax,
            ],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn single_draw_expectation_is_one_noisy_pass() {
        let model = leaning_model();
        let s = NoiseSpec::for_model(&model, 31);
        let input = Tensor::vector(vec![0.4, -0.2]);
        let expect = soft_expectation(&model, &input, &s, 1).unwrap();
        let latent = model.encode_plain(&input).unwrap();
        let noise = sample_noise(&s, 0);
        let z: Vec<f64> = latent.iter().zip(noise.data()).map(|(l, n)| l + n).collect();
        let direct = model.class_probs_from_latent(&z).unwrap();
        for (a, b) in expect.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn vanishing_sigma_recovers_the_noiseless_probabilities() {
        let model = leaning_model();
        let s = spec(1e-9, 2, 5);
        let input = Tensor::vector(vec![0.4, -0.2]);
        let smoothed = soft_expectation(&model, &input, &s, 64).unwrap();
        let latent = model.encode_plain(&input).unwrap();
        let clean = model.class_probs_from_latent(&latent).unwrap();
        for (a, b) in smoothed.iter().zip(&clean) {
            assert!((a - b).abs() < 1e-6);
        }
        let total: f64 = smoothed.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn independent_estimates_agree_within_three_standard_errors() {
        let model = leaning_model();
        let input = Tensor::vector(vec![0.3, 0.1]);
        let draws = 5000u64;
        let a = soft_expectation(&model, &input, &spec(1.0, 2, 1001), draws).unwrap();
        let b = soft_expectation(&model, &input, &spec(1.0, 2, 2002), draws).unwrap();
        for k in 0..2 {
            // binomial-style bound on the variance of a mean of [0,1] values
            let se = (0.25 / draws as f64).sqrt() * std::f64::consts::SQRT_2;
            assert!((a[k] - b[k]).abs() < 3.0 * se, "class {k}: {} vs {}", a[k], b[k]);
        }
    }

    #[test]
    fn vote_fractions_converge_to_reference() {
        let model = leaning_model();
        let input = Tensor::vector(vec![0.2, 0.05]);
        let s = spec(1.0, 2, 77);
        let reference = hard_votes(&model, &input, &s, 100_000).unwrap();
        let p_ref = reference.count_for(0) as f64 / reference.total() as f64;
        let sample = hard_votes(&model, &input, &spec(1.0, 2, 78), 20_000).unwrap();
        let p = sample.count_for(0) as f64 / sample.total() as f64;
        assert!((p - p_ref).abs() < 0.01, "{p} vs {p_ref}");
    }

    #[test]
    fn soft_radius_hand_values() {
        let p = |v: f64| Probability::new(v).unwrap();
        assert_eq!(soft_radius(p(0.5), p(0.5), 1.0).unwrap(), 0.0);
        let r = soft_radius(p(0.8), p(0.2), 1.0).unwrap();
        assert!((r - 0.8416212335729143).abs() < 1e-9, "got {r}");
        let r2 = soft_radius(p(0.8), p(0.2), 2.0).unwrap();
        assert_eq!(r2, 2.0 * r);
        assert!(soft_radius(p(0.3), p(0.6), 1.0).is_err());
    }

    #[test]
    fn hard_radius_hand_values() {
        let p = |v: f64| Probability::new(v).unwrap();
        assert!(hard_radius(p(0.5), 1.0).is_none());
        assert!(hard_radius(p(0.2), 1.0).is_none());
        let r = hard_radius(p(0.9), 1.0).unwrap();
        assert!((r - 1.2815515655446004).abs() < 1e-9);
        let r2 = hard_radius(p(0.9), 2.0).unwrap();
        assert_eq!(r2, 2.0 * r);
        // barely above one half: radius approaches zero from above
        let tiny = hard_radius(p(0.5 + 1e-9), 1.0).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-6);
    }

    #[test]
    fn two_class_soft_and_hard_radii_coincide() {
        let p = |v: f64| Probability::new(v).unwrap();
        for &v in &[0.6, 0.75, 0.9, 0.99] {
            let soft = soft_radius(p(v), p(1.0 - v), 1.3).unwrap();
            let hard = hard_radius(p(v), 1.3).unwrap();
            assert_eq!(soft.to_bits(), hard.to_bits(), "at p = {v}");
        }
    }

    #[test]
    fn radii_scale_linearly_in_sigma() {
        let p = |v: f64| Probability::new(v).unwrap();
        let r1 = soft_radius(p(0.83), p(0.05), 0.7).unwrap();
        let r2 = soft_radius(p(0.83), p(0.05), 1.4).unwrap();
        assert!((r2 - 2.0 * r1).abs() < 1e-15);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn radii_are_homogeneous_degree_one(
                top in 0.0f64..1.0,
                runner_frac in 0.0f64..1.0,
                sigma in 0.01f64..10.0,
            ) {
                let p = Probability::new(top).unwrap();
                let q = Probability::new(top * runner_frac).unwrap();
                // doubling sigma is an exact power-of-two scale
                let r1 = soft_radius(p, q, sigma).unwrap();
                let r2 = soft_radius(p, q, 2.0 * sigma).unwrap();
                prop_assert_eq!((2.0 * r1).to_bits(), r2.to_bits());
                if top > 0.5 {
                    let h1 = hard_radius(p, sigma).unwrap();
                    let h2 = hard_radius(p, 2.0 * sigma).unwrap();
                    prop_assert_eq!((2.0 * h1).to_bits(), h2.to_bits());
                }
            }

            #[test]
            fn soft_radius_monotone_in_arguments(
                top in 0.55f64..0.95,
                delta in 0.001f64..0.04,
            ) {
                let p = |v: f64| Probability::new(v).unwrap();
                let base = soft_radius(p(top), p(0.5), 1.0).unwrap();
                let stronger = soft_radius(p(top + delta), p(0.5), 1.0).unwrap();
                let weaker_runner = soft_radius(p(top), p(0.5 - delta), 1.0).unwrap();
                prop_assert!(stronger > base);
                prop_assert!(weaker_runner > base);
            }
        }
    }
}
