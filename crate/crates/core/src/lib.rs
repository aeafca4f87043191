//! Training, smoothing and certification of small discrete-input (text-like)
//! classifiers against word-substitution perturbations.
//!
//! The pipeline couples three ingredients:
//!
//! 1. an interval-bound-propagation (IBP) encoder that maps a token sequence
//!    to a latent vector together with a sound bound `r_hat` on how far any
//!    allowed word substitution can move that vector,
//! 2. Gaussian randomized smoothing in the latent space, which yields a
//!    certified radius `r` around the latent vector within which the smoothed
//!    prediction cannot change, and
//! 3. exact binomial hypothesis tests / Clopper-Pearson bounds that turn
//!    Monte-Carlo votes into statistically valid certificates: an example is
//!    certified when `r >= r_hat` at confidence `1 - alpha`.
//!
//! The crate ships a minimal dense-tensor reverse-mode autodiff engine
//! ([`net`]), the interval machinery ([`ibp`]), the noise/radius layer
//! ([`smoothing`]), the certifier ([`certifier`]), the two-phase trainer
//! ([`trainer`]), data generation and ingestion ([`corpus`]), empirical
//! adversaries ([`attacks`]) and a CLI ([`cli`]) that exposes the whole
//! pipeline with reproducible seeding.

pub mod attacks;
pub mod certifier;
pub mod cli;
pub mod corpus;
pub mod ibp;
pub mod net;
pub mod rng;
pub mod smoothing;
pub mod stats;
pub mod trainer;

pub use certifier::{CertificationRecord, CertifySummary};
pub use corpus::{Dataset, Embeddings, LabeledExample, SubstitutionTable, SyntheticSpec};
pub use net::{Model, ModelCheckpoint, Tensor};
pub use smoothing::NoiseSpec;
pub use stats::Probability;
pub use trainer::TrainConfig;
