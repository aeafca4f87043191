//! Dense-tensor reverse-mode differentiation and the layer set for the
//! encoder / base-classifier pair, plus Adam and checkpoint I/O.

mod adam;
mod model;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use model::{
    load_checkpoint, save_checkpoint, BoundModel, ForwardPass, HeadEval, Layer, LayerSpec, Model,
    ModelCheckpoint, NamedTensor, ParamGrads, ParameterSet, FORMAT_VERSION,
};
pub use model::ArchConfig;
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

/// Plain center-radius interval steps for affine / conv / mean-pool, shared
/// with the interval propagation module.
pub(crate) mod interval_kernels {
    use super::tensor::{self, Tensor};
    use super::NetError;

    fn center_radius(lower: &Tensor, upper: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let center = lower
            .data()
            .iter()
            .zip(upper.data())
            .map(|(l, u)| 0.5 * (l + u))
            .collect();
        let radius = lower
            .data()
            .iter()
            .zip(upper.data())
            .map(|(l, u)| 0.5 * (u - l))
            .collect();
        (center, radius)
    }

    pub(crate) fn affine_interval(
        w: &Tensor,
        b: &Tensor,
        lower: &Tensor,
        upper: &Tensor,
    ) -> Result<(Tensor, Tensor), NetError> {
        if lower.shape().len() != 1 || lower.shape()[0] != w.shape()[1] {
            return Err(NetError::ShapeMismatch(format!(
                "interval affine: input {:?} vs weight {:?}",
                lower.shape(),
                w.shape()
            )));
        }
        let (center, radius) = center_radius(lower, upper);
        let mut c2 = Vec::new();
        let mut r2 = Vec::new();
        tensor::affine(w, b, &center, &mut c2);
        tensor::affine_abs(w, &radius, &mut r2);
        let lo: Vec<f64> = c2.iter().zip(&r2).map(|(c, r)| c - r).collect();
        let hi: Vec<f64> = c2.iter().zip(&r2).map(|(c, r)| c + r).collect();
        Ok((Tensor::vector(lo), Tensor::vector(hi)))
    }

    pub(crate) fn conv_interval(
        w: &Tensor,
        b: &Tensor,
        lower: &Tensor,
        upper: &Tensor,
    ) -> Result<(Tensor, Tensor), NetError> {
        if lower.shape().len() != 2
            || lower.shape()[1] != w.shape()[1]
            || lower.shape()[0] < w.shape()[2]
        {
            return Err(NetError::ShapeMismatch(format!(
                "interval conv1d: input {:?} vs weight {:?}",
                lower.shape(),
                w.shape()
            )));
        }
        let (center, radius) = center_radius(lower, upper);
        let center_t = Tensor::new(lower.shape().to_vec(), center)?;
        let radius_t = Tensor::new(lower.shape().to_vec(), radius)?;
        let c2 = tensor::conv1d(w, Some(b), &center_t, false);
        let r2 = tensor::conv1d(w, None, &radius_t, true);
        let lo: Vec<f64> = c2.data().iter().zip(r2.data()).map(|(c, r)| c - r).collect();
        let hi: Vec<f64> = c2.data().iter().zip(r2.data()).map(|(c, r)| c + r).collect();
        Ok((
            Tensor::new(c2.shape().to_vec(), lo)?,
            Tensor::new(c2.shape().to_vec(), hi)?,
        ))
    }

    pub(crate) fn mean_pool_interval(t: &Tensor) -> Result<Tensor, NetError> {
        if t.shape().len() != 2 {
            return Err(NetError::ShapeMismatch("interval mean-pool expects a sequence".into()));
        }
        Ok(tensor::mean_pool_rows(t))
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("token input must contain integral ids, got {0}")]
    NonIntegralToken(f64),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("unsupported model architecture: {0}")]
    Architecture(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint format_version {found} is not supported (this build reads version {supported})")]
    VersionMismatch { found: u64, supported: u64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Identifies one trainable tensor inside a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamRef {
    pub section: Section,
    pub layer: usize,
    pub slot: Slot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    Encoder,
    Classifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Weight,
    Bias,
}

impl std::fmt::Display for ParamRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let section = match self.section {
            Section::Encoder => "encoder",
            Section::Classifier => "classifier",
        };
        let slot = match self.slot {
            Slot::Weight => "weight",
            Slot::Bias => "bias",
        };
        write!(f, "{section}.{}.{slot}", self.layer)
    }
}
