//! The encoder / base-classifier pair, checkpoint serialization, and both
//! execution paths: a fast allocation-light plain forward for Monte-Carlo
//! voting and a tape-building forward for gradients.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::{NodeId, Tape};
use super::tensor::{self, Tensor};
use super::{NetError, ParamRef, Section, Slot};
use crate::rng;

pub const FORMAT_VERSION: u64 = 1;

/// A layer with its parameters. The encoder stack is restricted to kinds the
/// interval propagation supports (an embedding lookup may only appear first);
/// the classifier head is a plain MLP ending in log-softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Layer {
    /// Frozen token embedding table `[vocab, dim]`; not a trainable parameter.
    EmbeddingLookup { weight: Tensor },
    /// Valid 1-D convolution, weight `[out_ch, in_ch, k]`, bias `[out_ch]`.
    Conv1d { weight: Tensor, bias: Tensor },
    Relu,
    /// Mean over the sequence dimension.
    MeanPool,
    /// Dense layer, weight `[out, in]`, bias `[out]`.
    Affine { weight: Tensor, bias: Tensor },
    LogSoftmax,
}

/// Architecture metadata of a [`Layer`], without the parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    EmbeddingLookup { vocab: usize, dim: usize },
    Conv1d { in_channels: usize, out_channels: usize, kernel: usize },
    Relu,
    MeanPool,
    Affine { inputs: usize, outputs: usize },
    LogSoftmax,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::EmbeddingLookup { weight } => LayerSpec::EmbeddingLookup {
                vocab: weight.shape()[0],
                dim: weight.shape()[1],
            },
            Layer::Conv1d { weight, .. } => LayerSpec::Conv1d {
                out_channels: weight.shape()[0],
                in_channels: weight.shape()[1],
                kernel: weight.shape()[2],
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::MeanPool => LayerSpec::MeanPool,
            Layer::Affine { weight, .. } => LayerSpec::Affine {
                outputs: weight.shape()[0],
                inputs: weight.shape()[1],
            },
            Layer::LogSoftmax => LayerSpec::LogSoftmax,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            Layer::EmbeddingLookup { .. } => "embedding-lookup",
            Layer::Conv1d { .. } => "conv1d",
            Layer::Relu => "relu",
            Layer::MeanPool => "mean-pool",
            Layer::Affine { .. } => "affine",
            Layer::LogSoftmax => "log-softmax",
        }
    }
}

/// Shape of a value flowing through the stack, with the sequence length left
/// symbolic so one model accepts sequences of any (long enough) length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SymShape {
    /// 1-D token-id input, length unknown.
    Tokens,
    /// `[len, channels]` with unknown `len`.
    Seq(usize),
    /// Fixed-size vector.
    Vec(usize),
}

fn step_shape(layer: &Layer, current: SymShape) -> Result<SymShape, NetError> {
    let fail = |expect: &str| {
        Err(NetError::Architecture(format!(
            "{} cannot follow a {:?} value (expects {expect})",
            layer.kind_name(),
            current
        )))
    };
    match layer {
        Layer::EmbeddingLookup { weight } => match current {
            SymShape::Tokens => Ok(SymShape::Seq(weight.shape()[1])),
            _ => fail("token ids"),
        },
        Layer::Conv1d { weight, bias } => {
            let (oc, ic) = (weight.shape()[0], weight.shape()[1]);
            if weight.shape().len() != 3 || bias.shape() != [oc] {
                return Err(NetError::Architecture("malformed conv1d parameters".into()));
            }
            match current {
                SymShape::Seq(c) if c == ic => Ok(SymShape::Seq(oc)),
                _ => fail(&format!("a sequence with {ic} channels")),
            }
        }
        Layer::Relu => Ok(current),
        Layer::MeanPool => match current {
            SymShape::Seq(c) => Ok(SymShape::Vec(c)),
            _ => fail("a sequence"),
        },
        Layer::Affine { weight, bias } => {
            let (out, inp) = (weight.shape()[0], weight.shape()[1]);
            if weight.shape().len() != 2 || bias.shape() != [out] {
                return Err(NetError::Architecture("malformed affine parameters".into()));
            }
            match current {
                SymShape::Vec(n) if n == inp => Ok(SymShape::Vec(out)),
                _ => fail(&format!("a vector of length {inp}")),
            }
        }
        Layer::LogSoftmax => match current {
            SymShape::Vec(n) => Ok(SymShape::Vec(n)),
            _ => fail("a vector"),
        },
    }
}

/// Encoder + classifier + the noise scale they were trained for.
///
/// Certification is meaningless without the training-time sigma, so it lives
/// in the checkpoint next to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Vec<Layer>,
    pub classifier: Vec<Layer>,
    pub sigma: f64,
    latent_dim: usize,
    classes: usize,
}

/// A model as persisted on disk (same shape in memory).
pub type ModelCheckpoint = Model;

impl Model {
    pub fn new(encoder: Vec<Layer>, classifier: Vec<Layer>, sigma: f64) -> Result<Self, NetError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(NetError::Architecture(format!("sigma must be positive, got {sigma}")));
        }
        if encoder.is_empty() || classifier.is_empty() {
            return Err(NetError::Architecture("encoder and classifier must be nonempty".into()));
        }
        // Encoder: optional leading embedding, then interval-compatible kinds only.
        let mut shape = if matches!(encoder[0], Layer::EmbeddingLookup { .. }) {
            SymShape::Tokens
        } else {
            match &encoder[0] {
                Layer::Conv1d { weight, .. } => SymShape::Seq(weight.shape()[1]),
                Layer::Affine { weight, .. } => SymShape::Vec(weight.shape()[1]),
                Layer::MeanPool | Layer::Relu => {
                    return Err(NetError::Architecture(
                        "encoder must start with a parameterized layer".into(),
                    ))
                }
                _ => return Err(NetError::Architecture("invalid first encoder layer".into())),
            }
        };
        for (i, layer) in encoder.iter().enumerate() {
            match layer {
                Layer::EmbeddingLookup { .. } if i > 0 => {
                    return Err(NetError::Architecture(
                        "embedding-lookup may only be the first encoder layer".into(),
                    ))
                }
                Layer::LogSoftmax => {
                    return Err(NetError::Architecture("log-softmax is not an encoder layer".into()))
                }
                _ => {}
            }
            shape = step_shape(layer, shape)?;
        }
        let latent_dim = match shape {
            SymShape::Vec(n) => n,
            other => {
                return Err(NetError::Architecture(format!(
                    "encoder must end in a fixed-size latent vector, got {other:?}"
                )))
            }
        };
        // Classifier: vector-to-vector MLP ending in log-softmax.
        let mut shape = SymShape::Vec(latent_dim);
        for layer in &classifier {
            match layer {
                Layer::Affine { .. } | Layer::Relu | Layer::LogSoftmax => {}
                other => {
                    return Err(NetError::Architecture(format!(
                        "{} is not a classifier layer",
                        other.kind_name()
                    )))
                }
            }
            shape = step_shape(layer, shape)?;
        }
        if !matches!(classifier.last(), Some(Layer::LogSoftmax)) {
            return Err(NetError::Architecture("classifier must end in log-softmax".into()));
        }
        let classes = match shape {
            SymShape::Vec(n) if n >= 2 => n,
            _ => return Err(NetError::Architecture("classifier needs at least 2 classes".into())),
        };
        Ok(Self { encoder, classifier, sigma, latent_dim, classes })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Smallest input sequence length the encoder accepts (the convolution
    /// kernel width, when present).
    pub fn min_input_len(&self) -> usize {
        self.encoder
            .iter()
            .filter_map(|l| match l {
                Layer::Conv1d { weight, .. } => Some(weight.shape()[2]),
                _ => None,
            })
            .max()
            .unwrap_or(1)
    }

    /// The embedding table, when the encoder starts with a lookup.
    pub fn embedding(&self) -> Option<&Tensor> {
        match self.encoder.first() {
            Some(Layer::EmbeddingLookup { weight }) => Some(weight),
            _ => None,
        }
    }

    /// Encoder layers after the (optional) embedding lookup; the slice the
    /// interval propagation runs over.
    pub fn encoder_post_embedding(&self) -> &[Layer] {
        match self.encoder.first() {
            Some(Layer::EmbeddingLookup { .. }) => &self.encoder[1..],
            _ => &self.encoder[..],
        }
    }

    // -- plain (tape-free) execution ---------------------------------------

    fn lookup_embedding(&self, input: &Tensor) -> Result<Tensor, NetError> {
        let table = self.embedding().expect("caller checked");
        let (vocab, dim) = (table.shape()[0], table.shape()[1]);
        if input.shape().len() != 1 || input.is_empty() {
            return Err(NetError::ShapeMismatch(format!(
                "embedding-lookup expects a nonempty 1-D id tensor, got {:?}",
                input.shape()
            )));
        }
        let mut out = Vec::with_capacity(input.len() * dim);
        for &v in input.data() {
            if v.fract() != 0.0 || v < 0.0 {
                return Err(NetError::NonIntegralToken(v));
            }
            let id = v as usize;
            if id >= vocab {
                return Err(NetError::TokenOutOfRange { id, vocab });
            }
            out.extend_from_slice(table.row(id));
        }
        Ok(Tensor::from_parts(vec![input.len(), dim], out))
    }

    fn plain_layer(&self, layer: &Layer, x: Tensor) -> Result<Tensor, NetError> {
        match layer {
            Layer::EmbeddingLookup { .. } => self.lookup_embedding(&x),
            Layer::Conv1d { weight, bias } => {
                if x.shape().len() != 2 || x.shape()[1] != weight.shape()[1] {
                    return Err(NetError::ShapeMismatch(format!(
                        "conv1d input {:?} vs weight {:?}",
                        x.shape(),
                        weight.shape()
                    )));
                }
                if x.shape()[0] < weight.shape()[2] {
                    return Err(NetError::ShapeMismatch(format!(
                        "sequence of length {} shorter than kernel {}",
                        x.shape()[0],
                        weight.shape()[2]
                    )));
                }
                Ok(tensor::conv1d(weight, Some(bias), &x, false))
            }
            Layer::Relu => {
                let data = x.data().iter().map(|v| v.max(0.0)).collect();
                Ok(Tensor::from_parts(x.shape().to_vec(), data))
            }
            Layer::MeanPool => {
                if x.shape().len() != 2 {
                    return Err(NetError::ShapeMismatch("mean-pool expects a sequence".into()));
                }
                Ok(tensor::mean_pool_rows(&x))
            }
            Layer::Affine { weight, bias } => {
                if x.shape() != [weight.shape()[1]] {
                    return Err(NetError::ShapeMismatch(format!(
                        "affine input {:?} vs weight {:?}",
                        x.shape(),
                        weight.shape()
                    )));
                }
                let mut out = Vec::new();
                tensor::affine(weight, bias, x.data(), &mut out);
                Ok(Tensor::vector(out))
            }
            Layer::LogSoftmax => {
                let mut out = Vec::new();
                tensor::log_softmax(x.data(), &mut out);
                Ok(Tensor::vector(out))
            }
        }
    }

    /// Latent vector `s(x)` for a token sequence, no tape.
    pub fn encode_tokens(&self, tokens: &[usize]) -> Result<Vec<f64>, NetError> {
        self.encode_plain(&Tensor::from_token_ids(tokens))
    }

    /// Latent vector for a raw input tensor (token ids when the encoder
    /// starts with an embedding lookup).
    pub fn encode_plain(&self, input: &Tensor) -> Result<Vec<f64>, NetError> {
        let mut x = input.clone();
        for layer in &self.encoder {
            x = self.plain_layer(layer, x)?;
        }
        Ok(x.data().to_vec())
    }

    /// Class probabilities for a (noisy) latent vector, no tape.
    pub fn class_probs_from_latent(&self, z: &[f64]) -> Result<Vec<f64>, NetError> {
        let mut x = Tensor::vector(z.to_vec());
        for layer in &self.classifier {
            x = self.plain_layer(layer, x)?;
        }
        Ok(x.data().iter().map(|v| v.exp()).collect())
    }

    // -- parameters ---------------------------------------------------------

    /// Trainable tensors in a fixed order: encoder layers, then classifier
    /// layers, weight before bias. The embedding table is frozen and excluded.
    pub fn trainable(&self) -> Vec<(ParamRef, &Tensor)> {
        let mut out = Vec::new();
        for (section, layers) in [
            (Section::Encoder, &self.encoder),
            (Section::Classifier, &self.classifier),
        ] {
            for (i, layer) in layers.iter().enumerate() {
                match layer {
                    Layer::Conv1d { weight, bias } | Layer::Affine { weight, bias } => {
                        out.push((ParamRef { section, layer: i, slot: Slot::Weight }, weight));
                        out.push((ParamRef { section, layer: i, slot: Slot::Bias }, bias));
                    }
                    _ => {}
                }
            }
        }
        out
    }

    /// Mutable view of the trainable tensors, same order as [`Model::trainable`].
    pub fn trainable_mut(&mut self) -> Vec<(ParamRef, &mut Tensor)> {
        let mut out = Vec::new();
        for (section, layers) in [
            (Section::Encoder, &mut self.encoder),
            (Section::Classifier, &mut self.classifier),
        ] {
            for (i, layer) in layers.iter_mut().enumerate() {
                match layer {
                    Layer::Conv1d { weight, bias } | Layer::Affine { weight, bias } => {
                        out.push((ParamRef { section, layer: i, slot: Slot::Weight }, weight));
                        out.push((ParamRef { section, layer: i, slot: Slot::Bias }, bias));
                    }
                    _ => {}
                }
            }
        }
        out
    }

    /// Named snapshot of every trainable tensor, partitioned by owner.
    pub fn parameter_set(&self) -> ParameterSet {
        let mut set = ParameterSet { encoder: Vec::new(), classifier: Vec::new() };
        for (pref, tensor) in self.trainable() {
            let named = NamedTensor { name: pref.to_string(), tensor: tensor.clone() };
            match pref.section {
                Section::Encoder => set.encoder.push(named),
                Section::Classifier => set.classifier.push(named),
            }
        }
        set
    }

    /// Tape-building forward pass: `s(x)`, optional additive latent noise,
    /// classifier log-probabilities.
    pub fn forward(&self, input: &Tensor, noise: Option<&Tensor>) -> Result<ForwardPass, NetError> {
        let mut tape = Tape::new();
        let bound = BoundModel::new(self, &mut tape);
        let latent = bound.encode_input(&mut tape, input)?;
        let z = match noise {
            Some(n) => {
                if n.shape() != tape.value(latent).shape() {
                    return Err(NetError::ShapeMismatch(format!(
                        "noise shape {:?} vs latent {:?}",
                        n.shape(),
                        tape.value(latent).shape()
                    )));
                }
                let nl = tape.leaf(n.clone());
                tape.add(latent, nl)?
            }
            None => latent,
        };
        let log_probs = bound.classify(&mut tape, z)?;
        let class_probs: Vec<f64> = tape.value(log_probs).data().iter().map(|v| v.exp()).collect();
        let latent_value = tape.value(latent).clone();
        Ok(ForwardPass { tape, latent, log_probs, class_probs, latent_value })
    }
}

/// Result of one tape-building forward pass.
pub struct ForwardPass {
    pub tape: Tape,
    pub latent: NodeId,
    pub log_probs: NodeId,
    pub class_probs: Vec<f64>,
    pub latent_value: Tensor,
}

/// Gradients aligned with [`Model::trainable`] order.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub entries: Vec<(ParamRef, Tensor)>,
}

impl ParamGrads {
    pub fn get(&self, pref: ParamRef) -> Option<&Tensor> {
        self.entries.iter().find(|(p, _)| *p == pref).map(|(_, t)| t)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }
}

#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Named parameter snapshot, partitioned into encoder and classifier halves.
#[derive(Debug, Clone)]
pub struct ParameterSet {
    pub encoder: Vec<NamedTensor>,
    pub classifier: Vec<NamedTensor>,
}

// ---------------------------------------------------------------------------
// Tape binding.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerNodes {
    pub weight: Option<NodeId>,
    pub bias: Option<NodeId>,
}

/// A model whose trainable parameters have been registered as leaves on a
/// tape; all graph-building entry points hang off this.
pub struct BoundModel<'m> {
    model: &'m Model,
    pub(crate) enc_nodes: Vec<LayerNodes>,
    cls_nodes: Vec<LayerNodes>,
}

impl<'m> BoundModel<'m> {
    pub fn new(model: &'m Model, tape: &mut Tape) -> Self {
        let bind = |tape: &mut Tape, layers: &[Layer], section: Section| {
            layers
                .iter()
                .enumerate()
                .map(|(i, layer)| match layer {
                    Layer::Conv1d { weight, bias } | Layer::Affine { weight, bias } => LayerNodes {
                        weight: Some(tape.param(
                            weight.clone(),
                            ParamRef { section, layer: i, slot: Slot::Weight },
                        )),
                        bias: Some(tape.param(
                            bias.clone(),
                            ParamRef { section, layer: i, slot: Slot::Bias },
                        )),
                    },
                    _ => LayerNodes { weight: None, bias: None },
                })
                .collect()
        };
        let enc_nodes = bind(tape, &model.encoder, Section::Encoder);
        let cls_nodes = bind(tape, &model.classifier, Section::Classifier);
        Self { model, enc_nodes, cls_nodes }
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    fn apply_layer(
        &self,
        tape: &mut Tape,
        layer: &Layer,
        nodes: LayerNodes,
        x: NodeId,
    ) -> Result<NodeId, NetError> {
        match layer {
            Layer::EmbeddingLookup { .. } => unreachable!("handled by encode_input"),
            Layer::Conv1d { .. } => tape.conv1d(nodes.weight.unwrap(), nodes.bias.unwrap(), x),
            Layer::Relu => Ok(tape.relu(x)),
            Layer::MeanPool => tape.mean_pool_rows(x),
            Layer::Affine { .. } => tape.affine(nodes.weight.unwrap(), nodes.bias.unwrap(), x),
            Layer::LogSoftmax => tape.log_softmax(x),
        }
    }

    /// Builds the encoder subgraph and returns the latent node.
    pub fn encode_input(&self, tape: &mut Tape, input: &Tensor) -> Result<NodeId, NetError> {
        let (start, mut x) = if self.model.embedding().is_some() {
            (1, tape.leaf(self.model.lookup_embedding(input)?))
        } else {
            (0, tape.leaf(input.clone()))
        };
        for (i, layer) in self.model.encoder.iter().enumerate().skip(start) {
            x = self.apply_layer(tape, layer, self.enc_nodes[i], x)?;
        }
        Ok(x)
    }

    pub fn encode_tokens(&self, tape: &mut Tape, tokens: &[usize]) -> Result<NodeId, NetError> {
        self.encode_input(tape, &Tensor::from_token_ids(tokens))
    }

    /// Builds the classifier subgraph from a latent node; returns log-probs.
    pub fn classify(&self, tape: &mut Tape, z: NodeId) -> Result<NodeId, NetError> {
        let mut x = z;
        for (i, layer) in self.model.classifier.iter().enumerate() {
            x = self.apply_layer(tape, layer, self.cls_nodes[i], x)?;
        }
        Ok(x)
    }
}

// ---------------------------------------------------------------------------
// Fast classifier head evaluation for vote loops.
// ---------------------------------------------------------------------------

/// Reusable-buffer evaluator for the classifier head; the certification and
/// attack loops call this tens of thousands of times per example.
pub struct HeadEval<'m> {
    model: &'m Model,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl<'m> HeadEval<'m> {
    pub fn new(model: &'m Model) -> Self {
        Self { model, a: Vec::new(), b: Vec::new() }
    }

    fn run(&mut self, z: &[f64], skip_trailing_softmax: bool) -> Result<(), NetError> {
        self.a.clear();
        self.a.extend_from_slice(z);
        let n_layers = self.model.classifier.len();
        for (i, layer) in self.model.classifier.iter().enumerate() {
            match layer {
                Layer::Affine { weight, bias } => {
                    if self.a.len() != weight.shape()[1] {
                        return Err(NetError::ShapeMismatch(format!(
                            "classifier affine expects {}, got {}",
                            weight.shape()[1],
                            self.a.len()
                        )));
                    }
                    tensor::affine(weight, bias, &self.a, &mut self.b);
                    std::mem::swap(&mut self.a, &mut self.b);
                }
                Layer::Relu => {
                    for v in &mut self.a {
                        *v = v.max(0.0);
                    }
                }
                Layer::LogSoftmax => {
                    if skip_trailing_softmax && i == n_layers - 1 {
                        break;
                    }
                    tensor::log_softmax(&self.a, &mut self.b);
                    std::mem::swap(&mut self.a, &mut self.b);
                }
                other => {
                    return Err(NetError::Architecture(format!(
                        "{} in classifier head",
                        other.kind_name()
                    )))
                }
            }
        }
        Ok(())
    }

    /// Log-probabilities for a noisy latent vector.
    pub fn log_probs(&mut self, z: &[f64]) -> Result<&[f64], NetError> {
        self.run(z, false)?;
        Ok(&self.a)
    }

    /// Hard-vote class: argmax with ties broken toward the lowest index.
    /// Skips the final log-softmax (argmax-invariant).
    pub fn vote(&mut self, z: &[f64]) -> Result<usize, NetError> {
        self.run(z, true)?;
        Ok(tensor::argmax(&self.a))
    }
}

// ---------------------------------------------------------------------------
// Checkpoint I/O: versioned JSON with plain decimal float arrays and the
// layer order preserved exactly.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u64,
    sigma: f64,
    encoder: Vec<Layer>,
    classifier: Vec<Layer>,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), NetError> {
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        sigma: model.sigma,
        encoder: model.encoder.clone(),
        classifier: model.classifier.clone(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| NetError::Format(format!("serialize: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model, NetError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| NetError::Format(format!("{}: {e}", path.display())))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| NetError::Format("missing or non-integer format_version".into()))?;
    if found != FORMAT_VERSION {
        return Err(NetError::VersionMismatch { found, supported: FORMAT_VERSION });
    }
    let file: CheckpointFile = serde_json::from_value(value)
        .map_err(|e| NetError::Format(format!("{}: {e}", path.display())))?;
    Model::new(file.encoder, file.classifier, file.sigma)
}

// ---------------------------------------------------------------------------
// Initialization for the standard text-classifier architecture.
// ---------------------------------------------------------------------------

/// Dimensions of the default conv encoder + MLP head.
#[derive(Debug, Clone)]
pub struct ArchConfig {
    pub conv_channels: usize,
    pub kernel: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { conv_channels: 24, kernel: 3, latent_dim: 16, hidden_dim: 32, classes: 2 }
    }
}

fn xavier(shape: Vec<usize>, fan_in: usize, fan_out: usize, seed: u64, stream: u64) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|i| (rng::u64_to_open01(rng::counter_u64(seed, stream, i as u64)) * 2.0 - 1.0) * bound)
        .collect();
    Tensor::from_parts(shape, data)
}

impl Model {
    /// Conv encoder over frozen embeddings plus a small MLP head, with
    /// deterministic Xavier-uniform initialization derived from `seed`.
    pub fn init_text_classifier(
        embedding: Tensor,
        arch: &ArchConfig,
        sigma: f64,
        seed: u64,
    ) -> Result<Model, NetError> {
        if embedding.shape().len() != 2 {
            return Err(NetError::Architecture("embedding table must be 2-D".into()));
        }
        let dim = embedding.shape()[1];
        let a = arch;
        let encoder = vec![
            Layer::EmbeddingLookup { weight: embedding },
            Layer::Conv1d {
                weight: xavier(
                    vec![a.conv_channels, dim, a.kernel],
                    dim * a.kernel,
                    a.conv_channels,
                    seed,
                    1,
                ),
                bias: Tensor::zeros(vec![a.conv_channels]),
            },
            Layer::Relu,
            Layer::MeanPool,
            Layer::Affine {
                weight: xavier(
                    vec![a.latent_dim, a.conv_channels],
                    a.conv_channels,
                    a.latent_dim,
                    seed,
                    2,
                ),
                bias: Tensor::zeros(vec![a.latent_dim]),
            },
        ];
        let classifier = vec![
            Layer::Affine {
                weight: xavier(vec![a.hidden_dim, a.latent_dim], a.latent_dim, a.hidden_dim, seed, 3),
                bias: Tensor::zeros(vec![a.hidden_dim]),
            },
            Layer::Relu,
            Layer::Affine {
                weight: xavier(vec![a.classes, a.hidden_dim], a.hidden_dim, a.classes, seed, 4),
                bias: Tensor::zeros(vec![a.classes]),
            },
            Layer::LogSoftmax,
        ];
        Model::new(encoder, classifier, sigma)
    }
}
