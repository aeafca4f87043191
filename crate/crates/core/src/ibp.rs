//! Interval bound propagation through the encoder and the certified latent
//! perturbation radius `r_hat`.
//!
//! The input box is the coordinatewise hull of each token's embedding
//! together with the embeddings of all its allowed substitutes (the original
//! word is always a member of its own neighborhood, so the box always
//! contains the clean embedding). Affine and convolution layers propagate in
//! center-radius form (`center' = W center + b`, `radius' = |W| radius`),
//! relu clamps both bounds, mean-pool averages them. Every step is sound:
//! any substituted input's activation stays inside the box.
//!
//! Both a plain evaluation path and a tape path exist; the tape path makes
//! `r_hat` differentiable with respect to the encoder parameters, which the
//! robustness loss needs. On ties in `max(u - c, c - l)` the gradient flows
//! to the upper-bound branch.

use thiserror::Error;

use crate::corpus::IdSubstitutionTable;
use crate::net::{BoundModel, Layer, NetError, NodeId, Tape, Tensor};

#[derive(Debug, Error)]
pub enum IbpError {
    #[error("lower bound exceeds upper bound at index {index}: {lower} > {upper}")]
    BoundsOrder { index: usize, lower: f64, upper: f64 },
    #[error("token id {id} out of range for embedding table of {vocab}")]
    UnknownToken { id: usize, vocab: usize },
    #[error("layer kind {0} is not interval-compatible")]
    UnsupportedLayer(String),
    #[error("center leaves bounds at index {index}: {center} not in [{lower}, {upper}] (slack {slack})")]
    CenterOutsideBounds { index: usize, center: f64, lower: f64, upper: f64, slack: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Elementwise lower/upper bounds on an activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTensor {
    lower: Tensor,
    upper: Tensor,
}

/// Slack allowed when checking that a center lies inside its bounds.
pub const CENTER_SLACK: f64 = 1e-9;

impl IntervalTensor {
    pub fn new(lower: Tensor, upper: Tensor) -> Result<Self, IbpError> {
        if lower.shape() != upper.shape() {
            return Err(IbpError::Shape(format!(
                "lower {:?} vs upper {:?}",
                lower.shape(),
                upper.shape()
            )));
        }
        for (i, (l, u)) in lower.data().iter().zip(upper.data()).enumerate() {
            if l > u {
                return Err(IbpError::BoundsOrder { index: i, lower: *l, upper: *u });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Degenerate box around a single point.
    pub fn degenerate(point: Tensor) -> Self {
        Self { lower: point.clone(), upper: point }
    }

    pub fn lower(&self) -> &Tensor {
        &self.lower
    }

    pub fn upper(&self) -> &Tensor {
        &self.upper
    }

    pub fn shape(&self) -> &[usize] {
        self.lower.shape()
    }

    /// True when `point` lies inside the box at every coordinate, within `slack`.
    pub fn contains(&self, point: &[f64], slack: f64) -> bool {
        point.len() == self.lower.len()
            && point.iter().enumerate().all(|(i, &p)| {
                p >= self.lower.data()[i] - slack && p <= self.upper.data()[i] + slack
            })
    }
}

/// Builds the embedded input box for a token sequence: per position and
/// embedding coordinate, the min/max over the original word and all its
/// substitutes.
pub fn input_interval(
    tokens: &[usize],
    subs: &IdSubstitutionTable,
    embeddings: &Tensor,
) -> Result<IntervalTensor, IbpError> {
    let (vocab, dim) = (embeddings.shape()[0], embeddings.shape()[1]);
    let mut lower = Vec::with_capacity(tokens.len() * dim);
    let mut upper = Vec::with_capacity(tokens.len() * dim);
    for &t in tokens {
        if t >= vocab {
            return Err(IbpError::UnknownToken { id: t, vocab });
        }
        let base = embeddings.row(t);
        let mut lo = base.to_vec();
        let mut hi = base.to_vec();
        for &s in subs.substitutes(t) {
            if s >= vocab {
                return Err(IbpError::UnknownToken { id: s, vocab });
            }
            for (d, &v) in embeddings.row(s).iter().enumerate() {
                if v < lo[d] {
                    lo[d] = v;
                }
                if v > hi[d] {
                    hi[d] = v;
                }
            }
        }
        lower.extend_from_slice(&lo);
        upper.extend_from_slice(&hi);
    }
    let shape = vec![tokens.len(), dim];
    IntervalTensor::new(Tensor::new(shape.clone(), lower)?, Tensor::new(shape, upper)?)
}

/// Propagates a box through interval-compatible layers (affine, conv1d,
/// relu, mean-pool). Any other kind is a structural error.
pub fn propagate(layers: &[Layer], bounds: &IntervalTensor) -> Result<IntervalTensor, IbpError> {
    let mut lower = bounds.lower.clone();
    let mut upper = bounds.upper.clone();
    for layer in layers {
        (lower, upper) = propagate_layer(layer, lower, upper)?;
    }
    IntervalTensor::new(lower, upper)
}

fn propagate_layer(layer: &Layer, lower: Tensor, upper: Tensor) -> Result<(Tensor, Tensor), IbpError> {
    use crate::net::interval_kernels as k;
    match layer {
        Layer::Affine { weight, bias } => Ok(k::affine_interval(weight, bias, &lower, &upper)?),
        Layer::Conv1d { weight, bias } => Ok(k::conv_interval(weight, bias, &lower, &upper)?),
        Layer::Relu => {
            let l = lower.data().iter().map(|v| v.max(0.0)).collect();
            let u = upper.data().iter().map(|v| v.max(0.0)).collect();
            Ok((Tensor::new(lower.shape().to_vec(), l)?, Tensor::new(upper.shape().to_vec(), u)?))
        }
        Layer::MeanPool => Ok((k::mean_pool_interval(&lower)?, k::mean_pool_interval(&upper)?)),
        other => Err(IbpError::UnsupportedLayer(
            match other {
                Layer::EmbeddingLookup { .. } => "embedding-lookup",
                Layer::LogSoftmax => "log-softmax",
                _ => unreachable!(),
            }
            .to_string(),
        )),
    }
}

/// `r_hat = sqrt(sum_i max(u_i - c_i, c_i - l_i)^2)`: how far, in latent L2
/// distance, any input inside the box can move the latent vector.
///
/// The center must lie inside the bounds (within [`CENTER_SLACK`]); anything
/// else means the bounds are unsound for this center.
pub fn r_hat(center: &[f64], bounds: &IntervalTensor) -> Result<f64, IbpError> {
    check_center(center, bounds)?;
    let mut acc = 0.0f64;
    for (i, &c) in center.iter().enumerate() {
        let du = bounds.upper.data()[i] - c;
        let dl = c - bounds.lower.data()[i];
        let m = if du >= dl { du } else { dl };
        acc += m * m;
    }
    Ok(acc.sqrt())
}

fn check_center(center: &[f64], bounds: &IntervalTensor) -> Result<(), IbpError> {
    if center.len() != bounds.lower.len() {
        return Err(IbpError::Shape(format!(
            "center length {} vs bounds {:?}",
            center.len(),
            bounds.shape()
        )));
    }
    for (i, &c) in center.iter().enumerate() {
        let (l, u) = (bounds.lower.data()[i], bounds.upper.data()[i]);
        if c < l - CENTER_SLACK || c > u + CENTER_SLACK {
            return Err(IbpError::CenterOutsideBounds {
                index: i,
                center: c,
                lower: l,
                upper: u,
                slack: CENTER_SLACK,
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Tape path.
// ---------------------------------------------------------------------------

/// Lower/upper bound nodes on a tape.
#[derive(Debug, Clone, Copy)]
pub struct IntervalNodes {
    pub lower: NodeId,
    pub upper: NodeId,
}

/// Propagates an input box through the bound model's encoder on the tape,
/// skipping the embedding lookup (the box already lives in embedded space).
pub fn propagate_tape(
    bound: &BoundModel<'_>,
    tape: &mut Tape,
    input: IntervalNodes,
) -> Result<IntervalNodes, IbpError> {
    let model = bound.model();
    let mut lower = input.lower;
    let mut upper = input.upper;
    for (i, layer) in model.encoder.iter().enumerate() {
        let nodes = bound.enc_nodes[i];
        match layer {
            Layer::EmbeddingLookup { .. } => continue,
            Layer::Affine { .. } | Layer::Conv1d { .. } => {
                let w = nodes.weight.expect("parameterized layer");
                let b = nodes.bias.expect("parameterized layer");
                let center_sum = tape.add(lower, upper)?;
                let center = tape.scale(center_sum, 0.5);
                let width = tape.sub(upper, lower)?;
                let radius = tape.scale(width, 0.5);
                let (center2, radius2) = if matches!(layer, Layer::Affine { .. }) {
                    (tape.affine(w, b, center)?, tape.abs_matvec(w, radius)?)
                } else {
                    (tape.conv1d(w, b, center)?, tape.abs_conv1d(w, radius)?)
                };
                lower = tape.sub(center2, radius2)?;
                upper = tape.add(center2, radius2)?;
            }
            Layer::Relu => {
                lower = tape.relu(lower);
                upper = tape.relu(upper);
            }
            Layer::MeanPool => {
                lower = tape.mean_pool_rows(lower)?;
                upper = tape.mean_pool_rows(upper)?;
            }
            Layer::LogSoftmax => {
                return Err(IbpError::UnsupportedLayer("log-softmax".into()));
            }
        }
    }
    Ok(IntervalNodes { lower, upper })
}

/// Tape version of [`r_hat`]; gradients reach the center and both bounds.
pub fn r_hat_tape(
    tape: &mut Tape,
    center: NodeId,
    bounds: IntervalNodes,
) -> Result<NodeId, IbpError> {
    {
        let c = tape.value(center).data().to_vec();
        let b = IntervalTensor::new(tape.value(bounds.lower).clone(), tape.value(bounds.upper).clone())?;
        check_center(&c, &b)?;
    }
    let du = tape.sub(bounds.upper, center)?;
    let dl = tape.sub(center, bounds.lower)?;
    let m = tape.max_elem(du, dl)?;
    let sq = tape.square(m);
    let total = tape.sum_all(sq);
    Ok(tape.sqrt(total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{IdSubstitutionTable, SubstitutionTable, Vocabulary};
    use std::collections::BTreeMap;

    fn subs_of(vocab_words: &[&str], entries: &[(&str, &[&str])]) -> (Vocabulary, IdSubstitutionTable) {
        let vocab =
            Vocabulary::from_words(vocab_words.iter().map(|s| s.to_string()).collect()).unwrap();
        let mut map = BTreeMap::new();
        for (head, subs) in entries {
            map.insert(head.to_string(), subs.iter().map(|s| s.to_string()).collect());
        }
        let table = SubstitutionTable::new(map, &vocab).unwrap();
        (vocab.clone(), table.compile(&vocab))
    }

    #[test]
    fn empty_substitution_set_gives_zero_width_box() {
        let (_, ids) = subs_of(&["a", "b"], &[]);
        let emb = Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let box_ = input_interval(&[0], &ids, &emb).unwrap();
        assert_eq!(box_.lower(), box_.upper());
        assert_eq!(box_.lower().data(), &[0.5, -1.0]);
    }

    #[test]
    fn two_word_substitution_box_is_coordinatewise_hull() {
        let (_, ids) = subs_of(&["a", "b"], &[("a", &["b"])]);
        let emb = Tensor::new(vec![2, 2], vec![0.0, 1.0, 2.0, -1.0]).unwrap();
        let box_ = input_interval(&[0], &ids, &emb).unwrap();
        assert_eq!(box_.lower().data(), &[0.0, -1.0]);
        assert_eq!(box_.upper().data(), &[2.0, 1.0]);
    }

    #[test]
    fn sampled_neighbors_stay_inside_the_box() {
        let (_, ids) = subs_of(&["a", "b", "c", "d"], &[("a", &["b", "c"]), ("d", &["b"])]);
        let emb = Tensor::new(
            vec![4, 3],
            (0..12).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect(),
        )
        .unwrap();
        let tokens = [0usize, 3, 1];
        let box_ = input_interval(&tokens, &ids, &emb).unwrap();
        let mut rng = crate::rng::SplitMix64::new(11);
        for _ in 0..100 {
            let mut flat = Vec::new();
            for &t in &tokens {
                let options: Vec<usize> =
                    std::iter::once(t).chain(ids.substitutes(t).iter().copied()).collect();
                let pick = options[rng.next_below(options.len())];
                flat.extend_from_slice(emb.row(pick));
            }
            assert!(box_.contains(&flat, 0.0));
        }
    }

    #[test]
    fn affine_interval_matches_hand_computation() {
        // W = [[1, -1]], b = 0 on the unit box -> [-1, 1]
        let w = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let layer = Layer::Affine { weight: w, bias: Tensor::zeros(vec![1]) };
        let box_ = IntervalTensor::new(
            Tensor::vector(vec![0.0, 0.0]),
            Tensor::vector(vec![1.0, 1.0]),
        )
        .unwrap();
        let out = propagate(&[layer], &box_).unwrap();
        assert!((out.lower().data()[0] - -1.0).abs() < 1e-15);
        assert!((out.upper().data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn relu_interval_clamps() {
        let layer = Layer::Relu;
        let box_ =
            IntervalTensor::new(Tensor::vector(vec![-1.0]), Tensor::vector(vec![1.0])).unwrap();
        let out = propagate(&[layer], &box_).unwrap();
        assert_eq!(out.lower().data(), &[0.0]);
        assert_eq!(out.upper().data(), &[1.0]);
    }

    #[test]
    fn zero_width_box_tracks_plain_forward() {
        let w = Tensor::new(vec![2, 2], vec![0.4, -1.2, 0.7, 0.3]).unwrap();
        let b = Tensor::vector(vec![0.1, -0.2]);
        let layers = vec![Layer::Affine { weight: w.clone(), bias: b.clone() }, Layer::Relu];
        let x = vec![0.3, -0.8];
        let box_ = IntervalTensor::degenerate(Tensor::vector(x.clone()));
        let out = propagate(&layers, &box_).unwrap();
        // plain forward by hand
        let y = vec![
            (0.4 * x[0] - 1.2 * x[1] + 0.1).max(0.0),
            (0.7 * x[0] + 0.3 * x[1] - 0.2).max(0.0),
        ];
        let _ = (&w, &b);
        for i in 0..2 {
            assert!((out.lower().data()[i] - y[i]).abs() < 1e-12);
            assert!((out.upper().data()[i] - y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn unsupported_layer_is_structural_error() {
        let box_ =
            IntervalTensor::new(Tensor::vector(vec![0.0]), Tensor::vector(vec![1.0])).unwrap();
        assert!(matches!(
            propagate(&[Layer::LogSoftmax], &box_),
            Err(IbpError::UnsupportedLayer(_))
        ));
    }

    #[test]
    fn r_hat_hand_values() {
        let b1 =
            IntervalTensor::new(Tensor::vector(vec![-1.0]), Tensor::vector(vec![2.0])).unwrap();
        assert!((r_hat(&[0.0], &b1).unwrap() - 2.0).abs() < 1e-15);

        let b2 = IntervalTensor::new(
            Tensor::vector(vec![-3.0, 0.0]),
            Tensor::vector(vec![0.0, 4.0]),
        )
        .unwrap();
        assert!((r_hat(&[0.0, 0.0], &b2).unwrap() - 5.0).abs() < 1e-15);

        let b3 = IntervalTensor::degenerate(Tensor::vector(vec![0.7, -0.2]));
        assert_eq!(r_hat(&[0.7, -0.2], &b3).unwrap(), 0.0);
    }

    #[test]
    fn r_hat_rejects_center_outside_bounds() {
        let b = IntervalTensor::new(Tensor::vector(vec![0.0]), Tensor::vector(vec![1.0])).unwrap();
        assert!(matches!(
            r_hat(&[1.5], &b),
            Err(IbpError::CenterOutsideBounds { .. })
        ));
    }

    #[test]
    fn enlarging_a_substitution_set_never_shrinks_r_hat() {
        let (_, small) = subs_of(&["a", "b", "c"], &[("a", &["b"])]);
        let (_, large) = subs_of(&["a", "b", "c"], &[("a", &["b", "c"])]);
        let emb = Tensor::new(
            vec![3, 2],
            vec![0.0, 0.0, 0.4, -0.3, -0.9, 1.2],
        )
        .unwrap();
        let layers = vec![
            Layer::Conv1d {
                weight: Tensor::new(vec![2, 2, 1], vec![0.8, -0.1, 0.5, 0.9]).unwrap(),
                bias: Tensor::zeros(vec![2]),
            },
            Layer::Relu,
            Layer::MeanPool,
        ];
        let tokens = [0usize, 2];
        // center: encode original tokens through the same layers
        let emb_rows: Vec<f64> =
            tokens.iter().flat_map(|&t| emb.row(t).to_vec()).collect();
        let center_box = IntervalTensor::degenerate(
            Tensor::new(vec![2, 2], emb_rows).unwrap(),
        );
        let center = propagate(&layers, &center_box).unwrap();

        let r_small = {
            let b = input_interval(&tokens, &small, &emb).unwrap();
            let out = propagate(&layers, &b).unwrap();
            r_hat(center.lower().data(), &out).unwrap()
        };
        let r_large = {
            let b = input_interval(&tokens, &large, &emb).unwrap();
            let out = propagate(&layers, &b).unwrap();
            r_hat(center.lower().data(), &out).unwrap()
        };
        assert!(r_large >= r_small, "{r_large} < {r_small}");
    }

    #[test]
    fn tape_propagation_matches_plain_path() {
        use crate::net::{ArchConfig, Model};
        let emb = Tensor::new(
            vec![6, 4],
            (0..24).map(|i| ((i * 29 % 13) as f64 - 6.0) * 0.2).collect(),
        )
        .unwrap();
        let model = Model::init_text_classifier(
            emb.clone(),
            &ArchConfig { conv_channels: 5, kernel: 2, latent_dim: 4, hidden_dim: 6, classes: 2 },
            1.0,
            77,
        )
        .unwrap();
        let (_, ids) = subs_of(&["a", "b", "c", "d", "e", "f"], &[("a", &["c", "e"])]);
        let tokens = [0usize, 1, 3];
        let box_ = input_interval(&tokens, &ids, &emb).unwrap();
        let plain = propagate(model.encoder_post_embedding(), &box_).unwrap();

        let mut tape = Tape::new();
        let bound = BoundModel::new(&model, &mut tape);
        let lo = tape.leaf(box_.lower().clone());
        let hi = tape.leaf(box_.upper().clone());
        let out = propagate_tape(&bound, &mut tape, IntervalNodes { lower: lo, upper: hi }).unwrap();
        for i in 0..plain.lower().len() {
            assert!((tape.value(out.lower).data()[i] - plain.lower().data()[i]).abs() < 1e-12);
            assert!((tape.value(out.upper).data()[i] - plain.upper().data()[i]).abs() < 1e-12);
        }

        // r_hat agrees too
        let center = bound.encode_tokens(&mut tape, &tokens).unwrap();
        let r_node = r_hat_tape(&mut tape, center, out).unwrap();
        let plain_center = model.encode_tokens(&tokens).unwrap();
        let plain_r = r_hat(&plain_center, &plain).unwrap();
        assert!((tape.scalar_value(r_node) - plain_r).abs() < 1e-12);
    }
}
