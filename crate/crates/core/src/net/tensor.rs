//! Dense row-major tensors and the handful of numeric kernels the layer set
//! needs. No broadcasting beyond bias addition; the models here are tiny and
//! 64-bit floats everywhere buy the precision headroom certification needs.

use serde::{Deserialize, Serialize};

use super::NetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorRepr", into = "TensorRepr")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorRepr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<TensorRepr> for Tensor {
    type Error = String;
    fn try_from(r: TensorRepr) -> Result<Self, String> {
        Tensor::new(r.shape, r.data).map_err(|e| e.to_string())
    }
}

impl From<Tensor> for TensorRepr {
    fn from(t: Tensor) -> Self {
        TensorRepr { shape: t.shape, data: t.data }
    }
}

impl Tensor {
    /// Validated constructor: the data length must equal the shape product and
    /// all entries must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NetError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(NetError::InvalidTensor(format!(
                "shape {:?} expects {} entries, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(NetError::InvalidTensor(format!(
                "non-finite entry {bad} in tensor of shape {shape:?}"
            )));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    /// 1-D tensor carrying token ids as floats, for models whose first
    /// encoder layer is an embedding lookup.
    pub fn from_token_ids(tokens: &[usize]) -> Self {
        Self::vector(tokens.iter().map(|&t| t as f64).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Kernels shared by the plain forward pass, the tape ops and their backward
// rules. All loops run in a fixed order so results are bit-reproducible.
// ---------------------------------------------------------------------------

/// `y = W x + b` with `W: [out, in]`.
pub(crate) fn affine(w: &Tensor, b: &Tensor, x: &[f64], out: &mut Vec<f64>) {
    let (rows, cols) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(cols, x.len());
    out.clear();
    out.reserve(rows);
    for r in 0..rows {
        let wr = &w.data[r * cols..(r + 1) * cols];
        let mut acc = b.data[r];
        for c in 0..cols {
            acc += wr[c] * x[c];
        }
        out.push(acc);
    }
}

/// `y = |W| x` (no bias); used for interval radii.
pub(crate) fn affine_abs(w: &Tensor, x: &[f64], out: &mut Vec<f64>) {
    let (rows, cols) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(cols, x.len());
    out.clear();
    out.reserve(rows);
    for r in 0..rows {
        let wr = &w.data[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += wr[c].abs() * x[c];
        }
        out.push(acc);
    }
}

/// Valid (no padding) 1-D convolution over a `[len, in_ch]` sequence with a
/// `[out_ch, in_ch, k]` kernel, producing `[len - k + 1, out_ch]`.
pub(crate) fn conv1d(w: &Tensor, bias: Option<&Tensor>, x: &Tensor, abs_w: bool) -> Tensor {
    let (oc, ic, k) = (w.shape[0], w.shape[1], w.shape[2]);
    let (len, xc) = (x.shape[0], x.shape[1]);
    debug_assert_eq!(ic, xc);
    debug_assert!(len >= k);
    let out_len = len - k + 1;
    let mut out = vec![0.0f64; out_len * oc];
    for t in 0..out_len {
        for o in 0..oc {
            let mut acc = bias.map_or(0.0, |b| b.data[o]);
            for c in 0..ic {
                for dt in 0..k {
                    let wv = w.data[(o * ic + c) * k + dt];
                    let wv = if abs_w { wv.abs() } else { wv };
                    acc += wv * x.data[(t + dt) * xc + c];
                }
            }
            out[t * oc + o] = acc;
        }
    }
    Tensor::from_parts(vec![out_len, oc], out)
}

/// Column means of a `[len, ch]` sequence.
pub(crate) fn mean_pool_rows(x: &Tensor) -> Tensor {
    let (len, ch) = (x.shape[0], x.shape[1]);
    let mut out = vec![0.0f64; ch];
    for t in 0..len {
        for c in 0..ch {
            out[c] += x.data[t * ch + c];
        }
    }
    let inv = 1.0 / len as f64;
    for v in &mut out {
        *v *= inv;
    }
    Tensor::from_parts(vec![ch], out)
}

/// Numerically stable log-softmax (max-shifted).
pub(crate) fn log_softmax(x: &[f64], out: &mut Vec<f64>) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lse = 0.0;
    for &v in x {
        lse += (v - max).exp();
    }
    let lse = lse.ln() + max;
    out.clear();
    out.extend(x.iter().map(|&v| v - lse));
}

/// Index of the largest entry, ties broken toward the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
