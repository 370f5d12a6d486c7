//! Dense kernels for the stacked bidirectional LSTM tagger.
//!
//! Everything is 64-bit and row-major. A network is two bidirectional LSTM
//! layers followed by a per-token sigmoid head; see [`network`] for the
//! forward pass and backpropagation through time.

mod adam;
mod gradcheck;
mod lstm;
mod network;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, adam_update_slice, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_with};
pub use lstm::lstm_cell_forward;
pub use network::{network_backward, network_forward, predict_sentence};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        sum += a[i] * b[i];
    }
    sum
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-major dense matrix of finite `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite matrix entry {bad}")));
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `out += self · x`
    #[inline]
    pub(crate) fn gemv_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }

    /// `out += selfᵀ · y`
    #[inline]
    pub(crate) fn gemv_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), out);
            }
        }
    }

    /// `self += a · bᵀ`
    #[inline]
    pub(crate) fn rank1_acc(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        for (r, &ar) in a.iter().enumerate() {
            if ar != 0.0 {
                axpy(ar, b, &mut self.values[r * cols..(r + 1) * cols]);
            }
        }
    }
}

/// A right-padded batch of token feature rows.
///
/// `features` is laid out `[sentence][position][feature]` with `max_len`
/// positions per sentence. The mask is 1 on a prefix of each sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    batch_size: usize,
    max_len: usize,
    feature_dim: usize,
    features: Vec<f64>,
    mask: Vec<bool>,
    lengths: Vec<usize>,
}

impl SequenceBatch {
    pub fn new(
        batch_size: usize,
        max_len: usize,
        feature_dim: usize,
        features: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if features.len() != batch_size * max_len * feature_dim {
            return Err(Error::Shape(format!(
                "batch features: expected {} values, got {}",
                batch_size * max_len * feature_dim,
                features.len()
            )));
        }
        if mask.len() != batch_size * max_len {
            return Err(Error::Shape(format!(
                "batch mask: expected {} bits, got {}",
                batch_size * max_len,
                mask.len()
            )));
        }
        let mut lengths = Vec::with_capacity(batch_size);
        for b in 0..batch_size {
            let row = &mask[b * max_len..(b + 1) * max_len];
            let len = row.iter().take_while(|&&m| m).count();
            if row[len..].iter().any(|&m| m) {
                return Err(Error::Shape(format!(
                    "sentence {b}: mask is not a right-padded prefix"
                )));
            }
            lengths.push(len);
        }
        Ok(SequenceBatch {
            batch_size,
            max_len,
            feature_dim,
            features,
            mask,
            lengths,
        })
    }

    /// Pads each sentence's `len × feature_dim` rows out to `max_len`.
    pub fn from_sentences<S: AsRef<[f64]>>(
        sentences: &[S],
        feature_dim: usize,
        max_len: usize,
    ) -> Result<Self> {
        let batch_size = sentences.len();
        let mut features = vec![0.0; batch_size * max_len * feature_dim];
        let mut mask = vec![false; batch_size * max_len];
        for (b, rows) in sentences.iter().enumerate() {
            let rows = rows.as_ref();
            if feature_dim == 0 || rows.len() % feature_dim != 0 {
                return Err(Error::Shape(format!(
                    "sentence {b}: {} values is not a multiple of feature_dim {feature_dim}",
                    rows.len()
                )));
            }
            let len = rows.len() / feature_dim;
            if len > max_len {
                return Err(Error::Shape(format!(
                    "sentence {b}: length {len} exceeds max_len {max_len}"
                )));
            }
            let base = b * max_len * feature_dim;
            features[base..base + rows.len()].copy_from_slice(rows);
            mask[b * max_len..b * max_len + len].fill(true);
        }
        SequenceBatch::new(batch_size, max_len, feature_dim, features, mask)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    /// The real (unpadded) rows of sentence `b`.
    pub fn sentence(&self, b: usize) -> &[f64] {
        let base = b * self.max_len * self.feature_dim;
        &self.features[base..base + self.lengths[b] * self.feature_dim]
    }
}

/// One LSTM direction. Gate blocks are stacked in `i, f, g, o` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmDirectionParams {
    /// `4H × D` input weights.
    pub w: Matrix,
    /// `4H × H` recurrent weights.
    pub u: Matrix,
    /// Length `4H`.
    pub b: Vec<f64>,
}

impl LstmDirectionParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmDirectionParams {
            w: Matrix::zeros(4 * hidden, input),
            u: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.cols()
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn check(&self) -> Result<()> {
        let h = self.hidden();
        if self.u.rows() != 4 * h || self.w.rows() != 4 * h || self.b.len() != 4 * h {
            return Err(Error::Shape(format!(
                "LSTM direction: W {}x{}, U {}x{}, b {} inconsistent with H={h}",
                self.w.rows(),
                self.w.cols(),
                self.u.rows(),
                self.u.cols(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmParams {
    pub forward: LstmDirectionParams,
    pub backward: LstmDirectionParams,
}

impl BiLstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiLstmParams {
            forward: LstmDirectionParams::zeros(input, hidden),
            backward: LstmDirectionParams::zeros(input, hidden),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl NetworkDims {
    pub fn new(input: usize, hidden1: usize, hidden2: usize) -> Self {
        NetworkDims {
            input,
            hidden1,
            hidden2,
        }
    }
}

/// All weights of the two-layer bidirectional LSTM plus the sigmoid head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layer1: BiLstmParams,
    pub layer2: BiLstmParams,
    /// Length `2·H2`, applied to `[h2_forward; h2_backward]`.
    pub out_w: Vec<f64>,
    pub out_b: f64,
}

impl NetworkParams {
    pub fn zeros(dims: NetworkDims) -> Self {
        NetworkParams {
            layer1: BiLstmParams::zeros(dims.input, dims.hidden1),
            layer2: BiLstmParams::zeros(2 * dims.hidden1, dims.hidden2),
            out_w: vec![0.0; 2 * dims.hidden2],
            out_b: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        NetworkParams::zeros(self.dims())
    }

    pub fn dims(&self) -> NetworkDims {
        NetworkDims {
            input: self.layer1.forward.input_size(),
            hidden1: self.layer1.forward.hidden(),
            hidden2: self.layer2.forward.hidden(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.layer1.forward.input_size()
    }

    /// Validates that every block agrees with the layer-1 forward shapes.
    pub fn check(&self) -> Result<()> {
        let d = self.dims();
        for (name, p, input, hidden) in [
            ("layer1.forward", &self.layer1.forward, d.input, d.hidden1),
            ("layer1.backward", &self.layer1.backward, d.input, d.hidden1),
            ("layer2.forward", &self.layer2.forward, 2 * d.hidden1, d.hidden2),
            ("layer2.backward", &self.layer2.backward, 2 * d.hidden1, d.hidden2),
        ] {
            p.check()?;
            if p.input_size() != input || p.hidden() != hidden {
                return Err(Error::Shape(format!(
                    "{name}: expected D={input} H={hidden}, got D={} H={}",
                    p.input_size(),
                    p.hidden()
                )));
            }
        }
        if self.out_w.len() != 2 * d.hidden2 {
            return Err(Error::Shape(format!(
                "output head: expected {} weights, got {}",
                2 * d.hidden2,
                self.out_w.len()
            )));
        }
        Ok(())
    }

    /// Named views over every parameter block, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let mut out: Vec<(&'static str, Vec<usize>, &[f64])> = Vec::with_capacity(13);
        for (prefix, p) in [
            ("l1f", &self.layer1.forward),
            ("l1b", &self.layer1.backward),
            ("l2f", &self.layer2.forward),
            ("l2b", &self.layer2.backward),
        ] {
            let (wn, un, bn) = tensor_names(prefix);
            out.push((wn, vec![p.w.rows(), p.w.cols()], p.w.as_slice()));
            out.push((un, vec![p.u.rows(), p.u.cols()], p.u.as_slice()));
            out.push((bn, vec![p.b.len()], &p.b));
        }
        out.push(("out.w", vec![self.out_w.len()], &self.out_w));
        out.push(("out.b", vec![1], std::slice::from_ref(&self.out_b)));
        out
    }

    /// Mutable slices in the same order as [`NetworkParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(13);
        for p in [
            &mut self.layer1.forward,
            &mut self.layer1.backward,
            &mut self.layer2.forward,
            &mut self.layer2.backward,
        ] {
            out.push(p.w.as_mut_slice());
            out.push(p.u.as_mut_slice());
            out.push(&mut p.b);
        }
        out.push(&mut self.out_w);
        out.push(std::slice::from_mut(&mut self.out_b));
        out
    }

    /// Rebuilds parameters from named tensors produced by [`NetworkParams::tensors`].
    pub fn from_tensors(dims: NetworkDims, mut lookup: impl FnMut(&str) -> Option<Vec<f64>>) -> Result<Self> {
        let mut p = NetworkParams::zeros(dims);
        let names: Vec<(&'static str, usize)> =
            p.tensors().iter().map(|(n, _, v)| (*n, v.len())).collect();
        for ((name, len), slot) in names.into_iter().zip(p.tensors_mut()) {
            let values = lookup(name)
                .ok_or_else(|| Error::Container(format!("missing tensor {name}")))?;
            if values.len() != len {
                return Err(Error::Shape(format!(
                    "tensor {name}: expected {len} values, got {}",
                    values.len()
                )));
            }
            slot.copy_from_slice(&values);
        }
        Ok(p)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, _, v)| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

fn tensor_names(prefix: &str) -> (&'static str, &'static str, &'static str) {
    match prefix {
        "l1f" => ("l1f.W", "l1f.U", "l1f.b"),
        "l1b" => ("l1b.W", "l1b.U", "l1b.b"),
        "l2f" => ("l2f.W", "l2f.U", "l2f.b"),
        _ => ("l2b.W", "l2b.U", "l2b.b"),
    }
}

/// Clips the global L2 norm of `grads` to `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut NetworkParams, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Glorot-uniform weights, zero biases except forget-gate biases at 1.0.
pub fn init_params(seed: u64, dims: NetworkDims) -> Result<NetworkParams> {
    if dims.input == 0 || dims.hidden1 == 0 || dims.hidden2 == 0 {
        return Err(Error::Config(format!("invalid network dims {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = NetworkParams::zeros(dims);
    for dir in [
        &mut p.layer1.forward,
        &mut p.layer1.backward,
        &mut p.layer2.forward,
        &mut p.layer2.backward,
    ] {
        glorot_fill(&mut rng, &mut dir.w);
        glorot_fill(&mut rng, &mut dir.u);
        let h = dir.hidden();
        dir.b[h..2 * h].fill(1.0);
    }
    let a = glorot_bound(2 * dims.hidden2, 1);
    for w in p.out_w.iter_mut() {
        *w = sample_open(&mut rng, a);
    }
    Ok(p)
}

/// `sqrt(6 / (fan_in + fan_out))`
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot_fill(rng: &mut ChaCha8Rng, m: &mut Matrix) {
    let a = glorot_bound(m.cols(), m.rows());
    for v in m.as_mut_slice() {
        *v = sample_open(rng, a);
    }
}

fn sample_open(rng: &mut ChaCha8Rng, a: f64) -> f64 {
    loop {
        let v = rng.gen_range(-a..a);
        if v > -a {
            return v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> NetworkDims {
        NetworkDims::new(5, 4, 3)
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_params(7, dims()).unwrap();
        let b = init_params(7, dims()).unwrap();
        assert_eq!(a, b);
        let c = init_params(8, dims()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_glorot_bounds_and_forget_bias() {
        let p = init_params(3, dims()).unwrap();
        for dir in [&p.layer1.forward, &p.layer2.backward] {
            let aw = glorot_bound(dir.w.cols(), dir.w.rows());
            assert!(dir.w.as_slice().iter().all(|v| v.abs() < aw));
            let au = glorot_bound(dir.u.cols(), dir.u.rows());
            assert!(dir.u.as_slice().iter().all(|v| v.abs() < au));
            let h = dir.hidden();
            assert!(dir.b[..h].iter().all(|&v| v == 0.0));
            assert!(dir.b[h..2 * h].iter().all(|&v| v == 1.0));
            assert!(dir.b[2 * h..].iter().all(|&v| v == 0.0));
        }
        let ao = glorot_bound(6, 1);
        assert!(p.out_w.iter().all(|v| v.abs() < ao));
        assert_eq!(p.out_b, 0.0);
    }

    #[test]
    fn tensor_round_trip() {
        let p = init_params(11, dims()).unwrap();
        let named: Vec<(String, Vec<f64>)> = p
            .tensors()
            .into_iter()
            .map(|(n, _, v)| (n.to_string(), v.to_vec()))
            .collect();
        let q = NetworkParams::from_tensors(dims(), |name| {
            named.iter().find(|(n, _)| n == name).map(|(_, v)| v.clone())
        })
        .unwrap();
        assert_eq!(p, q);
        assert!(q.check().is_ok());
    }

    #[test]
    fn batch_rejects_non_prefix_mask() {
        let err = SequenceBatch::new(1, 3, 1, vec![0.0; 3], vec![true, false, true]);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut g = init_params(1, dims()).unwrap();
        g.scale(100.0);
        let before = clip_grad_norm(&mut g, 5.0);
        assert!(before > 5.0);
        assert!((g.l2_norm() - 5.0).abs() < 1e-9);
    }
}
