//! Multilayer perceptron: forward pass with activation capture, exact
//! backpropagation of the mean cross-entropy, SGD steps in either
//! direction, global-norm gradient clipping, and checkpoint I/O.
//!
//! Hidden layers use ReLU (derivative at exactly 0 taken as 0); the output
//! layer is linear. All parameters and activations are `f64`.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::seed;
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

/// One layer's parameters or parameter-shaped quantities: an `out×in`
/// weight matrix plus a bias vector of length `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl ParamBlock {
    fn zeros_like(&self) -> ParamBlock {
        ParamBlock {
            weight: DenseMatrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn congruent(&self, other: &ParamBlock) -> bool {
        self.weight.rows() == other.weight.rows()
            && self.weight.cols() == other.weight.cols()
            && self.bias.len() == other.bias.len()
    }
}

/// Ordered list of layers; layer l+1's input dimension equals layer l's
/// output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<ParamBlock>,
}

/// Gradients (or parameter deltas) with the same shape as a model.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<ParamBlock>,
}

/// Logits plus the input each layer saw during the forward pass;
/// `layer_inputs[0]` is the raw batch.
#[derive(Debug, Clone)]
pub struct ForwardCapture {
    pub logits: DenseMatrix,
    pub layer_inputs: Vec<DenseMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDirection {
    Descend,
    Ascend,
}

impl ModelParams {
    pub fn new(layers: Vec<ParamBlock>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model needs at least one layer"));
        }
        for (l, block) in layers.iter().enumerate() {
            if block.bias.len() != block.weight.rows() {
                return Err(Error::invalid(format!(
                    "layer {l}: bias length {} does not match output dim {}",
                    block.bias.len(),
                    block.weight.rows()
                )));
            }
            if l > 0 && layers[l - 1].weight.rows() != block.weight.cols() {
                return Err(Error::invalid(format!(
                    "layer {l}: input dim {} does not match previous output dim {}",
                    block.weight.cols(),
                    layers[l - 1].weight.rows()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform initialization: each layer's weights drawn uniformly
    /// from ±sqrt(6/(fan_in+fan_out)) in row-major order, biases zero.
    pub fn init(dims: &[usize], init_seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("need at least input and output dims"));
        }
        let mut rng = seed::rng(init_seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight =
                DenseMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
            layers.push(ParamBlock {
                weight,
                bias: vec![0.0; fan_out],
            });
        }
        Self::new(layers)
    }

    /// The 784-200-100-10 architecture used for MNIST.
    pub fn mnist_mlp(init_seed: u64) -> Self {
        Self::init(&[784, 200, 100, 10], init_seed).expect("static dims")
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.rows()
    }

    pub fn zeros_like(&self) -> GradientSet {
        GradientSet {
            layers: self.layers.iter().map(ParamBlock::zeros_like).collect(),
        }
    }

    pub fn congruent(&self, grads: &GradientSet) -> bool {
        self.layers.len() == grads.layers.len()
            && self
                .layers
                .iter()
                .zip(&grads.layers)
                .all(|(a, b)| a.congruent(b))
    }
}

impl GradientSet {
    pub fn scale(&self, s: f64) -> GradientSet {
        GradientSet {
            layers: self
                .layers
                .iter()
                .map(|b| ParamBlock {
                    weight: b.weight.scale(s),
                    bias: b.bias.iter().map(|x| x * s).collect(),
                })
                .collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &GradientSet) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::invalid("gradient layer count mismatch"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.axpy(alpha, &b.weight)?;
            if a.bias.len() != b.bias.len() {
                return Err(Error::invalid("gradient bias length mismatch"));
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    /// L2 norm over every weight and bias entry.
    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for b in &self.layers {
            acc += b.weight.data().iter().map(|x| x * x).sum::<f64>();
            acc += b.bias.iter().map(|x| x * x).sum::<f64>();
        }
        acc.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0_f64;
        for b in &self.layers {
            m = m.max(b.weight.max_abs());
            m = b.bias.iter().fold(m, |acc, x| acc.max(x.abs()));
        }
        m
    }
}

/// `new − old`, as a gradient-shaped delta.
pub fn model_delta(new: &ModelParams, old: &ModelParams) -> Result<GradientSet> {
    if new.layers.len() != old.layers.len() {
        return Err(Error::invalid("model layer count mismatch"));
    }
    let mut delta = new.zeros_like();
    for ((d, n), o) in delta.layers.iter_mut().zip(&new.layers).zip(&old.layers) {
        d.weight = n.weight.sub(&o.weight)?;
        d.bias = n.bias.iter().zip(&o.bias).map(|(a, b)| a - b).collect();
    }
    Ok(delta)
}

/// `model + scale · delta`, as a new model.
pub fn apply_delta(model: &ModelParams, delta: &GradientSet, scale: f64) -> Result<ModelParams> {
    if !model.congruent(delta) {
        return Err(Error::invalid("delta shape does not match model"));
    }
    let mut out = model.clone();
    for (layer, d) in out.layers.iter_mut().zip(&delta.layers) {
        layer.weight.axpy(scale, &d.weight)?;
        for (b, g) in layer.bias.iter_mut().zip(&d.bias) {
            *b += scale * g;
        }
    }
    Ok(out)
}

fn forward_impl(
    model: &ModelParams,
    batch: &DenseMatrix,
    capture: bool,
) -> Result<(DenseMatrix, Vec<DenseMatrix>)> {
    if batch.cols() != model.input_dim() {
        return Err(Error::invalid(format!(
            "batch has {} features, model expects {}",
            batch.cols(),
            model.input_dim()
        )));
    }
    let n_layers = model.layers.len();
    let mut inputs = Vec::with_capacity(if capture { n_layers } else { 0 });
    let mut x = batch.clone();
    for (l, block) in model.layers.iter().enumerate() {
        if capture {
            inputs.push(x.clone());
        }
        // z = x · Wᵀ + b
        let mut z = x.matmul_transb(&block.weight)?;
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            for (v, b) in row.iter_mut().zip(&block.bias) {
                *v += b;
            }
        }
        if l + 1 < n_layers {
            for v in z.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        x = z;
    }
    Ok((x, inputs))
}

/// Forward pass that records the input fed to every layer.
pub fn forward_capture(model: &ModelParams, batch: &DenseMatrix) -> Result<ForwardCapture> {
    let (logits, layer_inputs) = forward_impl(model, batch, true)?;
    Ok(ForwardCapture {
        logits,
        layer_inputs,
    })
}

/// Forward pass returning logits only.
pub fn forward_logits(model: &ModelParams, batch: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(forward_impl(model, batch, false)?.0)
}

/// Mean over the batch of `−log softmax(logits)[label]`, with max-shifted
/// exponentials for stability.
pub fn cross_entropy(logits: &DenseMatrix, labels: &[u8]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} logit rows vs {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let classes = logits.cols();
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        total += log_sum - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// `softmax(logits) − onehot(labels)`, scaled by 1/batch — the gradient of
/// the mean cross-entropy with respect to the logits.
fn logit_gradient(logits: &DenseMatrix, labels: &[u8]) -> DenseMatrix {
    let n = logits.rows() as f64;
    let mut d = logits.clone();
    for r in 0..d.rows() {
        let label = labels[r] as usize;
        let row = d.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    d
}

/// Exact gradients of the mean cross-entropy, plus the loss itself.
pub fn backward_with_loss(
    model: &ModelParams,
    batch: &DenseMatrix,
    labels: &[u8],
) -> Result<(GradientSet, f64)> {
    let capture = forward_capture(model, batch)?;
    let loss = cross_entropy(&capture.logits, labels)?;
    let mut grads = model.zeros_like();

    // d = dL/dz for the current layer, walking backwards.
    let mut d = logit_gradient(&capture.logits, labels);
    for l in (0..model.layers.len()).rev() {
        let x = &capture.layer_inputs[l];
        grads.layers[l].weight = d.matmul_transa(x)?;
        let mut bias = vec![0.0; d.cols()];
        for r in 0..d.rows() {
            for (b, v) in bias.iter_mut().zip(d.row(r)) {
                *b += v;
            }
        }
        grads.layers[l].bias = bias;
        if l > 0 {
            // dX = d · W, masked by ReLU'(z) = [x > 0] of this layer's input.
            let mut dx = d.matmul(&model.layers[l].weight)?;
            for (v, xin) in dx.data_mut().iter_mut().zip(x.data()) {
                if *xin <= 0.0 {
                    *v = 0.0;
                }
            }
            d = dx;
        }
    }
    Ok((grads, loss))
}

/// Exact gradients of the mean cross-entropy w.r.t. every weight and bias.
pub fn backward(model: &ModelParams, batch: &DenseMatrix, labels: &[u8]) -> Result<GradientSet> {
    Ok(backward_with_loss(model, batch, labels)?.0)
}

/// One SGD step: `p ∓ lr·g` depending on direction. Returns a new model.
pub fn sgd_step(
    model: &ModelParams,
    grads: &GradientSet,
    lr: f64,
    direction: StepDirection,
) -> Result<ModelParams> {
    let scale = match direction {
        StepDirection::Descend => -lr,
        StepDirection::Ascend => lr,
    };
    apply_delta(model, grads, scale)
}

/// If the global L2 norm exceeds `max_norm`, scale all entries uniformly
/// down to it; otherwise return the gradients unchanged.
pub fn clip_global_norm(grads: &GradientSet, max_norm: f64) -> Result<GradientSet> {
    if !(max_norm > 0.0) {
        return Err(Error::invalid(format!(
            "clip norm must be positive, got {max_norm}"
        )));
    }
    let norm = grads.global_norm();
    if norm <= max_norm {
        Ok(grads.clone())
    } else {
        Ok(grads.scale(max_norm / norm))
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format: little-endian binary.
//   magic "FSCK" | version u32 | layer count u32 |
//   per layer: rows u32 | cols u32 | row-major weight f64s |
//              bias length u32 | bias f64s
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"FSCK";
const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, model: &ModelParams) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for block in &model.layers {
        buf.extend_from_slice(&(block.weight.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(block.weight.cols() as u32).to_le_bytes());
        for v in block.weight.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(block.bias.len() as u32).to_le_bytes());
        for v in &block.bias {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format("checkpoint truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = ByteReader { buf: &bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format("bad checkpoint magic, expected FSCK"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        let bias_len = r.u32()? as usize;
        let mut bias = Vec::with_capacity(bias_len);
        for _ in 0..bias_len {
            bias.push(r.f64()?);
        }
        layers.push(ParamBlock {
            weight: DenseMatrix::new(rows, cols, data).map_err(|e| Error::format(e.to_string()))?,
            bias,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after checkpoint payload"));
    }
    ModelParams::new(layers).map_err(|e| Error::format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: Vec<Vec<f64>>) -> DenseMatrix {
        let cols = rows[0].len();
        let n = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        DenseMatrix::new(n, cols, flat).unwrap()
    }

    #[test]
    fn forward_zero_model_gives_zero_logits() {
        let model = ModelParams::new(vec![
            ParamBlock {
                weight: DenseMatrix::zeros(3, 4),
                bias: vec![0.0; 3],
            },
            ParamBlock {
                weight: DenseMatrix::zeros(2, 3),
                bias: vec![0.0; 2],
            },
        ])
        .unwrap();
        let b = batch(vec![vec![1.0, -2.0, 3.0, 0.5]]);
        let cap = forward_capture(&model, &b).unwrap();
        assert!(cap.logits.data().iter().all(|x| *x == 0.0));
        assert_eq!(cap.layer_inputs.len(), 2);
        assert_eq!(cap.layer_inputs[0], b);
        assert!(cap.layer_inputs[1].data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn forward_identity_layer_passes_input_through() {
        let model = ModelParams::new(vec![ParamBlock {
            weight: DenseMatrix::identity(3),
            bias: vec![0.0; 3],
        }])
        .unwrap();
        let b = batch(vec![vec![0.5, -1.5, 2.0]]);
        let cap = forward_capture(&model, &b).unwrap();
        assert_eq!(cap.logits, b);
    }

    #[test]
    fn forward_matches_direct_recomputation() {
        // Seeded 2-2-2 model on input (1, 0); oracle recomputes
        // W2·relu(W1·x + b1) + b2 element by element.
        let model = ModelParams::init(&[2, 2, 2], 99).unwrap();
        let b = batch(vec![vec![1.0, 0.0]]);
        let cap = forward_capture(&model, &b).unwrap();

        let w1 = &model.layers[0].weight;
        let b1 = &model.layers[0].bias;
        let w2 = &model.layers[1].weight;
        let b2 = &model.layers[1].bias;
        let h: Vec<f64> = (0..2)
            .map(|i| (w1.get(i, 0) * 1.0 + w1.get(i, 1) * 0.0 + b1[i]).max(0.0))
            .collect();
        for j in 0..2 {
            let expect = w2.get(j, 0) * h[0] + w2.get(j, 1) * h[1] + b2[j];
            assert!((cap.logits.get(0, j) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let model = ModelParams::init(&[3, 2], 1).unwrap();
        let b = batch(vec![vec![1.0, 2.0]]);
        assert!(matches!(
            forward_capture(&model, &b),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn cross_entropy_closed_forms() {
        // Uniform logits over 10 classes.
        let logits = DenseMatrix::zeros(1, 10);
        let ce = cross_entropy(&logits, &[3]).unwrap();
        assert!((ce - 10.0_f64.ln()).abs() < 1e-12);

        // Saturated true class.
        let mut sat = DenseMatrix::zeros(1, 10);
        sat.set(0, 7, 1000.0);
        assert!(cross_entropy(&sat, &[7]).unwrap() < 1e-12);

        // logits (1, 2), label 1 → ln(1 + e^{-1}).
        let two = batch(vec![vec![1.0, 2.0]]);
        let ce = cross_entropy(&two, &[1]).unwrap();
        assert!((ce - (1.0 + (-1.0_f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = DenseMatrix::zeros(1, 4);
        assert!(matches!(
            cross_entropy(&logits, &[4]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn backward_saturated_sample_has_zero_gradient() {
        // A sample classified with probability ~1 contributes ~zero gradient.
        let model = ModelParams::new(vec![ParamBlock {
            weight: DenseMatrix::new(3, 1, vec![0.0, 1000.0, 0.0]).unwrap(),
            bias: vec![0.0; 3],
        }])
        .unwrap();
        let grads = backward(&model, &batch(vec![vec![1.0]]), &[1]).unwrap();
        assert!(grads.max_abs() < 1e-12);
    }

    #[test]
    fn backward_single_linear_layer_closed_form() {
        // Weight gradient must equal (softmax(logits) − onehot) ⊗ input.
        let model = ModelParams::init(&[3, 4], 5).unwrap();
        let x = vec![0.3, -0.7, 1.1];
        let b = batch(vec![x.clone()]);
        let grads = backward(&model, &b, &[2]).unwrap();
        let logits = forward_logits(&model, &b).unwrap();
        let row = logits.row(0);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for c in 0..4 {
            let mut d = exps[c] / sum;
            if c == 2 {
                d -= 1.0;
            }
            for (i, xi) in x.iter().enumerate() {
                assert!((grads.layers[0].weight.get(c, i) - d * xi).abs() < 1e-12);
            }
            assert!((grads.layers[0].bias[c] - d).abs() < 1e-12);
        }
    }

    /// Central finite differences over every parameter of the model.
    pub(crate) fn finite_difference_grads(
        model: &ModelParams,
        b: &DenseMatrix,
        labels: &[u8],
        h: f64,
    ) -> GradientSet {
        let mut out = model.zeros_like();
        for l in 0..model.layers.len() {
            for r in 0..model.layers[l].weight.rows() {
                for c in 0..model.layers[l].weight.cols() {
                    let mut plus = model.clone();
                    let mut minus = model.clone();
                    plus.layers[l]
                        .weight
                        .set(r, c, model.layers[l].weight.get(r, c) + h);
                    minus.layers[l]
                        .weight
                        .set(r, c, model.layers[l].weight.get(r, c) - h);
                    let lp = cross_entropy(&forward_logits(&plus, b).unwrap(), labels).unwrap();
                    let lm = cross_entropy(&forward_logits(&minus, b).unwrap(), labels).unwrap();
                    out.layers[l].weight.set(r, c, (lp - lm) / (2.0 * h));
                }
            }
            for i in 0..model.layers[l].bias.len() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                plus.layers[l].bias[i] += h;
                minus.layers[l].bias[i] -= h;
                let lp = cross_entropy(&forward_logits(&plus, b).unwrap(), labels).unwrap();
                let lm = cross_entropy(&forward_logits(&minus, b).unwrap(), labels).unwrap();
                out.layers[l].bias[i] = (lp - lm) / (2.0 * h);
            }
        }
        out
    }

    pub(crate) fn assert_grads_close(analytic: &GradientSet, numeric: &GradientSet, tol: f64) {
        for (a, n) in analytic.layers.iter().zip(&numeric.layers) {
            for (x, y) in a
                .weight
                .data()
                .iter()
                .chain(a.bias.iter())
                .zip(n.weight.data().iter().chain(n.bias.iter()))
            {
                let err = if y.abs() < 1e-8 {
                    (x - y).abs()
                } else {
                    (x - y).abs() / y.abs()
                };
                assert!(err <= tol, "gradient mismatch: analytic {x}, numeric {y}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seed::rng(1234);
        let model = ModelParams::init(&[6, 5, 4], 42).unwrap();
        let b = DenseMatrix::from_fn(3, 6, |_, _| rng.random_range(-1.0..1.0));
        let labels = [0u8, 2, 3];
        let analytic = backward(&model, &b, &labels).unwrap();
        let numeric = finite_difference_grads(&model, &b, &labels, 1e-5);
        assert_grads_close(&analytic, &numeric, 1e-5);
    }

    #[test]
    fn sgd_step_zero_lr_is_identity() {
        let model = ModelParams::init(&[3, 2], 7).unwrap();
        let grads = backward(&model, &batch(vec![vec![1.0, 0.0, -1.0]]), &[1]).unwrap();
        let stepped = sgd_step(&model, &grads, 0.0, StepDirection::Descend).unwrap();
        assert_eq!(stepped, model);
    }

    #[test]
    fn descend_then_ascend_round_trips() {
        let model = ModelParams::init(&[3, 2], 8).unwrap();
        let grads = backward(&model, &batch(vec![vec![0.2, 0.4, -0.6]]), &[0]).unwrap();
        let down = sgd_step(&model, &grads, 0.05, StepDirection::Descend).unwrap();
        let back = sgd_step(&down, &grads, 0.05, StepDirection::Ascend).unwrap();
        for (a, b) in back.layers.iter().zip(&model.layers) {
            assert!(a.weight.max_abs_diff(&b.weight) <= 1e-15);
        }
    }

    #[test]
    fn descend_step_decreases_loss() {
        let mut rng = seed::rng(4321);
        let model = ModelParams::init(&[5, 4, 3], 17).unwrap();
        let b = DenseMatrix::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
        let labels = [0u8, 1, 2, 0];
        let (grads, before) = backward_with_loss(&model, &b, &labels).unwrap();
        let stepped = sgd_step(&model, &grads, 1e-3, StepDirection::Descend).unwrap();
        let after = cross_entropy(&forward_logits(&stepped, &b).unwrap(), &labels).unwrap();
        assert!(after < before, "loss {after} not below {before}");
    }

    #[test]
    fn clip_global_norm_behaviour() {
        let model = ModelParams::init(&[2, 2], 3).unwrap();
        let mut grads = model.zeros_like();
        grads.layers[0].weight.set(0, 0, 1.0);
        // Norm 1, limit 5: untouched.
        let clipped = clip_global_norm(&grads, 5.0).unwrap();
        assert_eq!(clipped, grads);

        // Norm 10, limit 5: halved.
        grads.layers[0].weight.set(0, 0, 6.0);
        grads.layers[0].bias[1] = 8.0;
        let clipped = clip_global_norm(&grads, 5.0).unwrap();
        assert!((clipped.global_norm() - 5.0).abs() < 1e-12);
        assert!((clipped.layers[0].weight.get(0, 0) - 3.0).abs() < 1e-12);
        assert!((clipped.layers[0].bias[1] - 4.0).abs() < 1e-12);

        // Zero stays zero.
        let zero = model.zeros_like();
        assert_eq!(clip_global_norm(&zero, 5.0).unwrap(), zero);

        assert!(matches!(
            clip_global_norm(&zero, 0.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::init(&[10, 8, 4], 2024).unwrap();
        let b = ModelParams::init(&[10, 8, 4], 2024).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(&[10, 8, 4], 2025).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = ModelParams::init(&[7, 5, 3], 11).unwrap();
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, model);

        // Same model saved twice → identical bytes.
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&path2, &model).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = ModelParams::init(&[4, 2], 1).unwrap();
        save_checkpoint(&path, &model).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));

        let good = {
            save_checkpoint(&path, &model).unwrap();
            std::fs::read(&path).unwrap()
        };
        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
