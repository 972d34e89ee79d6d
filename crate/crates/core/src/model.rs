//! The time-directional CNN: `n_conv` time-only convolutions (shared across signal
//! columns), flatten, ReLU dense layers and a softmax output.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::kernels::{
    conv_backward_raw, conv_forward_raw, dense_backward_raw, dense_forward_raw, relu_inplace, relu_mask_inplace,
    softmax_raw, weighted_cross_entropy, ConvDims,
};
use crate::seed::rng_from_seed;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "fgssa-cnn";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Convolution size along time.
    pub conv_size: usize,
    /// Filters per convolution layer.
    pub n_filters: usize,
    pub n_conv: usize,
    pub dense_widths: Vec<usize>,
    pub window_len: usize,
    pub n_signals: usize,
    pub n_classes: usize,
}

impl Hyperparams {
    pub fn new(window_len: usize, n_signals: usize, n_classes: usize) -> Self {
        Self {
            conv_size: 10,
            n_filters: 10,
            n_conv: 3,
            dense_widths: vec![200, 100, 50],
            window_len,
            n_signals,
            n_classes,
        }
    }

    /// `w - n_conv * (conv_size - 1)`, or `None` when that is below 1.
    pub fn feature_len(&self) -> Option<usize> {
        let shrink = self.n_conv.checked_mul(self.conv_size.checked_sub(1)?)?;
        self.window_len.checked_sub(shrink).filter(|&v| v >= 1)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("conv_size", self.conv_size),
            ("n_filters", self.n_filters),
            ("n_conv", self.n_conv),
            ("window_len", self.window_len),
            ("n_signals", self.n_signals),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.dense_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument("dense widths must be positive".into()));
        }
        if self.feature_len().is_none() {
            return Err(Error::InfeasibleShape(format!(
                "window {} leaves no feature map after {} convolutions of size {}",
                self.window_len, self.n_conv, self.conv_size
            )));
        }
        Ok(())
    }

    /// Input, convolutions, flatten, hidden dense layers and output.
    pub fn layer_count(&self) -> usize {
        1 + self.n_conv + 1 + self.dense_widths.len() + 1
    }
}

/// Which scalar `feature_gradients` differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientTarget {
    /// Softmax probability of the estimated class.
    #[default]
    Softmax,
    /// Pre-softmax score of the estimated class.
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub kernels: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    hyperparams: Hyperparams,
    seed: u64,
    feature_len: usize,
    conv: Vec<ConvLayer>,
    dense: Vec<DenseLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Last convolution layer after ReLU, `[feature_len, n_signals, n_filters]`.
    pub features: Tensor,
}

/// Feature maps of the last convolution layer together with the gradient of the
/// estimated-class output with respect to every feature-map entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGradientBundle {
    /// `[feature_len, n_signals, n_filters]`
    pub features: Tensor,
    /// Same layout as `features`.
    pub gradients: Tensor,
    pub estimated_class: usize,
    pub output: Vec<f64>,
    pub target: GradientTarget,
}

impl FeatureGradientBundle {
    pub fn feature_len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn n_signals(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn n_filters(&self) -> usize {
        self.features.shape()[2]
    }

    fn column(t: &Tensor, signal: usize, filter: usize) -> Vec<f64> {
        let (ns, nf) = (t.shape()[1], t.shape()[2]);
        (0..t.shape()[0])
            .map(|j| t.data()[(j * ns + signal) * nf + filter])
            .collect()
    }

    /// `f^{s,k}` as a length-`feature_len` vector.
    pub fn feature_map(&self, signal: usize, filter: usize) -> Vec<f64> {
        Self::column(&self.features, signal, filter)
    }

    pub fn gradient_map(&self, signal: usize, filter: usize) -> Vec<f64> {
        Self::column(&self.gradients, signal, filter)
    }
}

/// Activations kept for the backward pass.
struct Cache {
    /// `conv_acts[0]` is the input; `conv_acts[j + 1]` is conv layer `j` after ReLU.
    conv_acts: Vec<Vec<f64>>,
    /// `dense_acts[0]` is the flattened features; `dense_acts[i + 1]` is hidden layer `i` after ReLU.
    dense_acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

/// Lowest-index argmax of a probability vector.
pub fn predict_class(y: &[f64]) -> Result<usize> {
    if y.is_empty() {
        return Err(Error::InvalidArgument("predict_class of an empty vector".into()));
    }
    let mut best = 0;
    for (i, &v) in y.iter().enumerate().skip(1) {
        if v > y[best] {
            best = i;
        }
    }
    Ok(best)
}

impl CnnModel {
    /// Builds a model with fan-in scaled uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`
    /// and zero biases, drawn deterministically from `seed`.
    pub fn build(hyperparams: Hyperparams, seed: u64) -> Result<Self> {
        hyperparams.validate()?;
        let feature_len = hyperparams.feature_len().expect("validated");
        let mut rng = rng_from_seed(seed);
        let mut uniform = |shape: Vec<usize>, fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::from_parts_unchecked(shape, data)
        };
        let hp = &hyperparams;
        let mut conv = Vec::with_capacity(hp.n_conv);
        for j in 0..hp.n_conv {
            let cin = if j == 0 { 1 } else { hp.n_filters };
            conv.push(ConvLayer {
                kernels: uniform(vec![hp.conv_size, 1, cin, hp.n_filters], hp.conv_size * cin),
                bias: Tensor::zeros(vec![hp.n_filters]),
            });
        }
        let mut widths = vec![feature_len * hp.n_signals * hp.n_filters];
        widths.extend(&hp.dense_widths);
        widths.push(hp.n_classes);
        let dense = widths
            .windows(2)
            .map(|w| DenseLayer {
                weights: uniform(vec![w[1], w[0]], w[0]),
                bias: Tensor::zeros(vec![w[1]]),
            })
            .collect();
        Ok(Self {
            hyperparams,
            seed,
            feature_len,
            conv,
            dense,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyperparams
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Length of each last-layer feature map along time.
    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn flatten_width(&self) -> usize {
        self.feature_len * self.hyperparams.n_signals * self.hyperparams.n_filters
    }

    pub fn conv_layers(&self) -> &[ConvLayer] {
        &self.conv
    }

    pub fn dense_layers(&self) -> &[DenseLayer] {
        &self.dense
    }

    /// Parameters in canonical order: each conv layer's kernels then bias, then each
    /// dense layer's weights then bias.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(2 * (self.conv.len() + self.dense.len()));
        for c in &self.conv {
            out.push(&c.kernels);
            out.push(&c.bias);
        }
        for d in &self.dense {
            out.push(&d.weights);
            out.push(&d.bias);
        }
        out
    }

    pub(crate) fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(2 * (self.conv.len() + self.dense.len()));
        for c in &mut self.conv {
            out.push(&mut c.kernels);
            out.push(&mut c.bias);
        }
        for d in &mut self.dense {
            out.push(&mut d.weights);
            out.push(&mut d.bias);
        }
        out
    }

    /// Zero tensors shaped like [`Self::parameters`].
    pub fn zero_gradients(&self) -> Vec<Tensor> {
        self.parameters()
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    fn conv_dims(&self, layer: usize) -> ConvDims {
        let hp = &self.hyperparams;
        ConvDims {
            time: hp.window_len - layer * (hp.conv_size - 1),
            signals: hp.n_signals,
            channels_in: if layer == 0 { 1 } else { hp.n_filters },
            channels_out: hp.n_filters,
            conv_size: hp.conv_size,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        const CTX: &str = "CnnModel::forward";
        let hp = &self.hyperparams;
        x.expect_rank(CTX, 2)?;
        if x.shape()[0] != hp.window_len {
            return Err(shape_err(CTX, "window length", hp.window_len, x.shape()[0]));
        }
        if x.shape()[1] != hp.n_signals {
            return Err(shape_err(CTX, "signal count", hp.n_signals, x.shape()[1]));
        }
        Ok(())
    }

    fn head_forward(&self, features: Vec<f64>) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut dense_acts = Vec::with_capacity(self.dense.len());
        dense_acts.push(features);
        let last = self.dense.len() - 1;
        let mut logits = Vec::new();
        for (i, layer) in self.dense.iter().enumerate() {
            let mut out = vec![0.0; layer.bias.len()];
            dense_forward_raw(
                dense_acts.last().expect("non-empty"),
                layer.weights.data(),
                layer.bias.data(),
                &mut out,
            );
            if i == last {
                logits = out;
            } else {
                relu_inplace(&mut out);
                dense_acts.push(out);
            }
        }
        (dense_acts, logits)
    }

    /// Forward pass on a `[window_len * n_signals]` row-major window.
    fn forward_cached(&self, x: &[f64]) -> Cache {
        let mut conv_acts = Vec::with_capacity(self.conv.len() + 1);
        conv_acts.push(x.to_vec());
        for (j, layer) in self.conv.iter().enumerate() {
            let dims = self.conv_dims(j);
            let mut out = vec![0.0; dims.output_len()];
            conv_forward_raw(
                dims,
                conv_acts.last().expect("non-empty"),
                layer.kernels.data(),
                layer.bias.data(),
                &mut out,
            );
            relu_inplace(&mut out);
            conv_acts.push(out);
        }
        let features = conv_acts.last().expect("non-empty").clone();
        let (dense_acts, logits) = self.head_forward(features);
        let probs = softmax_raw(&logits);
        Cache {
            conv_acts,
            dense_acts,
            logits,
            probs,
        }
    }

    /// Backpropagates `d_logits` through the dense head. Accumulates into `grads`
    /// when given and returns the gradient with respect to the flattened features.
    fn head_backward(&self, cache: &Cache, d_logits: &[f64], mut grads: Option<&mut [Tensor]>) -> Vec<f64> {
        let offset = 2 * self.conv.len();
        let mut upstream = d_logits.to_vec();
        for i in (0..self.dense.len()).rev() {
            if i + 1 < self.dense.len() {
                relu_mask_inplace(&cache.dense_acts[i + 1], &mut upstream);
            }
            let input = &cache.dense_acts[i];
            let mut d_input = vec![0.0; input.len()];
            let layer = &self.dense[i];
            match grads.as_deref_mut() {
                Some(g) => {
                    let (gw, gb) = g[offset + 2 * i..].split_at_mut(1);
                    dense_backward_raw(
                        input,
                        layer.weights.data(),
                        &upstream,
                        gw[0].data_mut(),
                        gb[0].data_mut(),
                        Some(&mut d_input),
                    );
                }
                None => {
                    let n_in = input.len();
                    for (o, &gv) in upstream.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let row = &layer.weights.data()[o * n_in..][..n_in];
                        for (d, &w) in d_input.iter_mut().zip(row) {
                            *d += w * gv;
                        }
                    }
                }
            }
            upstream = d_input;
        }
        upstream
    }

    fn conv_backward(&self, cache: &Cache, d_features: Vec<f64>, grads: &mut [Tensor]) {
        let mut upstream = d_features;
        for j in (0..self.conv.len()).rev() {
            relu_mask_inplace(&cache.conv_acts[j + 1], &mut upstream);
            let dims = self.conv_dims(j);
            let (gk, gb) = grads[2 * j..].split_at_mut(1);
            if j == 0 {
                conv_backward_raw(
                    dims,
                    &cache.conv_acts[0],
                    self.conv[0].kernels.data(),
                    &upstream,
                    gk[0].data_mut(),
                    gb[0].data_mut(),
                    None,
                );
            } else {
                let mut d_input = vec![0.0; dims.input_len()];
                conv_backward_raw(
                    dims,
                    &cache.conv_acts[j],
                    self.conv[j].kernels.data(),
                    &upstream,
                    gk[0].data_mut(),
                    gb[0].data_mut(),
                    Some(&mut d_input),
                );
                upstream = d_input;
            }
        }
    }

    fn features_tensor(&self, flat: Vec<f64>) -> Tensor {
        let hp = &self.hyperparams;
        Tensor::from_parts_unchecked(vec![self.feature_len, hp.n_signals, hp.n_filters], flat)
    }

    /// Class probabilities and last-layer feature maps for one `[window_len, n_signals]` window.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardOutput> {
        self.check_input(x)?;
        Ok(self.forward_slice(x.data()))
    }

    pub(crate) fn forward_slice(&self, x: &[f64]) -> ForwardOutput {
        let mut cache = self.forward_cached(x);
        let features = cache.conv_acts.pop().expect("non-empty");
        ForwardOutput {
            logits: cache.logits,
            probs: cache.probs,
            features: self.features_tensor(features),
        }
    }

    pub(crate) fn predict_slice(&self, x: &[f64]) -> usize {
        let cache = self.forward_cached(x);
        predict_class(&cache.probs).expect("non-empty output")
    }

    /// Runs only the layers above the feature maps: returns `(logits, probs)`.
    pub fn forward_from_features(&self, features: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        if features.len() != self.flatten_width() {
            return Err(shape_err(
                "forward_from_features",
                "feature element count",
                self.flatten_width(),
                features.len(),
            ));
        }
        let (_, logits) = self.head_forward(features.data().to_vec());
        let probs = softmax_raw(&logits);
        Ok((logits, probs))
    }

    /// Gradient of the softmax output of the estimated class with respect to the feature maps.
    pub fn feature_gradients(&self, x: &Tensor) -> Result<FeatureGradientBundle> {
        self.feature_gradients_with(x, GradientTarget::Softmax)
    }

    pub fn feature_gradients_with(&self, x: &Tensor, target: GradientTarget) -> Result<FeatureGradientBundle> {
        self.check_input(x)?;
        Ok(self.feature_gradients_slice(x.data(), target))
    }

    pub(crate) fn feature_gradients_slice(&self, x: &[f64], target: GradientTarget) -> FeatureGradientBundle {
        let cache = self.forward_cached(x);
        let c = predict_class(&cache.probs).expect("non-empty output");
        let d_logits: Vec<f64> = match target {
            GradientTarget::Softmax => {
                let yc = cache.probs[c];
                cache
                    .probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| yc * (if i == c { 1.0 } else { 0.0 } - p))
                    .collect()
            }
            GradientTarget::Logit => (0..cache.probs.len()).map(|i| if i == c { 1.0 } else { 0.0 }).collect(),
        };
        let d_features = self.head_backward(&cache, &d_logits, None);
        FeatureGradientBundle {
            features: self.features_tensor(cache.conv_acts.last().expect("non-empty").clone()),
            gradients: self.features_tensor(d_features),
            estimated_class: c,
            output: cache.probs,
            target,
        }
    }

    /// Adds the gradients of the weighted cross-entropy loss for one window into
    /// `grads` and returns the loss.
    pub(crate) fn accumulate_gradients(
        &self,
        x: &[f64],
        true_class: usize,
        class_weights: &[f64],
        grads: &mut [Tensor],
    ) -> Result<f64> {
        let cache = self.forward_cached(x);
        let (loss, d_logits) = weighted_cross_entropy(&cache.probs, true_class, class_weights)?;
        if d_logits.iter().all(|g| *g == 0.0) {
            return Ok(loss);
        }
        let d_features = self.head_backward(&cache, &d_logits, Some(grads));
        self.conv_backward(&cache, d_features, grads);
        Ok(loss)
    }

    /// Loss and exact parameter gradients (in [`Self::parameters`] order) of the
    /// weighted cross-entropy for one window.
    pub fn backward_params(&self, x: &Tensor, true_class: usize, class_weights: &[f64]) -> Result<(f64, Vec<Tensor>)> {
        self.check_input(x)?;
        let mut grads = self.zero_gradients();
        let loss = self.accumulate_gradients(x.data(), true_class, class_weights, &mut grads)?;
        Ok((loss, grads))
    }

    /// Weighted cross-entropy loss for one window.
    pub fn loss(&self, x: &Tensor, true_class: usize, class_weights: &[f64]) -> Result<f64> {
        let out = self.forward(x)?;
        Ok(weighted_cross_entropy(&out.probs, true_class, class_weights)?.0)
    }

    /// Replaces parameter `index` (canonical order). Used by gradient checks.
    pub fn with_parameter(&self, index: usize, value: Tensor) -> Result<Self> {
        let mut m = self.clone();
        let mut params = m.parameters_mut();
        let slot = params
            .get_mut(index)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter {index}")))?;
        if slot.shape() != value.shape() {
            return Err(shape_err("with_parameter", "element count", slot.len(), value.len()));
        }
        **slot = value;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        let ckpt = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            hyperparams: &self.hyperparams,
            conv: &self.conv,
            dense: &self.dense,
        };
        Ok(serde_json::to_string_pretty(&ckpt)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(s)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a model checkpoint: {}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        // Rebuild to get reference shapes, then swap in stored parameters.
        let mut model = Self::build(ckpt.hyperparams, ckpt.seed)?;
        if ckpt.conv.len() != model.conv.len() || ckpt.dense.len() != model.dense.len() {
            return Err(Error::Format("checkpoint layer count mismatch".into()));
        }
        let stored: Vec<Tensor> = ckpt
            .conv
            .into_iter()
            .flat_map(|c| [c.kernels, c.bias])
            .chain(ckpt.dense.into_iter().flat_map(|d| [d.weights, d.bias]))
            .collect();
        for (slot, value) in model.parameters_mut().into_iter().zip(stored) {
            if slot.shape() != value.shape() {
                return Err(Error::Format(format!(
                    "checkpoint parameter shape {:?} does not match {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    seed: u64,
    hyperparams: &'a Hyperparams,
    conv: &'a [ConvLayer],
    dense: &'a [DenseLayer],
}

#[derive(Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    seed: u64,
    hyperparams: Hyperparams,
    conv: Vec<ConvLayer>,
    dense: Vec<DenseLayer>,
}
