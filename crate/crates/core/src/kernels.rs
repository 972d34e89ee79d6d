//! Layer forward/backward kernels.
//!
//! Tensor layouts (row-major):
//! - activations: `[time, signals, channels]`
//! - convolution kernels: `[conv_size, 1, channels_in, channels_out]`
//! - dense weights: `[out, in]`
//!
//! The `*_raw` functions work on slices and accumulate into caller-owned gradient
//! buffers; the model uses them directly on its hot path. The `Tensor` functions
//! validate shapes and allocate fresh outputs.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{LayerGrads, Tensor};

/// Guard added inside the log of the cross-entropy loss.
pub const CROSS_ENTROPY_EPS: f64 = 1e-12;

/// Geometry of a time-only convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDims {
    pub time: usize,
    pub signals: usize,
    pub channels_in: usize,
    pub channels_out: usize,
    pub conv_size: usize,
}

impl ConvDims {
    pub fn out_time(&self) -> usize {
        self.time + 1 - self.conv_size
    }

    pub fn input_len(&self) -> usize {
        self.time * self.signals * self.channels_in
    }

    pub fn output_len(&self) -> usize {
        self.out_time() * self.signals * self.channels_out
    }

    pub fn kernel_len(&self) -> usize {
        self.conv_size * self.channels_in * self.channels_out
    }
}

pub(crate) fn conv_forward_raw(dims: ConvDims, input: &[f64], kernels: &[f64], bias: &[f64], out: &mut [f64]) {
    let ConvDims {
        signals,
        channels_in: cin,
        channels_out: cout,
        conv_size,
        ..
    } = dims;
    for t in 0..dims.out_time() {
        for s in 0..signals {
            let o = &mut out[(t * signals + s) * cout..][..cout];
            o.copy_from_slice(bias);
            for tau in 0..conv_size {
                let x = &input[((t + tau) * signals + s) * cin..][..cin];
                for (c, &xv) in x.iter().enumerate() {
                    let k = &kernels[(tau * cin + c) * cout..][..cout];
                    for (ov, &kv) in o.iter_mut().zip(k) {
                        *ov += xv * kv;
                    }
                }
            }
        }
    }
}

/// Accumulates kernel, bias and (optionally) input gradients.
pub(crate) fn conv_backward_raw(
    dims: ConvDims,
    input: &[f64],
    kernels: &[f64],
    upstream: &[f64],
    grad_kernels: &mut [f64],
    grad_bias: &mut [f64],
    mut grad_input: Option<&mut [f64]>,
) {
    let ConvDims {
        signals,
        channels_in: cin,
        channels_out: cout,
        conv_size,
        ..
    } = dims;
    for t in 0..dims.out_time() {
        for s in 0..signals {
            let g = &upstream[(t * signals + s) * cout..][..cout];
            for (gb, &gv) in grad_bias.iter_mut().zip(g) {
                *gb += gv;
            }
            for tau in 0..conv_size {
                let base = ((t + tau) * signals + s) * cin;
                for c in 0..cin {
                    let xv = input[base + c];
                    let row = (tau * cin + c) * cout;
                    let gk = &mut grad_kernels[row..][..cout];
                    for (gkv, &gv) in gk.iter_mut().zip(g) {
                        *gkv += xv * gv;
                    }
                    if let Some(gi) = grad_input.as_deref_mut() {
                        let k = &kernels[row..][..cout];
                        gi[base + c] += k.iter().zip(g).map(|(kv, gv)| kv * gv).sum::<f64>();
                    }
                }
            }
        }
    }
}

pub(crate) fn dense_forward_raw(input: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let n_in = input.len();
    for (o, ov) in out.iter_mut().enumerate() {
        let row = &weights[o * n_in..][..n_in];
        *ov = bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

pub(crate) fn dense_backward_raw(
    input: &[f64],
    weights: &[f64],
    upstream: &[f64],
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
    mut grad_input: Option<&mut [f64]>,
) {
    let n_in = input.len();
    for (o, &g) in upstream.iter().enumerate() {
        grad_bias[o] += g;
        if g == 0.0 {
            continue;
        }
        let gw = &mut grad_weights[o * n_in..][..n_in];
        for (gwv, &x) in gw.iter_mut().zip(input) {
            *gwv += g * x;
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            let row = &weights[o * n_in..][..n_in];
            for (giv, &w) in gi.iter_mut().zip(row) {
                *giv += w * g;
            }
        }
    }
}

pub(crate) fn relu_inplace(values: &mut [f64]) {
    for v in values {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the activation output is not strictly positive.
pub(crate) fn relu_mask_inplace(activated: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(crate) fn softmax_raw(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Valid (unpadded), stride-1 convolution along the time axis only.
///
/// `input` is `[time, signals, channels_in]`, `kernels` is
/// `[conv_size, 1, channels_in, channels_out]` and `bias` has `channels_out` entries.
/// Each signal column is convolved independently with the same kernels.
pub fn conv_time_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let dims = conv_dims("conv_time_forward", input, kernels, bias)?;
    let mut out = vec![0.0; dims.output_len()];
    conv_forward_raw(dims, input.data(), kernels.data(), bias.data(), &mut out);
    Ok(Tensor::from_parts_unchecked(
        vec![dims.out_time(), dims.signals, dims.channels_out],
        out,
    ))
}

/// Exact gradients of a time convolution. `params` holds `[kernels, bias]`.
pub fn conv_time_backward(input: &Tensor, kernels: &Tensor, upstream_grad: &Tensor) -> Result<LayerGrads> {
    const CTX: &str = "conv_time_backward";
    kernels.expect_rank(CTX, 4)?;
    let cout = kernels.shape()[3];
    let bias = Tensor::zeros(vec![cout]);
    let dims = conv_dims(CTX, input, kernels, &bias)?;
    let expected = [dims.out_time(), dims.signals, dims.channels_out];
    upstream_grad.expect_rank(CTX, 3)?;
    for (axis, (&e, &a)) in ["time", "signals", "channels"]
        .iter()
        .zip(expected.iter().zip(upstream_grad.shape()))
    {
        if e != a {
            return Err(shape_err(CTX, format!("upstream {axis}"), e, a));
        }
    }
    let mut gk = vec![0.0; dims.kernel_len()];
    let mut gb = vec![0.0; cout];
    let mut gi = vec![0.0; dims.input_len()];
    conv_backward_raw(
        dims,
        input.data(),
        kernels.data(),
        upstream_grad.data(),
        &mut gk,
        &mut gb,
        Some(&mut gi),
    );
    Ok(LayerGrads {
        params: vec![
            Tensor::from_parts_unchecked(kernels.shape().to_vec(), gk),
            Tensor::from_parts_unchecked(vec![cout], gb),
        ],
        input: Tensor::from_parts_unchecked(input.shape().to_vec(), gi),
    })
}

fn conv_dims(ctx: &'static str, input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<ConvDims> {
    input.expect_rank(ctx, 3)?;
    kernels.expect_rank(ctx, 4)?;
    let (time, signals, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (sc, width, kcin, cout) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    if width != 1 {
        return Err(shape_err(ctx, "kernel signal width", 1, width));
    }
    if kcin != cin {
        return Err(shape_err(ctx, "kernel channels_in", cin, kcin));
    }
    if sc == 0 || time < sc {
        return Err(Error::InvalidArgument(format!(
            "{ctx}: time length {time} shorter than convolution size {sc}"
        )));
    }
    if bias.len() != cout {
        return Err(shape_err(ctx, "bias length", cout, bias.len()));
    }
    Ok(ConvDims {
        time,
        signals,
        channels_in: cin,
        channels_out: cout,
        conv_size: sc,
    })
}

fn dense_check(ctx: &'static str, input: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    weights.expect_rank(ctx, 2)?;
    let (n_out, n_in) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n_in {
        return Err(shape_err(ctx, "input length", n_in, input.len()));
    }
    Ok((n_out, n_in))
}

/// Affine map `weights · input + bias` with `weights` shaped `[out, in]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n_out, _) = dense_check("dense_forward", input, weights)?;
    if bias.len() != n_out {
        return Err(shape_err("dense_forward", "bias length", n_out, bias.len()));
    }
    let mut out = vec![0.0; n_out];
    dense_forward_raw(input.data(), weights.data(), bias.data(), &mut out);
    Ok(Tensor::from_parts_unchecked(vec![n_out], out))
}

/// `params` holds `[weights, bias]`.
pub fn dense_backward(input: &Tensor, weights: &Tensor, upstream_grad: &Tensor) -> Result<LayerGrads> {
    let (n_out, n_in) = dense_check("dense_backward", input, weights)?;
    if upstream_grad.len() != n_out {
        return Err(shape_err(
            "dense_backward",
            "upstream length",
            n_out,
            upstream_grad.len(),
        ));
    }
    let mut gw = vec![0.0; n_out * n_in];
    let mut gb = vec![0.0; n_out];
    let mut gi = vec![0.0; n_in];
    dense_backward_raw(
        input.data(),
        weights.data(),
        upstream_grad.data(),
        &mut gw,
        &mut gb,
        Some(&mut gi),
    );
    Ok(LayerGrads {
        params: vec![
            Tensor::from_parts_unchecked(vec![n_out, n_in], gw),
            Tensor::from_parts_unchecked(vec![n_out], gb),
        ],
        input: Tensor::from_parts_unchecked(input.shape().to_vec(), gi),
    })
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut data = input.data().to_vec();
    relu_inplace(&mut data);
    Tensor::from_parts_unchecked(input.shape().to_vec(), data)
}

/// Passes the upstream gradient where `input > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(input: &Tensor, upstream_grad: &Tensor) -> Result<Tensor> {
    if input.shape() != upstream_grad.shape() {
        return Err(shape_err(
            "relu_backward",
            "element count",
            input.len(),
            upstream_grad.len(),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream_grad.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor::from_parts_unchecked(input.shape().to_vec(), data))
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    if let Some(index) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "softmax",
            index,
        });
    }
    Ok(softmax_raw(logits))
}

/// Weighted cross-entropy `-w[true] * ln(p[true] + eps)` and its gradient with
/// respect to the logits that produced `probs` through softmax.
pub fn weighted_cross_entropy(probs: &[f64], true_class: usize, class_weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = probs.len();
    if true_class >= n {
        return Err(Error::InvalidClass {
            index: true_class,
            n_classes: n,
        });
    }
    if class_weights.len() != n {
        return Err(shape_err(
            "weighted_cross_entropy",
            "class_weights length",
            n,
            class_weights.len(),
        ));
    }
    if class_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument(
            "class weights must be finite and non-negative".into(),
        ));
    }
    let w = class_weights[true_class];
    let loss = -w * (probs[true_class] + CROSS_ENTROPY_EPS).ln();
    let grad = probs
        .iter()
        .enumerate()
        .map(|(c, &p)| w * (p - if c == true_class { 1.0 } else { 0.0 }))
        .collect();
    Ok((loss, grad))
}
