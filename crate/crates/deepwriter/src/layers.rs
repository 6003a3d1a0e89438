//! Forward and backward passes for every layer type in the network stack:
//! convolution (correlation-style, im2col + GEMM), max-pooling,
//! fully-connected, ReLU, inverted dropout, and softmax cross-entropy.

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

use crate::error::{DwError, Result};
use crate::tensor::{Scalar, Tensor};

/// Convolution layer configuration: `out_channels` kernels of size
/// `kernel` x `kernel`, applied with `stride` and zero `padding`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        assert!(out_channels >= 1 && kernel >= 1 && stride >= 1);
        ConvSpec {
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// out = floor((in + 2*padding - kernel) / stride) + 1
    pub fn out_side(&self, in_side: usize) -> Result<usize> {
        let padded = in_side + 2 * self.padding;
        if padded < self.kernel {
            return Err(DwError::Shape(format!(
                "kernel {} larger than padded input side {padded}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

/// Max-pooling configuration: window x window neighbourhood with `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn new(window: usize, stride: usize) -> Self {
        assert!(window >= 1 && stride >= 1);
        PoolSpec { window, stride }
    }

    /// out = floor((in - window) / stride) + 1
    pub fn out_side(&self, in_side: usize) -> Result<usize> {
        if in_side < self.window {
            return Err(DwError::Shape(format!(
                "pool window {} larger than input side {in_side}",
                self.window
            )));
        }
        Ok((in_side - self.window) / self.stride + 1)
    }
}

/// Weights and biases of one parameterized layer, with its per-layer
/// learning-rate multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T: Scalar = f32> {
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
    pub lr_mult: f64,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(weights: Tensor<T>, biases: Tensor<T>) -> Self {
        LayerParams {
            weights,
            biases,
            lr_mult: 1.0,
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

fn matmul<T: Scalar>(
    a: &[T],
    (ar, ac): (usize, usize),
    b: &[T],
    (br, bc): (usize, usize),
    out: &mut [T],
) {
    debug_assert_eq!(ac, br);
    let a = ArrayView2::from_shape((ar, ac), a).unwrap();
    let b = ArrayView2::from_shape((br, bc), b).unwrap();
    let mut o = ArrayViewMut2::from_shape((ar, bc), out).unwrap();
    o.assign(&a.dot(&b));
}

fn im2col<T: Scalar>(
    input: &[T],
    (channels, height, width): (usize, usize, usize),
    spec: &ConvSpec,
    (out_h, out_w): (usize, usize),
) -> Vec<T> {
    let k = spec.kernel;
    let mut cols = vec![T::zero(); channels * k * k * out_h * out_w];
    let mut row = 0usize;
    for c in 0..channels {
        let plane = &input[c * height * width..(c + 1) * height * width];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * out_h * out_w..(row + 1) * out_h * out_w];
                for oy in 0..out_h {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * width..(iy as usize + 1) * width];
                    for ox in 0..out_w {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if ix >= 0 && ix < width as isize {
                            dst[oy * out_w + ox] = src_row[ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(
    cols: &[T],
    (channels, height, width): (usize, usize, usize),
    spec: &ConvSpec,
    (out_h, out_w): (usize, usize),
) -> Vec<T> {
    let k = spec.kernel;
    let mut img = vec![T::zero(); channels * height * width];
    let mut row = 0usize;
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * out_h * out_w..(row + 1) * out_h * out_w];
                for oy in 0..out_h {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    for ox in 0..out_w {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if ix >= 0 && ix < width as isize {
                            let idx = (c * height + iy as usize) * width + ix as usize;
                            img[idx] = img[idx] + src[oy * out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    img
}

fn conv_dims<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    params: &LayerParams<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let [c, h, w] = match *input.dims() {
        [c, h, w] => [c, h, w],
        _ => {
            return Err(DwError::Shape(format!(
                "conv2d expects a [C,H,W] input, got {:?}",
                input.dims()
            )))
        }
    };
    let wd = params.weights.dims();
    if wd.len() != 4 || wd[0] != spec.out_channels || wd[2] != spec.kernel || wd[3] != spec.kernel {
        return Err(DwError::Shape(format!(
            "conv weights dims {wd:?} do not match spec {spec:?}"
        )));
    }
    if wd[1] != c {
        return Err(DwError::Shape(format!(
            "conv input has {c} channels but weights expect {}",
            wd[1]
        )));
    }
    if params.biases.len() != spec.out_channels {
        return Err(DwError::Shape(format!(
            "conv bias length {} != out_channels {}",
            params.biases.len(),
            spec.out_channels
        )));
    }
    let oh = spec.out_side(h)?;
    let ow = spec.out_side(w)?;
    Ok((c, h, w, oh, ow))
}

/// 2-D correlation of a [C,H,W] input with the layer's kernels.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    params: &LayerParams<T>,
) -> Result<Tensor<T>> {
    let (c, h, w, oh, ow) = conv_dims(input, spec, params)?;
    let k = spec.kernel;
    let cols = im2col(input.as_slice(), (c, h, w), spec, (oh, ow));
    let mut out = vec![T::zero(); spec.out_channels * oh * ow];
    matmul(
        params.weights.as_slice(),
        (spec.out_channels, c * k * k),
        &cols,
        (c * k * k, oh * ow),
        &mut out,
    );
    for (oc, chunk) in out.chunks_mut(oh * ow).enumerate() {
        let b = params.biases.as_slice()[oc];
        for v in chunk {
            *v = *v + b;
        }
    }
    Tensor::from_vec(vec![spec.out_channels, oh, ow], out)
}

/// Gradients of a conv layer: input gradient plus weight and bias gradients.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (c, h, w, oh, ow) = conv_dims(input, spec, params)?;
    if grad_out.dims() != [spec.out_channels, oh, ow] {
        return Err(DwError::Shape(format!(
            "conv grad_out dims {:?} != expected [{}, {oh}, {ow}]",
            grad_out.dims(),
            spec.out_channels
        )));
    }
    let k = spec.kernel;
    let ckk = c * k * k;
    let cols = im2col(input.as_slice(), (c, h, w), spec, (oh, ow));

    // dW = dOut [OC, OH*OW] x cols^T [OH*OW, CKK]
    let go = ArrayView2::from_shape((spec.out_channels, oh * ow), grad_out.as_slice()).unwrap();
    let cols_v = ArrayView2::from_shape((ckk, oh * ow), cols.as_slice()).unwrap();
    let dw = go.dot(&cols_v.t());
    let grad_w = Tensor::from_vec(
        params.weights.dims().to_vec(),
        dw.iter().copied().collect(),
    )?;

    let mut grad_b = vec![T::zero(); spec.out_channels];
    for (oc, chunk) in grad_out.as_slice().chunks(oh * ow).enumerate() {
        grad_b[oc] = chunk.iter().fold(T::zero(), |acc, &v| acc + v);
    }

    // dcols = W^T [CKK, OC] x dOut [OC, OH*OW], then scatter back
    let wv = ArrayView2::from_shape((spec.out_channels, ckk), params.weights.as_slice()).unwrap();
    let dcols = wv.t().dot(&go);
    let dcols_flat: Vec<T> = dcols.iter().copied().collect();
    let grad_in = col2im(&dcols_flat, (c, h, w), spec, (oh, ow));

    Ok((
        Tensor::from_vec(vec![c, h, w], grad_in)?,
        grad_w,
        Tensor::from_vec(vec![spec.out_channels], grad_b)?,
    ))
}

/// Max-pool forward. Returns the pooled tensor plus the flat input index of
/// each window's maximum (first cell in row-major scan order on ties), which
/// the backward pass routes gradients through.
pub fn maxpool2d_forward<T: Scalar>(
    input: &Tensor<T>,
    spec: &PoolSpec,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [c, h, w] = match *input.dims() {
        [c, h, w] => [c, h, w],
        _ => {
            return Err(DwError::Shape(format!(
                "maxpool2d expects a [C,H,W] input, got {:?}",
                input.dims()
            )))
        }
    };
    let oh = spec.out_side(h)?;
    let ow = spec.out_side(w)?;
    let data = input.as_slice();
    let mut out = vec![T::zero(); c * oh * ow];
    let mut arg = vec![0usize; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = (ch * h + oy * spec.stride) * w + ox * spec.stride;
                let mut best = data[best_idx];
                for ky in 0..spec.window {
                    for kx in 0..spec.window {
                        let idx = (ch * h + oy * spec.stride + ky) * w + ox * spec.stride + kx;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    Ok((Tensor::from_vec(vec![c, oh, ow], out)?, arg))
}

/// Routes each upstream gradient entirely to its window's argmax cell.
pub fn maxpool2d_backward<T: Scalar>(
    input_dims: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(DwError::Shape(format!(
            "maxpool grad_out length {} != cached {} windows",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut grad_in = Tensor::zeros(input_dims.to_vec());
    let gi = grad_in.as_mut_slice();
    for (&idx, &g) in argmax.iter().zip(grad_out.as_slice()) {
        gi[idx] = gi[idx] + g;
    }
    Ok(grad_in)
}

/// Fully-connected forward: out = W x + b.
pub fn fc_forward<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    let [out_f, in_f] = match *params.weights.dims() {
        [o, i] => [o, i],
        _ => {
            return Err(DwError::Shape(format!(
                "fc weights must be rank 2, got {:?}",
                params.weights.dims()
            )))
        }
    };
    if input.len() != in_f {
        return Err(DwError::Shape(format!(
            "fc input length {} != weight input dimension {in_f}",
            input.len()
        )));
    }
    if params.biases.len() != out_f {
        return Err(DwError::Shape(format!(
            "fc bias length {} != out features {out_f}",
            params.biases.len()
        )));
    }
    let mut out = vec![T::zero(); out_f];
    let w = ArrayView2::from_shape((out_f, in_f), params.weights.as_slice()).unwrap();
    let x = ArrayView2::from_shape((in_f, 1), input.as_slice()).unwrap();
    let mut o = ArrayViewMut2::from_shape((out_f, 1), &mut out).unwrap();
    o.assign(&w.dot(&x));
    for (v, &b) in out.iter_mut().zip(params.biases.as_slice()) {
        *v = *v + b;
    }
    Tensor::from_vec(vec![out_f], out)
}

/// Fully-connected gradients: (input grad, weight grad, bias grad).
pub fn fc_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [out_f, in_f] = match *params.weights.dims() {
        [o, i] => [o, i],
        _ => return Err(DwError::Shape("fc weights must be rank 2".into())),
    };
    if input.len() != in_f || grad_out.len() != out_f {
        return Err(DwError::Shape(format!(
            "fc backward dims: input {} (want {in_f}), grad_out {} (want {out_f})",
            input.len(),
            grad_out.len()
        )));
    }
    let w = ArrayView2::from_shape((out_f, in_f), params.weights.as_slice()).unwrap();
    let g = ArrayView2::from_shape((out_f, 1), grad_out.as_slice()).unwrap();
    let x = ArrayView2::from_shape((1, in_f), input.as_slice()).unwrap();

    let gx = w.t().dot(&g); // [in_f, 1]
    let gw = g.dot(&x); // [out_f, in_f]
    Ok((
        Tensor::from_vec(vec![in_f], gx.iter().copied().collect())?,
        Tensor::from_vec(vec![out_f, in_f], gw.iter().copied().collect())?,
        Tensor::from_vec(vec![out_f], grad_out.as_slice().to_vec())?,
    ))
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient passes where the forward input was strictly positive; blocked at
/// in == 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.dims() != grad_out.dims() {
        return Err(DwError::Shape(format!(
            "relu backward dims mismatch: {:?} vs {:?}",
            input.dims(),
            grad_out.dims()
        )));
    }
    let data = input
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.dims().to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Test,
}

/// Inverted dropout: in train mode each unit is zeroed with probability
/// `ratio` and survivors are scaled by 1/(1-ratio), so test mode is a pure
/// pass-through. Returns the mask (survivor scale per unit) for backward.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    ratio: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(DwError::Domain(format!(
            "dropout ratio {ratio} outside [0, 1)"
        )));
    }
    if mode == Mode::Test || ratio == 0.0 {
        return Ok((input.clone(), None));
    }
    let scale = T::from_f64(1.0 / (1.0 - ratio));
    let thresh = T::from_f64(ratio);
    let mask: Vec<T> = (0..input.len())
        .map(|_| {
            if T::unit_uniform(rng) < thresh {
                T::zero()
            } else {
                scale
            }
        })
        .collect();
    let data = input
        .as_slice()
        .iter()
        .zip(&mask)
        .map(|(&x, &m)| x * m)
        .collect();
    Ok((Tensor::from_vec(input.dims().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(
    mask: Option<&[T]>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(m) => {
            if m.len() != grad_out.len() {
                return Err(DwError::Shape("dropout mask length mismatch".into()));
            }
            let data = grad_out
                .as_slice()
                .iter()
                .zip(m)
                .map(|(&g, &s)| g * s)
                .collect();
            Tensor::from_vec(grad_out.dims().to_vec(), data)
        }
    }
}

/// Max-subtracted softmax over the logits plus cross-entropy against `label`.
/// Returns the probability vector and the loss -log p[label].
pub fn softmax_cross_entropy_forward<T: Scalar>(
    logits: &Tensor<T>,
    label: usize,
) -> Result<(Tensor<T>, T)> {
    if logits.rank() != 1 || logits.len() < 2 {
        return Err(DwError::Domain(format!(
            "softmax expects a rank-1 tensor of length >= 2, got {:?}",
            logits.dims()
        )));
    }
    if label >= logits.len() {
        return Err(DwError::Domain(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits
        .as_slice()
        .iter()
        .fold(T::neg_infinity(), |a, &b| if b > a { b } else { a });
    let exps: Vec<T> = logits.as_slice().iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    let probs: Vec<T> = exps.iter().map(|&e| e / sum).collect();
    let loss = -(probs[label].ln());
    Ok((Tensor::from_vec(vec![logits.len()], probs)?, loss))
}

/// Logit gradient of softmax cross-entropy: p - onehot(label).
pub fn softmax_cross_entropy_backward<T: Scalar>(
    probs: &Tensor<T>,
    label: usize,
) -> Result<Tensor<T>> {
    if label >= probs.len() {
        return Err(DwError::Domain(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let mut g = probs.clone();
    let gs = g.as_mut_slice();
    gs[label] = gs[label] - T::one();
    Ok(g)
}
