//! Three-layer fully convolutional pixel classifier with hand-written
//! backpropagation.
//!
//! Layers are 3x3 zero-padded convolutions `3 -> 8 -> 8 -> 2` with ReLU after
//! the first two and a per-pixel two-way softmax on the output. Activations
//! are stored channel-major (`[c][u][v]`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::types::{ImageRGB, ProbabilityMap};

/// `(in_channels, out_channels)` of every layer.
pub const ARCHITECTURE: [(usize, usize); 3] = [(3, 8), (8, 8), (8, 2)];
pub const KERNEL: usize = 3;
pub const MIN_INPUT_SIZE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("input of {height}x{width} is smaller than the {min}x{min} minimum")]
    ShapeMismatch { height: usize, width: usize, min: usize },
    #[error("gradient has {actual} values but the cached forward pass has {expected} pixels")]
    CacheMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[out][in][ky][kx]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weights: vec![0.0; out_channels * in_channels * KERNEL * KERNEL],
            bias: vec![0.0; out_channels],
        }
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_channels + i) * KERNEL + ky) * KERNEL + kx]
    }
}

/// Network parameters; the same layout doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<ConvLayer>,
}

impl NetworkParams {
    pub fn zeros() -> Self {
        Self {
            layers: ARCHITECTURE.iter().map(|&(i, o)| ConvLayer::zeros(i, o)).collect(),
        }
    }

    /// Uniform in `[-s, s]` with `s = 1 / sqrt(fan_in)`, weights and biases alike.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros();
        for layer in &mut params.layers {
            let s = 1.0 / ((layer.in_channels * KERNEL * KERNEL) as f64).sqrt();
            for x in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *x = rng.random_range(-s..=s);
            }
        }
        params
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All values in layer order, weights before biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &NetworkParams) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    /// Rounds every value to the nearest `f32`, as stored in checkpoints.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for x in out.iter_mut() {
            *x = *x as f32 as f64;
        }
        out
    }
}

/// Activations kept from a forward pass for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    height: usize,
    width: usize,
    /// Input and post-activation of every layer; `inputs[k]` feeds layer `k`.
    inputs: Vec<Vec<f64>>,
    /// Foreground probability per pixel.
    fg: Vec<f64>,
}

fn check_size(h: usize, w: usize) -> Result<(), NetworkError> {
    if h < MIN_INPUT_SIZE || w < MIN_INPUT_SIZE {
        return Err(NetworkError::ShapeMismatch {
            height: h,
            width: w,
            min: MIN_INPUT_SIZE,
        });
    }
    Ok(())
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `d`.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { n - d as usize } else { n };
    (lo, hi)
}

fn conv_forward(input: &[f64], layer: &ConvLayer, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; layer.out_channels * plane];
    for o in 0..layer.out_channels {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(layer.bias[o]);
        for i in 0..layer.in_channels {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..KERNEL {
                let dy = ky as isize - 1;
                let (u0, u1) = span(h, dy);
                for kx in 0..KERNEL {
                    let dx = kx as isize - 1;
                    let (v0, v1) = span(w, dx);
                    let wt = layer.w(o, i, ky, kx);
                    for u in u0..u1 {
                        let su = (u as isize + dy) as usize;
                        let s = &src[su * w..(su + 1) * w];
                        let d = &mut dst[u * w..(u + 1) * w];
                        let sv0 = (v0 as isize + dx) as usize;
                        for (dv, sv) in d[v0..v1].iter_mut().zip(&s[sv0..sv0 + (v1 - v0)]) {
                            *dv += wt * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients into `grad` and returns the input gradient.
fn conv_backward(
    input: &[f64],
    dout: &[f64],
    layer: &ConvLayer,
    grad: &mut ConvLayer,
    h: usize,
    w: usize,
    need_input_grad: bool,
) -> Vec<f64> {
    let plane = h * w;
    let mut din = if need_input_grad {
        vec![0.0; layer.in_channels * plane]
    } else {
        Vec::new()
    };
    for o in 0..layer.out_channels {
        let g = &dout[o * plane..(o + 1) * plane];
        grad.bias[o] += g.iter().sum::<f64>();
        for i in 0..layer.in_channels {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..KERNEL {
                let dy = ky as isize - 1;
                let (u0, u1) = span(h, dy);
                for kx in 0..KERNEL {
                    let dx = kx as isize - 1;
                    let (v0, v1) = span(w, dx);
                    let sv0 = (v0 as isize + dx) as usize;
                    let n = v1 - v0;
                    let wt = layer.w(o, i, ky, kx);
                    let mut acc = 0.0;
                    for u in u0..u1 {
                        let su = (u as isize + dy) as usize;
                        let gr = &g[u * w + v0..u * w + v1];
                        let sr = &src[su * w + sv0..su * w + sv0 + n];
                        acc += gr.iter().zip(sr).map(|(a, b)| a * b).sum::<f64>();
                        if need_input_grad {
                            let dr = &mut din[i * plane + su * w + sv0..i * plane + su * w + sv0 + n];
                            for (d, gv) in dr.iter_mut().zip(gr) {
                                *d += wt * gv;
                            }
                        }
                    }
                    grad.weights[((o * layer.in_channels + i) * KERNEL + ky) * KERNEL + kx] += acc;
                }
            }
        }
    }
    din
}

/// Image to network input: channel-major, rescaled from `[0, 1]` to `[-1, 1]`.
fn normalize(image: &ImageRGB) -> Vec<f64> {
    let (h, w) = image.shape();
    let plane = h * w;
    let mut out = vec![0.0; 3 * plane];
    for (p, rgb) in image.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + p] = 2.0 * rgb[c] - 1.0;
        }
    }
    out
}

/// Runs the network and returns the softmax map plus the activations needed
/// for [`backward`].
pub fn forward(params: &NetworkParams, image: &ImageRGB) -> Result<(ProbabilityMap, ForwardCache), NetworkError> {
    let (h, w) = image.shape();
    check_size(h, w)?;
    let plane = h * w;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut x = normalize(image);
    let last = params.layers.len() - 1;
    for (k, layer) in params.layers.iter().enumerate() {
        let mut z = conv_forward(&x, layer, h, w);
        if k < last {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        inputs.push(std::mem::replace(&mut x, z));
    }
    // Two-way softmax: fg = sigmoid(z_fg - z_bg), computed stably.
    let (mut bg, mut fg) = (Vec::with_capacity(plane), Vec::with_capacity(plane));
    for p in 0..plane {
        let d = x[plane + p] - x[p];
        let (b, f) = if d >= 0.0 {
            let e = (-d).exp();
            (e / (1.0 + e), 1.0 / (1.0 + e))
        } else {
            let e = d.exp();
            (1.0 / (1.0 + e), e / (1.0 + e))
        };
        bg.push(b);
        fg.push(f);
    }
    let map = ProbabilityMap::from_channels(h, w, bg, fg.clone()).expect("softmax is normalised");
    Ok((
        map,
        ForwardCache {
            height: h,
            width: w,
            inputs,
            fg,
        },
    ))
}

/// Parameter gradients for a map-level gradient `∂L/∂fg`. The background
/// channel is `1 - fg`, so its gradient follows from the softmax coupling.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    map_grad: &[f64],
) -> Result<NetworkParams, NetworkError> {
    let (h, w) = (cache.height, cache.width);
    let plane = h * w;
    if map_grad.len() != plane || cache.inputs.len() != params.layers.len() {
        return Err(NetworkError::CacheMismatch {
            expected: plane,
            actual: map_grad.len(),
        });
    }

    let mut dz = vec![0.0; 2 * plane];
    for p in 0..plane {
        let f = cache.fg[p];
        let g = map_grad[p] * f * (1.0 - f);
        dz[p] = -g;
        dz[plane + p] = g;
    }

    let mut grads = NetworkParams::zeros();
    for k in (0..params.layers.len()).rev() {
        let input = &cache.inputs[k];
        let din = conv_backward(input, &dz, &params.layers[k], &mut grads.layers[k], h, w, k > 0);
        if k > 0 {
            // `input` is the ReLU output of layer k - 1; its zeros mark the clipped units.
            dz = din
                .into_iter()
                .zip(input)
                .map(|(d, &a)| if a > 0.0 { d } else { 0.0 })
                .collect();
        }
    }
    Ok(grads)
}
