//! Small dense/convolutional layers with hand-written backpropagation.
//!
//! Parameters of a network live in one [`ParamSet`]; layers are lightweight
//! descriptors that index into it. Gradients use the same layout
//! ([`Grads`]), which keeps the optimizer, checksums and checkpointing
//! uniform across models. All layers operate on single samples in
//! channel-major (`C x H x W`) layout; batching is done by accumulating
//! gradients.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use crate::math;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A named parameter tensor, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// All trainable tensors of one model, in a fixed order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
        self.tensors.len() - 1
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Grads {
        Grads(self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect())
    }

    /// SHA-256 over every tensor's name, shape and the bit pattern of its
    /// values.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.tensors {
            h.update((t.name.len() as u64).to_le_bytes());
            h.update(t.name.as_bytes());
            h.update((t.shape.len() as u64).to_le_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Rounds every value to the nearest `f32`, the precision of stored
    /// checkpoints.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Whether `other` has the same tensor names and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}

/// Gradient buffers congruent with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn zero(&mut self) {
        self.0.iter_mut().flatten().for_each(|x| *x = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}

fn uniform(rng: &mut crate::rng::Rng, n: usize, bound: f64) -> Vec<f64> {
    if bound == 0.0 {
        return vec![0.0; n];
    }
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform with variance `2 / fan_in`, for rectifier-like activations.
    He,
    /// Uniform with variance `1 / fan_in`, for linear layers.
    Lecun,
    /// All zeros.
    Zero,
}

impl Init {
    fn bound(self, fan_in: usize) -> f64 {
        match self {
            Init::He => math::sqrt(6.0 / fan_in as f64),
            Init::Lecun => math::sqrt(3.0 / fan_in as f64),
            Init::Zero => 0.0,
        }
    }
}

/// Fully connected layer, `y = W x + b` with `W` stored `[out][in]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    w: usize,
    b: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
        rng: &mut crate::rng::Rng,
    ) -> Self {
        let w = params.add(
            &alloc::format!("{name}.weight"),
            &[outputs, inputs],
            uniform(rng, inputs * outputs, init.bound(inputs)),
        );
        let b = params.add(&alloc::format!("{name}.bias"), &[outputs], vec![0.0; outputs]);
        Self {
            w,
            b,
            inputs,
            outputs,
        }
    }

    /// Rebinds to tensors `w` and `b` of an existing parameter set.
    pub fn bind(params: &ParamSet, w: usize, b: usize) -> Self {
        let shape = &params.tensors[w].shape;
        Self {
            w,
            b,
            inputs: shape[1],
            outputs: shape[0],
        }
    }

    pub fn forward(&self, p: &ParamSet, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        let w = &p.tensors[self.w].data;
        let mut y = p.tensors[self.b].data.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, p: &ParamSet, x: &[f64], gy: &[f64], g: &mut Grads) -> Vec<f64> {
        let w = &p.tensors[self.w].data;
        let mut gx = vec![0.0; self.inputs];
        for (o, &go) in gy.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            g.0[self.b][o] += go;
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut g.0[self.w][o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += go * x[i];
                gx[i] += go * row[i];
            }
        }
        gx
    }
}

/// Spatial geometry of a (transposed) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Range of output positions `o` for which `o * stride + k - pad` lands in
/// `0..n_in`.
#[inline]
fn valid_range(k: usize, stride: usize, pad: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let k = k as isize;
    let (s, p, n_in) = (stride as isize, pad as isize, n_in as isize);
    let lo = if p - k > 0 { (p - k + s - 1) / s } else { 0 };
    let hi = (n_in - 1 + p - k).div_euclid(s) + 1;
    (lo.max(0) as usize, hi.clamp(0, n_out as isize) as usize)
}

/// 2-D convolution with square kernels. Weights are `[out][in][k][k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv2d {
    w: usize,
    b: usize,
    pub geom: ConvGeometry,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        in_hw: (usize, usize),
        init: Init,
        rng: &mut crate::rng::Rng,
    ) -> Self {
        let out_h = (in_hw.0 + 2 * pad - kernel) / stride + 1;
        let out_w = (in_hw.1 + 2 * pad - kernel) / stride + 1;
        let fan_in = in_channels * kernel * kernel;
        let w = params.add(
            &alloc::format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            uniform(rng, out_channels * fan_in, init.bound(fan_in)),
        );
        let b = params.add(
            &alloc::format!("{name}.bias"),
            &[out_channels],
            vec![0.0; out_channels],
        );
        Self {
            w,
            b,
            geom: ConvGeometry {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
                in_h: in_hw.0,
                in_w: in_hw.1,
                out_h,
                out_w,
            },
        }
    }

    pub fn output_len(&self) -> usize {
        self.geom.out_channels * self.geom.out_h * self.geom.out_w
    }

    pub fn forward(&self, p: &ParamSet, x: &[f64]) -> Vec<f64> {
        let g = &self.geom;
        let (k, s) = (g.kernel, g.stride);
        let w = &p.tensors[self.w].data;
        let bias = &p.tensors[self.b].data;
        let in_plane = g.in_h * g.in_w;
        let out_plane = g.out_h * g.out_w;
        let mut y = vec![0.0; g.out_channels * out_plane];
        for co in 0..g.out_channels {
            let yc = &mut y[co * out_plane..(co + 1) * out_plane];
            yc.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..g.in_channels {
                let xc = &x[ci * in_plane..(ci + 1) * in_plane];
                for kh in 0..k {
                    let (oh_lo, oh_hi) = valid_range(kh, s, g.pad, g.in_h, g.out_h);
                    for kw in 0..k {
                        let wv = w[((co * g.in_channels + ci) * k + kh) * k + kw];
                        let (ow_lo, ow_hi) = valid_range(kw, s, g.pad, g.in_w, g.out_w);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + kh - g.pad;
                            let yrow = &mut yc[oh * g.out_w..(oh + 1) * g.out_w];
                            let xrow = &xc[ih * g.in_w..(ih + 1) * g.in_w];
                            for ow in ow_lo..ow_hi {
                                yrow[ow] += wv * xrow[ow * s + kw - g.pad];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, p: &ParamSet, x: &[f64], gy: &[f64], grads: &mut Grads) -> Vec<f64> {
        let g = &self.geom;
        let (k, s) = (g.kernel, g.stride);
        let w = &p.tensors[self.w].data;
        let in_plane = g.in_h * g.in_w;
        let out_plane = g.out_h * g.out_w;
        let mut gx = vec![0.0; g.in_channels * in_plane];
        for co in 0..g.out_channels {
            let gyc = &gy[co * out_plane..(co + 1) * out_plane];
            grads.0[self.b][co] += gyc.iter().sum::<f64>();
            for ci in 0..g.in_channels {
                let xc = &x[ci * in_plane..(ci + 1) * in_plane];
                let gxc = &mut gx[ci * in_plane..(ci + 1) * in_plane];
                for kh in 0..k {
                    let (oh_lo, oh_hi) = valid_range(kh, s, g.pad, g.in_h, g.out_h);
                    for kw in 0..k {
                        let idx = ((co * g.in_channels + ci) * k + kh) * k + kw;
                        let wv = w[idx];
                        let (ow_lo, ow_hi) = valid_range(kw, s, g.pad, g.in_w, g.out_w);
                        let mut gw = 0.0;
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + kh - g.pad;
                            let grow = &gyc[oh * g.out_w..(oh + 1) * g.out_w];
                            let xrow = &xc[ih * g.in_w..(ih + 1) * g.in_w];
                            let gxrow = &mut gxc[ih * g.in_w..(ih + 1) * g.in_w];
                            for ow in ow_lo..ow_hi {
                                let iw = ow * s + kw - g.pad;
                                gw += grow[ow] * xrow[iw];
                                gxrow[iw] += wv * grow[ow];
                            }
                        }
                        grads.0[self.w][idx] += gw;
                    }
                }
            }
        }
        gx
    }
}

/// Transposed 2-D convolution (the adjoint of a strided [`Conv2d`]).
/// Weights are `[in][out][k][k]`; output size is `(in - 1) * stride - 2 *
/// pad + kernel`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvTranspose2d {
    w: usize,
    b: usize,
    pub geom: ConvGeometry,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        in_hw: (usize, usize),
        init: Init,
        rng: &mut crate::rng::Rng,
    ) -> Self {
        let out_h = (in_hw.0 - 1) * stride + kernel - 2 * pad;
        let out_w = (in_hw.1 - 1) * stride + kernel - 2 * pad;
        // Each output sees about in_channels * (k / stride)^2 inputs.
        let taps = (kernel / stride).max(1);
        let fan_in = in_channels * taps * taps;
        let w = params.add(
            &alloc::format!("{name}.weight"),
            &[in_channels, out_channels, kernel, kernel],
            uniform(rng, in_channels * out_channels * kernel * kernel, init.bound(fan_in)),
        );
        let b = params.add(
            &alloc::format!("{name}.bias"),
            &[out_channels],
            vec![0.0; out_channels],
        );
        Self {
            w,
            b,
            geom: ConvGeometry {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
                in_h: in_hw.0,
                in_w: in_hw.1,
                out_h,
                out_w,
            },
        }
    }

    pub fn output_len(&self) -> usize {
        self.geom.out_channels * self.geom.out_h * self.geom.out_w
    }

    pub fn forward(&self, p: &ParamSet, x: &[f64]) -> Vec<f64> {
        let g = &self.geom;
        let (k, s) = (g.kernel, g.stride);
        let w = &p.tensors[self.w].data;
        let bias = &p.tensors[self.b].data;
        let in_plane = g.in_h * g.in_w;
        let out_plane = g.out_h * g.out_w;
        let mut y = vec![0.0; g.out_channels * out_plane];
        for co in 0..g.out_channels {
            y[co * out_plane..(co + 1) * out_plane]
                .iter_mut()
                .for_each(|v| *v = bias[co]);
        }
        for ci in 0..g.in_channels {
            let xc = &x[ci * in_plane..(ci + 1) * in_plane];
            for co in 0..g.out_channels {
                let yc = &mut y[co * out_plane..(co + 1) * out_plane];
                for kh in 0..k {
                    let ih_range = transposed_range(kh, s, g.pad, g.in_h, g.out_h);
                    for kw in 0..k {
                        let wv = w[((ci * g.out_channels + co) * k + kh) * k + kw];
                        let iw_range = transposed_range(kw, s, g.pad, g.in_w, g.out_w);
                        for ih in ih_range.0..ih_range.1 {
                            let oh = ih * s + kh - g.pad;
                            let yrow = &mut yc[oh * g.out_w..(oh + 1) * g.out_w];
                            let xrow = &xc[ih * g.in_w..(ih + 1) * g.in_w];
                            for iw in iw_range.0..iw_range.1 {
                                yrow[iw * s + kw - g.pad] += wv * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, p: &ParamSet, x: &[f64], gy: &[f64], grads: &mut Grads) -> Vec<f64> {
        let g = &self.geom;
        let (k, s) = (g.kernel, g.stride);
        let w = &p.tensors[self.w].data;
        let in_plane = g.in_h * g.in_w;
        let out_plane = g.out_h * g.out_w;
        let mut gx = vec![0.0; g.in_channels * in_plane];
        for co in 0..g.out_channels {
            grads.0[self.b][co] += gy[co * out_plane..(co + 1) * out_plane].iter().sum::<f64>();
        }
        for ci in 0..g.in_channels {
            let xc = &x[ci * in_plane..(ci + 1) * in_plane];
            let gxc = &mut gx[ci * in_plane..(ci + 1) * in_plane];
            for co in 0..g.out_channels {
                let gyc = &gy[co * out_plane..(co + 1) * out_plane];
                for kh in 0..k {
                    let ih_range = transposed_range(kh, s, g.pad, g.in_h, g.out_h);
                    for kw in 0..k {
                        let idx = ((ci * g.out_channels + co) * k + kh) * k + kw;
                        let wv = w[idx];
                        let iw_range = transposed_range(kw, s, g.pad, g.in_w, g.out_w);
                        let mut gw = 0.0;
                        for ih in ih_range.0..ih_range.1 {
                            let oh = ih * s + kh - g.pad;
                            let grow = &gyc[oh * g.out_w..(oh + 1) * g.out_w];
                            let xrow = &xc[ih * g.in_w..(ih + 1) * g.in_w];
                            let gxrow = &mut gxc[ih * g.in_w..(ih + 1) * g.in_w];
                            for iw in iw_range.0..iw_range.1 {
                                let go = grow[iw * s + kw - g.pad];
                                gw += go * xrow[iw];
                                gxrow[iw] += wv * go;
                            }
                        }
                        grads.0[self.w][idx] += gw;
                    }
                }
            }
        }
        gx
    }
}

/// Input positions `i` for which `i * stride + k - pad` lands in `0..n_out`.
#[inline]
fn transposed_range(k: usize, stride: usize, pad: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let (k, s, p) = (k as isize, stride as isize, pad as isize);
    let lo = if p - k > 0 { (p - k + s - 1) / s } else { 0 };
    let hi = (n_out as isize - 1 + p - k).div_euclid(s) + 1;
    (lo.max(0) as usize, hi.clamp(0, n_in as isize) as usize)
}

pub const LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
        .collect()
}

/// Gradient through a leaky ReLU given its pre-activation input.
pub fn leaky_relu_backward(pre: &[f64], gy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(gy)
        .map(|(&v, &g)| if v > 0.0 { g } else { LEAKY_SLOPE * g })
        .collect()
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + math::exp(-v))
}

pub fn silu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

pub fn silu_backward(pre: &[f64], gy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(gy)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * (s + v * s * (1.0 - s))
        })
        .collect()
}

/// Adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Grads,
    v: Grads,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) {
        self.t += 1;
        let c1 = 1.0 - math::powi(self.beta1, self.t);
        let c2 = 1.0 - math::powi(self.beta2, self.t);
        for (((tensor, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.0)
            .zip(&mut self.m.0)
            .zip(&mut self.v.0)
        {
            for i in 0..tensor.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                tensor.data[i] -= self.learning_rate * mh / (math::sqrt(vh) + self.eps);
            }
        }
    }
}
