//! Layers with hand-written backward passes.
//!
//! Convolutional activations are stored channel-major as `[channel][batch][time]`
//! so that a whole batch goes through one GEMM per layer.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tensor::gemm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All learnable parameters in one flat buffer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub slots: Vec<ParamSlot>,
    pub data: Vec<f64>,
}

impl Params {
    /// Register a tensor initialized from U(-bound, bound); returns its slot index.
    pub fn add<R: Rng>(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut R) -> usize {
        let offset = self.data.len();
        let n: usize = shape.iter().product();
        self.data
            .extend((0..n).map(|_| rng.random_range(-bound..=bound)));
        self.slots.push(ParamSlot {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
        });
        self.slots.len() - 1
    }

    pub fn get(&self, slot: usize) -> &[f64] {
        &self.data[self.slots[slot].range()]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: &mut [f64]) {
        match self {
            Activation::Relu => x.par_iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => x.par_iter_mut().for_each(|v| *v = v.tanh()),
        }
    }

    /// Multiply `grad` in place by the derivative, given the activation output.
    pub fn backward(self, out: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Relu => grad
                .par_iter_mut()
                .zip(out.par_iter())
                .for_each(|(g, &y)| {
                    if y <= 0.0 {
                        *g = 0.0
                    }
                }),
            Activation::Tanh => grad
                .par_iter_mut()
                .zip(out.par_iter())
                .for_each(|(g, &y)| *g *= 1.0 - y * y),
        }
    }
}

pub fn sigmoid(x: &mut [f64]) {
    x.par_iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
}

pub fn sigmoid_backward(out: &[f64], grad: &mut [f64]) {
    grad.par_iter_mut()
        .zip(out.par_iter())
        .for_each(|(g, &y)| *g *= y * (1.0 - y));
}

/// Geometry of a strided 1-D convolution mapping `len_in` to `len_out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub len_in: usize,
    pub len_out: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, len_in: usize) -> Option<Self> {
        let pad = (kernel - 1) / 2;
        let span = (len_in + 2 * pad).checked_sub(kernel)?;
        Some(Self {
            kernel,
            stride,
            pad,
            len_in,
            len_out: span / stride + 1,
        })
    }

    #[inline]
    fn source(&self, o: usize, kk: usize) -> Option<usize> {
        let pos = (o * self.stride + kk) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < self.len_in).then_some(pos as usize)
    }
}

/// `[c][b][len_in]` → columns `(c·k) × (b·len_out)`.
pub fn im2col(x: &[f64], channels: usize, batch: usize, g: &ConvGeom) -> Vec<f64> {
    let cols = batch * g.len_out;
    let mut out = vec![0.0; channels * g.kernel * cols];
    out.par_chunks_mut(g.kernel * cols)
        .enumerate()
        .for_each(|(c, block)| {
            for kk in 0..g.kernel {
                let row = &mut block[kk * cols..(kk + 1) * cols];
                for b in 0..batch {
                    let src = &x[(c * batch + b) * g.len_in..(c * batch + b + 1) * g.len_in];
                    for o in 0..g.len_out {
                        if let Some(p) = g.source(o, kk) {
                            row[b * g.len_out + o] = src[p];
                        }
                    }
                }
            }
        });
    out
}

/// Adjoint of [`im2col`]: scatter-add columns back to `[c][b][len_in]`.
pub fn col2im(cols: &[f64], channels: usize, batch: usize, g: &ConvGeom) -> Vec<f64> {
    let ncols = batch * g.len_out;
    let mut out = vec![0.0; channels * batch * g.len_in];
    out.par_chunks_mut(batch * g.len_in)
        .enumerate()
        .for_each(|(c, dst)| {
            for kk in 0..g.kernel {
                let row = &cols[(c * g.kernel + kk) * ncols..(c * g.kernel + kk + 1) * ncols];
                for b in 0..batch {
                    for o in 0..g.len_out {
                        if let Some(p) = g.source(o, kk) {
                            dst[b * g.len_in + p] += row[b * g.len_out + o];
                        }
                    }
                }
            }
        });
    out
}

fn add_channel_bias(y: &mut [f64], bias: &[f64], per_channel: usize) {
    y.par_chunks_mut(per_channel)
        .zip(bias.par_iter())
        .for_each(|(row, &b)| row.iter_mut().for_each(|v| *v += b));
}

fn channel_sums(dy: &[f64], per_channel: usize, into: &mut [f64]) {
    for (acc, row) in into.iter_mut().zip(dy.chunks_exact(per_channel)) {
        *acc += row.iter().sum::<f64>();
    }
}

/// Strided convolution, weight `[c_out][c_in][k]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: usize,
    pub bias: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub geom: ConvGeom,
}

impl Conv1d {
    /// Returns the output and the im2col buffer needed by `backward`.
    pub fn forward(&self, p: &Params, x: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let cols = im2col(x, self.c_in, batch, &self.geom);
        let n = batch * self.geom.len_out;
        let ck = self.c_in * self.geom.kernel;
        let mut y = vec![0.0; self.c_out * n];
        gemm(self.c_out, ck, n, 1.0, p.get(self.weight), false, &cols, false, 0.0, &mut y);
        add_channel_bias(&mut y, p.get(self.bias), n);
        (y, cols)
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient.
    pub fn backward(&self, p: &Params, grad: &mut [f64], cols: &[f64], dy: &[f64], batch: usize, need_dx: bool) -> Option<Vec<f64>> {
        let n = batch * self.geom.len_out;
        let ck = self.c_in * self.geom.kernel;
        let w = &p.slots[self.weight];
        gemm(self.c_out, n, ck, 1.0, dy, false, cols, true, 1.0, &mut grad[w.range()]);
        channel_sums(dy, n, &mut grad[p.slots[self.bias].range()]);
        need_dx.then(|| {
            let mut dcols = vec![0.0; ck * n];
            gemm(ck, self.c_out, n, 1.0, p.get(self.weight), true, dy, false, 0.0, &mut dcols);
            col2im(&dcols, self.c_in, batch, &self.geom)
        })
    }
}

/// Transposed convolution: the adjoint of a [`Conv1d`] that would map
/// `geom.len_in` (this layer's output length) to `geom.len_out` (its input
/// length). Weight `[c_in][c_out][k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: usize,
    pub bias: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub geom: ConvGeom,
}

impl ConvTranspose1d {
    pub fn forward(&self, p: &Params, x: &[f64], batch: usize) -> Vec<f64> {
        let n = batch * self.geom.len_out;
        let ck = self.c_out * self.geom.kernel;
        let mut cols = vec![0.0; ck * n];
        gemm(ck, self.c_in, n, 1.0, p.get(self.weight), true, x, false, 0.0, &mut cols);
        let mut y = col2im(&cols, self.c_out, batch, &self.geom);
        add_channel_bias(&mut y, p.get(self.bias), batch * self.geom.len_in);
        y
    }

    pub fn backward(&self, p: &Params, grad: &mut [f64], x: &[f64], dy: &[f64], batch: usize, need_dx: bool) -> Option<Vec<f64>> {
        let n = batch * self.geom.len_out;
        let ck = self.c_out * self.geom.kernel;
        channel_sums(dy, batch * self.geom.len_in, &mut grad[p.slots[self.bias].range()]);
        let dcols = im2col(dy, self.c_out, batch, &self.geom);
        let w = &p.slots[self.weight];
        gemm(self.c_in, n, ck, 1.0, x, false, &dcols, true, 1.0, &mut grad[w.range()]);
        need_dx.then(|| {
            let mut dx = vec![0.0; self.c_in * n];
            gemm(self.c_in, ck, n, 1.0, p.get(self.weight), false, &dcols, false, 0.0, &mut dx);
            dx
        })
    }
}

/// Fully connected layer on `batch × d_in` rows, weight `[d_out][d_in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn forward(&self, p: &Params, x: &[f64], batch: usize) -> Vec<f64> {
        let mut y = vec![0.0; batch * self.d_out];
        gemm(batch, self.d_in, self.d_out, 1.0, x, false, p.get(self.weight), true, 0.0, &mut y);
        let b = p.get(self.bias);
        y.par_chunks_mut(self.d_out)
            .for_each(|row| row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb));
        y
    }

    pub fn backward(&self, p: &Params, grad: &mut [f64], x: &[f64], dy: &[f64], batch: usize, need_dx: bool) -> Option<Vec<f64>> {
        let w = &p.slots[self.weight];
        gemm(self.d_out, batch, self.d_in, 1.0, dy, true, x, false, 1.0, &mut grad[w.range()]);
        let gb = &mut grad[p.slots[self.bias].range()];
        for row in dy.chunks_exact(self.d_out) {
            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        need_dx.then(|| {
            let mut dx = vec![0.0; batch * self.d_in];
            gemm(batch, self.d_out, self.d_in, 1.0, dy, false, p.get(self.weight), false, 0.0, &mut dx);
            dx
        })
    }
}
