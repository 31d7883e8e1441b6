//! Pooling, upsampling, channel concatenation, activations and dropout.

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Argmax positions (flat input indices) recorded by the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    input_shape: [usize; 3],
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Max over disjoint 2×2 windows. Ties go to the first element in
/// row-major window order.
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let [c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "2x2 max pooling needs even height and width, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for i in [i0 + 1, i0 + w, i0 + w + 1] {
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::from_raw([c, oh, ow], out),
        PoolIndices {
            input_shape: [c, h, w],
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor> {
    let [c, h, w] = indices.input_shape;
    if grad_out.shape() != [c, h / 2, w / 2] {
        return Err(Error::shape(format!(
            "pool gradient {:?} does not match pooled shape {:?}",
            grad_out.shape(),
            [c, h / 2, w / 2]
        )));
    }
    let mut g = vec![0.0; c * h * w];
    for (&i, &v) in indices.argmax.iter().zip(grad_out.data()) {
        g[i] += v;
    }
    Ok(Tensor::from_raw(indices.input_shape, g))
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x_forward(x: &Tensor) -> Tensor {
    let [c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = x.channel(ch);
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let (top, bottom) = dst[2 * y * ow..(2 * y + 2) * ow].split_at_mut(ow);
            for (pair, &v) in top.chunks_exact_mut(2).zip(row) {
                pair[0] = v;
                pair[1] = v;
            }
            bottom.copy_from_slice(top);
        }
    }
    Tensor::from_raw([c, oh, ow], out)
}

/// Sums each 2×2 block of the upsampled gradient.
pub fn upsample2x_backward(grad_out: &Tensor) -> Result<Tensor> {
    let [c, oh, ow] = grad_out.shape();
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::shape(format!(
            "upsampling gradient must have even dims, got {oh}x{ow}"
        )));
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut g = vec![0.0; c * h * w];
    for ch in 0..c {
        let src = grad_out.channel(ch);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * ow + 2 * x;
                g[(ch * h + y) * w + x] = src[i] + src[i + 1] + src[i + ow] + src[i + ow + 1];
            }
        }
    }
    Ok(Tensor::from_raw([c, h, w], g))
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [ca, ha, wa] = a.shape();
    let [cb, hb, wb] = b.shape();
    if (ha, wa) != (hb, wb) {
        return Err(Error::shape(format!(
            "cannot concatenate {ha}x{wa} with {hb}x{wb}"
        )));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor::from_raw([ca + cb, ha, wa], data))
}

/// Inverse of [`concat_channels`]: the first `first` channels and the rest.
pub fn split_channels(t: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let [c, h, w] = t.shape();
    if first > c {
        return Err(Error::shape(format!("cannot split {first} channels from {c}")));
    }
    let (a, b) = t.data().split_at(first * h * w);
    Ok((
        Tensor::from_raw([first, h, w], a.to_vec()),
        Tensor::from_raw([c - first, h, w], b.to_vec()),
    ))
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_raw(x.shape(), x.data().iter().map(|v| v.max(0.0)).collect())
}

/// Gradient through ReLU given its input (or output; both have the same
/// positive set).
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    same_shape(x, grad_out)?;
    let g = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
        .collect();
    Ok(Tensor::from_raw(x.shape(), g))
}

/// Largest double below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic sigmoid, kept strictly inside `(0, 1)`.
pub fn sigmoid(x: &Tensor) -> Tensor {
    let y = x
        .data()
        .iter()
        .map(|&v| {
            let s = if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            };
            s.clamp(f64::MIN_POSITIVE, BELOW_ONE)
        })
        .collect();
    Tensor::from_raw(x.shape(), y)
}

/// Gradient through the sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    same_shape(y, grad_out)?;
    let g = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(s, g)| g * s * (1.0 - s))
        .collect();
    Ok(Tensor::from_raw(y.shape(), g))
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "shape {:?} does not match {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-element scale applied by a dropout forward pass (`None` = identity).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        match &self.0 {
            None => Ok(grad_out.clone()),
            Some(m) => {
                if m.len() != grad_out.data().len() {
                    return Err(Error::shape("dropout mask does not match gradient"));
                }
                let g = grad_out.data().iter().zip(m).map(|(g, s)| g * s).collect();
                Ok(Tensor::from_raw(grad_out.shape(), g))
            }
        }
    }

    pub fn scales(&self) -> Option<&[f64]> {
        self.0.as_deref()
    }
}

/// Inverted dropout: in training mode each value is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`.
pub fn dropout(x: &Tensor, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidParameter(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), DropoutMask(None)));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.data().len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let y = x.data().iter().zip(&mask).map(|(v, s)| v * s).collect();
    Ok((Tensor::from_raw(x.shape(), y), DropoutMask(Some(mask))))
}
