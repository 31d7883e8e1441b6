//! Same-padded 3×3 convolution (stride 1, zero padding 1) via im2col.

use super::gemm::{gemm, View};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    /// `(out_ch, in_ch, 3, 3)` row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(in_ch: usize, out_ch: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != out_ch * in_ch * 9 {
            return Err(Error::shape(format!(
                "kernel ({out_ch}, {in_ch}, 3, 3) needs {} values, got {}",
                out_ch * in_ch * 9,
                weights.len()
            )));
        }
        if bias.len() != out_ch {
            return Err(Error::shape(format!(
                "bias needs {out_ch} values, got {}",
                bias.len()
            )));
        }
        Ok(Self {
            in_ch,
            out_ch,
            weights,
            bias,
        })
    }

    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weights: vec![0.0; out_ch * in_ch * 9],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    /// `(out, in, 3, 3)`.
    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, 3, 3]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn weight(&self, k: usize, c: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((k * self.in_ch + c) * 3 + ky) * 3 + kx]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Column matrix `(C·9) × (H·W)`: row `c·9 + ky·3 + kx` holds the input
/// shifted by `(ky − 1, kx − 1)`.
fn im2col(x: &Tensor) -> Vec<f64> {
    let [c, h, w] = x.shape();
    let hw = h * w;
    let mut cols = vec![0.0; c * 9 * hw];
    for ch in 0..c {
        let plane = x.channel(ch);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                for y in y0..y1 {
                    let sy = y + ky - 1;
                    let src = &plane[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                    row[y * w + x0..y * w + x1].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], shape: [usize; 3]) -> Tensor {
    let [c, h, w] = shape;
    let hw = h * w;
    let mut out = vec![0.0; c * hw];
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                for y in y0..y1 {
                    let sy = y + ky - 1;
                    let dst = &mut plane[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                    for (d, s) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
    Tensor::from_raw(shape, out)
}

fn check_input(x: &Tensor, layer: &ConvLayer) -> Result<()> {
    let [c, h, w] = x.shape();
    if c != layer.in_ch {
        return Err(Error::shape(format!(
            "convolution expects {} input channels, got {c}",
            layer.in_ch
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape("convolution input has an empty spatial dimension"));
    }
    Ok(())
}

pub fn conv2d_forward(x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    check_input(x, layer)?;
    let [c, h, w] = x.shape();
    let hw = h * w;
    let cols = im2col(x);
    let mut out = vec![0.0; layer.out_ch * hw];
    for (k, plane) in out.chunks_exact_mut(hw).enumerate() {
        plane.fill(layer.bias[k]);
    }
    gemm(
        layer.out_ch,
        c * 9,
        hw,
        View::row_major(&layer.weights, c * 9),
        View::row_major(&cols, hw),
        1.0,
        &mut out,
    );
    Ok(Tensor::from_raw([layer.out_ch, h, w], out))
}

/// Gradients of `Σ grad_out ⊙ conv2d_forward(x, layer)`.
pub fn conv2d_backward(x: &Tensor, layer: &ConvLayer, grad_out: &Tensor) -> Result<ConvGrads> {
    check_input(x, layer)?;
    let [c, h, w] = x.shape();
    if grad_out.shape() != [layer.out_ch, h, w] {
        return Err(Error::shape(format!(
            "output gradient {:?} does not match convolution output {:?}",
            grad_out.shape(),
            [layer.out_ch, h, w]
        )));
    }
    let hw = h * w;
    let k9 = c * 9;
    let cols = im2col(x);
    let g = grad_out.data();

    let bias = g.chunks_exact(hw).map(|p| p.iter().sum()).collect();

    let mut weights = vec![0.0; layer.out_ch * k9];
    gemm(
        layer.out_ch,
        hw,
        k9,
        View::row_major(g, hw),
        View::transposed(&cols, hw),
        0.0,
        &mut weights,
    );

    let mut grad_cols = vec![0.0; k9 * hw];
    gemm(
        k9,
        layer.out_ch,
        hw,
        View::transposed(&layer.weights, k9),
        View::row_major(g, hw),
        0.0,
        &mut grad_cols,
    );
    let input = col2im(&grad_cols, [c, h, w]);
    Ok(ConvGrads {
        input,
        weights,
        bias,
    })
}
