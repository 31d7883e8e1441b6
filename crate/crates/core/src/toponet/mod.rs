//! The encoder-decoder that maps an intermediate SIMP design (and its last
//! update) to the final binary structure.
//!
//! Channel plan, 3×3 same-padded kernels throughout:
//!
//! ```text
//! 2→16→16 | pool, dropout | 16→32→32 | pool, dropout | 32→64→64 → 64→64
//!   | up, concat(+32) | 96→32→32 | up, concat(+16) | 48→16→16 → 16→1, sigmoid
//! ```

mod augment;
mod loss;
mod train;
mod weights;

pub use augment::{make_sample, transform_grid, TrainingSample, D4_ORDER};
pub use loss::{loss, loss_backward, LossParts, PROB_CLAMP};
pub use train::{train, EpochLog, KDistribution, TrainConfig, TrainOutcome};
pub use weights::{load_weights, load_weights_bytes, save_weights, weights_to_bytes};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, ConvLayer, DropoutMask, Mode, PoolIndices, Tensor};

/// `(name, in_channels, out_channels)` for each convolution, in order.
pub const LAYER_PLAN: [(&str, usize, usize); 13] = [
    ("enc16a", 2, 16),
    ("enc16b", 16, 16),
    ("enc32a", 16, 32),
    ("enc32b", 32, 32),
    ("enc64a", 32, 64),
    ("enc64b", 64, 64),
    ("dec64a", 64, 64),
    ("dec64b", 64, 64),
    ("dec32a", 96, 32),
    ("dec32b", 32, 32),
    ("dec16a", 48, 16),
    ("dec16b", 16, 16),
    ("out1", 16, 1),
];

pub const PARAM_COUNT: usize = 192_113;

/// Inputs must have height and width divisible by this.
pub const SIZE_MULTIPLE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<ConvLayer>,
}

impl NetworkParams {
    pub fn zeros() -> Self {
        Self {
            layers: LAYER_PLAN
                .iter()
                .map(|&(_, i, o)| ConvLayer::zeros(i, o))
                .collect(),
        }
    }

    pub(crate) fn from_layers(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.len() != LAYER_PLAN.len() {
            return Err(Error::shape(format!(
                "network needs {} layers, got {}",
                LAYER_PLAN.len(),
                layers.len()
            )));
        }
        for (l, &(name, i, o)) in layers.iter().zip(&LAYER_PLAN) {
            if l.in_channels() != i || l.out_channels() != o {
                return Err(Error::shape(format!(
                    "layer {name} must be {i}->{o}, got {}->{}",
                    l.in_channels(),
                    l.out_channels()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&ConvLayer> {
        LAYER_PLAN
            .iter()
            .position(|(n, _, _)| *n == name)
            .map(|i| &self.layers[i])
    }

    pub fn named_layers(&self) -> impl Iterator<Item = (&'static str, &ConvLayer)> {
        LAYER_PLAN.iter().map(|(n, _, _)| *n).zip(&self.layers)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::num_params).sum()
    }

    /// Kernels then bias, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights());
            out.extend_from_slice(l.bias());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights().len();
            l.weights_mut().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias().len();
            l.bias_mut().copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: &NetworkParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights_mut().iter_mut().zip(b.weights()) {
                *x += y;
            }
            for (x, y) in a.bias_mut().iter_mut().zip(b.bias()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights_mut().iter_mut().for_each(|v| *v *= s);
            l.bias_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Glorot-uniform kernels, zero biases.
pub fn build_network(seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = LAYER_PLAN
        .iter()
        .map(|&(_, i, o)| {
            let limit = (6.0 / ((i * 9 + o * 9) as f64)).sqrt();
            let w = (0..o * i * 9)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            ConvLayer::new(i, o, w, vec![0.0; o]).expect("plan shapes are consistent")
        })
        .collect();
    NetworkParams { layers }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pass {
    Infer,
    Train { dropout: f64 },
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each convolution.
    conv_in: Vec<Tensor>,
    /// ReLU output of each hidden convolution.
    act: Vec<Tensor>,
    pools: [PoolIndices; 2],
    drops: [DropoutMask; 2],
    output: Tensor,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

fn check_input(input: &Tensor) -> Result<()> {
    let [c, h, w] = input.shape();
    if c != 2 {
        return Err(Error::shape(format!("network input needs 2 channels, got {c}")));
    }
    if h == 0 || w == 0 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
        return Err(Error::shape(format!(
            "input height and width must be positive multiples of {SIZE_MULTIPLE}, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Stacks the design and its last update into the two-channel input.
pub fn stack_input(x_n: &Tensor, delta_x: &Tensor) -> Result<Tensor> {
    if x_n.channels() != 1 || x_n.shape() != delta_x.shape() {
        return Err(Error::shape(format!(
            "inputs must be single-channel with equal shapes, got {:?} and {:?}",
            x_n.shape(),
            delta_x.shape()
        )));
    }
    nn::concat_channels(x_n, delta_x)
}

/// Full forward pass on a `2 × H × W` input, keeping what backward needs.
pub fn forward_cached(
    params: &NetworkParams,
    input: &Tensor,
    pass: Pass,
    rng: &mut impl Rng,
) -> Result<ForwardCache> {
    check_input(input)?;
    let (mode, rate) = match pass {
        Pass::Infer => (Mode::Infer, 0.0),
        Pass::Train { dropout } => (Mode::Train, dropout),
    };
    let l = &params.layers;
    let mut conv_in = Vec::with_capacity(13);
    let mut act = Vec::with_capacity(12);

    let mut conv_relu = |i: usize, x: Tensor, conv_in: &mut Vec<Tensor>| -> Result<Tensor> {
        let y = nn::relu(&nn::conv2d_forward(&x, &l[i])?);
        conv_in.push(x);
        act.push(y.clone());
        Ok(y)
    };

    let a0 = conv_relu(0, input.clone(), &mut conv_in)?;
    let skip16 = conv_relu(1, a0, &mut conv_in)?;
    let (p1, i1) = nn::maxpool2x2_forward(&skip16)?;
    let (d1, m1) = nn::dropout(&p1, rate, mode, rng)?;
    let a2 = conv_relu(2, d1, &mut conv_in)?;
    let skip32 = conv_relu(3, a2, &mut conv_in)?;
    let (p2, i2) = nn::maxpool2x2_forward(&skip32)?;
    let (d2, m2) = nn::dropout(&p2, rate, mode, rng)?;
    let a4 = conv_relu(4, d2, &mut conv_in)?;
    let a5 = conv_relu(5, a4, &mut conv_in)?;
    let a6 = conv_relu(6, a5, &mut conv_in)?;
    let a7 = conv_relu(7, a6, &mut conv_in)?;
    let c1 = nn::concat_channels(&nn::upsample2x_forward(&a7), &skip32)?;
    let a8 = conv_relu(8, c1, &mut conv_in)?;
    let a9 = conv_relu(9, a8, &mut conv_in)?;
    let c2 = nn::concat_channels(&nn::upsample2x_forward(&a9), &skip16)?;
    let a10 = conv_relu(10, c2, &mut conv_in)?;
    let a11 = conv_relu(11, a10, &mut conv_in)?;
    let z = nn::conv2d_forward(&a11, &l[12])?;
    conv_in.push(a11);
    let output = nn::sigmoid(&z);
    Ok(ForwardCache {
        conv_in,
        act,
        pools: [i1, i2],
        drops: [m1, m2],
        output,
    })
}

/// Gradients of `Σ grad_out ⊙ output` with respect to every parameter.
pub fn backward(params: &NetworkParams, cache: &ForwardCache, grad_out: &Tensor) -> Result<NetworkParams> {
    if grad_out.shape() != cache.output.shape() {
        return Err(Error::shape(format!(
            "output gradient {:?} does not match prediction {:?}",
            grad_out.shape(),
            cache.output.shape()
        )));
    }
    let l = &params.layers;
    let mut grads: Vec<Option<ConvLayer>> = vec![None; 13];
    let mut conv_back = |i: usize, g: &Tensor| -> Result<Tensor> {
        let cg = nn::conv2d_backward(&cache.conv_in[i], &l[i], g)?;
        grads[i] = Some(ConvLayer::new(
            l[i].in_channels(),
            l[i].out_channels(),
            cg.weights,
            cg.bias,
        )?);
        Ok(cg.input)
    };
    // Through ReLU of hidden layer i, then its convolution.
    let relu_conv = |i: usize, g: &Tensor, conv_back: &mut dyn FnMut(usize, &Tensor) -> Result<Tensor>| {
        let g = nn::relu_backward(&cache.act[i], g)?;
        conv_back(i, &g)
    };
    let add = |mut a: Tensor, b: &Tensor| {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += y;
        }
        a
    };

    let gz = nn::sigmoid_backward(&cache.output, grad_out)?;
    let g = conv_back(12, &gz)?;
    let g = relu_conv(11, &g, &mut conv_back)?;
    let g = relu_conv(10, &g, &mut conv_back)?;
    let (gu, gskip16) = nn::split_channels(&g, 32)?;
    let g = nn::upsample2x_backward(&gu)?;
    let g = relu_conv(9, &g, &mut conv_back)?;
    let g = relu_conv(8, &g, &mut conv_back)?;
    let (gu, gskip32) = nn::split_channels(&g, 64)?;
    let g = nn::upsample2x_backward(&gu)?;
    let g = relu_conv(7, &g, &mut conv_back)?;
    let g = relu_conv(6, &g, &mut conv_back)?;
    let g = relu_conv(5, &g, &mut conv_back)?;
    let g = relu_conv(4, &g, &mut conv_back)?;
    let g = cache.drops[1].backward(&g)?;
    let g = add(nn::maxpool2x2_backward(&cache.pools[1], &g)?, &gskip32);
    let g = relu_conv(3, &g, &mut conv_back)?;
    let g = relu_conv(2, &g, &mut conv_back)?;
    let g = cache.drops[0].backward(&g)?;
    let g = add(nn::maxpool2x2_backward(&cache.pools[0], &g)?, &gskip16);
    let g = relu_conv(1, &g, &mut conv_back)?;
    relu_conv(0, &g, &mut conv_back)?;

    NetworkParams::from_layers(grads.into_iter().map(|g| g.expect("every layer visited")).collect())
}

/// Prediction for design `x_n` (`1 × H × W`) and its last update.
pub fn forward(
    params: &NetworkParams,
    x_n: &Tensor,
    delta_x: &Tensor,
    pass: Pass,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let input = stack_input(x_n, delta_x)?;
    Ok(forward_cached(params, &input, pass, rng)?.output)
}

/// Deterministic inference.
pub fn predict(params: &NetworkParams, x_n: &Tensor, delta_x: &Tensor) -> Result<Tensor> {
    // Inference draws nothing from the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    forward(params, x_n, delta_x, Pass::Infer, &mut rng)
}
