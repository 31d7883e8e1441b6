//! Layer forward passes against naive loops, and every backward pass against
//! central finite differences.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topo_core::nn::*;

fn rand_tensor(shape: [usize; 3], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rand_conv(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> ConvLayer {
    let w = (0..in_ch * out_ch * 9).map(|_| rng.random_range(-0.5..0.5)).collect();
    let b = (0..out_ch).map(|_| rng.random_range(-0.5..0.5)).collect();
    ConvLayer::new(in_ch, out_ch, w, b).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` at `x`.
fn fd_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + h;
            let fp = f(&buf);
            buf[i] = x[i] - h;
            let fm = f(&buf);
            buf[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
        assert!(rel < tol, "{what}[{i}]: analytic {a} numeric {n} rel {rel:e}");
    }
}

/// Zero-padded cross-correlation written as five nested loops.
fn naive_conv(x: &Tensor, layer: &ConvLayer) -> Tensor {
    let [c, h, w] = x.shape();
    let k = layer.out_channels();
    let mut out = vec![0.0; k * h * w];
    for o in 0..k {
        for y in 0..h {
            for xx in 0..w {
                let mut s = layer.bias()[o];
                for ch in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            let sx = xx as isize + kx as isize - 1;
                            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                s += layer.weight(o, ch, ky, kx) * x.get(ch, sy as usize, sx as usize);
                            }
                        }
                    }
                }
                out[(o * h + y) * w + xx] = s;
            }
        }
    }
    Tensor::new([k, h, w], out).unwrap()
}

#[test]
fn conv_forward_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor([2, 5, 5], &mut rng);
    let layer = rand_conv(2, 3, &mut rng);
    let got = conv2d_forward(&x, &layer).unwrap();
    let want = naive_conv(&x, &layer);
    assert_eq!(got.shape(), [3, 5, 5]);
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    // Non-square, single row and single column inputs.
    for shape in [[2, 1, 7], [2, 6, 1], [2, 3, 8]] {
        let x = rand_tensor(shape, &mut rng);
        let got = conv2d_forward(&x, &layer).unwrap();
        let want = naive_conv(&x, &layer);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn check_conv_backward(shape: [usize; 3], out_ch: usize, seed: u64, tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(shape, &mut rng);
    let layer = rand_conv(shape[0], out_ch, &mut rng);
    let g = rand_tensor([out_ch, shape[1], shape[2]], &mut rng);
    let grads = conv2d_backward(&x, &layer, &g).unwrap();
    let h = 1e-5;

    let fx = fd_grad(x.data(), h, |v| {
        let xt = Tensor::new(shape, v.to_vec()).unwrap();
        dot(conv2d_forward(&xt, &layer).unwrap().data(), g.data())
    });
    assert_close(grads.input.data(), &fx, tol, "grad_x");

    let fw = fd_grad(layer.weights(), h, |w| {
        let l = ConvLayer::new(shape[0], out_ch, w.to_vec(), layer.bias().to_vec()).unwrap();
        dot(conv2d_forward(&x, &l).unwrap().data(), g.data())
    });
    assert_close(&grads.weights, &fw, tol, "grad_w");

    let fb = fd_grad(layer.bias(), h, |b| {
        let l = ConvLayer::new(shape[0], out_ch, layer.weights().to_vec(), b.to_vec()).unwrap();
        dot(conv2d_forward(&x, &l).unwrap().data(), g.data())
    });
    assert_close(&grads.bias, &fb, tol, "grad_b");
    for (k, gb) in grads.bias.iter().enumerate() {
        assert!((gb - g.channel(k).iter().sum::<f64>()).abs() < 1e-12);
    }
}

#[test]
fn conv_backward_matches_finite_differences() {
    check_conv_backward([2, 4, 4], 3, 2, 1e-5);
}

#[test]
fn maxpool_matches_window_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor([3, 8, 8], &mut rng);
    let (y, _) = maxpool2x2_forward(&x).unwrap();
    for c in 0..3 {
        for oy in 0..4 {
            for ox in 0..4 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.get(c, 2 * oy + dy, 2 * ox + dx));
                    }
                }
                assert_eq!(y.get(c, oy, ox), m);
            }
        }
    }
    let (c, _) = maxpool2x2_forward(&Tensor::filled([2, 4, 6], 0.3)).unwrap();
    assert!(c.data().iter().all(|v| *v == 0.3));
}

fn check_pool_backward(shape: [usize; 3], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(shape, &mut rng);
    let (_, idx) = maxpool2x2_forward(&x).unwrap();
    let g = rand_tensor([shape[0], shape[1] / 2, shape[2] / 2], &mut rng);
    let an = maxpool2x2_backward(&idx, &g).unwrap();
    let fd = fd_grad(x.data(), 1e-7, |v| {
        let t = Tensor::new(shape, v.to_vec()).unwrap();
        dot(maxpool2x2_forward(&t).unwrap().0.data(), g.data())
    });
    assert_close(an.data(), &fd, 1e-5, "pool");
}

#[test]
fn maxpool_backward_matches_finite_differences() {
    check_pool_backward([2, 4, 6], 4);
}

fn check_upsample_backward(shape: [usize; 3], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(shape, &mut rng);
    let g = rand_tensor([shape[0], 2 * shape[1], 2 * shape[2]], &mut rng);
    let an = upsample2x_backward(&g).unwrap();
    let fd = fd_grad(x.data(), 1e-6, |v| {
        let t = Tensor::new(shape, v.to_vec()).unwrap();
        dot(upsample2x_forward(&t).data(), g.data())
    });
    assert_close(an.data(), &fd, 1e-5, "upsample");
}

#[test]
fn upsample_backward_matches_finite_differences() {
    check_upsample_backward([2, 3, 2], 5);
}

fn check_activations(shape: [usize; 3], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Keep ReLU inputs off the kink.
    let n = shape.iter().product();
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..2.0);
            if rng.random::<bool>() { v } else { -v }
        })
        .collect();
    let x = Tensor::new(shape, xs).unwrap();
    let g = rand_tensor(shape, &mut rng);

    let an = relu_backward(&x, &g).unwrap();
    let fd = fd_grad(x.data(), 1e-6, |v| dot(relu(&Tensor::new(shape, v.to_vec()).unwrap()).data(), g.data()));
    assert_close(an.data(), &fd, 1e-5, "relu");

    let y = sigmoid(&x);
    let an = sigmoid_backward(&y, &g).unwrap();
    let fd = fd_grad(x.data(), 1e-6, |v| dot(sigmoid(&Tensor::new(shape, v.to_vec()).unwrap()).data(), g.data()));
    assert_close(an.data(), &fd, 1e-5, "sigmoid");
}

#[test]
fn activations_match_finite_differences() {
    check_activations([2, 3, 3], 6);
}

#[test]
fn dropout_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor([2, 4, 4], &mut rng);
    let g = rand_tensor([2, 4, 4], &mut rng);
    let (_, mask) = dropout(&x, 0.4, Mode::Train, &mut ChaCha8Rng::seed_from_u64(70)).unwrap();
    let an = mask.backward(&g).unwrap();
    let fd = fd_grad(x.data(), 1e-6, |v| {
        let t = Tensor::new([2, 4, 4], v.to_vec()).unwrap();
        let (y, _) = dropout(&t, 0.4, Mode::Train, &mut ChaCha8Rng::seed_from_u64(70)).unwrap();
        dot(y.data(), g.data())
    });
    assert_close(an.data(), &fd, 1e-5, "dropout");
}

#[test]
fn concat_backward_is_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = rand_tensor([2, 2, 2], &mut rng);
    let b = rand_tensor([3, 2, 2], &mut rng);
    let g = rand_tensor([5, 2, 2], &mut rng);
    let (ga, gb) = split_channels(&g, 2).unwrap();
    let fa = fd_grad(a.data(), 1e-6, |v| {
        let t = Tensor::new([2, 2, 2], v.to_vec()).unwrap();
        dot(concat_channels(&t, &b).unwrap().data(), g.data())
    });
    assert_close(ga.data(), &fa, 1e-5, "concat a");
    assert_eq!(gb.data(), &g.data()[8..]);
}

/// conv → relu → pool → conv → upsample → concat(skip) → conv → sigmoid,
/// checked end to end against finite differences in every parameter.
#[test]
fn three_layer_stack_end_to_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor([2, 4, 4], &mut rng);
    let l1 = rand_conv(2, 3, &mut rng);
    let l2 = rand_conv(3, 2, &mut rng);
    let l3 = rand_conv(5, 1, &mut rng);
    let g = rand_tensor([1, 4, 4], &mut rng);

    let forward = |x: &Tensor, l1: &ConvLayer, l2: &ConvLayer, l3: &ConvLayer| {
        let a1 = relu(&conv2d_forward(x, l1).unwrap());
        let (p, idx) = maxpool2x2_forward(&a1).unwrap();
        let a2 = conv2d_forward(&p, l2).unwrap();
        let u = upsample2x_forward(&a2);
        let c = concat_channels(&u, &a1).unwrap();
        let y = sigmoid(&conv2d_forward(&c, l3).unwrap());
        (a1, p, idx, a2, c, y)
    };
    let (a1, p, idx, _a2, c, y) = forward(&x, &l1, &l2, &l3);
    let gz = sigmoid_backward(&y, &g).unwrap();
    let g3 = conv2d_backward(&c, &l3, &gz).unwrap();
    let (gu, gskip) = split_channels(&g3.input, 2).unwrap();
    let ga2 = upsample2x_backward(&gu).unwrap();
    let g2 = conv2d_backward(&p, &l2, &ga2).unwrap();
    let mut ga1 = maxpool2x2_backward(&idx, &g2.input).unwrap();
    for (a, b) in ga1.data_mut().iter_mut().zip(gskip.data()) {
        *a += b;
    }
    let gpre = relu_backward(&a1, &ga1).unwrap();
    let g1 = conv2d_backward(&x, &l1, &gpre).unwrap();

    let obj = |x: &Tensor, l1: &ConvLayer, l2: &ConvLayer, l3: &ConvLayer| dot(forward(x, l1, l2, l3).5.data(), g.data());
    let h = 1e-6;
    let fx = fd_grad(x.data(), h, |v| obj(&Tensor::new([2, 4, 4], v.to_vec()).unwrap(), &l1, &l2, &l3));
    assert_close(g1.input.data(), &fx, 1e-5, "x");
    let f1 = fd_grad(l1.weights(), h, |w| {
        obj(&x, &ConvLayer::new(2, 3, w.to_vec(), l1.bias().to_vec()).unwrap(), &l2, &l3)
    });
    assert_close(&g1.weights, &f1, 1e-5, "w1");
    let f2 = fd_grad(l2.weights(), h, |w| {
        obj(&x, &l1, &ConvLayer::new(3, 2, w.to_vec(), l2.bias().to_vec()).unwrap(), &l3)
    });
    assert_close(&g2.weights, &f2, 1e-5, "w2");
    let f3 = fd_grad(l3.bias(), h, |b| {
        obj(&x, &l1, &l2, &ConvLayer::new(5, 1, l3.weights().to_vec(), b.to_vec()).unwrap())
    });
    assert_close(&g3.bias, &f3, 1e-5, "b3");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn conv_backward_property(c in 1usize..4, k in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        check_conv_backward([c, h, w], k, seed, 1e-5);
    }

    #[test]
    fn pool_backward_property(c in 1usize..4, h in 1usize..4, w in 1usize..4, seed in any::<u64>()) {
        check_pool_backward([c, 2 * h, 2 * w], seed);
    }

    #[test]
    fn upsample_backward_property(c in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        check_upsample_backward([c, h, w], seed);
    }

    #[test]
    fn activation_backward_property(c in 1usize..3, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        check_activations([c, h, w], seed);
    }

    #[test]
    fn forwards_preserve_finiteness(vals in prop::collection::vec(-1e3f64..1e3, 32)) {
        let x = Tensor::new([2, 4, 4], vals).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = rand_conv(2, 3, &mut rng);
        prop_assert!(conv2d_forward(&x, &layer).unwrap().is_finite());
        prop_assert!(maxpool2x2_forward(&x).unwrap().0.is_finite());
        prop_assert!(upsample2x_forward(&x).is_finite());
        prop_assert!(relu(&x).is_finite());
        let s = sigmoid(&x);
        prop_assert!(s.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }
}
