//! Analytic gradients vs central finite differences (f64, h = 1e-6).
//!
//! The scalar objective is `L = sum(r * y)` with a fixed random `r`, so every
//! output element contributes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radsurr_nn::layers::{AvgPool2d, Conv2d, Dense, ImageShape};
use radsurr_nn::network::{build_cnn, build_mlp, Layer, Network, NetworkSpec, InputShape};

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

/// Relative error with a denominator floor of 1e-4: central differences in
/// f64 carry ~1e-10 of round-off, which would swamp components smaller
/// than the floor.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn objective(net: &Network<f64>, x: &[f64], batch: usize, r: &[f64]) -> f64 {
    net.predict(x, batch).unwrap().iter().zip(r).map(|(y, w)| y * w).sum()
}

/// Checks parameter and input gradients of a whole layer stack, returning
/// the worst relative error.
fn check(mut net: Network<f64>, batch: usize, rng: &mut ChaCha8Rng) -> f64 {
    let x = random(rng, batch * net.input_len());
    let r = random(rng, batch * net.output_dim);
    let cache = net.forward_train(&x, batch).unwrap();
    let mut grads = net.zero_gradients();
    let dx = net.backward(&x, &cache, &r, &mut grads, true);

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp[i] += H;
        let mut xm = x.clone();
        xm[i] -= H;
        let fd = (objective(&net, &xp, batch, &r) - objective(&net, &xm, batch, &r)) / (2.0 * H);
        worst = worst.max(rel_err(dx[i], fd));
    }
    let n_params = grads.params.len();
    for p in 0..n_params {
        for which in 0..2 {
            let len = if which == 0 { grads.params[p].0.len() } else { grads.params[p].1.len() };
            for i in 0..len {
                let analytic = if which == 0 { grads.params[p].0[i] } else { grads.params[p].1[i] };
                let orig = set_param(&mut net, p, which, i, None);
                set_param(&mut net, p, which, i, Some(orig + H));
                let fp = objective(&net, &x, batch, &r);
                set_param(&mut net, p, which, i, Some(orig - H));
                let fm = objective(&net, &x, batch, &r);
                set_param(&mut net, p, which, i, Some(orig));
                worst = worst.max(rel_err(analytic, (fp - fm) / (2.0 * H)));
            }
        }
    }
    worst
}

/// Reads parameter `i` of tensor `which` (0 kernel, 1 bias) in parametric
/// layer `p`, optionally overwriting it. Returns the previous value.
fn set_param(net: &mut Network<f64>, p: usize, which: usize, i: usize, v: Option<f64>) -> f64 {
    let mut pr = net.params_mut();
    let slot = if which == 0 { &mut pr[p].0[i] } else { &mut pr[p].1[i] };
    let old = *slot;
    if let Some(v) = v {
        *slot = v;
    }
    old
}

fn single_layer(layer: Layer<f64>, input: InputShape, rng: &mut ChaCha8Rng) -> Network<f64> {
    let mut layer = layer;
    match &mut layer {
        Layer::Dense(d) => {
            d.kernel = random(rng, d.kernel.len());
            d.bias = random(rng, d.bias.len());
        }
        Layer::Conv2d(c) => {
            c.kernel = random(rng, c.kernel.len());
            c.bias = random(rng, c.bias.len());
        }
        _ => {}
    }
    let output_dim = layer.output_len();
    Network {
        spec: NetworkSpec::mlp(0, 1, 0),
        input,
        output_dim,
        layers: vec![layer],
    }
}

#[test]
fn dense_layer_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = single_layer(Layer::Dense(Dense::zeros(5, 4)), InputShape::Flat { len: 5 }, &mut rng);
        let e = check(net, 3, &mut rng);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn elu_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let net = single_layer(Layer::Elu { len: 7 }, InputShape::Flat { len: 7 }, &mut rng);
        let e = check(net, 2, &mut rng);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn conv2d_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let shape = ImageShape { channels: 2, height: 6, width: 8 };
        let kh = 1 + (seed as usize % 4);
        let kw = 1 + (seed as usize * 7 % 5);
        let conv = Conv2d::zeros(shape, 2, kh, kw).unwrap();
        let net = single_layer(Layer::Conv2d(conv), InputShape::Image(shape), &mut rng);
        let e = check(net, 2, &mut rng);
        assert!(e < TOL, "seed {seed} kernel ({kh},{kw}): {e}");
    }
}

#[test]
fn avgpool_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let shape = ImageShape { channels: 2, height: 5, width: 7 };
        let pool = AvgPool2d::new(shape, 1 + seed as usize % 3, 1 + seed as usize % 4).unwrap();
        let net = single_layer(Layer::AvgPool2d(pool), InputShape::Image(shape), &mut rng);
        let e = check(net, 2, &mut rng);
        assert!(e < TOL, "seed {seed}: {e}");
    }
}

#[test]
fn full_network_gradients() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let mlp = build_mlp::<f64>(&NetworkSpec::mlp(2, 6, seed), 5, 3).unwrap();
        let e = check(mlp, 2, &mut rng);
        assert!(e < TOL, "mlp seed {seed}: {e}");

        let spec = NetworkSpec::cnn(2, 3, [2, 3], [2, 2], 1, 5, seed);
        let cnn = build_cnn::<f64>(&spec, ImageShape { channels: 3, height: 6, width: 8 }, 4).unwrap();
        let e = check(cnn, 2, &mut rng);
        assert!(e < TOL, "cnn seed {seed}: {e}");
    }
}
