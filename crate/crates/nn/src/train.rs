//! Mini-batch training with MAE loss, L2 kernel penalty and Adam.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::network::Network;
use crate::optim::{Adam, AdamParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Coefficient of `sum(W^2)` over kernels; biases are not penalized.
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Only 0.0 is supported.
    pub dropout: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Validation MAE is evaluated every `validate_every` epochs (and on the
    /// last one) when a validation set is supplied.
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20_000,
            batch_size: 32,
            l2: 0.0011,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout: 0.0,
            seed: 0,
            validate_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("train.learning_rate must be > 0");
        }
        if self.epochs == 0 {
            return bad("train.epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be >= 1");
        }
        if !(self.l2 >= 0.0) {
            return bad("train.l2 must be >= 0");
        }
        if self.dropout != 0.0 {
            return bad("train.dropout must be 0.0 (dropout is not supported)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("train.beta1/beta2 must lie in [0, 1)");
        }
        if self.validate_every == 0 {
            return bad("train.validate_every must be >= 1");
        }
        Ok(())
    }

    fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Row-major input/target matrices with `count` rows each.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a, F> {
    pub inputs: &'a [F],
    pub targets: &'a [F],
    pub count: usize,
}

impl<'a, F: Scalar> Samples<'a, F> {
    pub fn new(inputs: &'a [F], targets: &'a [F], count: usize) -> Result<Self> {
        if count == 0 || inputs.len() % count != 0 || targets.len() % count != 0 {
            return Err(NnError::Shape(format!(
                "{count} samples do not divide {} inputs / {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets, count })
    }

    pub fn input_width(&self) -> usize {
        self.inputs.len() / self.count
    }

    pub fn target_width(&self) -> usize {
        self.targets.len() / self.count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch MAEs seen during the epoch.
    pub train_mae: f64,
    /// `l2 * sum(W^2)` at the end of the epoch.
    pub penalty: f64,
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub wall_clock_s: f64,
}

/// MAE of `pred` vs `target` and its gradient `sign(diff) / n` written into
/// `grad`. Returns the MAE.
pub fn mae_with_grad<F: Scalar>(pred: &[F], target: &[F], grad: &mut [F]) -> f64 {
    let n = pred.len() as f64;
    let inv = F::of(1.0 / n);
    let mut sum = 0.0;
    for ((g, &p), &t) in grad.iter_mut().zip(pred).zip(target) {
        let d = p - t;
        sum += d.as_f64().abs();
        *g = if d > F::zero() {
            inv
        } else if d < F::zero() {
            -inv
        } else {
            F::zero()
        };
    }
    sum / n
}

/// Mean absolute error over a whole sample set, evaluated in chunks.
pub fn evaluate_mae<F: Scalar>(net: &Network<F>, samples: Samples<'_, F>) -> Result<f64> {
    const CHUNK: usize = 256;
    let (wi, wt) = (samples.input_width(), samples.target_width());
    let mut total = 0.0;
    let mut start = 0;
    while start < samples.count {
        let n = CHUNK.min(samples.count - start);
        let pred = net.predict(&samples.inputs[start * wi..(start + n) * wi], n)?;
        let tgt = &samples.targets[start * wt..(start + n) * wt];
        if pred.len() != tgt.len() {
            return Err(NnError::Shape(format!(
                "network emits {} outputs per sample, targets have {wt}",
                net.output_dim
            )));
        }
        total += pred
            .iter()
            .zip(tgt)
            .map(|(&p, &t)| (p - t).as_f64().abs())
            .sum::<f64>();
        start += n;
    }
    Ok(total / (samples.count * wt) as f64)
}

pub fn l2_penalty<F: Scalar>(net: &Network<F>, l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    l2 * net
        .params()
        .iter()
        .map(|(k, _)| k.iter().map(|w| w.as_f64().powi(2)).sum::<f64>())
        .sum::<f64>()
}

/// One optimizer step on a single batch. Returns the batch MAE.
pub fn train_step<F: Scalar>(
    net: &mut Network<F>,
    adam: &mut Adam<F>,
    inputs: &[F],
    targets: &[F],
    batch: usize,
    l2: f64,
) -> Result<f64> {
    let cache = net.forward_train(inputs, batch)?;
    let pred = cache.output();
    if pred.len() != targets.len() {
        return Err(NnError::Shape(format!(
            "network emits {} values for the batch, targets have {}",
            pred.len(),
            targets.len()
        )));
    }
    let mut dout = vec![F::zero(); pred.len()];
    let mae = mae_with_grad(pred, targets, &mut dout);
    let mut grads = net.zero_gradients();
    net.backward(inputs, &cache, &dout, &mut grads, false);
    apply_step(net, adam, &mut grads, l2);
    Ok(mae)
}

/// Adds the L2 gradient `2 * l2 * W` to kernel gradients and applies Adam.
pub fn apply_step<F: Scalar>(
    net: &mut Network<F>,
    adam: &mut Adam<F>,
    grads: &mut crate::network::Gradients<F>,
    l2: f64,
) {
    if l2 != 0.0 {
        let two_l2 = F::of(2.0 * l2);
        for ((dk, _), (k, _)) in grads.params.iter_mut().zip(net.params()) {
            for (g, &w) in dk.iter_mut().zip(k) {
                *g = *g + two_l2 * w;
            }
        }
    }
    let mut params: Vec<&mut [F]> = Vec::new();
    for (k, b) in net.params_mut() {
        params.push(k);
        params.push(b);
    }
    let grad_refs: Vec<&[F]> = grads
        .params
        .iter()
        .flat_map(|(k, b)| [k.as_slice(), b.as_slice()])
        .collect();
    adam.update(&mut params, &grad_refs);
}

pub fn new_optimizer<F: Scalar>(net: &Network<F>, config: &TrainConfig) -> Adam<F> {
    let sizes: Vec<usize> = net
        .params()
        .iter()
        .flat_map(|(k, b)| [k.len(), b.len()])
        .collect();
    Adam::new(config.adam(), &sizes)
}

/// Trains `net` in place. `observer` sees every epoch record and may stop
/// training early.
pub fn train<F: Scalar>(
    net: &mut Network<F>,
    train_set: Samples<'_, F>,
    val_set: Option<Samples<'_, F>>,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord) -> Control,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (wi, wt) = (train_set.input_width(), train_set.target_width());
    if wi != net.input_len() || wt != net.output_dim {
        return Err(NnError::Shape(format!(
            "network maps {} -> {}, data is {wi} -> {wt}",
            net.input_len(),
            net.output_dim
        )));
    }
    let start = Instant::now();
    let mut adam = new_optimizer(net, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.count).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut stopped_early = false;
    let bs = config.batch_size.min(train_set.count);
    let mut xb: Vec<F> = Vec::with_capacity(bs * wi);
    let mut yb: Vec<F> = Vec::with_capacity(bs * wt);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (batch_idx, chunk) in order.chunks(bs).enumerate() {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&train_set.inputs[i * wi..(i + 1) * wi]);
                yb.extend_from_slice(&train_set.targets[i * wt..(i + 1) * wt]);
            }
            let mae = train_step(net, &mut adam, &xb, &yb, chunk.len(), config.l2)?;
            if !mae.is_finite() {
                return Err(NnError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    layer_norms: net.kernel_norms(),
                });
            }
            weighted += mae * chunk.len() as f64;
        }
        let penalty = l2_penalty(net, config.l2);
        if !penalty.is_finite() {
            return Err(NnError::NonFiniteLoss {
                epoch,
                batch: order.len().div_ceil(bs) - 1,
                layer_norms: net.kernel_norms(),
            });
        }
        let last = epoch + 1 == config.epochs;
        let val_mae = match val_set {
            Some(v) if last || (epoch + 1) % config.validate_every == 0 => Some(evaluate_mae(net, v)?),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            train_mae: weighted / train_set.count as f64,
            penalty,
            val_mae,
        };
        let control = observer(&record);
        history.push(record);
        if control == Control::Stop {
            stopped_early = !last;
            break;
        }
    }
    Ok(TrainOutcome {
        history,
        stopped_early,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceTiming {
    pub samples: usize,
    pub mean_s: f64,
    pub std_s: f64,
}

/// Forwards every sample on its own (batch of one) and reports the mean
/// wall-clock per sample. A single warm-up pass is run first and excluded.
pub fn predict_timed<F: Scalar>(net: &Network<F>, inputs: &[F], count: usize) -> Result<InferenceTiming> {
    let w = net.input_len();
    if count == 0 || inputs.len() != count * w {
        return Err(NnError::Shape(format!("{count} samples of width {w} expected")));
    }
    net.predict(&inputs[..w], 1)?;
    let mut times = Vec::with_capacity(count);
    for row in inputs.chunks_exact(w) {
        let t = Instant::now();
        let out = net.predict(row, 1)?;
        std::hint::black_box(&out);
        times.push(t.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / count as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / count as f64;
    Ok(InferenceTiming { samples: count, mean_s: mean, std_s: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_mlp, NetworkSpec};

    fn toy() -> (Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let ys = xs.iter().map(|x| 2.0 * x).collect();
        (xs, ys)
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { dropout: 0.1, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn mae_gradient_is_sign() {
        let mut g = [0.0; 3];
        let mae = mae_with_grad(&[1.0f64, 2.0, 3.0], &[0.0, 2.0, 5.0], &mut g);
        assert!((mae - 1.0).abs() < 1e-15);
        assert_eq!(g, [1.0 / 3.0, 0.0, -1.0 / 3.0]);
    }

    #[test]
    fn zero_data_gradient_leaves_weights() {
        let spec = NetworkSpec::mlp(1, 3, 4);
        let mut net = build_mlp::<f64>(&spec, 2, 2).unwrap();
        let x = [0.3, -0.7, 1.1, 0.2];
        let y = net.predict(&x, 2).unwrap();
        let before = net.clone();
        let cfg = TrainConfig { l2: 0.0, ..Default::default() };
        let mut adam = new_optimizer(&net, &cfg);
        let mae = train_step(&mut net, &mut adam, &x, &y, 2, 0.0).unwrap();
        assert_eq!(mae, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn regularizer_shrinks_kernels() {
        let spec = NetworkSpec::mlp(1, 16, 9);
        let mut net = build_mlp::<f64>(&spec, 8, 4).unwrap();
        let cfg = TrainConfig::default();
        let mut adam = new_optimizer(&net, &cfg);
        let mut prev = l2_penalty(&net, 1.0);
        for _ in 0..5 {
            let mut grads = net.zero_gradients();
            apply_step(&mut net, &mut adam, &mut grads, 0.5);
            let now = l2_penalty(&net, 1.0);
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn toy_fit_decreases_monotonically() {
        let (xs, ys) = toy();
        let spec = NetworkSpec::mlp(1, 1, 1);
        let mut net = build_mlp::<f64>(&spec, 1, 1).unwrap();
        let cfg = TrainConfig { epochs: 10, l2: 0.0, ..Default::default() };
        let out = train(&mut net, Samples::new(&xs, &ys, 10).unwrap(), None, &cfg, |_| Control::Continue).unwrap();
        let maes: Vec<f64> = out.history.iter().map(|r| r.train_mae).collect();
        for w in maes.windows(2) {
            assert!(w[1] < w[0], "{maes:?}");
        }
    }

    #[test]
    fn nan_inputs_abort_with_diagnostics() {
        let spec = NetworkSpec::mlp(1, 2, 1);
        let mut net = build_mlp::<f64>(&spec, 1, 1).unwrap();
        let xs = [f64::NAN, 1.0];
        let ys = [0.0, 1.0];
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let err = train(&mut net, Samples::new(&xs, &ys, 2).unwrap(), None, &cfg, |_| Control::Continue).unwrap_err();
        match err {
            NnError::NonFiniteLoss { epoch, layer_norms, .. } => {
                assert_eq!(epoch, 0);
                assert_eq!(layer_norms.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn seeded_training_is_bit_identical() {
        let (xs, ys) = toy();
        let spec = NetworkSpec::mlp(1, 4, 2);
        let cfg = TrainConfig { epochs: 20, batch_size: 3, seed: 5, ..Default::default() };
        let run = || {
            let mut net = build_mlp::<f32>(&spec, 1, 1).unwrap();
            let xs: Vec<f32> = xs.iter().map(|&v| v as f32).collect();
            let ys: Vec<f32> = ys.iter().map(|&v| v as f32).collect();
            train(&mut net, Samples::new(&xs, &ys, 10).unwrap(), None, &cfg, |_| Control::Continue).unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn observer_can_stop() {
        let (xs, ys) = toy();
        let mut net = build_mlp::<f64>(&NetworkSpec::mlp(1, 2, 0), 1, 1).unwrap();
        let cfg = TrainConfig { epochs: 50, ..Default::default() };
        let val = Samples::new(&xs, &ys, 10).unwrap();
        let out = train(&mut net, val, Some(val), &cfg, |r| {
            if r.epoch == 4 { Control::Stop } else { Control::Continue }
        })
        .unwrap();
        assert_eq!(out.history.len(), 5);
        assert!(out.stopped_early);
        assert!(out.history.iter().all(|r| r.val_mae.is_some()));
    }

    #[test]
    fn timed_prediction() {
        let net = build_mlp::<f32>(&NetworkSpec::mlp(1, 8, 0), 4, 2).unwrap();
        let x = vec![0.5f32; 4 * 30];
        let t = predict_timed(&net, &x, 30).unwrap();
        assert_eq!(t.samples, 30);
        assert!(t.mean_s > 0.0 && t.std_s >= 0.0);
        let a = net.predict(&x[..4], 1).unwrap();
        assert_eq!(a, net.predict(&x[..4], 1).unwrap());
    }
}
