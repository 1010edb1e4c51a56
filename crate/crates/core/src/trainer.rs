//! Mini-batch training: Nesterov momentum, L2 decay on every parameter,
//! class resampling and augmentation per epoch, and validation after each
//! epoch.

use std::fmt;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataio::{augment, AugmentSpec, ChannelStats, Dataset, Resampler, NUM_LEVELS};
use crate::error::{Error, Result};
use crate::metrics::{discretize, quadratic_weighted_kappa};
use crate::network::{Checkpoint, LayerKind, Network, ParamRole, TrainingMeta};
use crate::seed::derive_seed;
use crate::tensor::{Graph, Real, Tensor};

pub const DEFAULT_LEARNING_RATE: f64 = 0.003;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.0005;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

/// Piecewise-constant learning rate: `(first_epoch, lr)` pairs with strictly
/// increasing epochs, the first at epoch 0.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    steps: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn new(steps: Vec<(usize, f64)>) -> Result<Self> {
        if steps.first().map(|s| s.0) != Some(0) {
            return Err(Error::config("learning-rate schedule must start at epoch 0"));
        }
        if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::config("learning-rate schedule epochs must be strictly increasing"));
        }
        if steps.iter().any(|s| !s.1.is_finite() || s.1 < 0.0) {
            return Err(Error::config("learning rates must be finite and non-negative"));
        }
        Ok(LrSchedule { steps })
    }

    pub fn constant(lr: f64) -> Self {
        LrSchedule { steps: vec![(0, lr)] }
    }

    /// `base`, then ×0.1 at 60% and ×0.01 at 90% of `epochs`.
    pub fn step_decay(base: f64, epochs: usize) -> Self {
        let mut steps = vec![(0, base)];
        for (frac, factor) in [(0.6, 0.1), (0.9, 0.01)] {
            let e = (frac * epochs as f64).round() as usize;
            if e > steps.last().expect("non-empty").0 && e < epochs {
                steps.push((e, base * factor));
            }
        }
        LrSchedule { steps }
    }

    /// Parses `epoch:lr,epoch:lr,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let steps = text
            .split(',')
            .map(|part| {
                let (e, lr) = part
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| Error::config(format!("schedule entry {part:?} is not epoch:lr")))?;
                let e = e.trim().parse().map_err(|_| Error::config(format!("bad epoch in {part:?}")))?;
                let lr = lr.trim().parse().map_err(|_| Error::config(format!("bad rate in {part:?}")))?;
                Ok((e, lr))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(steps)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.steps.iter().rev().find(|s| s.0 <= epoch).map_or(0.0, |s| s.1)
    }

    pub fn steps(&self) -> &[(usize, f64)] {
        &self.steps
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.steps.iter().map(|(e, lr)| format!("{e}:{lr}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// One Nesterov update with L2 decay folded into the gradient:
/// `d = g + λθ; v ← μv − lr·d; θ ← θ + μv − lr·d`.
pub fn nesterov_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    velocities: &mut [Tensor<T>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocities.len() {
        return Err(Error::usage("parameter, gradient and velocity counts differ"));
    }
    let (lr, mu, wd) = (T::from_f64_lossy(lr), T::from_f64_lossy(momentum), T::from_f64_lossy(weight_decay));
    for (i, ((p, g), v)) in params.iter_mut().zip(grads).zip(velocities.iter_mut()).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::usage(format!("parameter {i}: shapes {:?} / {:?} / {:?}", p.shape(), g.shape(), v.shape())));
        }
        for ((theta, &grad), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let d = grad + wd * *theta;
            *vel = mu * *vel - lr * d;
            *theta = *theta + mu * *vel - lr * d;
        }
        if !p.is_finite() {
            return Err(Error::numeric(format!("parameter {i} became non-finite")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub velocities: Vec<Tensor<T>>,
    /// Per-parameter multiplier on the scheduled learning rate.
    pub lr_scales: Vec<f64>,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &[Tensor<T>], schedule: LrSchedule, momentum: f64, weight_decay: f64) -> Self {
        OptimizerState {
            velocities: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            lr_scales: vec![1.0; params.len()],
            schedule,
            momentum,
            weight_decay,
        }
    }

    /// Scales the dense weights' rate by `1/(H·W)²` for an `H×W` final
    /// feature map, so a summing pool trains at the pace of an averaging one.
    pub fn for_network(network: &Network<T>, schedule: LrSchedule, momentum: f64, weight_decay: f64) -> Self {
        let mut state = Self::new(network.params(), schedule, momentum, weight_decay);
        let area = (network.feature_size() * network.feature_size()) as f64;
        let dense = network
            .slots()
            .iter()
            .position(|s| s.kind == LayerKind::Dense && s.role == ParamRole::Weight)
            .expect("network has a dense head");
        state.lr_scales[dense] = 1.0 / (area * area);
        state
    }

    /// Zero velocities shaped like `params`, e.g. after a weight transfer.
    pub fn reset(&mut self, params: &[Tensor<T>]) {
        self.velocities = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], epoch: usize) -> Result<()> {
        if params.len() != self.lr_scales.len() {
            return Err(Error::usage("optimizer state does not match the parameter list"));
        }
        let lr = self.schedule.lr_at(epoch);
        for i in 0..params.len() {
            nesterov_step(
                &mut params[i..i + 1],
                &grads[i..i + 1],
                &mut self.velocities[i..i + 1],
                lr * self.lr_scales[i],
                self.momentum,
                self.weight_decay,
            )
            .map_err(|e| Error::numeric(format!("parameter {i}: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: String,
    pub resolution: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// `None` uses [`LrSchedule::step_decay`] from `learning_rate`.
    pub schedule: Option<LrSchedule>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: AugmentSpec,
    /// Class-balanced resampling; plain shuffling when off.
    pub resample: bool,
    pub init_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: "net_small".into(),
            resolution: 64,
            epochs: 30,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            schedule: None,
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            augment: AugmentSpec::default(),
            resample: true,
            init_from: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        Ok(())
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        self.schedule.clone().unwrap_or_else(|| LrSchedule::step_decay(self.learning_rate, self.epochs))
    }
}

/// Per class, the last `round(n_c · fraction)` members of a seeded shuffle go
/// to validation. Returns `(train, validation)` index lists, each sorted.
pub fn stratified_split(levels: &[u8], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..NUM_LEVELS as u8 {
        let mut members: Vec<usize> = (0..levels.len()).filter(|&i| levels[i] == class).collect();
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 20, class as u64])));
        let n_val = (members.len() as f64 * fraction).round() as usize;
        let n_val = n_val.min(members.len().saturating_sub(1));
        if members.len() - n_val == 0 {
            return Err(Error::config(format!("level {class} has no training images after the split")));
        }
        val.extend_from_slice(&members[members.len() - n_val..]);
        train.extend_from_slice(&members[..members.len() - n_val]);
    }
    if val.is_empty() {
        return Err(Error::config("validation split is empty; add images or raise the fraction"));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_kappa: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train_mse={:.6} val_mse={:.6} val_kappa={:.6}",
            self.epoch, self.train_mse, self.val_mse, self.val_kappa
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the highest validation kappa.
    pub best: Checkpoint,
    pub best_epoch: usize,
    /// Parameters after the last completed epoch.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Training MSE of the initial parameters on un-augmented images.
    pub initial_train_mse: f64,
    pub initial_val_mse: f64,
    pub stats: ChannelStats,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    /// Set when training stopped on a non-finite loss or update; `last`
    /// then holds the last finite parameters.
    pub diverged: Option<String>,
}

impl TrainOutcome {
    pub fn history_text(&self) -> String {
        self.history.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// Loss and parameter gradients for one image.
pub fn sample_gradients<T: Real>(network: &Network<T>, image: Tensor<T>, target: T) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut graph = Graph::new();
    let x = graph.input(image);
    let nodes = network.forward_graph(&mut graph, x)?;
    let t = graph.input(Tensor::new(vec![1], vec![target])?);
    let loss = graph.mse_loss(nodes.output, t)?;
    let value = graph.value(loss).data()[0].as_f64();
    let mut grads = graph.backward(loss)?;
    let grads = nodes.params.iter().map(|&p| grads.take(p).expect("parameter gradient")).collect();
    Ok((value, grads))
}

/// Mean loss and mean gradients over a batch, summed in batch order.
pub fn batch_gradients<T: Real>(network: &Network<T>, batch: Vec<(Tensor<T>, T)>) -> Result<(f64, Vec<Tensor<T>>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::usage("empty batch"));
    }
    let per_sample: Vec<(f64, Vec<Tensor<T>>)> = batch
        .into_par_iter()
        .map(|(img, target)| sample_gradients(network, img, target))
        .collect::<Result<Vec<_>>>()?;
    let mut iter = per_sample.into_iter();
    let (mut loss, mut sum) = iter.next().expect("non-empty");
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in sum.iter_mut().zip(&g) {
            acc.data_mut().iter_mut().zip(gi.data()).for_each(|(a, b)| *a += *b);
        }
    }
    let inv = T::from_f64_lossy(1.0 / n as f64);
    for g in &mut sum {
        g.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss / n as f64, sum))
}

/// Predictions for standardized images, in order.
pub fn predict_all(network: &Network<f32>, images: &[Tensor<f32>]) -> Result<Vec<f32>> {
    images.par_iter().map(|img| network.predict(img)).collect()
}

fn mse(pred: &[f32], levels: &[u8]) -> f64 {
    pred.iter().zip(levels).map(|(&p, &l)| (p as f64 - l as f64).powi(2)).sum::<f64>() / pred.len().max(1) as f64
}

/// Validation MSE and kappa of `network` on standardized images.
pub fn validate(network: &Network<f32>, images: &[Tensor<f32>], levels: &[u8]) -> Result<(f64, f64)> {
    let pred = predict_all(network, images)?;
    if pred.iter().any(|p| !p.is_finite()) {
        return Err(Error::numeric("non-finite validation prediction"));
    }
    let discrete = pred.iter().map(|&p| discretize(p as f64)).collect::<Result<Vec<u8>>>()?;
    Ok((mse(&pred, levels), quadratic_weighted_kappa(levels, &discrete)?))
}

/// Trains `network` in place on `data` and returns the best checkpoint and
/// the per-epoch history. Identical inputs give bit-identical results.
pub fn train(config: &TrainConfig, data: &Dataset, network: &mut Network<f32>) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if network.input_size() != config.resolution as usize || data.resolution != config.resolution {
        return Err(Error::config(format!(
            "resolution mismatch: network {} px, data {} px, config {} px",
            network.input_size(),
            data.resolution,
            config.resolution
        )));
    }
    let levels = data.levels();
    let (train_idx, val_idx) = stratified_split(&levels, config.validation_fraction, config.seed)?;
    let stats = ChannelStats::from_images(train_idx.iter().map(|&i| &data.samples[i].image));
    let standardized = |i: usize| {
        let mut t = data.samples[i].image.clone();
        stats.standardize(&mut t);
        t
    };
    let val_images: Vec<Tensor<f32>> = val_idx.iter().map(|&i| standardized(i)).collect();
    let val_levels: Vec<u8> = val_idx.iter().map(|&i| levels[i]).collect();
    let train_levels: Vec<u8> = train_idx.iter().map(|&i| levels[i]).collect();

    let initial_train_mse = {
        let imgs: Vec<Tensor<f32>> = train_idx.iter().map(|&i| standardized(i)).collect();
        mse(&predict_all(network, &imgs)?, &train_levels)
    };
    let (initial_val_mse, _) = validate(network, &val_images, &val_levels).unwrap_or((f64::NAN, 0.0));

    let resampler = if config.resample {
        Some(Resampler::new(&train_levels, NUM_LEVELS, config.epochs, config.seed)?)
    } else {
        None
    };
    let mut optimizer =
        OptimizerState::for_network(network, config.lr_schedule(), config.momentum, config.weight_decay);
    let meta = |epochs: usize| TrainingMeta {
        epochs: epochs as u32,
        seed: config.seed,
        resolution: config.resolution,
        stats,
    };

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut last_good = network.params().to_vec();
    let mut diverged = None;
    'epochs: for epoch in 0..config.epochs {
        let order: Vec<usize> = match &resampler {
            Some(r) => r.indices(epoch),
            None => {
                let mut o: Vec<usize> = (0..train_idx.len()).collect();
                o.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, 30, epoch as u64])));
                o
            }
        };
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(Tensor<f32>, f32)> = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &pos)| {
                    let i = train_idx[pos];
                    let seed = derive_seed(&[config.seed, 31, epoch as u64, (b * config.batch_size + j) as u64]);
                    let mut img = augment(&data.samples[i].image, &config.augment, seed);
                    stats.standardize(&mut img);
                    (img, levels[i] as f32)
                })
                .collect();
            let (loss, grads) = match batch_gradients(network, batch) {
                Ok(v) => v,
                Err(Error::Numeric(m)) => {
                    diverged = Some(format!("epoch {epoch}, batch {b}: {m}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                diverged = Some(format!("non-finite loss at epoch {epoch}, batch {b}"));
                break 'epochs;
            }
            if let Err(e) = optimizer.step(network.params_mut(), &grads, epoch) {
                diverged = Some(format!("epoch {epoch}, batch {b}: {e}"));
                break 'epochs;
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let (val_mse, val_kappa) = match validate(network, &val_images, &val_levels) {
            Ok(v) => v,
            Err(e) => {
                diverged = Some(format!("epoch {epoch}: {e}"));
                break;
            }
        };
        last_good = network.params().to_vec();
        history.push(EpochRecord { epoch, train_mse: loss_sum / seen as f64, val_mse, val_kappa });
        if best.as_ref().is_none_or(|(k, _, _)| val_kappa > *k) {
            best = Some((val_kappa, epoch, Checkpoint::from_network(network, meta(epoch + 1))));
        }
    }
    if diverged.is_some() {
        network.params_mut().clone_from_slice(&last_good);
    }
    let last = Checkpoint::from_network(network, meta(history.len()));
    let (best_epoch, best) = match best {
        Some((_, e, c)) => (e, c),
        None => (0, last.clone()),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        last,
        history,
        initial_train_mse,
        initial_val_mse,
        stats,
        train_indices: train_idx,
        val_indices: val_idx,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_velocity_no_decay_is_identity() {
        let mut p = vec![Tensor::new(vec![2], vec![1.5f64, -2.0]).unwrap()];
        let g = vec![Tensor::zeros(&[2])];
        let mut v = vec![Tensor::zeros(&[2])];
        nesterov_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p[0].data(), &[1.5, -2.0]);
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // scalar oracle: v = 0.9*0 - 0.1*1 = -0.1; θ = 1 + 0.9*(-0.1) - 0.1*1 = 0.81
        let mut p = vec![Tensor::scalar(1.0f64)];
        let g = vec![Tensor::scalar(1.0f64)];
        let mut v = vec![Tensor::scalar(0.0f64)];
        nesterov_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((v[0].data()[0] + 0.1).abs() < 1e-15);
        assert!((p[0].data()[0] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn pure_decay_shrinks_monotonically() {
        let mut p = vec![Tensor::scalar(2.0f64)];
        let g = vec![Tensor::scalar(0.0f64)];
        let mut v = vec![Tensor::scalar(0.0f64)];
        let mut prev = 2.0;
        for _ in 0..50 {
            nesterov_step(&mut p, &g, &mut v, 0.1, 0.9, 0.0005).unwrap();
            let now = p[0].data()[0];
            assert!(now < prev && now > 0.0);
            prev = now;
        }
    }

    #[test]
    fn non_finite_update_is_numeric_error() {
        let mut p = vec![Tensor::scalar(1.0f32)];
        let g = vec![Tensor::scalar(f32::MAX)];
        let mut v = vec![Tensor::scalar(f32::MAX)];
        assert!(matches!(nesterov_step(&mut p, &g, &mut v, 1e3, 0.9, 0.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn schedule_rules() {
        let s = LrSchedule::step_decay(0.003, 50);
        assert_eq!(s.steps(), &[(0, 0.003), (30, 0.003 * 0.1), (45, 0.003 * 0.01)]);
        assert_eq!(s.lr_at(29), 0.003);
        assert_eq!(s.lr_at(30), 0.003 * 0.1);
        assert_eq!(LrSchedule::parse("0:0.01, 5:0.001").unwrap().lr_at(7), 0.001);
        assert!(LrSchedule::parse("1:0.1").is_err());
        assert!(LrSchedule::parse("0:0.1,0:0.2").is_err());
        assert_eq!(LrSchedule::parse(&s.to_string()).unwrap(), s);
        assert_eq!(LrSchedule::step_decay(0.1, 1).steps(), &[(0, 0.1)]);
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let levels: Vec<u8> = (0..200).map(|i| (i % 5) as u8).collect();
        let (t, v) = stratified_split(&levels, 0.1, 3).unwrap();
        assert_eq!(t.len() + v.len(), 200);
        assert_eq!(v.len(), 20);
        for c in 0..5u8 {
            assert_eq!(v.iter().filter(|&&i| levels[i] == c).count(), 4);
        }
        assert!(t.iter().all(|i| !v.contains(i)));
        assert_eq!(stratified_split(&levels, 0.1, 3).unwrap(), (t, v));
    }

    #[test]
    fn split_with_missing_class_is_config_error() {
        let levels = vec![0u8, 1, 2, 3, 0, 1, 2, 3];
        assert!(matches!(stratified_split(&levels, 0.5, 0), Err(Error::Config(_))));
    }
}
