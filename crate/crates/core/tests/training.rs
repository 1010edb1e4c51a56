use std::path::Path;

use ramnet::dataio::synthetic::{generate_synthetic, SyntheticConfig};
use ramnet::dataio::{AugmentSpec, Dataset};
use ramnet::network::{specs, Network};
use ramnet::tensor::Tensor;
use ramnet::trainer::{batch_gradients, train, LrSchedule, OptimizerState, TrainConfig};

fn small_dataset(dir: &Path, count: usize) -> Dataset {
    let synth = generate_synthetic(&SyntheticConfig { count, resolution: 64, seed: 4, ..Default::default() }, dir).unwrap();
    Dataset::load(&synth.records, dir, 64).unwrap()
}

fn quiet_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 8, seed: 3, augment: AugmentSpec::identity(), resample: false, ..TrainConfig::default() }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), 20);
    let config = TrainConfig { schedule: Some(LrSchedule::constant(0.0)), ..quiet_config(2) };
    let mut net = Network::<f32>::build_initialized(&specs::net_small(), 3).unwrap();
    let before = net.params().to_vec();
    let outcome = train(&config, &data, &mut net).unwrap();
    assert_eq!(net.params(), &before[..]);
    for record in &outcome.history {
        let rel = (record.train_mse - outcome.initial_train_mse).abs() / outcome.initial_train_mse;
        assert!(rel < 1e-6, "{record} vs initial {}", outcome.initial_train_mse);
        assert_eq!(record.val_mse, outcome.initial_val_mse);
    }
}

#[test]
fn training_is_bit_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), 24);
    let config = TrainConfig { augment: AugmentSpec::default(), resample: true, ..quiet_config(3) };
    let run = || {
        let mut net = Network::<f32>::build_initialized(&specs::net_small(), 3).unwrap();
        train(&config, &data, &mut net).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history_text(), b.history_text());
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    assert_eq!(a.last.to_bytes(), b.last.to_bytes());
}

#[test]
fn small_steps_reduce_batch_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), 10);
    let batch: Vec<(Tensor<f32>, f32)> = data.samples.iter().map(|s| (s.image.clone(), s.level as f32)).collect();
    let mut net = Network::<f32>::build_initialized(&specs::net_small(), 8).unwrap();
    let mut optimizer = OptimizerState::for_network(&net, LrSchedule::constant(1e-3), 0.9, 0.0);
    let (first, _) = batch_gradients(&net, batch.clone()).unwrap();
    let mut losses = vec![first];
    for _ in 0..20 {
        let (_, grads) = batch_gradients(&net, batch.clone()).unwrap();
        optimizer.step(net.params_mut(), &grads, 0).unwrap();
        losses.push(batch_gradients(&net, batch.clone()).unwrap().0);
    }
    assert!(losses[20] < 0.5 * losses[0], "{losses:?}");
}

#[test]
fn mismatched_resolution_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), 6);
    let spec = specs::net_small().with_input_size(128).unwrap();
    let mut net = Network::<f32>::build_initialized(&spec, 1).unwrap();
    assert!(train(&quiet_config(1), &data, &mut net).is_err());
}
