//! Central finite-difference checks of reverse-mode gradients, in `f64`.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::network::Network;
use crate::tensor::ops::compensated_sum;
use crate::tensor::{Graph, NodeId, Tensor};
use crate::trainer::sample_gradients;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose ±h perturbation crossed a rectifier or pooling
    /// boundary, where the loss is not differentiable.
    pub skipped: usize,
    /// Location of the worst coordinate, for diagnostics.
    pub worst: String,
}

impl GradCheck {
    fn record(&mut self, err: f64, what: impl FnOnce() -> String) {
        self.checked += 1;
        if err >= self.max_rel_err {
            self.max_rel_err = err;
            self.worst = what();
        }
    }

    pub fn merge(&mut self, other: &GradCheck) {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst.clone();
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

/// Checks every coordinate of every leaf in `params` for the loss
/// `mean((y − target)²)`. `build` records the computation on a fresh graph
/// with the given leaf values and returns the leaf ids (as trainable params)
/// and the output node `y`.
pub fn check_graph<F>(params: &[Tensor<f64>], target: &Tensor<f64>, h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&[Tensor<f64>]) -> Result<(Graph<f64>, Vec<NodeId>, NodeId)>,
{
    let (mut graph, ids, out) = build(params)?;
    let t = graph.input(target.clone());
    let loss = graph.mse_loss(out, t)?;
    let grads = graph.backward(loss)?;
    let n = target.len() as f64;
    let mut report = GradCheck::default();
    let mut probe = params.to_vec();
    for (slot, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).expect("leaf gradient").clone();
        for i in 0..params[slot].len() {
            let mut eval = |delta: f64| -> Result<Tensor<f64>> {
                probe[slot].data_mut()[i] = params[slot].data()[i] + delta;
                let (g, _, y) = build(&probe)?;
                probe[slot].data_mut()[i] = params[slot].data()[i];
                Ok(g.value(y).clone())
            };
            let (up, down) = (eval(h)?, eval(-h)?);
            let diff = compensated_sum(
                up.data().iter().zip(down.data()).zip(target.data()).map(|((u, d), r)| (u - d) * (u + d - 2.0 * r)),
            );
            let numeric = diff / (n * 2.0 * h);
            let err = relative_error(analytic.data()[i], numeric);
            report.record(err, || format!("leaf {slot}[{i}]: analytic {} numeric {numeric}", analytic.data()[i]));
        }
    }
    Ok(report)
}

/// `ŷ` split as `(Σ_k Σ_ij w_k g_k(i,j), b)`, the sum compensated over every
/// cell rather than rounded per channel.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Head {
    sum: f64,
    bias: f64,
}

impl Head {
    fn value(self) -> f64 {
        self.sum + self.bias
    }
}

fn prediction(network: &Network<f64>, input: &Tensor<f64>) -> Result<(Head, Vec<usize>)> {
    let trace = network.forward(input)?;
    let g = trace.last_conv();
    let plane = g.len() / network.feature_channels();
    let w = network.dense_weights().data();
    let sum = compensated_sum(g.data().iter().enumerate().map(|(i, v)| w[i / plane] * v));
    Ok((Head { sum, bias: network.dense_bias() }, trace.activation_pattern()))
}

/// `((u − t)² − (d − t)²) / 2h`, with the difference of squares factored.
fn central_difference(up: Head, down: Head, target: f64, h: f64) -> f64 {
    let diff = (up.sum - down.sum) + (up.bias - down.bias);
    diff * (up.value() + down.value() - 2.0 * target) / (2.0 * h)
}

/// Checks a network's parameter gradients for the loss `(ŷ − target)²`.
///
/// Up to `coords_per_param` random coordinates of each parameter tensor are
/// probed, plus one random direction through all parameters at once.
/// Probes that change the rectifier signs or pooling winners are skipped.
pub fn check_network(
    network: &Network<f64>,
    input: &Tensor<f64>,
    target: f64,
    h: f64,
    coords_per_param: usize,
    rng: &mut impl Rng,
) -> Result<GradCheck> {
    let (_, grads) = sample_gradients(network, input.clone(), target)?;
    let (_, base_pattern) = prediction(network, input)?;
    let mut probe = network.clone();
    let mut report = GradCheck::default();

    for p in 0..network.params().len() {
        let len = network.params()[p].len();
        let coords: Vec<usize> =
            if len <= coords_per_param { (0..len).collect() } else { sample(rng, len, coords_per_param).into_vec() };
        for i in coords {
            let orig = network.params()[p].data()[i];
            let mut eval = |delta: f64| -> Result<(Head, Vec<usize>)> {
                probe.params_mut()[p].data_mut()[i] = orig + delta;
                let out = prediction(&probe, input);
                probe.params_mut()[p].data_mut()[i] = orig;
                out
            };
            let (up, pu) = eval(h)?;
            let (down, pd) = eval(-h)?;
            if pu != base_pattern || pd != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = central_difference(up, down, target, h);
            let analytic = grads[p].data()[i];
            report.record(relative_error(analytic, numeric), || {
                format!("param {p}[{i}]: analytic {analytic} numeric {numeric}")
            });
        }
    }

    // all parameters at once along a random unit direction
    let direction: Vec<Vec<f64>> =
        network.params().iter().map(|t| (0..t.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let norm = direction.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let analytic: f64 = direction
        .iter()
        .zip(&grads)
        .map(|(d, g)| d.iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum::<f64>()
        / norm;
    let mut shifted = |scale: f64| -> Result<(Head, Vec<usize>)> {
        for (p, d) in direction.iter().enumerate() {
            let src = network.params()[p].data();
            for ((v, s), dv) in probe.params_mut()[p].data_mut().iter_mut().zip(src).zip(d) {
                *v = s + scale * dv / norm;
            }
        }
        prediction(&probe, input)
    };
    let (up, pu) = shifted(h)?;
    let (down, pd) = shifted(-h)?;
    if pu == base_pattern && pd == base_pattern {
        let numeric = central_difference(up, down, target, h);
        report.record(relative_error(analytic, numeric), || {
            format!("random direction: analytic {analytic} numeric {numeric}")
        });
    } else {
        report.skipped += 1;
    }
    Ok(report)
}
