//! Network construction, initialization, forward passes, checkpoints, and
//! weight transfer between resolutions.

mod checkpoint;
mod init;
mod spec;
pub mod specs;
mod transfer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ops, Graph, NodeId, PadSpec, Real, Tensor};

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use init::orthogonal_matrix;
pub use spec::{layer_row, solve_pad, LayerKind, LayerSpec, NetworkSpec, ResolvedLayer};
pub use specs::{builtin_spec, builtin_specs};
pub use transfer::{transfer_from_checkpoint, transfer_weights, SourceParam, TransferEntry, TransferReport};

use spec::layer_error;

/// Negative-side slope of the rectifier after every convolution.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRole {
    Weight,
    Bias,
}

impl ParamRole {
    pub fn name(&self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
        }
    }
}

/// Which layer a parameter tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamSlot {
    pub layer: usize,
    pub kind: LayerKind,
    pub role: ParamRole,
}

/// A realized network: resolved spec plus one tensor per parameter slot, in
/// layer order (weight before bias).
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    layers: Vec<ResolvedLayer>,
    params: Vec<Tensor<T>>,
    slots: Vec<ParamSlot>,
}

/// Parameter shapes implied by a resolved layer.
fn param_shapes(layer: &ResolvedLayer) -> Vec<(ParamRole, Vec<usize>)> {
    match layer.kind {
        LayerKind::Conv => vec![
            (ParamRole::Weight, vec![layer.out_channels, layer.in_channels, layer.filter, layer.filter]),
            (ParamRole::Bias, vec![layer.out_channels, layer.out_size, layer.out_size]),
        ],
        LayerKind::Dense => vec![
            (ParamRole::Weight, vec![layer.out_channels, layer.in_channels]),
            (ParamRole::Bias, vec![layer.out_channels]),
        ],
        LayerKind::MaxPool | LayerKind::GlobalPool => Vec::new(),
    }
}

/// Per-layer activations of an inference pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// Output of every layer; convolutions are stored after the rectifier.
    pub outputs: Vec<Tensor<T>>,
    /// Winning input index per output cell, for pooling layers only.
    pub pool_argmax: Vec<Option<Vec<usize>>>,
    last_conv: usize,
}

impl<T: Real> ForwardTrace<T> {
    pub fn prediction(&self) -> T {
        self.outputs.last().expect("network has layers").data()[0]
    }

    /// Feature maps `g_k(i,j)` consumed by the global pool.
    pub fn last_conv(&self) -> &Tensor<T> {
        &self.outputs[self.last_conv]
    }

    /// Rectifier signs and pooling winners; two inputs with the same pattern
    /// lie in the same linear region of the network.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut pattern = Vec::new();
        for (out, arg) in self.outputs.iter().zip(&self.pool_argmax) {
            match arg {
                Some(arg) => pattern.extend_from_slice(arg),
                None => pattern.extend(out.data().iter().map(|v| usize::from(*v >= T::zero()))),
            }
        }
        pattern
    }
}

/// Node ids created by [`Network::forward_graph`].
#[derive(Clone, Debug)]
pub struct GraphNodes {
    /// One per parameter slot, in the same order as [`Network::params`].
    pub params: Vec<NodeId>,
    pub last_conv: NodeId,
    pub output: NodeId,
}

/// One row of [`Network::layer_table`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSummary {
    pub row: usize,
    pub kind: LayerKind,
    pub units: usize,
    pub filter: usize,
    pub stride: usize,
    pub out_size: usize,
    pub shapes: Vec<Vec<usize>>,
    pub params: usize,
}

impl<T: Real> Network<T> {
    /// Builds a zero-initialized network whose layer sizes match the spec.
    pub fn build(spec: &NetworkSpec) -> Result<Self> {
        let layers = spec.resolve()?;
        let spec = spec.resolved()?;
        let mut params = Vec::new();
        let mut slots = Vec::new();
        for layer in &layers {
            for (role, shape) in param_shapes(layer) {
                params.push(Tensor::zeros(&shape));
                slots.push(ParamSlot { layer: layer.index, kind: layer.kind, role });
            }
        }
        Ok(Network { spec, layers, params, slots })
    }

    /// Builds and initializes with [`Network::init_orthogonal`].
    pub fn build_initialized(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut net = Self::build(spec)?;
        net.init_orthogonal(seed);
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[ResolvedLayer] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.spec.input_size
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    /// Channel count `K` of the last convolution.
    pub fn feature_channels(&self) -> usize {
        self.layers[self.layers.len() - 3].out_channels
    }

    /// Spatial size of the maps feeding the global pool.
    pub fn feature_size(&self) -> usize {
        self.layers[self.layers.len() - 3].out_size
    }

    /// The dense weights `w_k`.
    pub fn dense_weights(&self) -> &Tensor<T> {
        &self.params[self.params.len() - 2]
    }

    pub fn dense_bias(&self) -> T {
        self.params[self.params.len() - 1].data()[0]
    }

    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Count of untied bias entries in convolutions.
    pub fn count_conv_bias(&self) -> usize {
        self.params
            .iter()
            .zip(&self.slots)
            .filter(|(_, s)| s.kind == LayerKind::Conv && s.role == ParamRole::Bias)
            .map(|(p, _)| p.len())
            .sum()
    }

    /// Orthogonal weights for every convolution, zero biases.
    ///
    /// Each convolution weight reshaped to `C_out × (C_in·f·f)` gets
    /// orthonormal rows, or columns when it is taller than wide. The dense
    /// row is a random unit vector divided by the feature map area, so the
    /// sum-form pool starts at the scale a mean-form pool would.
    pub fn init_orthogonal(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let area = (self.feature_size() * self.feature_size()) as f64;
        for (param, slot) in self.params.iter_mut().zip(&self.slots) {
            let values: Vec<f64> = match (slot.kind, slot.role) {
                (_, ParamRole::Bias) => vec![0.0; param.len()],
                (LayerKind::Conv, ParamRole::Weight) => {
                    let rows = param.shape()[0];
                    orthogonal_matrix(rows, param.len() / rows, &mut rng)
                }
                (_, ParamRole::Weight) => {
                    let rows = param.shape()[0];
                    orthogonal_matrix(rows, param.len() / rows, &mut rng).into_iter().map(|v| v / area).collect()
                }
            };
            for (dst, v) in param.data_mut().iter_mut().zip(values) {
                *dst = T::from_f64_lossy(v);
            }
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let want = [self.spec.input_channels, self.spec.input_size, self.spec.input_size];
        if input.shape() != want {
            return Err(Error::config(format!(
                "network {} expects input {:?}, got {:?}",
                self.spec.name,
                want,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Inference pass; keeps every layer's output but no backward context.
    pub fn forward(&self, input: &Tensor<T>) -> Result<ForwardTrace<T>> {
        self.check_input(input)?;
        let slope = T::from_f64_lossy(LEAKY_SLOPE);
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        let mut pool_argmax = Vec::with_capacity(self.layers.len());
        let mut p = 0;
        for layer in &self.layers {
            let x = outputs.last().unwrap_or(input);
            let wrap = |e| layer_error(layer.index, layer.kind, e);
            let (out, arg) = match layer.kind {
                LayerKind::Conv => {
                    let (y, _) = ops::conv2d(x, &self.params[p], &self.params[p + 1], layer.stride, layer.pad)
                        .map_err(wrap)?;
                    p += 2;
                    (ops::leaky_relu(&y, slope), None)
                }
                LayerKind::MaxPool => {
                    let (y, arg) = ops::maxpool(x, layer.filter, layer.stride).map_err(wrap)?;
                    (y, Some(arg))
                }
                LayerKind::GlobalPool => (ops::global_average_pool(x).map_err(wrap)?, None),
                LayerKind::Dense => {
                    let y = ops::dense(x, &self.params[p], &self.params[p + 1]).map_err(wrap)?;
                    p += 2;
                    (y, None)
                }
            };
            outputs.push(out);
            pool_argmax.push(arg);
        }
        Ok(ForwardTrace { outputs, pool_argmax, last_conv: self.layers.len() - 3 })
    }

    pub fn predict(&self, input: &Tensor<T>) -> Result<T> {
        Ok(self.forward(input)?.prediction())
    }

    /// Records the forward pass on `graph`, adding every parameter as a
    /// trainable leaf.
    pub fn forward_graph(&self, graph: &mut Graph<T>, input: NodeId) -> Result<GraphNodes> {
        self.check_input(graph.value(input))?;
        let slope = T::from_f64_lossy(LEAKY_SLOPE);
        let params: Vec<NodeId> = self.params.iter().map(|p| graph.param(p.clone())).collect();
        let mut x = input;
        let mut last_conv = input;
        let mut p = 0;
        for layer in &self.layers {
            let wrap = |e| layer_error(layer.index, layer.kind, e);
            x = match layer.kind {
                LayerKind::Conv => {
                    let y = graph.conv2d(x, params[p], params[p + 1], layer.stride, layer.pad).map_err(wrap)?;
                    p += 2;
                    last_conv = graph.leaky_relu(y, slope)?;
                    last_conv
                }
                LayerKind::MaxPool => graph.maxpool(x, layer.filter, layer.stride).map_err(wrap)?,
                LayerKind::GlobalPool => graph.global_average_pool(x).map_err(wrap)?,
                LayerKind::Dense => {
                    let y = graph.dense(x, params[p], params[p + 1]).map_err(wrap)?;
                    p += 2;
                    y
                }
            };
        }
        Ok(GraphNodes { params, last_conv, output: x })
    }

    /// Same weights in another scalar type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            slots: self.slots.clone(),
        }
    }

    /// This network's parameters as a transfer source.
    pub fn source_params(&self) -> Vec<SourceParam> {
        self.params
            .iter()
            .zip(&self.slots)
            .map(|(p, s)| SourceParam { layer: s.layer, kind: s.kind, role: s.role, tensor: p.cast() })
            .collect()
    }

    pub fn layer_table(&self) -> Vec<LayerSummary> {
        self.layers
            .iter()
            .map(|layer| {
                let shapes: Vec<Vec<usize>> = param_shapes(layer).into_iter().map(|(_, s)| s).collect();
                LayerSummary {
                    row: layer_row(layer.index),
                    kind: layer.kind,
                    units: self.spec.layers[layer.index].units,
                    filter: layer.filter,
                    stride: layer.stride,
                    out_size: layer.out_size,
                    params: shapes.iter().map(|s| s.iter().product::<usize>()).sum(),
                    shapes,
                }
            })
            .collect()
    }

    /// Padding of each layer as built.
    pub fn paddings(&self) -> Vec<PadSpec> {
        self.layers.iter().map(|l| l.pad).collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn tiny() -> NetworkSpec {
        NetworkSpec {
            name: "tiny".into(),
            input_size: 9,
            input_channels: 2,
            layers: vec![
                LayerSpec::conv(3, 3, 2, PadSpec::uniform(1), 5),
                LayerSpec::maxpool(2, 1, 4),
                LayerSpec::conv(4, 3, 1, PadSpec::uniform(1), 4),
                LayerSpec::global_pool(),
                LayerSpec::dense(1),
            ],
        }
    }

    #[test]
    fn build_matches_size_column() {
        let net = Network::<f32>::build(&specs::net4()).unwrap();
        let sizes: Vec<usize> = net.layers().iter().map(|l| l.out_size).collect();
        assert_eq!(sizes[1], 225);
        let net = Network::<f32>::build(&specs::net5()).unwrap();
        assert_eq!(net.layers()[0].out_size, 224);
        assert_eq!(net.layers()[14].in_size, 13);
        assert_eq!(net.layers()[14].out_size, 6);
    }

    #[test]
    fn dense_alone_counts_k_plus_one() {
        let net = Network::<f32>::build(&tiny()).unwrap();
        let dense = net.layer_table().pop().unwrap();
        assert_eq!(dense.params, 4 + 1);
    }

    #[test]
    fn graph_and_inference_agree() {
        let mut net = Network::<f64>::build_initialized(&tiny(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let x = Tensor::from_fn(&[2, 9, 9], |_| rng.random_range(-1.0..1.0));
        let trace = net.forward(&x).unwrap();
        let mut g = Graph::new();
        let xi = g.input(x);
        let nodes = net.forward_graph(&mut g, xi).unwrap();
        assert_eq!(g.value(nodes.output).data()[0], trace.prediction());
        assert_eq!(g.value(nodes.last_conv), trace.last_conv());
    }

    #[test]
    fn wrong_input_shape_is_config_error() {
        let net = Network::<f32>::build(&tiny()).unwrap();
        let err = net.forward(&Tensor::zeros(&[2, 8, 8])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn net_small_output_is_scalar() {
        let net = Network::<f32>::build_initialized(&specs::net_small(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_fn(&[3, 64, 64], |_| rng.random_range(-2.0..2.0));
        let trace = net.forward(&x).unwrap();
        assert_eq!(trace.outputs.last().unwrap().shape(), &[1]);
        assert!(trace.prediction().is_finite());
    }

    #[test]
    fn orthogonal_conv_weights_and_zero_biases() {
        let net = Network::<f32>::build_initialized(&tiny(), 9).unwrap();
        for (p, s) in net.params().iter().zip(net.slots()) {
            if s.role == ParamRole::Bias {
                assert!(p.data().iter().all(|&v| v == 0.0));
            }
        }
        let w = &net.params()[0];
        let (rows, cols) = (w.shape()[0], w.len() / w.shape()[0]);
        for i in 0..rows {
            for j in 0..rows {
                let dot: f32 = (0..cols).map(|c| w.data()[i * cols + c] * w.data()[j * cols + c]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-5);
            }
        }
    }
}
