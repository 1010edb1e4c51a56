use crate::error::{Error, Result};

use super::ops::{self, PadSpec};
use super::{Real, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf { trainable: bool },
    Conv2d { input: NodeId, weight: NodeId, bias: NodeId, stride: usize, pad: PadSpec, cols: Vec<T> },
    MaxPool { input: NodeId, argmax: Vec<usize> },
    LeakyRelu { input: NodeId, slope: T },
    GlobalPool { input: NodeId },
    Dense { input: NodeId, weight: NodeId, bias: NodeId },
    Mse { pred: NodeId, target: NodeId },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Tape of operations recorded in execution order.
///
/// Nodes are appended as ops run, so the tape is topologically ordered by
/// construction and the backward sweep is a single reverse pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients for every trainable leaf of a graph.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a trainable leaf; `None` for inputs and interior nodes.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes.get(id.0).ok_or_else(|| Error::usage(format!("node {} is not on this graph", id.0)))
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// A constant leaf; it never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf { trainable: false })
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf { trainable: true })
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId, stride: usize, pad: PadSpec) -> Result<NodeId> {
        let (out, cols) =
            ops::conv2d(&self.node(input)?.value, &self.node(weight)?.value, &self.node(bias)?.value, stride, pad)?;
        Ok(self.push(out, Op::Conv2d { input, weight, bias, stride, pad, cols }))
    }

    pub fn maxpool(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let (out, argmax) = ops::maxpool(&self.node(input)?.value, window, stride)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }))
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: T) -> Result<NodeId> {
        let out = ops::leaky_relu(&self.node(input)?.value, slope);
        Ok(self.push(out, Op::LeakyRelu { input, slope }))
    }

    pub fn global_average_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let out = ops::global_average_pool(&self.node(input)?.value)?;
        Ok(self.push(out, Op::GlobalPool { input }))
    }

    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let out = ops::dense(&self.node(input)?.value, &self.node(weight)?.value, &self.node(bias)?.value)?;
        Ok(self.push(out, Op::Dense { input, weight, bias }))
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let loss = ops::mse_loss(&self.node(pred)?.value, &self.node(target)?.value)?;
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }))
    }

    /// Reverse sweep from a scalar node with seed `dL/dL = 1`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        self.backward_with_seed(loss, T::one())
    }

    pub fn backward_with_seed(&self, loss: NodeId, seed: T) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::usage("backward called before any forward op was recorded"));
        }
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(Error::usage(format!("backward needs a scalar loss, got shape {:?}", root.value.shape())));
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(root.value.shape().to_vec(), vec![seed])?);

        fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(existing) => {
                    for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
                None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf { .. } => unreachable!(),
                Op::Conv2d { input, weight, bias, stride, pad, cols } => {
                    let x = &self.nodes[input.0].value;
                    let w = &self.nodes[weight.0].value;
                    let (gx, gw, gb) = ops::conv2d_backward(&grad, cols, x.shape(), w, *stride, *pad)?;
                    accumulate(&mut grads[input.0], gx);
                    accumulate(&mut grads[weight.0], gw);
                    accumulate(&mut grads[bias.0], gb);
                }
                Op::MaxPool { input, argmax } => {
                    let shape = self.nodes[input.0].value.shape();
                    accumulate(&mut grads[input.0], ops::maxpool_backward(&grad, argmax, shape));
                }
                Op::LeakyRelu { input, slope } => {
                    let x = &self.nodes[input.0].value;
                    accumulate(&mut grads[input.0], ops::leaky_relu_backward(&grad, x, *slope));
                }
                Op::GlobalPool { input } => {
                    let shape = self.nodes[input.0].value.shape();
                    accumulate(&mut grads[input.0], ops::global_average_pool_backward(&grad, shape));
                }
                Op::Dense { input, weight, bias } => {
                    let t = &self.nodes[input.0].value;
                    let w = &self.nodes[weight.0].value;
                    let (gt, gw, gb) = ops::dense_backward(&grad, t, w);
                    accumulate(&mut grads[input.0], gt);
                    accumulate(&mut grads[weight.0], gw);
                    accumulate(&mut grads[bias.0], gb);
                }
                Op::Mse { pred, target } => {
                    let p = &self.nodes[pred.0].value;
                    let t = &self.nodes[target.0].value;
                    let seed = grad.data()[0];
                    accumulate(&mut grads[pred.0], ops::mse_loss_backward(p, t, seed));
                    // targets are data, never differentiated
                }
            }
        }

        // keep gradients only for trainable leaves; unreachable ones get zeros
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf { trainable: true } => Some(g.unwrap_or_else(|| Tensor::zeros(node.value.shape()))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}
