use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::kernels::{self, ConvGeom};
use super::{Tensor, TensorError};

/// Handle to a value slot on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Node {
    Conv2d {
        input: ValueId,
        weight: ValueId,
        bias: ValueId,
        output: ValueId,
        geom: ConvGeom,
        batch: usize,
        out_channels: usize,
    },
    Dense {
        input: ValueId,
        weight: ValueId,
        bias: ValueId,
        output: ValueId,
        batch: usize,
        features: usize,
    },
    Relu {
        input: ValueId,
        output: ValueId,
    },
    MaxPool {
        input: ValueId,
        output: ValueId,
        argmax: Vec<usize>,
    },
    Reshape {
        input: ValueId,
        output: ValueId,
    },
    SoftmaxCrossEntropy {
        logits: ValueId,
        output: ValueId,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    Scale {
        input: ValueId,
        output: ValueId,
        factor: f64,
    },
}

/// Recorded computation for reverse-mode differentiation.
///
/// Values are appended in evaluation order, so the node list is already
/// topologically sorted and the backward pass walks it in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    requires_grad: Vec<bool>,
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of a scalar with respect to every slot that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: ValueId, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[id.0] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(&delta) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::from_vec(shape, delta).expect("gradient shape"));
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool) -> ValueId {
        self.values.push(value);
        self.requires_grad.push(requires_grad);
        ValueId(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> ValueId {
        self.push(value, requires_grad)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn requires_grad(&self, id: ValueId) -> bool {
        self.requires_grad[id.0]
    }

    fn any_grad(&self, ids: &[ValueId]) -> bool {
        ids.iter().any(|&i| self.requires_grad[i.0])
    }

    pub fn conv2d(
        &mut self,
        input: ValueId,
        weight: ValueId,
        bias: ValueId,
        stride: usize,
        padding: usize,
    ) -> Result<ValueId, TensorError> {
        let [batch, channels, height, width] = self.value(input).dims4()?;
        let [out_channels, wc, kh, kw] = self.value(weight).dims4()?;
        if wc != channels || kh != kw {
            return Err(TensorError::ShapeMismatch(format!(
                "conv weight {:?} does not fit input {:?}",
                self.value(weight).shape(),
                self.value(input).shape()
            )));
        }
        if self.value(bias).shape() != [out_channels] {
            return Err(TensorError::ShapeMismatch(format!(
                "conv bias {:?}, expected [{out_channels}]",
                self.value(bias).shape()
            )));
        }
        if stride == 0 || kh > height + 2 * padding || kh > width + 2 * padding {
            return Err(TensorError::ShapeMismatch(format!(
                "kernel {kh} / stride {stride} invalid for {height}x{width} input with padding {padding}"
            )));
        }
        let geom = ConvGeom {
            channels,
            height,
            width,
            kernel: kh,
            stride,
            padding,
        };
        let (oh, ow) = geom.out_hw();
        let y = kernels::conv2d_forward(
            self.value(input).data(),
            batch,
            &geom,
            self.value(weight).data(),
            self.value(bias).data(),
            out_channels,
        );
        let rg = self.any_grad(&[input, weight, bias]);
        let output = self.push(Tensor::from_vec(&[batch, out_channels, oh, ow], y)?, rg);
        self.nodes.push(Node::Conv2d {
            input,
            weight,
            bias,
            output,
            geom,
            batch,
            out_channels,
        });
        Ok(output)
    }

    pub fn dense(&mut self, input: ValueId, weight: ValueId, bias: ValueId) -> Result<ValueId, TensorError> {
        let [batch, features] = self.value(input).dims2()?;
        let [out, wf] = self.value(weight).dims2()?;
        if wf != features || self.value(bias).shape() != [out] {
            return Err(TensorError::ShapeMismatch(format!(
                "dense weight {:?} / bias {:?} do not fit input {:?}",
                self.value(weight).shape(),
                self.value(bias).shape(),
                self.value(input).shape()
            )));
        }
        let y = kernels::dense_forward(
            self.value(input).data(),
            batch,
            features,
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let rg = self.any_grad(&[input, weight, bias]);
        let output = self.push(Tensor::from_vec(&[batch, out], y)?, rg);
        self.nodes.push(Node::Dense {
            input,
            weight,
            bias,
            output,
            batch,
            features,
        });
        Ok(output)
    }

    pub fn relu(&mut self, input: ValueId) -> ValueId {
        let x = self.value(input);
        let y: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = x.shape().to_vec();
        let rg = self.requires_grad[input.0];
        let output = self.push(Tensor::from_vec(&shape, y).expect("relu shape"), rg);
        self.nodes.push(Node::Relu { input, output });
        output
    }

    pub fn max_pool(&mut self, input: ValueId, kernel: usize, stride: usize) -> Result<ValueId, TensorError> {
        let [b, c, h, w] = self.value(input).dims4()?;
        if kernel == 0 || stride == 0 || kernel > h || kernel > w {
            return Err(TensorError::ShapeMismatch(format!(
                "pool kernel {kernel} / stride {stride} invalid for {h}x{w} input"
            )));
        }
        let (y, argmax) = kernels::maxpool_forward(self.value(input).data(), b * c, h, w, kernel, stride);
        let oh = (h - kernel) / stride + 1;
        let ow = (w - kernel) / stride + 1;
        let rg = self.requires_grad[input.0];
        let output = self.push(Tensor::from_vec(&[b, c, oh, ow], y)?, rg);
        self.nodes.push(Node::MaxPool { input, output, argmax });
        Ok(output)
    }

    /// `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, input: ValueId) -> ValueId {
        let x = self.value(input);
        let batch = x.shape()[0];
        let rest = x.len() / batch.max(1);
        let y = x.clone().reshape(&[batch, rest]).expect("flatten shape");
        let rg = self.requires_grad[input.0];
        let output = self.push(y, rg);
        self.nodes.push(Node::Reshape { input, output });
        output
    }

    /// Mean softmax cross-entropy of `logits: [B, K]` against `labels`.
    pub fn softmax_cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId, TensorError> {
        let [batch, classes] = self.value(logits).dims2()?;
        if labels.len() != batch {
            return Err(TensorError::ShapeMismatch(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::InvalidLabel { label: bad, classes });
        }
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits).data(), classes, labels);
        let rg = self.requires_grad[logits.0];
        let output = self.push(Tensor::scalar(loss), rg);
        self.nodes.push(Node::SoftmaxCrossEntropy {
            logits,
            output,
            probs,
            labels: labels.to_vec(),
        });
        Ok(output)
    }

    pub fn scale(&mut self, input: ValueId, factor: f64) -> ValueId {
        let mut y = self.value(input).clone();
        y.scale(factor);
        let rg = self.requires_grad[input.0];
        let output = self.push(y, rg);
        self.nodes.push(Node::Scale { input, output, factor });
        output
    }

    /// Hash of every non-differentiable branch taken during the forward pass
    /// (ReLU active sets and max-pool winners). Two evaluations with equal
    /// signatures lie in the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match node {
                Node::Relu { output, .. } => {
                    for (i, &v) in self.values[output.0].data().iter().enumerate() {
                        if v > 0.0 {
                            i.hash(&mut h);
                        }
                    }
                    u64::MAX.hash(&mut h);
                }
                Node::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from the scalar `loss`. A tape can be differentiated once.
    pub fn backward(&mut self, loss: ValueId) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::ShapeMismatch(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let nodes = std::mem::take(&mut self.nodes);
        for node in nodes.iter().rev() {
            self.backprop_node(node, &mut grads);
        }
        self.nodes = nodes;
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, grads: &mut [Option<Tensor>]) {
        let output = match node {
            Node::Conv2d { output, .. }
            | Node::Dense { output, .. }
            | Node::Relu { output, .. }
            | Node::MaxPool { output, .. }
            | Node::Reshape { output, .. }
            | Node::SoftmaxCrossEntropy { output, .. }
            | Node::Scale { output, .. } => *output,
        };
        let Some(dy) = grads[output.0].take() else {
            return;
        };
        let rg = |id: ValueId| self.requires_grad[id.0];
        match node {
            Node::Conv2d {
                input,
                weight,
                bias,
                geom,
                batch,
                out_channels,
                ..
            } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*input).data(),
                    *batch,
                    geom,
                    self.value(*weight).data(),
                    *out_channels,
                    dy.data(),
                    rg(*input),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *input, self.value(*input).shape(), dx);
                }
                if rg(*weight) {
                    accumulate(grads, *weight, self.value(*weight).shape(), dw);
                }
                if rg(*bias) {
                    accumulate(grads, *bias, self.value(*bias).shape(), db);
                }
            }
            Node::Dense {
                input,
                weight,
                bias,
                batch,
                features,
                ..
            } => {
                let out = self.value(*bias).len();
                let (dx, dw, db) = kernels::dense_backward(
                    self.value(*input).data(),
                    *batch,
                    *features,
                    self.value(*weight).data(),
                    out,
                    dy.data(),
                    rg(*input),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *input, self.value(*input).shape(), dx);
                }
                if rg(*weight) {
                    accumulate(grads, *weight, self.value(*weight).shape(), dw);
                }
                if rg(*bias) {
                    accumulate(grads, *bias, self.value(*bias).shape(), db);
                }
            }
            Node::Relu { input, output } => {
                if rg(*input) {
                    let y = self.value(*output).data();
                    let dx = dy
                        .data()
                        .iter()
                        .zip(y)
                        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(grads, *input, self.value(*input).shape(), dx);
                }
            }
            Node::MaxPool { input, argmax, .. } => {
                if rg(*input) {
                    let mut dx = vec![0.0; self.value(*input).len()];
                    for (&i, &g) in argmax.iter().zip(dy.data()) {
                        dx[i] += g;
                    }
                    accumulate(grads, *input, self.value(*input).shape(), dx);
                }
            }
            Node::Reshape { input, .. } => {
                if rg(*input) {
                    accumulate(grads, *input, self.value(*input).shape(), dy.data().to_vec());
                }
            }
            Node::SoftmaxCrossEntropy {
                logits, probs, labels, ..
            } => {
                if rg(*logits) {
                    let upstream = dy.item();
                    let classes = probs.len() / labels.len();
                    let inv_b = upstream / labels.len() as f64;
                    let mut dx: Vec<f64> = probs.iter().map(|p| p * inv_b).collect();
                    for (row, &l) in labels.iter().enumerate() {
                        dx[row * classes + l] -= inv_b;
                    }
                    accumulate(grads, *logits, self.value(*logits).shape(), dx);
                }
            }
            Node::Scale { input, factor, .. } => {
                if rg(*input) {
                    let dx = dy.data().iter().map(|g| g * factor).collect();
                    accumulate(grads, *input, self.value(*input).shape(), dx);
                }
            }
        }
        grads[output.0] = Some(dy);
    }
}
