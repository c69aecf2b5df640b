use super::{Tape, Tensor, TensorError, ValueId};
use crate::netzoo::{LayerSpec, Network};

/// A recorded forward pass of a network over one labelled batch.
#[derive(Debug)]
pub struct ForwardPass {
    pub tape: Tape,
    pub loss: f64,
    loss_id: ValueId,
    logits_id: ValueId,
    param_ids: Vec<Option<(ValueId, ValueId)>>,
    activation_ids: Vec<ValueId>,
}

/// Gradients of the batch loss.
#[derive(Debug, Clone)]
pub struct NetGradients {
    /// `(d weight, d bias)` per layer, `None` for parameter-free layers.
    pub params: Vec<Option<(Tensor, Tensor)>>,
    /// Gradient with respect to each conv layer's activation (see
    /// [`ForwardPass::activation`]), one per conv layer.
    pub activations: Vec<Tensor>,
}

impl NetGradients {
    /// Same order as [`Network::param_tensors`].
    pub fn flat(&self) -> Vec<&Tensor> {
        self.params.iter().flatten().flat_map(|(w, b)| [w, b]).collect()
    }
}

fn check_batch(net: &Network, batch: &Tensor) -> Result<usize, TensorError> {
    let [b, c, h, w] = batch.dims4()?;
    if [c, h, w] != net.spec().input || b == 0 {
        return Err(TensorError::ShapeMismatch(format!(
            "batch {:?} does not match network input {:?}",
            batch.shape(),
            net.spec().input
        )));
    }
    batch.ensure_finite("input batch")?;
    Ok(b)
}

struct Built {
    tape: Tape,
    logits: ValueId,
    param_ids: Vec<Option<(ValueId, ValueId)>>,
    activation_ids: Vec<ValueId>,
}

fn build(net: &Network, batch: &Tensor, with_grad: bool) -> Result<Built, TensorError> {
    check_batch(net, batch)?;
    let mut tape = Tape::new();
    let mut cur = tape.leaf(batch.clone(), false);
    let mut param_ids = Vec::with_capacity(net.spec().layers.len());
    let mut activation_ids = Vec::new();
    let mut prev_conv = false;
    for (layer, params) in net.spec().layers.iter().zip(net.layer_params()) {
        let ids = params.as_ref().map(|p| {
            (
                tape.leaf(p.weight.clone(), with_grad),
                tape.leaf(p.bias.clone(), with_grad),
            )
        });
        param_ids.push(ids);
        let is_conv = matches!(layer, LayerSpec::Conv { .. });
        cur = match *layer {
            LayerSpec::Conv { stride, padding, .. } => {
                let (w, b) = ids.expect("conv params");
                let out = tape.conv2d(cur, w, b, stride, padding)?;
                activation_ids.push(out);
                out
            }
            LayerSpec::Relu => {
                let out = tape.relu(cur);
                if prev_conv {
                    *activation_ids.last_mut().expect("conv before relu") = out;
                }
                out
            }
            LayerSpec::MaxPool { kernel, stride } => tape.max_pool(cur, kernel, stride)?,
            LayerSpec::Flatten => tape.flatten(cur),
            LayerSpec::Dense { .. } => {
                let (w, b) = ids.expect("dense params");
                tape.dense(cur, w, b)?
            }
        };
        prev_conv = is_conv;
    }
    Ok(Built {
        tape,
        logits: cur,
        param_ids,
        activation_ids,
    })
}

/// Runs the network on `batch: [B, C, H, W]` and records everything needed to
/// differentiate the mean softmax cross-entropy against `labels`.
pub fn forward(net: &Network, batch: &Tensor, labels: &[usize]) -> Result<ForwardPass, TensorError> {
    let Built {
        mut tape,
        logits,
        param_ids,
        activation_ids,
    } = build(net, batch, true)?;
    let loss_id = tape.softmax_cross_entropy(logits, labels)?;
    let loss = tape.value(loss_id).item();
    if !loss.is_finite() {
        return Err(TensorError::NonFinite(format!("loss is {loss}")));
    }
    Ok(ForwardPass {
        tape,
        loss,
        loss_id,
        logits_id: logits,
        param_ids,
        activation_ids,
    })
}

/// Logits `[B, classes]` without recording gradients.
pub fn predict(net: &Network, batch: &Tensor) -> Result<Tensor, TensorError> {
    let built = build(net, batch, false)?;
    Ok(built.tape.value(built.logits).clone())
}

impl ForwardPass {
    pub fn logits(&self) -> &Tensor {
        self.tape.value(self.logits_id)
    }

    /// Feature map of conv layer `conv_index`: the ReLU output when the conv
    /// is directly followed by a ReLU, the raw conv output otherwise.
    pub fn activation(&self, conv_index: usize) -> &Tensor {
        self.tape.value(self.activation_ids[conv_index])
    }

    pub fn conv_count(&self) -> usize {
        self.activation_ids.len()
    }

    /// Multiplies the recorded loss by `factor` (appends a scale node).
    pub fn scale_loss(&mut self, factor: f64) {
        self.loss_id = self.tape.scale(self.loss_id, factor);
        self.loss = self.tape.value(self.loss_id).item();
    }

    pub fn backward(&mut self) -> Result<NetGradients, TensorError> {
        let mut grads = self.tape.backward(self.loss_id)?;
        let params = self
            .param_ids
            .iter()
            .map(|ids| {
                ids.map(|(w, b)| {
                    let gw = grads
                        .take(w)
                        .unwrap_or_else(|| Tensor::zeros(self.tape.value(w).shape()));
                    let gb = grads
                        .take(b)
                        .unwrap_or_else(|| Tensor::zeros(self.tape.value(b).shape()));
                    (gw, gb)
                })
            })
            .collect();
        let activations = self
            .activation_ids
            .iter()
            .map(|&a| {
                grads
                    .take(a)
                    .unwrap_or_else(|| Tensor::zeros(self.tape.value(a).shape()))
            })
            .collect();
        Ok(NetGradients { params, activations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netzoo::{LayerParams, NetworkSpec};

    fn batch(b: usize, spec: &NetworkSpec, seed: f64) -> Tensor {
        let [c, h, w] = spec.input;
        let n = b * c * h * w;
        Tensor::from_vec(&[b, c, h, w], (0..n).map(|i| ((i as f64) * 0.37 + seed).sin()).collect()).unwrap()
    }

    #[test]
    fn zero_weights_give_log_ten() {
        let spec = NetworkSpec::mini_cnn_a();
        let mut net = Network::build(spec.clone(), 0).unwrap();
        for t in net.param_tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let pass = forward(&net, &batch(3, &spec, 0.1), &[0, 4, 9]).unwrap();
        assert!((pass.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_pointwise_conv() {
        let spec = NetworkSpec::parse(
            "input c=1 h=3 w=3\nclasses 2\nconv out=1 k=1\nflatten\ndense out=2\n",
        )
        .unwrap();
        let mut net = Network::build(spec.clone(), 0).unwrap();
        net.layer_params_mut()[0] = Some(LayerParams {
            weight: Tensor::filled(&[1, 1, 1, 1], 1.0),
            bias: Tensor::zeros(&[1]),
        });
        let ones = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let pass = forward(&net, &ones, &[0]).unwrap();
        assert!(pass.activation(0).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn random_net_loss_positive() {
        let spec = NetworkSpec::mini_cnn_a();
        let net = Network::build(spec.clone(), 9).unwrap();
        let pass = forward(&net, &batch(4, &spec, 0.5), &[1, 2, 3, 4]).unwrap();
        assert!(pass.loss.is_finite() && pass.loss > 0.0);
        assert_eq!(pass.logits().shape(), &[4, 10]);
        assert_eq!(pass.conv_count(), 4);
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = NetworkSpec::mini_cnn_a();
        let net = Network::build(spec.clone(), 9).unwrap();
        let wrong = Tensor::zeros(&[1, 3, 16, 16]);
        assert!(forward(&net, &wrong, &[0]).is_err());
        let mut nan = batch(1, &spec, 0.0);
        nan.data_mut()[5] = f64::NAN;
        assert!(matches!(forward(&net, &nan, &[0]), Err(TensorError::NonFinite(_))));
        assert!(forward(&net, &batch(1, &spec, 0.0), &[10]).is_err());
    }

    #[test]
    fn scaling_loss_doubles_gradients() {
        let spec = NetworkSpec::mini_cnn_a();
        let net = Network::build(spec.clone(), 2).unwrap();
        let x = batch(2, &spec, 0.3);
        let g1 = forward(&net, &x, &[1, 7]).unwrap().backward().unwrap();
        let mut pass = forward(&net, &x, &[1, 7]).unwrap();
        pass.scale_loss(2.0);
        let g2 = pass.backward().unwrap();
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert_eq!(2.0 * u, *v);
            }
        }
    }

    #[test]
    fn dead_branch_has_exact_zero_gradient() {
        let spec = NetworkSpec::mini_cnn_a();
        let mut net = Network::build(spec.clone(), 2).unwrap();
        crate::netzoo::zero_outgoing(&mut net, 2, 5).unwrap();
        let mut pass = forward(&net, &batch(2, &spec, 0.3), &[1, 7]).unwrap();
        let g = pass.backward().unwrap();
        let pos = spec.conv_positions()[2];
        let (gw, gb) = g.params[pos].as_ref().unwrap();
        assert!(gw.data()[5 * 32..6 * 32].iter().all(|&v| v == 0.0));
        assert_eq!(gb.data()[5], 0.0);
    }

    #[test]
    fn second_backward_is_an_error() {
        let spec = NetworkSpec::mini_cnn_a();
        let net = Network::build(spec.clone(), 2).unwrap();
        let mut pass = forward(&net, &batch(1, &spec, 0.3), &[1]).unwrap();
        pass.backward().unwrap();
        assert!(matches!(pass.backward(), Err(TensorError::TapeConsumed)));
    }

    #[test]
    fn predict_matches_forward_logits() {
        let spec = NetworkSpec::mini_cnn_a();
        let net = Network::build(spec.clone(), 2).unwrap();
        let x = batch(3, &spec, 0.9);
        let pass = forward(&net, &x, &[0, 1, 2]).unwrap();
        assert_eq!(&predict(&net, &x).unwrap(), pass.logits());
    }
}
