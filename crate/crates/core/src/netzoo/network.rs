use rand_distr::{Distribution, Normal};

use super::{LayerSpec, NetError, NetworkSpec};
use crate::seeding;
use crate::tensorcore::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// A topology plus realized weights. Conv weights are `[out, in, k, k]`,
/// dense weights `[out, in]`; biases are zero-initialized.
///
/// Weights are He-normal, except the final (logit) layer whose He draw is
/// scaled by [`OUTPUT_INIT_SCALE`] so that initial logits sit near zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Option<LayerParams>>,
}

/// He (fan-in) normal initialization.
pub(crate) fn he_tensor(shape: &[usize], fan_in: usize, seed: u64) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut rng = seeding::rng(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

pub(crate) fn fan_in(weight_shape: &[usize]) -> usize {
    weight_shape[1..].iter().product()
}

pub const OUTPUT_INIT_SCALE: f64 = 0.1;

impl Network {
    pub fn build(spec: NetworkSpec, init_seed: u64) -> Result<Self, NetError> {
        let shapes = spec.param_shapes()?;
        let last = shapes.iter().rposition(Option::is_some);
        let params = shapes
            .into_iter()
            .enumerate()
            .map(|(pos, s)| {
                s.map(|(w, b)| {
                    let mut weight = he_tensor(&w, fan_in(&w), seeding::derive(init_seed, pos as u64));
                    if Some(pos) == last {
                        weight.scale(OUTPUT_INIT_SCALE);
                    }
                    LayerParams {
                        weight,
                        bias: Tensor::zeros(&[b]),
                    }
                })
            })
            .collect();
        Ok(Self { spec, params })
    }

    /// Assembles a network from explicit parameters, checking every shape.
    pub fn from_parts(spec: NetworkSpec, params: Vec<Option<LayerParams>>) -> Result<Self, NetError> {
        let shapes = spec.param_shapes()?;
        if shapes.len() != params.len() {
            return Err(NetError::ParamMismatch(format!(
                "{} layers but {} parameter slots",
                shapes.len(),
                params.len()
            )));
        }
        for (pos, (want, got)) in shapes.iter().zip(&params).enumerate() {
            let ok = match (want, got) {
                (None, None) => true,
                (Some((w, b)), Some(p)) => p.weight.shape() == w.as_slice() && p.bias.shape() == [*b],
                _ => false,
            };
            if !ok {
                return Err(NetError::ParamMismatch(format!("layer {pos}: expected {want:?}")));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layer_params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn layer_params_mut(&mut self) -> &mut [Option<LayerParams>] {
        &mut self.params
    }

    pub fn into_parts(self) -> (NetworkSpec, Vec<Option<LayerParams>>) {
        (self.spec, self.params)
    }

    /// Weight and bias tensors in layer order (`w0, b0, w1, b1, ...`).
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        self.params
            .iter()
            .flatten()
            .flat_map(|p| [&p.weight, &p.bias])
            .collect()
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params
            .iter_mut()
            .flatten()
            .flat_map(|p| [&mut p.weight, &mut p.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    pub fn census(&self) -> Vec<usize> {
        self.spec.census()
    }

    pub fn conv_count(&self) -> usize {
        self.spec.conv_positions().len()
    }

    /// Parameters of the `conv_index`-th conv layer.
    pub fn conv_params(&self, conv_index: usize) -> Option<&LayerParams> {
        let pos = *self.spec.conv_positions().get(conv_index)?;
        self.params[pos].as_ref()
    }

    pub fn conv_params_mut(&mut self, conv_index: usize) -> Option<&mut LayerParams> {
        let pos = *self.spec.conv_positions().get(conv_index)?;
        self.params[pos].as_mut()
    }

    /// Position of the first weight-bearing layer after `pos`.
    pub fn consumer_of(&self, pos: usize) -> Option<usize> {
        self.spec
            .layers
            .iter()
            .enumerate()
            .skip(pos + 1)
            .find(|(_, l)| l.has_params())
            .map(|(i, _)| i)
    }

    pub(crate) fn is_conv(&self, pos: usize) -> bool {
        matches!(self.spec.layers[pos], LayerSpec::Conv { .. })
    }
}
