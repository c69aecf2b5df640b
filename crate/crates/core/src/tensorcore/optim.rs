use super::{Tensor, TensorError};

/// Classical momentum SGD state: `v <- momentum * v - lr * g; theta <- theta + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocities: Vec<Tensor>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerState {
    /// Zero velocities shaped like `params`.
    pub fn new(params: &[&Tensor], learning_rate: f64, momentum: f64) -> Result<Self, TensorError> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(TensorError::InvalidHyperparameter(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(TensorError::InvalidHyperparameter(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(Self {
            velocities: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            learning_rate,
            momentum,
        })
    }

    pub fn velocities(&self) -> &[Tensor] {
        &self.velocities
    }
}

pub fn sgd_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut OptimizerState) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.velocities.len() {
        return Err(TensorError::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            state.velocities.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocities) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "parameter {:?}, gradient {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let (lr, mu) = (state.learning_rate, state.momentum);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocities) {
        for ((theta, grad), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vel = mu * *vel - lr * grad;
            *theta += *vel;
        }
    }
    Ok(())
}
