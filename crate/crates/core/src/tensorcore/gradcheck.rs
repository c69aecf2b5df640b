//! Central-difference verification of the backward pass.

use super::{forward, Tensor, TensorError};
use crate::netzoo::Network;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step `h` in `(L(t+h) - L(t-h)) / 2h`.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Relative error is `|a - n| / max(|a|, |n|, abs_floor)`, so gradients
    /// smaller than the floor are judged on absolute error.
    pub abs_floor: f64,
    /// Largest fraction of coordinates allowed to be skipped because the
    /// perturbation crossed a ReLU or max-pool switch.
    pub max_skip_fraction: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_skip_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose `+h` or `-h` evaluation took a different ReLU /
    /// max-pool branch than the base point; the loss is not differentiable
    /// across such a switch, so they are excluded from the error.
    pub skipped_nonsmooth: usize,
    pub max_rel_error: f64,
    /// `(parameter tensor index, element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub passed: bool,
}

pub fn grad_check(
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    config: &GradCheckConfig,
) -> Result<GradCheckReport, TensorError> {
    let mut pass = forward(net, batch, labels)?;
    let base_signature = pass.tape.branch_signature();
    let analytic: Vec<Tensor> = pass.backward()?.flat().into_iter().cloned().collect();

    let mut probe = net.clone();
    let eval = |probe: &Network| -> Result<(f64, u64), TensorError> {
        let p = forward(probe, batch, labels)?;
        Ok((p.loss, p.tape.branch_signature()))
    };

    let h = config.step;
    let mut checked = 0;
    let mut skipped = 0;
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let original = probe.param_tensors()[t].data()[i];
            probe.param_tensors_mut()[t].data_mut()[i] = original + h;
            let (plus, sig_plus) = eval(&probe)?;
            probe.param_tensors_mut()[t].data_mut()[i] = original - h;
            let (minus, sig_minus) = eval(&probe)?;
            probe.param_tensors_mut()[t].data_mut()[i] = original;
            checked += 1;
            if sig_plus != base_signature || sig_minus != base_signature {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(config.abs_floor);
            if rel > max_rel {
                max_rel = rel;
                worst = Some((t, i));
            }
        }
    }
    let skip_ok = (skipped as f64) <= config.max_skip_fraction * checked as f64;
    Ok(GradCheckReport {
        checked,
        skipped_nonsmooth: skipped,
        max_rel_error: max_rel,
        worst,
        passed: max_rel <= config.tolerance && skip_ok,
    })
}
