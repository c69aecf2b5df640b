//! First-order Taylor saliency of conv filters.
//!
//! For filter `f` with activation map `a` and loss gradient `g = dL/da`, one
//! batch contributes `|mean_{b,y,x} a[b,f,y,x] * g[b,f,y,x]|`; contributions
//! are averaged over batches and each layer's vector is then scaled to unit
//! L2 norm so scores are comparable across layers.

use super::PruneError;
use crate::harness::Batch;
use crate::netzoo::Network;
use crate::tensorcore::forward;

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// One non-negative score per surviving filter, per conv layer.
    pub layers: Vec<Vec<f64>>,
    pub batches_used: usize,
    pub normalized: bool,
}

impl SaliencyMap {
    /// Per-layer L2 normalization. An all-zero layer stays all zero.
    pub fn normalized(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|scores| {
                let norm = scores.iter().map(|s| s * s).sum::<f64>().sqrt();
                if norm > 0.0 {
                    scores.iter().map(|s| s / norm).collect()
                } else {
                    scores.clone()
                }
            })
            .collect();
        Self {
            layers,
            batches_used: self.batches_used,
            normalized: true,
        }
    }

    pub fn layer(&self, conv_index: usize) -> &[f64] {
        &self.layers[conv_index]
    }
}

/// Taylor scores before normalization.
pub fn taylor_scores_raw(net: &Network, batches: &[Batch]) -> Result<SaliencyMap, PruneError> {
    if batches.is_empty() {
        return Err(PruneError::EmptyStream);
    }
    let mut layers: Vec<Vec<f64>> = net.census().iter().map(|&c| vec![0.0; c]).collect();
    for batch in batches {
        let mut pass = forward(net, &batch.images, &batch.labels)?;
        let grads = pass.backward()?;
        for (l, scores) in layers.iter_mut().enumerate() {
            let a = pass.activation(l);
            let g = &grads.activations[l];
            let [b, c, h, w] = a.dims4()?;
            let plane = h * w;
            for (f, score) in scores.iter_mut().enumerate() {
                let mut sum = 0.0;
                for item in 0..b {
                    let at = (item * c + f) * plane;
                    sum += a.data()[at..at + plane]
                        .iter()
                        .zip(&g.data()[at..at + plane])
                        .map(|(x, y)| x * y)
                        .sum::<f64>();
                }
                *score += (sum / (b * plane) as f64).abs();
            }
        }
    }
    let n = batches.len() as f64;
    for scores in &mut layers {
        for s in scores.iter_mut() {
            *s /= n;
        }
    }
    Ok(SaliencyMap {
        layers,
        batches_used: batches.len(),
        normalized: false,
    })
}

/// Layer-normalized Taylor scores; the network is only read.
pub fn taylor_scores(net: &Network, batches: &[Batch]) -> Result<SaliencyMap, PruneError> {
    Ok(taylor_scores_raw(net, batches)?.normalized())
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// Returns `None` for fewer than two points or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
