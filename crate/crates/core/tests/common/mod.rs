#![allow(dead_code)]

use prunelab::harness::{Batch, Dataset};
use prunelab::netzoo::{remove_filters, Network};
use prunelab::tensorcore::forward;

/// Multinomial logistic regression on raw pixels, trained by full-batch
/// gradient descent; returns test accuracy.
pub fn linear_probe(train: &Dataset, test: &Dataset, epochs: usize, lr: f64) -> f64 {
    let d: usize = train.image_shape().iter().product();
    let k = train.classes();
    let mut w = vec![0.0; k * (d + 1)];
    let logits = |w: &[f64], x: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|c| {
                let row = &w[c * (d + 1)..(c + 1) * (d + 1)];
                row[d] + row[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    };
    for _ in 0..epochs {
        let mut g = vec![0.0; w.len()];
        for i in 0..train.len() {
            let x = train.image(i);
            let z = logits(&w, x);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let p = e[c] / s - f64::from(u8::from(c == train.labels()[i]));
                let row = &mut g[c * (d + 1)..(c + 1) * (d + 1)];
                for (gj, xj) in row[..d].iter_mut().zip(x) {
                    *gj += p * xj;
                }
                row[d] += p;
            }
        }
        let n = train.len() as f64;
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= lr * gi / n;
        }
    }
    let correct = (0..test.len())
        .filter(|&i| {
            let z = logits(&w, test.image(i));
            let best = (0..k).fold(0, |b, c| if z[c] > z[b] { c } else { b });
            best == test.labels()[i]
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Loss increase from physically removing each filter of one conv layer,
/// averaged over `batches`.
pub fn removal_loss_change(net: &Network, conv_index: usize, batches: &[Batch]) -> Vec<f64> {
    let loss = |n: &Network| -> f64 {
        batches
            .iter()
            .map(|b| forward(n, &b.images, &b.labels).unwrap().loss)
            .sum::<f64>()
            / batches.len() as f64
    };
    let base = loss(net);
    (0..net.census()[conv_index])
        .map(|f| loss(&remove_filters(net, conv_index, &[f]).unwrap()) - base)
        .collect()
}
