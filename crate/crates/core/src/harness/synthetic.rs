//! Class-conditional blob images: a quick, learnable stand-in for natural
//! images.
//!
//! Each class owns a template made of a few coloured Gaussian blobs,
//! rescaled to unit RMS. A sample is its class template shifted by a random
//! integer offset of at most `jitter` pixels (zero-filled at the border),
//! multiplied by `separability`, plus i.i.d. Gaussian pixel noise of
//! standard deviation `noise`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Dataset, HarnessError, Splits};
use crate::seeding;
use crate::tensorcore::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// `[C, H, W]`.
    pub image: [usize; 3],
    pub separability: f64,
    pub blobs_per_class: usize,
    pub jitter: usize,
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            image: [3, 32, 32],
            separability: 0.1,
            blobs_per_class: 3,
            jitter: 3,
            noise: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Dataset(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.image.contains(&0) {
            return bad(format!("degenerate image shape {:?}", self.image));
        }
        if self.blobs_per_class == 0 {
            return bad("blobs_per_class must be at least 1".into());
        }
        if !(self.separability.is_finite() && self.separability >= 0.0) {
            return bad(format!("separability must be >= 0, got {}", self.separability));
        }
        if !(self.noise.is_finite() && self.noise > 0.0) {
            return bad(format!("noise must be > 0, got {}", self.noise));
        }
        Ok(())
    }

    fn template(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let [c, h, w] = self.image;
        let mut t = vec![0.0; c * h * w];
        for _ in 0..self.blobs_per_class {
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            let sigma = rng.random_range(0.1..0.25) * h.min(w) as f64;
            let colour: Vec<f64> = (0..c).map(|_| StandardNormal.sample(rng)).collect();
            for (ch, &amp) in colour.iter().enumerate() {
                for y in 0..h {
                    for x in 0..w {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        t[(ch * h + y) * w + x] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
        }
        let rms = (t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
        if rms > 0.0 {
            t.iter_mut().for_each(|v| *v /= rms);
        }
        t
    }

    fn sample_into(&self, template: &[f64], rng: &mut ChaCha8Rng, noise: &Normal<f64>, out: &mut Vec<f64>) {
        let [c, h, w] = self.image;
        let j = self.jitter as i64;
        let dy = rng.random_range(-j..=j) as isize;
        let dx = rng.random_range(-j..=j) as isize;
        for ch in 0..c {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let (sy, sx) = (y - dy, x - dx);
                    let base = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                        template[(ch * h + sy as usize) * w + sx as usize]
                    } else {
                        0.0
                    };
                    out.push(self.separability * base + noise.sample(rng));
                }
            }
        }
    }

    fn split(&self, templates: &[Vec<f64>], count: usize, rng: &mut ChaCha8Rng) -> Result<Dataset, HarnessError> {
        let noise = Normal::new(0.0, self.noise).expect("validated noise");
        let [c, h, w] = self.image;
        let mut data = Vec::with_capacity(count * c * h * w);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            // balanced classes in a fixed interleaved order
            let label = i % self.classes;
            self.sample_into(&templates[label], rng, &noise, &mut data);
            labels.push(label);
        }
        Dataset::new(Tensor::from_vec(&[count, c, h, w], data)?, labels, self.classes)
    }
}

/// Generates train / score / test splits from independent random streams.
/// Values are returned un-normalized.
pub fn gen_synthetic(
    spec: &SyntheticSpec,
    sizes: [usize; 3],
    seed: u64,
) -> Result<Splits, HarnessError> {
    spec.validate()?;
    let mut trng = seeding::rng(seeding::derive(seed, 0));
    let templates: Vec<Vec<f64>> = (0..spec.classes).map(|_| spec.template(&mut trng)).collect();
    let part = |tag: u64, count: usize| {
        let mut rng = seeding::rng(seeding::derive(seed, tag));
        spec.split(&templates, count, &mut rng)
    };
    Ok(Splits {
        train: part(1, sizes[0])?,
        score: part(2, sizes[1])?,
        test: part(3, sizes[2])?,
    })
}
