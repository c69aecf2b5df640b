use super::HarnessError;
use crate::tensorcore::Tensor;

/// Labelled images stored as one `[N, C, H, W]` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

/// A minibatch ready for [`crate::tensorcore::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Disjoint train / score / test partitions. The score split feeds saliency
/// estimation and early stopping; the test split is only ever evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub score: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self, HarnessError> {
        let [n, ..] = images.dims4()?;
        if n != labels.len() {
            return Err(HarnessError::Dataset(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(HarnessError::Dataset(format!("label {bad} with {classes} classes")));
        }
        Ok(Self { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn image_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let len = self.image_len();
        &self.images.data()[i * len..(i + 1) * len]
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let len = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let [c, h, w] = self.image_shape();
        Batch {
            images: Tensor::from_vec(&[indices.len(), c, h, w], data).expect("batch shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let b = self.batch(indices);
        Dataset {
            images: b.images,
            labels: b.labels,
            classes: self.classes,
        }
    }

    /// Consecutive batches in storage order; the last one may be short.
    pub fn chunks(&self, batch_size: usize) -> Vec<Batch> {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(batch_size.max(1)).map(|c| self.batch(c)).collect()
    }

    /// Per-channel mean and population standard deviation.
    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        let [c, h, w] = self.image_shape();
        let plane = h * w;
        (0..c)
            .map(|ch| {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for i in 0..self.len() {
                    let p = &self.image(i)[ch * plane..(ch + 1) * plane];
                    sum += p.iter().sum::<f64>();
                    sq += p.iter().map(|v| v * v).sum::<f64>();
                }
                let count = (self.len() * plane) as f64;
                let mean = sum / count;
                (mean, (sq / count - mean * mean).max(0.0).sqrt())
            })
            .collect()
    }

    /// Applies `(x - mean) / std` per channel; a zero std leaves the channel
    /// centred but unscaled.
    pub fn normalize(&mut self, stats: &[(f64, f64)]) {
        let [c, h, w] = self.image_shape();
        let plane = h * w;
        for img in self.images.data_mut().chunks_exact_mut(c * plane) {
            for (ch, &(mean, std)) in stats.iter().enumerate() {
                let scale = if std > 0.0 { 1.0 / std } else { 1.0 };
                for v in &mut img[ch * plane..(ch + 1) * plane] {
                    *v = (*v - mean) * scale;
                }
            }
        }
    }
}

impl Splits {
    /// Normalizes all three splits with statistics of the train split.
    pub fn normalize_by_train(&mut self) {
        let stats = self.train.channel_stats();
        self.train.normalize(&stats);
        self.score.normalize(&stats);
        self.test.normalize(&stats);
    }
}
