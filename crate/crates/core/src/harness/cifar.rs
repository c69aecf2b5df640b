//! CIFAR-10 binary batches: records of one label byte followed by 3072 pixel
//! bytes (R, G and B planes, each 32x32 row-major).

use std::path::Path;

use rand::seq::index;

use super::{Dataset, HarnessError, Splits};
use crate::seeding;
use crate::tensorcore::Tensor;

pub const RECORD_LEN: usize = 3073;
pub const IMAGE_SHAPE: [usize; 3] = [3, 32, 32];
pub const CLASSES: usize = 10;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Decodes one batch file, scaling pixels to `[0, 1]`.
pub fn parse_records(bytes: &[u8]) -> Result<Dataset, HarnessError> {
    if bytes.len() % RECORD_LEN != 0 {
        let offset = bytes.len() / RECORD_LEN * RECORD_LEN;
        return Err(HarnessError::Dataset(format!(
            "truncated record at byte offset {offset}: {} bytes left, a record is {RECORD_LEN}",
            bytes.len() - offset
        )));
    }
    let n = bytes.len() / RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * (RECORD_LEN - 1));
    for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(HarnessError::Dataset(format!(
                "label {} at byte offset {} (record {i})",
                rec[0],
                i * RECORD_LEN
            )));
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    let [c, h, w] = IMAGE_SHAPE;
    Dataset::new(Tensor::from_vec(&[n, c, h, w], data)?, labels, CLASSES)
}

fn read(path: &Path) -> Result<Dataset, HarnessError> {
    let bytes = std::fs::read(path)
        .map_err(|e| HarnessError::Dataset(format!("cannot read {}: {e}", path.display())))?;
    parse_records(&bytes).map_err(|e| match e {
        HarnessError::Dataset(m) => HarnessError::Dataset(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn concat(parts: Vec<Dataset>) -> Result<Dataset, HarnessError> {
    let n: usize = parts.iter().map(Dataset::len).sum();
    let mut data = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for p in parts {
        data.extend_from_slice(p.images().data());
        labels.extend_from_slice(p.labels());
    }
    let [c, h, w] = IMAGE_SHAPE;
    Dataset::new(Tensor::from_vec(&[n, c, h, w], data)?, labels, CLASSES)
}

/// Sorted random subset of `count` indices out of `len`.
pub fn subsample(len: usize, count: usize, seed: u64) -> Result<Vec<usize>, HarnessError> {
    if count > len {
        return Err(HarnessError::Dataset(format!("asked for {count} of {len} records")));
    }
    let mut idx = index::sample(&mut seeding::rng(seed), len, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// True when `dir` holds the five training batches and the test batch.
pub fn available(dir: &Path) -> bool {
    TRAIN_FILES.iter().chain([&TEST_FILE]).all(|f| dir.join(f).is_file())
}

/// Draws disjoint train and score subsets from the training batches and a
/// test subset from the test batch, then normalizes per channel with
/// train-split statistics.
pub fn load_cifar10(dir: &Path, sizes: [usize; 3], seed: u64) -> Result<Splits, HarnessError> {
    let pool = concat(TRAIN_FILES.iter().map(|f| read(&dir.join(f))).collect::<Result<_, _>>()?)?;
    let test_pool = read(&dir.join(TEST_FILE))?;
    let picked = subsample(pool.len(), sizes[0] + sizes[1], seeding::derive(seed, 0))?;
    // A second seeded draw assigns picked records to train or score.
    let order = index::sample(&mut seeding::rng(seeding::derive(seed, 1)), picked.len(), picked.len()).into_vec();
    let mut train: Vec<usize> = order[..sizes[0]].iter().map(|&i| picked[i]).collect();
    let mut score: Vec<usize> = order[sizes[0]..].iter().map(|&i| picked[i]).collect();
    train.sort_unstable();
    score.sort_unstable();
    let test = subsample(test_pool.len(), sizes[2], seeding::derive(seed, 2))?;
    let mut splits = Splits {
        train: pool.subset(&train),
        score: pool.subset(&score),
        test: test_pool.subset(&test),
    };
    splits.normalize_by_train();
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize) -> Vec<u8> {
        (0..n)
            .flat_map(|i| {
                let mut r = vec![(i % 10) as u8];
                r.extend((0..3072).map(|p| ((p + i) % 256) as u8));
                r
            })
            .collect()
    }

    #[test]
    fn ten_records() {
        let d = parse_records(&records(10)).unwrap();
        assert_eq!(d.len(), 10);
        assert_eq!(d.image_shape(), [3, 32, 32]);
        assert_eq!(d.labels()[3], 3);
        // record 1, green plane, first pixel: byte (1024 + 1) % 256 = 1
        assert_eq!(d.image(1)[1024], 1.0 / 255.0);
        assert_eq!(d.image(0)[255], 1.0);
    }

    #[test]
    fn truncation_names_offset() {
        let mut b = records(1);
        b.push(0);
        let err = parse_records(&b).unwrap_err().to_string();
        assert!(err.contains("offset 3073"), "{err}");
    }

    #[test]
    fn bad_label_rejected() {
        let mut b = records(2);
        b[RECORD_LEN] = 10;
        let err = parse_records(&b).unwrap_err().to_string();
        assert!(err.contains("label 10") && err.contains("offset 3073"), "{err}");
    }

    #[test]
    fn subsample_is_seeded() {
        let a = subsample(50_000, 2000, 3).unwrap();
        assert_eq!(a, subsample(50_000, 2000, 3).unwrap());
        assert_ne!(a, subsample(50_000, 2000, 4).unwrap());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(subsample(10, 11, 0).is_err());
    }
}
