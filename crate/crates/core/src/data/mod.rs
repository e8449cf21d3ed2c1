//! MNIST IDX (and CIFAR-10 binary) ingestion, deterministic subsets and
//! mini-batches.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { file: &'static str, expected: u32, found: u32 },

    #[error("{file}: truncated, need {needed} bytes but have {actual}")]
    Truncated { file: &'static str, needed: usize, actual: usize },

    #[error("image file holds {images} samples but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("label {label} at index {index} is outside 0..{classes}")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },

    #[error("requested {requested} samples from a dataset of {available}")]
    SubsetTooLarge { requested: usize, available: usize },

    #[error("dataset must hold at least one sample")]
    Empty,

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images `[n, channels, height, width]` scaled to `[0, 1]`, with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    classes: usize,
}

fn read_u32(bytes: &[u8], at: usize, file: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated { file, needed: at + 4, actual: bytes.len() })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Parses an IDX image file and its label file.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic { file: "images", expected: IDX_IMAGES_MAGIC, found: magic });
    }
    let magic = read_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic { file: "labels", expected: IDX_LABELS_MAGIC, found: magic });
    }
    let n = read_u32(images, 4, "images")? as usize;
    let rows = read_u32(images, 8, "images")? as usize;
    let cols = read_u32(images, 12, "images")? as usize;
    let n_labels = read_u32(labels, 4, "labels")? as usize;

    let needed = 16 + n * rows * cols;
    if images.len() < needed {
        return Err(DataError::Truncated { file: "images", needed, actual: images.len() });
    }
    if labels.len() < 8 + n_labels {
        return Err(DataError::Truncated { file: "labels", needed: 8 + n_labels, actual: labels.len() });
    }
    if n != n_labels {
        return Err(DataError::CountMismatch { images: n, labels: n_labels });
    }
    if n == 0 {
        return Err(DataError::Empty);
    }

    let pixels = images[16..needed].iter().map(|&b| f32::from(b) / 255.0).collect();
    let labels = labels[8..8 + n].iter().map(|&b| usize::from(b)).collect();
    let images = Tensor::new(vec![n, 1, rows, cols], pixels).map_err(|e| DataError::Invalid(e.to_string()))?;
    Dataset::new(images, labels, 10)
}

/// Parses concatenated CIFAR-10 binary records (label byte, then
/// 3x32x32 channel-major pixels).
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let needed = bytes.len().div_ceil(CIFAR_RECORD) * CIFAR_RECORD;
        return Err(DataError::Truncated { file: "cifar10", needed, actual: bytes.len() });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(usize::from(record[0]));
        pixels.extend(record[1..].iter().map(|&b| f32::from(b) / 255.0));
    }
    let images = Tensor::new(vec![n, 3, 32, 32], pixels).map_err(|e| DataError::Invalid(e.to_string()))?;
    Dataset::new(images, labels, 10)
}

/// Image and label file paths of one MNIST split under `dir`.
pub fn mnist_files(dir: &Path, split: Split) -> [PathBuf; 2] {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    [dir.join(format!("{prefix}-images-idx3-ubyte")), dir.join(format!("{prefix}-labels-idx1-ubyte"))]
}

/// Loads `train-*` or `t10k-*` IDX files from `dir`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let [images, labels] = mnist_files(dir, split);
    parse_idx(&read_file(&images)?, &read_file(&labels)?)
}

fn to_byte(x: f32) -> u8 {
    (x * 255.0).round().clamp(0.0, 255.0) as u8
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(DataError::Empty);
        }
        if images.order() != 4 {
            return Err(DataError::Invalid(format!("images must be [n, c, h, w], got {:?}", images.shape())));
        }
        if images.shape()[0] != labels.len() {
            return Err(DataError::CountMismatch { images: images.shape()[0], labels: labels.len() });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(DataError::LabelOutOfRange { index, label, classes });
        }
        if images.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(DataError::Invalid("pixel values must lie in [0, 1]".into()));
        }
        Ok(Dataset { images, labels, classes })
    }

    /// Never zero: construction rejects empty datasets.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Per-sample shape `[channels, height, width]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(DataError::Empty);
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(DataError::SubsetTooLarge { requested: i + 1, available: self.len() });
        }
        let per: usize = self.sample_shape().iter().product();
        let mut pixels = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            pixels.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Ok(Dataset {
            images: Tensor::new(shape, pixels).expect("selection preserves sample size"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        })
    }

    /// Serializes a single-channel dataset back to an IDX `(images, labels)` pair.
    pub fn to_idx(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let [n, c, h, w] = [0, 1, 2, 3].map(|i| self.images.shape()[i]);
        if c != 1 {
            return Err(DataError::Invalid(format!("IDX images carry one channel, dataset has {c}")));
        }
        if self.classes > 256 {
            return Err(DataError::Invalid("IDX labels are single bytes".into()));
        }
        let mut images = Vec::with_capacity(16 + n * h * w);
        for v in [IDX_IMAGES_MAGIC, n as u32, h as u32, w as u32] {
            images.extend_from_slice(&v.to_be_bytes());
        }
        images.extend(self.images.data().iter().map(|&p| to_byte(p)));
        let mut labels = Vec::with_capacity(8 + n);
        labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        labels.extend_from_slice(&(n as u32).to_be_bytes());
        labels.extend(self.labels.iter().map(|&l| l as u8));
        Ok((images, labels))
    }
}

/// Deterministic sample of `n` items without replacement.
pub fn subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > ds.len() {
        return Err(DataError::SubsetTooLarge { requested: n, available: ds.len() });
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(n);
    ds.select(&order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

/// Shuffled mini-batches; the last batch may be short.
pub fn batches(ds: &Dataset, batch_size: usize, seed: u64) -> impl Iterator<Item = Batch> + '_ {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |idx| {
        let part = ds.select(&idx).expect("batch indices are in range and non-empty");
        Batch { images: part.images, labels: part.labels }
    })
}

/// Batches in dataset order, for evaluation.
pub fn sequential_batches(ds: &Dataset, batch_size: usize) -> impl Iterator<Item = Batch> + '_ {
    assert!(batch_size > 0, "batch size must be positive");
    (0..ds.len()).step_by(batch_size).map(move |start| {
        let idx: Vec<usize> = (start..(start + batch_size).min(ds.len())).collect();
        let part = ds.select(&idx).expect("batch indices are in range and non-empty");
        Batch { images: part.images, labels: part.labels }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_pair(pixels: &[u8], labels: &[u8], rows: u32, cols: u32) -> (Vec<u8>, Vec<u8>) {
        let n = labels.len() as u32;
        let mut img = Vec::new();
        for v in [0x803u32, n, rows, cols] {
            img.extend_from_slice(&v.to_be_bytes());
        }
        img.extend_from_slice(pixels);
        let mut lab = Vec::new();
        for v in [0x801u32, n] {
            lab.extend_from_slice(&v.to_be_bytes());
        }
        lab.extend_from_slice(labels);
        (img, lab)
    }

    #[test]
    fn two_tiny_images() {
        let (img, lab) = idx_pair(&[0, 255, 51, 102, 255, 0, 0, 204], &[3, 7], 2, 2);
        let ds = parse_idx(&img, &lab).unwrap();
        assert_eq!(ds.images().shape(), &[2, 1, 2, 2]);
        assert_eq!(ds.labels(), &[3, 7]);
        assert_eq!(ds.images().data(), &[0.0, 1.0, 0.2, 0.4, 1.0, 0.0, 0.0, 0.8]);
        assert_eq!(ds.to_idx().unwrap(), (img, lab));
    }

    #[test]
    fn every_byte_value_round_trips() {
        let pixels: Vec<u8> = (0..=255).collect();
        let (img, lab) = idx_pair(&pixels, &[1, 2, 3, 4], 8, 8);
        let ds = parse_idx(&img, &lab).unwrap();
        assert_eq!(ds.to_idx().unwrap(), (img, lab));
    }

    #[test]
    fn malformed_headers_have_distinct_errors() {
        let (img, lab) = idx_pair(&[1, 2, 3, 4], &[0], 2, 2);
        assert!(matches!(parse_idx(&img, &img), Err(DataError::BadMagic { file: "labels", .. })));
        assert!(matches!(parse_idx(&lab, &lab), Err(DataError::BadMagic { file: "images", .. })));
        assert!(matches!(parse_idx(&img[..18], &lab), Err(DataError::Truncated { file: "images", .. })));
        assert!(matches!(parse_idx(&img[..10], &lab), Err(DataError::Truncated { .. })));
        let (_, lab2) = idx_pair(&[], &[0, 1], 2, 2);
        assert!(matches!(parse_idx(&img, &lab2), Err(DataError::CountMismatch { images: 1, labels: 2 })));
    }

    #[test]
    fn label_range_is_checked() {
        let (img, lab) = idx_pair(&[0; 4], &[10], 2, 2);
        assert!(matches!(parse_idx(&img, &lab), Err(DataError::LabelOutOfRange { label: 10, .. })));
    }

    #[test]
    fn cifar_records() {
        let mut bytes = vec![4u8];
        bytes.extend(std::iter::repeat_n(255u8, 3072));
        let ds = parse_cifar10(&bytes).unwrap();
        assert_eq!(ds.images().shape(), &[1, 3, 32, 32]);
        assert_eq!(ds.labels(), &[4]);
        assert!(parse_cifar10(&bytes[..100]).is_err());
    }

    fn toy(n: usize) -> Dataset {
        let images = Tensor::from_fn(vec![n, 1, 1, 2], |i| (i[0] % 256) as f32 / 255.0).unwrap();
        Dataset::new(images, (0..n).map(|i| i % 10).collect(), 10).unwrap()
    }

    #[test]
    fn full_subset_is_a_permutation() {
        let ds = toy(50);
        let s = subset(&ds, 50, 3).unwrap();
        let mut seen: Vec<usize> = s.images().data().iter().step_by(2).map(|&p| to_byte(p) as usize).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
        assert_eq!(subset(&ds, 20, 9).unwrap(), subset(&ds, 20, 9).unwrap());
        assert!(matches!(subset(&ds, 51, 0), Err(DataError::SubsetTooLarge { .. })));
        assert!(matches!(subset(&ds, 0, 0), Err(DataError::Empty)));
    }

    #[test]
    fn batch_count_is_ceiling() {
        let ds = toy(103);
        let b: Vec<Batch> = batches(&ds, 10, 1).collect();
        assert_eq!(b.len(), 11);
        assert_eq!(b.last().unwrap().labels.len(), 3);
        assert_eq!(b.iter().map(|x| x.labels.len()).sum::<usize>(), 103);
        assert_eq!(sequential_batches(&ds, 10).count(), 11);
    }
}
