//! MNIST (IDX) and CIFAR-10 (binary batch) loaders with deterministic
//! shuffled batching.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;
pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_PIXELS: usize = 3072;
pub const N_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found}, expected {expected}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: expected {expected} bytes, found {actual}")]
    Size {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: expected a multiple of {CIFAR_RECORD} bytes, found {actual}")]
    RecordSize { path: PathBuf, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} at record {index} is not below {N_CLASSES}")]
    BadLabel {
        path: PathBuf,
        index: usize,
        label: u8,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Mnist,
    Cifar10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Flattened samples scaled to [0, 1], stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: DatasetName,
    pub split: Split,
    pub input_dim: usize,
    pub inputs: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Rows `indices` gathered into one batch.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let mut x = Array2::zeros((indices.len(), self.input_dim));
        for (mut row, &i) in x.rows_mut().into_iter().zip(indices) {
            row.as_slice_mut().unwrap().copy_from_slice(self.input(i));
        }
        Batch {
            inputs: x,
            labels: indices.iter().map(|&i| usize::from(self.labels[i])).collect(),
            indices: indices.to_vec(),
        }
    }
}

/// Reads a file, gunzipping when it carries the gzip magic. A missing
/// `name` falls back to `name.gz`.
fn read_bytes(path: &Path) -> Result<Vec<u8>, DataError> {
    let gz_fallback = PathBuf::from(format!("{}.gz", path.display()));
    let actual = if !path.exists() && gz_fallback.exists() {
        gz_fallback
    } else {
        path.to_path_buf()
    };
    let io = |source| DataError::Io {
        path: actual.clone(),
        source,
    };
    let raw = fs::read(&actual).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn check_header(path: &Path, bytes: &[u8], magic: u32, header: usize) -> Result<(), DataError> {
    if bytes.len() < header {
        return Err(DataError::Size {
            path: path.to_path_buf(),
            expected: header,
            actual: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    Ok(())
}

fn check_len(path: &Path, bytes: &[u8], expected: usize) -> Result<(), DataError> {
    if bytes.len() != expected {
        return Err(DataError::Size {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

fn check_labels(path: &Path, labels: &[u8]) -> Result<(), DataError> {
    match labels.iter().position(|&l| usize::from(l) >= N_CLASSES) {
        Some(index) => Err(DataError::BadLabel {
            path: path.to_path_buf(),
            index,
            label: labels[index],
        }),
        None => Ok(()),
    }
}

fn scale(pixels: &[u8]) -> Vec<f32> {
    pixels.iter().map(|&p| f32::from(p) / 255.0).collect()
}

/// Loads an IDX image file and its label file.
pub fn load_mnist(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset, DataError> {
    let images = read_bytes(images_path)?;
    check_header(images_path, &images, IDX_IMAGES_MAGIC, 16)?;
    let count = be_u32(&images, 4) as usize;
    let input_dim = be_u32(&images, 8) as usize * be_u32(&images, 12) as usize;
    check_len(images_path, &images, 16 + count * input_dim)?;

    let labels = read_bytes(labels_path)?;
    check_header(labels_path, &labels, IDX_LABELS_MAGIC, 8)?;
    let n_labels = be_u32(&labels, 4) as usize;
    check_len(labels_path, &labels, 8 + n_labels)?;
    if n_labels != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: n_labels,
        });
    }
    check_labels(labels_path, &labels[8..])?;

    Ok(Dataset {
        name: DatasetName::Mnist,
        split,
        input_dim,
        inputs: scale(&images[16..]),
        labels: labels[8..].to_vec(),
    })
}

/// Standard file names inside an MNIST directory; gzipped copies are found
/// automatically.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset, DataError> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}

pub fn cifar_files(split: Split) -> Vec<String> {
    match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".to_owned()],
    }
}

/// Loads the five training batches or the test batch from a CIFAR-10
/// binary directory. Pixels keep the file's channel-major order.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset, DataError> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for name in cifar_files(split) {
        let path = dir.join(name);
        let bytes = read_bytes(&path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(DataError::RecordSize {
                path,
                actual: bytes.len(),
            });
        }
        let first = labels.len();
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            labels.push(record[0]);
            inputs.extend(record[1..].iter().map(|&p| f32::from(p) / 255.0));
        }
        check_labels(&path, &labels[first..])?;
    }
    Ok(Dataset {
        name: DatasetName::Cifar10,
        split,
        input_dim: CIFAR_PIXELS,
        inputs,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f32>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.ds.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

/// Sample order for one epoch: a Fisher-Yates shuffle seeded by
/// (seed, epoch).
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seeds::derive_seed(seed, epoch)));
    order
}

/// Every sample exactly once; the last batch may be short.
pub fn shuffled_batches(ds: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Batches<'_> {
    assert!(batch_size > 0, "batch size must be positive");
    Batches {
        ds,
        order: epoch_permutation(ds.len(), seed, epoch),
        batch_size,
        pos: 0,
    }
}

pub fn sequential_batches(ds: &Dataset, batch_size: usize) -> Batches<'_> {
    assert!(batch_size > 0, "batch size must be positive");
    Batches {
        ds,
        order: (0..ds.len()).collect(),
        batch_size,
        pos: 0,
    }
}
