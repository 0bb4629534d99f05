//! Datasets: IDX (MNIST-format) files, Gaussian blobs, Gaussian features
//! pushed through a random ReLU network, and random relabelling.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::HarnessError;
use crate::linalg::Mat;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled samples stored column-wise: `features` is `d × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Mat,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Mat, labels: Vec<usize>, num_classes: usize) -> Result<Self, HarnessError> {
        if features.cols() != labels.len() {
            return Err(HarnessError::Data(format!(
                "{} samples but {} labels",
                features.cols(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(HarnessError::Data(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Dataset { features, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    /// Columns `idx` as a `d × |idx|` batch plus their labels.
    pub fn gather(&self, idx: &[usize]) -> (Mat, Vec<usize>) {
        let x = Mat::from_fn(self.dim(), idx.len(), |i, k| self.features[(i, idx[k])]);
        (x, idx.iter().map(|&k| self.labels[k]).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let (features, labels) = self.gather(idx);
        Dataset { features, labels, num_classes: self.num_classes }
    }

    /// First `n − ⌊fraction·n⌋` samples for training, the rest held out.
    pub fn split_tail(&self, fraction: f64) -> (Dataset, Option<Dataset>) {
        let held = ((self.len() as f64) * fraction.clamp(0.0, 1.0)).floor() as usize;
        if held == 0 {
            return (self.clone(), None);
        }
        let cut = self.len() - held;
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        (self.subset(&head), Some(self.subset(&tail)))
    }
}

fn open_maybe_gz(path: &Path) -> Result<Vec<u8>, HarnessError> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?)
        .read_to_end(&mut raw)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, HarnessError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| HarnessError::Data("truncated IDX header".into()))
}

/// Parses an IDX3 image file (optionally gzipped) into a `(rows·cols) × N`
/// matrix with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Mat, HarnessError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(HarnessError::Data(format!("IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let pixels = be_u32(bytes, 8)? as usize * be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * pixels {
        return Err(HarnessError::Data(format!("IDX image body has {} bytes, expected {}", body.len(), n * pixels)));
    }
    Ok(Mat::from_fn(pixels, n, |p, k| body[k * pixels + p] as f64 / 255.0))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, HarnessError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(HarnessError::Data(format!("IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(HarnessError::Data(format!("IDX label body has {} bytes, expected {n}", body.len())));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// Loads an image/label IDX pair, keeping the first `limit` samples.
pub fn load_idx(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset, HarnessError> {
    let x = parse_idx_images(&open_maybe_gz(images)?)?;
    let y = parse_idx_labels(&open_maybe_gz(labels)?)?;
    let classes = y.iter().max().map_or(0, |m| m + 1).max(2);
    let ds = Dataset::new(x, y, classes)?;
    Ok(match limit {
        Some(l) if l < ds.len() => ds.subset(&(0..l).collect::<Vec<_>>()),
        _ => ds,
    })
}

/// `classes` isotropic Gaussian clusters in `dim` dimensions with unit-norm
/// random centres scaled by `separation`; labels cycle through the classes.
pub fn gaussian_blobs(n: usize, dim: usize, classes: usize, separation: f64, seed: u64) -> Result<Dataset, HarnessError> {
    if n == 0 || dim == 0 || classes < 2 {
        return Err(HarnessError::Data(format!("blobs need n, dim > 0 and >= 2 classes (n={n}, dim={dim}, classes={classes})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|a| separation * a / norm).collect()
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|k| k % classes).collect();
    let mut features = Mat::zeros(dim, n);
    for (k, &l) in labels.iter().enumerate() {
        for i in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features[(i, k)] = centres[l][i] + noise;
        }
    }
    Dataset::new(features, labels, classes)
}

/// `X = f(X₀)` with `X₀ ~ N(0, 1)^{d×n}` and `f` a depth-`net_depth` ReLU
/// network with He-initialized `d × d` weights.
pub fn gen_gaussian_features(d: usize, n: usize, net_depth: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Mat::from_fn(d, n, |_, _| StandardNormal.sample(&mut rng));
    let he = Normal::new(0.0, (2.0 / d as f64).sqrt()).expect("positive std");
    for _ in 0..net_depth {
        let w = Mat::from_fn(d, d, |_, _| he.sample(&mut rng));
        x = w.matmul(&x).map(|v| v.max(0.0));
    }
    x
}

/// Replaces every label with a uniform draw from `0..num_classes`; the
/// features are untouched and the original labels are never read.
pub fn make_random_labels(dataset: &Dataset, num_classes: usize, seed: u64) -> Result<Dataset, HarnessError> {
    if num_classes < 2 {
        return Err(HarnessError::Data(format!("random labels need >= 2 classes, got {num_classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = (0..dataset.len()).map(|_| rng.gen_range(0..num_classes)).collect();
    Ok(Dataset { features: dataset.features.clone(), labels, num_classes })
}
