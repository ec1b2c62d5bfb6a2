//! Image datasets: MNIST IDX and CIFAR-10 binary ingestion, seeded subsets.
//!
//! Pixels are stored as f32 in `[0, 1]`, one flat `C*H*W` row per sample.

use std::fs;
use std::path::{Path, PathBuf};

use curvprobe_tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::stack_images;
use crate::rng::seeded;
use crate::zoo::Normalization;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_SHAPE: [usize; 3] = [3, 32, 32];
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
const CIFAR_CLASSES: usize = 10;
const MNIST_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Idx,
    Cifar,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idx" => Ok(DataFormat::Idx),
            "cifar" | "cifar-binary" => Ok(DataFormat::Cifar),
            other => Err(Error::Config(format!("unknown data format '{other}' (expected idx or cifar)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    shape: [usize; 3],
    num_classes: usize,
    images: Vec<f32>,
    labels: Vec<usize>,
    pub split: String,
}

impl Dataset {
    pub fn new(shape: [usize; 3], num_classes: usize, images: Vec<f32>, labels: Vec<usize>, split: impl Into<String>) -> Result<Self> {
        let d: usize = shape.iter().product();
        if d == 0 || images.len() != d * labels.len() {
            return Err(Error::DatasetFormat(format!(
                "{} pixel values for {} samples of shape {shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, l)| **l >= num_classes) {
            return Err(Error::DatasetFormat(format!(
                "label {l} of sample {i} is out of range for {num_classes} classes"
            )));
        }
        if images.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::DatasetFormat("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            shape,
            num_classes,
            images,
            labels,
            split: split.into(),
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let d = self.input_dim();
        &self.images[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `[B, C, H, W]` batch and labels for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images = stack_images(self.shape, indices.iter().map(|&i| self.image(i)))?;
        Ok((images, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.input_dim());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            shape: self.shape,
            num_classes: self.num_classes,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Per-channel pixel mean and standard deviation.
    pub fn channel_stats(&self) -> Normalization {
        let [c, h, w] = self.shape;
        let hw = h * w;
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for img in self.images.chunks(c * hw) {
            for ch in 0..c {
                for p in &img[ch * hw..(ch + 1) * hw] {
                    sum[ch] += *p as f64;
                    sq[ch] += (*p as f64) * (*p as f64);
                }
            }
        }
        let n = (self.len() * hw).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / n - m * m).max(0.0).sqrt().max(1e-3)) as f32)
            .collect();
        Normalization {
            mean: mean.iter().map(|m| *m as f32).collect(),
            std,
        }
    }
}

/// Indices drawn by a seeded partial Fisher-Yates shuffle.
#[derive(Clone, Debug, PartialEq)]
pub struct Subset {
    pub indices: Vec<usize>,
    pub data: Dataset,
    /// Samples per class in the subset.
    pub class_counts: Vec<usize>,
}

/// The first `n` positions of a seeded Fisher-Yates shuffle of `0..len`.
pub fn subset_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::SubsetTooLarge {
            requested: n,
            available: len,
        });
    }
    let mut rng = seeded(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = rng.random_range(i..len);
        idx.swap(i, j);
    }
    idx.truncate(n);
    Ok(idx)
}

pub fn subset(ds: &Dataset, n: usize, seed: u64) -> Result<Subset> {
    let indices = subset_indices(ds.len(), n, seed)?;
    let data = ds.select(&indices);
    let class_counts = data.class_counts();
    Ok(Subset {
        indices,
        data,
        class_counts,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn truncated(path: &Path, expected: usize, found: usize) -> Error {
    Error::Truncated {
        path: path.to_path_buf(),
        expected: expected as u64,
        found: found as u64,
    }
}

/// Reads an IDX image file and its label file.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read(images_path)?;
    if img.len() < 16 {
        return Err(truncated(images_path, 16, img.len()));
    }
    let magic = be_u32(&img, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.to_path_buf(),
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let (n, rows, cols) = (be_u32(&img, 4) as usize, be_u32(&img, 8) as usize, be_u32(&img, 12) as usize);
    let need = 16 + n * rows * cols;
    if img.len() < need {
        return Err(truncated(images_path, need, img.len()));
    }

    let lab = read(labels_path)?;
    if lab.len() < 8 {
        return Err(truncated(labels_path, 8, lab.len()));
    }
    let magic = be_u32(&lab, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.to_path_buf(),
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let nl = be_u32(&lab, 4) as usize;
    if nl != n {
        return Err(Error::DatasetFormat(format!(
            "{} images but {} labels",
            n, nl
        )));
    }
    if lab.len() < 8 + n {
        return Err(truncated(labels_path, 8 + n, lab.len()));
    }
    let mut labels = Vec::with_capacity(n);
    for (i, &l) in lab[8..8 + n].iter().enumerate() {
        if l as usize >= MNIST_CLASSES {
            return Err(Error::LabelOutOfRange {
                path: labels_path.to_path_buf(),
                index: i,
                label: l as usize,
                num_classes: MNIST_CLASSES,
            });
        }
        labels.push(l as usize);
    }
    let images = img[16..need].iter().map(|b| *b as f32 / 255.0).collect();
    Dataset::new([1, rows, cols], MNIST_CLASSES, images, labels, "idx")
}

/// Reads one or more CIFAR-10 binary batch files, concatenated in order.
pub fn load_cifar(paths: &[PathBuf]) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::Empty("cifar batch list"));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            let expected = bytes.len().div_ceil(CIFAR_RECORD).max(1) * CIFAR_RECORD;
            return Err(truncated(path, expected, bytes.len()));
        }
        for (i, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
            let l = rec[0] as usize;
            if l >= CIFAR_CLASSES {
                return Err(Error::LabelOutOfRange {
                    path: path.clone(),
                    index: i,
                    label: l,
                    num_classes: CIFAR_CLASSES,
                });
            }
            labels.push(l);
            images.extend(rec[1..].iter().map(|b| *b as f32 / 255.0));
        }
    }
    Dataset::new(CIFAR_SHAPE, CIFAR_CLASSES, images, labels, "cifar")
}

/// Resolves a dataset path: a single file, or a directory holding the
/// standard file names for the requested split (`train` or `test`).
pub fn load_dataset(path: &Path, format: DataFormat, split: &str) -> Result<Dataset> {
    let mut ds = match format {
        DataFormat::Idx => {
            let (images, labels) = if path.is_dir() {
                let prefix = if split == "test" { "t10k" } else { "train" };
                (
                    path.join(format!("{prefix}-images-idx3-ubyte")),
                    path.join(format!("{prefix}-labels-idx1-ubyte")),
                )
            } else {
                let name = path.to_string_lossy();
                if !name.contains("images-idx3") {
                    return Err(Error::Config(format!(
                        "{}: expected an *-images-idx3-ubyte file or a directory",
                        path.display()
                    )));
                }
                (path.to_path_buf(), PathBuf::from(name.replace("images-idx3", "labels-idx1")))
            };
            load_idx(&images, &labels)?
        }
        DataFormat::Cifar => {
            let files = if path.is_dir() {
                if split == "test" {
                    vec![path.join("test_batch.bin")]
                } else {
                    (1..=5).map(|i| path.join(format!("data_batch_{i}.bin"))).collect()
                }
            } else {
                vec![path.to_path_buf()]
            };
            load_cifar(&files)?
        }
    };
    ds.split = split.to_string();
    Ok(ds)
}

fn to_byte(p: f32) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a dataset in the CIFAR-10 binary record layout (3x32x32, < 256 classes).
pub fn write_cifar(ds: &Dataset, path: &Path) -> Result<()> {
    if ds.shape != CIFAR_SHAPE || ds.num_classes > CIFAR_CLASSES {
        return Err(Error::Config("cifar output needs 3x32x32 images and at most 10 classes".into()));
    }
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    for i in 0..ds.len() {
        out.push(ds.labels[i] as u8);
        out.extend(ds.image(i).iter().map(|p| to_byte(*p)));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes single-channel images and labels as an IDX pair.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [c, h, w] = ds.shape;
    if c != 1 || ds.num_classes > 256 {
        return Err(Error::Config("idx output needs single-channel images".into()));
    }
    let n = ds.len() as u32;
    let mut img = Vec::with_capacity(16 + ds.images.len());
    for v in [IDX_IMAGES_MAGIC, n, h as u32, w as u32] {
        img.extend(v.to_be_bytes());
    }
    img.extend(ds.images.iter().map(|p| to_byte(*p)));
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    let mut lab = Vec::with_capacity(8 + ds.len());
    for v in [IDX_LABELS_MAGIC, n] {
        lab.extend(v.to_be_bytes());
    }
    lab.extend(ds.labels.iter().map(|l| *l as u8));
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

/// Class-conditional procedural images: each class is a smooth colored
/// pattern with its own spatial frequencies, plus per-sample phase jitter,
/// contrast changes and pixel noise. Learnable but not trivially separable;
/// used where real image data is unavailable.
pub fn synthetic(shape: [usize; 3], num_classes: usize, n: usize, seed: u64) -> Result<Dataset> {
    let [c, h, w] = shape;
    let mut rng = seeded(seed);
    // Per class and channel: two (fx, fy, amplitude) waves.
    let protos: Vec<Vec<[f64; 3]>> = (0..num_classes)
        .map(|_| {
            (0..c * 2)
                .map(|_| {
                    [
                        rng.random_range(0.5..3.0),
                        rng.random_range(0.5..3.0),
                        rng.random_range(0.4..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                    ]
                })
                .collect()
        })
        .collect();
    let mut images = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..num_classes);
        labels.push(k);
        let phase = [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)];
        let contrast = rng.random_range(0.12..0.28);
        let brightness = rng.random_range(0.35..0.65);
        // A distractor wave borrowed from a random other class.
        let other = rng.random_range(0..num_classes);
        let mix = rng.random_range(0.0..0.6);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                    let wave = |waves: &[[f64; 3]]| -> f64 {
                        waves
                            .iter()
                            .enumerate()
                            .map(|(i, [fx, fy, a])| {
                                a * (std::f64::consts::TAU * (fx * u + fy * v) + phase[i % 2]).sin()
                            })
                            .sum::<f64>()
                    };
                    let own = wave(&protos[k][ch * 2..ch * 2 + 2]);
                    let dis = wave(&protos[other][ch * 2..ch * 2 + 2]);
                    let noise: f64 = rng.random_range(-0.08..0.08);
                    let p = brightness + contrast * (own + mix * dis) + noise;
                    images.push(p.clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    Dataset::new(shape, num_classes, images, labels, "synthetic")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let images = (0..4 * 4).map(|i| (i % 5) as f32 / 4.0).collect();
        Dataset::new([1, 2, 2], 3, images, vec![0, 1, 2, 1], "t").unwrap()
    }

    #[test]
    fn subset_of_full_size_is_a_permutation() {
        let idx = subset_indices(10, 10, 3).unwrap();
        let mut sorted = idx.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn subset_is_seed_determined() {
        assert_eq!(subset_indices(1000, 50, 1).unwrap(), subset_indices(1000, 50, 1).unwrap());
        assert_ne!(subset_indices(1000, 50, 1).unwrap(), subset_indices(1000, 50, 2).unwrap());
    }

    #[test]
    fn subset_too_large_fails() {
        assert!(matches!(subset(&tiny(), 5, 0), Err(Error::SubsetTooLarge { requested: 5, available: 4 })));
    }

    #[test]
    fn subset_reports_class_counts() {
        let s = subset(&tiny(), 4, 7).unwrap();
        assert_eq!(s.class_counts, vec![1, 2, 1]);
    }

    #[test]
    fn channel_stats_of_constant_images() {
        let ds = Dataset::new([2, 1, 1], 2, vec![0.2, 0.8, 0.2, 0.8], vec![0, 1], "t").unwrap();
        let n = ds.channel_stats();
        assert!((n.mean[0] - 0.2).abs() < 1e-6 && (n.mean[1] - 0.8).abs() < 1e-6);
        assert!(n.std.iter().all(|s| *s >= 1e-3));
    }

    #[test]
    fn synthetic_is_deterministic_and_in_range() {
        let a = synthetic([3, 8, 8], 4, 20, 5).unwrap();
        assert_eq!(a, synthetic([3, 8, 8], 4, 20, 5).unwrap());
        assert_eq!(a.len(), 20);
    }
}
