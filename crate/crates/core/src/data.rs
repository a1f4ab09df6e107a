//! Datasets: CIFAR binary batches and seeded synthetic blobs.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::netir::TensorShape;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR10_RECORD: usize = 1 + CIFAR_PIXELS;
pub const CIFAR100_RECORD: usize = 2 + CIFAR_PIXELS;

/// Images in NCHW order with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: TensorShape,
    pub classes: usize,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(shape: TensorShape, classes: usize, images: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() * shape.numel() {
            return Err(Error::format(
                "dataset",
                format!("{} values cannot hold {} images of {shape}", images.len(), labels.len()),
            ));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::format("dataset", format!("label {l} out of range for {classes} classes")));
        }
        Ok(Self { shape, classes, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let d = self.shape.numel();
        &self.images[i * d..(i + 1) * d]
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            shape: self.shape,
            classes: self.classes,
            images: self.images[..n * self.shape.numel()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Nearest-neighbour resize of every image to `side x side`.
    pub fn resized(&self, side: usize) -> Dataset {
        if side == self.shape.height && side == self.shape.width {
            return self.clone();
        }
        let (c, h, w) = (self.shape.channels, self.shape.height, self.shape.width);
        let mut images = Vec::with_capacity(self.len() * c * side * side);
        for i in 0..self.len() {
            let img = self.image(i);
            for ch in 0..c {
                for y in 0..side {
                    let sy = y * h / side;
                    for x in 0..side {
                        images.push(img[(ch * h + sy) * w + x * w / side]);
                    }
                }
            }
        }
        Dataset { shape: TensorShape::image(c, side), classes: self.classes, images, labels: self.labels.clone() }
    }

    /// Per-channel mean and standard deviation.
    pub fn channel_stats(&self) -> (Vec<f32>, Vec<f32>) {
        let (c, hw) = (self.shape.channels, self.shape.spatial());
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for i in 0..self.len() {
            for (ch, plane) in self.image(i).chunks(hw).enumerate() {
                for &v in plane {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let count = (self.len() * hw).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq.iter().zip(&mean).map(|(s, m)| ((s / count - m * m).max(0.0).sqrt().max(1e-8)) as f32).collect();
        (mean.into_iter().map(|m| m as f32).collect(), std)
    }

    pub fn normalize(&mut self, mean: &[f32], std: &[f32]) {
        let hw = self.shape.spatial();
        let c = self.shape.channels;
        for (j, v) in self.images.iter_mut().enumerate() {
            let ch = (j / hw) % c;
            *v = (*v - mean[ch]) / std[ch];
        }
    }

    /// SHA-256 over the labels (u32 LE) followed by the pixels (f32 LE), hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for &l in &self.labels {
            h.update((l as u32).to_le_bytes());
        }
        for &v in &self.images {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Gaussian class prototypes plus per-sample Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBlobs {
    pub classes: usize,
    pub side: usize,
    #[serde(default = "three")]
    pub channels: usize,
    #[serde(default = "unit")]
    pub noise: f32,
    pub seed: u64,
}

fn three() -> usize {
    3
}

fn unit() -> f32 {
    1.0
}

impl SyntheticBlobs {
    pub fn new(classes: usize, side: usize, seed: u64) -> Self {
        Self { classes, side, channels: 3, noise: 1.0, seed }
    }

    /// `n` samples, labels cycling through the classes. Different `stream`
    /// values draw fresh noise around the same prototypes.
    pub fn generate(&self, n: usize, stream: u64) -> Result<Dataset> {
        if self.classes == 0 || self.side == 0 || self.channels == 0 {
            return Err(Error::Config("synthetic blobs need classes, side and channels > 0".into()));
        }
        let shape = TensorShape::image(self.channels, self.side);
        let d = shape.numel();
        let unit = Normal::new(0.0f32, 1.0).expect("unit normal");
        let mut proto_rng = ChaCha8Rng::seed_from_u64(self.seed);
        let protos: Vec<f32> = (0..self.classes * d).map(|_| unit.sample(&mut proto_rng)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.wrapping_add(1));
        let mut images = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % self.classes;
            labels.push(y);
            for &p in &protos[y * d..(y + 1) * d] {
                images.push(p + self.noise * unit.sample(&mut rng));
            }
        }
        Dataset::new(shape, self.classes, images, labels)
    }
}

fn parse_cifar(bytes: &[u8], label_bytes: usize, label_offset: usize, classes: usize) -> Result<Dataset> {
    let record = label_bytes + CIFAR_PIXELS;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(Error::format(
            "cifar batch",
            format!("length {} is not a positive multiple of the {record}-byte record", bytes.len()),
        ));
    }
    let n = bytes.len() / record;
    let mut images = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[label_offset] as usize;
        if label >= classes {
            return Err(Error::format("cifar batch", format!("record {i} has label {label}, expected < {classes}")));
        }
        labels.push(label);
        images.extend(rec[label_bytes..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(TensorShape::image(3, CIFAR_SIDE), classes, images, labels)
}

/// CIFAR-10 binary batch: 1 label byte then 3072 pixel bytes (R, G, B planes).
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    parse_cifar(bytes, 1, 0, 10)
}

/// CIFAR-100 binary batch: coarse label byte, fine label byte, then 3072
/// pixel bytes. Returns fine labels unless `coarse` is set.
pub fn parse_cifar100(bytes: &[u8], coarse: bool) -> Result<Dataset> {
    if coarse {
        parse_cifar(bytes, 2, 0, 20)
    } else {
        parse_cifar(bytes, 2, 1, 100)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    SyntheticBlobs,
    Cifar10Binary,
    Cifar100Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDescriptor {
    pub kind: DatasetKind,
    pub resolution: usize,
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Directory holding the binary batches for CIFAR kinds.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "unit")]
    pub noise: f32,
}

impl DatasetDescriptor {
    pub fn synthetic(classes: usize, resolution: usize, train_size: usize, test_size: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::SyntheticBlobs,
            resolution,
            classes,
            train_size,
            test_size,
            path: None,
            seed,
            noise: 1.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let fixed = match self.kind {
            DatasetKind::SyntheticBlobs => None,
            DatasetKind::Cifar10Binary => Some(10),
            DatasetKind::Cifar100Binary => Some(100),
        };
        if let Some(c) = fixed {
            if self.classes != c {
                return Err(Error::Config(format!(
                    "{:?} has {c} classes, descriptor says {}",
                    self.kind, self.classes
                )));
            }
            if self.path.is_none() {
                return Err(Error::Config("CIFAR datasets need `path`".into()));
            }
        }
        if self.classes < 2 || self.resolution == 0 || self.train_size == 0 {
            return Err(Error::Config(
                "dataset needs at least 2 classes, a positive resolution and training samples".into(),
            ));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn cifar_files(kind: DatasetKind, dir: &Path) -> (Vec<PathBuf>, PathBuf) {
    match kind {
        DatasetKind::Cifar100Binary => (vec![dir.join("train.bin")], dir.join("test.bin")),
        _ => ((1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(), dir.join("test_batch.bin")),
    }
}

/// Loads (train, test) and normalizes both with the training set's channel statistics.
pub fn ingest(desc: &DatasetDescriptor) -> Result<(Dataset, Dataset)> {
    desc.check()?;
    let (mut train, mut test) = match desc.kind {
        DatasetKind::SyntheticBlobs => {
            let gen = SyntheticBlobs {
                classes: desc.classes,
                side: desc.resolution,
                channels: 3,
                noise: desc.noise,
                seed: desc.seed,
            };
            (gen.generate(desc.train_size, 0)?, gen.generate(desc.test_size.max(1), 1)?)
        }
        kind => {
            let dir = desc.path.as_deref().expect("checked");
            let parse = |b: &[u8]| match kind {
                DatasetKind::Cifar100Binary => parse_cifar100(b, false),
                _ => parse_cifar10(b),
            };
            let (train_files, test_file) = cifar_files(kind, dir);
            let mut bytes = Vec::new();
            for f in &train_files {
                bytes.extend(read(f)?);
            }
            let train = parse(&bytes)?.take(desc.train_size);
            let test = parse(&read(&test_file)?)?.take(desc.test_size.max(1));
            (train.resized(desc.resolution), test.resized(desc.resolution))
        }
    };
    let (mean, std) = train.channel_stats();
    train.normalize(&mean, &std);
    test.normalize(&mean, &std);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let g = SyntheticBlobs::new(4, 8, 7);
        let a = g.generate(512, 0).unwrap();
        let b = g.generate(512, 0).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), g.generate(512, 1).unwrap().checksum());
        for c in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 128);
        }
    }

    #[test]
    fn cifar10_records() {
        let mut bytes = vec![0u8; 2 * CIFAR10_RECORD];
        bytes[0] = 3;
        bytes[CIFAR10_RECORD] = 9;
        bytes[1] = 255;
        let d = parse_cifar10(&bytes).unwrap();
        assert_eq!(d.labels, vec![3, 9]);
        assert_eq!(d.images[0], 1.0);
        assert!(parse_cifar10(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = 10;
        assert!(parse_cifar10(&bytes).is_err());
    }

    #[test]
    fn cifar100_fine_and_coarse() {
        let mut bytes = vec![0u8; CIFAR100_RECORD];
        bytes[0] = 19;
        bytes[1] = 99;
        assert_eq!(parse_cifar100(&bytes, false).unwrap().labels, vec![99]);
        assert_eq!(parse_cifar100(&bytes, true).unwrap().labels, vec![19]);
        assert!(parse_cifar100(&bytes[..CIFAR10_RECORD], false).is_err());
    }

    #[test]
    fn normalization_centers_channels() {
        let (train, _) = ingest(&DatasetDescriptor::synthetic(3, 6, 90, 9, 1)).unwrap();
        let (mean, std) = train.channel_stats();
        for (m, s) in mean.iter().zip(&std) {
            assert!(m.abs() < 1e-5 && (s - 1.0).abs() < 1e-4);
        }
    }
}
