//! Labelled 8-bit image datasets: CIFAR-10 binary files and a seeded
//! synthetic generator.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CIFAR10_RECORD: usize = 3073;
pub const CIFAR10_SHAPE: [usize; 3] = [3, 32, 32];
pub const CIFAR10_TRAIN_FILES: [&str; 5] =
    ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
pub const CIFAR10_TEST_FILE: &str = "test_batch.bin";

/// Images stored as channel-planar bytes, one label byte per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    sample_shape: [usize; 3],
    num_classes: usize,
    images: Vec<u8>,
    labels: Vec<u8>,
}

/// `pixel / 255` for a batch of bytes laid out as `shape`.
pub fn pixels_to_tensor<T: Real>(pixels: &[u8], shape: [usize; 4]) -> Tensor<T> {
    let data = pixels.iter().map(|&p| T::from_f64(p as f64 / 255.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("pixel count matches batch shape")
}

impl Dataset {
    pub fn new(sample_shape: [usize; 3], num_classes: usize, images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        let per = sample_shape.iter().product::<usize>();
        if per == 0 || num_classes == 0 || num_classes > 256 {
            return Err(Error::Data(format!("invalid sample shape {sample_shape:?} or class count {num_classes}")));
        }
        if images.len() != labels.len() * per {
            return Err(Error::Data(format!("{} pixel bytes for {} samples of {sample_shape:?}", images.len(), labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Data(format!("label {l} out of range for {num_classes} classes")));
        }
        Ok(Dataset { sample_shape, num_classes, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        self.sample_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    /// Raw input bits per sample at 8 bits per pixel, labels excluded.
    pub fn sample_bits(&self) -> u64 {
        self.sample_len() as u64 * 8
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self, index: usize) -> &[u8] {
        let n = self.sample_len();
        &self.images[index * n..(index + 1) * n]
    }

    pub fn batch_shape(&self, batch: usize) -> [usize; 4] {
        let [c, h, w] = self.sample_shape;
        [batch, c, h, w]
    }

    pub fn batch_pixels(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().flat_map(|&i| self.pixels(i).iter().copied()).collect()
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn batch_tensor<T: Real>(&self, indices: &[usize]) -> Tensor<T> {
        pixels_to_tensor(&self.batch_pixels(indices), self.batch_shape(indices.len()))
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            sample_shape: self.sample_shape,
            num_classes: self.num_classes,
            images: self.images[..n * self.sample_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Parses concatenated CIFAR-10 binary records (label byte + 3072 pixels).
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR10_RECORD) {
        return Err(Error::Data(format!("size {} is not a positive multiple of {CIFAR10_RECORD}", bytes.len())));
    }
    let n = bytes.len() / CIFAR10_RECORD;
    let mut images = Vec::with_capacity(n * (CIFAR10_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR10_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Data(format!("record {i}: label {} > 9", rec[0])));
        }
        labels.push(rec[0]);
        images.extend_from_slice(&rec[1..]);
    }
    Dataset::new(CIFAR10_SHAPE, 10, images, labels)
}

pub fn load_cifar10_file(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_cifar10(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in parts {
        images.extend(p.images);
        labels.extend(p.labels);
    }
    Dataset::new(CIFAR10_SHAPE, 10, images, labels)
}

/// Loads the train and test splits from the standard binary-version
/// directory, or a single file used for both.
pub fn load_cifar10(path: &Path) -> Result<(Dataset, Dataset)> {
    if path.is_file() {
        let ds = load_cifar10_file(path)?;
        return Ok((ds.clone(), ds));
    }
    let train = CIFAR10_TRAIN_FILES.iter().map(|f| load_cifar10_file(&path.join(f))).collect::<Result<Vec<_>>>()?;
    let test = load_cifar10_file(&path.join(CIFAR10_TEST_FILE))?;
    Ok((concat(train)?, test))
}

/// Gaussian clusters around one random blocky template per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub input_shape: [usize; 3],
    /// Standard deviation of per-pixel noise, in `[0, 1]` intensity units.
    pub noise: f64,
    /// Each sample is its template circularly shifted by up to this many
    /// pixels in each direction.
    pub max_shift: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 10,
            train_per_class: 200,
            test_per_class: 50,
            input_shape: [3, 16, 16],
            noise: 0.5,
            max_shift: 2,
            seed: 0,
        }
    }
}

/// Train and test sets drawn around shared class templates.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    let [c, h, w] = spec.input_shape;
    if spec.num_classes == 0 || spec.train_per_class == 0 || c * h * w == 0 {
        return Err(Error::Data(format!("synthetic spec needs positive sizes: {spec:?}")));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Data(format!("noise must be non-negative, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let block = (h.min(w) / 4).max(1);
    let templates: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            let coarse: Vec<f64> =
                (0..c * h.div_ceil(block) * w.div_ceil(block)).map(|_| rng.random_range(0.15..0.85)).collect();
            let (bh, bw) = (h.div_ceil(block), w.div_ceil(block));
            (0..c * h * w)
                .map(|i| {
                    let (ch, y, x) = (i / (h * w), i / w % h, i % w);
                    coarse[(ch * bh + y / block) * bw + x / block]
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Data(e.to_string()))?;
    let mut draw = |per_class: usize| {
        let mut images = Vec::with_capacity(spec.num_classes * per_class * c * h * w);
        let mut labels = Vec::with_capacity(spec.num_classes * per_class);
        for (class, template) in templates.iter().enumerate() {
            for _ in 0..per_class {
                let s = spec.max_shift as i64;
                let dy = rng.random_range(-s..=s);
                let dx = rng.random_range(-s..=s);
                for i in 0..c * h * w {
                    let (ch, y, x) = (i / (h * w), (i / w % h) as i64, (i % w) as i64);
                    let sy = (y + dy).rem_euclid(h as i64) as usize;
                    let sx = (x + dx).rem_euclid(w as i64) as usize;
                    let v = template[(ch * h + sy) * w + sx] + noise.sample(&mut rng);
                    images.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
                labels.push(class as u8);
            }
        }
        Dataset::new(spec.input_shape, spec.num_classes, images, labels)
    };
    let train = draw(spec.train_per_class)?;
    let test = draw(spec.test_per_class)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cifar_records() {
        let mut bytes = vec![0u8; 2 * CIFAR10_RECORD];
        bytes[0] = 3;
        bytes[1] = 255;
        bytes[CIFAR10_RECORD] = 9;
        let ds = parse_cifar10(&bytes).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels(), [3, 9]);
        assert_eq!(ds.sample_bits(), 24576);
        let t = ds.batch_tensor::<f32>(&[0]);
        assert_eq!(t.shape(), [1, 3, 32, 32]);
        assert_eq!(t.data()[0], 1.0);
        assert!(parse_cifar10(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = 10;
        assert!(parse_cifar10(&bytes).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_with_exact_counts() {
        let spec = SyntheticSpec { train_per_class: 7, test_per_class: 3, num_classes: 4, ..Default::default() };
        let (a, at) = generate_synthetic(&spec).unwrap();
        let (b, _) = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), [7; 4]);
        assert_eq!(at.class_counts(), [3; 4]);
        let (c, _) = generate_synthetic(&SyntheticSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a, c);
    }
}
