//! Datasets: synthetic generators, the CIFAR-10 binary format, and
//! deterministic splits and batching.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labeled images, `(count, channels, size, size)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let (n, _, _, _) = images.dims4("dataset")?;
        if n != labels.len() {
            return Err(Error::Shape {
                op: "dataset",
                lhs: vec![n],
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Malformed {
                what: "dataset".into(),
                reason: format!("label {bad} outside [0, {classes})"),
            });
        }
        if !images.is_finite() {
            return Err(Error::NumericOverflow {
                op: "dataset images".into(),
            });
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.dim(1)
    }

    pub fn size(&self) -> usize {
        self.images.dim(2)
    }

    fn record_len(&self) -> usize {
        self.images.numel() / self.len().max(1)
    }

    /// Images and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let r = self.record_len();
        let mut data = Vec::with_capacity(indices.len() * r);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * r..(i + 1) * r]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(shape, data).expect("batch shape"), labels)
    }

    /// Like [`Dataset::batch`], mirroring each image left-right with
    /// probability one half.
    pub fn batch_flipped(&self, indices: &[usize], rng: &mut ChaCha8Rng) -> (Tensor, Vec<usize>) {
        let (mut x, y) = self.batch(indices);
        let w = self.size();
        for img in x.data_mut().chunks_mut(self.record_len()) {
            if rng.random_bool(0.5) {
                for row in img.chunks_mut(w) {
                    row.reverse();
                }
            }
        }
        (x, y)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("dataset", serde_json::json!({"classes": self.classes}));
        c.push("images", self.images.clone());
        c.push(
            "labels",
            Tensor::from_vec(self.labels.iter().map(|&l| l as f64).collect()),
        );
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let bad = |reason: &str| Error::Malformed {
            what: "dataset container".into(),
            reason: reason.into(),
        };
        let classes = c.metadata["classes"].as_u64().ok_or_else(|| bad("missing classes"))? as usize;
        let images = c.get("images").ok_or_else(|| bad("missing images"))?.clone();
        let labels = c.get("labels").ok_or_else(|| bad("missing labels"))?;
        let labels = labels
            .data()
            .iter()
            .map(|&l| {
                (l >= 0.0 && l.fract() == 0.0)
                    .then_some(l as usize)
                    .ok_or_else(|| bad("non-integer label"))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(images, labels, classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    /// Constant-intensity images, one level per class.
    Trivial,
    Easy,
    Hard,
}

/// Class-conditional Gaussian blobs plus seeded pixel noise.
///
/// Class `c` has a blob whose center walks a ring around the image and
/// whose per-channel amplitude follows a class-specific color. `Trivial`
/// drops blobs and noise: every pixel of class `c` equals
/// `2c / (classes - 1) - 1`.
pub fn synth_generate(
    classes: usize,
    per_class: usize,
    size: usize,
    channels: usize,
    difficulty: Difficulty,
    seed: u64,
) -> Result<Dataset> {
    if size < 4 || classes < 2 || channels == 0 {
        return Err(Error::Config(
            "synthetic data needs size >= 4, classes >= 2, channels >= 1".into(),
        ));
    }
    let n = classes * per_class;
    let plane = size * size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: f64 = match difficulty {
        Difficulty::Trivial => 0.0,
        Difficulty::Easy => 0.5,
        Difficulty::Hard => 1.5,
    };
    let pixel_noise = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let templates: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut t = vec![0.0; channels * plane];
            if difficulty == Difficulty::Trivial {
                t.fill(2.0 * c as f64 / (classes - 1) as f64 - 1.0);
                return t;
            }
            let angle = std::f64::consts::TAU * c as f64 / classes as f64;
            let r = size as f64 / 4.0;
            let (cy, cx) = (
                size as f64 / 2.0 - 0.5 + r * angle.sin(),
                size as f64 / 2.0 - 0.5 + r * angle.cos(),
            );
            let width = size as f64 / 5.0;
            for ch in 0..channels {
                let amp = 1.0 + 0.5 * (angle + ch as f64 * 2.1).cos();
                for y in 0..size {
                    for x in 0..size {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        t[ch * plane + y * size + x] = amp * (-d2 / (2.0 * width * width)).exp();
                    }
                }
            }
            t
        })
        .collect();
    let mut data = Vec::with_capacity(n * channels * plane);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for &v in &templates[c] {
            data.push(if noise > 0.0 {
                v + pixel_noise.sample(&mut rng)
            } else {
                v
            });
        }
    }
    Dataset::new(Tensor::new(vec![n, channels, size, size], data)?, labels, classes)
}

/// Planted-signal task: each class is a vertical stripe pattern of period
/// three with a class-specific phase, plus pixel noise. The outer `border`
/// columns on each side carry only noise of standard deviation
/// `border_noise`.
///
/// A 3x3 average or max pool maps the interior stripes of every class to
/// the same value, so only an identity path carries the label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub per_class: usize,
    pub size: usize,
    pub border: usize,
    pub noise: f64,
    pub border_noise: f64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            per_class: 384,
            size: 12,
            border: 2,
            noise: 2.0,
            border_noise: 3.0,
        }
    }
}

pub const PLANTED_CLASSES: usize = 3;

pub fn planted_generate(spec: &PlantedSpec, seed: u64) -> Result<Dataset> {
    if spec.size < 2 * spec.border + 3 {
        return Err(Error::Config(
            "planted images need at least three stripe columns".into(),
        ));
    }
    let n = PLANTED_CLASSES * spec.per_class;
    let s = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let outer = Normal::new(0.0, spec.border_noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut data = Vec::with_capacity(n * s * s);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % PLANTED_CLASSES;
        labels.push(c);
        for _y in 0..s {
            for x in 0..s {
                let v = if x < spec.border || x >= s - spec.border {
                    outer.sample(&mut rng)
                } else {
                    let phase = std::f64::consts::TAU * (x as f64 / 3.0 + c as f64 / 3.0);
                    phase.cos() + inner.sample(&mut rng)
                };
                data.push(v);
            }
        }
    }
    Dataset::new(Tensor::new(vec![n, 1, s, s], data)?, labels, PLANTED_CLASSES)
}

/// Per-channel normalization constants applied after scaling pixels to
/// `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn cifar10() -> Self {
        Normalization {
            mean: vec![0.4914, 0.4822, 0.4465],
            std: vec![0.2470, 0.2435, 0.2616],
        }
    }
}

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const CIFAR_FILE_RECORDS: usize = 10_000;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

/// Raw CIFAR-10 records: a label byte and 3072 channel-major pixel bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecords {
    pub labels: Vec<u8>,
    pub pixels: Vec<u8>,
}

impl CifarRecords {
    /// Parses one binary file, which must hold exactly `records` records.
    pub fn parse(bytes: &[u8], records: usize, what: &str) -> Result<Self> {
        let expected = records * CIFAR_RECORD;
        if bytes.len() != expected {
            return Err(Error::Format {
                what: what.into(),
                expected: format!("{expected} bytes"),
                actual: format!("{} bytes", bytes.len()),
            });
        }
        let mut labels = Vec::with_capacity(records);
        let mut pixels = Vec::with_capacity(records * (CIFAR_RECORD - 1));
        for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            if rec[0] > 9 {
                return Err(Error::Malformed {
                    what: what.into(),
                    reason: format!("record {i} has label {}", rec[0]),
                });
            }
            labels.push(rec[0]);
            pixels.extend_from_slice(&rec[1..]);
        }
        Ok(CifarRecords { labels, pixels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn append(&mut self, other: CifarRecords) {
        self.labels.extend(other.labels);
        self.pixels.extend(other.pixels);
    }

    /// Re-serializes records `range` in the on-disk layout.
    pub fn to_bytes(&self, range: std::ops::Range<usize>) -> Vec<u8> {
        let px = CIFAR_RECORD - 1;
        let mut out = Vec::with_capacity(range.len() * CIFAR_RECORD);
        for i in range {
            out.push(self.labels[i]);
            out.extend_from_slice(&self.pixels[i * px..(i + 1) * px]);
        }
        out
    }

    pub fn to_dataset(&self, norm: &Normalization) -> Result<Dataset> {
        if norm.mean.len() != 3 || norm.std.len() != 3 || norm.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config(
                "CIFAR normalization needs three means and three positive stds".into(),
            ));
        }
        let plane = 32 * 32;
        let data = self
            .pixels
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let ch = (i / plane) % 3;
                (p as f64 / 255.0 - norm.mean[ch]) / norm.std[ch]
            })
            .collect();
        Dataset::new(
            Tensor::new(vec![self.len(), 3, 32, 32], data)?,
            self.labels.iter().map(|&l| l as usize).collect(),
            10,
        )
    }
}

/// Raw train (50000) and test (10000) records from a CIFAR-10 binary
/// directory.
pub fn load_cifar10_raw(dir: &Path) -> Result<(CifarRecords, CifarRecords)> {
    let read = |name: &str| -> Result<CifarRecords> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        CifarRecords::parse(&bytes, CIFAR_FILE_RECORDS, &path.display().to_string())
    };
    let mut train = read(CIFAR_TRAIN_FILES[0])?;
    for name in &CIFAR_TRAIN_FILES[1..] {
        train.append(read(name)?);
    }
    Ok((train, read(CIFAR_TEST_FILE)?))
}

/// Normalized train and test datasets.
pub fn load_cifar10(dir: &Path, norm: &Normalization) -> Result<(Dataset, Dataset)> {
    let (train, test) = load_cifar10_raw(dir)?;
    Ok((train.to_dataset(norm)?, test.to_dataset(norm)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Share of the examples used for weight steps; the rest drive alpha
    /// steps.
    pub weight_fraction: f64,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            weight_fraction: 0.5,
            seed: 0,
            batch_size: 64,
        }
    }
}

/// A fixed index set drawn in a fresh seeded order every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub indices: Vec<usize>,
    pub batch_size: usize,
    seed: u64,
}

impl Stream {
    pub fn new(indices: Vec<usize>, batch_size: usize, seed: u64) -> Self {
        Stream {
            indices,
            batch_size,
            seed,
        }
    }

    /// Index batches of `epoch`; the last batch may be short.
    pub fn batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order = self.indices.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    pub fn batch_count(&self) -> usize {
        self.indices.len().div_ceil(self.batch_size)
    }
}

/// Seeded disjoint split into a weight stream and an alpha stream that
/// together cover every example.
pub fn split_and_batch(n: usize, spec: &SplitSpec) -> Result<(Stream, Stream)> {
    if !(spec.weight_fraction > 0.0 && spec.weight_fraction < 1.0) {
        return Err(Error::Config("weight_fraction must lie strictly inside (0, 1)".into()));
    }
    let n_weight = (n as f64 * spec.weight_fraction).round() as usize;
    let n_alpha = n - n_weight;
    if spec.batch_size == 0 || spec.batch_size > n_weight.min(n_alpha) {
        return Err(Error::Config(format!(
            "batch size {} does not fit splits of {n_weight} and {n_alpha}",
            spec.batch_size
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let alpha = idx.split_off(n_weight);
    Ok((
        Stream::new(idx, spec.batch_size, spec.seed ^ 0x5757),
        Stream::new(alpha, spec.batch_size, spec.seed ^ 0xa1a1),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_two_classes_are_plus_minus_one() {
        let ds = synth_generate(2, 3, 4, 1, Difficulty::Trivial, 0).unwrap();
        for i in 0..ds.len() {
            let (x, y) = ds.batch(&[i]);
            let want = if y[0] == 0 { -1.0 } else { 1.0 };
            assert!(x.data().iter().all(|&v| v == want));
        }
    }

    #[test]
    fn synthetic_is_seeded() {
        let a = synth_generate(3, 5, 6, 2, Difficulty::Easy, 4).unwrap();
        assert_eq!(a, synth_generate(3, 5, 6, 2, Difficulty::Easy, 4).unwrap());
        assert_ne!(a, synth_generate(3, 5, 6, 2, Difficulty::Easy, 5).unwrap());
    }

    #[test]
    fn cifar_length_and_label_checks() {
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
        bytes[CIFAR_RECORD] = 7;
        let r = CifarRecords::parse(&bytes, 2, "x").unwrap();
        assert_eq!(r.labels, vec![0, 7]);
        assert_eq!(r.to_bytes(0..2), bytes);
        assert!(matches!(
            CifarRecords::parse(&bytes[..100], 2, "x"),
            Err(Error::Format { .. })
        ));
        bytes[0] = 10;
        assert!(matches!(
            CifarRecords::parse(&bytes, 2, "x"),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let (w, a) = split_and_batch(50_000, &SplitSpec::default()).unwrap();
        assert_eq!((w.indices.len(), a.indices.len()), (25_000, 25_000));
        let mut seen = vec![false; 50_000];
        for &i in w.indices.iter().chain(&a.indices) {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(w.batches(3), w.batches(3));
        assert_ne!(w.batches(3), w.batches(4));
    }

    #[test]
    fn dataset_container_round_trip() {
        let ds = synth_generate(3, 2, 4, 1, Difficulty::Hard, 1).unwrap();
        let c = Container::from_bytes(&ds.to_container().to_bytes(), Some("dataset")).unwrap();
        assert_eq!(Dataset::from_container(&c).unwrap(), ds);
    }

    #[test]
    fn planted_interior_pools_are_class_free() {
        let spec = PlantedSpec {
            noise: 0.0,
            border_noise: 0.0,
            per_class: 1,
            ..Default::default()
        };
        let ds = planted_generate(&spec, 0).unwrap();
        let s = spec.size;
        for i in 0..3 {
            let (x, _) = ds.batch(&[i]);
            let row = &x.data()[..s];
            for c in spec.border + 1..s - spec.border - 1 {
                let avg: f64 = row[c - 1..=c + 1].iter().sum::<f64>() / 3.0;
                assert!(avg.abs() < 1e-12);
            }
        }
    }
}
