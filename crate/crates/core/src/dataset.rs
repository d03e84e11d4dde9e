//! Image classification data: a seeded procedural generator, a flat binary
//! file format and seeded train/validation splits.
//!
//! File layout (little endian): the 8-byte magic `IMNCSDS1`, six `u32`
//! fields (train count, test count, classes, channels, height, width), then
//! train pixels as `f32` in NCHW order, train labels as `u32`, test pixels
//! and test labels.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use immunecs_nn::{LabeledData, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::DatasetSource;
use crate::error::DataError;
use crate::rng;

pub const MAGIC: &[u8; 8] = b"IMNCSDS1";
const HEADER_LEN: usize = 8 + 6 * 4;
pub const PROCEDURAL_SIZE: usize = 16;
pub const MAX_PROCEDURAL_CLASSES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: LabeledData,
    pub test: LabeledData,
    pub classes: usize,
}

/// Training and validation parts of the training pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: LabeledData,
    pub val: LabeledData,
}

impl Dataset {
    pub fn new(train: LabeledData, test: LabeledData, classes: usize) -> Result<Self, DataError> {
        if train.is_empty() {
            return Err(DataError::Invalid("empty training set".into()));
        }
        let [_, c, h, w] = train.inputs.dims();
        let [_, tc, th, tw] = test.inputs.dims();
        if !test.is_empty() && (c, h, w) != (tc, th, tw) {
            return Err(DataError::Invalid("train and test image shapes differ".into()));
        }
        if classes < 2 {
            return Err(DataError::Invalid("need at least two classes".into()));
        }
        if let Some(&y) = train.labels.iter().chain(&test.labels).find(|&&y| y >= classes) {
            return Err(DataError::Invalid(format!("label {y} out of range for {classes} classes")));
        }
        Ok(Self {
            train,
            test,
            classes,
        })
    }

    pub fn from_source(source: &DatasetSource) -> Result<Self, DataError> {
        match source {
            DatasetSource::Procedural {
                classes,
                train,
                test,
                noise,
                seed,
            } => Self::procedural(*classes, *train, *test, *noise, *seed),
            DatasetSource::File { path } => Self::load(path),
        }
    }

    /// (channels, height, width) of every image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let [_, c, h, w] = self.train.inputs.dims();
        (c, h, w)
    }

    /// 16×16 single-channel images of simple shapes at random offsets,
    /// scales and intensities, plus Gaussian pixel noise. Classes are
    /// balanced.
    pub fn procedural(
        classes: usize,
        n_train: usize,
        n_test: usize,
        noise: f64,
        seed: u64,
    ) -> Result<Self, DataError> {
        if !(2..=MAX_PROCEDURAL_CLASSES).contains(&classes) {
            return Err(DataError::Invalid(format!(
                "procedural data supports 2..={MAX_PROCEDURAL_CLASSES} classes, got {classes}"
            )));
        }
        if n_train == 0 || !(noise >= 0.0) {
            return Err(DataError::Invalid("need training samples and non-negative noise".into()));
        }
        let mut rng = rng::stream(seed, &[rng::hash_str("procedural")]);
        let train = generate(classes, n_train, noise, &mut rng);
        let test = generate(classes, n_test, noise, &mut rng);
        Self::new(train, test, classes)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let (c, h, w) = self.image_shape();
        let file = fs::File::create(path)?;
        let mut out = BufWriter::new(file);
        out.write_all(MAGIC)?;
        for v in [self.train.len(), self.test.len(), self.classes, c, h, w] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for part in [&self.train, &self.test] {
            for &x in part.inputs.data() {
                out.write_all(&(x as f32).to_le_bytes())?;
            }
            for &y in &part.labels {
                out.write_all(&(y as u32).to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let bytes = fs::read(path)?;
        let format = |message: String| DataError::Format {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(format("missing dataset magic".into()));
        }
        let field = |i: usize| {
            let at = 8 + 4 * i;
            u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
        };
        let (n_train, n_test, classes, c, h, w) =
            (field(0), field(1), field(2), field(3), field(4), field(5));
        let image = c * h * w;
        let expected = HEADER_LEN + 4 * (n_train + n_test) * (image + 1);
        if bytes.len() != expected {
            return Err(format(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let mut cursor = HEADER_LEN;
        let mut read_u32s = |count: usize| -> Vec<u32> {
            let out = bytes[cursor..cursor + 4 * count]
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            cursor += 4 * count;
            out
        };
        let mut parts = Vec::with_capacity(2);
        for n in [n_train, n_test] {
            let pixels: Vec<f64> = read_u32s(n * image)
                .into_iter()
                .map(|b| f32::from_bits(b) as f64)
                .collect();
            let labels = read_u32s(n).into_iter().map(|y| y as usize).collect();
            let inputs = Tensor::from_vec([n, c, h, w], pixels).map_err(|e| format(e.to_string()))?;
            parts.push(LabeledData::new(inputs, labels).map_err(|e| format(e.to_string()))?);
        }
        let test = parts.pop().expect("two parts");
        let train = parts.pop().expect("two parts");
        Self::new(train, test, classes)
    }
}

/// Seeded split of `pool`: a validation slice of `val_fraction`, then a
/// training slice of `train_fraction` of the pool drawn from the remainder.
pub fn split(pool: &LabeledData, val_fraction: f64, train_fraction: f64, seed: u64) -> Split {
    let n = pool.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::hash_str("split")]));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let rest = n - n_val.min(n);
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, rest.max(1));
    let (val, remainder) = order.split_at(n_val.min(n));
    Split {
        train: pool.subset(&remainder[..n_train.min(remainder.len())]),
        val: pool.subset(val),
    }
}

fn generate<R: Rng + ?Sized>(classes: usize, n: usize, noise: f64, rng: &mut R) -> LabeledData {
    let s = PROCEDURAL_SIZE;
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    let pixel_noise = Normal::new(0.0, noise.max(1e-12)).expect("finite noise");
    let mut data = Vec::with_capacity(n * s * s);
    for &y in &labels {
        let mut img = vec![0.0; s * s];
        let cx = 7.5 + rng.random_range(-3.0..3.0);
        let cy = 7.5 + rng.random_range(-3.0..3.0);
        let r: f64 = rng.random_range(2.5..5.0);
        let intensity: f64 = rng.random_range(0.6..1.0);
        for (idx, px) in img.iter_mut().enumerate() {
            let dx = (idx % s) as f64 - cx;
            let dy = (idx / s) as f64 - cy;
            if shape_contains(y, dx, dy, r) {
                *px = intensity;
            }
            if noise > 0.0 {
                *px += pixel_noise.sample(rng);
            }
        }
        data.extend(img);
    }
    let inputs = Tensor::from_vec([n, 1, s, s], data).expect("consistent dims");
    LabeledData::new(inputs, labels).expect("one label per sample")
}

fn shape_contains(class: usize, dx: f64, dy: f64, r: f64) -> bool {
    let bar = |a: f64, b: f64| a.abs() <= r && b.abs() <= 1.0;
    match class {
        0 => bar(dx, dy),
        1 => bar(dy, dx),
        2 => ((dx * dx + dy * dy).sqrt() - r).abs() <= 0.8,
        3 => dx.abs() <= r && ((dx - dy).abs() <= 1.0 || (dx + dy).abs() <= 1.0),
        4 => dx.abs() <= r * 0.8 && dy.abs() <= r * 0.8,
        _ => bar(dx, dy) || bar(dy, dx),
    }
}
