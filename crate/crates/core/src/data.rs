//! Synthetic multimodal dataset, IDX ingestion and stratified splits.
//!
//! The toy generator mirrors the "same digit, different background" structure
//! of PolyMNIST at 8x8: every modality shows the class glyph over its own
//! procedural background texture, with independent pixel noise.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffgraph::Tensor;
use crate::rng::SplitRng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;
pub const MAX_TOY_MODALITIES: usize = 8;
/// Background intensity added on top of the glyph.
pub const BACKGROUND_GAIN: f64 = 0.4;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid toy config: {0}")]
    Config(String),
    #[error("{file}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { file: String, expected: u32, found: u32 },
    #[error("{file}: truncated, expected {expected} bytes but found {found}")]
    Truncated {
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is not a valid class")]
    BadLabel { index: usize, label: u8 },
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("dataset is inconsistent: {0}")]
    Inconsistent(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// 8x8 digit bitmaps, one byte per row, most significant bit on the left.
const GLYPHS: [[u8; 8]; NUM_CLASSES] = [
    [0x3C, 0x66, 0x6E, 0x76, 0x66, 0x66, 0x3C, 0x00], // 0
    [0x18, 0x38, 0x18, 0x18, 0x18, 0x18, 0x7E, 0x00], // 1
    [0x3C, 0x66, 0x06, 0x0C, 0x30, 0x60, 0x7E, 0x00], // 2
    [0x3C, 0x66, 0x06, 0x1C, 0x06, 0x66, 0x3C, 0x00], // 3
    [0x0C, 0x1C, 0x3C, 0x6C, 0x7E, 0x0C, 0x0C, 0x00], // 4
    [0x7E, 0x60, 0x7C, 0x06, 0x06, 0x66, 0x3C, 0x00], // 5
    [0x3C, 0x60, 0x7C, 0x66, 0x66, 0x66, 0x3C, 0x00], // 6
    [0x7E, 0x06, 0x0C, 0x18, 0x30, 0x30, 0x30, 0x00], // 7
    [0x3C, 0x66, 0x66, 0x3C, 0x66, 0x66, 0x3C, 0x00], // 8
    [0x3C, 0x66, 0x66, 0x3E, 0x06, 0x0C, 0x38, 0x00], // 9
];

/// Configuration of the synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub num_modalities: usize,
    pub examples_per_class: usize,
    /// Side length in pixels; a multiple of 8 (glyphs are upsampled).
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Background pattern per modality; defaults to `0..M`.
    #[serde(default)]
    pub backgrounds: Option<Vec<usize>>,
    /// Per-pixel flip probability.
    #[serde(default)]
    pub noise: f64,
    pub seed: u64,
}

fn default_resolution() -> usize {
    8
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            num_modalities: 5,
            examples_per_class: 100,
            resolution: 8,
            backgrounds: None,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(1..=MAX_TOY_MODALITIES).contains(&self.num_modalities) {
            return Err(DataError::Config(format!(
                "num_modalities must be in 1..={MAX_TOY_MODALITIES}, got {}",
                self.num_modalities
            )));
        }
        if self.examples_per_class == 0 {
            return Err(DataError::Config("examples_per_class must be positive".into()));
        }
        if self.resolution == 0 || self.resolution % 8 != 0 {
            return Err(DataError::Config(format!(
                "resolution must be a positive multiple of 8, got {}",
                self.resolution
            )));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(DataError::Config(format!(
                "noise must be in [0, 0.5), got {}",
                self.noise
            )));
        }
        if let Some(bg) = &self.backgrounds {
            if bg.len() != self.num_modalities {
                return Err(DataError::Config(format!(
                    "{} backgrounds given for {} modalities",
                    bg.len(),
                    self.num_modalities
                )));
            }
            if let Some(b) = bg.iter().find(|b| **b >= NUM_PATTERNS) {
                return Err(DataError::Config(format!("unknown background pattern {b}")));
            }
        }
        Ok(())
    }

    fn background_ids(&self) -> Vec<usize> {
        self.backgrounds
            .clone()
            .unwrap_or_else(|| (0..self.num_modalities).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Modality {
    pub name: String,
    pub dim: usize,
    /// Row-major `len x dim`, values in `[0, 1]`.
    pub data: Vec<f64>,
}

/// Aligned modalities with one shared class label per example.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalDataset {
    pub modalities: Vec<Modality>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

/// A batch of aligned examples: one `B x dim_m` tensor per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalBatch {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl MultimodalBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl MultimodalDataset {
    pub fn new(modalities: Vec<Modality>, labels: Vec<usize>, num_classes: usize) -> Result<Self, DataError> {
        for m in &modalities {
            if m.dim == 0 || m.data.len() != labels.len() * m.dim {
                return Err(DataError::Inconsistent(format!(
                    "modality {} has {} values for {} examples of dim {}",
                    m.name,
                    m.data.len(),
                    labels.len(),
                    m.dim
                )));
            }
        }
        if let Some(l) = labels.iter().find(|l| **l >= num_classes) {
            return Err(DataError::Inconsistent(format!("label {l} >= {num_classes} classes")));
        }
        Ok(Self {
            modalities,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.dim).collect()
    }

    pub fn example(&self, modality: usize, index: usize) -> &[f64] {
        let m = &self.modalities[modality];
        &m.data[index * m.dim..(index + 1) * m.dim]
    }

    /// Gathers the given examples into a batch.
    pub fn batch(&self, indices: &[usize]) -> MultimodalBatch {
        let inputs = self
            .modalities
            .iter()
            .enumerate()
            .map(|(mi, m)| {
                let mut data = Vec::with_capacity(indices.len() * m.dim);
                for &i in indices {
                    data.extend_from_slice(self.example(mi, i));
                }
                Tensor::new(indices.len(), m.dim, data).expect("consistent dims")
            })
            .collect();
        MultimodalBatch {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn all(&self) -> MultimodalBatch {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let modalities = self
            .modalities
            .iter()
            .enumerate()
            .map(|(mi, m)| Modality {
                name: m.name.clone(),
                dim: m.dim,
                data: indices
                    .iter()
                    .flat_map(|&i| self.example(mi, i).iter().copied())
                    .collect(),
            })
            .collect();
        Self {
            modalities,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// The 0/1 glyph for `class` upsampled to `resolution x resolution`.
pub fn glyph(class: usize, resolution: usize) -> Vec<f64> {
    let f = resolution / 8;
    let mut out = Vec::with_capacity(resolution * resolution);
    for r in 0..resolution {
        let bits = GLYPHS[class][r / f];
        for c in 0..resolution {
            out.push(f64::from((bits >> (7 - c / f)) & 1));
        }
    }
    out
}

pub const NUM_PATTERNS: usize = 8;

/// Procedural background texture with values in `[0, 1]`.
///
/// 0 blank, 1 horizontal stripes, 2 checkerboard, 3 horizontal gradient,
/// 4 dots, 5 rings, 6 diagonal stripes, 7 border.
pub fn background(pattern: usize, resolution: usize) -> Vec<f64> {
    let n = resolution as f64;
    let f = (resolution / 8).max(1);
    let mut out = Vec::with_capacity(resolution * resolution);
    for r in 0..resolution {
        for c in 0..resolution {
            let (rr, cc) = (r / f, c / f);
            let v = match pattern {
                0 => 0.0,
                1 => f64::from(u8::from(rr % 2 == 0)),
                2 => f64::from(u8::from((rr + cc) % 2 == 0)),
                3 => c as f64 / (n - 1.0).max(1.0),
                4 => f64::from(u8::from(rr % 3 == 1 && cc % 3 == 1)),
                5 => {
                    let dr = r as f64 + 0.5 - n / 2.0;
                    let dc = c as f64 + 0.5 - n / 2.0;
                    let d = (dr * dr + dc * dc).sqrt() / f as f64;
                    f64::from(u8::from((d.floor() as usize) % 2 == 1))
                }
                6 => f64::from(u8::from((rr + cc) % 3 == 0)),
                7 => f64::from(u8::from(rr == 0 || cc == 0 || rr == 7 || cc == 7)),
                _ => 0.0,
            };
            out.push(v);
        }
    }
    out
}

/// Generates the class-balanced toy dataset, deterministic in `cfg.seed`.
pub fn gen_toy(cfg: &ToyConfig) -> Result<MultimodalDataset, DataError> {
    cfg.validate()?;
    let res = cfg.resolution;
    let dim = res * res;
    let n = cfg.examples_per_class * NUM_CLASSES;
    let glyphs: Vec<Vec<f64>> = (0..NUM_CLASSES).map(|c| glyph(c, res)).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % NUM_CLASSES).collect();

    let root = SplitRng::new(cfg.seed);
    let modalities = cfg
        .background_ids()
        .into_iter()
        .enumerate()
        .map(|(m, pattern)| {
            let bg = background(pattern, res);
            let mut rng = root.split(m as u64);
            let mut data = Vec::with_capacity(n * dim);
            for &label in &labels {
                let g = &glyphs[label];
                for p in 0..dim {
                    let flip = if cfg.noise > 0.0 && rng.bernoulli(cfg.noise) {
                        1.0 - 2.0 * g[p]
                    } else {
                        0.0
                    };
                    data.push((g[p] + BACKGROUND_GAIN * bg[p] + flip).clamp(0.0, 1.0));
                }
            }
            Modality {
                name: format!("m{m}"),
                dim,
                data,
            }
        })
        .collect();
    MultimodalDataset::new(modalities, labels, NUM_CLASSES)
}

fn read_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32, DataError> {
    let chunk = bytes.get(offset..offset + 4).ok_or_else(|| DataError::Truncated {
        file: file.to_string(),
        expected: offset + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
}

/// Parses IDX image and label buffers into a one-modality dataset.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<MultimodalDataset, DataError> {
    let magic = read_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            file: "images".into(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(images, 4, "images")? as usize;
    let rows = read_u32(images, 8, "images")? as usize;
    let cols = read_u32(images, 12, "images")? as usize;
    let dim = rows * cols;
    let expected = 16 + count * dim;
    if images.len() < expected {
        return Err(DataError::Truncated {
            file: "images".into(),
            expected,
            found: images.len(),
        });
    }

    let magic = read_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            file: "labels".into(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = read_u32(labels, 4, "labels")? as usize;
    if label_count != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    if labels.len() < 8 + count {
        return Err(DataError::Truncated {
            file: "labels".into(),
            expected: 8 + count,
            found: labels.len(),
        });
    }
    let label_bytes = &labels[8..8 + count];
    if let Some((index, &label)) = label_bytes
        .iter()
        .enumerate()
        .find(|(_, l)| **l as usize >= NUM_CLASSES)
    {
        return Err(DataError::BadLabel { index, label });
    }
    let data = images[16..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    MultimodalDataset::new(
        vec![Modality {
            name: "idx".into(),
            dim,
            data,
        }],
        label_bytes.iter().map(|&l| l as usize).collect(),
        NUM_CLASSES,
    )
}

/// Reads an IDX image file and its label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<MultimodalDataset, DataError> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| DataError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    parse_idx(&read(images)?, &read(labels)?)
}

/// Stratified, seeded train/test split.
pub fn split(
    dataset: &MultimodalDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(MultimodalDataset, MultimodalDataset), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::BadFraction(train_fraction));
    }
    let mut rng = SplitRng::new(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..dataset.num_classes {
        let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
        rng.shuffle(&mut idx);
        let k = (train_fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}
