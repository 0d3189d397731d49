//! Images, datasets, and the loaders and writers around them.

pub mod blobs;
pub mod idx;
pub mod pnm;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use blobs::{synth_blobs, BlobTask};
pub use idx::load_idx;
pub use pnm::{dump_grid, dump_pnm, read_pnm};

/// Height, width, channels.
pub type ImageShape = [usize; 3];

/// A pixel grid in `[0, 1]`, stored row-major as `(y, x, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: ImageShape,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(shape: ImageShape, pixels: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != pixels.len() {
            return Err(Error::input(format!(
                "image shape {shape:?} needs {} pixels, got {}",
                shape.iter().product::<usize>(),
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::input(format!(
                "pixel {i} = {} lies outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Image { shape, pixels })
    }

    pub fn zeros(shape: ImageShape) -> Self {
        Image {
            shape,
            pixels: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Built by callers that already guarantee the `[0, 1]` range.
    pub(crate) fn from_trusted(shape: ImageShape, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), pixels.len());
        Image { shape, pixels }
    }
}

impl AsRef<[f64]> for Image {
    fn as_ref(&self) -> &[f64] {
        &self.pixels
    }
}

/// A named collection of equally shaped images with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    shape: ImageShape,
    images: Vec<Image>,
    labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        shape: ImageShape,
        images: Vec<Image>,
        labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        if let Some(i) = images.iter().position(|im| im.shape() != shape) {
            return Err(Error::input(format!(
                "image {i} has shape {:?}, dataset shape is {shape:?}",
                images[i].shape()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != images.len() {
                return Err(Error::input(format!(
                    "{} labels for {} images",
                    labels.len(),
                    images.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
                return Err(Error::input(format!(
                    "label {bad} out of range for {num_classes} classes"
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            shape,
            images,
            labels,
            num_classes,
        })
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or an input error for unlabeled data.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::input(format!("dataset `{}` has no labels", self.name)))
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Copy with the labels removed.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            labels: None,
            ..self.clone()
        }
    }

    /// Keeps the first `n` images (or all, if fewer).
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            name: self.name.clone(),
            shape: self.shape,
            images: self.images[..n].to_vec(),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            num_classes: self.num_classes,
        }
    }

    /// SHA-256 over shape and pixel bits; used to tie checkpoints to their data.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for d in self.shape {
            h.update((d as u64).to_le_bytes());
        }
        h.update((self.images.len() as u64).to_le_bytes());
        for im in &self.images {
            for p in &im.pixels {
                h.update(p.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Draws `n` distinct images uniformly without replacement and drops the labels.
pub fn sample_unlabeled(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > ds.len() {
        return Err(Error::input(format!(
            "cannot sample {n} images from `{}` with {}",
            ds.name,
            ds.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample(&mut rng, ds.len(), n);
    let images = picked.iter().map(|i| ds.images[i].clone()).collect();
    Dataset::new(
        format!("{}[sample n={n} seed={seed}]", ds.name),
        ds.shape,
        images,
        None,
        ds.num_classes,
    )
}

/// Indices chosen by [`sample_unlabeled`] for the same arguments.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::input(format!("cannot sample {n} of {len}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, len, n).into_vec())
}

/// Where a dataset comes from, as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Blobs(BlobTask),
    Idx {
        images: std::path::PathBuf,
        #[serde(default)]
        labels: Option<std::path::PathBuf>,
        /// Class count; IDX files do not record it.
        #[serde(default = "ten")]
        num_classes: usize,
        /// Keep only the first `limit` records.
        #[serde(default)]
        limit: Option<usize>,
    },
}

fn ten() -> usize {
    10
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Blobs(task) => Ok(task.generate()),
            DatasetSource::Idx {
                images,
                labels,
                num_classes,
                limit,
            } => {
                let ds = load_idx(images, labels.as_deref(), *num_classes)?;
                Ok(match limit {
                    Some(n) => ds.truncated(*n),
                    None => ds,
                })
            }
        }
    }
}
