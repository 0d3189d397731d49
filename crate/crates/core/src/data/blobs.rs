//! Synthetic "blob" classification task.
//!
//! Class `c` places a Gaussian intensity bump at a fixed location on a ring
//! around the image centre; each sample jitters the location, scales the
//! amplitude and adds pixel noise. At low noise the classes are linearly
//! separable, which makes the task a cheap stand-in for digit images.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobTask {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_side: usize,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Standard deviation (in pixels) of the blob centre around its class location.
    pub jitter: f64,
    /// Blob radius (Gaussian sigma) as a fraction of the image side.
    pub width: f64,
    pub seed: u64,
}

impl Default for BlobTask {
    fn default() -> Self {
        BlobTask {
            num_classes: 3,
            per_class: 100,
            image_side: 10,
            noise: 0.05,
            jitter: 0.5,
            width: 0.12,
            seed: 0,
        }
    }
}

impl BlobTask {
    /// Pixel coordinates `(y, x)` of class `c`'s blob centre.
    pub fn class_center(&self, c: usize) -> (f64, f64) {
        let mid = (self.image_side as f64 - 1.0) / 2.0;
        let radius = 0.3 * self.image_side as f64;
        let angle = 2.0 * PI * c as f64 / self.num_classes as f64;
        (mid + radius * angle.sin(), mid + radius * angle.cos())
    }

    /// Samples are interleaved by class (`label = i % K`), so any prefix is near-balanced.
    pub fn generate(&self) -> Dataset {
        let side = self.image_side;
        let shape = [side, side, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise.max(0.0)).unwrap();
        let jitter = Normal::new(0.0, self.jitter.max(0.0)).unwrap();
        let sigma = (self.width * side as f64).max(1e-6);
        let total = self.num_classes * self.per_class;
        let mut images = Vec::with_capacity(total);
        let mut labels = Vec::with_capacity(total);
        for i in 0..total {
            let c = i % self.num_classes;
            let (cy, cx) = self.class_center(c);
            let cy = cy + jitter.sample(&mut rng);
            let cx = cx + jitter.sample(&mut rng);
            let amp = rng.gen_range(0.7..1.0);
            let mut px = Vec::with_capacity(side * side);
            for y in 0..side {
                for x in 0..side {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let v = amp * (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut rng);
                    px.push(v.clamp(0.0, 1.0));
                }
            }
            images.push(Image::from_trusted(shape, px));
            labels.push(c);
        }
        Dataset::new(
            format!(
                "blobs(k={},side={},seed={})",
                self.num_classes, side, self.seed
            ),
            shape,
            images,
            Some(labels),
            self.num_classes,
        )
        .expect("generated blobs are well formed")
    }
}

/// Blob dataset with default noise settings.
pub fn synth_blobs(num_classes: usize, per_class: usize, image_side: usize, seed: u64) -> Dataset {
    BlobTask {
        num_classes,
        per_class,
        image_side,
        seed,
        ..BlobTask::default()
    }
    .generate()
}
