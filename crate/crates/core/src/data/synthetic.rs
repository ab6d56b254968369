//! Seeded synthetic datasets.
//!
//! Sample `i` always has label `i mod classes`, so every generated split is
//! class-balanced up to one sample per class.
//!
//! - `two-moons`: `t ~ U[0, pi)`; class 0 is `(cos t, sin t)`, class 1 is
//!   `(1 - cos t, 0.5 - sin t)`; both coordinates get `N(0, noise^2)` noise.
//!   Samples are `[1, 1, 2]` images.
//! - `gaussian-blobs`: class centers in `R^(side*side)` are drawn once per
//!   seed from `N(0, 2^2)` per coordinate; a sample is its class center plus
//!   `N(0, noise^2)` per coordinate, laid out as a `[1, side, side]` image.
//!
//! Class centers depend only on `seed`; samples depend on `(seed, split)`,
//! so a train and a test split with the same seed share one distribution.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::seed::{self, derive_seed};
use crate::{Error, Result, Tensor};

const STREAM_CENTERS: u64 = 0x5EED_C0DE;
const STREAM_SAMPLES: u64 = 0x5A3B_1E55;
const CENTER_SCALE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    GaussianBlobs,
    TwoMoons,
}

impl SyntheticKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SyntheticKind::GaussianBlobs => "gaussian-blobs",
            SyntheticKind::TwoMoons => "two-moons",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-blobs" => Ok(SyntheticKind::GaussianBlobs),
            "two-moons" => Ok(SyntheticKind::TwoMoons),
            other => Err(Error::invalid(format!(
                "unknown synthetic kind {other:?} (expected gaussian-blobs or two-moons)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub seed: u64,
    /// Independent sample stream; 0 for training, 1 for test by convention.
    pub split: u64,
    pub classes: usize,
    pub noise: f64,
    /// Image side for gaussian blobs.
    pub side: usize,
}

impl SyntheticSpec {
    pub fn two_moons(n: usize, seed: u64, noise: f64) -> Self {
        Self {
            kind: SyntheticKind::TwoMoons,
            n,
            seed,
            split: 0,
            classes: 2,
            noise,
            side: 1,
        }
    }

    pub fn gaussian_blobs(n: usize, seed: u64, classes: usize, side: usize, noise: f64) -> Self {
        Self {
            kind: SyntheticKind::GaussianBlobs,
            n,
            seed,
            split: 0,
            classes,
            noise,
            side,
        }
    }

    pub fn with_split(mut self, split: u64) -> Self {
        self.split = split;
        self
    }

    pub fn generate(&self) -> Result<Dataset> {
        if self.n == 0 {
            return Err(Error::invalid("synthetic dataset needs n >= 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("invalid noise level {}", self.noise)));
        }
        let noise = Normal::new(0.0, self.noise).expect("validated noise");
        let mut rng = seed::rng(derive_seed(self.seed, STREAM_SAMPLES, self.split));
        let labels: Vec<usize> = (0..self.n).map(|i| i % self.classes.max(1)).collect();
        let name = format!("{}-{}", self.kind, if self.split == 0 { "train" } else { "test" });
        match self.kind {
            SyntheticKind::TwoMoons => {
                if self.classes != 2 {
                    return Err(Error::invalid("two-moons has exactly 2 classes"));
                }
                let mut data = Vec::with_capacity(2 * self.n);
                for &label in &labels {
                    let t = rng.gen_range(0.0..PI);
                    let (x, y) = if label == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    };
                    data.push(x + noise.sample(&mut rng));
                    data.push(y + noise.sample(&mut rng));
                }
                Dataset::new(name, Tensor::new(vec![self.n, 1, 1, 2], data)?, labels, 2)
            }
            SyntheticKind::GaussianBlobs => {
                if self.classes == 0 || self.side == 0 {
                    return Err(Error::invalid("gaussian-blobs needs classes >= 1 and side >= 1"));
                }
                let dim = self.side * self.side;
                let spread = Normal::new(0.0, CENTER_SCALE).expect("constant scale");
                let mut center_rng = seed::rng(derive_seed(self.seed, STREAM_CENTERS, 0));
                let centers: Vec<Vec<f64>> = (0..self.classes)
                    .map(|_| (0..dim).map(|_| spread.sample(&mut center_rng)).collect())
                    .collect();
                let mut data = Vec::with_capacity(dim * self.n);
                for &label in &labels {
                    data.extend(centers[label].iter().map(|c| c + noise.sample(&mut rng)));
                }
                Dataset::new(
                    name,
                    Tensor::new(vec![self.n, 1, self.side, self.side], data)?,
                    labels,
                    self.classes,
                )
            }
        }
    }
}
