//! Datasets, augmentation, normalization, subset partitioning and case
//! sequences.

mod loaders;
mod synthetic;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};

pub use loaders::{parse_cifar10, parse_csv, parse_idx, IdxArray};
pub use synthetic::{SyntheticKind, SyntheticSpec};

/// Images `[N, C, H, W]` with labels and per-channel means.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    images: Tensor,
    labels: Vec<usize>,
    means: Vec<f64>,
    num_classes: usize,
}

impl Dataset {
    /// Builds a dataset and computes its per-channel means.
    pub fn new(
        name: impl Into<String>,
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Shape(format!(
                "dataset images must be [N, C, H, W], got {:?}",
                images.shape()
            )));
        }
        if labels.len() != images.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} images",
                labels.len(),
                images.rows()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        let means = channel_means(&images);
        Ok(Self {
            name: name.into(),
            images,
            labels,
            means,
            num_classes,
        })
    }

    /// Replaces the means, e.g. to normalize a test split with statistics
    /// from its training split.
    pub fn with_means(mut self, means: Vec<f64>) -> Result<Self> {
        if means.len() != self.channels() {
            return Err(Error::Shape(format!(
                "{} means for {} channels",
                means.len(),
                self.channels()
            )));
        }
        self.means = means;
        Ok(self)
    }

    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if let Some(&label) = self.labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    /// Per-sample shape `[C, H, W]`.
    pub fn sample_shape(&self) -> &[usize] {
        self.images.row_shape()
    }

    /// All images with the channel means subtracted.
    pub fn normalized(&self) -> Tensor {
        normalize(&self.images, &self.means).expect("means match channel count")
    }

    /// Keeps the first `n` samples.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        if n == 0 {
            return Err(Error::invalid("cannot truncate a dataset to zero samples"));
        }
        let idx: Vec<usize> = (0..n).collect();
        Ok(Self {
            name: self.name.clone(),
            images: gather(&self.images, &idx),
            labels: self.labels[..n].to_vec(),
            means: self.means.clone(),
            num_classes: self.num_classes,
        })
    }
}

fn channel_means(images: &Tensor) -> Vec<f64> {
    let (n, c) = (images.shape()[0], images.shape()[1]);
    let plane = images.shape()[2] * images.shape()[3];
    let mut sums = vec![0.0; c];
    for s in 0..n {
        for (ch, sum) in sums.iter_mut().enumerate() {
            let start = (s * c + ch) * plane;
            *sum += images.data()[start..start + plane].iter().sum::<f64>();
        }
    }
    let count = (n * plane) as f64;
    sums.into_iter().map(|s| s / count).collect()
}

/// Copies the rows at `indices` into a new batch tensor.
pub fn gather(images: &Tensor, indices: &[usize]) -> Tensor {
    let mut shape = images.shape().to_vec();
    shape[0] = indices.len();
    let mut data = Vec::with_capacity(indices.len() * images.row(0).len());
    for &i in indices {
        data.extend_from_slice(images.row(i));
    }
    Tensor::new(shape, data).expect("gathered rows keep their shape")
}

/// Subtracts a per-channel mean from a `[C, H, W]` image or an
/// `[N, C, H, W]` batch.
pub fn normalize(image: &Tensor, means: &[f64]) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() < 3 {
        return Err(Error::Shape(format!(
            "normalize expects [C, H, W] or [N, C, H, W], got {shape:?}"
        )));
    }
    let channels = shape[shape.len() - 3];
    if channels != means.len() {
        return Err(Error::Shape(format!(
            "{} means for {channels} channels",
            means.len()
        )));
    }
    let plane = shape[shape.len() - 2] * shape[shape.len() - 1];
    let mut out = image.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v -= means[(i / plane) % channels];
    }
    Ok(out)
}

/// `p` pairwise-disjoint index lists covering a random permutation of
/// `0..n`. Sizes differ by at most one; the lowest-indexed subsets take the
/// remainder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetPartition {
    pub subsets: Vec<Vec<usize>>,
}

pub fn partition<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<SubsetPartition> {
    if p == 0 || p > n {
        return Err(Error::invalid(format!(
            "cannot split {n} samples into {p} subsets"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (base, extra) = (n / p, n % p);
    let mut subsets = Vec::with_capacity(p);
    let mut start = 0;
    for i in 0..p {
        let size = base + usize::from(i < extra);
        subsets.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(SubsetPartition { subsets })
}

/// Order in which one selection event visits training cases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaseSequence(pub Vec<usize>);

impl CaseSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn truncate(&mut self, cap: usize) {
        self.0.truncate(cap);
    }
}

/// Uniform random permutation of `0..n` (Fisher-Yates).
pub fn shuffle_cases<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CaseSequence {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    CaseSequence(order)
}

/// Training-time augmentation: random crop after zero padding, then a
/// random horizontal mirror.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub crop_padding: usize,
    pub hflip_prob: f64,
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            crop_padding: 0,
            hflip_prob: 0.0,
        }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            crop_padding: 4,
            hflip_prob: 0.5,
        }
    }
}

/// Augments one `[C, H, W]` image.
pub fn augment<R: Rng + ?Sized>(image: &Tensor, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::Shape(format!(
            "augment expects [C, H, W], got {:?}",
            image.shape()
        )));
    };
    let mut out = image.clone();
    augment_into(image.data(), [c, h, w], cfg, rng, out.data_mut());
    Ok(out)
}

/// Slice form of [`augment`]. Draws the crop offset (only when padding is
/// nonzero) and then the flip coin (only when the probability is nonzero).
pub(crate) fn augment_into<R: Rng + ?Sized>(
    src: &[f64],
    [c, h, w]: [usize; 3],
    cfg: &AugmentConfig,
    rng: &mut R,
    dst: &mut [f64],
) {
    if !cfg.enabled {
        dst.copy_from_slice(src);
        return;
    }
    let pad = cfg.crop_padding;
    let (dy, dx) = if pad > 0 {
        (rng.gen_range(0..=2 * pad), rng.gen_range(0..=2 * pad))
    } else {
        (pad, pad)
    };
    let flip = cfg.hflip_prob > 0.0 && rng.gen::<f64>() < cfg.hflip_prob;
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                // Padded coordinate of the crop, shifted back into the image.
                let sy = (y + dy) as isize - pad as isize;
                let sx = (x + dx) as isize - pad as isize;
                let v = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                    plane[sy as usize * w + sx as usize]
                } else {
                    0.0
                };
                let ox = if flip { w - 1 - x } else { x };
                dst[ch * h * w + y * w + ox] = v;
            }
        }
    }
}

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Idx { images: PathBuf, labels: PathBuf },
    Cifar10 { paths: Vec<PathBuf> },
    Csv { path: PathBuf, shape: Option<[usize; 3]> },
    Synthetic(SyntheticSpec),
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Idx { images, labels } => loaders::load_idx(images, labels),
        DataSource::Cifar10 { paths } => loaders::load_cifar10(paths),
        DataSource::Csv { path, shape } => loaders::load_csv(path, *shape),
        DataSource::Synthetic(spec) => spec.generate(),
    }
}
