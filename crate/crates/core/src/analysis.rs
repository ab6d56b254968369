//! Test-set accuracy and channel-wise activation profiles.
//!
//! A profile takes the first `K` samples of a split, runs them to a spatial
//! layer and global-max-pools every channel, giving a `[K, C]` matrix. Two
//! scalar summaries make profiles comparable: the fraction of exact zeros
//! and the histogram entropy divided by `ln(bins)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gather, Dataset};
use crate::nn::ModelState;
use crate::{Error, Result, Tensor};

pub const DEFAULT_BINS: usize = 50;
const EVAL_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub count: usize,
    pub correct: usize,
}

/// Predictions for every sample of `dataset`, normalized with its means.
pub fn predictions(model: &ModelState, dataset: &Dataset) -> Result<Vec<usize>> {
    let images = dataset.normalized();
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let chunks: Vec<Vec<usize>> = idx
        .par_chunks(EVAL_CHUNK)
        .map(|c| model.predict(&gather(&images, c)))
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Exact-count accuracy of `model` on `dataset`. No augmentation.
pub fn evaluate(model: &ModelState, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty split"));
    }
    let preds = predictions(model, dataset)?;
    let k = dataset.num_classes();
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for (&p, &y) in preds.iter().zip(dataset.labels()) {
        totals[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    Ok(EvalReport {
        split: dataset.name.clone(),
        accuracy: correct as f64 / dataset.len() as f64,
        per_class_accuracy: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
            .collect(),
        count: dataset.len(),
        correct,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal-width bins over `[min(0, lo), hi]`; the top edge is
    /// inclusive. A range of zero width becomes `[lo, lo + 1]`.
    pub fn build(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("histogram needs at least one bin"));
        }
        let lo = values.iter().copied().fold(0.0f64, f64::min);
        let mut hi = values.iter().copied().fold(lo, f64::max);
        if hi <= lo {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Shannon entropy (natural log) of the bin frequencies.
    pub fn entropy(&self) -> f64 {
        let total = self.total() as f64;
        if total == 0.0 {
            return 0.0;
        }
        -self
            .counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                p * p.ln()
            })
            .sum::<f64>()
    }

    /// Entropy divided by `ln(bins)`, in `[0, 1]`; 0 for a single bin.
    pub fn normalized_entropy(&self) -> f64 {
        if self.bins() < 2 {
            return 0.0;
        }
        self.entropy() / (self.bins() as f64).ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationProfile {
    pub layer: String,
    pub layer_index: usize,
    pub samples: usize,
    pub channels: usize,
    /// Row-major `[samples, channels]`.
    pub values: Vec<f64>,
    pub histogram: Histogram,
}

impl ActivationProfile {
    pub fn from_values(
        layer: impl Into<String>,
        layer_index: usize,
        channels: usize,
        values: Vec<f64>,
        bins: usize,
    ) -> Result<Self> {
        if channels == 0 || values.len() % channels != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form rows of {channels} channels",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                kind: "activation",
            });
        }
        Ok(Self {
            layer: layer.into(),
            layer_index,
            samples: values.len() / channels,
            channels,
            histogram: Histogram::build(&values, bins)?,
            values,
        })
    }

    pub fn row(&self, sample: usize) -> &[f64] {
        &self.values[sample * self.channels..(sample + 1) * self.channels]
    }

    pub fn zero_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|&&v| v == 0.0).count() as f64 / self.values.len() as f64
    }

    pub fn summary(&self) -> ProfileSummary {
        ProfileSummary {
            layer: self.layer.clone(),
            samples: self.samples,
            channels: self.channels,
            bins: self.histogram.bins(),
            zero_fraction: self.zero_fraction(),
            entropy: self.histogram.entropy(),
            normalized_entropy: self.histogram.normalized_entropy(),
            max: self.values.iter().copied().fold(0.0, f64::max),
            mean: self.values.iter().sum::<f64>() / self.values.len().max(1) as f64,
        }
    }

    /// `sample,channel,value` rows with a header line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        w.write_record(["sample", "channel", "value"]).map_err(csv_err)?;
        for s in 0..self.samples {
            for (c, v) in self.row(s).iter().enumerate() {
                w.write_record([s.to_string(), c.to_string(), format!("{v:?}")])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub layer: String,
    pub samples: usize,
    pub channels: usize,
    pub bins: usize,
    pub zero_fraction: f64,
    pub entropy: f64,
    pub normalized_entropy: f64,
    pub max: f64,
    pub mean: f64,
}

/// Global-max-pooled activations of `layer` for the first `k` samples.
pub fn activation_profile(
    model: &ModelState,
    layer: usize,
    dataset: &Dataset,
    k: usize,
    bins: usize,
) -> Result<ActivationProfile> {
    if layer >= model.layers().len() {
        return Err(Error::invalid(format!(
            "layer index {layer} out of range for {} layers",
            model.layers().len()
        )));
    }
    let &[channels, h, w] = model.output_shape(layer) else {
        return Err(Error::invalid(format!(
            "layer {layer} ({}) has no spatial feature maps",
            model.layers()[layer].kind()
        )));
    };
    if k == 0 {
        return Err(Error::invalid("profile needs at least one sample"));
    }
    let k = k.min(dataset.len());
    let idx: Vec<usize> = (0..k).collect();
    let batch: Tensor = gather(&dataset.normalized(), &idx);
    let maps = model.forward_to(&batch, layer)?;
    let plane = h * w;
    let values: Vec<f64> = maps
        .data()
        .chunks_exact(plane)
        .map(|m| m.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    ActivationProfile::from_values(
        format!("{layer}:{}", model.layers()[layer].kind()),
        layer,
        channels,
        values,
        bins,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileComparison {
    pub a: ProfileSummary,
    pub b: ProfileSummary,
    /// `b - a`.
    pub zero_fraction_diff: f64,
    pub normalized_entropy_diff: f64,
}

pub fn compare_profiles(a: &ActivationProfile, b: &ActivationProfile) -> Result<ProfileComparison> {
    if a.channels != b.channels || a.layer_index != b.layer_index {
        return Err(Error::Shape(format!(
            "profiles differ: {} with {} channels vs {} with {} channels",
            a.layer, a.channels, b.layer, b.channels
        )));
    }
    let (sa, sb) = (a.summary(), b.summary());
    Ok(ProfileComparison {
        zero_fraction_diff: sb.zero_fraction - sa.zero_fraction,
        normalized_entropy_diff: sb.normalized_entropy - sa.normalized_entropy,
        a: sa,
        b: sb,
    })
}
