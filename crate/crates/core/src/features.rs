//! Handcrafted per-channel statistics used by the feature baseline (Model V4).
//!
//! Nine values per channel, in order: mean, standard deviation, skewness,
//! raw kurtosis, maximum, normalized peak bin, normalized spectral entropy,
//! normalized spectral centroid and band power.

use serde::{Deserialize, Serialize};

use crate::damageid::{score_embeddings, DamageIdParams, ScoreResult};
use crate::dataset::RowMeta;
use crate::signals::{PsdMatrix, SignalWindow};
use crate::tensor::Matrix;
use crate::{Error, Result};

pub const FEATURES_PER_CHANNEL: usize = 9;

pub const FEATURE_NAMES: [&str; FEATURES_PER_CHANNEL] = [
    "mean",
    "std",
    "skewness",
    "kurtosis",
    "max",
    "peak_index",
    "spectral_entropy",
    "spectral_centroid",
    "band_power",
];

/// Frequency band for the band-power feature. `None` edges mean the full band.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureParams {
    pub band_low_hz: Option<f64>,
    pub band_high_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn names(channels: usize) -> Vec<String> {
        (0..channels)
            .flat_map(|c| FEATURE_NAMES.iter().map(move |n| format!("ch{c}_{n}")))
            .collect()
    }
}

/// Population moments. Skewness and kurtosis of a constant channel are
/// undefined and reported as 0.
fn moments(x: &[f64]) -> [f64; 5] {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let std = m2.sqrt();
    let (skew, kurt) = if m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2)) } else { (0.0, 0.0) };
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [mean, std, skew, kurt, max]
}

fn spectral(row: &[f64], df: f64, params: &FeatureParams, channel: usize) -> Result<[f64; 4]> {
    let k = row.len();
    let total: f64 = row.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateFeature { channel });
    }
    let last = (k - 1).max(1) as f64;
    let mut peak = 0;
    let (mut entropy, mut centroid) = (0.0, 0.0);
    for (i, &v) in row.iter().enumerate() {
        if v > row[peak] {
            peak = i;
        }
        let p = v / total;
        if p > 0.0 {
            entropy -= p * p.ln();
        }
        centroid += i as f64 * p;
    }
    let entropy = if k > 1 { entropy / (k as f64).ln() } else { 0.0 };
    let lo = params.band_low_hz.unwrap_or(f64::NEG_INFINITY);
    let hi = params.band_high_hz.unwrap_or(f64::INFINITY);
    let band: f64 = row
        .iter()
        .enumerate()
        .filter(|(i, _)| (lo..=hi).contains(&(*i as f64 * df)))
        .map(|(_, v)| v)
        .sum::<f64>()
        * df;
    Ok([peak as f64 / last, entropy, centroid / last, band])
}

/// Feature vector of length 9·C from a window and its unnormalized PSD.
pub fn extract(window: &SignalWindow, psd: &PsdMatrix, params: &FeatureParams) -> Result<FeatureVector> {
    if psd.channels != window.channels {
        return Err(Error::contract(format!(
            "window has {} channels, PSD has {}",
            window.channels, psd.channels
        )));
    }
    if window.len == 0 || psd.bins == 0 {
        return Err(Error::EmptyInput("feature extraction on an empty window".into()));
    }
    let mut values = Vec::with_capacity(FEATURES_PER_CHANNEL * window.channels);
    for c in 0..window.channels {
        values.extend(moments(window.channel(c)));
        values.extend(spectral(psd.row(c), psd.freq_resolution, params, c)?);
    }
    Ok(FeatureVector { values })
}

/// Score feature vectors with the same baseline, threshold and evaluation
/// protocol as the learned latents.
pub fn v4_pipeline(
    train: &Matrix,
    train_meta: &RowMeta,
    eval: &Matrix,
    eval_meta: &RowMeta,
    params: &DamageIdParams,
) -> Result<ScoreResult> {
    score_embeddings("features", train, train_meta, eval, eval_meta, params)
}
