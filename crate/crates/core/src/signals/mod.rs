//! Signal ingestion and preprocessing: windowing, pooled z-score
//! normalization, Welch PSD estimation and the dataset manifest.

mod decimate;
mod manifest;
mod records;
mod segment;
mod store;
mod welch;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use decimate::decimate;
pub use manifest::{build_manifest, BaselineRule, DatasetManifest, ManifestEntry, Split, SplitRatio};
pub use records::{load_record, load_records, write_record, RecordFormat, RecordMeta};
pub use segment::{segment, zscore_pooled, DEFAULT_STD_EPS};
pub use store::{atomic_write as write_bytes_atomic, read_array, write_array, ArrayStore, StoredArray};
pub use welch::{normalize_psd, psd_frequencies, welch_psd, Detrend, PsdNormalization, WelchParams};

/// A continuous multichannel acceleration record.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub name: String,
    /// One row per channel, all of equal length.
    pub samples: Vec<Vec<f64>>,
    pub sample_rate: f64,
    pub start_time: Option<DateTime<Utc>>,
    pub damage_label: i64,
    pub excitation_label: i64,
}

impl SignalRecord {
    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.samples.is_empty() {
            return Err(crate::Error::EmptyInput(format!("record {} has no channels", self.name)));
        }
        let len = self.len();
        if self.samples.iter().any(|c| c.len() != len) {
            return Err(crate::Error::contract(format!(
                "record {} has ragged channels",
                self.name
            )));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(crate::Error::contract(format!(
                "record {} has sample rate {}",
                self.name, self.sample_rate
            )));
        }
        if self.samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(crate::Error::contract(format!(
                "record {} contains non-finite samples",
                self.name
            )));
        }
        Ok(())
    }
}

/// One C×T segment cut from a record, stored channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalWindow {
    pub data: Vec<f64>,
    pub channels: usize,
    pub len: usize,
    pub record: String,
    /// Position of the window within its record.
    pub window_index: usize,
    pub sample_rate: f64,
    pub timestamp: Option<DateTime<Utc>>,
    pub damage_label: i64,
    pub excitation_label: i64,
    pub baseline: bool,
}

impl SignalWindow {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    /// Storage key used by the manifest and the array cache.
    pub fn key(&self) -> String {
        format!("{}-w{:05}", self.record, self.window_index)
    }
}

/// Per-channel power spectral density, channel-major C×K.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    pub values: Vec<f64>,
    pub channels: usize,
    pub bins: usize,
    pub freq_resolution: f64,
}

impl PsdMatrix {
    pub fn row(&self, c: usize) -> &[f64] {
        &self.values[c * self.bins..(c + 1) * self.bins]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.values[c * self.bins..(c + 1) * self.bins]
    }
}
