//! In-memory tensors for one split: normalized windows, normalized PSD
//! targets and per-window metadata, row-aligned.

use chrono::{DateTime, Utc};

use crate::signals::{PsdMatrix, SignalWindow};
use crate::tensor::{Matrix, Tensor3};
use crate::{Error, Result};

/// Metadata of one row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowInfo {
    pub key: String,
    pub timestamp: Option<DateTime<Utc>>,
    pub damage: i64,
    pub excitation: i64,
    pub baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowSet {
    pub channels: usize,
    pub window: usize,
    pub bins: usize,
    /// N × C × T, row-major.
    pub x: Vec<f64>,
    /// N × C × K, row-major.
    pub s: Vec<f64>,
    pub keys: Vec<String>,
    pub timestamps: Vec<Option<DateTime<Utc>>>,
    pub damage: Vec<i64>,
    pub excitation: Vec<i64>,
    pub baseline: Vec<bool>,
}

impl WindowSet {
    pub fn new(channels: usize, window: usize, bins: usize) -> Self {
        Self { channels, window, bins, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Append a normalized window and its normalized PSD.
    pub fn push(&mut self, w: &SignalWindow, psd: &PsdMatrix) -> Result<()> {
        if psd.channels != w.channels {
            return Err(Error::contract(format!("PSD of {} has {} channels", w.key(), psd.channels)));
        }
        self.push_raw(
            RowInfo {
                key: w.key(),
                timestamp: w.timestamp,
                damage: w.damage_label,
                excitation: w.excitation_label,
                baseline: w.baseline,
            },
            &w.data,
            &psd.values,
        )
    }

    /// Append one row from flat C×T and C×K slices.
    pub fn push_raw(&mut self, info: RowInfo, x: &[f64], s: &[f64]) -> Result<()> {
        if x.len() != self.channels * self.window || s.len() != self.channels * self.bins {
            return Err(Error::contract(format!(
                "row {} has {} window and {} PSD values, set expects {}x{} and {}x{}",
                info.key,
                x.len(),
                s.len(),
                self.channels,
                self.window,
                self.channels,
                self.bins
            )));
        }
        self.x.extend_from_slice(x);
        self.s.extend_from_slice(s);
        self.keys.push(info.key);
        self.timestamps.push(info.timestamp);
        self.damage.push(info.damage);
        self.excitation.push(info.excitation);
        self.baseline.push(info.baseline);
        Ok(())
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &WindowSet) -> Result<WindowSet> {
        if (self.channels, self.window, self.bins) != (other.channels, other.window, other.bins) {
            return Err(Error::contract("cannot concatenate window sets of different shapes"));
        }
        let mut out = self.clone();
        out.x.extend_from_slice(&other.x);
        out.s.extend_from_slice(&other.s);
        out.keys.extend(other.keys.iter().cloned());
        out.timestamps.extend(&other.timestamps);
        out.damage.extend(&other.damage);
        out.excitation.extend(&other.excitation);
        out.baseline.extend(&other.baseline);
        Ok(out)
    }

    fn gather(src: &[f64], stride: usize, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * stride);
        for &i in idx {
            out.extend_from_slice(&src[i * stride..(i + 1) * stride]);
        }
        out
    }

    pub fn batch_x(&self, idx: &[usize]) -> Tensor3 {
        let data = Self::gather(&self.x, self.channels * self.window, idx);
        Tensor3 { dims: [idx.len(), self.channels, self.window], data }
    }

    pub fn batch_s(&self, idx: &[usize]) -> Tensor3 {
        let data = Self::gather(&self.s, self.channels * self.bins, idx);
        Tensor3 { dims: [idx.len(), self.channels, self.bins], data }
    }

    pub fn subset(&self, idx: &[usize]) -> WindowSet {
        WindowSet {
            channels: self.channels,
            window: self.window,
            bins: self.bins,
            x: Self::gather(&self.x, self.channels * self.window, idx),
            s: Self::gather(&self.s, self.channels * self.bins, idx),
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            damage: idx.iter().map(|&i| self.damage[i]).collect(),
            excitation: idx.iter().map(|&i| self.excitation[i]).collect(),
            baseline: idx.iter().map(|&i| self.baseline[i]).collect(),
        }
    }

    pub fn baseline_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.baseline[i]).collect()
    }
}

/// Metadata of scored rows, shared by latent and feature scoring.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RowMeta {
    pub keys: Vec<String>,
    pub timestamps: Vec<Option<DateTime<Utc>>>,
    pub damage: Vec<i64>,
    pub excitation: Vec<i64>,
    pub baseline: Vec<bool>,
}

impl RowMeta {
    pub fn of(set: &WindowSet) -> Self {
        Self {
            keys: set.keys.clone(),
            timestamps: set.timestamps.clone(),
            damage: set.damage.clone(),
            excitation: set.excitation.clone(),
            baseline: set.baseline.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn concat(parts: &[&RowMeta]) -> Self {
        let mut out = RowMeta::default();
        for p in parts {
            out.keys.extend(p.keys.iter().cloned());
            out.timestamps.extend(&p.timestamps);
            out.damage.extend(&p.damage);
            out.excitation.extend(&p.excitation);
            out.baseline.extend(&p.baseline);
        }
        out
    }
}

/// Stack matrices with equal column counts.
pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
    let cols = parts.first().map_or(0, |m| m.cols);
    if parts.iter().any(|m| m.cols != cols) {
        return Err(Error::contract("cannot stack matrices with different widths"));
    }
    let data = parts.iter().flat_map(|m| m.data.iter().copied()).collect::<Vec<_>>();
    Matrix::from_vec(data.len() / cols.max(1), cols, data)
}
