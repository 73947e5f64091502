use chrono::Duration;

use super::{SignalRecord, SignalWindow};
use crate::{Error, Result};

pub const DEFAULT_STD_EPS: f64 = 1e-12;

/// Cut a record into windows of `window_length` samples advancing by
/// `window_length - overlap`. A trailing partial window is discarded.
pub fn segment(record: &SignalRecord, window_length: usize, overlap: usize) -> Result<Vec<SignalWindow>> {
    record.validate()?;
    if window_length == 0 || overlap >= window_length {
        return Err(Error::contract(format!(
            "need 0 <= overlap < window_length, got overlap {overlap}, window {window_length}"
        )));
    }
    let len = record.len();
    if len < window_length {
        return Err(Error::EmptyInput(format!(
            "record {} has {} samples, shorter than one window of {}",
            record.name, len, window_length
        )));
    }
    let stride = window_length - overlap;
    let count = (len - window_length) / stride + 1;
    let channels = record.channels();

    let windows = (0..count)
        .map(|i| {
            let offset = i * stride;
            let mut data = Vec::with_capacity(channels * window_length);
            for ch in &record.samples {
                data.extend_from_slice(&ch[offset..offset + window_length]);
            }
            let timestamp = record.start_time.map(|t| {
                let micros = (offset as f64 / record.sample_rate * 1e6).round() as i64;
                t + Duration::microseconds(micros)
            });
            SignalWindow {
                data,
                channels,
                len: window_length,
                record: record.name.clone(),
                window_index: i,
                sample_rate: record.sample_rate,
                timestamp,
                damage_label: record.damage_label,
                excitation_label: record.excitation_label,
                baseline: false,
            }
        })
        .collect();
    Ok(windows)
}

/// Normalize a window with a single mean and (population) standard
/// deviation pooled over every channel and sample.
pub fn zscore_pooled(window: &SignalWindow, eps: f64) -> Result<SignalWindow> {
    let n = window.data.len() as f64;
    if window.data.is_empty() {
        return Err(Error::EmptyInput("empty window".into()));
    }
    let mean = window.data.iter().sum::<f64>() / n;
    let var = window.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > eps) {
        log::warn!("rejecting degenerate window {} (pooled std {std:e})", window.key());
        return Err(Error::DegenerateWindow {
            index: window.window_index,
            std,
            eps,
        });
    }
    let mut out = window.clone();
    for v in &mut out.data {
        *v = (*v - mean) / std;
    }
    Ok(out)
}
