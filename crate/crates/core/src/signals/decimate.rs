use std::f64::consts::PI;

use super::SignalRecord;
use crate::{Error, Result};

/// Integer-factor decimation with a zero-phase Hamming-windowed sinc
/// low-pass (cutoff at 90% of the new Nyquist). Edges are extended by
/// repeating the boundary sample.
pub fn decimate(record: &SignalRecord, factor: usize) -> Result<SignalRecord> {
    record.validate()?;
    if factor == 0 {
        return Err(Error::contract("decimation factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(record.clone());
    }
    let half = 10 * factor;
    let cutoff = 0.9 * 0.5 / factor as f64;
    let mut taps: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let n = i as f64 - half as f64;
            let sinc = if n == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * n).sin() / (PI * n)
            };
            let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (2 * half) as f64).cos();
            sinc * w
        })
        .collect();
    let gain: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= gain);

    let len = record.len();
    let samples = record
        .samples
        .iter()
        .map(|x| {
            (0..len)
                .step_by(factor)
                .map(|center| {
                    taps.iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let j = (center as isize + i as isize - half as isize).clamp(0, len as isize - 1);
                            t * x[j as usize]
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(SignalRecord {
        samples,
        sample_rate: record.sample_rate / factor as f64,
        ..record.clone()
    })
}
