use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{PsdMatrix, SignalWindow};
use crate::{Error, Result};

/// Per-segment trend removal before the periodogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detrend {
    #[default]
    None,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WelchParams {
    pub segment_length: usize,
    pub segment_overlap: usize,
    pub fft_length: usize,
    #[serde(default)]
    pub detrend: Detrend,
}

impl Default for WelchParams {
    fn default() -> Self {
        Self {
            segment_length: 1024,
            segment_overlap: 512,
            fft_length: 2048,
            detrend: Detrend::None,
        }
    }
}

impl WelchParams {
    pub fn bins(&self) -> usize {
        self.fft_length / 2 + 1
    }

    fn validate(&self, len: usize) -> Result<()> {
        if self.segment_length == 0 || self.segment_overlap >= self.segment_length {
            return Err(Error::contract("welch: need 0 <= segment_overlap < segment_length"));
        }
        if self.fft_length < self.segment_length {
            return Err(Error::contract("welch: fft_length must be >= segment_length"));
        }
        if len < self.segment_length {
            return Err(Error::EmptyInput(format!(
                "welch: window of {len} samples holds no full segment of {}",
                self.segment_length
            )));
        }
        Ok(())
    }
}

/// How each PSD row is scaled before it becomes a reconstruction target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsdNormalization {
    #[default]
    UnitMax,
    UnitSum,
    UnitEnergy,
}

/// Periodic Hann taper (the `sym=False` convention used for spectral analysis).
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Frequencies in Hz of the one-sided bins.
pub fn psd_frequencies(params: &WelchParams, sample_rate: f64) -> Vec<f64> {
    let df = sample_rate / params.fft_length as f64;
    (0..params.bins()).map(|k| k as f64 * df).collect()
}

/// Welch averaged-periodogram estimate, one-sided density scaling.
pub fn welch_psd(window: &SignalWindow, params: &WelchParams) -> Result<PsdMatrix> {
    params.validate(window.len)?;
    let nperseg = params.segment_length;
    let nfft = params.fft_length;
    let step = nperseg - params.segment_overlap;
    let n_segments = (window.len - nperseg) / step + 1;
    let bins = params.bins();

    let taper = hann(nperseg);
    let taper_power: f64 = taper.iter().map(|w| w * w).sum();
    let scale = 1.0 / (window.sample_rate * taper_power * n_segments as f64);

    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut values = vec![0.0; window.channels * bins];

    for c in 0..window.channels {
        let x = window.channel(c);
        let row = &mut values[c * bins..(c + 1) * bins];
        for s in 0..n_segments {
            let seg = &x[s * step..s * step + nperseg];
            let offset = match params.detrend {
                Detrend::None => 0.0,
                Detrend::Constant => seg.iter().sum::<f64>() / nperseg as f64,
            };
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < nperseg {
                    Complex::new((seg[i] - offset) * taper[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            fft.process(&mut buf);
            for (k, r) in row.iter_mut().enumerate() {
                *r += buf[k].norm_sqr();
            }
        }
        for (k, r) in row.iter_mut().enumerate() {
            let one_sided = if k == 0 || (nfft % 2 == 0 && k == bins - 1) { 1.0 } else { 2.0 };
            *r *= scale * one_sided;
        }
    }

    Ok(PsdMatrix {
        values,
        channels: window.channels,
        bins,
        freq_resolution: window.sample_rate / nfft as f64,
    })
}

/// Rescale every channel row independently according to `mode`.
pub fn normalize_psd(psd: &PsdMatrix, mode: PsdNormalization) -> Result<PsdMatrix> {
    let mut out = psd.clone();
    for c in 0..psd.channels {
        let row = out.row_mut(c);
        let denom = match mode {
            PsdNormalization::UnitMax => row.iter().cloned().fold(0.0, f64::max),
            PsdNormalization::UnitSum => row.iter().sum(),
            PsdNormalization::UnitEnergy => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::ZeroSpectrum { channel: c });
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    Ok(out)
}
