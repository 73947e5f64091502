//! Independent reference implementations shared by the oracle and
//! acceptance tests. Everything here is written the slow, obvious way.

#![allow(dead_code)]

use std::f64::consts::PI;

pub mod grad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shmrep::config::SignalsConfig;
use shmrep::features::FeatureParams;
use shmrep::model::{ConvStage, ModelConfig};
use shmrep::pipeline::{prepare_records, SplitSets};
use shmrep::signals::WelchParams;
use shmrep::tensor::Matrix;
use shmrep::synthdata::{default_scenario, default_structure, simulate, ScenarioSpec, StructureSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Largest elementwise error relative to the largest reference magnitude.
pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

/// One-sided Welch density from a direct DFT of each periodic-Hann segment.
pub fn welch_oracle(x: &[f64], fs: f64, nperseg: usize, noverlap: usize, nfft: usize) -> Vec<f64> {
    let step = nperseg - noverlap;
    let nseg = (x.len() - nperseg) / step + 1;
    let w: Vec<f64> = (0..nperseg).map(|i| (PI * i as f64 / nperseg as f64).sin().powi(2)).collect();
    let u: f64 = w.iter().map(|v| v * v).sum();
    let bins = nfft / 2 + 1;
    let mut out = vec![0.0; bins];
    for s in 0..nseg {
        let seg = &x[s * step..s * step + nperseg];
        for (k, o) in out.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, (&v, &wn)) in seg.iter().zip(&w).enumerate() {
                let ang = -2.0 * PI * ((k * n) % nfft) as f64 / nfft as f64;
                re += v * wn * ang.cos();
                im += v * wn * ang.sin();
            }
            *o += re * re + im * im;
        }
    }
    for (k, o) in out.iter_mut().enumerate() {
        let edge = k == 0 || (nfft % 2 == 0 && k == bins - 1);
        *o *= if edge { 1.0 } else { 2.0 } / (fs * u * nseg as f64);
    }
    out
}

/// Solve A x = b by Gaussian elimination with partial pivoting.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &v)| {
        let mut r = r.clone();
        r.push(v);
        r
    }).collect();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, p);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

/// Baseline mean and unbiased covariance by explicit loops.
pub fn mean_cov(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, h) = (rows.len(), rows[0].len());
    let mu: Vec<f64> = (0..h).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; h]; h];
    for (i, ci) in cov.iter_mut().enumerate() {
        for (j, c) in ci.iter_mut().enumerate() {
            *c = rows.iter().map(|r| (r[i] - mu[i]) * (r[j] - mu[j])).sum::<f64>() / (n - 1) as f64;
        }
    }
    (mu, cov)
}

/// (z − μ)ᵀ (Σ + reg I)⁻¹ (z − μ) through a linear solve.
pub fn mahalanobis_oracle(rows: &[Vec<f64>], z: &[f64], reg: f64) -> f64 {
    let (mu, mut cov) = mean_cov(rows);
    for (i, r) in cov.iter_mut().enumerate() {
        r[i] += reg;
    }
    let d: Vec<f64> = z.iter().zip(&mu).map(|(a, b)| a - b).collect();
    let y = solve(&cov, &d);
    d.iter().zip(&y).map(|(a, b)| a * b).sum()
}

pub fn percentile_oracle(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// (TN, FP, FN, TP) by counting.
pub fn count_oracle(pred: &[u8], labels: &[i64], healthy: &[i64]) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&p, l) in pred.iter().zip(labels) {
        match (healthy.contains(l), p == 1) {
            (true, false) => c.0 += 1,
            (true, true) => c.1 += 1,
            (false, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}

/// Batch mean of per-sample mean squared errors over `[b][c][t]` nested vectors.
pub fn mse_oracle(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    for (sa, sb) in a.iter().zip(b) {
        let mut s = 0.0;
        let mut n = 0;
        for (ca, cb) in sa.iter().zip(sb) {
            for (x, y) in ca.iter().zip(cb) {
                s += (x - y) * (x - y);
                n += 1;
            }
        }
        total += s / n as f64;
    }
    total / a.len() as f64
}

fn var_hinge(z: &[Vec<f64>]) -> f64 {
    let (n, h) = (z.len(), z[0].len());
    let mut s = 0.0;
    for j in 0..h {
        let m = z.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let v = z.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        s += (1.0 - (v + 1e-4).sqrt()).max(0.0);
    }
    s / h as f64
}

fn cov_offdiag(z: &[Vec<f64>]) -> f64 {
    let (_, cov) = mean_cov(z);
    let h = cov.len();
    let mut s = 0.0;
    for (i, r) in cov.iter().enumerate() {
        for (j, c) in r.iter().enumerate() {
            if i != j {
                s += c * c;
            }
        }
    }
    s / h as f64
}

/// (l_inv, l_var, l_cov) with both branches contributing to l_var and l_cov.
pub fn vicreg_oracle(z1: &[Vec<f64>], z2: &[Vec<f64>]) -> (f64, f64, f64) {
    let (n, h) = (z1.len(), z1[0].len());
    let mut inv = 0.0;
    for (a, b) in z1.iter().zip(z2) {
        for (x, y) in a.iter().zip(b) {
            inv += (x - y) * (x - y);
        }
    }
    (inv / (n * h) as f64, var_hinge(z1) + var_hinge(z2), cov_offdiag(z1) + cov_offdiag(z2))
}

/// Confusion rates from raw counts.
pub fn rates(tn: usize, fp: usize, fn_: usize, tp: usize) -> (f64, f64, f64) {
    let tnr = tn as f64 / (tn + fp) as f64;
    let tpr = tp as f64 / (tp + fn_) as f64;
    (tnr, tpr, 0.5 * (tnr + tpr))
}

/// A few seconds of the default scenario, cut into 64-sample windows.
pub fn tiny_scenario() -> (StructureSpec, ScenarioSpec) {
    let mut sc = default_scenario();
    sc.sample_rate = 50.0;
    sc.duration_per_state = 40.0;
    sc.record_seconds = 20.0;
    sc.burn_in_seconds = 2.0;
    for (r, bw) in sc.excitation_regimes.iter_mut().zip([5.0, 10.0, 20.0]) {
        r.bandwidth_hz = bw;
    }
    (default_structure(), sc)
}

pub fn tiny_signals() -> SignalsConfig {
    SignalsConfig {
        window_length: 64,
        overlap: 32,
        welch: WelchParams { segment_length: 32, segment_overlap: 16, fft_length: 64, ..Default::default() },
        ..Default::default()
    }
}

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        channels: 4,
        window: 64,
        latent_dim: 4,
        stages: vec![ConvStage { channels: 4, kernel: 5, stride: 2 }, ConvStage { channels: 6, kernel: 5, stride: 2 }],
        psd_hidden: 8,
        psd_layers: 2,
        psd_bins: 33,
        ..Default::default()
    }
}

pub fn tiny_sets() -> SplitSets {
    let (st, sc) = tiny_scenario();
    let records = simulate(&st, &sc).unwrap();
    prepare_records(&records, &tiny_signals(), &FeatureParams::default()).unwrap().split_sets().unwrap()
}

/// Runs `steps` AdamW updates of L3 alone on two branches that start as
/// noisy copies of fixed vectors; returns (l_inv at start, l_inv at end, l_var at end).
pub fn vicreg_on_noisy_copies(steps: usize) -> (f64, f64, f64) {
    use shmrep::losses::{vicreg_grad, LossWeights};
    use shmrep::training::{AdamW, TrainConfig};

    let (n, h) = (64, 8);
    let mut r = rng(17);
    let fixed: Vec<f64> = normal_vec(&mut r, n * h).iter().map(|v| 2.0 * v).collect();
    let mut z: Vec<f64> = (0..2)
        .flat_map(|_| fixed.iter().map(|v| v + 0.5 * r.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>())
        .collect();
    let w = LossWeights::default();
    let cfg = TrainConfig { learning_rate: 1e-2, weight_decay: 0.0, ..Default::default() };
    let mut opt = AdamW::new(z.len());
    let mut first = None;
    let mut last = (0.0, 0.0);
    for _ in 0..=steps {
        let z1 = Matrix::from_vec(n, h, z[..n * h].to_vec()).unwrap();
        let z2 = Matrix::from_vec(n, h, z[n * h..].to_vec()).unwrap();
        let (t, g1, g2) = vicreg_grad(&z1, &z2, &w).unwrap();
        first.get_or_insert(t.l_inv);
        last = (t.l_inv, t.l_var);
        let grad: Vec<f64> = g1.data.into_iter().chain(g2.data).collect();
        opt.step(&mut z, &grad, &cfg);
    }
    (first.unwrap(), last.0, last.1)
}
