mod common;

use common::*;
use proptest::prelude::*;
use shmrep::damageid::{classify, evaluate, fit_baseline, mahalanobis, threshold, ConfusionMatrix, LabelSet};
use shmrep::losses::{loss_psd, loss_time, vicreg, LossWeights};
use shmrep::signals::{welch_psd, SignalWindow, WelchParams};
use shmrep::tensor::{Matrix, Tensor3};

fn window(data: Vec<f64>, channels: usize, fs: f64) -> SignalWindow {
    let len = data.len() / channels;
    SignalWindow {
        data,
        channels,
        len,
        record: "r".into(),
        window_index: 0,
        sample_rate: fs,
        timestamp: None,
        damage_label: 1,
        excitation_label: 1,
        baseline: true,
    }
}

fn nested(t: &Tensor3) -> Vec<Vec<Vec<f64>>> {
    let [b, c, l] = t.dims;
    (0..b).map(|i| (0..c).map(|j| t.data[(i * c + j) * l..(i * c + j + 1) * l].to_vec()).collect()).collect()
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

#[test]
fn welch_matches_direct_dft() {
    let mut r = rng(1);
    for (channels, t, params) in [
        (3, 2048, WelchParams::default()),
        (2, 700, WelchParams { segment_length: 128, segment_overlap: 64, fft_length: 200, ..Default::default() }),
        (1, 512, WelchParams { segment_length: 100, segment_overlap: 30, fft_length: 101, ..Default::default() }),
    ] {
        let w = window(normal_vec(&mut r, channels * t), channels, 200.0);
        let psd = welch_psd(&w, &params).unwrap();
        for c in 0..channels {
            let want = welch_oracle(w.channel(c), 200.0, params.segment_length, params.segment_overlap, params.fft_length);
            let err = max_rel_err(psd.row(c), &want);
            assert!(err <= 1e-10, "channel {c}: relative error {err:e}");
        }
    }
}

#[test]
fn welch_parseval_for_single_segment() {
    // one segment, nfft = nperseg: the one-sided density integrates to Σ(x·w)² / Σw²
    let mut r = rng(2);
    let n = 256;
    let x = normal_vec(&mut r, n);
    let p = WelchParams { segment_length: n, segment_overlap: 0, fft_length: n, ..Default::default() };
    let psd = welch_psd(&window(x.clone(), 1, 50.0), &p).unwrap();
    let w: Vec<f64> = (0..n).map(|i| (std::f64::consts::PI * i as f64 / n as f64).sin().powi(2)).collect();
    let u: f64 = w.iter().map(|v| v * v).sum();
    let tapered: f64 = x.iter().zip(&w).map(|(a, b)| (a * b).powi(2)).sum();
    let integral: f64 = psd.row(0).iter().sum::<f64>() * 50.0 / n as f64;
    assert!(rel_err(integral, tapered / u) < 1e-12);
}

#[test]
fn welch_sine_peaks_at_expected_bin() {
    let fs = 200.0;
    let x: Vec<f64> = (0..2048).map(|i| (2.0 * std::f64::consts::PI * 62.5 * i as f64 / fs).sin()).collect();
    let psd = welch_psd(&window(x, 1, fs), &WelchParams::default()).unwrap();
    let (k, _) = psd.row(0).iter().enumerate().fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    assert_eq!(psd.bins, 1025);
    assert_eq!(k, 640);
    assert!((psd.freq_resolution - 0.09765625).abs() < 1e-15);
}

#[test]
fn mahalanobis_matches_linear_solve() {
    let mut r = rng(3);
    for (n, h) in [(50, 3), (200, 8), (40, 16)] {
        let data = normal_vec(&mut r, n * h);
        // correlate the columns
        let mut m = Matrix::from_vec(n, h, data).unwrap();
        for i in 0..n {
            for j in 1..h {
                let prev = m.row(i)[j - 1];
                m.row_mut(i)[j] += 0.7 * prev;
            }
        }
        let stats = fit_baseline(&m, None).unwrap();
        let rows = rows_of(&m);
        for _ in 0..10 {
            let z = normal_vec(&mut r, h);
            let want = mahalanobis_oracle(&rows, &z, stats.reg);
            let got = mahalanobis(&z, &stats);
            assert!(rel_err(got, want) <= 1e-8, "{got} vs {want}");
        }
    }
}

#[test]
fn threshold_matches_sort_and_interpolate() {
    let mut r = rng(4);
    for n in [1, 2, 7, 100, 1001] {
        let v = normal_vec(&mut r, n);
        for p in [0.0, 5.0, 50.0, 95.0, 99.9, 100.0] {
            assert_eq!(threshold(&v, p).unwrap(), percentile_oracle(&v, p));
        }
    }
}

#[test]
fn evaluate_matches_counting() {
    let mut r = rng(5);
    let labels: Vec<i64> = (0..500).map(|_| rand::Rng::random_range(&mut r, 1..=4)).collect();
    let scores = normal_vec(&mut r, 500);
    let pred = classify(&scores, 0.3);
    let ls = LabelSet { healthy: vec![1], damaged: vec![] };
    let e = evaluate(&pred, &labels, &ls, None).unwrap();
    let (tn, fp, fn_, tp) = count_oracle(&pred, &labels, &[1]);
    assert_eq!((e.overall.tn, e.overall.fp, e.overall.fn_, e.overall.tp), (tn, fp, fn_, tp));
    let (tnr, tpr, bal) = rates(tn, fp, fn_, tp);
    assert_eq!((e.overall.tnr, e.overall.tpr, e.overall.balanced_accuracy), (tnr, tpr, bal));
}

#[test]
fn paper_confusion_anchors() {
    for ((tn, fp, fn_, tp), (tnr, tpr, bal)) in [
        ((344, 85, 629, 302), (0.801, 0.324, 0.563)),
        ((197, 23, 374, 1134), (0.896, 0.752, 0.824)),
    ] {
        let cm = ConfusionMatrix::from_counts(tn, fp, fn_, tp);
        assert!((cm.tnr - tnr).abs() <= 1e-3);
        assert!((cm.tpr - tpr).abs() <= 1e-3);
        assert!((cm.balanced_accuracy - bal).abs() <= 1e-3);
    }
}

#[test]
fn losses_match_double_sums() {
    let mut r = rng(6);
    let dims = [5, 3, 40];
    let n = dims.iter().product();
    let a = Tensor3::from_vec(dims, normal_vec(&mut r, n)).unwrap();
    let b = Tensor3::from_vec(dims, normal_vec(&mut r, n)).unwrap();
    let want = mse_oracle(&nested(&a), &nested(&b));
    assert!(rel_err(loss_time(&a, &b).unwrap(), want) <= 1e-9);
    assert!(rel_err(loss_psd(&a, &b).unwrap(), want) <= 1e-9);

    for (n, h, scale) in [(6, 4, 1.0), (32, 8, 0.3), (3, 2, 2.0)] {
        let z1 = Matrix::from_vec(n, h, normal_vec(&mut r, n * h).iter().map(|v| v * scale).collect()).unwrap();
        let z2 = Matrix::from_vec(n, h, normal_vec(&mut r, n * h).iter().map(|v| v * scale).collect()).unwrap();
        let w = LossWeights::default();
        let t = vicreg(&z1, &z2, &w).unwrap();
        let (inv, var, cov) = vicreg_oracle(&rows_of(&z1), &rows_of(&z2));
        assert!(rel_err(t.l_inv, inv) <= 1e-9);
        assert!((t.l_var - var).abs() <= 1e-9 * var.max(1.0));
        assert!(rel_err(t.l_cov, cov) <= 1e-9);
        let l3 = 25.0 * inv + 25.0 * var + cov;
        assert!(rel_err(t.l3, l3) <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mahalanobis_is_nonnegative_and_zero_at_mean(
        seed in 0u64..10_000,
        n in 3usize..40,
        h in 1usize..6,
    ) {
        let mut r = rng(seed);
        let m = Matrix::from_vec(n, h, normal_vec(&mut r, n * h)).unwrap();
        let stats = fit_baseline(&m, None).unwrap();
        prop_assert!(mahalanobis(&stats.mu, &stats) == 0.0);
        for row in m.iter_rows() {
            prop_assert!(mahalanobis(row, &stats) >= 0.0);
        }
    }

    #[test]
    fn threshold_exceedance_is_bounded(seed in 0u64..10_000, n in 1usize..300, p in 0.0f64..100.0) {
        let mut r = rng(seed);
        let v = normal_vec(&mut r, n);
        let tau = threshold(&v, p).unwrap();
        let above = v.iter().filter(|&&x| x > tau).count() as f64 / n as f64;
        prop_assert!(above <= 1.0 - p / 100.0 + 1.0 / n as f64 + 1e-12);
    }

    #[test]
    fn rates_lie_in_unit_interval(tn in 0usize..50, fp in 0usize..50, fn_ in 0usize..50, tp in 0usize..50) {
        let cm = ConfusionMatrix::from_counts(tn, fp, fn_, tp);
        for v in [cm.tnr, cm.tpr, cm.balanced_accuracy] {
            prop_assert!(v.is_nan() || (0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(cm.total(), tn + fp + fn_ + tp);
    }

    #[test]
    fn vicreg_is_nonnegative_and_symmetric(seed in 0u64..10_000, n in 2usize..20, h in 1usize..6) {
        let mut r = rng(seed);
        let z1 = Matrix::from_vec(n, h, normal_vec(&mut r, n * h)).unwrap();
        let z2 = Matrix::from_vec(n, h, normal_vec(&mut r, n * h)).unwrap();
        let w = LossWeights::default();
        let a = vicreg(&z1, &z2, &w).unwrap();
        let b = vicreg(&z2, &z1, &w).unwrap();
        prop_assert!(a.l_inv >= 0.0 && a.l_var >= 0.0 && a.l_cov >= 0.0);
        prop_assert!((a.l3 - b.l3).abs() <= 1e-12 * a.l3.max(1.0));
    }
}
