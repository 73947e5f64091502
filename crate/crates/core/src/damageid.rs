//! Baseline statistics, Mahalanobis damage scores, percentile thresholding
//! and detection metrics.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{vstack, RowMeta, WindowSet};
use crate::model::DualLatentAutoencoder;
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Relative covariance regularization: reg = REG_SCALE · trace(Σ) / H.
pub const REG_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineStatistics {
    pub mu: Vec<f64>,
    /// H×H, row-major.
    pub sigma: Vec<f64>,
    /// Inverse of Σ + reg·I, row-major.
    pub sigma_inv: Vec<f64>,
    pub n_baseline: usize,
    pub reg: f64,
}

impl BaselineStatistics {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Mean, unbiased covariance and regularized inverse of the baseline rows.
/// `reg = None` selects the trace-scaled default.
pub fn fit_baseline(rows: &Matrix, reg: Option<f64>) -> Result<BaselineStatistics> {
    let (n, h) = (rows.rows, rows.cols);
    if n < 2 {
        return Err(Error::InsufficientBaseline(n));
    }
    if rows.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("non-finite value in baseline rows"));
    }
    let mut mu = vec![0.0; h];
    for r in rows.iter_rows() {
        mu.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);

    let mut centered = rows.data.clone();
    for r in centered.chunks_exact_mut(h) {
        r.iter_mut().zip(&mu).for_each(|(v, m)| *v -= m);
    }
    let mut sigma = vec![0.0; h * h];
    crate::tensor::gemm(h, n, h, 1.0 / (n - 1) as f64, &centered, true, &centered, false, 0.0, &mut sigma);
    // exact symmetry regardless of summation order
    for i in 0..h {
        for j in 0..i {
            let v = 0.5 * (sigma[i * h + j] + sigma[j * h + i]);
            sigma[i * h + j] = v;
            sigma[j * h + i] = v;
        }
    }

    let trace: f64 = (0..h).map(|i| sigma[i * h + i]).sum();
    let mut reg = reg.unwrap_or(REG_SCALE * trace / h as f64);
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(Error::Config(format!("covariance regularization {reg} must be non-negative")));
    }
    if reg == 0.0 && trace == 0.0 {
        // an identical-rows cloud has nothing to scale by
        reg = REG_SCALE;
    }
    let mut a = DMatrix::from_row_slice(h, h, &sigma);
    for i in 0..h {
        a[(i, i)] += reg;
    }
    let inv = match a.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => a
            .try_inverse()
            .ok_or_else(|| Error::contract("baseline covariance is singular; increase the regularization"))?,
    };
    let mut sigma_inv = vec![0.0; h * h];
    for i in 0..h {
        for j in 0..h {
            sigma_inv[i * h + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
        }
    }
    Ok(BaselineStatistics { mu, sigma, sigma_inv, n_baseline: n, reg })
}

/// Squared Mahalanobis distance (z − μ)ᵀ Σ⁻¹ (z − μ).
pub fn mahalanobis(z: &[f64], stats: &BaselineStatistics) -> f64 {
    let h = stats.dim();
    let d: Vec<f64> = z.iter().zip(&stats.mu).map(|(a, b)| a - b).collect();
    let mut m = 0.0;
    for i in 0..h {
        let row = &stats.sigma_inv[i * h..(i + 1) * h];
        m += d[i] * row.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
    }
    m.max(0.0)
}

pub fn score_rows(rows: &Matrix, stats: &BaselineStatistics) -> Result<Vec<f64>> {
    if rows.cols != stats.dim() {
        return Err(Error::contract(format!(
            "rows have {} columns, baseline has dimension {}",
            rows.cols,
            stats.dim()
        )));
    }
    Ok((0..rows.rows).into_par_iter().map(|i| mahalanobis(rows.row(i), stats)).collect())
}

/// Linear-interpolation percentile, `p` in [0, 100].
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyBaseline);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Config(format!("percentile {p} outside [0, 100]")));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(s[lo] + (pos - lo as f64) * (s[hi] - s[lo]))
}

/// Threshold τ from baseline scores.
pub fn threshold(baseline_scores: &[f64], p: f64) -> Result<f64> {
    percentile(baseline_scores, p)
}

pub fn median(values: &[f64]) -> Result<f64> {
    percentile(values, 50.0)
}

/// 1 = damaged. Ties at τ are healthy.
pub fn classify(scores: &[f64], tau: f64) -> Vec<u8> {
    scores.iter().map(|&m| u8::from(m > tau)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tp: usize,
    pub tnr: f64,
    pub tpr: f64,
    pub balanced_accuracy: f64,
}

impl ConfusionMatrix {
    /// Rates of an empty class are NaN.
    pub fn from_counts(tn: usize, fp: usize, fn_: usize, tp: usize) -> Self {
        let rate = |a: usize, b: usize| if a + b == 0 { f64::NAN } else { a as f64 / (a + b) as f64 };
        let tnr = rate(tn, fp);
        let tpr = rate(tp, fn_);
        Self { tn, fp, fn_, tp, tnr, tpr, balanced_accuracy: 0.5 * (tnr + tpr) }
    }

    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }
}

/// Which damage labels are healthy. When `damaged` is non-empty, labels in
/// neither list are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSet {
    pub healthy: Vec<i64>,
    #[serde(default)]
    pub damaged: Vec<i64>,
}

impl LabelSet {
    pub fn is_damaged(&self, label: i64) -> Result<bool> {
        if self.healthy.contains(&label) {
            Ok(false)
        } else if self.damaged.is_empty() || self.damaged.contains(&label) {
            Ok(true)
        } else {
            Err(Error::UnknownLabel(label))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub overall: ConfusionMatrix,
    pub per_group: BTreeMap<i64, ConfusionMatrix>,
}

pub fn evaluate(predictions: &[u8], labels: &[i64], label_set: &LabelSet, groups: Option<&[i64]>) -> Result<Evaluation> {
    if predictions.len() != labels.len() || groups.is_some_and(|g| g.len() != labels.len()) {
        return Err(Error::contract("predictions, labels and groups must have equal lengths"));
    }
    let mut overall = [0usize; 4];
    let mut per: BTreeMap<i64, [usize; 4]> = BTreeMap::new();
    for (i, (&yhat, &label)) in predictions.iter().zip(labels).enumerate() {
        let slot = 2 * usize::from(label_set.is_damaged(label)?) + usize::from(yhat != 0);
        overall[slot] += 1;
        if let Some(g) = groups {
            per.entry(g[i]).or_default()[slot] += 1;
        }
    }
    let cm = |c: [usize; 4]| ConfusionMatrix::from_counts(c[0], c[1], c[2], c[3]);
    Ok(Evaluation {
        overall: cm(overall),
        per_group: per.into_iter().map(|(k, c)| (k, cm(c))).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// τ from training-baseline scores; only the evaluated split is classified.
    #[default]
    TrainingBaseline,
    /// τ from the baseline-flagged windows of the evaluated set, which then
    /// also contains the training baseline windows.
    EvaluatedBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DamageIdParams {
    pub percentile: f64,
    /// `None` selects the trace-scaled default.
    pub reg: Option<f64>,
    pub threshold_mode: ThresholdMode,
    pub labels: LabelSet,
}

impl Default for DamageIdParams {
    fn default() -> Self {
        Self {
            percentile: 95.0,
            reg: None,
            threshold_mode: ThresholdMode::TrainingBaseline,
            labels: LabelSet { healthy: vec![1], damaged: vec![] },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DamageScoreSet {
    pub meta: RowMeta,
    pub scores: Vec<f64>,
    pub predictions: Vec<u8>,
    pub tau: f64,
    pub percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub representation: String,
    pub percentile: f64,
    pub tau: f64,
    pub reg: f64,
    pub threshold_mode: ThresholdMode,
    pub n_baseline: usize,
    pub n_evaluated: usize,
    pub baseline_median: f64,
    /// Fraction of training-baseline scores above τ.
    pub baseline_exceed_fraction: f64,
    pub overall: ConfusionMatrix,
    pub per_excitation: BTreeMap<String, ConfusionMatrix>,
}

pub struct ScoreResult {
    pub scores: DamageScoreSet,
    pub report: EvaluationReport,
    pub stats: BaselineStatistics,
    /// Training-baseline scores, in training-set order.
    pub baseline_scores: Vec<f64>,
}

/// Fit on the training baseline, threshold, classify and evaluate.
pub fn score_embeddings(
    representation: &str,
    train: &Matrix,
    train_meta: &RowMeta,
    eval: &Matrix,
    eval_meta: &RowMeta,
    params: &DamageIdParams,
) -> Result<ScoreResult> {
    if train.rows != train_meta.len() || eval.rows != eval_meta.len() {
        return Err(Error::contract("embedding rows and metadata differ in length"));
    }
    let base_idx: Vec<usize> = (0..train.rows).filter(|&i| train_meta.baseline[i]).collect();
    if base_idx.is_empty() {
        return Err(Error::EmptyBaseline);
    }
    let base = train.select_rows(&base_idx);
    let stats = fit_baseline(&base, params.reg)?;
    let baseline_scores = score_rows(&base, &stats)?;

    let (rows, meta) = match params.threshold_mode {
        ThresholdMode::TrainingBaseline => (eval.clone(), eval_meta.clone()),
        ThresholdMode::EvaluatedBaseline => {
            let base_meta = RowMeta {
                keys: base_idx.iter().map(|&i| train_meta.keys[i].clone()).collect(),
                timestamps: base_idx.iter().map(|&i| train_meta.timestamps[i]).collect(),
                damage: base_idx.iter().map(|&i| train_meta.damage[i]).collect(),
                excitation: base_idx.iter().map(|&i| train_meta.excitation[i]).collect(),
                baseline: vec![true; base_idx.len()],
            };
            (vstack(&[&base, eval])?, RowMeta::concat(&[&base_meta, eval_meta]))
        }
    };
    let scores = score_rows(&rows, &stats)?;
    let tau = match params.threshold_mode {
        ThresholdMode::TrainingBaseline => threshold(&baseline_scores, params.percentile)?,
        ThresholdMode::EvaluatedBaseline => {
            let flagged: Vec<f64> = (0..scores.len()).filter(|&i| meta.baseline[i]).map(|i| scores[i]).collect();
            threshold(&flagged, params.percentile)?
        }
    };
    let predictions = classify(&scores, tau);
    let ev = evaluate(&predictions, &meta.damage, &params.labels, Some(&meta.excitation))?;
    let exceed = baseline_scores.iter().filter(|&&m| m > tau).count() as f64 / baseline_scores.len() as f64;
    let report = EvaluationReport {
        representation: representation.to_string(),
        percentile: params.percentile,
        tau,
        reg: stats.reg,
        threshold_mode: params.threshold_mode,
        n_baseline: stats.n_baseline,
        n_evaluated: scores.len(),
        baseline_median: median(&baseline_scores)?,
        baseline_exceed_fraction: exceed,
        overall: ev.overall,
        per_excitation: ev.per_group.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    };
    Ok(ScoreResult {
        scores: DamageScoreSet { meta, scores, predictions, tau, percentile: params.percentile },
        report,
        stats,
        baseline_scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Latent {
    Dmg,
    Ndmg,
}

impl Latent {
    pub fn name(self) -> &'static str {
        match self {
            Latent::Dmg => "z_dmg",
            Latent::Ndmg => "z_ndmg",
        }
    }
}

impl std::str::FromStr for Latent {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dmg" | "z_dmg" => Ok(Latent::Dmg),
            "ndmg" | "z_ndmg" => Ok(Latent::Ndmg),
            _ => Err(Error::Config(format!("unknown latent {s:?}, expected dmg or ndmg"))),
        }
    }
}

const ENCODE_CHUNK: usize = 128;

/// Encode every window of a set, in order. Returns (z_dmg, z_ndmg).
pub fn encode_set(model: &DualLatentAutoencoder, set: &WindowSet) -> Result<(Matrix, Matrix)> {
    let h = model.config().latent_dim;
    let idx: Vec<usize> = (0..set.len()).collect();
    let parts = idx
        .par_chunks(ENCODE_CHUNK)
        .map(|c| model.encode(&set.batch_x(c)))
        .collect::<Result<Vec<_>>>()?;
    let mut zd = Vec::with_capacity(set.len() * h);
    let mut zn = Vec::with_capacity(set.len() * h);
    for p in parts {
        zd.extend(p.z_dmg.data);
        zn.extend(p.z_ndmg.data);
    }
    Ok((Matrix::from_vec(set.len(), h, zd)?, Matrix::from_vec(set.len(), h, zn)?))
}

/// Algorithm-1 scoring of a trained model with one of its latents.
pub fn score_pipeline(
    model: &DualLatentAutoencoder,
    train: &WindowSet,
    eval: &WindowSet,
    latent: Latent,
    params: &DamageIdParams,
) -> Result<ScoreResult> {
    let (td, tn) = encode_set(model, train)?;
    let (ed, en) = encode_set(model, eval)?;
    let (t, e) = match latent {
        Latent::Dmg => (td, ed),
        Latent::Ndmg => (tn, en),
    };
    score_embeddings(latent.name(), &t, &RowMeta::of(train), &e, &RowMeta::of(eval), params)
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::contract("spearman needs two equal-length samples of at least 2"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Median score per damage label, sorted by label.
pub fn median_by_label(scores: &[f64], labels: &[i64]) -> Result<BTreeMap<i64, f64>> {
    let mut groups: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for (&s, &l) in scores.iter().zip(labels) {
        groups.entry(l).or_default().push(s);
    }
    groups.into_iter().map(|(l, v)| Ok((l, median(&v)?))).collect()
}

fn fmt_ts(ts: &Option<chrono::DateTime<chrono::Utc>>) -> String {
    ts.map(|t| t.to_rfc3339()).unwrap_or_default()
}

/// window_id, timestamp, score, prediction, damage_label, excitation_label.
pub fn write_scores_csv(path: &Path, set: &DamageScoreSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["window_id", "timestamp", "score", "prediction", "damage_label", "excitation_label"])?;
    for i in 0..set.scores.len() {
        w.write_record([
            set.meta.keys[i].clone(),
            fmt_ts(&set.meta.timestamps[i]),
            set.scores[i].to_string(),
            set.predictions[i].to_string(),
            set.meta.damage[i].to_string(),
            set.meta.excitation[i].to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    crate::signals::write_bytes_atomic(path, &bytes)
}

pub fn write_report_json(path: &Path, report: &EvaluationReport) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    crate::signals::write_bytes_atomic(path, &bytes)
}

/// Per-excitation table: excitation, tn, fp, fn, tp, tnr, tpr, balanced_accuracy.
pub fn write_excitation_csv(path: &Path, report: &EvaluationReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["excitation", "tn", "fp", "fn", "tp", "tnr", "tpr", "balanced_accuracy"])?;
    let rows = report
        .per_excitation
        .iter()
        .map(|(k, v)| (k.as_str(), v))
        .chain(std::iter::once(("All", &report.overall)));
    for (k, c) in rows {
        w.write_record([
            k.to_string(),
            c.tn.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tp.to_string(),
            c.tnr.to_string(),
            c.tpr.to_string(),
            c.balanced_accuracy.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    crate::signals::write_bytes_atomic(path, &bytes)
}

/// window_id, damage_label, excitation_label, z0 … z{H-1}.
pub fn write_latents_csv(path: &Path, z: &Matrix, meta: &RowMeta) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["window_id".to_string(), "damage_label".into(), "excitation_label".into()];
    header.extend((0..z.cols).map(|j| format!("z{j}")));
    w.write_record(&header)?;
    for i in 0..z.rows {
        let mut rec = vec![meta.keys[i].clone(), meta.damage[i].to_string(), meta.excitation[i].to_string()];
        rec.extend(z.row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    crate::signals::write_bytes_atomic(path, &bytes)
}
