//! Minibatch training with baseline-aware batch composition, the deep
//! ablation variants and multi-seed ablation runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::damageid::{score_pipeline, DamageIdParams, Latent};
use crate::dataset::WindowSet;
use crate::losses::{total_loss_grad, LossBreakdown, LossInputs, LossWeights};
use crate::model::{Checkpoint, DualLatentAutoencoder, ModelConfig, OutputGrads, TrainingMeta};
use crate::synthdata::stream_seed;
use crate::{Error, Result};

/// Smallest baseline count per batch for which every VICReg term is defined.
pub const MIN_BASELINE_PER_BATCH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    F,
    V1,
    V2,
    V3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::F, Variant::V1, Variant::V2, Variant::V3];

    pub fn name(self) -> &'static str {
        match self {
            Variant::F => "F",
            Variant::V1 => "V1",
            Variant::V2 => "V2",
            Variant::V3 => "V3",
        }
    }

    /// V1 drops L2 and L3, V2 drops L2, V3 drops L3.
    pub fn apply(self, w: LossWeights) -> LossWeights {
        match self {
            Variant::F => w,
            Variant::V1 => LossWeights { lambda2: 0.0, lambda3: 0.0, ..w },
            Variant::V2 => LossWeights { lambda2: 0.0, ..w },
            Variant::V3 => LossWeights { lambda3: 0.0, ..w },
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "F" => Ok(Variant::F),
            "V1" => Ok(Variant::V1),
            "V2" => Ok(Variant::V2),
            "V3" => Ok(Variant::V3),
            _ => Err(Error::Config(format!("unknown variant {s:?}, expected F, V1, V2 or V3"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    pub loss_weights: LossWeights,
    /// Target share of baseline rows per batch; `None` keeps the split's
    /// natural share. At least four baseline rows are always drawn when the
    /// split has them.
    pub baseline_fraction: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            batch_size: 256,
            epochs: 500,
            seed: 0,
            variant: Variant::F,
            loss_weights: LossWeights::default(),
            baseline_fraction: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("learning rate must be positive and betas in [0, 1)".into()));
        }
        if let Some(f) = self.baseline_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("baseline_fraction {f} outside [0, 1)")));
            }
        }
        self.loss_weights.validate()
    }

    /// Loss weights after the variant has zeroed its terms.
    pub fn effective_weights(&self) -> LossWeights {
        self.variant.apply(self.loss_weights)
    }
}

/// Row indices into the split plus the batch positions of its baseline rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub rows: Vec<usize>,
    pub baseline_rows: Vec<usize>,
}

/// Draws from a pool without replacement, reshuffling when exhausted.
struct Pool<'a> {
    items: Vec<usize>,
    next: usize,
    rng: &'a mut ChaCha8Rng,
}

impl Pool<'_> {
    fn take(&mut self, n: usize, out: &mut Vec<usize>) {
        for _ in 0..n {
            if self.next == self.items.len() {
                self.items.shuffle(self.rng);
                self.next = 0;
            }
            out.push(self.items[self.next]);
            self.next += 1;
        }
    }
}

/// Batches of one epoch. A pure function of (`seed`, `epoch`); remainder rows are dropped.
pub fn sample_epoch(
    baseline: &[bool],
    batch_size: usize,
    baseline_fraction: Option<f64>,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch>> {
    let n = baseline.len();
    if n == 0 {
        return Err(Error::EmptyInput("cannot sample batches from an empty split".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[0xBA7C, epoch as u64]));
    let n_batches = n / batch_size;
    let base: Vec<usize> = (0..n).filter(|&i| baseline[i]).collect();
    let rest: Vec<usize> = (0..n).filter(|&i| !baseline[i]).collect();

    let d = if base.is_empty() {
        0
    } else {
        let share = baseline_fraction.unwrap_or(base.len() as f64 / n as f64);
        let target = (share * batch_size as f64).round() as usize;
        target.max(MIN_BASELINE_PER_BATCH).min(batch_size).min(base.len())
    };
    let d = if rest.is_empty() { batch_size.min(base.len()) } else { d };

    let mut b_items = base;
    b_items.shuffle(&mut rng);
    let mut r_items = rest;
    r_items.shuffle(&mut rng);
    let mut batches = Vec::with_capacity(n_batches);
    let mut order_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[0x0DE5, epoch as u64]));
    {
        let mut bp = Pool { items: b_items, next: 0, rng: &mut rng };
        let mut picked_b = Vec::new();
        for _ in 0..n_batches {
            picked_b.clear();
            bp.take(d, &mut picked_b);
            batches.push(picked_b.clone());
        }
    }
    let mut rp = Pool { items: r_items, next: 0, rng: &mut rng };
    let mut out = Vec::with_capacity(n_batches);
    for b in batches {
        let mut rows: Vec<(usize, bool)> = b.into_iter().map(|i| (i, true)).collect();
        let mut others = Vec::new();
        if !rp.items.is_empty() {
            rp.take(batch_size - rows.len(), &mut others);
        }
        rows.extend(others.into_iter().map(|i| (i, false)));
        rows.shuffle(&mut order_rng);
        out.push(Batch {
            baseline_rows: rows.iter().enumerate().filter(|(_, r)| r.1).map(|(k, _)| k).collect(),
            rows: rows.into_iter().map(|r| r.0).collect(),
        });
    }
    Ok(out)
}

/// Adam with decoupled weight decay.
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] = params[i] * decay - cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogSplit {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: LogSplit,
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub entries: Vec<EpochLog>,
    pub wall_time_s: f64,
    /// Training batches whose VICReg term was skipped for lack of pairs.
    pub l3_skips: usize,
}

impl TrainLog {
    pub fn series(&self, split: LogSplit) -> Vec<&LossBreakdown> {
        self.entries.iter().filter(|e| e.split == split).map(|e| &e.losses).collect()
    }

    /// epoch, split, total, l1, l2, l3, l_inv, l_var, l_cov.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "split", "total", "l1", "l2", "l3", "l_inv", "l_var", "l_cov"])?;
        for e in &self.entries {
            let l = &e.losses;
            let split = match e.split {
                LogSplit::Train => "train",
                LogSplit::Val => "val",
            };
            let mut rec = vec![e.epoch.to_string(), split.to_string()];
            rec.extend([l.total, l.l1, l.l2, l.l3, l.l_inv, l.l_var, l.l_cov].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::signals::write_bytes_atomic(path, &self.to_csv()?)
    }
}

fn accumulate(sum: &mut LossBreakdown, b: &LossBreakdown) {
    sum.total += b.total;
    sum.l1 += b.l1;
    sum.l2 += b.l2;
    sum.l3 += b.l3;
    sum.l_inv += b.l_inv;
    sum.l_var += b.l_var;
    sum.l_cov += b.l_cov;
    sum.l3_skipped |= b.l3_skipped;
}

fn scaled(mut s: LossBreakdown, n: usize) -> LossBreakdown {
    let k = 1.0 / n.max(1) as f64;
    for v in [&mut s.total, &mut s.l1, &mut s.l2, &mut s.l3, &mut s.l_inv, &mut s.l_var, &mut s.l_cov] {
        *v *= k;
    }
    s
}

fn check_finite(b: &LossBreakdown, epoch: usize, batch: usize) -> Result<()> {
    for (name, v) in [("l1", b.l1), ("l2", b.l2), ("l3", b.l3), ("total", b.total)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch, component: name });
        }
    }
    Ok(())
}

fn batch_loss(
    model: &DualLatentAutoencoder,
    set: &WindowSet,
    batch: &Batch,
    w: &LossWeights,
    need_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    let with_psd = w.lambda2 != 0.0;
    let x = set.batch_x(&batch.rows);
    let s = with_psd.then(|| set.batch_s(&batch.rows));
    let (out, cache) = model.forward(&x, with_psd)?;
    let inp = LossInputs {
        x: &x,
        x_hat: &out.x_hat,
        s: s.as_ref(),
        s_hat: out.s_hat.as_ref(),
        z_dmg: &out.latents.z_dmg,
        baseline_rows: &batch.baseline_rows,
    };
    let (b, g) = total_loss_grad(&inp, w)?;
    if !need_grad || !b.total.is_finite() {
        return Ok((b, None));
    }
    let grads = OutputGrads { z_dmg: g.z_dmg, z_ndmg: None, x_hat: g.x_hat, s_hat: g.s_hat };
    Ok((b, Some(model.backward(&cache, &grads))))
}

/// Validation loss over consecutive chunks of the split, without updates.
pub fn evaluate_loss(model: &DualLatentAutoencoder, set: &WindowSet, w: &LossWeights, chunk: usize) -> Result<LossBreakdown> {
    let mut sum = LossBreakdown::default();
    let mut n = 0;
    let idx: Vec<usize> = (0..set.len()).collect();
    for rows in idx.chunks(chunk.max(1)) {
        let baseline_rows = (0..rows.len()).filter(|&k| set.baseline[rows[k]]).collect();
        let batch = Batch { rows: rows.to_vec(), baseline_rows };
        let (b, _) = batch_loss(model, set, &batch, w, false)?;
        accumulate(&mut sum, &b);
        n += 1;
    }
    Ok(scaled(sum, n))
}

/// Train `model` in place; returns the final checkpoint and the loss log.
pub fn train(
    model: &mut DualLatentAutoencoder,
    train_set: &WindowSet,
    val_set: &WindowSet,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    let w = cfg.effective_weights();
    let start = Instant::now();
    let mut opt = AdamW::new(model.num_params());
    let mut log = TrainLog::default();
    if train_set.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "training split has {} windows, fewer than one batch of {}",
            train_set.len(),
            cfg.batch_size
        )));
    }
    for epoch in 1..=cfg.epochs {
        let batches = sample_epoch(&train_set.baseline, cfg.batch_size, cfg.baseline_fraction, cfg.seed, epoch)?;
        let mut sum = LossBreakdown::default();
        for (bi, batch) in batches.iter().enumerate() {
            let (b, grad) = batch_loss(model, train_set, batch, &w, true)?;
            check_finite(&b, epoch, bi)?;
            if b.l3_skipped {
                log.l3_skips += 1;
            }
            opt.step(model.params_mut(), &grad.expect("finite loss has a gradient"), cfg);
            accumulate(&mut sum, &b);
        }
        let train_mean = scaled(sum, batches.len());
        log.entries.push(EpochLog { epoch, split: LogSplit::Train, losses: train_mean });
        if !val_set.is_empty() {
            let v = evaluate_loss(model, val_set, &w, cfg.batch_size)?;
            log.entries.push(EpochLog { epoch, split: LogSplit::Val, losses: v });
            log::debug!("epoch {epoch}: train {:.5} val {:.5}", train_mean.total, v.total);
        } else {
            log::debug!("epoch {epoch}: train {:.5}", train_mean.total);
        }
    }
    log.wall_time_s = start.elapsed().as_secs_f64();
    let meta = TrainingMeta {
        epoch: cfg.epochs,
        seed: cfg.seed,
        variant: cfg.variant.name().to_string(),
        loss_weights: w,
    };
    Ok((Checkpoint::from_model(model, Some(meta)), log))
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    /// Excitation label, or "All".
    pub excitation: String,
    pub runs: usize,
    pub tnr_mean: f64,
    pub tnr_std: f64,
    pub tpr_mean: f64,
    pub tpr_std: f64,
    pub bal_acc_mean: f64,
    pub bal_acc_std: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Aggregate repeated evaluations of one model: `runs[r][group] = (tnr, tpr, bal)`.
    pub fn push_model(&mut self, model: &str, runs: &[BTreeMap<String, (f64, f64, f64)>]) {
        let mut groups: Vec<&String> = runs.iter().flat_map(|r| r.keys()).collect();
        groups.sort_by_key(|g| (g.as_str() == "All", g.parse::<i64>().unwrap_or(i64::MAX), g.to_string()));
        groups.dedup();
        for g in groups {
            let vals: Vec<(f64, f64, f64)> = runs.iter().filter_map(|r| r.get(g).copied()).collect();
            let col = |f: fn(&(f64, f64, f64)) -> f64| mean_std(&vals.iter().map(f).collect::<Vec<_>>());
            let (tnr_mean, tnr_std) = col(|v| v.0);
            let (tpr_mean, tpr_std) = col(|v| v.1);
            let (bal_acc_mean, bal_acc_std) = col(|v| v.2);
            self.rows.push(AblationRow {
                model: model.to_string(),
                excitation: g.clone(),
                runs: vals.len(),
                tnr_mean,
                tnr_std,
                tpr_mean,
                tpr_std,
                bal_acc_mean,
                bal_acc_std,
            });
        }
    }

    pub fn get(&self, model: &str, excitation: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.model == model && r.excitation == excitation)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::signals::write_bytes_atomic(path, &self.to_csv()?)
    }
}

/// Metrics of one evaluation keyed by excitation label plus "All".
pub fn metric_map(report: &crate::damageid::EvaluationReport) -> BTreeMap<String, (f64, f64, f64)> {
    let m = |c: &crate::damageid::ConfusionMatrix| (c.tnr, c.tpr, c.balanced_accuracy);
    let mut out: BTreeMap<String, _> = report.per_excitation.iter().map(|(k, c)| (k.clone(), m(c))).collect();
    out.insert("All".into(), m(&report.overall));
    out
}

/// One finished (variant, seed) run.
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub report: crate::damageid::EvaluationReport,
}

/// Train every (variant, seed) pair and evaluate its z_dmg on `eval_set`.
/// The model seed follows the training seed so runs differ in initialization too.
pub fn run_ablation(
    model_config: &ModelConfig,
    train_set: &WindowSet,
    val_set: &WindowSet,
    eval_set: &WindowSet,
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    damage: &DamageIdParams,
) -> Result<(AblationTable, Vec<AblationRun>)> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut table = AblationTable::default();
    let mut runs = Vec::new();
    for &variant in variants {
        let mut metrics = Vec::new();
        for &seed in seeds {
            let cfg = TrainConfig { seed, variant, ..base.clone() };
            let mut model = DualLatentAutoencoder::new(ModelConfig { seed, ..model_config.clone() })?;
            let (checkpoint, log) = train(&mut model, train_set, val_set, &cfg)?;
            let res = score_pipeline(&model, train_set, eval_set, Latent::Dmg, damage)?;
            log::info!(
                "variant {variant} seed {seed}: balanced accuracy {:.3}",
                res.report.overall.balanced_accuracy
            );
            metrics.push(metric_map(&res.report));
            runs.push(AblationRun { variant, seed, checkpoint, log, report: res.report });
        }
        table.push_model(variant.name(), &metrics);
    }
    Ok((table, runs))
}
