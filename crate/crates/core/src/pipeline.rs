//! Experiment commands: simulate, prepare, train, evaluate, ablate, report.
//!
//! Output layout under `paths.output_dir`:
//! `runs/<variant>-s<seed>/` holds a checkpoint, its loss log and run
//! metadata; `eval/<name>/` holds score reports; `ablation/` the ablation
//! tables; `report/` plot-ready CSVs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SignalsConfig};
use crate::damageid::{
    encode_set, score_embeddings, write_excitation_csv, write_latents_csv, write_report_json, write_scores_csv,
    EvaluationReport, Latent, ScoreResult,
};
use crate::dataset::{RowInfo, RowMeta, WindowSet};
use crate::features::{extract, v4_pipeline, FeatureParams};
use crate::model::{Checkpoint, DualLatentAutoencoder, ModelConfig};
use crate::signals::{
    build_manifest, decimate, load_records, normalize_psd, segment, welch_psd, write_bytes_atomic, write_record,
    ArrayStore, DatasetManifest, RecordFormat, SignalRecord, SignalWindow, Split,
};
use crate::synthdata::simulate;
use crate::tensor::Matrix;
use crate::training::{metric_map, run_ablation, train, AblationTable, TrainConfig, TrainLog, Variant};
use crate::{Error, Result};

/// A normalized window with its normalized PSD and feature vector.
#[derive(Debug, Clone)]
pub struct PreparedWindow {
    pub window: SignalWindow,
    pub psd: Vec<f64>,
    pub features: Vec<f64>,
}

/// Windows of all splits plus the manifest assigning them.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub manifest: DatasetManifest,
    pub windows: Vec<PreparedWindow>,
    pub channels: usize,
    pub window: usize,
    pub bins: usize,
}

/// Per-split tensors and feature matrices.
#[derive(Debug, Clone)]
pub struct SplitSets {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub train_features: Matrix,
    pub val_features: Matrix,
    pub test_features: Matrix,
}

impl SplitSets {
    /// Validation followed by test rows: the evaluated set.
    pub fn eval_set(&self) -> Result<WindowSet> {
        self.val.concat(&self.test)
    }

    pub fn eval_features(&self) -> Result<Matrix> {
        crate::dataset::vstack(&[&self.val_features, &self.test_features])
    }
}

fn prepare_record(rec: &SignalRecord, s: &SignalsConfig, f: &FeatureParams) -> Result<Vec<PreparedWindow>> {
    let rec = if s.decimate > 1 { decimate(rec, s.decimate)? } else { rec.clone() };
    let mut out = Vec::new();
    for w in segment(&rec, s.window_length, s.overlap)? {
        let key = w.key();
        let res = crate::signals::zscore_pooled(&w, s.std_eps).and_then(|z| {
            let raw = welch_psd(&z, &s.welch)?;
            let features = extract(&z, &raw, f)?.values;
            let psd = normalize_psd(&raw, s.psd_normalization)?.values;
            Ok(PreparedWindow { window: z, psd, features })
        });
        match res {
            Ok(p) => out.push(p),
            Err(e @ (Error::DegenerateWindow { .. } | Error::ZeroSpectrum { .. } | Error::DegenerateFeature { .. })) => {
                log::warn!("window {key} rejected: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Window, normalize, estimate PSDs and features, and split.
pub fn prepare_records(records: &[SignalRecord], s: &SignalsConfig, f: &FeatureParams) -> Result<Prepared> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no records to prepare".into()));
    }
    let per_record = records.par_iter().map(|r| prepare_record(r, s, f)).collect::<Result<Vec<_>>>()?;
    let windows: Vec<PreparedWindow> = per_record.into_iter().flatten().collect();
    if windows.is_empty() {
        return Err(Error::EmptyInput("every window was rejected".into()));
    }
    let plain: Vec<SignalWindow> = windows.iter().map(|p| SignalWindow { data: vec![], ..p.window.clone() }).collect();
    let manifest = build_manifest(&plain, s.split_ratio, &s.baseline_rule, s.split_seed)?;
    let first = &windows[0].window;
    Ok(Prepared {
        channels: first.channels,
        window: first.len,
        bins: s.welch.bins(),
        manifest,
        windows,
    })
}

impl Prepared {
    pub fn split_sets(&self) -> Result<SplitSets> {
        let mut sets = [
            WindowSet::new(self.channels, self.window, self.bins),
            WindowSet::new(self.channels, self.window, self.bins),
            WindowSet::new(self.channels, self.window, self.bins),
        ];
        let mut feats: [Vec<f64>; 3] = Default::default();
        for (e, p) in self.manifest.entries.iter().zip(&self.windows) {
            let k = split_slot(e.split);
            let info = RowInfo {
                key: e.key.clone(),
                timestamp: e.timestamp,
                damage: e.damage_label,
                excitation: e.excitation_label,
                baseline: e.baseline,
            };
            sets[k].push_raw(info, &p.window.data, &p.psd)?;
            feats[k].extend_from_slice(&p.features);
        }
        let fdim = self.windows[0].features.len();
        let [train, val, test] = sets;
        let [ft, fv, fs] = feats;
        Ok(SplitSets {
            train_features: Matrix::from_vec(train.len(), fdim, ft)?,
            val_features: Matrix::from_vec(val.len(), fdim, fv)?,
            test_features: Matrix::from_vec(test.len(), fdim, fs)?,
            train,
            val,
            test,
        })
    }
}

fn split_slot(s: Split) -> usize {
    match s {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

/// Generate the configured synthetic dataset into `paths.data_dir`.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<usize> {
    let sf = cfg.scenario()?;
    let records = simulate(&sf.structure, &sf.scenario)?;
    let dir = cfg.data_dir();
    for r in &records {
        write_record(&dir, r, RecordFormat::F64le)?;
    }
    let text = toml::to_string_pretty(&sf).map_err(|e| Error::Config(e.to_string()))?;
    write_bytes_atomic(&dir.join("scenario.toml"), text.as_bytes())?;
    log::info!("wrote {} records to {}", records.len(), dir.display());
    Ok(records.len())
}

const CACHE_VERSION: u32 = 1;

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct CacheStamp {
    version: u32,
    signals: SignalsConfig,
    features: FeatureParams,
    records: Vec<String>,
    channels: usize,
    window: usize,
    bins: usize,
}

/// Summary of a prepared cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepareSummary {
    pub windows: usize,
    pub counts: (usize, usize, usize),
    pub baseline: usize,
    /// False when an up-to-date cache was found and nothing was written.
    pub written: bool,
}

fn summary(m: &DatasetManifest, written: bool) -> PrepareSummary {
    PrepareSummary { windows: m.len(), counts: m.split_counts(), baseline: m.baseline_count(), written }
}

fn read_stamp(cache: &Path) -> Option<CacheStamp> {
    let text = std::fs::read_to_string(cache.join("prepare.json")).ok()?;
    serde_json::from_str(&text).ok()
}

/// Load records from `paths.data_dir`, preprocess and fill the cache. A
/// second call with the same inputs leaves the cache untouched.
pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<PrepareSummary> {
    let records = load_records(&cfg.data_dir())?;
    let names: Vec<String> = records.iter().map(|r| r.name.clone()).collect();
    let cache = cfg.cache_dir();
    let manifest_path = cache.join("manifest.jsonl");
    if let Some(stamp) = read_stamp(&cache) {
        if stamp.version == CACHE_VERSION
            && stamp.signals == cfg.signals
            && stamp.features == cfg.features
            && stamp.records == names
            && manifest_path.is_file()
        {
            let m = DatasetManifest::read_jsonl(&manifest_path)?;
            let store = ArrayStore::new(&cache);
            if m.entries.iter().all(|e| ["window", "psd", "features"].iter().all(|k| store.contains(k, &e.key))) {
                log::info!("cache at {} is up to date", cache.display());
                return Ok(summary(&m, false));
            }
        }
    }
    let prepared = prepare_records(&records, &cfg.signals, &cfg.features)?;
    let store = ArrayStore::new(&cache);
    let (c, t, k) = (prepared.channels, prepared.window, prepared.bins);
    prepared.windows.par_iter().try_for_each(|p| {
        let key = p.window.key();
        store.put("window", &key, &[c, t], &p.window.data)?;
        store.put("psd", &key, &[c, k], &p.psd)?;
        store.put("features", &key, &[p.features.len()], &p.features)
    })?;
    prepared.manifest.write_jsonl(&manifest_path)?;
    let stamp = CacheStamp {
        version: CACHE_VERSION,
        signals: cfg.signals.clone(),
        features: cfg.features,
        records: names,
        channels: c,
        window: t,
        bins: k,
    };
    write_bytes_atomic(&cache.join("prepare.json"), &serde_json::to_vec_pretty(&stamp)?)?;
    let (tr, va, te) = prepared.manifest.split_counts();
    log::info!("prepared {} windows ({tr}/{va}/{te})", prepared.manifest.len());
    Ok(summary(&prepared.manifest, true))
}

/// Read the prepared cache back into per-split tensors.
pub fn load_split_sets(cfg: &ExperimentConfig) -> Result<SplitSets> {
    let cache = cfg.cache_dir();
    let stamp = read_stamp(&cache).ok_or_else(|| {
        Error::EmptyInput(format!("no prepared cache in {}; run prepare first", cache.display()))
    })?;
    let manifest = DatasetManifest::read_jsonl(&cache.join("manifest.jsonl"))?;
    let store = ArrayStore::new(&cache);
    let rows = manifest
        .entries
        .par_iter()
        .map(|e| Ok((store.get("window", &e.key)?.data, store.get("psd", &e.key)?.data, store.get("features", &e.key)?.data)))
        .collect::<Result<Vec<_>>>()?;
    let windows = manifest
        .entries
        .iter()
        .zip(rows)
        .map(|(e, (x, s, f))| PreparedWindow {
            window: SignalWindow {
                data: x,
                channels: stamp.channels,
                len: stamp.window,
                record: e.key.clone(),
                window_index: 0,
                sample_rate: 0.0,
                timestamp: e.timestamp,
                damage_label: e.damage_label,
                excitation_label: e.excitation_label,
                baseline: e.baseline,
            },
            psd: s,
            features: f,
        })
        .collect();
    Prepared { manifest, windows, channels: stamp.channels, window: stamp.window, bins: stamp.bins }.split_sets()
}

fn check_shapes(model: &ModelConfig, sets: &SplitSets) -> Result<()> {
    let s = &sets.train;
    if (model.channels, model.window, model.psd_bins) != (s.channels, s.window, s.bins) {
        return Err(Error::Config(format!(
            "model is configured for {}x{} windows and {} PSD bins; the data has {}x{} and {}",
            model.channels, model.window, model.psd_bins, s.channels, s.window, s.bins
        )));
    }
    Ok(())
}

pub fn run_name(variant: Variant, seed: u64) -> String {
    format!("{variant}-s{seed}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub variant: Variant,
    pub seed: u64,
    pub epochs: usize,
    pub param_checksum: String,
    pub l3_skips: usize,
    pub wall_time_s: f64,
}

pub struct TrainOutcome {
    pub dir: PathBuf,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Train one variant with one seed; the seed also initializes the model.
pub fn train_variant(
    model_config: &ModelConfig,
    base: &TrainConfig,
    sets: &SplitSets,
    variant: Variant,
    seed: u64,
) -> Result<(DualLatentAutoencoder, Checkpoint, TrainLog)> {
    check_shapes(model_config, sets)?;
    let cfg = TrainConfig { seed, variant, ..base.clone() };
    let mut model = DualLatentAutoencoder::new(ModelConfig { seed, ..model_config.clone() })?;
    let (ckpt, log) = train(&mut model, &sets.train, &sets.val, &cfg)?;
    Ok((model, ckpt, log))
}

fn write_run(dir: &Path, cfg: &ExperimentConfig, variant: Variant, seed: u64, ckpt: &Checkpoint, log: &TrainLog) -> Result<()> {
    ckpt.save(&dir.join("checkpoint.shmr"))?;
    log.write_csv(&dir.join("train_log.csv"))?;
    write_bytes_atomic(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let info = RunInfo {
        variant,
        seed,
        epochs: cfg.train.epochs,
        param_checksum: ckpt.param_checksum(),
        l3_skips: log.l3_skips,
        wall_time_s: log.wall_time_s,
    };
    write_bytes_atomic(&dir.join("run.json"), &serde_json::to_vec_pretty(&info)?)
}

/// Train from the prepared cache and write the run directory.
pub fn cmd_train(cfg: &ExperimentConfig, variant: Variant, seed: u64) -> Result<TrainOutcome> {
    let sets = load_split_sets(cfg)?;
    let (_, checkpoint, log) = train_variant(&cfg.model, &cfg.train, &sets, variant, seed)?;
    let dir = cfg.output_dir().join("runs").join(run_name(variant, seed));
    write_run(&dir, cfg, variant, seed, &checkpoint, &log)?;
    log::info!("run written to {}", dir.display());
    Ok(TrainOutcome { dir, checkpoint, log })
}

fn write_score_outputs(dir: &Path, res: &ScoreResult, group_by_excitation: bool) -> Result<()> {
    write_report_json(&dir.join("report.json"), &res.report)?;
    write_scores_csv(&dir.join("scores.csv"), &res.scores)?;
    if group_by_excitation {
        write_excitation_csv(&dir.join("per_excitation.csv"), &res.report)?;
    }
    Ok(())
}

/// Score validation and test windows with a trained checkpoint.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: &Path, latent: Latent, group_by_excitation: bool) -> Result<EvaluationReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.to_model(None)?;
    let sets = load_split_sets(cfg)?;
    check_shapes(model.config(), &sets)?;
    let eval = sets.eval_set()?;
    let (td, tn) = encode_set(&model, &sets.train)?;
    let (ed, en) = encode_set(&model, &eval)?;
    let (t, e) = match latent {
        Latent::Dmg => (td, ed),
        Latent::Ndmg => (tn, en),
    };
    let res = score_embeddings(latent.name(), &t, &RowMeta::of(&sets.train), &e, &RowMeta::of(&eval), &cfg.damageid)?;
    let run = match &ckpt.meta {
        Some(m) => format!("{}-s{}", m.variant, m.seed),
        None => checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let dir = cfg.output_dir().join("eval").join(format!("{run}-{}", latent.name()));
    write_score_outputs(&dir, &res, group_by_excitation)?;
    write_latents_csv(&dir.join("latents.csv"), &e, &RowMeta::of(&eval))?;
    Ok(res.report)
}

/// Score the handcrafted features of validation and test windows.
pub fn features_report(cfg: &ExperimentConfig, sets: &SplitSets) -> Result<ScoreResult> {
    let eval = sets.eval_set()?;
    v4_pipeline(&sets.train_features, &RowMeta::of(&sets.train), &sets.eval_features()?, &RowMeta::of(&eval), &cfg.damageid)
}

/// Train every configured variant for every seed, evaluate, and tabulate.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<AblationTable> {
    let sets = load_split_sets(cfg)?;
    check_shapes(&cfg.model, &sets)?;
    let eval = sets.eval_set()?;
    let (mut table, runs) = run_ablation(
        &cfg.model,
        &sets.train,
        &sets.val,
        &eval,
        &cfg.train,
        &cfg.ablation.variants,
        &cfg.seeds,
        &cfg.damageid,
    )?;
    let out = cfg.output_dir();
    for r in &runs {
        let dir = out.join("runs").join(run_name(r.variant, r.seed));
        write_run(&dir, cfg, r.variant, r.seed, &r.checkpoint, &r.log)?;
        write_report_json(&out.join("ablation").join(format!("{}.json", run_name(r.variant, r.seed))), &r.report)?;
    }
    if cfg.ablation.include_features {
        let res = features_report(cfg, &sets)?;
        table.push_model("V4", &[metric_map(&res.report)]);
        write_score_outputs(&out.join("eval").join("V4-features"), &res, true)?;
    }
    table.write_csv(&out.join("ablation").join("ablation.csv"))?;
    Ok(table)
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::load(path, e.to_string()))?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((header, rows))
}

fn sorted_subdirs(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

/// Plot-ready CSVs from a run directory: merged loss curves and one
/// score-vs-index table per evaluation with baseline median and τ columns.
pub fn cmd_report(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let report_dir = out_dir.join("report");
    let mut written = Vec::new();

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut any_log = false;
    for run in sorted_subdirs(&out_dir.join("runs")) {
        let log = run.join("train_log.csv");
        if !log.is_file() {
            continue;
        }
        let (header, rows) = read_csv(&log)?;
        if !any_log {
            let mut h = vec!["run".to_string()];
            h.extend(header);
            w.write_record(&h)?;
            any_log = true;
        }
        let name = run.file_name().unwrap().to_string_lossy().into_owned();
        for r in rows {
            let mut rec = vec![name.clone()];
            rec.extend(r);
            w.write_record(&rec)?;
        }
    }
    if any_log {
        let p = report_dir.join("loss_curves.csv");
        write_bytes_atomic(&p, &w.into_inner().map_err(|e| Error::Serde(e.to_string()))?)?;
        written.push(p);
    }

    for ev in sorted_subdirs(&out_dir.join("eval")) {
        let (scores, report) = (ev.join("scores.csv"), ev.join("report.json"));
        if !(scores.is_file() && report.is_file()) {
            continue;
        }
        let text = std::fs::read_to_string(&report).map_err(|e| Error::io(&report, e))?;
        let rep: serde_json::Value = serde_json::from_str(&text)?;
        let get = |k: &str| rep.get(k).and_then(|v| v.as_f64()).map(|v| v.to_string()).unwrap_or_default();
        let (median, tau) = (get("baseline_median"), get("tau"));
        let (header, rows) = read_csv(&scores)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut h = vec!["index".to_string()];
        h.extend(header);
        h.extend(["baseline_median".to_string(), "tau".to_string()]);
        w.write_record(&h)?;
        for (i, r) in rows.into_iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(r);
            rec.extend([median.clone(), tau.clone()]);
            w.write_record(&rec)?;
        }
        let name = ev.file_name().unwrap().to_string_lossy().into_owned();
        let p = report_dir.join(format!("score_plot_{name}.csv"));
        write_bytes_atomic(&p, &w.into_inner().map_err(|e| Error::Serde(e.to_string()))?)?;
        written.push(p);
    }
    if written.is_empty() {
        return Err(Error::EmptyInput(format!("no runs or evaluations under {}", out_dir.display())));
    }
    Ok(written)
}

/// Median score per damage label, useful for trend checks.
pub fn medians_by_label(res: &ScoreResult) -> Result<BTreeMap<i64, f64>> {
    crate::damageid::median_by_label(&res.scores.scores, &res.scores.meta.damage)
}
