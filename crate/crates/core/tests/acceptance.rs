//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Exits 0 regardless of outcome so the report always completes; set
//! `SHMREP_ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.
//! `SHMREP_ACCEPTANCE_QUICK=1` skips the synthetic end-to-end experiment.

mod common;

use std::time::{Duration, Instant};

use common::*;
use shmrep::config::{ExperimentConfig, ScenarioFile};
use shmrep::damageid::{
    classify, evaluate, fit_baseline, mahalanobis, median_by_label, score_pipeline, spearman, threshold,
    ConfusionMatrix, LabelSet, Latent, ScoreResult,
};
use shmrep::losses::{loss_psd, loss_time, vicreg, LossWeights};
use shmrep::model::{Activation, HeadInput};
use shmrep::pipeline::{cmd_prepare, cmd_simulate, cmd_train, prepare_records, train_variant, SplitSets};
use shmrep::signals::{welch_psd, SignalWindow, WelchParams};
use shmrep::synthdata::simulate;
use shmrep::tensor::{Matrix, Tensor3};
use shmrep::training::{TrainConfig, Variant};

#[derive(Default)]
struct Report {
    pass: usize,
    fail: usize,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        if ok {
            self.pass += 1;
        } else {
            self.fail += 1;
        }
        println!("[{}] {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    }

    fn skip(&self, id: &str, detail: &str) {
        println!("[SKIP] {id}: {detail}");
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed())
}

fn window(data: Vec<f64>, channels: usize) -> SignalWindow {
    let len = data.len() / channels;
    SignalWindow {
        data,
        channels,
        len,
        record: "r".into(),
        window_index: 0,
        sample_rate: 200.0,
        timestamp: None,
        damage_label: 1,
        excitation_label: 1,
        baseline: true,
    }
}

fn welch_error() -> f64 {
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for (c, t, p) in [
        (4, 2048, WelchParams::default()),
        (2, 700, WelchParams { segment_length: 128, segment_overlap: 64, fft_length: 200, ..Default::default() }),
    ] {
        let w = window(normal_vec(&mut r, c * t), c);
        let psd = welch_psd(&w, &p).unwrap();
        for ch in 0..c {
            let want = welch_oracle(w.channel(ch), 200.0, p.segment_length, p.segment_overlap, p.fft_length);
            worst = worst.max(max_rel_err(psd.row(ch), &want));
        }
    }
    worst
}

fn mahalanobis_error() -> f64 {
    let mut r = rng(102);
    let (n, h) = (300, 12);
    let mut m = Matrix::from_vec(n, h, normal_vec(&mut r, n * h)).unwrap();
    for i in 0..n {
        for j in 1..h {
            let prev = m.row(i)[j - 1];
            m.row_mut(i)[j] += 0.5 * prev;
        }
    }
    let stats = fit_baseline(&m, None).unwrap();
    let rows: Vec<Vec<f64>> = m.iter_rows().map(<[f64]>::to_vec).collect();
    (0..20)
        .map(|_| {
            let z = normal_vec(&mut r, h);
            rel_err(mahalanobis(&z, &stats), mahalanobis_oracle(&rows, &z, stats.reg))
        })
        .fold(0.0, f64::max)
}

fn threshold_exact() -> bool {
    let mut r = rng(103);
    [1, 2, 9, 500, 4001].iter().all(|&n| {
        let v = normal_vec(&mut r, n);
        [0.0, 5.0, 50.0, 95.0, 99.5, 100.0].iter().all(|&p| threshold(&v, p).unwrap() == percentile_oracle(&v, p))
    })
}

fn evaluate_exact() -> bool {
    let mut r = rng(104);
    let labels: Vec<i64> = (0..2000).map(|_| rand::Rng::random_range(&mut r, 1..=4)).collect();
    let scores = normal_vec(&mut r, 2000);
    let pred = classify(&scores, 0.2);
    let e = evaluate(&pred, &labels, &LabelSet { healthy: vec![1], damaged: vec![] }, None).unwrap();
    let (tn, fp, fn_, tp) = count_oracle(&pred, &labels, &[1]);
    let (tnr, tpr, bal) = rates(tn, fp, fn_, tp);
    let o = &e.overall;
    (o.tn, o.fp, o.fn_, o.tp) == (tn, fp, fn_, tp) && (o.tnr, o.tpr, o.balanced_accuracy) == (tnr, tpr, bal)
}

fn nested(t: &Tensor3) -> Vec<Vec<Vec<f64>>> {
    let [b, c, l] = t.dims;
    (0..b).map(|i| (0..c).map(|j| t.data[(i * c + j) * l..(i * c + j + 1) * l].to_vec()).collect()).collect()
}

fn loss_error() -> f64 {
    let mut r = rng(105);
    let dims = [6, 4, 50];
    let n = dims.iter().product();
    let a = Tensor3::from_vec(dims, normal_vec(&mut r, n)).unwrap();
    let b = Tensor3::from_vec(dims, normal_vec(&mut r, n)).unwrap();
    let mse = mse_oracle(&nested(&a), &nested(&b));
    let mut worst = rel_err(loss_time(&a, &b).unwrap(), mse).max(rel_err(loss_psd(&a, &b).unwrap(), mse));
    let (n, h) = (32, 8);
    let z1 = Matrix::from_vec(n, h, normal_vec(&mut r, n * h).iter().map(|v| 0.4 * v).collect()).unwrap();
    let z2 = Matrix::from_vec(n, h, normal_vec(&mut r, n * h).iter().map(|v| 0.4 * v).collect()).unwrap();
    let t = vicreg(&z1, &z2, &LossWeights::default()).unwrap();
    let rows = |m: &Matrix| m.iter_rows().map(<[f64]>::to_vec).collect::<Vec<_>>();
    let (inv, var, cov) = vicreg_oracle(&rows(&z1), &rows(&z2));
    for (g, w) in [(t.l_inv, inv), (t.l_var, var), (t.l_cov, cov), (t.l3, 25.0 * inv + 25.0 * var + cov)] {
        worst = worst.max(rel_err(g, w));
    }
    worst
}

fn criterion_oracles(rep: &mut Report) {
    let limit = Duration::from_secs(1);
    let (e, d) = timed(welch_error);
    rep.line("1 oracle welch_psd", e <= 1e-10 && d <= limit, format!("max rel err {e:.2e} (<= 1e-10), {d:.2?}"));
    let (e, d) = timed(mahalanobis_error);
    rep.line("1 oracle mahalanobis", e <= 1e-8 && d <= limit, format!("max rel err {e:.2e} (<= 1e-8), {d:.2?}"));
    let (ok, d) = timed(threshold_exact);
    rep.line("1 oracle threshold", ok && d <= limit, format!("exact match {ok}, {d:.2?}"));
    let (ok, d) = timed(evaluate_exact);
    rep.line("1 oracle evaluate", ok && d <= limit, format!("exact match {ok}, {d:.2?}"));
    let (e, d) = timed(loss_error);
    rep.line("1 oracle losses", e <= 1e-9 && d <= limit, format!("max rel err {e:.2e} (<= 1e-9), {d:.2?}"));
}

fn criterion_anchors(rep: &mut Report) {
    for ((tn, fp, fn_, tp), want) in [((344, 85, 629, 302), [0.801, 0.324, 0.563]), ((197, 23, 374, 1134), [0.896, 0.752, 0.824])] {
        let cm = ConfusionMatrix::from_counts(tn, fp, fn_, tp);
        let got = [cm.tnr, cm.tpr, cm.balanced_accuracy];
        let ok = got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 1e-3);
        rep.line(
            "2 metric anchors",
            ok,
            format!("({tn},{fp},{fn_},{tp}) -> {:.3}/{:.3}/{:.3}, want {:.3}/{:.3}/{:.3}", got[0], got[1], got[2], want[0], want[1], want[2]),
        );
    }
}

fn criterion_gradients(rep: &mut Report) {
    let t0 = Instant::now();
    let mut worst = Vec::new();
    for (name, w) in grad::isolated_terms() {
        let e = grad::model_grad_error(grad::tiny(HeadInput::GlobalMean, Activation::Tanh), w);
        worst.push(format!("{name} {e:.1e}"));
        if e > grad::TOL {
            rep.line("3 gradients", false, format!("{name}: relative error {e:.2e} > {:.0e}", grad::TOL));
            return;
        }
    }
    let d = t0.elapsed();
    rep.line("3 gradients", d < Duration::from_secs(60), format!("{} (<= 1e-4), {d:.2?}", worst.join(", ")));
}

fn criterion_vicreg(rep: &mut Report) {
    let ((start, end, var), d) = timed(|| vicreg_on_noisy_copies(200));
    rep.line(
        "4 vicreg behaviour",
        end < 0.1 * start && var < 0.1 && d < Duration::from_secs(60),
        format!("l_inv {start:.4} -> {end:.2e} (< 10%), l_var {var:.2e} (< 0.1), {d:.2?}"),
    );
}

fn exceed_line(rep: &mut Report, what: &str, res: &ScoreResult) {
    let r = &res.report;
    let upper = 0.05 + 1.0 / r.n_baseline as f64;
    let f = r.baseline_exceed_fraction;
    rep.line(
        "6 threshold calibration",
        (0.04..=upper).contains(&f),
        format!("{what}: {f:.4} of {} baseline scores above tau, want [0.04, {upper:.4}]", r.n_baseline),
    );
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_end_to_end(rep: &mut Report) {
    let cfg = ExperimentConfig::default();
    let sf = ScenarioFile::default();
    let t0 = Instant::now();
    let records = simulate(&sf.structure, &sf.scenario).unwrap();
    let prepared = prepare_records(&records, &cfg.signals, &cfg.features).unwrap();
    drop(records);
    let n_windows = prepared.windows.len();
    let sets = prepared.split_sets().unwrap();
    drop(prepared);
    let eval = sets.eval_set().unwrap();
    let alpha: Vec<f64> = sf.scenario.damage_states.iter().map(|d| d.reduction).collect();
    println!("  end-to-end: {n_windows} windows, seeds {:?}, {} epochs", cfg.seeds, cfg.train.epochs);

    let (mut f_dmg, mut f_ndmg, mut v1, mut rho) = (vec![], vec![], vec![], vec![]);
    for &seed in &cfg.seeds {
        let (model, _, _) = train_variant(&cfg.model, &cfg.train, &sets, Variant::F, seed).unwrap();
        let d = score_pipeline(&model, &sets.train, &eval, Latent::Dmg, &cfg.damageid).unwrap();
        let n = score_pipeline(&model, &sets.train, &eval, Latent::Ndmg, &cfg.damageid).unwrap();
        let medians: Vec<f64> = median_by_label(&d.scores.scores, &d.scores.meta.damage).unwrap().into_values().collect();
        rho.push(spearman(&medians, &alpha).unwrap());
        f_dmg.push(d.report.overall.balanced_accuracy);
        f_ndmg.push(n.report.overall.balanced_accuracy);
        exceed_line(rep, &format!("F seed {seed}"), &d);

        let (model, _, _) = train_variant(&cfg.model, &cfg.train, &sets, Variant::V1, seed).unwrap();
        let b = score_pipeline(&model, &sets.train, &eval, Latent::Dmg, &cfg.damageid).unwrap();
        v1.push(b.report.overall.balanced_accuracy);
        println!(
            "  seed {seed}: F z_dmg {:.3}, F z_ndmg {:.3}, V1 {:.3}, spearman {:.3}",
            f_dmg.last().unwrap(),
            f_ndmg.last().unwrap(),
            v1.last().unwrap(),
            rho.last().unwrap()
        );
    }
    let d = t0.elapsed();
    let (f, v) = (mean(&f_dmg), mean(&v1));
    rep.line("5a F beats V1", f - v >= 0.1, format!("mean balanced accuracy F {f:.3} vs V1 {v:.3}, margin {:+.3} (>= 0.1)", f - v));
    let (dm, nd) = (mean(&f_dmg), mean(&f_ndmg));
    rep.line("5b z_dmg beats z_ndmg", dm > nd, format!("model F mean balanced accuracy z_dmg {dm:.3} vs z_ndmg {nd:.3}"));
    let r = mean(&rho);
    rep.line("5c severity trend", r >= 0.8, format!("mean Spearman(median score, alpha) {r:.3} (>= 0.8), per seed {rho:.3?}"));
    rep.line("5 runtime", d <= Duration::from_secs(20 * 60), format!("{:.1} min (<= 20)", d.as_secs_f64() / 60.0));
}

fn quick_calibration(rep: &mut Report) {
    let sets: SplitSets = tiny_sets();
    let train = TrainConfig { batch_size: 32, epochs: 2, ..Default::default() };
    let (model, _, _) = train_variant(&tiny_model(), &train, &sets, Variant::F, 0).unwrap();
    let eval = sets.eval_set().unwrap();
    let d = score_pipeline(&model, &sets.train, &eval, Latent::Dmg, &Default::default()).unwrap();
    exceed_line(rep, "tiny model", &d);
}

fn criterion_determinism(rep: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let scenario = {
        let (structure, scenario) = tiny_scenario();
        ScenarioFile { structure, scenario }
    };
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, toml::to_string(&scenario).unwrap()).unwrap();
    let cfg = ExperimentConfig {
        base_dir: dir.path().to_path_buf(),
        scenario_file: Some(path),
        signals: tiny_signals(),
        model: tiny_model(),
        train: TrainConfig { batch_size: 32, epochs: 2, ..Default::default() },
        ..Default::default()
    };
    cmd_simulate(&cfg).unwrap();
    cmd_prepare(&cfg).unwrap();
    let a = cmd_train(&cfg, Variant::F, 7).unwrap().checkpoint.param_checksum();
    let b = cmd_train(&cfg, Variant::F, 7).unwrap().checkpoint.param_checksum();
    rep.line("7 determinism", a == b, format!("checksums {}.. and {}..", &a[..12], &b[..12]));
}

fn main() {
    // libtest flags such as --nocapture or a name filter are accepted and ignored
    let flag = |k: &str| std::env::var(k).is_ok_and(|v| v == "1");
    let mut rep = Report::default();
    criterion_oracles(&mut rep);
    criterion_anchors(&mut rep);
    criterion_gradients(&mut rep);
    criterion_vicreg(&mut rep);
    if flag("SHMREP_ACCEPTANCE_QUICK") {
        rep.skip("5 end-to-end", "SHMREP_ACCEPTANCE_QUICK=1");
        quick_calibration(&mut rep);
    } else {
        criterion_end_to_end(&mut rep);
    }
    criterion_determinism(&mut rep);
    rep.skip("8 MCC5 public dataset", "optional; run scripts/mcc5.sh with the dataset downloaded");
    println!("acceptance: {} passed, {} failed", rep.pass, rep.fail);
    if rep.fail > 0 && flag("SHMREP_ACCEPTANCE_STRICT") {
        std::process::exit(1);
    }
}
