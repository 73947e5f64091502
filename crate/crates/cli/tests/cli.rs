use std::path::Path;
use std::process::{Command, Output};

use shmrep::config::{ExperimentConfig, ScenarioFile};
use shmrep::model::{ConvStage, ModelConfig};
use shmrep::signals::WelchParams;
use shmrep::training::TrainConfig;

fn shmrep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shmrep"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_tiny_config(dir: &Path) {
    let mut sf = ScenarioFile::default();
    sf.scenario.sample_rate = 50.0;
    sf.scenario.duration_per_state = 40.0;
    sf.scenario.record_seconds = 20.0;
    sf.scenario.burn_in_seconds = 2.0;
    for (r, bw) in sf.scenario.excitation_regimes.iter_mut().zip([5.0, 10.0, 20.0]) {
        r.bandwidth_hz = bw;
    }
    std::fs::write(dir.join("scenario.toml"), toml::to_string_pretty(&sf).unwrap()).unwrap();

    let mut cfg = ExperimentConfig { scenario_file: Some("scenario.toml".into()), seeds: vec![0], ..Default::default() };
    cfg.signals.window_length = 64;
    cfg.signals.overlap = 32;
    cfg.signals.welch = WelchParams { segment_length: 32, segment_overlap: 16, fft_length: 64, ..Default::default() };
    cfg.model = ModelConfig {
        channels: 4,
        window: 64,
        latent_dim: 4,
        stages: vec![ConvStage { channels: 4, kernel: 5, stride: 2 }, ConvStage { channels: 6, kernel: 5, stride: 2 }],
        psd_hidden: 8,
        psd_layers: 2,
        psd_bins: 33,
        ..Default::default()
    };
    cfg.train = TrainConfig { batch_size: 32, epochs: 2, ..Default::default() };
    std::fs::write(dir.join("exp.toml"), cfg.to_toml().unwrap()).unwrap();
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_tiny_config(d);

    let o = shmrep(d, &["--config", "exp.toml", "simulate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("data").is_dir());

    let o = shmrep(d, &["--config", "exp.toml", "prepare"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("cache written"));
    let o = shmrep(d, &["--config", "exp.toml", "prepare"]);
    assert!(stdout(&o).contains("cache up to date"));

    let o = shmrep(d, &["--config", "exp.toml", "--seed", "0", "train", "--variant", "F"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = d.join("out/runs/F-s0");
    for f in ["checkpoint.shmr", "train_log.csv", "config.toml", "run.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }

    let o = shmrep(d, &["--config", "exp.toml", "evaluate", "--variant", "F", "--latent", "dmg", "--group-by-excitation"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("balanced accuracy"));
    let ev = d.join("out/eval/F-s0-z_dmg");
    for f in ["report.json", "scores.csv", "per_excitation.csv", "latents.csv"] {
        assert!(ev.join(f).is_file(), "{f} missing");
    }

    let o = shmrep(d, &["--config", "exp.toml", "report"]);
    assert!(o.status.success());
    assert!(d.join("out/report/loss_curves.csv").is_file());
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[train]\nno_such_key = 1\n").unwrap();
    let o = shmrep(tmp.path(), &["--config", "bad.toml", "prepare"]);
    assert_eq!(o.status.code(), Some(1));
    let o = shmrep(tmp.path(), &["--config", "missing.toml", "prepare"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_data_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    write_tiny_config(tmp.path());
    let o = shmrep(tmp.path(), &["--config", "exp.toml", "prepare"]);
    assert_eq!(o.status.code(), Some(2));
    let o = shmrep(tmp.path(), &["--config", "exp.toml", "train"]);
    assert_eq!(o.status.code(), Some(2));
}
