use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use shmrep::config::ExperimentConfig;
use shmrep::damageid::Latent;
use shmrep::pipeline;
use shmrep::training::Variant;
use shmrep::ErrorKind;

#[derive(Parser)]
#[command(name = "shmrep", version, about = "Disentangled representation learning for vibration-based damage identification")]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the seed (training seed, or the scenario seed for `simulate`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override `paths.output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into the data directory.
    Simulate,
    /// Window, normalize and cache windows, PSDs and features.
    Prepare,
    /// Train one model variant.
    Train {
        #[arg(long, default_value = "F")]
        variant: Variant,
    },
    /// Score validation and test windows with a checkpoint.
    Evaluate {
        /// Checkpoint file; defaults to the run of --variant/--seed.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "F")]
        variant: Variant,
        #[arg(long, default_value = "dmg")]
        latent: Latent,
        /// Also write a per-excitation table.
        #[arg(long)]
        group_by_excitation: bool,
    },
    /// Train all configured variants over all seeds and tabulate.
    Ablate {
        /// Comma-separated subset of F,V1,V2,V3.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
    },
    /// Write plot-ready CSVs from the output directory.
    Report,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<shmrep::Error>().map(shmrep::Error::kind) {
        Some(ErrorKind::Config) => 1,
        Some(ErrorKind::Numeric) => 3,
        Some(ErrorKind::Data) | None => 2,
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let cfg = ExperimentConfig { base_dir: std::env::current_dir()?, ..ExperimentConfig::default() };
            cfg.validate()?;
            cfg
        }
    };
    if let Some(out) = &cli.out {
        cfg.paths.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli)?;
    let seed = cli.seed.unwrap_or_else(|| cfg.seeds[0]);
    match cli.command {
        Command::Simulate => {
            if let Some(s) = cli.seed {
                let mut sf = cfg.scenario()?;
                sf.scenario.seed = s;
                let path = cfg.data_dir().join("scenario.override.toml");
                std::fs::create_dir_all(cfg.data_dir()).with_context(|| format!("creating {}", cfg.data_dir().display()))?;
                std::fs::write(&path, toml::to_string_pretty(&sf)?)?;
                cfg.scenario_file = Some(path);
            }
            let n = pipeline::cmd_simulate(&cfg)?;
            println!("simulated {n} records into {}", cfg.data_dir().display());
        }
        Command::Prepare => {
            let s = pipeline::cmd_prepare(&cfg)?;
            let (tr, va, te) = s.counts;
            let state = if s.written { "written" } else { "up to date" };
            println!("{} windows, split {tr}/{va}/{te}, {} baseline; cache {state}", s.windows, s.baseline);
        }
        Command::Train { variant } => {
            let out = pipeline::cmd_train(&cfg, variant, seed)?;
            let last = out.log.entries.iter().rev().find(|e| e.split == shmrep::training::LogSplit::Train);
            if let Some(e) = last {
                println!("epoch {}: train loss {:.6}", e.epoch, e.losses.total);
            }
            println!("checkpoint {} (sha256 {})", out.dir.join("checkpoint.shmr").display(), out.checkpoint.param_checksum());
        }
        Command::Evaluate { checkpoint, variant, latent, group_by_excitation } => {
            let ckpt = checkpoint.unwrap_or_else(|| {
                cfg.output_dir().join("runs").join(pipeline::run_name(variant, seed)).join("checkpoint.shmr")
            });
            let r = pipeline::cmd_evaluate(&cfg, &ckpt, latent, group_by_excitation)?;
            let o = &r.overall;
            println!(
                "{}: TNR {:.3} TPR {:.3} balanced accuracy {:.3} (tau {:.4}, p {})",
                r.representation, o.tnr, o.tpr, o.balanced_accuracy, r.tau, r.percentile
            );
            for (k, c) in r.per_excitation.iter().filter(|_| group_by_excitation) {
                println!("  excitation {k}: TNR {:.3} TPR {:.3} balanced accuracy {:.3}", c.tnr, c.tpr, c.balanced_accuracy);
            }
        }
        Command::Ablate { variants } => {
            if let Some(v) = variants {
                cfg.ablation.variants = v;
            }
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let table = pipeline::cmd_ablate(&cfg)?;
            for r in &table.rows {
                println!(
                    "{:3} {:>4}  TNR {:.3}±{:.3}  TPR {:.3}±{:.3}  BalAcc {:.3}±{:.3}",
                    r.model, r.excitation, r.tnr_mean, r.tnr_std, r.tpr_mean, r.tpr_std, r.bal_acc_mean, r.bal_acc_std
                );
            }
        }
        Command::Report => {
            for p in pipeline::cmd_report(&cfg.output_dir())? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
