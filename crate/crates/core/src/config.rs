//! Experiment configuration: one TOML file describing data, preprocessing,
//! model, training and scoring. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::damageid::DamageIdParams;
use crate::features::FeatureParams;
use crate::model::{ConvStage, ModelConfig};
use crate::signals::{BaselineRule, PsdNormalization, SplitRatio, WelchParams, DEFAULT_STD_EPS};
use crate::synthdata::{default_scenario, default_structure, ScenarioSpec, StructureSpec};
use crate::training::{TrainConfig, Variant};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            cache_dir: "cache".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalsConfig {
    pub window_length: usize,
    pub overlap: usize,
    /// Integer decimation applied to records before windowing; 1 keeps the rate.
    pub decimate: usize,
    pub welch: WelchParams,
    pub psd_normalization: PsdNormalization,
    pub std_eps: f64,
    pub split_ratio: SplitRatio,
    pub split_seed: u64,
    pub baseline_rule: BaselineRule,
}

impl Default for SignalsConfig {
    fn default() -> Self {
        Self {
            window_length: 2048,
            overlap: 1024,
            decimate: 1,
            welch: WelchParams::default(),
            psd_normalization: PsdNormalization::UnitMax,
            std_eps: DEFAULT_STD_EPS,
            split_ratio: SplitRatio::default(),
            split_seed: 0,
            baseline_rule: BaselineRule::DamageLabels { labels: vec![1] },
        }
    }
}

/// Structure and scenario of a synthetic dataset, as stored in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub structure: StructureSpec,
    pub scenario: ScenarioSpec,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self { structure: default_structure(), scenario: default_scenario() }
    }
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read scenario file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("scenario file {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
    pub include_features: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { variants: Variant::ALL.to_vec(), include_features: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub paths: Paths,
    /// Scenario TOML for `simulate`; the built-in default scenario when absent.
    pub scenario_file: Option<PathBuf>,
    pub signals: SignalsConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub damageid: DamageIdParams,
    pub features: FeatureParams,
    pub seeds: Vec<u64>,
    pub ablation: AblationConfig,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Encoder of the desk-scale experiment: four k7/s4 stages, H = 16.
fn desk_model() -> ModelConfig {
    ModelConfig {
        channels: 4,
        latent_dim: 16,
        stages: [16, 32, 32, 32].iter().map(|&channels| ConvStage { channels, kernel: 7, stride: 4 }).collect(),
        psd_hidden: 128,
        ..ModelConfig::default()
    }
}

/// The desk-scale experiment on the default synthetic scenario: records
/// decimated to 25 Hz, 2048-sample windows, a small model and 30 epochs.
impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            scenario_file: None,
            signals: SignalsConfig { decimate: 4, ..SignalsConfig::default() },
            model: desk_model(),
            train: TrainConfig { batch_size: 64, epochs: 30, ..TrainConfig::default() },
            damageid: DamageIdParams::default(),
            features: FeatureParams::default(),
            seeds: vec![0, 1, 2],
            ablation: AblationConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse, validate and check that referenced files exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        if let Some(f) = &cfg.scenario_file {
            let p = cfg.resolve(f);
            if !p.is_file() {
                return Err(Error::Config(format!("scenario file {} does not exist", p.display())));
            }
        }
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.resolve(&self.paths.data_dir)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.resolve(&self.paths.cache_dir)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output_dir)
    }

    pub fn scenario(&self) -> Result<ScenarioFile> {
        match &self.scenario_file {
            Some(f) => ScenarioFile::load(&self.resolve(f)),
            None => Ok(ScenarioFile::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.signals;
        if s.window_length == 0 || s.overlap >= s.window_length || s.decimate == 0 {
            return Err(Error::Config("signals: need 0 <= overlap < window_length and decimate >= 1".into()));
        }
        if s.welch.segment_length > s.window_length || s.welch.fft_length < s.welch.segment_length {
            return Err(Error::Config("signals.welch: segment_length must not exceed window_length, fft_length must be at least segment_length".into()));
        }
        if self.model.window != s.window_length || self.model.psd_bins != s.welch.bins() {
            return Err(Error::Config(format!(
                "model expects {}-sample windows and {} PSD bins; signals produce {} and {}",
                self.model.window,
                self.model.psd_bins,
                s.window_length,
                s.welch.bins()
            )));
        }
        self.model.validate()?;
        self.train.validate()?;
        if !(0.0..=100.0).contains(&self.damageid.percentile) {
            return Err(Error::Config("damageid.percentile must lie in [0, 100]".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        Ok(())
    }
}
