use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SignalWindow;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio(pub f64, pub f64, pub f64);

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio(0.6, 0.2, 0.2)
    }
}

impl SplitRatio {
    fn validate(&self) -> Result<()> {
        let SplitRatio(a, b, c) = *self;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratio must be positive and sum to 1, got ({a}, {b}, {c})"
            )));
        }
        Ok(())
    }

    /// Split sizes for `n` items: train and validation are rounded, test takes the rest.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64) * self.0).round() as usize;
        let val = (((n as f64) * self.1).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// Which training windows form the baseline subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineRule {
    /// Windows whose damage label is in the list.
    DamageLabels { labels: Vec<i64> },
    /// Windows whose timestamp lies in `[start, end)`.
    TimeRange { start: DateTime<Utc>, end: DateTime<Utc> },
}

impl BaselineRule {
    pub fn matches(&self, damage_label: i64, timestamp: Option<DateTime<Utc>>) -> bool {
        match self {
            BaselineRule::DamageLabels { labels } => labels.contains(&damage_label),
            BaselineRule::TimeRange { start, end } => {
                timestamp.is_some_and(|t| t >= *start && t < *end)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub key: String,
    pub damage_label: i64,
    pub excitation_label: i64,
    pub baseline: bool,
    pub split: Split,
    pub timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices of entries in `split`, in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let count = |s| self.entries.iter().filter(|e| e.split == s).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }

    pub fn baseline_count(&self) -> usize {
        self.entries.iter().filter(|e| e.baseline).count()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("jsonl.tmp");
        let file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        drop(w);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line)
                .map_err(|e| Error::load(path, format!("line {}: {e}", n + 1)))?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }
}

/// Assign a seeded random train/val/test split to `windows` (kept in input
/// order) and flag training windows matching `rule` as baseline.
pub fn build_manifest(
    windows: &[SignalWindow],
    ratio: SplitRatio,
    rule: &BaselineRule,
    seed: u64,
) -> Result<DatasetManifest> {
    ratio.validate()?;
    if windows.is_empty() {
        return Err(Error::EmptyInput("no windows to split".into()));
    }
    let n = windows.len();
    let (n_train, n_val, _) = ratio.counts(n);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut split = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let entries: Vec<ManifestEntry> = windows
        .iter()
        .zip(split)
        .map(|(w, split)| ManifestEntry {
            key: w.key(),
            damage_label: w.damage_label,
            excitation_label: w.excitation_label,
            baseline: split == Split::Train && rule.matches(w.damage_label, w.timestamp),
            split,
            timestamp: w.timestamp,
        })
        .collect();

    if !entries.iter().any(|e| e.baseline) {
        return Err(Error::EmptyBaseline);
    }
    Ok(DatasetManifest { entries })
}
