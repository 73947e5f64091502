//! On-disk record format: `<name>.json` sidecar with metadata plus a data
//! file holding the C×L samples, either CSV (one row per time step, one
//! column per channel) or raw little-endian f64 (channel-major).

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::store::atomic_write;
use super::SignalRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    Csv,
    F64le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    pub name: String,
    pub sample_rate: f64,
    pub damage_label: i64,
    pub excitation_label: i64,
    #[serde(default)]
    pub start_time: Option<DateTime<Utc>>,
    pub channels: usize,
    pub samples: usize,
    pub format: RecordFormat,
    /// Data file name, relative to the sidecar.
    pub data_file: String,
}

pub fn write_record(dir: &Path, record: &SignalRecord, format: RecordFormat) -> Result<PathBuf> {
    record.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data_file = match format {
        RecordFormat::Csv => format!("{}.csv", record.name),
        RecordFormat::F64le => format!("{}.f64", record.name),
    };
    let bytes = match format {
        RecordFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let header: Vec<String> = (0..record.channels()).map(|c| format!("ch{c}")).collect();
            w.write_record(&header)?;
            for t in 0..record.len() {
                w.write_record(record.samples.iter().map(|ch| ch[t].to_string()))?;
            }
            w.into_inner().map_err(|e| Error::Serde(e.to_string()))?
        }
        RecordFormat::F64le => record
            .samples
            .iter()
            .flatten()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
    };
    atomic_write(&dir.join(&data_file), &bytes)?;

    let meta = RecordMeta {
        name: record.name.clone(),
        sample_rate: record.sample_rate,
        damage_label: record.damage_label,
        excitation_label: record.excitation_label,
        start_time: record.start_time,
        channels: record.channels(),
        samples: record.len(),
        format,
        data_file,
    };
    let sidecar = dir.join(format!("{}.json", record.name));
    atomic_write(&sidecar, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(sidecar)
}

pub fn load_record(sidecar: &Path) -> Result<SignalRecord> {
    let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let meta: RecordMeta =
        serde_json::from_str(&text).map_err(|e| Error::load(sidecar, e.to_string()))?;
    let data_path = sidecar.parent().unwrap_or(Path::new(".")).join(&meta.data_file);
    let (c, l) = (meta.channels, meta.samples);

    let samples = match meta.format {
        RecordFormat::Csv => {
            let mut rows = vec![Vec::with_capacity(l); c];
            let mut rdr = csv::Reader::from_path(&data_path)
                .map_err(|e| Error::load(&data_path, e.to_string()))?;
            for rec in rdr.records() {
                let rec = rec.map_err(|e| Error::load(&data_path, e.to_string()))?;
                if rec.len() != c {
                    return Err(Error::load(&data_path, format!("expected {c} columns, got {}", rec.len())));
                }
                for (ch, field) in rows.iter_mut().zip(rec.iter()) {
                    let v: f64 = field
                        .trim()
                        .parse()
                        .map_err(|_| Error::load(&data_path, format!("bad number {field:?}")))?;
                    ch.push(v);
                }
            }
            rows
        }
        RecordFormat::F64le => {
            let bytes = std::fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
            if bytes.len() != 8 * c * l {
                return Err(Error::load(&data_path, format!("expected {} bytes, got {}", 8 * c * l, bytes.len())));
            }
            let flat: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            flat.chunks_exact(l.max(1)).map(<[f64]>::to_vec).collect()
        }
    };
    let record = SignalRecord {
        name: meta.name,
        samples,
        sample_rate: meta.sample_rate,
        start_time: meta.start_time,
        damage_label: meta.damage_label,
        excitation_label: meta.excitation_label,
    };
    if record.len() != l {
        return Err(Error::load(&data_path, format!("expected {l} samples, got {}", record.len())));
    }
    record.validate()?;
    Ok(record)
}

/// Load every record whose sidecar lives in `dir`, sorted by name.
pub fn load_records(dir: &Path) -> Result<Vec<SignalRecord>> {
    let mut sidecars: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    sidecars.sort();
    if sidecars.is_empty() {
        return Err(Error::EmptyInput(format!("no record sidecars in {}", dir.display())));
    }
    sidecars.iter().map(|p| load_record(p)).collect()
}
