//! Versioned little-endian f64 array files, one per cache entry.
//!
//! Layout: `b"SHMARR"`, u16 version, u16 ndim, ndim × u64 shape, then the
//! row-major payload.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::{Error, Result};

const MAGIC: &[u8; 6] = b"SHMARR";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_array(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::contract(format!(
            "array shape {shape:?} does not match {} values",
            data.len()
        )));
    }
    let mut bytes = Vec::with_capacity(10 + 8 * shape.len() + 8 * data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(shape.len() as u16).to_le_bytes());
    for &d in shape {
        bytes.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<StoredArray> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |why: &str| Error::load(path, why.to_string());
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(bad("not an array file"));
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(bad(&format!("unsupported array version {version}")));
    }
    let ndim = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = 10 + 8 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let shape: Vec<usize> = bytes[10..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n: usize = shape.iter().product();
    if bytes.len() != header + 8 * n {
        return Err(bad("payload length does not match shape"));
    }
    let data = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(StoredArray { shape, data })
}

/// Directory of arrays addressed by `(kind, key)`, e.g. `("psd", "rec-w00003")`.
#[derive(Debug, Clone)]
pub struct ArrayStore {
    root: PathBuf,
}

impl ArrayStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, kind: &str, key: &str) -> PathBuf {
        self.root.join(kind).join(format!("{key}.arr"))
    }

    pub fn contains(&self, kind: &str, key: &str) -> bool {
        self.path(kind, key).is_file()
    }

    pub fn put(&self, kind: &str, key: &str, shape: &[usize], data: &[f64]) -> Result<()> {
        write_array(&self.path(kind, key), shape, data)
    }

    pub fn get(&self, kind: &str, key: &str) -> Result<StoredArray> {
        read_array(&self.path(kind, key))
    }
}
