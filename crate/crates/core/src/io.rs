//! Field dumps: raw little-endian `f64` samples in row-major order plus a JSON sidecar.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{LabError, Result};
use crate::grid::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub d: usize,
    pub n: usize,
    pub box_length: f64,
    pub components: usize,
    pub time: f64,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `components` arrays of `n^d` samples each to `path` (binary) and
/// `path.with_extension("json")`.
pub fn write_dump(path: &Path, grid: &GridSpec, components: &[&[f64]], time: f64) -> Result<()> {
    let mut bytes = Vec::with_capacity(components.len() * grid.len() * 8);
    for c in components {
        if c.len() != grid.len() {
            return Err(LabError::ShapeMismatch(format!("component has {} samples, grid {}", c.len(), grid.len())));
        }
        for x in c.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    let header = DumpHeader {
        d: grid.d,
        n: grid.n,
        box_length: grid.box_length,
        components: components.len(),
        time,
    };
    fs::write(sidecar(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<(DumpHeader, Vec<Vec<f64>>)> {
    let header: DumpHeader = serde_json::from_str(&fs::read_to_string(sidecar(path))?)?;
    let bytes = fs::read(path)?;
    let len = header.n.pow(header.d as u32);
    if bytes.len() != 8 * len * header.components {
        return Err(LabError::ShapeMismatch(format!(
            "dump {} has {} bytes, header implies {}",
            path.display(),
            bytes.len(),
            8 * len * header.components
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, values.chunks(len).map(|c| c.to_vec()).collect()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Writes CSV text from a header and rows of already formatted cells.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Shortest round-trip formatting, so identical values give identical text.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::new(2, 8, 3.0).unwrap();
        let a: Vec<f64> = (0..64).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let p = dir.path().join("f.bin");
        write_dump(&p, &g, &[&a, &b], 0.25).unwrap();
        let (h, comps) = read_dump(&p).unwrap();
        assert_eq!(h, DumpHeader { d: 2, n: 8, box_length: 3.0, components: 2, time: 0.25 });
        assert_eq!(comps, vec![a, b]);
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(&raw[..8], &(-3.0f64).to_le_bytes());
    }

    #[test]
    fn dump_rejects_bad_length() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::new(2, 8, 3.0).unwrap();
        assert!(write_dump(&dir.path().join("x.bin"), &g, &[&[1.0, 2.0]], 0.0).is_err());
    }
}
