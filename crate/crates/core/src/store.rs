//! On-disk record store: per-point measurement CSVs, correlation sidecars
//! and the campaign manifest.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::campaign::{CampaignConfig, PointKey};
use crate::engine::{CorrelationBlocks, Measurement};

pub const MANIFEST_FILE: &str = "manifest.json";
const RECORD_COLUMNS: [&str; 6] = ["sweep", "E", "m", "abs_m", "m2", "m4"];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: manifest hash {found} does not match {expected}")]
    HashMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("no manifest in {0}")]
    MissingManifest(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> StoreError {
    StoreError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Outcome of one grid point as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub key: PointKey,
    pub stem: String,
    pub seed: u64,
    /// Imaginary-time slices for quantum points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slices: Option<usize>,
    pub status: PointStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub n_equil: u64,
    #[serde(default)]
    pub acceptance: f64,
    #[serde(default)]
    pub mean_cluster: f64,
    #[serde(default)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_hash: String,
    pub code_version: String,
    pub rng_algorithm: String,
    pub config: CampaignConfig,
    /// Caveat attached to quantum runs about the time-slice rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect_rule: Option<String>,
    pub points: Vec<PointRecord>,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<(), StoreError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| format_err(&path, e.to_string()))?;
        fs::write(&path, text + "\n").map_err(io_err(&path))
    }

    pub fn read(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(StoreError::MissingManifest(dir.to_path_buf()));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| format_err(&path, e.to_string()))
    }
}

pub fn record_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.csv"))
}

pub fn correlation_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.corr.csv"))
}

/// Writes `# key: value` header lines.
fn write_header(out: &mut impl Write, lines: &[(&str, String)]) -> std::io::Result<()> {
    for (k, v) in lines {
        writeln!(out, "# {k}: {v}")?;
    }
    Ok(())
}

/// Splits a file into its `# key: value` header and the CSV body.
fn read_header(path: &Path) -> Result<(Vec<(String, String)>, String), StoreError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut header = Vec::new();
    let mut body = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if let Some(rest) = line.strip_prefix("# ") {
            if body.is_empty() {
                if let Some((k, v)) = rest.split_once(": ") {
                    header.push((k.to_string(), v.to_string()));
                }
                continue;
            }
        }
        body.push_str(&line);
        body.push('\n');
    }
    Ok((header, body))
}

fn header_value<'a>(header: &'a [(String, String)], key: &str) -> Option<&'a str> {
    header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn check_hash(path: &Path, header: &[(String, String)], expected: &str) -> Result<(), StoreError> {
    let found = header_value(header, "manifest_hash").unwrap_or("");
    if found != expected {
        return Err(StoreError::HashMismatch {
            path: path.to_path_buf(),
            found: found.to_string(),
            expected: expected.to_string(),
        });
    }
    Ok(())
}

/// Writes the measurement series of one point.
pub fn write_record(
    path: &Path,
    manifest_hash: &str,
    key: &PointKey,
    measurements: &[Measurement],
) -> Result<(), StoreError> {
    let mut buf = Vec::new();
    let key_json = serde_json::to_string(key).map_err(|e| format_err(path, e.to_string()))?;
    write_header(
        &mut buf,
        &[("manifest_hash", manifest_hash.to_string()), ("point", key_json)],
    )
    .map_err(io_err(path))?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(RECORD_COLUMNS).map_err(|e| format_err(path, e.to_string()))?;
        for m in measurements {
            w.write_record([
                m.sweep.to_string(),
                m.energy.to_string(),
                m.m.to_string(),
                m.abs_m.to_string(),
                m.m2.to_string(),
                m.m4.to_string(),
            ])
            .map_err(|e| format_err(path, e.to_string()))?;
        }
        w.flush().map_err(io_err(path))?;
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_record(path: &Path, manifest_hash: &str) -> Result<Vec<Measurement>, StoreError> {
    let (header, body) = read_header(path)?;
    check_hash(path, &header, manifest_hash)?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let cols = r.headers().map_err(|e| format_err(path, e.to_string()))?.clone();
    if cols.iter().ne(RECORD_COLUMNS) {
        return Err(format_err(path, format!("unexpected columns {cols:?}")));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| format_err(path, e.to_string()))?;
        let f = |i: usize| -> Result<f64, StoreError> {
            row[i].parse().map_err(|_| format_err(path, format!("bad number {:?}", &row[i])))
        };
        let sweep: u64 = row[0].parse().map_err(|_| format_err(path, "bad sweep index"))?;
        out.push(Measurement {
            sweep,
            energy: f(1)?,
            m: f(2)?,
            abs_m: f(3)?,
            m2: f(4)?,
            m4: f(5)?,
        });
    }
    Ok(out)
}

/// Writes the correlation sidecar: one row per distance with the run
/// average and the block means.
pub fn write_correlation(
    path: &Path,
    manifest_hash: &str,
    corr: &CorrelationBlocks,
) -> Result<(), StoreError> {
    let mut buf = Vec::new();
    write_header(
        &mut buf,
        &[
            ("manifest_hash", manifest_hash.to_string()),
            ("block_len", corr.block_len.to_string()),
            ("count", corr.count.to_string()),
        ],
    )
    .map_err(io_err(path))?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut cols = vec!["r".to_string(), "G_accumulator".to_string()];
        cols.extend((0..corr.blocks.len()).map(|b| format!("block_{b}")));
        w.write_record(&cols).map_err(|e| format_err(path, e.to_string()))?;
        for (r, total) in corr.total.iter().enumerate() {
            let mut row = vec![r.to_string(), total.to_string()];
            row.extend(corr.blocks.iter().map(|b| b[r].to_string()));
            w.write_record(&row).map_err(|e| format_err(path, e.to_string()))?;
        }
        w.flush().map_err(io_err(path))?;
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_correlation(path: &Path, manifest_hash: &str) -> Result<CorrelationBlocks, StoreError> {
    let (header, body) = read_header(path)?;
    check_hash(path, &header, manifest_hash)?;
    let num = |key: &str| -> Result<usize, StoreError> {
        header_value(&header, key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| format_err(path, format!("missing {key}")))
    };
    let block_len = num("block_len")?;
    let count = num("count")?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let n_blocks = r.headers().map_err(|e| format_err(path, e.to_string()))?.len().saturating_sub(2);
    let mut total = Vec::new();
    let mut blocks = vec![Vec::new(); n_blocks];
    for row in r.records() {
        let row = row.map_err(|e| format_err(path, e.to_string()))?;
        let vals: Vec<f64> = row
            .iter()
            .skip(1)
            .map(|v| v.parse().map_err(|_| format_err(path, format!("bad number {v:?}"))))
            .collect::<Result<_, _>>()?;
        if vals.len() != n_blocks + 1 {
            return Err(format_err(path, "ragged row"));
        }
        total.push(vals[0]);
        for (b, v) in blocks.iter_mut().zip(&vals[1..]) {
            b.push(*v);
        }
    }
    Ok(CorrelationBlocks {
        block_len,
        blocks,
        total,
        count,
    })
}

/// A point loaded back from the store.
#[derive(Debug, Clone)]
pub struct StoredPoint {
    pub record: PointRecord,
    pub measurements: Vec<Measurement>,
    pub correlation: Option<CorrelationBlocks>,
}

/// Loads the manifest and every successful point of a store.
pub fn load_store(dir: &Path) -> Result<(Manifest, Vec<StoredPoint>), StoreError> {
    let manifest = Manifest::read(dir)?;
    let mut points = Vec::new();
    for rec in manifest.points.iter().filter(|p| p.status == PointStatus::Ok) {
        let measurements = read_record(&record_path(dir, &rec.stem), &manifest.manifest_hash)?;
        let cpath = correlation_path(dir, &rec.stem);
        let correlation = if cpath.exists() {
            Some(read_correlation(&cpath, &manifest.manifest_hash)?)
        } else {
            None
        };
        points.push(StoredPoint {
            record: rec.clone(),
            measurements,
            correlation,
        });
    }
    Ok((manifest, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::Mode;

    fn key() -> PointKey {
        PointKey {
            mode: Mode::Classical1d,
            q: 0.75,
            size: 16,
            control: 1.25,
            field: 0.0,
            dtau: None,
        }
    }

    #[test]
    fn record_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let ms: Vec<Measurement> = (0..5).map(|i| Measurement::new(i, -3.5 + i as f64 * 0.1, 0.1 / 3.0 * i as f64)).collect();
        write_record(&path, "abc", &key(), &ms).unwrap();
        assert_eq!(read_record(&path, "abc").unwrap(), ms);
        assert!(matches!(read_record(&path, "abd"), Err(StoreError::HashMismatch { .. })));
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# manifest_hash: abc\n"));
    }

    #[test]
    fn correlation_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let corr = CorrelationBlocks {
            block_len: 3,
            blocks: vec![vec![1.0, 0.25, 0.125], vec![1.0, 0.3, 0.1]],
            total: vec![7.0, 1.9, 0.7],
            count: 7,
        };
        write_correlation(&path, "h", &corr).unwrap();
        assert_eq!(read_correlation(&path, "h").unwrap(), corr);
    }

    #[test]
    fn hashes_are_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
