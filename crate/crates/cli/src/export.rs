//! CSV and manifest output.
//!
//! Every CSV starts with `#` metadata lines (parameter hash, seed, column
//! units) followed by a header row. Floats are written with 17 significant
//! digits so [`read_csv`] returns exactly the values that were written.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use gbm_wealth::model::ModelParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0} was already written")]
    Duplicate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Series,
    Histogram,
    Matrix,
    Eigenmode,
    QuantileCurve,
    /// Scalar summaries as JSON.
    Report,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub kind: Kind,
    pub params_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExportManifest {
    pub entries: Vec<ManifestEntry>,
}

impl ExportManifest {
    pub fn read(dir: &Path) -> Result<Self, ExportError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| ExportError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ExportError::Json { path, source })
    }
}

/// SHA-256 of the model parameters, seed excluded, as lowercase hex.
pub fn params_hash(p: &ModelParams) -> String {
    let canonical = format!(
        "n_agents={}\nbeta={:?}\nepsilon={:?}\nw1={:?}\nwp={:?}\nmode={}\nt_max={}\nn_runs={}\n",
        p.n_agents, p.beta, p.epsilon, p.w1, p.wp, p.mode, p.t_max, p.n_runs
    );
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Text form of a float that parses back to the same value.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes files into one directory and records each in the manifest.
#[derive(Debug)]
pub struct Exporter {
    dir: PathBuf,
    params_hash: String,
    seed: u64,
    manifest: ExportManifest,
}

impl Exporter {
    pub fn create(dir: &Path, params: &ModelParams) -> Result<Self, ExportError> {
        fs::create_dir_all(dir).map_err(|source| ExportError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            params_hash: params_hash(params),
            seed: params.seed,
            manifest: ExportManifest::default(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// A numeric table. `columns` pairs each header with its unit.
    pub fn csv(
        &mut self,
        name: &str,
        kind: Kind,
        columns: &[(&str, &str)],
        rows: &[Vec<f64>],
    ) -> Result<(), ExportError> {
        let path = self.dir.join(name);
        let mut head = String::new();
        head.push_str(&format!("# params_hash: {}\n", self.params_hash));
        head.push_str(&format!("# seed: {}\n", self.seed));
        let units: Vec<String> = columns.iter().map(|(c, u)| format!("{c} [{u}]")).collect();
        head.push_str(&format!("# units: {}\n", units.join(", ")));
        let mut w = csv::WriterBuilder::new().from_writer(head.into_bytes());
        let csv_err = |source| ExportError::Csv {
            path: path.clone(),
            source,
        };
        w.write_record(columns.iter().map(|(c, _)| *c))
            .map_err(csv_err)?;
        for row in rows {
            w.write_record(row.iter().map(|v| fmt_float(*v)))
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| ExportError::Io {
            path: path.clone(),
            source: e.into_error(),
        })?;
        self.write(name, kind, &bytes)
    }

    /// A JSON report.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), ExportError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|source| ExportError::Json {
            path: self.dir.join(name),
            source,
        })?;
        text.push('\n');
        self.write(name, Kind::Report, text.as_bytes())
    }

    fn write(&mut self, name: &str, kind: Kind, bytes: &[u8]) -> Result<(), ExportError> {
        if name == MANIFEST_FILE || self.manifest.entries.iter().any(|e| e.path == name) {
            return Err(ExportError::Duplicate(name.to_string()));
        }
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| ExportError::Io { path, source })?;
        self.manifest.entries.push(ManifestEntry {
            path: name.to_string(),
            kind,
            params_hash: self.params_hash.clone(),
            seed: self.seed,
        });
        Ok(())
    }

    /// Writes the manifest, entries sorted by path.
    pub fn finish(mut self) -> Result<ExportManifest, ExportError> {
        self.manifest.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let path = self.dir.join(MANIFEST_FILE);
        let mut text =
            serde_json::to_string_pretty(&self.manifest).map_err(|source| ExportError::Json {
                path: path.clone(),
                source,
            })?;
        text.push('\n');
        fs::write(&path, text).map_err(|source| ExportError::Io { path, source })?;
        Ok(self.manifest)
    }
}

/// A parsed CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    /// `# key: value` lines in file order.
    pub metadata: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable, ExportError> {
    let text = fs::read_to_string(path).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let metadata = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l[1..].split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let csv_err = |source| ExportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| ExportError::Format {
                    path: path.to_path_buf(),
                    message: format!("data row {}: {f:?} is not a number", i + 1),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(CsvTable {
        metadata,
        header,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_text_round_trips() {
        for v in [
            0.1,
            1.0 / 3.0,
            -6.0065e-4,
            f64::MIN_POSITIVE,
            1e300,
            0.0,
            -0.0,
            2.0f64.sqrt(),
        ] {
            assert_eq!(fmt_float(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn hash_ignores_seed() {
        let a = ModelParams::default();
        let b = ModelParams {
            seed: 99,
            ..a.clone()
        };
        let c = ModelParams {
            beta: 0.05,
            ..a.clone()
        };
        assert_eq!(params_hash(&a), params_hash(&b));
        assert_ne!(params_hash(&a), params_hash(&c));
        assert_eq!(params_hash(&a).len(), 64);
    }

    #[test]
    fn kinds_serialize_kebab_case() {
        assert_eq!(
            serde_json::to_string(&Kind::QuantileCurve).unwrap(),
            "\"quantile-curve\""
        );
    }
}
