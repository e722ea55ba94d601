//! Result export: CSV with fixed column order and 17-digit numbers, JSON,
//! and the run manifest. All files go through [`OutputDir`].

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wentzell_core::io::format_f64;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(CliError::UnsupportedFormat(other.into())),
        }
    }
}

/// A CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Missing,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Num)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format_f64(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Output directory; refuses names that would escape it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io {
            path: root.to_path_buf(),
            source: e,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    fn target(&self, name: &str) -> Result<PathBuf, CliError> {
        let ok = !name.is_empty()
            && !name.starts_with('.')
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
        if !ok {
            return Err(CliError::OutputName(name.into()));
        }
        Ok(self.root.join(name))
    }

    /// Writes through a temporary file in the same directory, then renames.
    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.target(name)?;
        let tmp = self.root.join(format!(".{name}.tmp"));
        let io = |e| CliError::Io {
            path: path.clone(),
            source: e,
        };
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.write_atomic(name, bytes)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry {
            path: name.into(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        self.write(name, table.to_csv().as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Exports `table` as CSV or as a JSON array of row objects.
    pub fn export(&mut self, stem: &str, table: &Table, format: Format) -> Result<(), CliError> {
        match format {
            Format::Csv => self.write_csv(&format!("{stem}.csv"), table),
            Format::Json => {
                let rows: Vec<serde_json::Map<String, serde_json::Value>> = table
                    .rows
                    .iter()
                    .map(|row| {
                        table
                            .columns
                            .iter()
                            .zip(row)
                            .map(|(c, v)| {
                                let v = match v {
                                    Cell::Num(x) => serde_json::json!(x),
                                    Cell::Int(x) => serde_json::json!(x),
                                    Cell::Text(s) => serde_json::json!(s),
                                    Cell::Missing => serde_json::Value::Null,
                                };
                                (c.to_string(), v)
                            })
                            .collect()
                    })
                    .collect();
                self.write_json(&format!("{stem}.json"), &rows)
            }
        }
    }

    /// Writes `manifest.json` last, listing every file written so far.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        manifest.files = self.files.clone();
        manifest.finished = timestamp();
        self.write_json(MANIFEST_NAME, &manifest)?;
        Ok(manifest)
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    /// SHA-256 of the resolved configuration as JSON.
    pub config_hash: String,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn start<T: Serialize>(subcommand: &str, config: &T, seed: u64) -> Result<Self, CliError> {
        let json = serde_json::to_vec(config)?;
        Ok(Self {
            subcommand: subcommand.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: sha256_hex(&json),
            seed,
            started: timestamp(),
            finished: String::new(),
            files: Vec::new(),
        })
    }
}

/// UTC time as RFC 3339; pinned by `SOURCE_DATE_EPOCH` when set.
pub fn timestamp() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<i64>().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs() as i64)
        });
    time::OffsetDateTime::from_unix_timestamp(secs)
        .ok()
        .and_then(|t| t.format(&time::format_description::well_known::Rfc3339).ok())
        .unwrap_or_else(|| secs.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_csv() {
        let t = Table::new(&["a", "b"]);
        assert_eq!(t.to_csv(), "a,b\n");
    }

    #[test]
    fn number_format_round_trips() {
        let mut t = Table::new(&["x", "n", "m"]);
        t.push(vec![0.1.into(), 3usize.into(), Cell::Missing]);
        let csv = t.to_csv();
        let line = csv.lines().nth(1).unwrap();
        let x: f64 = line.split(',').next().unwrap().parse().unwrap();
        assert_eq!(x, 0.1);
        assert_eq!(line, "1.0000000000000001e-1,3,");
    }

    #[test]
    fn rejects_escaping_names_and_unknown_formats() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        assert!(matches!(out.write("../x.csv", b""), Err(CliError::OutputName(_))));
        assert!(matches!(out.write("a/b.csv", b""), Err(CliError::OutputName(_))));
        assert!(matches!("xml".parse::<Format>(), Err(CliError::UnsupportedFormat(_))));
        out.write("ok.csv", b"a\n").unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("ok.csv")]);
    }

    #[test]
    fn json_export() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        let mut t = Table::new(&["s", "ratio"]);
        t.push(vec![2.0.into(), None.into()]);
        out.export("t", &t, Format::Json).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("t.json")).unwrap()).unwrap();
        assert_eq!(v, serde_json::json!([{"s": 2.0, "ratio": null}]));
    }
}
