//! Artifact writing, checksums and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::svg::{self, Panel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
    All,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::All)
    }

    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::All)
    }

    pub fn svg(self) -> bool {
        matches!(self, Format::Svg | Format::All)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Undefined,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub mode: String,
    pub seed: u64,
    pub status: Status,
    pub config: serde_json::Value,
    pub files: Vec<FileRecord>,
    pub wall_clock_seconds: f64,
    pub summary: BTreeMap<String, serde_json::Value>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Ok => 0,
            Status::Undefined => 2,
        }
    }
}

#[derive(Debug)]
pub struct WriteError {
    pub path: PathBuf,
    pub source: io::Error,
}

impl std::fmt::Display for WriteError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "writing {}: {}", self.path.display(), self.source)
    }
}

impl std::error::Error for WriteError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// Output directory plus the checksum record of everything written to it.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    format: Format,
    files: Vec<FileRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Artifacts {
    pub fn new(dir: &Path, format: Format) -> Result<Self, WriteError> {
        fs::create_dir_all(dir).map_err(|source| WriteError { path: dir.to_path_buf(), source })?;
        Ok(Self { dir: dir.to_path_buf(), format, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn files(&self) -> &[FileRecord] {
        &self.files
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), WriteError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| WriteError { path, source })?;
        self.files.push(FileRecord { name: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn csv<F>(&mut self, name: &str, fill: F) -> Result<(), WriteError>
    where
        F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
    {
        if !self.format.csv() {
            return Ok(());
        }
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|source| WriteError { path: self.dir.join(name), source })?;
        self.put(name, &buf)
    }

    pub fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), WriteError> {
        if !self.format.json() {
            return Ok(());
        }
        let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    pub fn svg(&mut self, name: &str, panels: &[Panel]) -> Result<(), WriteError> {
        if !self.format.svg() {
            return Ok(());
        }
        self.put(name, svg::render(panels).as_bytes())
    }
}

/// Writes `summary.svg` (when SVG output is enabled) and `manifest.json`.
/// The manifest lists every data file with its SHA-256.
pub fn emit_report(manifest: &mut RunManifest, artifacts: &mut Artifacts, panels: &[Panel]) -> Result<(), WriteError> {
    artifacts.svg("summary.svg", panels)?;
    manifest.files = artifacts.files().to_vec();
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    let path = artifacts.dir().join("manifest.json");
    fs::write(&path, text).map_err(|source| WriteError { path, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RunManifest {
        RunManifest {
            version: "0".into(),
            mode: "strobe".into(),
            seed: 1,
            status: Status::Ok,
            config: serde_json::json!({}),
            files: Vec::new(),
            wall_clock_seconds: 0.0,
            summary: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn empty_result_set_gives_valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut art = Artifacts::new(dir.path(), Format::Csv).unwrap();
        let mut m = manifest();
        emit_report(&mut m, &mut art, &[]).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(v["files"].as_array().unwrap().len(), 0);
        assert_eq!(v["status"], "ok");
    }

    #[test]
    fn format_filters_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut art = Artifacts::new(dir.path(), Format::Json).unwrap();
        art.csv("a.csv", |w| {
            use std::io::Write;
            writeln!(w, "x")
        })
        .unwrap();
        art.json("a.json", &serde_json::json!({"x": 1})).unwrap();
        assert_eq!(art.files().len(), 1);
        assert_eq!(art.files()[0].name, "a.json");
        assert!(!dir.path().join("a.csv").exists());
    }
}
