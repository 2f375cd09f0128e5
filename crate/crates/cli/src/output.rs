//! Run directories: CSV tables, the effective configuration and a manifest
//! of SHA-256 digests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_sha256: String,
    started_unix: f64,
    finished_unix: f64,
    status: &'a str,
    files: &'a [FileEntry],
}

/// Output directory of one command. All writes happen from one thread.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    command: String,
    started: SystemTime,
    files: Vec<FileEntry>,
}

impl RunDir {
    pub fn create(root: &Path, command: &str) -> CliResult<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            started: SystemTime::now(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        std::fs::write(self.root.join(name), text)?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(text.as_bytes()),
            bytes: text.len() as u64,
        });
        log::debug!("wrote {}", self.root.join(name).display());
        Ok(())
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> CliResult<()> {
        self.write_text(name, &table.render())
    }

    /// Writes `manifest.toml` listing every file written so far.
    pub fn finish(self, config_text: &str, status: &str) -> CliResult<PathBuf> {
        let manifest = Manifest {
            tool: "qident",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            config_sha256: sha256_hex(config_text.as_bytes()),
            started_unix: unix_seconds(self.started),
            finished_unix: unix_seconds(SystemTime::now()),
            status,
            files: &self.files,
        };
        let text = toml::to_string(&manifest).map_err(|e| crate::error::CliError::Other(e.to_string()))?;
        std::fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(self.root)
    }
}

fn unix_seconds(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Comma-separated table with a header row. Floats are written in their
/// shortest round-trip form, so rerunning a deterministic command
/// reproduces the file byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn num(x: f64) -> String {
    let mut s = String::new();
    write!(s, "{x}").expect("writing to a String");
    s
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
