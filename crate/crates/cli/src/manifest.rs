//! Run manifests and the result tables that point back to them.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ivcheck_core::Config;

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub command: String,
    /// Arguments after the program name, with the seed made explicit and
    /// without `--config`, `--out` and `--jobs`.
    pub args: Vec<String>,
    pub config: Config,
    pub seed: u64,
    pub seed_source: String,
    pub version: String,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
    pub diagnostics: serde_json::Value,
}

/// Identifier shared by a manifest and every table of its run: a hash of the
/// arguments, the resolved configuration and the library version.
pub fn run_id(args: &[String], config: &Config) -> String {
    let mut h = DefaultHasher::new();
    args.hash(&mut h);
    config.to_toml_string().hash(&mut h);
    env!("CARGO_PKG_VERSION").hash(&mut h);
    format!("{:016x}", h.finish())
}

/// Collects the tables of one run under a directory.
pub struct OutputDir {
    dir: PathBuf,
    run_id: String,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path, run_id: String) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), run_id, written: Vec::new() })
    }

    /// Writes `header` and `rows` with a leading `run_id` column.
    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
        w.write_record(std::iter::once("run_id").chain(header.iter().copied())).map_err(io)?;
        for row in rows {
            w.write_record(std::iter::once(self.run_id.as_str()).chain(row.iter().map(String::as_str))).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Re-emits CSV text produced elsewhere with the `run_id` column added.
    pub fn table_from_csv(&mut self, name: &str, text: &[u8]) -> Result<(), CliError> {
        let mut r = csv::Reader::from_reader(text);
        let header: Vec<String> = r.headers().map_err(|e| CliError::Io(e.to_string()))?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()
            .map_err(|e| CliError::Io(e.to_string()))?;
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        self.table(name, &header, &rows)
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<PathBuf, CliError> {
        manifest.outputs = self.written;
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn load(path: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{} is not a manifest: {e}", path.display())))
}
