//! Run manifests and CSV/JSON writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::CliError;

pub const TOOL: &str = "mechforge";

/// Everything that determines a run's outputs. Output paths and timestamps
/// are deliberately left out so that reruns hash identically.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub versions: Value,
    pub command: String,
    pub args: Value,
    pub seed: u64,
    pub config: Config,
    pub config_hash: String,
    pub manifest_hash: String,
}

/// SHA-256 of the canonical (key-sorted, compact) JSON encoding.
pub fn canonical_hash<T: Serialize>(value: &T) -> Result<String, CliError> {
    // serde_json::Value keeps object keys sorted, which makes this canonical.
    let v = serde_json::to_value(value)?;
    let text = serde_json::to_string(&v)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

impl Manifest {
    pub fn new(command: &str, args: Value, config: &Config) -> Result<Manifest, CliError> {
        let versions = json!({
            "mechforge": env!("CARGO_PKG_VERSION"),
            "mechforge-core": mechforge_core::VERSION,
        });
        let config_hash = canonical_hash(config)?;
        let body = json!({
            "tool": TOOL,
            "versions": versions,
            "command": command,
            "args": args,
            "seed": config.seed,
            "config_hash": config_hash,
            "config": config,
        });
        let manifest_hash = canonical_hash(&body)?;
        Ok(Manifest {
            tool: TOOL,
            versions,
            command: command.to_string(),
            args,
            seed: config.seed,
            config: config.clone(),
            config_hash,
            manifest_hash,
        })
    }
}

/// Output directory of one run; every file written through it carries the
/// manifest hash.
pub struct OutDir {
    root: PathBuf,
    manifest: Manifest,
}

impl OutDir {
    pub fn create(root: &Path, manifest: Manifest) -> Result<OutDir, CliError> {
        fs::create_dir_all(root)?;
        let out = OutDir { root: root.to_path_buf(), manifest };
        out.write_json("manifest.json", &out.manifest)?;
        Ok(out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn csv(&self, name: &str, header: &[&str]) -> Result<CsvTable, CliError> {
        CsvTable::create(&self.path(name), &self.manifest.manifest_hash, header)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(())
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        fs::write(self.path(name), text)?;
        Ok(())
    }
}

/// A CSV file whose first line is `# manifest=<hash>`, followed by a header.
pub struct CsvTable {
    writer: csv::Writer<fs::File>,
}

impl CsvTable {
    pub fn create(path: &Path, manifest_hash: &str, header: &[&str]) -> Result<CsvTable, CliError> {
        use std::io::Write;
        let mut file = fs::File::create(path)?;
        writeln!(file, "# manifest={manifest_hash}")?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header)?;
        Ok(CsvTable { writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Shortest round-trip formatting; empty for missing or non-finite values.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Reads a CSV written by [`CsvTable`] (or any plain CSV), skipping `#` lines.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let header = reader.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_hash_ignores_nothing_that_matters() {
        let c = Config::default();
        let a = Manifest::new("study", json!({}), &c).unwrap();
        let b = Manifest::new("study", json!({}), &c).unwrap();
        assert_eq!(a.manifest_hash, b.manifest_hash);
        let mut c2 = c.clone();
        c2.seed = 2;
        let d = Manifest::new("study", json!({}), &c2).unwrap();
        assert_ne!(a.manifest_hash, d.manifest_hash);
        assert_ne!(a.config_hash, d.config_hash);
        assert_eq!(a.manifest_hash.len(), 64);
    }

    #[test]
    fn csv_carries_hash_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new("metrics", json!({"x": 1}), &Config::default()).unwrap();
        let hash = m.manifest_hash.clone();
        let out = OutDir::create(dir.path(), m).unwrap();
        let mut t = out.csv("t.csv", &["a", "b"]).unwrap();
        t.row([num(0.1), opt(None)]).unwrap();
        t.finish().unwrap();
        let text = fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(text, format!("# manifest={hash}\na,b\n0.1,\n"));
        let (h, rows) = read_csv(&dir.path().join("t.csv")).unwrap();
        assert_eq!(h, ["a", "b"]);
        assert_eq!(rows, [["0.1", ""]]);
        assert!(dir.path().join("manifest.json").exists());
    }
}
