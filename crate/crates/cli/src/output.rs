//! CSV tables and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::args::Command;

/// Shortest text that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Collects the files written by one run.
pub struct Artifacts {
    dir: PathBuf,
    pub written: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    /// Writes a UTF-8, LF-terminated CSV with a header row.
    pub fn csv<R, S>(&mut self, name: &str, header: &[&str], rows: R) -> Result<()>
    where
        R: IntoIterator<Item = Vec<S>>,
        S: AsRef<[u8]>,
    {
        let path = self.path(name);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            debug_assert_eq!(row.len(), header.len(), "{name}");
            w.write_record(row)?;
        }
        w.flush().with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    /// Renders a plot into `name`; plotting failures are reported but not fatal.
    pub fn svg(&mut self, name: &str, draw: impl FnOnce(&Path) -> Result<()>) {
        let path = self.path(name);
        if let Err(e) = draw(&path) {
            eprintln!("warning: could not draw {}: {e:#}", path.display());
            self.written.pop();
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Every resolved flag of the subcommand.
    pub command: Command,
    pub seed: u64,
    pub jobs: usize,
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    pub toolkit_version: String,
    pub wall_clock_seconds: f64,
    pub artifacts: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

impl RunManifest {
    pub fn write(&self) -> Result<PathBuf> {
        let path = self.out.join(MANIFEST);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 2.5e17, -0.0, 7.0] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(opt(None), "");
    }

    #[test]
    fn csv_has_header_and_lf_endings() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::new(dir.path()).unwrap();
        a.csv("t.csv", &["a", "b"], vec![vec!["1".to_string(), "x,y".to_string()]]).unwrap();
        a.csv("empty.csv", &["a"], Vec::<Vec<String>>::new()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("t.csv")).unwrap(), "a,b\n1,\"x,y\"\n");
        assert_eq!(fs::read_to_string(dir.path().join("empty.csv")).unwrap(), "a\n");
        assert_eq!(a.written, vec!["t.csv", "empty.csv"]);
    }
}
