//! JSON summaries and CSV tables.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub step_density: Option<f64>,
    pub results: Value,
    /// SHA-256 of the serialized `results`.
    pub results_hash: String,
}

impl Summary {
    pub fn new(command: &str, config_hash: Option<String>, seed: Option<u64>, step_density: Option<f64>, results: Value) -> Self {
        let results_hash = hex::encode(Sha256::digest(results.to_string().as_bytes()));
        Self {
            schema_version: SUMMARY_SCHEMA_VERSION,
            tool: "nvregsim",
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash,
            seed,
            step_density,
            results,
            results_hash,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// Column-oriented table written as CSV with a leading `#` description line.
pub struct Table {
    pub name: String,
    pub description: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, description: &str, header: &[&str]) -> Self {
        Self { name: name.into(), description: description.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut out = format!("# {}\n", self.description).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.header).map_err(|e| CliError::Io(e.to_string()))?;
            for r in &self.rows {
                w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
            }
            w.flush().map_err(|e| CliError::Io(e.to_string()))?;
        }
        String::from_utf8(out).map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Shortest round-trip formatting, so CSV values match the JSON summary.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "nan".into()
    }
}

pub fn write_outputs(dir: &Path, summary: &Summary, tables: &[Table]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let write = |name: &str, body: &str| -> Result<(), CliError> {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        f.write_all(body.as_bytes()).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    };
    write("summary.json", &summary.to_json())?;
    for t in tables {
        write(&format!("{}.csv", t.name), &t.to_csv()?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new("x", "columns: a [ns], b", &["a", "b"]);
        assert_eq!(t.to_csv().unwrap(), "# columns: a [ns], b\na,b\n");
    }

    #[test]
    fn summary_hash_tracks_results() {
        let a = Summary::new("c", None, None, None, serde_json::json!({"x": 1.0}));
        let b = Summary::new("c", None, None, None, serde_json::json!({"x": 1.5}));
        assert_ne!(a.results_hash, b.results_hash);
        assert_eq!(a.to_json(), Summary::new("c", None, None, None, serde_json::json!({"x": 1.0})).to_json());
    }

    #[test]
    fn nan_formats() {
        assert_eq!(num(f64::NAN), "nan");
        assert_eq!(num(0.1), "0.1");
    }
}
