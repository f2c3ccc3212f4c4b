use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

/// Record of one invocation, written as `<command>.manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub seed_source: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
    pub wall_clock_secs: f64,
    /// Arguments that reproduce the outputs, with the seed pinned.
    pub replay_args: Vec<String>,
}

/// Write through a sibling temp file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// `argv` with any `--seed` removed and the resolved seed appended.
pub fn replay_args(argv: &[String], seed: u64) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len() + 2);
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--seed" {
            skip = true;
        } else if !a.starts_with("--seed=") {
            out.push(a.clone());
        }
    }
    out.push("--seed".into());
    out.push(seed.to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_pins_seed() {
        let argv: Vec<String> = ["fit", "--seed", "3", "--data", "d.csv", "--seed=4"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(replay_args(&argv, 9), ["fit", "--data", "d.csv", "--seed", "9"]);
    }
}
