use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub timestamp: u64,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let timestamp = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));
        RunManifest {
            command: command.to_string(),
            config: None,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamp,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        format!(
            "command = {}\nconfig = {}\nseeds = {}\ninputs = {}\noutputs = {}\ntimestamp = {}\nversion = {}\n",
            self.command,
            self.config.as_ref().map_or("-".into(), |p| p.display().to_string()),
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            join(&self.inputs),
            join(&self.outputs),
            self.timestamp,
            self.version
        )
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text())
            .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_lists_every_field() {
        let mut m = RunManifest::new("train");
        m.seeds = vec![1, 2];
        m.inputs.push("data".into());
        m.outputs.push("out/model.ckpt".into());
        m.timestamp = 7;
        let text = m.to_text();
        let pairs = scpm::data::parse_key_values(&text).unwrap();
        let keys: Vec<&str> = pairs.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, ["command", "config", "seeds", "inputs", "outputs", "timestamp", "version"]);
        assert!(text.contains("seeds = 1,2\n"));
        assert!(text.contains("config = -\n"));
    }
}
