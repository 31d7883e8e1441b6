use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{Map, Value};

/// Provenance written next to every run's outputs as `<command>.manifest.json`.
#[derive(Debug)]
pub struct Manifest {
    command: String,
    seed: u64,
    pub config_file: Option<String>,
    settings: Map<String, Value>,
    outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            seed,
            config_file: None,
            settings: Map::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record<T: serde::Serialize + ?Sized>(&mut self, key: &str, value: &T) -> Result<()> {
        self.settings.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let doc = serde_json::json!({
            "tool": "topo",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": self.seed,
            "config_file": self.config_file,
            "settings": self.settings,
            "outputs": self.outputs,
        });
        let path = out.join(format!("{}.manifest.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
