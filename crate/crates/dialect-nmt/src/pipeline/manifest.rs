//! Every command leaves a manifest.json next to its outputs: resolved
//! config, seed, input/output paths, tool version, timestamps. A run is
//! reconstructible from the manifest alone.

use std::path::Path;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::pipeline::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Resolved configuration after flag overrides.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: Option<String>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(
        command: &str,
        seed: Option<u64>,
        config: &impl Serialize,
    ) -> Result<Self, PipelineError> {
        Ok(RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: now(),
            finished_at: None,
            extra: serde_json::Value::Object(Default::default()),
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn set_extra(&mut self, key: &str, value: serde_json::Value) {
        if let serde_json::Value::Object(map) = &mut self.extra {
            map.insert(key.to_string(), value);
        }
    }

    /// Stamps finished_at and writes `dir/manifest.json`.
    pub fn write(mut self, dir: &Path) -> Result<(), PipelineError> {
        self.finished_at = Some(now());
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text + "\n").map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::start("stats", None, &serde_json::json!({"top_k": 250})).unwrap();
        m.input(Path::new("a.txt"));
        m.output(Path::new("stats.json"));
        m.set_extra("note", serde_json::json!("x"));
        m.write(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap();
        assert_eq!(back.command, "stats");
        assert_eq!(back.inputs, vec!["a.txt"]);
        assert_eq!(back.extra["note"], "x");
        assert!(back.finished_at.is_some());
        assert!(back.started_at <= back.finished_at.clone().unwrap());
    }
}
