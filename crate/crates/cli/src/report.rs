//! report.json assembly and artifact bookkeeping.
//!
//! Schema: `{ "version", "command", "status": "ok" | "error", "config",
//! "results", "artifacts": [file names], "error": { "category", "message" } }`.
//! `results` is command specific; `error` is present only on failure. The
//! effective configuration is also written as `effective_config.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(category: &'static str, message: impl Into<String>) -> Self {
        CliError { category, message: message.into() }
    }
}

impl From<eklab::EkError> for CliError {
    fn from(e: eklab::EkError) -> Self {
        CliError::new(e.category(), e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(e.category, e.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Output directory plus the list of files written into it.
pub struct Out {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Out {
    pub fn create(dir: &Path) -> CliResult<Out> {
        fs::create_dir_all(dir)?;
        Ok(Out { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        fs::write(self.path(name), contents)?;
        self.record(name);
        Ok(())
    }

    pub fn record(&mut self, name: &str) {
        self.artifacts.push(name.to_string());
    }

    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig, outcome: &CliResult<Value>) -> CliResult<()> {
        let mut report = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": to_value(cfg),
        });
        match outcome {
            Ok(results) => {
                report["status"] = json!("ok");
                report["results"] = results.clone();
            }
            Err(e) => {
                report["status"] = json!("error");
                report["results"] = Value::Null;
                report["error"] = json!({ "category": e.category, "message": e.message });
            }
        }
        self.write("effective_config.toml", &cfg.to_toml())?;
        self.artifacts.push("report.json".into());
        report["artifacts"] = json!(self.artifacts);
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::new("io", e.to_string()))?;
        fs::write(self.path("report.json"), text + "\n")?;
        Ok(())
    }
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}
