use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Reproduction record written once per invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    /// input path -> sha256 of its bytes
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// phase -> seconds
    pub timings: BTreeMap<String, f64>,
    /// command-specific summary numbers
    pub results: Value,
    pub status: String,
    pub exit_code: u8,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects manifest fields while a command runs.
pub struct Recorder {
    manifest: RunManifest,
    started: Instant,
    phase: Option<(String, Instant)>,
}

impl Recorder {
    pub fn new(command: &str, config: Value, seed: Option<u64>) -> Self {
        Recorder {
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                config,
                seed,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                timings: BTreeMap::new(),
                results: Value::Null,
                status: String::new(),
                exit_code: 0,
            },
            started: Instant::now(),
            phase: None,
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.manifest
            .inputs
            .insert(path.display().to_string(), sha256_hex(bytes));
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    pub fn results(&mut self, results: Value) {
        self.manifest.results = results;
    }

    /// Starts timing `name`, closing the previous phase if any.
    pub fn phase(&mut self, name: &str) {
        self.end_phase();
        self.phase = Some((name.to_string(), Instant::now()));
    }

    fn end_phase(&mut self) {
        if let Some((name, t)) = self.phase.take() {
            self.manifest.timings.insert(name, t.elapsed().as_secs_f64());
        }
    }

    pub fn finish(mut self, status: String, exit_code: u8) -> RunManifest {
        self.end_phase();
        self.manifest
            .timings
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        self.manifest.status = status;
        self.manifest.exit_code = exit_code;
        self.manifest
    }
}

pub fn default_path(primary_output: Option<&Path>, command: &str) -> PathBuf {
    match primary_output {
        Some(p) => {
            let mut s = p.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("treecode-{command}.manifest.json")),
    }
}
