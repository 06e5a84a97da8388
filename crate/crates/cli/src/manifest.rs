use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub bytes: u64,
}

/// Describes one run: enough to repeat it and check its inputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub settings: serde_json::Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

fn entry(p: &Path) -> FileEntry {
    FileEntry {
        path: p.to_path_buf(),
        bytes: std::fs::metadata(p).map_or(0, |m| m.len()),
    }
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, settings: serde_json::Value) -> Self {
        Self {
            tool: "stressmon",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().skip(1).collect(),
            seed,
            settings,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(entry(p));
        self
    }

    pub fn output(mut self, p: &Path) -> Self {
        self.outputs.push(entry(p));
        self
    }

    /// Writes `<output>.manifest.json` beside `output`.
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf, CliError> {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n")
            .map_err(|e| CliError::input(path.display().to_string(), e))?;
        Ok(path)
    }
}
