use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Files are collected during a command and written only once everything
/// has been computed, so a failed run leaves nothing behind.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, String)>,
}

impl Outputs {
    pub fn add(&mut self, path: impl Into<PathBuf>, content: String) {
        self.files.push((path.into(), content));
    }

    pub fn extend(&mut self, other: Outputs) {
        self.files.extend(other.files);
    }

    pub fn commit(self) -> Result<(), CliError> {
        for (path, content) in self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            }
            fs::write(&path, content).map_err(|e| io_error(&path, e))?;
        }
        Ok(())
    }
}

pub struct Outcome {
    pub outputs: Outputs,
    /// `key=value` lines printed to stdout.
    pub summary: String,
    pub converged: bool,
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub fn json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summaries serialize");
    s.push('\n');
    s
}
