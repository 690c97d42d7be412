pub mod export;
pub mod model;
pub mod serve;
pub mod simulate;

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub struct Ctx {
    pub json: bool,
    /// `--seed` exactly as given, which outranks seeds inside spec files.
    pub seed_flag: Option<u64>,
    pub cfg: RunConfig,
}

impl Ctx {
    /// Prints `value` as one JSON line with `--json`, otherwise `human`.
    pub fn emit<T: Serialize>(&self, value: &T, human: impl FnOnce() -> String) -> Result<(), CliError> {
        let text = if self.json {
            serde_json::to_string(value).map_err(|e| CliError::Internal(e.to_string()))?
        } else {
            human()
        };
        let mut out = std::io::stdout().lock();
        writeln!(out, "{text}").and_then(|_| out.flush()).map_err(|e| CliError::Internal(format!("stdout: {e}")))
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input { path: path.into(), reason: e.to_string() })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Input { path: path.into(), reason: e.to_string() })
}

/// Writes through a sibling temp file so readers never see half a file.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::Output { path: path.into(), reason: e.to_string() };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(fail)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes).map_err(fail)?;
    std::fs::rename(&tmp, path).map_err(fail)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => format!("{x:.4}"),
        None => "n/a".into(),
    }
}
