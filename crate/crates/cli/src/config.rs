//! Run configuration. Each key resolves from, highest first: command-line
//! flag, `PREDI_<KEY>` environment variable, config file, built-in default.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use predihealth::store::Durability;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "PREDI_";

/// One source's worth of settings; unset keys fall through to the next.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigLayer {
    pub data_dir: Option<PathBuf>,
    pub http_addr: Option<String>,
    /// `off` disables the MQTT listener.
    pub mqtt_addr: Option<String>,
    pub thresholds: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub log_level: Option<String>,
    pub durability: Option<Durability>,
    pub alert_id_seed: Option<u64>,
    pub webhook: Option<String>,
    pub seed: Option<u64>,
}

const KEYS: [&str; 10] = [
    "data_dir",
    "http_addr",
    "mqtt_addr",
    "thresholds",
    "model",
    "log_level",
    "durability",
    "alert_id_seed",
    "webhook",
    "seed",
];
const NUMERIC: [&str; 2] = ["alert_id_seed", "seed"];

impl ConfigLayer {
    /// `self` wins wherever it is set.
    fn over(self, lower: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            data_dir: self.data_dir.or(lower.data_dir),
            http_addr: self.http_addr.or(lower.http_addr),
            mqtt_addr: self.mqtt_addr.or(lower.mqtt_addr),
            thresholds: self.thresholds.or(lower.thresholds),
            model: self.model.or(lower.model),
            log_level: self.log_level.or(lower.log_level),
            durability: self.durability.or(lower.durability),
            alert_id_seed: self.alert_id_seed.or(lower.alert_id_seed),
            webhook: self.webhook.or(lower.webhook),
            seed: self.seed.or(lower.seed),
        }
    }

    pub fn from_file(path: &Path) -> Result<ConfigLayer, CliError> {
        let bad = |reason: String| CliError::BadConfig { source_name: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))
        }
    }

    /// Reads `PREDI_*` variables from `vars`. Unknown keys are an error so
    /// that typos do not pass silently.
    pub fn from_env(vars: impl IntoIterator<Item = (String, String)>) -> Result<ConfigLayer, CliError> {
        let mut table = toml::Table::new();
        for (name, raw) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
            let key = key.to_ascii_lowercase();
            let bad = |reason: String| CliError::BadConfig { source_name: name.clone(), reason };
            if !KEYS.contains(&key.as_str()) {
                return Err(bad(format!("unknown key; expected one of {}", KEYS.join(", "))));
            }
            let value = if NUMERIC.contains(&key.as_str()) {
                let n: i64 = raw.trim().parse().map_err(|_| bad(format!("`{raw}` is not an integer")))?;
                toml::Value::Integer(n)
            } else {
                toml::Value::String(raw)
            };
            table.insert(key, value);
        }
        ConfigLayer::deserialize(table)
            .map_err(|e| CliError::BadConfig { source_name: "environment".into(), reason: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub http_addr: SocketAddr,
    pub mqtt_addr: Option<SocketAddr>,
    pub thresholds: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub log_level: String,
    pub durability: Durability,
    pub alert_id_seed: u64,
    pub webhook: Option<String>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("predi-data"),
            http_addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            mqtt_addr: Some(SocketAddr::from(([127, 0, 0, 1], 1883))),
            thresholds: None,
            model: None,
            log_level: "info".into(),
            durability: Durability::Write,
            alert_id_seed: 0,
            webhook: None,
            seed: 0,
        }
    }
}

fn addr(key: &str, raw: &str) -> Result<SocketAddr, CliError> {
    raw.trim().parse().map_err(|_| CliError::BadConfig {
        source_name: key.into(),
        reason: format!("`{raw}` is not a socket address such as 127.0.0.1:8080"),
    })
}

pub fn parse_level(raw: &str) -> Result<tracing::Level, CliError> {
    raw.trim().parse().map_err(|_| CliError::BadConfig {
        source_name: "log_level".into(),
        reason: format!("`{raw}` is not one of trace, debug, info, warn, error"),
    })
}

impl RunConfig {
    /// Stacks the layers over the defaults and checks the result.
    pub fn resolve(cli: ConfigLayer, env: ConfigLayer, file: ConfigLayer) -> Result<RunConfig, CliError> {
        let merged = cli.over(env).over(file);
        let d = RunConfig::default();
        let http_addr = match &merged.http_addr {
            Some(raw) => addr("http_addr", raw)?,
            None => d.http_addr,
        };
        let mqtt_addr = match merged.mqtt_addr.as_deref().map(str::trim) {
            Some("off") | Some("") => None,
            Some(raw) => Some(addr("mqtt_addr", raw)?),
            None => d.mqtt_addr,
        };
        let log_level = merged.log_level.unwrap_or(d.log_level);
        parse_level(&log_level)?;
        Ok(RunConfig {
            data_dir: merged.data_dir.unwrap_or(d.data_dir),
            http_addr,
            mqtt_addr,
            thresholds: merged.thresholds,
            model: merged.model,
            log_level,
            durability: merged.durability.unwrap_or(d.durability),
            alert_id_seed: merged.alert_id_seed.unwrap_or(d.alert_id_seed),
            webhook: merged.webhook,
            seed: merged.seed.unwrap_or(d.seed),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Result<ConfigLayer, CliError> {
        ConfigLayer::from_env(pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())))
    }

    #[test]
    fn precedence_is_cli_env_file_default() {
        let file = ConfigLayer { seed: Some(1), data_dir: Some("f".into()), log_level: Some("warn".into()), ..Default::default() };
        let env = env(&[("PREDI_SEED", "2"), ("PREDI_DATA_DIR", "e"), ("HOME", "/root")]).unwrap();
        let cli = ConfigLayer { seed: Some(3), ..Default::default() };
        let cfg = RunConfig::resolve(cli, env, file).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.data_dir, PathBuf::from("e"));
        assert_eq!(cfg.log_level, "warn");
        assert_eq!(cfg.http_addr, RunConfig::default().http_addr);
    }

    #[test]
    fn env_values_are_typed_per_key() {
        let layer = env(&[("PREDI_DATA_DIR", "123"), ("PREDI_DURABILITY", "sync"), ("PREDI_MQTT_ADDR", "off")]).unwrap();
        assert_eq!(layer.data_dir, Some(PathBuf::from("123")));
        assert_eq!(layer.durability, Some(Durability::Sync));
        let cfg = RunConfig::resolve(ConfigLayer::default(), layer, ConfigLayer::default()).unwrap();
        assert_eq!(cfg.mqtt_addr, None);
    }

    #[test]
    fn bad_values_name_their_source() {
        let err = env(&[("PREDI_SEDE", "1")]).unwrap_err();
        assert!(err.to_string().contains("PREDI_SEDE"), "{err}");
        let err = env(&[("PREDI_SEED", "many")]).unwrap_err();
        assert!(err.to_string().contains("PREDI_SEED"), "{err}");
        let layer = ConfigLayer { http_addr: Some("localhost".into()), ..Default::default() };
        let err = RunConfig::resolve(layer, ConfigLayer::default(), ConfigLayer::default()).unwrap_err();
        assert!(err.to_string().contains("http_addr"), "{err}");
    }

    #[test]
    fn toml_and_json_files_load() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("predi.toml");
        std::fs::write(&t, "seed = 9\nhttp_addr = \"127.0.0.1:9000\"\ndurability = \"sync\"\n").unwrap();
        let layer = ConfigLayer::from_file(&t).unwrap();
        assert_eq!((layer.seed, layer.durability), (Some(9), Some(Durability::Sync)));
        let j = dir.path().join("predi.json");
        std::fs::write(&j, r#"{"seed": 4, "log_level": "debug"}"#).unwrap();
        assert_eq!(ConfigLayer::from_file(&j).unwrap().seed, Some(4));
        std::fs::write(&j, r#"{"sede": 4}"#).unwrap();
        assert!(ConfigLayer::from_file(&j).is_err());
        assert!(ConfigLayer::from_file(&dir.path().join("absent.toml")).is_err());
    }
}
