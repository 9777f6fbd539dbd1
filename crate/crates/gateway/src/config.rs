use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

pub const ENV_PREFIX: &str = "KCCBOT_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad value for {key}: {value:?}")]
    Env { key: String, value: String },
}

/// Gateway settings. Every key can be overridden by an environment variable
/// named `KCCBOT_` plus the upper-cased key, e.g. `KCCBOT_LISTEN_PORT`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    /// KCC export (CSV or JSONL) to build the index from when no snapshot is set.
    pub corpus_path: Option<PathBuf>,
    pub index_path: Option<PathBuf>,
    pub policy_path: Option<PathBuf>,
    pub listen_host: String,
    pub listen_port: u16,
    pub session_idle_secs: u64,
    pub session_snapshot_path: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            corpus_path: None,
            index_path: None,
            policy_path: None,
            listen_host: "127.0.0.1".into(),
            listen_port: 8080,
            session_idle_secs: 30 * 60,
            session_snapshot_path: None,
            static_dir: None,
        }
    }
}

impl GatewayConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` if given, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
                Self::from_toml_str(&text)?
            }
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let get = |key: &str| lookup(&format!("{ENV_PREFIX}{}", key.to_uppercase()));
        let path = |key: &str, slot: &mut Option<PathBuf>| {
            if let Some(v) = get(key) {
                *slot = (!v.is_empty()).then(|| PathBuf::from(v));
            }
        };
        path("corpus_path", &mut self.corpus_path);
        path("index_path", &mut self.index_path);
        path("policy_path", &mut self.policy_path);
        path("session_snapshot_path", &mut self.session_snapshot_path);
        path("static_dir", &mut self.static_dir);
        if let Some(v) = get("listen_host") {
            self.listen_host = v;
        }
        if let Some(v) = get("listen_port") {
            self.listen_port = v.parse().map_err(|_| ConfigError::Env { key: "listen_port".into(), value: v })?;
        }
        if let Some(v) = get("session_idle_secs") {
            self.session_idle_secs =
                v.parse().map_err(|_| ConfigError::Env { key: "session_idle_secs".into(), value: v })?;
        }
        Ok(())
    }

    pub fn session_idle(&self) -> Duration {
        Duration::from_secs(self.session_idle_secs)
    }

    pub fn listen_addr(&self) -> String {
        format!("{}:{}", self.listen_host, self.listen_port)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn defaults_and_file() {
        let c = GatewayConfig::from_toml_str("listen_port = 9000\npolicy_path = \"p.toml\"").unwrap();
        assert_eq!(c.listen_port, 9000);
        assert_eq!(c.policy_path.as_deref(), Some(Path::new("p.toml")));
        assert_eq!(c.session_idle_secs, 1800);
        assert!(GatewayConfig::from_toml_str("nope = 1").is_err());
    }

    #[test]
    fn env_overrides_file() {
        let env: HashMap<&str, &str> = [
            ("KCCBOT_LISTEN_PORT", "7001"),
            ("KCCBOT_CORPUS_PATH", "data.csv"),
            ("KCCBOT_POLICY_PATH", ""),
        ]
        .into();
        let mut c = GatewayConfig::from_toml_str("listen_port = 9000\npolicy_path = \"p.toml\"").unwrap();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.listen_port, 7001);
        assert_eq!(c.corpus_path.as_deref(), Some(Path::new("data.csv")));
        assert_eq!(c.policy_path, None);
    }

    #[test]
    fn bad_env_value() {
        let mut c = GatewayConfig::default();
        let err = c.apply_env(|k| (k == "KCCBOT_LISTEN_PORT").then(|| "http".to_string()));
        assert!(matches!(err, Err(ConfigError::Env { .. })));
    }
}
