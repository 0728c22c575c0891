use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use folkvae::vae::{ModelConfig, TrainingConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_ADDR: &str = "FOLKVAE_ADDR";
pub const ENV_PORT: &str = "FOLKVAE_PORT";
pub const ENV_DATA_DIR: &str = "FOLKVAE_DATA_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Read(#[from] std::io::Error),
    #[error("invalid config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for {var}: {value:?}")]
    Env { var: &'static str, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    #[default]
    Json,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub addr: IpAddr,
    pub port: u16,
    pub data_dir: PathBuf,
    pub max_sessions: usize,
    /// How long a mutation waits for a busy session before answering 409.
    pub busy_timeout_ms: u64,
    pub max_body_bytes: usize,
    /// Upper bound on epochs accepted by the training endpoint.
    pub max_epochs: usize,
    pub log_format: LogFormat,
    /// Defaults for training jobs; requests may override fields.
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            addr: IpAddr::from([127, 0, 0, 1]),
            port: 8080,
            data_dir: PathBuf::from("folkvae-data"),
            max_sessions: 1024,
            busy_timeout_ms: 5000,
            max_body_bytes: 16 * 1024 * 1024,
            max_epochs: 10_000,
            log_format: LogFormat::Json,
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads the file when given, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup(ENV_ADDR) {
            self.addr = v.parse().map_err(|_| ConfigError::Env { var: ENV_ADDR, value: v })?;
        }
        if let Some(v) = lookup(ENV_PORT) {
            self.port = v.parse().map_err(|_| ConfigError::Env { var: ENV_PORT, value: v })?;
        }
        if let Some(v) = lookup(ENV_DATA_DIR) {
            if v.is_empty() {
                return Err(ConfigError::Env { var: ENV_DATA_DIR, value: v });
            }
            self.data_dir = PathBuf::from(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_sessions == 0 {
            return Err(ConfigError::Invalid("max_sessions must be positive".into()));
        }
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.training.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn busy_timeout(&self) -> Duration {
        Duration::from_millis(self.busy_timeout_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let config = ServerConfig::from_toml("port = 9000\n[training]\nepochs = 5\n").unwrap();
        assert_eq!(config.port, 9000);
        assert_eq!(config.training.epochs, 5);
        assert_eq!(config.training.batch_size, 32);
        assert_eq!(config.model, ModelConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ServerConfig::from_toml("prot = 1").is_err());
    }

    #[test]
    fn env_overrides_file() {
        let mut config = ServerConfig::from_toml("port = 9000\naddr = \"0.0.0.0\"").unwrap();
        config
            .apply_env(|k| match k {
                ENV_PORT => Some("7001".into()),
                ENV_DATA_DIR => Some("/tmp/x".into()),
                _ => None,
            })
            .unwrap();
        assert_eq!(config.port, 7001);
        assert_eq!(config.addr, IpAddr::from([0, 0, 0, 0]));
        assert_eq!(config.data_dir, PathBuf::from("/tmp/x"));
        let bad = config.apply_env(|k| (k == ENV_PORT).then(|| "seventy".to_string()));
        assert!(matches!(bad, Err(ConfigError::Env { var: ENV_PORT, .. })));
    }
}
