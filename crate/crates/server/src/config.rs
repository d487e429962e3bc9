//! Service configuration, stored as TOML.
//!
//! ```toml
//! listen_address = "127.0.0.1:8080"
//! default_timeout_ms = 30000
//! journal_path = "data/events.jsonl"   # optional
//!
//! [[providers]]
//! model_name = "mock-a"
//! kind = "mock"
//! display_name = "Mock A"
//!
//! [[providers]]
//! model_name = "gemini"
//! kind = "http_chat"
//! endpoint_url = "http://localhost:9000/v1/generate"
//! credential_env_var = "GEMINI_API_KEY"
//! display_name = "Gemini"
//! ```

use std::path::{Path, PathBuf};

use criteria_core::{ProviderConfig, DEFAULT_TIMEOUT_MS};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen_address: String,
    #[serde(default = "default_timeout")]
    pub default_timeout_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub journal_path: Option<PathBuf>,
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        // Relative journal paths are resolved against the config file.
        if let (Some(journal), Some(dir)) = (&config.journal_path, path.parent()) {
            if journal.is_relative() {
                config.journal_path = Some(dir.join(journal));
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.providers.is_empty() {
            return Err(ConfigError::Invalid(
                "at least one provider is required".into(),
            ));
        }
        if self.default_timeout_ms == 0 {
            return Err(ConfigError::Invalid(
                "default_timeout_ms must be positive".into(),
            ));
        }
        self.listen_address
            .parse::<std::net::SocketAddr>()
            .map(|_| ())
            .or_else(|_| {
                // host:port with a hostname
                match self.listen_address.rsplit_once(':') {
                    Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(()),
                    _ => Err(ConfigError::Invalid(format!(
                        "listen_address `{}` is not host:port",
                        self.listen_address
                    ))),
                }
            })?;
        let mut seen = std::collections::HashSet::new();
        for provider in &self.providers {
            provider
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !seen.insert(provider.model_name.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate provider `{}`",
                    provider.model_name
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
listen_address = "127.0.0.1:8080"
default_timeout_ms = 1500
journal_path = "events.jsonl"

[[providers]]
model_name = "mock-a"
kind = "mock"
display_name = "Mock A"

[[providers]]
model_name = "gemini"
kind = "http_chat"
endpoint_url = "http://localhost:9000/v1/generate"
credential_env_var = "GEMINI_API_KEY"
display_name = "Gemini"
"#;

    #[test]
    fn parses_sample() {
        let config = ServiceConfig::parse(SAMPLE).unwrap();
        assert_eq!(config.providers.len(), 2);
        assert_eq!(config.default_timeout_ms, 1500);
        assert_eq!(
            config.providers[1].credential_env_var.as_deref(),
            Some("GEMINI_API_KEY")
        );
    }

    #[test]
    fn round_trips_all_fields() {
        let config = ServiceConfig::parse(SAMPLE).unwrap();
        let again = ServiceConfig::parse(&config.to_toml()).unwrap();
        assert_eq!(config, again);
    }

    #[test]
    fn timeout_defaults() {
        let config = ServiceConfig::parse(
            "listen_address = \"0.0.0.0:1\"\n[[providers]]\nmodel_name = \"m\"\nkind = \"mock\"\n",
        )
        .unwrap();
        assert_eq!(config.default_timeout_ms, 30_000);
        assert_eq!(config.journal_path, None);
    }

    #[test]
    fn empty_provider_list_rejected() {
        let err = ServiceConfig::parse("listen_address = \"127.0.0.1:1\"\n").unwrap_err();
        assert!(err.to_string().contains("at least one provider"));
    }

    #[test]
    fn bad_entries_rejected() {
        let dup = "listen_address = \"127.0.0.1:1\"\n[[providers]]\nmodel_name = \"m\"\nkind = \"mock\"\n[[providers]]\nmodel_name = \"m\"\nkind = \"mock\"\n";
        assert!(ServiceConfig::parse(dup).is_err());
        let no_url = "listen_address = \"127.0.0.1:1\"\n[[providers]]\nmodel_name = \"m\"\nkind = \"http_chat\"\n";
        assert!(ServiceConfig::parse(no_url).is_err());
        let bad_addr =
            "listen_address = \"nowhere\"\n[[providers]]\nmodel_name = \"m\"\nkind = \"mock\"\n";
        assert!(ServiceConfig::parse(bad_addr).is_err());
        let hostname = "listen_address = \"localhost:8080\"\n[[providers]]\nmodel_name = \"m\"\nkind = \"mock\"\n";
        assert!(ServiceConfig::parse(hostname).is_ok());
    }
}
