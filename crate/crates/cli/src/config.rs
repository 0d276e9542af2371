//! `key = value` configuration files.
//!
//! Keys use the long flag names with `-` or `_`. Lines starting with `#`
//! are comments. Command-line flags take precedence over file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

/// Environment variable consulted for the seed when neither a flag nor a
/// config file sets one.
pub const SEED_ENV: &str = "CODED_BACKOFF_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config key `{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
}

const KEYS: &[&str] = &[
    "kappa",
    "horizon",
    "seed",
    "schedule",
    "n",
    "w",
    "rate",
    "arrivals_until",
    "trace",
    "out",
    "format",
    "strict_lemmas",
    "verify_coding",
    "sparse",
    "continuous_backlog",
    "drain",
    "jobs",
    "stride",
    "runs",
    "kappas",
    "trials",
    "size",
    "lookback",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = k.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { line: i + 1, key });
            }
            let v = v.trim().trim_matches('"');
            values.insert(key, v.to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.raw(key)
            .map(|v| {
                v.parse().map_err(|_| ConfigError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                })
            })
            .transpose()
    }

    /// Boolean switches accept `true/false`, `yes/no`, `on/off` and `1/0`.
    pub fn flag(&self, key: &str) -> Result<bool, ConfigError> {
        match self.raw(key) {
            None => Ok(false),
            Some("true" | "yes" | "on" | "1") => Ok(true),
            Some("false" | "no" | "off" | "0") => Ok(false),
            Some(v) => Err(ConfigError::Value {
                key: key.to_string(),
                value: v.to_string(),
            }),
        }
    }
}
