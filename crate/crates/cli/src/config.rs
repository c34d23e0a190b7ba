use std::fmt;
use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;

/// A missing or contradictory setting.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn missing(flag: &str) -> anyhow::Error {
    ConfigError(format!("--{flag} is required (as a flag or in the config file)")).into()
}

/// Parses a TOML file, or returns the defaults when no path is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text)
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}
