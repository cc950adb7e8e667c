//! Config file loading. The file is TOML with the master `seed` and the trial
//! sections (`grid`, `arm`, `stomp`, ...) at the top level, plus `[train]`
//! and `[study]`. Keys that do not map onto a setting are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use handover_core::config::Settings;
use thiserror::Error;
use toml::{Table, Value};

use crate::args::Common;

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{path}: unknown config key `{key}`")]
    UnknownKey { path: PathBuf, key: String },
    #[error("config cannot be written as TOML: {0}")]
    Serialize(#[from] toml::ser::Error),
}

pub fn load_file(path: &Path) -> Result<Settings, SettingsError> {
    let text = fs::read_to_string(path).map_err(|source| SettingsError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text, path)
}

pub fn parse(text: &str, path: &Path) -> Result<Settings, SettingsError> {
    let parse_err = |source| SettingsError::Parse {
        path: path.to_path_buf(),
        source,
    };
    let table: Table = text.parse().map_err(parse_err)?;
    let settings: Settings = toml::from_str(text).map_err(parse_err)?;
    let resolved = Value::try_from(&settings)?;
    if let Some(key) = unknown_key(&Value::Table(table), &resolved, "") {
        return Err(SettingsError::UnknownKey {
            path: path.to_path_buf(),
            key,
        });
    }
    Ok(settings)
}

/// First key path present in `given` but absent from `resolved`.
fn unknown_key(given: &Value, resolved: &Value, prefix: &str) -> Option<String> {
    match (given, resolved) {
        (Value::Table(g), Value::Table(r)) => g.iter().find_map(|(k, v)| {
            let path = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match r.get(k) {
                None => Some(path),
                Some(rv) => unknown_key(v, rv, &path),
            }
        }),
        (Value::Array(g), Value::Array(r)) => g
            .iter()
            .zip(r)
            .enumerate()
            .find_map(|(i, (gv, rv))| unknown_key(gv, rv, &format!("{prefix}[{i}]"))),
        _ => None,
    }
}

/// Defaults, then the config file, then the shared flags.
pub fn resolve(common: &Common) -> Result<Settings, SettingsError> {
    let mut settings = match &common.config {
        Some(path) => load_file(path)?,
        None => Settings::default(),
    };
    if let Some(seed) = common.seed {
        settings.seed = seed;
    }
    if let Some(g) = common.grid {
        settings.trial.grid.n = g.n;
        settings.trial.grid.m = g.m;
    }
    Ok(settings)
}

pub fn to_toml(settings: &Settings) -> Result<String, SettingsError> {
    Ok(toml::to_string(settings)?)
}
