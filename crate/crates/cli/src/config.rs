//! Flat `key = value` configuration files.
//!
//! One entry per line; `#` starts a comment; blank lines are ignored. Keys
//! may contain dots for grouping (`ep.max_sweeps`) but there is no nesting.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
    /// Directory of the config file; relative paths resolve against it.
    base: PathBuf,
    used: RefCell<BTreeSet<String>>,
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected `key = value`", i + 1)));
            };
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(CliError::Config(format!("line {}: invalid key `{key}`", i + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self { entries, base: base.to_path_buf(), used: RefCell::default() })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigNotFound(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Like [`Config::get_or`], also accepting `-inf`/`none` as `-∞`.
    pub fn bound_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.raw(key) {
            Some("none" | "-inf") => Ok(f64::NEG_INFINITY),
            _ => self.get_or(key, default),
        }
    }

    pub fn positive(&self, key: &str, default: f64) -> Result<f64, CliError> {
        let v = self.get_or(key, default)?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(CliError::Config(format!("`{key}` must be positive, got {v}")))
        }
    }

    pub fn flag(&self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(CliError::Config(format!("`{key}`: expected true or false, got `{v}`"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|p| self.base.join(p))
    }

    /// Keys present in the file that no command looked at.
    pub fn unused(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.entries.keys().filter(|k| !used.contains(*k)).cloned().collect()
    }
}
