//! Process-wide option registry, filled from a `key=value` option file.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use parking_lot::RwLock;
use thiserror::Error;

use super::Configuration;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OptionError {
    #[error("line {0}: expected key=value")]
    MalformedLine(usize),
}

/// `key=value` lines; `#` starts a comment line, blank lines are skipped,
/// later keys win. Line numbers in errors are 1-based.
pub fn parse_option_file(text: &str) -> Result<BTreeMap<String, String>, OptionError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(OptionError::MalformedLine(i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(OptionError::MalformedLine(i + 1));
        }
        out.insert(k.to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

#[derive(Default)]
pub struct OptionsRegistry {
    values: RwLock<BTreeMap<String, String>>,
}

impl OptionsRegistry {
    /// Replace the registry contents with the parsed file.
    pub fn load(&self, text: &str) -> Result<(), OptionError> {
        let parsed = parse_option_file(text)?;
        *self.values.write() = parsed;
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.values.read().get(key).cloned()
    }

    pub fn set(&self, key: &str, value: &str) {
        self.values.write().insert(key.to_owned(), value.to_owned());
    }

    pub fn snapshot(&self) -> Configuration {
        self.values
            .read()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn reset(&self) {
        self.values.write().clear();
    }
}

static REGISTRY: OnceLock<OptionsRegistry> = OnceLock::new();

/// The shared registry, created on first use.
pub fn options() -> &'static OptionsRegistry {
    REGISTRY.get_or_init(OptionsRegistry::default)
}
