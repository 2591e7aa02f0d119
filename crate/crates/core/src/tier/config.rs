use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TierError;

/// Tier properties. `clone()` is a deep copy: changing the copy never
/// touches the original.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Configuration {
    props: BTreeMap<String, String>,
}

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.props.insert(key.into(), value.into());
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.props.remove(key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.props.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, TierError> {
        self.get(key)
            .ok_or_else(|| TierError::MissingConfig(key.to_owned()))
    }

    /// Parse `key` if present, else return `default`.
    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, TierError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .trim()
                .parse()
                .map_err(|e: T::Err| TierError::InvalidConfig {
                    key: key.to_owned(),
                    detail: e.to_string(),
                }),
        }
    }

    pub fn len(&self) -> usize {
        self.props.len()
    }

    pub fn is_empty(&self) -> bool {
        self.props.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.props.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Entries of `other` override ours.
    pub fn overlay(&mut self, other: &Configuration) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    pub fn to_kv(&self) -> String {
        self.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_kv(text: &str) -> Self {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_owned(), v.to_owned()))
            .collect()
    }
}

impl FromIterator<(String, String)> for Configuration {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Self {
            props: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clone_is_independent() {
        let original = Configuration::new().with("store.endpoint", "local:dst");
        let mut copy = original.clone();
        assert_eq!(copy, original);
        copy.set("store.endpoint", "127.0.0.1:9");
        copy.set("extra", "1");
        assert_eq!(original.get("store.endpoint"), Some("local:dst"));
        assert_eq!(original.len(), 1);
    }

    #[test]
    fn empty_clone() {
        let a = Configuration::new();
        let mut b = a.clone();
        b.set("k", "v");
        assert!(a.is_empty());
    }

    #[test]
    fn typed_access() {
        let c = Configuration::new().with("poll", " 25 ").with("bad", "x");
        assert_eq!(c.parse_or("poll", 10u64).unwrap(), 25);
        assert_eq!(c.parse_or("absent", 10u64).unwrap(), 10);
        assert!(matches!(
            c.parse_or("bad", 1u64),
            Err(TierError::InvalidConfig { .. })
        ));
        assert_eq!(
            c.require("nope"),
            Err(TierError::MissingConfig("nope".into()))
        );
    }

    #[test]
    fn kv_round_trip() {
        let c = Configuration::new().with("a", "1").with("b.c", "x=y");
        assert_eq!(Configuration::from_kv(&c.to_kv()), c);
    }
}
