//! Plain-text `key=value` records, one pair per line.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvRecord {
    entries: BTreeMap<String, String>,
}

impl KvRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rec = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value, got `{line}`", lineno + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse(format!("line {}: empty key", lineno + 1)));
            }
            if rec.entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
        }
        Ok(rec)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get_str(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Parse(format!("`{key}` = `{v}`: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        self.get_str(key)
            .map(|v| {
                v.split(',')
                    .map(|p| {
                        p.trim()
                            .parse::<T>()
                            .map_err(|e| Error::Parse(format!("`{key}` item `{p}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Errors on any key outside `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(Error::config(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }

    /// Merges `other` into `self`; keys in `other` win.
    pub fn extend(&mut self, other: &KvRecord) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }
}

impl Display for KvRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_typed_values() {
        let rec = KvRecord::parse("# c\nseed = 7\nchannels=16,32\n\nflag=true\n").unwrap();
        assert_eq!(rec.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(rec.get_list::<usize>("channels").unwrap(), Some(vec![16, 32]));
        assert!(rec.get_or("flag", false).unwrap());
        assert_eq!(rec.get::<u32>("missing").unwrap(), None);
        assert!(rec.get::<u32>("flag").is_err());
    }

    #[test]
    fn rejects_malformed() {
        assert!(KvRecord::parse("novalue\n").is_err());
        assert!(KvRecord::parse("a=1\na=2\n").is_err());
        let rec = KvRecord::parse("a=1").unwrap();
        assert!(rec.reject_unknown(&["b"]).is_err());
    }

    #[test]
    fn display_round_trips() {
        let mut rec = KvRecord::new();
        rec.set("b", 2);
        rec.set("a", "x");
        let text = rec.to_string();
        assert_eq!(text, "a=x\nb=2\n");
        assert_eq!(KvRecord::parse(&text).unwrap(), rec);
    }
}
