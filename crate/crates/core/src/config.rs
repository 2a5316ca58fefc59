//! Flat key-value configuration with sections.
//!
//! ```text
//! # comment
//! [schedule]
//! T = 4
//! schedule = linear-alpha
//!
//! [decode] mode=dynamic tau=0.2 scope=10
//! ```
//!
//! A line holds either a `[section]` header optionally followed by
//! `key=value` pairs, or one or more `key=value` pairs. A value that starts
//! with `[` runs to the matching `]` and may contain spaces. Keys are unique
//! per section. [`Config::canonical`] renders a sorted form whose SHA-256
//! digest is the config hash.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            };
            let mut rest = line.trim();
            if rest.is_empty() {
                continue;
            }
            if let Some(stripped) = rest.strip_prefix('[') {
                let end = stripped.find(']').ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", lineno + 1))
                })?;
                section = stripped[..end].trim().to_string();
                if section.is_empty() {
                    return Err(Error::Config(format!(
                        "line {}: empty section name",
                        lineno + 1
                    )));
                }
                cfg.sections.entry(section.clone()).or_default();
                rest = stripped[end + 1..].trim();
            }
            while !rest.is_empty() {
                let eq = rest.find('=').ok_or_else(|| {
                    Error::Config(format!(
                        "line {}: expected key=value, got `{rest}`",
                        lineno + 1
                    ))
                })?;
                let key = rest[..eq].trim();
                if key.is_empty() || key.contains(char::is_whitespace) {
                    return Err(Error::Config(format!(
                        "line {}: bad key `{key}`",
                        lineno + 1
                    )));
                }
                let after = rest[eq + 1..].trim_start();
                let (value, tail) = if after.starts_with('[') {
                    let close = after.find(']').ok_or_else(|| {
                        Error::Config(format!("line {}: unterminated list", lineno + 1))
                    })?;
                    (&after[..=close], &after[close + 1..])
                } else {
                    match after.find(char::is_whitespace) {
                        // `key = value` with spaces around '=' leaves the
                        // value as the next word.
                        Some(ws) => (&after[..ws], &after[ws..]),
                        None => (after, ""),
                    }
                };
                cfg.insert(&section, key, value.trim())?;
                rest = tail.trim();
            }
        }
        Ok(cfg)
    }

    fn insert(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let sec = self.sections.entry(section.to_string()).or_default();
        if sec.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::Config(format!(
                "duplicate key `{key}` in [{section}]"
            )));
        }
        Ok(())
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Display) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    /// Apply a `section.key=value` override.
    pub fn apply_override(&mut self, entry: &str) -> Result<()> {
        let (path, value) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{entry}` is not section.key=value")))?;
        let (section, key) = path
            .trim()
            .rsplit_once('.')
            .ok_or_else(|| Error::Config(format!("override key `{path}` has no section")))?;
        if section.is_empty() || key.is_empty() {
            return Err(Error::Config(format!("override key `{path}` is malformed")));
        }
        self.set(section, key, value.trim());
        Ok(())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::Config(format!("[{section}] {key} = {v}: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, section: &str, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(section, key)?
            .ok_or_else(|| Error::Config(format!("missing [{section}] {key}")))
    }

    /// Parse `[a, b, c]` (or a bare scalar as a one-element list).
    pub fn get_list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(v) = self.raw(section, key) else {
            return Ok(None);
        };
        let inner = v
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .unwrap_or(v);
        inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| Error::Config(format!("[{section}] {key}: `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Sorted rendering; equal configs render identically.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (name, sec) in &self.sections {
            if sec.is_empty() {
                continue;
            }
            if !name.is_empty() {
                out.push_str(&format!("[{name}]\n"));
            }
            for (k, v) in sec {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        hex::encode(&digest[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides() {
        let mut c = Config::parse("[decode] tau=0.2").unwrap();
        c.apply_override("decode.tau=0.5").unwrap();
        c.apply_override("grid.block=[2, 4]").unwrap();
        assert_eq!(c.get::<f64>("decode", "tau").unwrap(), Some(0.5));
        assert_eq!(
            c.get_list::<usize>("grid", "block").unwrap(),
            Some(vec![2, 4])
        );
        assert!(c.apply_override("tau=1").is_err());
        assert!(c.apply_override("decode.tau").is_err());
    }

    #[test]
    fn parses_inline_and_multiline_sections() {
        let cfg = Config::parse(
            "# top\n[schedule]\nT = 4\nschedule = explicit\nbeta = [0.25, 0.5, 1.0]\n\n[decode] mode=dynamic tau=0.2 scope=10\n",
        )
        .unwrap();
        assert_eq!(cfg.require::<usize>("schedule", "T").unwrap(), 4);
        assert_eq!(
            cfg.get_list::<f64>("schedule", "beta").unwrap().unwrap(),
            vec![0.25, 0.5, 1.0]
        );
        assert_eq!(cfg.raw("decode", "mode"), Some("dynamic"));
        assert_eq!(cfg.get::<f64>("decode", "tau").unwrap(), Some(0.2));
        assert_eq!(cfg.get::<usize>("decode", "scope").unwrap(), Some(10));
    }

    #[test]
    fn hash_ignores_layout() {
        let a = Config::parse("[x]\nb=2\na=1\n").unwrap();
        let b = Config::parse("[x] a=1 b=2").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = Config::parse("[x] a=1 b=3").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(Config::parse("[x]\na=1\na=2").is_err());
        assert!(Config::parse("[x\na=1").is_err());
        assert!(Config::parse("[x]\njunk").is_err());
        assert!(Config::parse("[x] n=abc")
            .unwrap()
            .get::<usize>("x", "n")
            .is_err());
    }

    #[test]
    fn canonical_round_trips() {
        let a = Config::parse("[b] y=2\n[a] x=[1, 2]\n").unwrap();
        let again = Config::parse(&a.canonical()).unwrap();
        assert_eq!(a, again);
    }
}
