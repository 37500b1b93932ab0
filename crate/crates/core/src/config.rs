//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Later keys replace
//! earlier ones. Values are kept as strings; callers parse them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub source: String,
    pub values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: i + 1,
                    message: format!("expected `key = value`, found '{line}'"),
                });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            values.insert(key.to_string(), v.trim().to_string());
        }
        Ok(ConfigFile {
            source: source.to_string(),
            values,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("{}: invalid value '{v}' for '{key}'", self.source))),
        }
    }

    /// Fails on any key outside `known`, so typos do not pass silently.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        match self.values.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("{}: unknown key '{k}'", self.source))),
            None => Ok(()),
        }
    }
}

/// Picks the first available value: command-line flag, then config file, then default.
pub fn resolve<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    Ok(file.get(key)?.unwrap_or(default))
}

pub fn format_pairs(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_precedence() {
        let cfg = ConfigFile::parse("# c\nlr = 0.01\n\niterations=200\n", "c.txt").unwrap();
        assert_eq!(cfg.get::<f64>("lr").unwrap(), Some(0.01));
        assert_eq!(resolve(Some(0.5), &cfg, "lr", 1.0).unwrap(), 0.5);
        assert_eq!(resolve(None, &cfg, "lr", 1.0).unwrap(), 0.01);
        assert_eq!(resolve(None, &cfg, "seed", 3u64).unwrap(), 3);
        assert!(cfg.check_keys(&["lr"]).is_err());
        assert!(cfg.check_keys(&["lr", "iterations"]).is_ok());
    }

    #[test]
    fn errors() {
        let e = ConfigFile::parse("a = 1\nnonsense\n", "c.txt").unwrap_err();
        assert!(e.to_string().starts_with("c.txt:2:"), "{e}");
        let cfg = ConfigFile::parse("lr = fast", "c").unwrap();
        assert!(cfg.get::<f64>("lr").is_err());
    }

    #[test]
    fn echo_round_trip() {
        let pairs = vec![("a".to_string(), "1".to_string()), ("b".to_string(), "x y".to_string())];
        let cfg = ConfigFile::parse(&format_pairs(&pairs), "e").unwrap();
        assert_eq!(cfg.get_str("b"), Some("x y"));
    }
}
