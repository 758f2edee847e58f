//! Line-oriented `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are
//! `[A-Za-z0-9_.-]+`; values run to the end of the line, trimmed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
    lines: BTreeMap<String, usize>,
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let mut cfg = ConfigFile::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Config { line: line_no, reason };
        let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c)) {
            return Err(err(format!("invalid key {key:?}")));
        }
        if cfg.lines.contains_key(key) {
            return Err(err(format!("duplicate key {key:?}")));
        }
        cfg.entries.insert(key.to_string(), value.trim().to_string());
        cfg.lines.insert(key.to_string(), line_no);
    }
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<ConfigFile> {
    let bytes = crate::io::read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format("config", "file is not UTF-8"))?;
    parse_config(&text)
}

impl ConfigFile {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parse a typed value, reporting the line it came from on failure.
    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some(raw) = self.get(key) else { return Ok(None) };
        raw.parse().map(Some).map_err(|_| Error::Config {
            line: self.lines.get(key).copied().unwrap_or(0),
            reason: format!("cannot parse {key} = {raw:?}"),
        })
    }

    /// Override a value; errors on it report line 0.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keys not in `known`, for reporting typos.
    pub fn unknown_keys<'a>(&'a self, known: &[&str]) -> Vec<&'a str> {
        self.keys().filter(|k| !known.contains(k)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spacing() {
        let c = parse_config("# run\n\niterations = 500\n  lr=1e-3  \nname = a = b\n").unwrap();
        assert_eq!(c.parse::<usize>("iterations").unwrap(), Some(500));
        assert_eq!(c.parse::<f64>("lr").unwrap(), Some(1e-3));
        assert_eq!(c.get("name"), Some("a = b"));
        assert_eq!(c.parse::<usize>("missing").unwrap(), None);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_config("a = 1\nnonsense\n") {
            Err(Error::Config { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("a=1\na=2"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(
            parse_config("bad key = 1"),
            Err(Error::Config { line: 1, .. })
        ));
        let c = parse_config("\n\nlr = fast").unwrap();
        assert!(matches!(c.parse::<f64>("lr"), Err(Error::Config { line: 3, .. })));
    }

    #[test]
    fn text_round_trip() {
        let c = parse_config("b = 2\na = x y\n").unwrap();
        assert_eq!(parse_config(&c.to_text()).unwrap().to_text(), c.to_text());
    }
}
