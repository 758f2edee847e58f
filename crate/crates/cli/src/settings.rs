//! Option resolution: built-in defaults, then the config file, then flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use segcrowd::config::{read_config, ConfigFile};

use crate::CliResult;

pub struct Resolver {
    file: ConfigFile,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> CliResult<Self> {
        let file = match config {
            Some(p) => read_config(p)?,
            None => ConfigFile::default(),
        };
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr + Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file.parse(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Record a value that only comes from flags (paths and the like).
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Reject config keys the subcommand does not understand, then echo
    /// the resolved settings to stderr.
    pub fn finish(self, command: &str) -> CliResult<()> {
        let known: Vec<&str> = self.resolved.keys().map(String::as_str).collect();
        let unknown = self.file.unknown_keys(&known);
        if !unknown.is_empty() {
            return Err(format!("unknown config key(s) for {command}: {}", unknown.join(", ")).into());
        }
        eprintln!("# segcrowd {command}");
        for (k, v) in &self.resolved {
            eprintln!("{k} = {v}");
        }
        Ok(())
    }
}

/// `SEGCROWD_SEED` as the lowest-precedence seed source.
pub fn env_seed() -> CliResult<u64> {
    match std::env::var("SEGCROWD_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| format!("SEGCROWD_SEED={s:?} is not an unsigned integer").into()),
        Err(_) => Ok(0),
    }
}
