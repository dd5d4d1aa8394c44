//! Flat `key = value` config files and the resolved run configuration.
//!
//! A value comes from the command-line flag if given, else from the config
//! file, else from the built-in default. The seed additionally falls back to
//! `STDEEP_SEED` before the default of 0.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "STDEEP_SEED";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Bad invocation: unknown key, unparsable value, missing required setting.
#[derive(Debug)]
pub struct UsageError(pub String);

impl Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| UsageError(format!("config line {}: expected key = value", n + 1)))?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", n + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(UsageError(format!("config line {}: duplicate key {key}", n + 1)));
        }
    }
    Ok(out)
}

/// Everything a run was invoked with, after precedence was applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub out: String,
    pub params: BTreeMap<String, String>,
}

pub struct Resolver {
    file: BTreeMap<String, String>,
    used: Vec<String>,
    params: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> anyhow::Result<Self> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { file, used: Vec::new(), params: BTreeMap::new() })
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.push(key.to_string());
        match self.file.get(key) {
            Some(v) => v.parse().map(Some).map_err(|e| usage(format!("config key {key} = {v:?}: {e}"))),
            None => Ok(None),
        }
    }

    /// Flag, then file, then `default`.
    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> anyhow::Result<T>
    where
        T::Err: Display,
    {
        self.used.push(key.to_string());
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.params.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like [`Resolver::get`] without a default; absent values are not recorded.
    pub fn opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> anyhow::Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.push(key.to_string());
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.params.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> anyhow::Result<T>
    where
        T::Err: Display,
    {
        self.opt(key, flag)?.ok_or_else(|| usage(format!("missing required setting `{key}` (flag or config key)")))
    }

    /// Parses a resolved string value, reporting failures as usage errors.
    pub fn parse<T: FromStr>(key: &str, v: &str) -> anyhow::Result<T>
    where
        T::Err: Display,
    {
        v.parse().map_err(|e| usage(format!("{key} = {v:?}: {e}")))
    }

    /// Flag, then file, then `STDEEP_SEED`, then 0.
    pub fn seed(&mut self, flag: Option<u64>) -> anyhow::Result<u64> {
        let v = match flag {
            Some(v) => v,
            None => match self.from_file("seed")? {
                Some(v) => v,
                None => match std::env::var(SEED_ENV) {
                    Ok(s) => s.trim().parse().map_err(|e| usage(format!("{SEED_ENV}={s:?}: {e}")))?,
                    Err(_) => 0,
                },
            },
        };
        Ok(v)
    }

    /// Rejects config keys the command does not know and returns the record.
    pub fn finish(self, command: &str, seed: u64, out: &Path) -> anyhow::Result<RunConfig> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(k) && k.as_str() != "seed").collect();
        if !unknown.is_empty() {
            return Err(usage(format!("unknown config keys for `{command}`: {unknown:?}")));
        }
        Ok(RunConfig { command: command.into(), version: VERSION.into(), seed, out: out.display().to_string(), params: self.params })
    }
}
