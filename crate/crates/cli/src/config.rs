//! Run parameters: `key=value` files, command-line overrides and defaults.
//!
//! A run is fully described by its command plus a sorted map of resolved
//! parameters. The same map, with paths made absolute, is written back as
//! the run manifest, so a manifest is itself a valid config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lpca::{LpcaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Estimate,
    Covadjust,
    Synth,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::Covadjust => "covadjust",
            Command::Synth => "synth",
            Command::Simulate => "simulate",
        }
    }

    /// Accepted keys with their defaults; keys without a default are
    /// either required or optional, as the command decides.
    fn keys(self) -> Vec<(&'static str, Option<&'static str>)> {
        const DATA: [(&str, Option<&str>); 10] = [
            ("input", None),
            ("header", Some("false")),
            ("missing_token", Some("NA")),
            ("k", Some("c:1")),
            ("distance", Some("pseudo-max")),
            ("rule", Some("ratio:2:loglogk")),
            ("split", Some("0.5,0.5")),
            ("split_mode", Some("contiguous")),
            ("match_rows", None),
            ("seed", Some("0")),
        ];
        let mut keys = DATA.to_vec();
        match self {
            Command::Estimate => keys.extend([
                ("gpca", Some("false")),
                ("kmax", Some("8")),
                ("latent_gap", None),
            ]),
            Command::Covadjust => {
                keys[6] = ("split", Some("1/3,1/3,1/3"));
                keys.push(("covariates", None));
            }
            Command::Synth => keys.extend([
                ("treated", None),
                ("p0", None),
                ("mode", Some("additive")),
                ("initial_level", None),
            ]),
            Command::Simulate => {
                keys = vec![
                    ("model", Some("1")),
                    ("n", Some("200")),
                    ("p", Some("200")),
                    ("reps", Some("1")),
                    ("c", Some("1")),
                    ("seed", Some("0")),
                    ("distance", Some("pseudo-max")),
                    ("split", Some("0.5")),
                    ("rule", Some("ratio:2:loglogk")),
                    ("kmax", Some("8")),
                    ("gpca", Some("true")),
                    ("noise", Some("model")),
                ]
            }
        }
        keys
    }
}

impl FromStr for Command {
    type Err = LpcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimate" => Ok(Command::Estimate),
            "covadjust" => Ok(Command::Covadjust),
            "synth" => Ok(Command::Synth),
            "simulate" => Ok(Command::Simulate),
            other => Err(LpcaError::Config(format!("unknown command '{other}'"))),
        }
    }
}

/// Keys holding file paths; these are made absolute before a run.
const PATH_KEYS: [&str; 1] = ["input"];

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// repeated keys are an error.
pub fn parse_kv(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            LpcaError::Config(format!(
                "{}:{}: expected key=value, got '{line}'",
                origin.display(),
                no + 1
            ))
        })?;
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(LpcaError::Config(format!(
                "{}:{}: duplicate key '{key}'",
                origin.display(),
                no + 1
            )));
        }
    }
    Ok(map)
}

fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| LpcaError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_kv(&text, path)
}

fn absolute(path: &str, base: &Path) -> Result<String> {
    let p = base.join(path);
    let abs = p.canonicalize().map_err(|e| LpcaError::Io { path: p.clone(), source: e })?;
    abs.to_str()
        .map(str::to_string)
        .ok_or_else(|| LpcaError::Config(format!("path {} is not valid UTF-8", abs.display())))
}

/// Rewrites relative paths against `base` and checks they exist.
fn absolutize(key: &str, value: &str, base: &Path) -> Result<String> {
    if PATH_KEYS.contains(&key) {
        return absolute(value, base);
    }
    if key == "covariates" {
        return value
            .split(',')
            .map(|p| absolute(p.trim(), base))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.join(","));
    }
    if key == "distance" {
        if let Some(w) = value.strip_prefix("weighted:") {
            return Ok(format!("weighted:{}", absolute(w, base)?));
        }
    }
    Ok(value.to_string())
}

/// Resolved parameters of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl Params {
    /// Layers defaults, then the config file, then command-line overrides.
    /// Relative paths in a config file are taken relative to that file.
    pub fn resolve(
        command: Command,
        config: Option<&Path>,
        overrides: &[(&str, Option<String>)],
    ) -> Result<Self> {
        let cwd = std::env::current_dir().map_err(|e| LpcaError::Io {
            path: PathBuf::from("."),
            source: e,
        })?;
        let mut layered: BTreeMap<String, (String, PathBuf)> = BTreeMap::new();
        if let Some(path) = config {
            let base = path
                .parent()
                .map(|d| cwd.join(d))
                .unwrap_or_else(|| cwd.clone());
            for (k, v) in read_kv(path)? {
                if k == "command" {
                    if v != command.name() {
                        return Err(LpcaError::Config(format!(
                            "config file is for '{v}', not '{}'",
                            command.name()
                        )));
                    }
                    continue;
                }
                if k == "version" {
                    continue;
                }
                layered.insert(k, (v, base.clone()));
            }
        }
        for (k, v) in overrides {
            if let Some(v) = v {
                layered.insert(k.to_string(), (v.clone(), cwd.clone()));
            }
        }

        let known = command.keys();
        if let Some(k) = layered.keys().find(|k| !known.iter().any(|(name, _)| name == k)) {
            return Err(LpcaError::Config(format!(
                "unknown key '{k}' for command '{}'",
                command.name()
            )));
        }
        let mut values = BTreeMap::new();
        for &(key, default) in &known {
            match layered.get(key) {
                Some((v, base)) => {
                    values.insert(key.to_string(), absolutize(key, v, base)?);
                }
                None => {
                    if let Some(d) = default {
                        values.insert(key.to_string(), d.to_string());
                    }
                }
            }
        }
        Ok(Self { command, values })
    }

    /// Loads a manifest written by [`Params::manifest`].
    pub fn from_manifest(path: &Path) -> Result<(Self, String)> {
        let mut map = read_kv(path)?;
        let command: Command = map
            .remove("command")
            .ok_or_else(|| LpcaError::Config(format!("{}: no command", path.display())))?
            .parse()?;
        let version = map.remove("version").unwrap_or_default();
        let overrides: Vec<(&str, Option<String>)> =
            map.iter().map(|(k, v)| (k.as_str(), Some(v.clone()))).collect();
        Ok((Self::resolve(command, None, &overrides)?, version))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| LpcaError::Config(format!("missing required key '{key}'")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| LpcaError::Config(format!("invalid value '{raw}' for '{key}'")))
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            Some(_) => self.parse(key).map(Some),
            None => Ok(None),
        }
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.require(key)? {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(LpcaError::Config(format!("invalid boolean '{other}' for '{key}'"))),
        }
    }

    /// Comma-separated fractions; each is a decimal or `a/b`.
    pub fn fractions(&self, key: &str) -> Result<Vec<f64>> {
        self.require(key)?
            .split(',')
            .map(|s| parse_fraction(s.trim()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| LpcaError::Config(format!("invalid fractions for '{key}'")))
    }

    /// Manifest text: command, version, then every resolved key.
    pub fn manifest(&self) -> String {
        let mut out = String::from("# lpca run manifest; replay with `lpca replay <this file>`\n");
        let _ = writeln!(out, "command={}", self.command.name());
        let _ = writeln!(out, "version={}", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

fn parse_fraction(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            (b != 0.0).then(|| a / b)
        }
        None => s.parse().ok(),
    }
}
