//! Line-based `key = value` configuration with `[section]` headers.
//!
//! Top-level keys apply to every command, keys under `[<command>]` only to
//! that command. Command-line flags override both.

use std::collections::BTreeMap;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::group::{Limits, PrimeField, Space};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Parse {
                    line: i + 1,
                    msg: "unterminated section header".into(),
                })?;
                current = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            sections
                .entry(current.clone())
                .or_default()
                .insert(k.replace('-', "_"), v.trim().to_string());
        }
        Ok(Self { sections })
    }

    pub fn read(path: &str) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn section(&self, name: &str) -> impl Iterator<Item = (&String, &String)> {
        self.sections.get(name).into_iter().flatten()
    }
}

const GLOBAL_KEYS: [&str; 8] = [
    "p",
    "n",
    "strict",
    "seed",
    "trials",
    "tol",
    "max_entries",
    "max_work",
];

/// Command-specific keys and their defaults.
pub fn command_defaults(command: &str) -> Result<Vec<(&'static str, &'static str)>> {
    Ok(match command {
        "norm" => vec![
            ("file", ""),
            ("u", ""),
            ("star", ""),
            ("box", "false"),
            ("audit", "false"),
        ],
        "count" => vec![("file", ""), ("example", ""), ("system", "")],
        "verify" => vec![("suite", "all")],
        "increment" => vec![
            ("file", ""),
            ("planted", ""),
            ("eps", "0.1"),
            ("tau", "0.05"),
            ("gain_floor", "1e-9"),
            ("max_steps", "16"),
            ("trajectory", "trajectory.jsonl"),
        ],
        "extremal" => vec![("method", "exhaustive"), ("budget", "1000000")],
        "pseudorandomize" => vec![
            ("file", ""),
            ("planted", ""),
            ("eps", "0.1"),
            ("tau", "0.1"),
        ],
        other => return Err(Error::InvalidArgument(format!("unknown command {other:?}"))),
    })
}

fn u128_as_string<S: Serializer>(v: &u128, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

/// Fully resolved configuration, echoed verbatim into every report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub p: u64,
    pub n: usize,
    pub strict_mode: bool,
    pub seed: u64,
    pub trials: usize,
    pub tolerance: f64,
    pub max_entries: usize,
    #[serde(serialize_with = "u128_as_string")]
    pub max_work: u128,
    pub params: BTreeMap<String, String>,
}

fn parse_key<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value {v:?} for {key}")))
}

impl RunConfig {
    /// Defaults, then the file's top-level and command sections, then flags.
    pub fn resolve(
        command: &str,
        file: Option<&ConfigFile>,
        flags: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let defaults = command_defaults(command)?;
        let mut map: BTreeMap<String, String> = [
            ("p", "3"),
            ("n", "2"),
            ("strict", "false"),
            ("seed", "0"),
            ("trials", "100"),
            ("tol", "1e-9"),
        ]
        .iter()
        .chain(&defaults)
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let limits = Limits::default();
        map.insert("max_entries".into(), limits.max_entries.to_string());
        map.insert("max_work".into(), limits.max_work.to_string());
        let allowed = |k: &str| GLOBAL_KEYS.contains(&k) || defaults.iter().any(|(d, _)| *d == k);
        if let Some(f) = file {
            for (k, v) in f.section("") {
                if GLOBAL_KEYS.contains(&k.as_str()) {
                    map.insert(k.clone(), v.clone());
                } else if !defaults.iter().any(|(d, _)| d == k) && command_defaults_any(k) {
                    // a key for another command; ignored here
                } else if allowed(k) {
                    map.insert(k.clone(), v.clone());
                } else {
                    return Err(Error::InvalidArgument(format!("unknown config key {k:?}")));
                }
            }
            for (k, v) in f.section(command) {
                if !allowed(k) {
                    return Err(Error::InvalidArgument(format!(
                        "unknown key {k:?} for {command}"
                    )));
                }
                map.insert(k.clone(), v.clone());
            }
        }
        for (k, v) in flags {
            if !allowed(k) {
                return Err(Error::InvalidArgument(format!(
                    "unknown key {k:?} for {command}"
                )));
            }
            map.insert(k.clone(), v.clone());
        }
        let cfg = Self {
            command: command.to_string(),
            p: parse_key("p", &map["p"])?,
            n: parse_key("n", &map["n"])?,
            strict_mode: parse_key("strict", &map["strict"])?,
            seed: parse_key("seed", &map["seed"])?,
            trials: parse_key("trials", &map["trials"])?,
            tolerance: parse_key("tol", &map["tol"])?,
            max_entries: parse_key("max_entries", &map["max_entries"])?,
            max_work: parse_key("max_work", &map["max_work"])?,
            params: map
                .into_iter()
                .filter(|(k, _)| !GLOBAL_KEYS.contains(&k.as_str()))
                .collect(),
        };
        cfg.space()?;
        if !(cfg.tolerance >= 0.0) {
            return Err(Error::InvalidArgument("tol must be non-negative".into()));
        }
        Ok(cfg)
    }

    pub fn field(&self) -> Result<PrimeField> {
        PrimeField::with_mode(self.p, self.strict_mode)
    }

    pub fn limits(&self) -> Limits {
        Limits {
            max_entries: self.max_entries,
            max_work: self.max_work,
        }
    }

    /// F_p^n under the configured caps.
    pub fn space(&self) -> Result<Space> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        Space::with_limits(self.field()?, self.n, self.limits())
    }

    pub fn param(&self, key: &str) -> &str {
        self.params.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn param_opt(&self, key: &str) -> Option<&str> {
        Some(self.param(key)).filter(|v| !v.is_empty())
    }

    pub fn parse_param<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        parse_key(key, self.param(key))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        self.parse_param(key)
    }

    /// Comma-separated list, empty when unset.
    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.param(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_key(key, s))
            .collect()
    }
}

fn command_defaults_any(key: &str) -> bool {
    [
        "norm",
        "count",
        "verify",
        "increment",
        "extremal",
        "pseudorandomize",
    ]
    .iter()
    .any(|c| command_defaults(c).is_ok_and(|d| d.iter().any(|(k, _)| *k == key)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_overrides() {
        let text = "# run\np = 5\n[increment]\nmax-steps = 3\neps=0.2\n[extremal]\nbudget = 7\n";
        let f = ConfigFile::parse(text).unwrap();
        let mut flags = BTreeMap::new();
        flags.insert("eps".to_string(), "0.3".to_string());
        let c = RunConfig::resolve("increment", Some(&f), &flags).unwrap();
        assert_eq!(c.p, 5);
        assert_eq!(c.param("max_steps"), "3");
        assert_eq!(c.param("eps"), "0.3");
        assert!(!c.params.contains_key("budget"));
    }

    #[test]
    fn bad_lines_report_line_numbers() {
        assert_eq!(
            ConfigFile::parse("p = 3\noops\n"),
            Err(Error::Parse {
                line: 2,
                msg: "expected key = value, got \"oops\"".into()
            })
        );
        let f = ConfigFile::parse("[norm]\nwhat = 1\n").unwrap();
        assert!(RunConfig::resolve("norm", Some(&f), &BTreeMap::new()).is_err());
        let mut flags = BTreeMap::new();
        flags.insert("p".to_string(), "4".to_string());
        assert_eq!(
            RunConfig::resolve("norm", None, &flags),
            Err(Error::NotOddPrime(4))
        );
    }
}
