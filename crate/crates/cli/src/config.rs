//! Flat `key = value` configuration files with `[section]` headers.
//!
//! ```text
//! # shared settings
//! data = hormone.csv
//! seed = 7
//!
//! [test]
//! primitive = perm, cluster-sign
//! coef = 1
//! a0 = 0
//! ```
//!
//! Keys before the first header are global; a subcommand reads its own
//! section first and falls back to the global keys.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("config line {line}: invalid value {value:?} for `{key}`: {message}")]
    Value {
        line: usize,
        key: String,
        value: String,
        message: String,
    },

    #[error("config line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },

    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    pub line: usize,
}

/// Parsed configuration, keyed by section (`""` for global keys).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line,
                    message: "section header is missing `]`".into(),
                })?;
                let name = name.trim();
                if name.is_empty() {
                    return Err(ConfigError::Syntax {
                        line,
                        message: "empty section name".into(),
                    });
                }
                current = name.to_string();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, found {content:?}"),
            })?;
            let key = normalize_key(key);
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    message: "empty key".into(),
                });
            }
            let section = sections.entry(current.clone()).or_default();
            if let Some(prev) = section.get(&key) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("duplicate key `{key}` (first set on line {})", prev.line),
                });
            }
            section.insert(
                key,
                Entry {
                    value: value.trim().to_string(),
                    line,
                },
            );
        }
        Ok(Self { sections })
    }

    /// Looks `key` up in `section`, then among the global keys.
    pub fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        let key = normalize_key(key);
        self.sections
            .get(section)
            .and_then(|s| s.get(&key))
            .or_else(|| self.sections.get("").and_then(|s| s.get(&key)))
    }

    pub fn parse_value<T: FromStr>(
        &self,
        section: &str,
        key: &str,
    ) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|err: T::Err| ConfigError::Value {
                    line: e.line,
                    key: normalize_key(key),
                    value: e.value.clone(),
                    message: err.to_string(),
                }),
        }
    }

    /// Fails on keys in `section` (or the global keys) outside `allowed`.
    pub fn check_keys(&self, section: &str, allowed: &[&str]) -> Result<(), ConfigError> {
        for name in ["", section] {
            if let Some(entries) = self.sections.get(name) {
                for (key, e) in entries {
                    // Global keys may belong to other subcommands.
                    if name.is_empty() {
                        continue;
                    }
                    if !allowed.iter().any(|a| normalize_key(a) == *key) {
                        return Err(ConfigError::UnknownKey {
                            line: e.line,
                            section: section.to_string(),
                            key: key.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# comment
seed = 7
draws = 500

[test]
primitive = perm, sign   # trailing comment
draws = 2000
a-0 = 0.5
";

    #[test]
    fn sections_override_globals() {
        let c = ConfigFile::parse(SAMPLE).unwrap();
        assert_eq!(c.parse_value::<usize>("test", "draws").unwrap(), Some(2000));
        assert_eq!(c.parse_value::<usize>("ci", "draws").unwrap(), Some(500));
        assert_eq!(c.parse_value::<u64>("test", "seed").unwrap(), Some(7));
        assert_eq!(c.get("test", "primitive").unwrap().value, "perm, sign");
        assert_eq!(c.parse_value::<f64>("test", "a_0").unwrap(), Some(0.5));
    }

    #[test]
    fn bad_value_reports_line_and_key() {
        let c = ConfigFile::parse("[test]\n\ndraws = lots\n").unwrap();
        let err = c.parse_value::<usize>("test", "draws").unwrap_err();
        assert!(matches!(err, ConfigError::Value { line: 3, ref key, .. } if key == "draws"));
        assert!(err.to_string().starts_with("config line 3"));
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        assert_eq!(
            ConfigFile::parse("a = 1\nnonsense\n").unwrap_err(),
            ConfigError::Syntax {
                line: 2,
                message: "expected `key = value`, found \"nonsense\"".into()
            }
        );
        assert!(matches!(
            ConfigFile::parse("[test\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            ConfigFile::parse("a=1\na=2\n"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let c = ConfigFile::parse("[test]\ndraws = 5\ndrawz = 5\n").unwrap();
        let err = c.check_keys("test", &["draws"]).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 3, .. }));
    }
}
