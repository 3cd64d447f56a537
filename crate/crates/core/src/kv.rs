//! `key = value` text files used for configs and dataset manifests.
//!
//! Blank lines and lines starting with `#` are skipped. Keys are unique.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CoreError::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(CoreError::Parse {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(CoreError::Parse {
                    line: i + 1,
                    msg: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(KvFile { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, (_, v))| (k.as_str(), v.as_str()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| CoreError::Parse {
                line: *line,
                msg: format!("invalid value {v:?} for {key}"),
            }),
        }
    }

    /// Comma-separated list of numbers.
    pub fn parse_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some((line, v)) = self.entries.get(key) else {
            return Ok(None);
        };
        if v.is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|_| CoreError::Parse {
                line: *line,
                msg: format!("invalid number list {v:?} for {key}"),
            })
    }

    /// Keys not in `allowed` are a configuration error.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for k in self.keys() {
            if !allowed.contains(&k) {
                return Err(CoreError::config(format!("unknown key {k:?}")));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        self.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_renders() {
        let kv = KvFile::parse("# c\nsteps = 20\n\nfilter_add = 0, 0.5 ,1\n").unwrap();
        assert_eq!(kv.parse_value::<usize>("steps").unwrap(), Some(20));
        assert_eq!(kv.parse_list("filter_add").unwrap(), Some(vec![0.0, 0.5, 1.0]));
        let again = KvFile::parse(&kv.render()).unwrap();
        assert!(again.iter().eq(kv.iter()));
    }

    #[test]
    fn errors_carry_line_numbers() {
        match KvFile::parse("a = 1\nnot a pair\n") {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(KvFile::parse("a = 1\na = 2").is_err());
        let kv = KvFile::parse("x = abc").unwrap();
        assert!(kv.parse_value::<f64>("x").is_err());
        assert!(kv.reject_unknown(&["y"]).is_err());
    }
}
