//! Line-oriented `key = value` text files. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(line_no, "empty key"));
            }
            if entries
                .insert(key.to_string(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::parse(line_no, format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(*line, format!("bad value `{v}` for `{key}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))
    }

    /// Whitespace- or comma-separated list of numbers.
    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some((line, v)) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(*line, format!("bad number `{s}` in `{key}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Fixed-length list, e.g. a `lo, hi` range.
    pub fn get_array<const N: usize>(&self, key: &str) -> Result<Option<[f64; N]>> {
        match self.get_list(key)? {
            None => Ok(None),
            Some(v) => <[f64; N]>::try_from(v.as_slice()).map(Some).map_err(|_| {
                Error::parse(
                    self.entries[key].0,
                    format!("`{key}` needs {N} values, got {}", v.len()),
                )
            }),
        }
    }

    /// Rejects keys outside `known`, catching typos in config files.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            if !known.contains(&key.as_str()) {
                return Err(Error::parse(*line, format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: KeyValues) {
        self.entries.extend(other.entries);
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_comments_and_lists() {
        let kv = KeyValues::parse("# header\nfx = 600 # inline\n\nrange = -3, 3\nname=abc\n").unwrap();
        assert_eq!(kv.require::<f64>("fx").unwrap(), 600.0);
        assert_eq!(kv.get_array::<2>("range").unwrap(), Some([-3.0, 3.0]));
        assert_eq!(kv.get_str("name"), Some("abc"));
        assert_eq!(kv.get_or("missing", 7u32).unwrap(), 7);
    }

    #[test]
    fn reports_line_numbers() {
        let err = KeyValues::parse("a = 1\nbroken line\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let kv = KeyValues::parse("a = 1\nb = x\n").unwrap();
        assert!(matches!(kv.get::<f64>("b"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            KeyValues::parse("a=1\na=2").unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn unknown_and_missing_keys() {
        let kv = KeyValues::parse("a = 1\ntypo = 2").unwrap();
        assert!(kv.check_known(&["a"]).is_err());
        assert!(matches!(kv.require::<f64>("zzz"), Err(Error::Config(_))));
        assert!(kv.get_array::<3>("a").is_err());
    }
}
