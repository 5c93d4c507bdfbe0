//! Flat `key = value` config files.
//!
//! One pair per line, `#` starts a comment, blank lines are skipped.
//! Values are plain strings until a typed getter parses them: lists are
//! comma-separated, placement masks are bitstrings like `10110`. Keys are
//! unique. Every getter marks its key as read so callers can reject
//! leftovers with [`ConfigMap::unused`]; a typo'd key then fails loudly
//! instead of silently leaving a default in force.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct ConfigMap {
    pairs: Vec<(String, String)>,
    index: HashMap<String, usize>,
    read: RefCell<HashSet<String>>,
}

fn bad(msg: String) -> Error {
    Error::Usage(format!("config: {msg}"))
}

impl ConfigMap {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut map = ConfigMap::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if key.is_empty() {
                return Err(bad(format!("line {}: empty key", lineno + 1)));
            }
            if map.index.contains_key(&key) {
                return Err(bad(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            map.index.insert(key.clone(), map.pairs.len());
            map.pairs.push((key, value));
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Raw string value, marking the key as read.
    pub fn raw(&self, key: &str) -> Option<&str> {
        let i = *self.index.get(key)?;
        self.read.borrow_mut().insert(key.to_string());
        Some(self.pairs[i].1.as_str())
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| bad(format!("key `{key}`: cannot parse `{v}`: {e}"))),
        }
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list; empty string parses to an empty list.
    pub fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(v) = self.raw(key) else { return Ok(None) };
        if v.is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse()
                    .map_err(|e| bad(format!("key `{key}`: cannot parse list item `{item}`: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Bitstring mask, e.g. `1101` → `[true, true, false, true]`.
    pub fn mask(&self, key: &str) -> Result<Option<Vec<bool>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(bad(format!("key `{key}`: mask may only contain 0/1, got `{other}`"))),
            })
            .collect::<Result<Vec<bool>>>()
            .map(Some)
    }

    /// Keys never touched by any getter, in file order.
    pub fn unused(&self) -> Vec<String> {
        let read = self.read.borrow();
        self.pairs
            .iter()
            .map(|(k, _)| k)
            .filter(|k| !read.contains(*k))
            .cloned()
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
