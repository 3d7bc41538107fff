//! Flat `key=value` documents with `[section]` headers.
//!
//! Used for scene specs, hyperparameter grids, CLI config files and the
//! persisted model document. Section names may repeat (`[face]` once per
//! face); entries before the first header belong to a section named `""`.

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KeyValError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("[{section}] missing key `{key}`")]
    Missing { section: String, key: String },
    #[error("[{section}] key `{key}`: cannot parse `{value}`")]
    Value {
        section: String,
        key: String,
        value: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            entries: Vec::new(),
        }
    }

    /// Last value wins when a key repeats.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, KeyValError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| KeyValError::Value {
                section: self.name.clone(),
                key: key.to_string(),
                value: v.to_string(),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, KeyValError> {
        self.parse(key)?.ok_or_else(|| KeyValError::Missing {
            section: self.name.clone(),
            key: key.to_string(),
        })
    }

    /// Comma-separated list value.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, KeyValError> {
        let Some(raw) = self.get(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| KeyValError::Value {
                    section: self.name.clone(),
                    key: key.to_string(),
                    value: s.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self, KeyValError> {
        let mut sections = vec![Section::new("")];
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| KeyValError::Syntax {
                    line: idx + 1,
                    msg: "unterminated section header".into(),
                })?;
                sections.push(Section::new(name.trim()));
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| KeyValError::Syntax {
                line: idx + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(KeyValError::Syntax {
                    line: idx + 1,
                    msg: "empty key".into(),
                });
            }
            sections
                .last_mut()
                .unwrap()
                .entries
                .push((key.to_string(), v.trim().to_string()));
        }
        Ok(Self { sections })
    }

    pub fn load(path: &Path) -> Result<Self, KeyValError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// First section with this name.
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn sections_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().filter(move |s| s.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            if s.name.is_empty() && s.entries.is_empty() {
                continue;
            }
            if !s.name.is_empty() {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{}]\n", s.name));
            }
            for (k, v) in &s.entries {
                out.push_str(&format!("{k}={v}\n"));
            }
        }
        out
    }
}
