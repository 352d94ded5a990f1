//! Flat `key=value` run manifests, one pair per line in insertion order.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

#[derive(Debug)]
pub enum ManifestError {
    Io(io::Error),
    /// 1-based line number and the offending text.
    Syntax(usize, String),
    DuplicateKey(String),
}

impl fmt::Display for ManifestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "manifest i/o: {e}"),
            Self::Syntax(line, text) => write!(f, "manifest line {line}: expected key=value, got {text:?}"),
            Self::DuplicateKey(k) => write!(f, "manifest repeats key {k:?}"),
        }
    }
}

impl std::error::Error for ManifestError {}

impl From<io::Error> for ManifestError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends or replaces `key`. Keys may not contain `=` or newlines and
    /// values may not contain newlines.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        assert!(!key.contains(['=', '\n']) && !value.contains('\n'), "unrepresentable manifest entry {key:?}");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut m = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ManifestError::Syntax(i + 1, line.to_string()))?;
            if k.is_empty() {
                return Err(ManifestError::Syntax(i + 1, line.to_string()));
            }
            if m.get(k).is_some() {
                return Err(ManifestError::DuplicateKey(k.to_string()));
            }
            m.entries.push((k.to_string(), v.to_string()));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_string())
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}
