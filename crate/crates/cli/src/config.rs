//! Config-file support: a JSON object or `key=value` lines provide defaults
//! that command-line flags override.

use std::collections::BTreeMap;
use std::path::Path;

use survbank::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        let trimmed = text.trim_start();
        let mut values = BTreeMap::new();
        if trimmed.starts_with('{') {
            let json: serde_json::Value = serde_json::from_str(&text)?;
            let obj = json
                .as_object()
                .ok_or_else(|| Error::Config("config JSON must be an object".into()))?;
            for (k, v) in obj {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                values.insert(k.clone(), s);
            }
        } else {
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!("config line {}: expected key=value", lineno + 1))
                })?;
                values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Self { values })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("config key `{key}`: cannot parse `{raw}`"))),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse(key)
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse(key)
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse(key)
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.parse(key)
    }

    pub fn string(&self, key: &str) -> Option<String> {
        self.values.get(key).cloned()
    }
}

/// flag value, else config value, else default.
pub fn resolve<T>(flag: Option<T>, config: Result<Option<T>>, default: T) -> Result<T> {
    Ok(flag.or(config?).unwrap_or(default))
}
