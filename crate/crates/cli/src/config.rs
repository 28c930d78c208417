//! Plain-text key/value configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. The `corpus` key
//! may repeat to list several paths. Recognized keys: `target_bitrate`,
//! `num_nwc`, `use_lpc`, `epochs`, `phase2_epochs`, `seed`, `corpus`,
//! `batch_size`, `max_train_frames`, `max_val_frames`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nwcodec_core::{CodecError, Result};

#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
    pub corpus: Vec<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "target_bitrate",
    "num_nwc",
    "use_lpc",
    "epochs",
    "phase2_epochs",
    "seed",
    "corpus",
    "batch_size",
    "max_train_frames",
    "max_val_frames",
];

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = FileConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CodecError::Config(format!("config line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CodecError::Config(format!(
                    "config line {}: unknown key '{}'",
                    lineno + 1,
                    key
                )));
            }
            if key == "corpus" {
                cfg.corpus.push(PathBuf::from(value));
            } else {
                cfg.values.insert(key.to_string(), value.to_string());
            }
        }
        Ok(cfg)
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse_value(key, |v| v.parse::<u64>().ok())
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse_value(key, |v| v.parse::<usize>().ok())
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse_value(key, |v| v.parse::<f64>().ok())
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.parse_value(key, |v| match v {
            "true" | "1" | "yes" => Some(true),
            "false" | "0" | "no" => Some(false),
            _ => None,
        })
    }

    fn parse_value<T>(&self, key: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => f(v)
                .map(Some)
                .ok_or_else(|| CodecError::Config(format!("config key '{}': bad value '{}'", key, v))),
        }
    }
}
