//! Line-oriented `key = value` configuration.
//!
//! ```text
//! # detection
//! attack_class = udp
//! threshold    = 500
//! block_size   = 128MB
//! workers      = 8
//! reducers     = 1
//!
//! # capture
//! file_size  = 10MB
//! file_count = 3
//! peer       = 10.12.32.101:7070
//! ```
//!
//! Sizes accept a `KB`, `MB` or `GB` suffix (powers of 1024). Command-line
//! flags override the file, and the file overrides built-in defaults.

use std::path::{Path, PathBuf};

use crate::detect::AttackClass;
use crate::engine::{default_workers, JobConfig, DEFAULT_BLOCK_SIZE, DEFAULT_THRESHOLD};
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("reading {path}: {message}")]
    Read { path: PathBuf, message: String },
}

/// Every tunable, unset ones left as `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    pub attack_class: Option<AttackClass>,
    pub threshold: Option<u64>,
    pub block_size: Option<u64>,
    pub workers: Option<usize>,
    pub reducers: Option<usize>,
    pub file_size: Option<u64>,
    pub file_count: Option<u32>,
    pub out_dir: Option<PathBuf>,
    pub peer: Option<String>,
    pub staging_dir: Option<PathBuf>,
    pub results_dir: Option<PathBuf>,
    pub queue_capacity: Option<usize>,
    pub retries: Option<u32>,
}

/// Parses a byte size such as `4096`, `32KB`, `128MB` or `1GB`.
pub fn parse_size(text: &str) -> Option<u64> {
    let text = text.trim();
    let upper = text.to_ascii_uppercase();
    let (digits, shift) = [("GB", 30), ("MB", 20), ("KB", 10), ("G", 30), ("M", 20), ("K", 10), ("B", 0)]
        .iter()
        .find_map(|(suffix, shift)| upper.strip_suffix(suffix).map(|d| (d.trim_end(), *shift)))
        .unwrap_or((upper.as_str(), 0));
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<u64>().ok()?.checked_mul(1 << shift)
}

fn value<T>(key: &str, raw: &str, parsed: Option<T>) -> Result<Option<T>, ConfigError> {
    parsed.map(Some).ok_or_else(|| ConfigError::BadValue {
        key: key.to_string(),
        value: raw.to_string(),
    })
}

impl Settings {
    pub fn parse(text: &str) -> Result<Settings, ConfigError> {
        let mut s = Settings::default();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split_once('#').map_or(raw_line, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
            let (key, raw) = (key.trim(), raw.trim());
            match key {
                "attack_class" => s.attack_class = value(key, raw, raw.parse().ok())?,
                "threshold" => s.threshold = value(key, raw, raw.parse().ok().filter(|t| *t > 0))?,
                "block_size" => s.block_size = value(key, raw, parse_size(raw).filter(|b| *b > 0))?,
                "workers" => s.workers = value(key, raw, raw.parse().ok().filter(|w| *w > 0))?,
                "reducers" => s.reducers = value(key, raw, raw.parse().ok().filter(|r| *r > 0))?,
                "file_size" => s.file_size = value(key, raw, parse_size(raw).filter(|b| *b > 0))?,
                "file_count" => s.file_count = value(key, raw, raw.parse().ok().filter(|c| *c > 0))?,
                "out_dir" => s.out_dir = Some(PathBuf::from(raw)),
                "peer" => s.peer = Some(raw.to_string()),
                "staging_dir" => s.staging_dir = Some(PathBuf::from(raw)),
                "results_dir" => s.results_dir = Some(PathBuf::from(raw)),
                "queue_capacity" => s.queue_capacity = value(key, raw, raw.parse().ok())?,
                "retries" => s.retries = value(key, raw, raw.parse().ok().filter(|r| *r > 0))?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line: line_no,
                        key: key.to_string(),
                    })
                }
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Settings, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Settings::parse(&text)
    }

    /// Fields set in `higher` win over fields set in `self`.
    pub fn overlay(self, higher: Settings) -> Settings {
        Settings {
            attack_class: higher.attack_class.or(self.attack_class),
            threshold: higher.threshold.or(self.threshold),
            block_size: higher.block_size.or(self.block_size),
            workers: higher.workers.or(self.workers),
            reducers: higher.reducers.or(self.reducers),
            file_size: higher.file_size.or(self.file_size),
            file_count: higher.file_count.or(self.file_count),
            out_dir: higher.out_dir.or(self.out_dir),
            peer: higher.peer.or(self.peer),
            staging_dir: higher.staging_dir.or(self.staging_dir),
            results_dir: higher.results_dir.or(self.results_dir),
            queue_capacity: higher.queue_capacity.or(self.queue_capacity),
            retries: higher.retries.or(self.retries),
        }
    }

    /// Job settings with defaults: UDP, threshold 500, 128 MiB blocks, one
    /// reducer, one worker per core.
    pub fn job_config(&self) -> JobConfig {
        JobConfig {
            attack_class: self.attack_class.unwrap_or(AttackClass::Udp),
            threshold: self.threshold.unwrap_or(DEFAULT_THRESHOLD),
            block_size: self.block_size.unwrap_or(DEFAULT_BLOCK_SIZE),
            worker_count: self.workers.unwrap_or_else(default_workers),
            reducer_count: self.reducers.unwrap_or(1),
        }
    }

    /// Pipeline settings; unset directories default to subdirectories of
    /// `work_dir`.
    pub fn pipeline_config(&self, work_dir: &Path) -> PipelineConfig {
        let mut config = PipelineConfig::new(self.job_config(), work_dir);
        if let Some(v) = self.file_size {
            config.file_size = v;
        }
        if let Some(v) = self.file_count {
            config.file_count = v;
        }
        if let Some(v) = &self.out_dir {
            config.out_dir = v.clone();
        }
        if let Some(v) = &self.peer {
            config.peer_address = v.clone();
        }
        if let Some(v) = &self.staging_dir {
            config.staging_dir = v.clone();
        }
        if let Some(v) = &self.results_dir {
            config.results_dir = v.clone();
        }
        if let Some(v) = self.queue_capacity {
            config.queue_capacity = v;
        }
        if let Some(v) = self.retries {
            config.retry.attempts = v;
        }
        config
    }
}
