//! The two-role capture → detection pipeline.
//!
//! The capture role rolls incoming log lines into fixed-size files and ships
//! each closed file to the detection role over one framed TCP connection
//! (announce, pull, data, ack). After `file_count` acknowledged files it
//! closes the batch; the detection role then runs a detection job over the
//! staged batch, sends the attackers back and deletes the staged inputs.

mod capture;
mod detection;
mod roller;
pub mod wire;

use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

pub use capture::{run_capture_role, transfer_file, BatchOutcome, CaptureReport, Connection, FileTiming};
pub use detection::{run_detection_role, DetectionHandle, DetectionServer};
pub use roller::{ClosedFile, LogRoller};

use crate::engine::{EngineError, JobConfig};
use crate::detect::AttackerReport;
use wire::{ErrorCode, WireError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Connection and transfer attempts before giving up.
    pub attempts: u32,
    /// Delay before the second attempt; doubled after each failure.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 5,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    /// Roll the current log file once it holds at least this many bytes.
    pub file_size: u64,
    /// Acknowledged files per detection batch.
    pub file_count: u32,
    /// Capture-side directory for rolled log files.
    pub out_dir: PathBuf,
    /// Detection role endpoint: the capture role dials it, the detection
    /// role listens on it.
    pub peer_address: String,
    /// Detection-side staging store, laid out as `<staging>/<batch>/<file>`.
    pub staging_dir: PathBuf,
    /// Detection-side directory for retained results files.
    pub results_dir: PathBuf,
    /// Closed files allowed to wait for transfer before intake blocks.
    pub queue_capacity: usize,
    pub retry: RetryPolicy,
    pub job: JobConfig,
}

impl PipelineConfig {
    pub fn new(job: JobConfig, work_dir: impl Into<PathBuf>) -> Self {
        let work_dir = work_dir.into();
        PipelineConfig {
            file_size: 10 << 20,
            file_count: 1,
            out_dir: work_dir.join("capture"),
            peer_address: "127.0.0.1:7070".to_string(),
            staging_dir: work_dir.join("staging"),
            results_dir: work_dir.join("results"),
            queue_capacity: 1,
            retry: RetryPolicy::default(),
            job,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.file_size == 0 {
            return Err(PipelineError::InvalidConfig("file_size must be positive".into()));
        }
        if self.file_count == 0 {
            return Err(PipelineError::InvalidConfig("file_count must be at least 1".into()));
        }
        if self.retry.attempts == 0 {
            return Err(PipelineError::InvalidConfig("retry attempts must be at least 1".into()));
        }
        self.job.validate()?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("peer {addr} unreachable after {attempts} attempts: {last}")]
    PeerUnreachable { addr: String, attempts: u32, last: String },
    #[error("transfer of {file} failed: {reason}")]
    TransferFailed { file: String, reason: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
}

impl PipelineError {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
        let context = context.into();
        move |source| PipelineError::Io { context, source }
    }
}

/// Something one of the roles did, in the order it happened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    FileClosed { name: String, bytes: u64, lines: u64, sha256: String },
    Announced { name: String, seq_no: u64 },
    TransferRetry { name: String, attempt: u32, reason: String },
    FileStaged { batch: u64, name: String, bytes: u64, sha256: String },
    AckSent { batch: u64, name: String },
    AckReceived { name: String },
    LocalFileDeleted { name: String },
    BatchDoneSent { count: u64 },
    JobStarted { batch: u64, files: usize },
    JobFinished { batch: u64, attackers: usize, detect_time: Duration },
    ResultSent { batch: u64, attackers: usize },
    ResultReceived { attackers: Vec<AttackerReport> },
    ErrorSent { code: ErrorCode, text: String },
    ErrorReceived { code: ErrorCode, text: String },
    StagingCleaned { batch: u64 },
}

/// Shared, append-only event log. Cloning gives another handle to the same
/// log, so both roles of a loopback run can record into one sequence.
#[derive(Clone, Default)]
pub struct EventLog(Arc<Mutex<Vec<(Instant, Event)>>>);

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, event: Event) {
        log::debug!("{event:?}");
        self.0.lock().unwrap_or_else(|e| e.into_inner()).push((Instant::now(), event));
    }

    pub fn snapshot(&self) -> Vec<(Instant, Event)> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn events(&self) -> Vec<Event> {
        self.snapshot().into_iter().map(|(_, e)| e).collect()
    }
}

impl fmt::Debug for EventLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.events()).finish()
    }
}

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    use sha2::Digest;
    hex::encode(sha2::Sha256::digest(bytes))
}
