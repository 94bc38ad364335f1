//! Live DDoS flood detection over packet-summary logs.
//!
//! The crate is organised around the flow of a log file:
//!
//! - [`logformat`] parses and writes the one-record-per-line packet log.
//! - [`traffgen`] produces seeded attack/legitimate traffic in that format.
//! - [`detect`] holds the per-flood-type detectors and their registry.
//! - [`engine`] splits logs into blocks and runs map/shuffle/reduce counting.
//! - [`pipeline`] rolls logs on a capture host, ships them over a framed TCP
//!   protocol and runs batched jobs on the detection host.
//! - [`config`] and [`bench`] back the command-line tool.

pub mod bench;
pub mod config;
pub mod detect;
pub mod engine;
pub mod logformat;
pub mod pipeline;
pub mod traffgen;

pub use detect::{AttackClass, AttackerReport, DetectorRegistry, FloodDetector};
pub use engine::{run_job, DetectionResult, JobConfig};
pub use logformat::{format_line, parse_line, PacketRecord, ParseOutcome, Protocol, Timestamp};
pub use traffgen::{generate_trace, ground_truth, TraceSpec};
