//! Phase-timing benchmark over the full loopback pipeline.
//!
//! Each scenario generates a log of roughly `file_size` bytes, pushes it
//! through a capture role and a detection role connected over 127.0.0.1,
//! and records how long capture, transfer and detection took.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::detect::AttackClass;
use crate::engine::JobConfig;
use crate::logformat::format_line;
use crate::pipeline::{run_capture_role, DetectionServer, Event, EventLog, PipelineConfig, PipelineError};
use crate::traffgen::{generate_trace, TraceError, TraceSpec};

pub const CSV_HEADER: &str =
    "scenario,file_size,threshold,block_size,workers,capture_ms,transfer_ms,detect_ms,total_ms,attackers_found";

/// Packets each generated attacker sends: above both common thresholds.
pub const BENCH_PACKETS_PER_ATTACKER: u32 = 1100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchScenario {
    pub attack_class: AttackClass,
    pub file_size: u64,
    pub threshold: u64,
    pub block_size: u64,
    pub workers: usize,
    pub seed: u64,
}

impl BenchScenario {
    pub fn label(&self) -> String {
        format!(
            "{}-fs{}-t{}-bs{}-w{}",
            self.attack_class, self.file_size, self.threshold, self.block_size, self.workers
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub scenario: String,
    pub file_size: u64,
    pub threshold: u64,
    pub block_size: u64,
    pub workers: usize,
    pub capture_ms: f64,
    pub transfer_ms: f64,
    pub detect_ms: f64,
    pub total_ms: f64,
    pub attackers_found: usize,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{:.3},{:.3},{:.3},{}",
            self.scenario,
            self.file_size,
            self.threshold,
            self.block_size,
            self.workers,
            self.capture_ms,
            self.transfer_ms,
            self.detect_ms,
            self.total_ms,
            self.attackers_found
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("scenario {0} produced no result")]
    NoResult(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Cartesian product of the given axes, in file size, threshold, block
/// size, workers order.
pub fn scenario_matrix(
    attack_class: AttackClass,
    file_sizes: &[u64],
    thresholds: &[u64],
    block_sizes: &[u64],
    workers: &[usize],
    seed: u64,
) -> Vec<BenchScenario> {
    let mut out = Vec::new();
    for &file_size in file_sizes {
        for &threshold in thresholds {
            for &block_size in block_sizes {
                for &w in workers {
                    out.push(BenchScenario {
                        attack_class,
                        file_size,
                        threshold,
                        block_size,
                        workers: w,
                        seed,
                    });
                }
            }
        }
    }
    out
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Runs one scenario end to end over loopback. Scratch files live under
/// `work_dir`.
pub fn run_scenario(scenario: &BenchScenario, work_dir: &Path) -> Result<BenchRecord, BenchError> {
    let label = scenario.label();
    let job = JobConfig {
        attack_class: scenario.attack_class,
        threshold: scenario.threshold,
        block_size: scenario.block_size,
        worker_count: scenario.workers,
        reducer_count: 1,
    };
    let mut config = PipelineConfig::new(job, work_dir.join(&label));
    config.file_size = scenario.file_size;
    config.file_count = 1;
    config.peer_address = "127.0.0.1:0".to_string();

    let events = EventLog::new();
    let server = DetectionServer::bind(config.clone(), events.clone())?;
    config.peer_address = server.local_addr().to_string();
    let handle = server.spawn();

    let spec = TraceSpec::for_file_size(
        scenario.attack_class,
        scenario.file_size,
        BENCH_PACKETS_PER_ATTACKER,
        scenario.seed,
    );
    // Feed exactly enough lines to fill one file.
    let mut written = 0u64;
    let limit = scenario.file_size;
    let source = generate_trace(&spec)?
        .map(|r| format_line(&r))
        .take_while(move |line| {
            let more = written < limit;
            written += line.len() as u64 + 1;
            more
        })
        .map(Ok);

    let started = Instant::now();
    let report = run_capture_role(&config, source, &events);
    let total = started.elapsed();
    handle.shutdown()?;
    let report = report?;

    let file = report.files.first().ok_or_else(|| BenchError::NoResult(label.clone()))?;
    let detect = events
        .events()
        .into_iter()
        .find_map(|e| match e {
            Event::JobFinished { detect_time, .. } => Some(detect_time),
            _ => None,
        })
        .ok_or_else(|| BenchError::NoResult(label.clone()))?;

    Ok(BenchRecord {
        scenario: label,
        file_size: scenario.file_size,
        threshold: scenario.threshold,
        block_size: scenario.block_size,
        workers: scenario.workers,
        capture_ms: ms(file.capture_time),
        transfer_ms: ms(file.transfer_time),
        detect_ms: ms(detect),
        total_ms: ms(total),
        attackers_found: report.attackers().count(),
    })
}

/// Writes the header and one row per record.
pub fn write_csv<W: Write>(out: &mut W, records: &[BenchRecord]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_is_cartesian() {
        let m = scenario_matrix(AttackClass::Udp, &[1 << 20, 2 << 20], &[500, 1000], &[32 << 10], &[1, 2, 4], 1);
        assert_eq!(m.len(), 12);
        assert_eq!(m[0].workers, 1);
        assert_eq!(m[11].file_size, 2 << 20);
        let labels: std::collections::HashSet<_> = m.iter().map(|s| s.label()).collect();
        assert_eq!(labels.len(), 12);
    }

    #[test]
    fn csv_layout() {
        let r = BenchRecord {
            scenario: "udp-fs1024-t500-bs512-w1".into(),
            file_size: 1024,
            threshold: 500,
            block_size: 512,
            workers: 1,
            capture_ms: 1.5,
            transfer_ms: 0.25,
            detect_ms: 3.0,
            total_ms: 5.0,
            attackers_found: 2,
        };
        let mut out = Vec::new();
        write_csv(&mut out, &[r]).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            format!("{CSV_HEADER}\nudp-fs1024-t500-bs512-w1,1024,500,512,1,1.500,0.250,3.000,5.000,2\n")
        );
    }
}
