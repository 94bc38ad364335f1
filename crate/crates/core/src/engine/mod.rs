//! In-process map/shuffle/reduce runtime.
//!
//! A job splits every input file into line-aligned blocks, runs the active
//! detector over each block on a pool of map workers, routes matches to
//! reducer partitions by a stable hash of the source address, and counts each
//! source's group. Output depends only on the inputs, the detector and the
//! threshold: worker count, reducer count, block size and file order do not
//! change it.

mod partition;
mod results;
mod split;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

pub use partition::{partition, stable_hash};
pub(crate) use results::parse_attacker;
pub use results::{parse_results, ResultsError, ResultsFile};
pub use split::{split_blocks, LogBlock};

use crate::detect::{AttackClass, AttackerReport, FloodDetector};
use crate::logformat::{parse_line, ParseOutcome};

pub const DEFAULT_THRESHOLD: u64 = 500;
pub const DEFAULT_BLOCK_SIZE: u64 = 128 << 20;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: line {line_no} is {len} bytes, longer than block_size {block_size}", path.display())]
    LineTooLong {
        path: PathBuf,
        line_no: u64,
        len: u64,
        block_size: u64,
    },
    #[error("invalid job configuration: {0}")]
    InvalidConfig(String),
    #[error("map worker failed: {0}")]
    WorkerPanicked(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobConfig {
    pub attack_class: AttackClass,
    pub threshold: u64,
    pub block_size: u64,
    pub worker_count: usize,
    pub reducer_count: usize,
}

impl JobConfig {
    /// Threshold 500, 128 MiB blocks, one reducer, one worker per core.
    pub fn new(attack_class: AttackClass) -> Self {
        JobConfig {
            attack_class,
            threshold: DEFAULT_THRESHOLD,
            block_size: DEFAULT_BLOCK_SIZE,
            worker_count: default_workers(),
            reducer_count: 1,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: &str| Err(EngineError::InvalidConfig(msg.to_string()));
        if self.threshold == 0 {
            return bad("threshold must be positive");
        }
        if self.block_size == 0 {
            return bad("block_size must be positive");
        }
        if self.worker_count == 0 {
            return bad("worker_count must be positive");
        }
        if self.reducer_count == 0 {
            return bad("reducer_count must be positive");
        }
        Ok(())
    }
}

pub fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

/// Position of a matched record: block and line index within the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordRef {
    pub block_id: usize,
    pub index: u64,
}

/// Mapper output pair. The value is carried by reference to keep the shuffle
/// small; the record itself can be re-read from its block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyedEmit {
    pub key: Ipv4Addr,
    pub origin: RecordRef,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MapOutput {
    pub emits: Vec<KeyedEmit>,
    pub records_seen: u64,
    pub malformed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JobStats {
    pub records_seen: u64,
    /// Sum of `record_count` over all blocks.
    pub block_records: u64,
    pub records_matched: u64,
    /// Sum of reducer group sizes.
    pub reduced_records: u64,
    pub malformed_count: u64,
    pub blocks: usize,
    pub split_time: Duration,
    pub map_time: Duration,
    pub shuffle_time: Duration,
    pub reduce_time: Duration,
}

impl JobStats {
    pub fn detect_time(&self) -> Duration {
        self.split_time + self.map_time + self.shuffle_time + self.reduce_time
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionResult {
    pub attack_class: AttackClass,
    pub threshold: u64,
    /// Sorted by count descending, then address ascending. One entry per
    /// source.
    pub attackers: Vec<AttackerReport>,
    pub stats: JobStats,
}

impl DetectionResult {
    fn empty(attack_class: AttackClass, threshold: u64) -> Self {
        DetectionResult {
            attack_class,
            threshold,
            attackers: Vec::new(),
            stats: JobStats::default(),
        }
    }

    /// Results file body: one `src_ip<TAB>count<TAB>class` line per attacker
    /// and a `#`-prefixed stats block. Timing and layout figures are left out
    /// so that the file only depends on the job's inputs.
    pub fn to_results_text(&self) -> String {
        results::render(self)
    }

    pub fn write_results(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_results_text())
    }
}

/// Runs the detector over one block. Every line yields at most one emit;
/// malformed lines are counted and skipped.
pub fn run_map(block: &LogBlock, detector: &dyn FloodDetector) -> Result<MapOutput, EngineError> {
    let io_err = |source| EngineError::Io {
        path: block.path.to_path_buf(),
        source,
    };
    let mut file = File::open(&block.path).map_err(io_err)?;
    file.seek(SeekFrom::Start(block.byte_start)).map_err(io_err)?;
    let mut reader = BufReader::with_capacity(1 << 16, file.take(block.len()));

    let mut out = MapOutput::default();
    let mut buf = Vec::with_capacity(256);
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf).map_err(io_err)? == 0 {
            break;
        }
        let index = out.records_seen;
        out.records_seen += 1;
        let line = buf.strip_suffix(b"\n").unwrap_or(&buf);
        let Ok(line) = std::str::from_utf8(line) else {
            out.malformed += 1;
            continue;
        };
        match parse_line(line) {
            ParseOutcome::Record(record) => {
                if detector.matches(&record) {
                    out.emits.push(KeyedEmit {
                        key: record.src_ip,
                        origin: RecordRef {
                            block_id: block.block_id,
                            index,
                        },
                    });
                }
            }
            ParseOutcome::Malformed { .. } => out.malformed += 1,
        }
    }
    if out.records_seen != block.record_count {
        return Err(EngineError::Io {
            path: block.path.to_path_buf(),
            source: std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!(
                    "block {} held {} lines, expected {}",
                    block.block_id, out.records_seen, block.record_count
                ),
            ),
        });
    }
    Ok(out)
}

/// Counter-based reducer: reports `key` iff its group is larger than
/// `threshold`.
pub fn run_reduce(
    key: Ipv4Addr,
    group: &[KeyedEmit],
    threshold: u64,
    attack_class: AttackClass,
) -> Option<AttackerReport> {
    debug_assert!(group.iter().all(|e| e.key == key));
    let count = group.len() as u64;
    (count > threshold).then_some(AttackerReport {
        src_ip: key,
        count,
        attack_class,
    })
}

/// Runs a detection job over `files` with the built-in detector for
/// `config.attack_class`.
pub fn run_job<P: AsRef<Path>>(files: &[P], config: &JobConfig) -> Result<DetectionResult, EngineError> {
    run_job_with(files, config, config.attack_class.detector())
}

/// Runs a detection job with an explicit detector. Reports are tagged with
/// the detector's class.
pub fn run_job_with<P: AsRef<Path>>(
    files: &[P],
    config: &JobConfig,
    detector: Arc<dyn FloodDetector>,
) -> Result<DetectionResult, EngineError> {
    config.validate()?;
    let class = detector.class();
    if files.is_empty() {
        return Ok(DetectionResult::empty(class, config.threshold));
    }
    let mut stats = JobStats::default();

    let started = Instant::now();
    let mut blocks = Vec::new();
    for (file_id, path) in files.iter().enumerate() {
        blocks.extend(split::split_file(path.as_ref(), file_id, blocks.len(), config.block_size)?);
    }
    stats.blocks = blocks.len();
    stats.block_records = blocks.iter().map(|b| b.record_count).sum();
    stats.split_time = started.elapsed();

    let started = Instant::now();
    let mapped = map_phase(&blocks, detector.as_ref(), config)?;
    stats.map_time = started.elapsed();

    let started = Instant::now();
    let mut partitions: Vec<Vec<KeyedEmit>> = vec![Vec::new(); config.reducer_count];
    for (output, buckets) in mapped {
        stats.records_seen += output.records_seen;
        stats.malformed_count += output.malformed;
        for (p, bucket) in buckets.into_iter().enumerate() {
            stats.records_matched += bucket.len() as u64;
            partitions[p].extend(bucket);
        }
    }
    let groups = parallel_over(partitions, group_by_key);
    stats.shuffle_time = started.elapsed();

    let started = Instant::now();
    let threshold = config.threshold;
    let reduced = parallel_over(groups, |groups| {
        let mut reports = Vec::new();
        let mut sizes = 0u64;
        for (key, group) in groups {
            sizes += group.len() as u64;
            reports.extend(run_reduce(key, &group, threshold, class));
        }
        (reports, sizes)
    });
    let mut attackers = Vec::new();
    for (reports, sizes) in reduced {
        stats.reduced_records += sizes;
        attackers.extend(reports);
    }
    attackers.sort_by(|a, b| b.count.cmp(&a.count).then(a.src_ip.cmp(&b.src_ip)));
    stats.reduce_time = started.elapsed();

    Ok(DetectionResult {
        attack_class: class,
        threshold,
        attackers,
        stats,
    })
}

type MappedBlock = (MapOutput, Vec<Vec<KeyedEmit>>);
/// Blocks a single map worker finished, tagged with their block index.
type WorkerOutput = Result<Vec<(usize, MappedBlock)>, EngineError>;

/// Map workers pull blocks from a shared cursor. Results come back in block
/// order. The first error or panic fails the whole phase.
fn map_phase(
    blocks: &[LogBlock],
    detector: &dyn FloodDetector,
    config: &JobConfig,
) -> Result<Vec<MappedBlock>, EngineError> {
    let cursor = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let workers = config.worker_count.min(blocks.len()).max(1);
    let reducers = config.reducer_count;

    let per_worker: Vec<thread::Result<WorkerOutput>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        if failed.load(Ordering::Relaxed) {
                            break;
                        }
                        let i = cursor.fetch_add(1, Ordering::Relaxed);
                        let Some(block) = blocks.get(i) else { break };
                        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                            run_map(block, detector)
                        }));
                        let mut output = match result {
                            Ok(Ok(output)) => output,
                            Ok(Err(e)) => {
                                failed.store(true, Ordering::Relaxed);
                                return Err(e);
                            }
                            Err(panic) => {
                                failed.store(true, Ordering::Relaxed);
                                std::panic::resume_unwind(panic);
                            }
                        };
                        let mut buckets = vec![Vec::new(); reducers];
                        for emit in output.emits.drain(..) {
                            buckets[partition(emit.key, reducers)].push(emit);
                        }
                        done.push((i, (output, buckets)));
                    }
                    Ok(done)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });

    let mut slots: Vec<Option<MappedBlock>> = (0..blocks.len()).map(|_| None).collect();
    let mut first_error = None;
    for joined in per_worker {
        match joined {
            Ok(Ok(done)) => {
                for (i, mapped) in done {
                    slots[i] = Some(mapped);
                }
            }
            Ok(Err(e)) => {
                first_error.get_or_insert(e);
            }
            Err(panic) => {
                first_error.get_or_insert(EngineError::WorkerPanicked(panic_message(&panic)));
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| EngineError::WorkerPanicked(format!("block {i} was never mapped"))))
        .collect()
}

fn panic_message(panic: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".to_string()
    }
}

/// Groups one partition's emits by key, in a deterministic key order.
fn group_by_key(emits: Vec<KeyedEmit>) -> Vec<(Ipv4Addr, Vec<KeyedEmit>)> {
    let mut groups: HashMap<Ipv4Addr, Vec<KeyedEmit>> = HashMap::new();
    for emit in emits {
        groups.entry(emit.key).or_default().push(emit);
    }
    let mut groups: Vec<_> = groups.into_iter().collect();
    groups.sort_unstable_by_key(|(k, _)| *k);
    groups
}

/// Applies `f` to every item on its own thread; one writer per partition.
fn parallel_over<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    if items.len() == 1 {
        return items.into_iter().map(f).collect();
    }
    thread::scope(|scope| {
        let handles: Vec<_> = items.into_iter().map(|item| scope.spawn(|| f(item))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}
