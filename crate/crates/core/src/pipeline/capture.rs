//! Capture role: roll the incoming line stream into files and ship them.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{self, BufReader, Read, Seek, SeekFrom};
use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use super::roller::{ClosedFile, LogRoller};
use super::wire::{self, ErrorCode, Message, WireError};
use super::{Event, EventLog, PipelineConfig, PipelineError};
use crate::detect::AttackerReport;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileTiming {
    pub name: String,
    pub bytes: u64,
    pub lines: u64,
    pub sha256: String,
    pub capture_time: Duration,
    /// ANNOUNCE to ACK, including retries.
    pub transfer_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BatchOutcome {
    Attackers(Vec<AttackerReport>),
    Failed { code: ErrorCode, text: String },
    /// The connection dropped before the detection role answered.
    Lost,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaptureReport {
    pub files: Vec<FileTiming>,
    /// One entry per batch, in order: the file names and how it ended.
    pub batches: Vec<(Vec<String>, BatchOutcome)>,
    pub records_written: u64,
    pub bytes_written: u64,
    /// Lines lost while intake was paused. Intake applies backpressure to
    /// its source, so this stays zero for file, pipe and generator sources.
    pub dropped_records: u64,
}

impl CaptureReport {
    /// Attackers across all batches that produced a result.
    pub fn attackers(&self) -> impl Iterator<Item = &AttackerReport> {
        self.batches.iter().flat_map(|(_, outcome)| match outcome {
            BatchOutcome::Attackers(a) => a.as_slice(),
            _ => &[],
        })
    }
}

/// An open connection to the detection role. Batch results that arrive while
/// a transfer is in progress are parked in `pending`.
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    pending: VecDeque<Message>,
}

impl Connection {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Connection {
            reader: BufReader::with_capacity(1 << 16, stream.try_clone()?),
            writer: stream,
            pending: VecDeque::new(),
        })
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        wire::write_message(&mut self.writer, msg)
    }

    /// Next message that belongs to the current exchange.
    fn next_control(&mut self) -> Result<Message, WireError> {
        loop {
            let msg = wire::read_message(&mut self.reader)?;
            if is_batch_reply(&msg) {
                self.pending.push_back(msg);
            } else {
                return Ok(msg);
            }
        }
    }

    /// Blocks for the next batch reply.
    fn next_batch_reply(&mut self) -> Result<Message, WireError> {
        if let Some(msg) = self.pending.pop_front() {
            return Ok(msg);
        }
        loop {
            let msg = wire::read_message(&mut self.reader)?;
            if is_batch_reply(&msg) {
                return Ok(msg);
            }
            log::warn!("ignoring unexpected {msg:?} while waiting for results");
        }
    }

    pub fn take_pending(&mut self) -> impl Iterator<Item = Message> + '_ {
        self.pending.drain(..)
    }
}

fn is_batch_reply(msg: &Message) -> bool {
    match msg {
        Message::Result { .. } => true,
        Message::Error { code, .. } => code.is_batch_level(),
        _ => false,
    }
}

/// Announces one file and serves PULLs until the detection role ACKs it.
/// `body` is rewound for every PULL.
pub fn transfer_file<B: Read + Seek>(
    conn: &mut Connection,
    name: &str,
    seq_no: u64,
    body: &mut B,
    size: u64,
) -> Result<(), PipelineError> {
    conn.send(&Message::Announce {
        file_name: name.to_string(),
        size_bytes: size,
        seq_no,
    })?;
    loop {
        match conn.next_control()? {
            Message::Pull { file_name } if file_name == name => {
                body.seek(SeekFrom::Start(0))
                    .map_err(PipelineError::io(format!("rewinding {name}")))?;
                wire::send_data(&mut conn.writer, body, size)?;
            }
            Message::Ack { file_name } if file_name == name => return Ok(()),
            Message::Error {
                code: ErrorCode::SizeMismatch,
                text,
            } => log::warn!("{name}: {text}"),
            Message::Error {
                code: ErrorCode::TransferFailed,
                text,
            } => {
                return Err(PipelineError::TransferFailed {
                    file: name.to_string(),
                    reason: text,
                })
            }
            other => return Err(PipelineError::Protocol(format!("unexpected reply for {name}: {other:?}"))),
        }
    }
}

/// Runs the capture role over `source` until it is exhausted, then waits for
/// every batch's result.
///
/// Lines are rolled into files of `config.file_size` bytes under
/// `config.out_dir`. Each closed file is announced and transferred, and
/// deleted locally once acknowledged. Every `config.file_count`
/// acknowledged files form a batch; a trailing partial batch is flushed when
/// the source ends so no line is left behind.
pub fn run_capture_role<I>(config: &PipelineConfig, source: I, events: &EventLog) -> Result<CaptureReport, PipelineError>
where
    I: IntoIterator<Item = io::Result<String>>,
{
    config.validate()?;
    let (tx, rx) = mpsc::sync_channel::<ClosedFile>(config.queue_capacity);
    let intake_failed = AtomicBool::new(false);

    thread::scope(|scope| {
        let shipper = scope.spawn(|| Shipper::new(config, events).run(rx, &intake_failed));

        let intake = (|| -> Result<(u64, u64), PipelineError> {
            let mut roller = LogRoller::new(&config.out_dir, config.file_size)?;
            let (mut records, mut bytes) = (0u64, 0u64);
            let ship = |closed: ClosedFile| -> bool {
                events.record(Event::FileClosed {
                    name: closed.name.clone(),
                    bytes: closed.bytes,
                    lines: closed.lines,
                    sha256: closed.sha256.clone(),
                });
                // Blocks while the queue is full: this is the capture pause.
                tx.send(closed).is_ok()
            };
            for line in source {
                let line = line.map_err(PipelineError::io("reading capture source"))?;
                records += 1;
                bytes += line.len() as u64 + 1;
                if let Some(closed) = roller.write_line(&line)? {
                    if !ship(closed) {
                        return Ok((records, bytes));
                    }
                }
            }
            if let Some(closed) = roller.finish()? {
                ship(closed);
            }
            Ok((records, bytes))
        })();
        if intake.is_err() {
            intake_failed.store(true, Ordering::SeqCst);
        }
        drop(tx);

        let shipped = shipper
            .join()
            .map_err(|_| PipelineError::Protocol("transfer thread panicked".into()))?;
        let mut report = shipped?;
        let (records, bytes) = intake?;
        report.records_written = records;
        report.bytes_written = bytes;
        Ok(report)
    })
}

struct Shipper<'a> {
    config: &'a PipelineConfig,
    events: &'a EventLog,
    conn: Option<Connection>,
    current_batch: Vec<String>,
    outstanding: VecDeque<Vec<String>>,
    report: CaptureReport,
}

impl<'a> Shipper<'a> {
    fn new(config: &'a PipelineConfig, events: &'a EventLog) -> Self {
        Shipper {
            config,
            events,
            conn: None,
            current_batch: Vec::new(),
            outstanding: VecDeque::new(),
            report: CaptureReport::default(),
        }
    }

    fn run(mut self, files: mpsc::Receiver<ClosedFile>, intake_failed: &AtomicBool) -> Result<CaptureReport, PipelineError> {
        for file in files {
            let transfer_time = self.ship(&file)?;
            self.events.record(Event::AckReceived { name: file.name.clone() });
            fs::remove_file(&file.path).map_err(PipelineError::io(format!("deleting {}", file.path.display())))?;
            self.events.record(Event::LocalFileDeleted { name: file.name.clone() });
            self.report.files.push(FileTiming {
                name: file.name.clone(),
                bytes: file.bytes,
                lines: file.lines,
                sha256: file.sha256,
                capture_time: file.capture_time,
                transfer_time,
            });
            self.current_batch.push(file.name);
            if self.current_batch.len() as u32 == self.config.file_count {
                self.close_batch()?;
            }
            self.settle_pending();
        }
        if !self.current_batch.is_empty() && !intake_failed.load(Ordering::SeqCst) {
            self.close_batch()?;
        }
        while !self.outstanding.is_empty() {
            let Some(conn) = self.conn.as_mut() else {
                self.lose_outstanding();
                break;
            };
            match conn.next_batch_reply() {
                Ok(msg) => self.settle(msg),
                Err(e) => {
                    log::error!("connection lost while waiting for results: {e}");
                    self.lose_outstanding();
                    self.conn = None;
                }
            }
        }
        Ok(self.report)
    }

    fn connect(&self) -> Result<Connection, PipelineError> {
        let policy = &self.config.retry;
        let mut backoff = policy.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=policy.attempts {
            match TcpStream::connect(&self.config.peer_address).and_then(Connection::new) {
                Ok(conn) => return Ok(conn),
                Err(e) => {
                    log::warn!("connect to {} failed (attempt {attempt}): {e}", self.config.peer_address);
                    last = e.to_string();
                }
            }
            if attempt < policy.attempts {
                thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(PipelineError::PeerUnreachable {
            addr: self.config.peer_address.clone(),
            attempts: policy.attempts,
            last,
        })
    }

    /// Transfers one file, reconnecting and re-announcing on failure.
    fn ship(&mut self, file: &ClosedFile) -> Result<Duration, PipelineError> {
        let started = Instant::now();
        let policy = self.config.retry.clone();
        let mut backoff = policy.initial_backoff;
        let mut body = File::open(&file.path).map_err(PipelineError::io(format!("opening {}", file.path.display())))?;
        for attempt in 1..=policy.attempts {
            if self.conn.is_none() {
                self.conn = Some(self.connect()?);
            }
            self.events.record(Event::Announced {
                name: file.name.clone(),
                seq_no: file.seq_no,
            });
            let conn = self.conn.as_mut().expect("connected above");
            match transfer_file(conn, &file.name, file.seq_no, &mut body, file.bytes) {
                Ok(()) => return Ok(started.elapsed()),
                Err(e) => {
                    log::warn!("transfer of {} failed (attempt {attempt}): {e}", file.name);
                    self.events.record(Event::TransferRetry {
                        name: file.name.clone(),
                        attempt,
                        reason: e.to_string(),
                    });
                    if attempt == policy.attempts {
                        return Err(PipelineError::TransferFailed {
                            file: file.name.clone(),
                            reason: e.to_string(),
                        });
                    }
                    // Start over on a fresh connection; replies owed on the
                    // old one will not arrive.
                    self.settle_pending();
                    self.conn = None;
                    self.lose_outstanding();
                    thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
        unreachable!("the last attempt returns")
    }

    fn close_batch(&mut self) -> Result<(), PipelineError> {
        let count = self.current_batch.len() as u64;
        let conn = match self.conn.as_mut() {
            Some(conn) => conn,
            None => self.conn.insert(self.connect()?),
        };
        conn.send(&Message::BatchDone { count })?;
        self.events.record(Event::BatchDoneSent { count });
        self.outstanding.push_back(std::mem::take(&mut self.current_batch));
        Ok(())
    }

    fn settle_pending(&mut self) {
        let pending: Vec<Message> = match self.conn.as_mut() {
            Some(conn) => conn.take_pending().collect(),
            None => return,
        };
        for msg in pending {
            self.settle(msg);
        }
    }

    fn settle(&mut self, msg: Message) {
        let Some(files) = self.outstanding.pop_front() else {
            log::warn!("batch reply with no batch outstanding: {msg:?}");
            return;
        };
        let outcome = match msg {
            Message::Result { attackers } => {
                log::info!("batch of {} files: {} attackers", files.len(), attackers.len());
                for a in &attackers {
                    log::info!("attacker {} sent {} {} packets", a.src_ip, a.count, a.attack_class);
                }
                self.events.record(Event::ResultReceived {
                    attackers: attackers.clone(),
                });
                BatchOutcome::Attackers(attackers)
            }
            Message::Error { code, text } => {
                log::error!("batch of {} files failed: {code}: {text}", files.len());
                self.events.record(Event::ErrorReceived {
                    code,
                    text: text.clone(),
                });
                BatchOutcome::Failed { code, text }
            }
            other => unreachable!("not a batch reply: {other:?}"),
        };
        self.report.batches.push((files, outcome));
    }

    fn lose_outstanding(&mut self) {
        for files in self.outstanding.drain(..) {
            self.report.batches.push((files, BatchOutcome::Lost));
        }
    }
}
