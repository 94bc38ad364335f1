//! Detection role: stages incoming files, gates on batch completion, runs
//! one job per batch and reports back.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::wire::{self, ErrorCode, Message, WireError};
use super::{Event, EventLog, PipelineConfig, PipelineError};
use crate::engine::run_job;

type SharedWriter = Arc<Mutex<TcpStream>>;

struct JobRequest {
    batch: u64,
    dir: PathBuf,
    files: Vec<PathBuf>,
    reply: SharedWriter,
}

/// Per-session staging state. Survives reconnects.
struct Staging {
    batch: u64,
    staged: Vec<PathBuf>,
    acked: HashSet<u64>,
}

struct Shared {
    config: PipelineConfig,
    events: EventLog,
    stop: AtomicBool,
    current: Mutex<Option<TcpStream>>,
    completed: AtomicU64,
    max_batches: Option<u64>,
}

pub struct DetectionServer {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl DetectionServer {
    /// Binds the listening endpoint at `config.peer_address`.
    pub fn bind(config: PipelineConfig, events: EventLog) -> Result<Self, PipelineError> {
        config.validate()?;
        let listener = TcpListener::bind(&config.peer_address)
            .map_err(PipelineError::io(format!("binding {}", config.peer_address)))?;
        Ok(DetectionServer {
            listener,
            shared: Arc::new(Shared {
                config,
                events,
                stop: AtomicBool::new(false),
                current: Mutex::new(None),
                completed: AtomicU64::new(0),
                max_batches: None,
            }),
        })
    }

    /// Stop accepting new connections once `n` jobs have finished.
    pub fn with_max_batches(mut self, n: u64) -> Self {
        Arc::get_mut(&mut self.shared)
            .expect("server not yet running")
            .max_batches = Some(n);
        self
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Serves until stopped. Connections are handled one at a time; jobs run
    /// one at a time on a separate thread so the next batch can stage while
    /// the previous job runs.
    pub fn run(self) -> Result<(), PipelineError> {
        let config = &self.shared.config;
        for dir in [&config.staging_dir, &config.results_dir] {
            fs::create_dir_all(dir).map_err(PipelineError::io(format!("creating {}", dir.display())))?;
        }
        self.listener
            .set_nonblocking(true)
            .map_err(PipelineError::io("configuring listener"))?;

        let (jobs, queue) = mpsc::channel::<JobRequest>();
        let worker = {
            let shared = self.shared.clone();
            thread::spawn(move || job_loop(&shared, queue))
        };

        let mut staging = Staging {
            batch: 1,
            staged: Vec::new(),
            acked: HashSet::new(),
        };
        while !self.shared.stop.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    log::info!("capture role connected from {peer}");
                    if let Err(e) = self.serve(stream, &mut staging, &jobs) {
                        log::warn!("connection from {peer} ended: {e}");
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                Err(e) => return Err(PipelineError::io("accepting connection")(e)),
            }
        }
        drop(jobs);
        worker.join().map_err(|_| PipelineError::Protocol("job thread panicked".into()))?;
        Ok(())
    }

    /// Runs the server on a background thread.
    pub fn spawn(self) -> DetectionHandle {
        let addr = self.local_addr();
        let shared = self.shared.clone();
        let thread = thread::spawn(move || self.run());
        DetectionHandle { addr, shared, thread }
    }

    fn serve(&self, stream: TcpStream, staging: &mut Staging, jobs: &mpsc::Sender<JobRequest>) -> Result<(), PipelineError> {
        stream.set_nonblocking(false).map_err(PipelineError::io("configuring connection"))?;
        stream.set_nodelay(true).ok();
        let writer: SharedWriter = Arc::new(Mutex::new(
            stream.try_clone().map_err(PipelineError::io("cloning connection"))?,
        ));
        *self.shared.current.lock().unwrap() = stream.try_clone().ok();
        let mut reader = BufReader::with_capacity(1 << 16, stream);
        let result = self.session(&mut reader, &writer, staging, jobs);
        *self.shared.current.lock().unwrap() = None;
        match result {
            Err(PipelineError::Wire(WireError::Closed)) => Ok(()),
            other => other,
        }
    }

    fn session<R: Read>(
        &self,
        reader: &mut R,
        writer: &SharedWriter,
        staging: &mut Staging,
        jobs: &mpsc::Sender<JobRequest>,
    ) -> Result<(), PipelineError> {
        loop {
            match wire::read_message(reader)? {
                Message::Announce {
                    file_name,
                    size_bytes,
                    seq_no,
                } => self.receive_file(reader, writer, staging, &file_name, size_bytes, seq_no)?,
                Message::BatchDone { count } => {
                    if staging.staged.len() as u64 != count {
                        let text = format!("have {} of {count} files staged", staging.staged.len());
                        self.send_error(writer, ErrorCode::IncompleteBatch, text)?;
                        continue;
                    }
                    let request = JobRequest {
                        batch: staging.batch,
                        dir: self.batch_dir(staging.batch),
                        files: std::mem::take(&mut staging.staged),
                        reply: writer.clone(),
                    };
                    staging.batch += 1;
                    jobs.send(request)
                        .map_err(|_| PipelineError::Protocol("job thread is gone".into()))?;
                }
                other => {
                    let text = format!("unexpected {}", other.encode().split('\t').next().unwrap_or(""));
                    self.send_error(writer, ErrorCode::Protocol, text.clone())?;
                    return Err(PipelineError::Protocol(text));
                }
            }
        }
    }

    fn receive_file<R: Read>(
        &self,
        reader: &mut R,
        writer: &SharedWriter,
        staging: &mut Staging,
        name: &str,
        size: u64,
        seq_no: u64,
    ) -> Result<(), PipelineError> {
        if staging.acked.contains(&seq_no) {
            // Already staged; the previous ACK was lost.
            self.send(writer, &Message::Ack { file_name: name.to_string() })?;
            return Ok(());
        }
        let dir = self.batch_dir(staging.batch);
        fs::create_dir_all(&dir).map_err(PipelineError::io(format!("creating {}", dir.display())))?;
        let target = dir.join(name);
        let part = dir.join(format!("{name}.part"));

        self.send(writer, &Message::Pull { file_name: name.to_string() })?;
        for attempt in 0..2 {
            let announced = match wire::read_message(reader)? {
                Message::Data { size_bytes } => size_bytes,
                other => {
                    return Err(PipelineError::Protocol(format!("expected DATA for {name}, got {other:?}")));
                }
            };
            if announced != size {
                wire::recv_data(reader, announced, &mut io::sink())?;
                let text = format!("{name}: DATA carries {announced} bytes, announced {size}");
                self.send_error(writer, ErrorCode::SizeMismatch, text)?;
                if attempt == 0 {
                    self.send(writer, &Message::Pull { file_name: name.to_string() })?;
                    continue;
                }
                self.send_error(writer, ErrorCode::TransferFailed, format!("{name}: size mismatch after re-pull"))?;
                return Ok(());
            }
            let received = receive_body(reader, &part, size);
            if let Err(e) = received {
                let _ = fs::remove_file(&part);
                return Err(e);
            }
            fs::rename(&part, &target).map_err(PipelineError::io(format!("staging {}", target.display())))?;
            let (bytes, sha256) = hash_file(&target)?;
            self.shared.events.record(Event::FileStaged {
                batch: staging.batch,
                name: name.to_string(),
                bytes,
                sha256,
            });
            staging.staged.push(target);
            staging.acked.insert(seq_no);
            self.send(writer, &Message::Ack { file_name: name.to_string() })?;
            self.shared.events.record(Event::AckSent {
                batch: staging.batch,
                name: name.to_string(),
            });
            return Ok(());
        }
        unreachable!("loop returns on every path")
    }

    fn batch_dir(&self, batch: u64) -> PathBuf {
        self.shared.config.staging_dir.join(batch.to_string())
    }

    fn send(&self, writer: &SharedWriter, msg: &Message) -> Result<(), PipelineError> {
        let mut stream = writer.lock().unwrap_or_else(|e| e.into_inner());
        wire::write_message(&mut *stream, msg)?;
        Ok(())
    }

    fn send_error(&self, writer: &SharedWriter, code: ErrorCode, text: String) -> Result<(), PipelineError> {
        log::warn!("sending {code}: {text}");
        self.send(writer, &Message::Error { code, text: text.clone() })?;
        self.shared.events.record(Event::ErrorSent { code, text });
        Ok(())
    }
}

fn receive_body<R: Read>(reader: &mut R, part: &std::path::Path, size: u64) -> Result<(), PipelineError> {
    let file = File::create(part).map_err(PipelineError::io(format!("creating {}", part.display())))?;
    let mut sink = BufWriter::with_capacity(1 << 16, file);
    wire::recv_data(reader, size, &mut sink)?;
    let file = sink
        .into_inner()
        .map_err(|e| PipelineError::io(format!("writing {}", part.display()))(e.into_error()))?;
    file.sync_data().map_err(PipelineError::io(format!("syncing {}", part.display())))?;
    let on_disk = file
        .metadata()
        .map_err(PipelineError::io(format!("checking {}", part.display())))?
        .len();
    if on_disk != size {
        return Err(PipelineError::TransferFailed {
            file: part.display().to_string(),
            reason: format!("{on_disk} bytes on disk, {size} announced"),
        });
    }
    Ok(())
}

/// Length and SHA-256 of a staged file, read back from disk.
fn hash_file(path: &std::path::Path) -> Result<(u64, String), PipelineError> {
    let mut file = File::open(path).map_err(PipelineError::io(format!("reading {}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file
            .read(&mut buf)
            .map_err(PipelineError::io(format!("reading {}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((total, hex::encode(hasher.finalize())))
}

fn job_loop(shared: &Shared, queue: mpsc::Receiver<JobRequest>) {
    let config = &shared.config;
    for request in queue {
        let JobRequest {
            batch,
            dir,
            files,
            reply,
        } = request;
        shared.events.record(Event::JobStarted {
            batch,
            files: files.len(),
        });
        let send = |msg: &Message| -> Result<(), WireError> {
            let mut stream = reply.lock().unwrap_or_else(|e| e.into_inner());
            wire::write_message(&mut *stream, msg)
        };
        match run_job(&files, &config.job) {
            Ok(result) => {
                let results_path = config.results_dir.join(format!("batch-{batch:06}.results"));
                if let Err(e) = result.write_results(&results_path) {
                    log::error!("writing {}: {e}", results_path.display());
                }
                shared.events.record(Event::JobFinished {
                    batch,
                    attackers: result.attackers.len(),
                    detect_time: result.stats.detect_time(),
                });
                log::info!(
                    "batch {batch}: {} attackers over {} records",
                    result.attackers.len(),
                    result.stats.records_seen
                );
                let attackers = result.attackers.len();
                match send(&Message::Result {
                    attackers: result.attackers,
                }) {
                    Ok(()) => {
                        shared.events.record(Event::ResultSent { batch, attackers });
                        match fs::remove_dir_all(&dir) {
                            Ok(()) => shared.events.record(Event::StagingCleaned { batch }),
                            Err(e) => log::warn!("cleaning {}: {e}", dir.display()),
                        }
                    }
                    Err(e) => log::error!("batch {batch}: result not delivered ({e}); keeping {}", dir.display()),
                }
            }
            Err(e) => {
                let text = format!("batch {batch}: {e}");
                log::error!("{text}; keeping {}", dir.display());
                let _ = send(&Message::Error {
                    code: ErrorCode::JobFailed,
                    text: text.clone(),
                });
                shared.events.record(Event::ErrorSent {
                    code: ErrorCode::JobFailed,
                    text,
                });
            }
        }
        let done = shared.completed.fetch_add(1, Ordering::SeqCst) + 1;
        if shared.max_batches.is_some_and(|max| done >= max) {
            shared.stop.store(true, Ordering::SeqCst);
        }
    }
}

/// Control handle for a server started with [`DetectionServer::spawn`].
pub struct DetectionHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    thread: JoinHandle<Result<(), PipelineError>>,
}

impl DetectionHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn completed_batches(&self) -> u64 {
        self.shared.completed.load(Ordering::SeqCst)
    }

    /// Stops accepting, drops any open connection and waits for queued jobs.
    pub fn shutdown(self) -> Result<(), PipelineError> {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(stream) = self.shared.current.lock().unwrap().as_ref() {
            let _ = stream.shutdown(std::net::Shutdown::Both);
        }
        self.join()
    }

    /// Waits for the server to stop on its own (see
    /// [`DetectionServer::with_max_batches`]).
    pub fn join(self) -> Result<(), PipelineError> {
        self.thread
            .join()
            .map_err(|_| PipelineError::Protocol("detection server panicked".into()))?
    }
}

/// Runs the detection role on `config.peer_address` until the process ends.
pub fn run_detection_role(config: PipelineConfig, events: EventLog) -> Result<(), PipelineError> {
    DetectionServer::bind(config, events)?.run()
}
