//! Fixed-size log rolling on the capture side.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use super::PipelineError;

/// A rolled log file ready for transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosedFile {
    pub seq_no: u64,
    pub name: String,
    pub path: PathBuf,
    pub bytes: u64,
    pub lines: u64,
    /// SHA-256 of the bytes as they were written.
    pub sha256: String,
    /// Time from the first line to the close.
    pub capture_time: Duration,
}

struct OpenFile {
    seq_no: u64,
    name: String,
    path: PathBuf,
    writer: BufWriter<File>,
    hasher: Sha256,
    bytes: u64,
    lines: u64,
    opened: Instant,
}

/// Writes lines into `capture-NNNNNN.log` files, closing each once it holds
/// at least `file_size` bytes. Files only ever end at a line boundary.
pub struct LogRoller {
    dir: PathBuf,
    file_size: u64,
    next_seq: u64,
    current: Option<OpenFile>,
}

impl LogRoller {
    pub fn new(dir: &Path, file_size: u64) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir).map_err(PipelineError::io(format!("creating {}", dir.display())))?;
        Ok(LogRoller {
            dir: dir.to_path_buf(),
            file_size,
            next_seq: 1,
            current: None,
        })
    }

    /// Appends one line (a newline is added). Returns the file it closed, if
    /// this line filled it.
    pub fn write_line(&mut self, line: &str) -> Result<Option<ClosedFile>, PipelineError> {
        if self.current.is_none() {
            self.current = Some(self.open()?);
        }
        let file = self.current.as_mut().expect("opened above");
        let context = || format!("writing {}", file.path.display());
        file.writer
            .write_all(line.as_bytes())
            .and_then(|_| file.writer.write_all(b"\n"))
            .map_err(|e| PipelineError::Io {
                context: context(),
                source: e,
            })?;
        file.hasher.update(line.as_bytes());
        file.hasher.update(b"\n");
        file.bytes += line.len() as u64 + 1;
        file.lines += 1;
        if file.bytes >= self.file_size {
            return self.close_current();
        }
        Ok(None)
    }

    /// Closes the partially filled file, if any.
    pub fn finish(mut self) -> Result<Option<ClosedFile>, PipelineError> {
        self.close_current()
    }

    fn open(&mut self) -> Result<OpenFile, PipelineError> {
        let seq_no = self.next_seq;
        self.next_seq += 1;
        let name = format!("capture-{seq_no:06}.log");
        let path = self.dir.join(&name);
        let file = File::create(&path).map_err(PipelineError::io(format!("creating {}", path.display())))?;
        Ok(OpenFile {
            seq_no,
            name,
            path,
            writer: BufWriter::with_capacity(1 << 16, file),
            hasher: Sha256::new(),
            bytes: 0,
            lines: 0,
            opened: Instant::now(),
        })
    }

    fn close_current(&mut self) -> Result<Option<ClosedFile>, PipelineError> {
        let Some(mut file) = self.current.take() else {
            return Ok(None);
        };
        file.writer
            .flush()
            .and_then(|_| file.writer.get_ref().sync_data())
            .map_err(PipelineError::io(format!("closing {}", file.path.display())))?;
        Ok(Some(ClosedFile {
            seq_no: file.seq_no,
            name: file.name,
            path: file.path,
            bytes: file.bytes,
            lines: file.lines,
            sha256: hex::encode(file.hasher.finalize()),
            capture_time: file.opened.elapsed(),
        }))
    }
}
