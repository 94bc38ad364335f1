//! Framed transfer protocol between the capture and detection roles.
//!
//! Every message is a 4-byte big-endian payload length followed by a UTF-8
//! payload of the form `VERB<TAB>field<TAB>field...`:
//!
//! | verb         | fields                                   |
//! |--------------|------------------------------------------|
//! | `ANNOUNCE`   | file name, size in bytes, sequence no.   |
//! | `PULL`       | file name                                |
//! | `DATA`       | size in bytes                            |
//! | `ACK`        | file name                                |
//! | `BATCH_DONE` | file count                               |
//! | `RESULT`     | attacker count, then one field per line  |
//! | `ERROR`      | code, text                               |
//!
//! A `DATA` frame is followed immediately by exactly `size` raw bytes, outside
//! the framing. `RESULT` carries each results line as its own field with the
//! line's tabs replaced by single spaces (`10.0.0.1 600 udp`).

use std::fmt;
use std::io::{self, Read, Write};

use crate::detect::AttackerReport;

/// Upper bound on a control frame; DATA bodies are not framed and not bound
/// by this.
pub const MAX_FRAME: u32 = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    SizeMismatch,
    TransferFailed,
    IncompleteBatch,
    JobFailed,
    Protocol,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::SizeMismatch => "size_mismatch",
            ErrorCode::TransferFailed => "transfer_failed",
            ErrorCode::IncompleteBatch => "incomplete_batch",
            ErrorCode::JobFailed => "job_failed",
            ErrorCode::Protocol => "protocol",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            ErrorCode::SizeMismatch,
            ErrorCode::TransferFailed,
            ErrorCode::IncompleteBatch,
            ErrorCode::JobFailed,
            ErrorCode::Protocol,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }

    /// Codes that end a batch rather than a single file transfer.
    pub fn is_batch_level(self) -> bool {
        matches!(self, ErrorCode::IncompleteBatch | ErrorCode::JobFailed)
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Announce { file_name: String, size_bytes: u64, seq_no: u64 },
    Pull { file_name: String },
    /// Header only; the body follows on the stream.
    Data { size_bytes: u64 },
    Ack { file_name: String },
    BatchDone { count: u64 },
    Result { attackers: Vec<AttackerReport> },
    Error { code: ErrorCode, text: String },
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds limit")]
    FrameTooLarge(u32),
    #[error("bad message: {0}")]
    BadMessage(String),
    #[error("stream ended after {received} of {expected} data bytes")]
    Truncated { expected: u64, received: u64 },
}

/// Replaces characters that would break the field grammar.
fn clean(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}

/// Whether `name` can travel as a single field and be used as a plain file
/// name in the staging directory.
pub fn is_valid_file_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && !name.contains(['/', '\\', '\t', '\n', '\r', '\0'])
}

impl Message {
    pub fn encode(&self) -> String {
        match self {
            Message::Announce {
                file_name,
                size_bytes,
                seq_no,
            } => format!("ANNOUNCE\t{}\t{size_bytes}\t{seq_no}", clean(file_name)),
            Message::Pull { file_name } => format!("PULL\t{}", clean(file_name)),
            Message::Data { size_bytes } => format!("DATA\t{size_bytes}"),
            Message::Ack { file_name } => format!("ACK\t{}", clean(file_name)),
            Message::BatchDone { count } => format!("BATCH_DONE\t{count}"),
            Message::Result { attackers } => {
                let mut out = format!("RESULT\t{}", attackers.len());
                for a in attackers {
                    out.push('\t');
                    out.push_str(&a.to_line().replace('\t', " "));
                }
                out
            }
            Message::Error { code, text } => format!("ERROR\t{code}\t{}", clean(text)),
        }
    }

    pub fn decode(payload: &str) -> Result<Message, WireError> {
        let bad = || WireError::BadMessage(payload.chars().take(120).collect());
        let mut fields = payload.split('\t');
        let verb = fields.next().ok_or_else(bad)?;
        let rest: Vec<&str> = fields.collect();
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad());
        let name = |s: &str| {
            if is_valid_file_name(s) {
                Ok(s.to_string())
            } else {
                Err(bad())
            }
        };
        let msg = match (verb, rest.as_slice()) {
            ("ANNOUNCE", [n, size, seq]) => Message::Announce {
                file_name: name(n)?,
                size_bytes: num(size)?,
                seq_no: num(seq)?,
            },
            ("PULL", [n]) => Message::Pull { file_name: name(n)? },
            ("DATA", [size]) => Message::Data { size_bytes: num(size)? },
            ("ACK", [n]) => Message::Ack { file_name: name(n)? },
            ("BATCH_DONE", [count]) => Message::BatchDone { count: num(count)? },
            ("RESULT", [count, lines @ ..]) => {
                if num(count)? != lines.len() as u64 {
                    return Err(bad());
                }
                let attackers = lines
                    .iter()
                    .map(|l| crate::engine::parse_attacker(l).ok_or_else(bad))
                    .collect::<Result<_, _>>()?;
                Message::Result { attackers }
            }
            ("ERROR", [code, text]) => Message::Error {
                code: ErrorCode::parse(code).ok_or_else(bad)?,
                text: text.to_string(),
            },
            _ => return Err(bad()),
        };
        Ok(msg)
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), WireError> {
    let payload = msg.encode();
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|n| *n <= MAX_FRAME)
        .ok_or(WireError::FrameTooLarge(u32::MAX))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_message<R: Read>(r: &mut R) -> Result<Message, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(WireError::Closed),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Closed,
        _ => e.into(),
    })?;
    let text = String::from_utf8(payload).map_err(|_| WireError::BadMessage("payload is not UTF-8".into()))?;
    Message::decode(&text)
}

/// Sends a DATA header and then exactly `size` bytes from `body`.
pub fn send_data<W: Write, R: Read>(w: &mut W, body: &mut R, size: u64) -> Result<(), WireError> {
    let header = Message::Data { size_bytes: size }.encode();
    w.write_all(&(header.len() as u32).to_be_bytes())?;
    w.write_all(header.as_bytes())?;
    let copied = io::copy(&mut body.take(size), w)?;
    if copied != size {
        return Err(WireError::Truncated {
            expected: size,
            received: copied,
        });
    }
    w.flush()?;
    Ok(())
}

/// Copies exactly `size` body bytes following a DATA header into `sink`.
pub fn recv_data<R: Read, W: Write>(r: &mut R, size: u64, sink: &mut W) -> Result<(), WireError> {
    let received = io::copy(&mut r.take(size), sink)?;
    if received != size {
        return Err(WireError::Truncated {
            expected: size,
            received,
        });
    }
    Ok(())
}
