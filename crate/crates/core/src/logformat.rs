//! The packet-summary line format shared by capture output, transfer payloads
//! and engine input.
//!
//! One record per line:
//!
//! ```text
//! frame_no  timestamp  src_ip -> dst_ip  PROTO  length  detail...
//! ```
//!
//! Fields are separated by any run of spaces or tabs. Everything after the
//! length token (minus the separating whitespace) is the detail text, kept
//! verbatim. The canonical writer uses single tabs and six decimal places for
//! the timestamp.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

const MICROS_PER_SEC: u64 = 1_000_000;

/// Capture time in whole microseconds since capture start.
///
/// The parser accepts any number of fractional digits and rounds half-up to
/// the microsecond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_micros(micros: u64) -> Self {
        Timestamp(micros)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    pub fn saturating_add_micros(self, micros: u64) -> Self {
        Timestamp(self.0.saturating_add(micros))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / MICROS_PER_SEC, self.0 % MICROS_PER_SEC)
    }
}

impl FromStr for Timestamp {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, Some(f)),
            None => (s, None),
        };
        if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return Err(());
        }
        let secs: u64 = whole.parse().map_err(|_| ())?;
        let mut micros = 0u64;
        if let Some(frac) = frac {
            if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(());
            }
            let digits = frac.as_bytes();
            for i in 0..6 {
                let d = digits.get(i).map_or(0, |b| u64::from(b - b'0'));
                micros = micros * 10 + d;
            }
            if digits.get(6).is_some_and(|b| *b >= b'5') {
                micros += 1;
            }
        }
        secs.checked_mul(MICROS_PER_SEC)
            .and_then(|t| t.checked_add(micros))
            .map(Timestamp)
            .ok_or(())
    }
}

/// Protocol column. Tokens are matched case-sensitively; anything else is
/// kept as `Other` with its original token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Protocol {
    Tcp,
    Udp,
    Quic,
    Http,
    Icmp,
    Other(String),
}

impl Protocol {
    pub fn from_token(token: &str) -> Self {
        match token {
            "TCP" => Protocol::Tcp,
            "UDP" => Protocol::Udp,
            "QUIC" => Protocol::Quic,
            "HTTP" => Protocol::Http,
            "ICMP" => Protocol::Icmp,
            other => Protocol::Other(other.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
            Protocol::Quic => "QUIC",
            Protocol::Http => "HTTP",
            Protocol::Icmp => "ICMP",
            Protocol::Other(token) => token,
        }
    }

    pub fn is_other(&self) -> bool {
        matches!(self, Protocol::Other(_))
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One parsed log line.
///
/// Invariants: `frame_no >= 1`; `detail` holds no line breaks and does not
/// start with a space or tab; an `Other` protocol token is non-empty and
/// free of whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PacketRecord {
    pub frame_no: u64,
    pub timestamp: Timestamp,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub protocol: Protocol,
    pub length: u32,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MalformedReason {
    Empty,
    MissingField,
    BadFrameNumber,
    BadTimestamp,
    MissingArrow,
    BadIp,
    BadLength,
}

impl MalformedReason {
    pub fn code(self) -> &'static str {
        match self {
            MalformedReason::Empty => "empty",
            MalformedReason::MissingField => "missing_field",
            MalformedReason::BadFrameNumber => "bad_frame_no",
            MalformedReason::BadTimestamp => "bad_timestamp",
            MalformedReason::MissingArrow => "missing_arrow",
            MalformedReason::BadIp => "bad_ip",
            MalformedReason::BadLength => "bad_length",
        }
    }
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseOutcome {
    Record(PacketRecord),
    Malformed { line: String, reason: MalformedReason },
}

impl ParseOutcome {
    pub fn record(self) -> Option<PacketRecord> {
        match self {
            ParseOutcome::Record(r) => Some(r),
            ParseOutcome::Malformed { .. } => None,
        }
    }

    pub fn is_malformed(&self) -> bool {
        matches!(self, ParseOutcome::Malformed { .. })
    }
}

fn is_sep(c: char) -> bool {
    c == ' ' || c == '\t'
}

/// Splits off the next whitespace-delimited token, returning it and the
/// remainder with leading separators stripped.
fn next_token(s: &str) -> Option<(&str, &str)> {
    let s = s.trim_start_matches(is_sep);
    if s.is_empty() {
        return None;
    }
    match s.find(is_sep) {
        Some(end) => Some((&s[..end], s[end..].trim_start_matches(is_sep))),
        None => Some((s, "")),
    }
}

fn parse_ip(token: &str) -> Result<Ipv4Addr, MalformedReason> {
    // Ipv4Addr::from_str rejects anything but four decimal octets in 0..=255.
    token.parse().map_err(|_| MalformedReason::BadIp)
}

fn parse_fields(line: &str) -> Result<PacketRecord, MalformedReason> {
    use MalformedReason::*;

    if line.trim_matches(is_sep).is_empty() {
        return Err(Empty);
    }
    let (frame, rest) = next_token(line).ok_or(MissingField)?;
    let frame_no: u64 = match frame.parse() {
        Ok(n) if n >= 1 && frame.bytes().all(|b| b.is_ascii_digit()) => n,
        _ => return Err(BadFrameNumber),
    };
    let (ts, rest) = next_token(rest).ok_or(MissingField)?;
    let timestamp: Timestamp = ts.parse().map_err(|_| BadTimestamp)?;
    let (src, rest) = next_token(rest).ok_or(MissingField)?;
    let (arrow, rest) = next_token(rest).ok_or(MissingField)?;
    if arrow != "->" {
        return Err(MissingArrow);
    }
    let src_ip = parse_ip(src)?;
    let (dst, rest) = next_token(rest).ok_or(MissingField)?;
    let dst_ip = parse_ip(dst)?;
    let (proto, rest) = next_token(rest).ok_or(MissingField)?;
    let (len, rest) = next_token(rest).ok_or(MissingField)?;
    let length: u32 = match len.parse() {
        Ok(n) if len.bytes().all(|b| b.is_ascii_digit()) => n,
        _ => return Err(BadLength),
    };
    Ok(PacketRecord {
        frame_no,
        timestamp,
        src_ip,
        dst_ip,
        protocol: Protocol::from_token(proto),
        length,
        detail: rest.to_string(),
    })
}

/// Parses one line (without its trailing newline). Never fails: bad input
/// comes back as [`ParseOutcome::Malformed`].
pub fn parse_line(line: &str) -> ParseOutcome {
    let trimmed = line.strip_suffix('\r').unwrap_or(line);
    match parse_fields(trimmed) {
        Ok(record) => ParseOutcome::Record(record),
        Err(reason) => ParseOutcome::Malformed {
            line: line.to_string(),
            reason,
        },
    }
}

/// Canonical tab-separated form of a record, without a trailing newline.
pub fn format_line(record: &PacketRecord) -> String {
    let mut out = String::with_capacity(48 + record.detail.len());
    write_line(&mut out, record);
    out
}

/// Appends the canonical form of `record` to `out` (no newline).
pub fn write_line(out: &mut String, record: &PacketRecord) {
    use std::fmt::Write;
    let _ = write!(
        out,
        "{}\t{}\t{} -> {}\t{}\t{}\t{}",
        record.frame_no,
        record.timestamp,
        record.src_ip,
        record.dst_ip,
        record.protocol,
        record.length,
        record.detail
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn malformed_reason(line: &str) -> MalformedReason {
        match parse_line(line) {
            ParseOutcome::Malformed { reason, line: l } => {
                assert_eq!(l, line);
                reason
            }
            ParseOutcome::Record(r) => panic!("expected malformed, got {r:?}"),
        }
    }

    #[test]
    fn udp_snippet() {
        let line = "139875\t138.04015 10.12.32.1 -> 10.12.32.101 UDP\t50\tSrc port: 55348  Dst port: http";
        let r = parse_line(line).record().unwrap();
        assert_eq!(
            r,
            PacketRecord {
                frame_no: 139875,
                timestamp: Timestamp::from_micros(138_040_150),
                src_ip: ip("10.12.32.1"),
                dst_ip: ip("10.12.32.101"),
                protocol: Protocol::Udp,
                length: 50,
                detail: "Src port: 55348  Dst port: http".into(),
            }
        );
    }

    #[test]
    fn canonical_writer() {
        let r = PacketRecord {
            frame_no: 1,
            timestamp: Timestamp::ZERO,
            src_ip: ip("10.0.0.1"),
            dst_ip: ip("10.0.0.2"),
            protocol: Protocol::Icmp,
            length: 42,
            detail: "Echo (ping) request id=0x0001".into(),
        };
        assert_eq!(
            format_line(&r),
            "1\t0.000000\t10.0.0.1 -> 10.0.0.2\tICMP\t42\tEcho (ping) request id=0x0001"
        );
        assert_eq!(parse_line(&format_line(&r)).record(), Some(r));
    }

    #[test]
    fn empty_and_blank_lines() {
        assert_eq!(malformed_reason(""), MalformedReason::Empty);
        assert_eq!(malformed_reason(" \t "), MalformedReason::Empty);
    }

    #[test]
    fn letter_o_in_address_is_rejected() {
        let line = "229883\t2658.8827  10.12.32.1 ->  10.12.32.1O1 ICMP\t42\tEcho (ping) request  id=0x0001,";
        assert_eq!(malformed_reason(line), MalformedReason::BadIp);
    }

    #[test]
    fn error_paths() {
        use MalformedReason::*;
        assert_eq!(malformed_reason("x 1.0 10.0.0.1 -> 10.0.0.2 UDP 50"), BadFrameNumber);
        assert_eq!(malformed_reason("0 1.0 10.0.0.1 -> 10.0.0.2 UDP 50"), BadFrameNumber);
        assert_eq!(malformed_reason("-3 1.0 10.0.0.1 -> 10.0.0.2 UDP 50"), BadFrameNumber);
        assert_eq!(malformed_reason("1 abc 10.0.0.1 -> 10.0.0.2 UDP 50"), BadTimestamp);
        assert_eq!(malformed_reason("1 -1.0 10.0.0.1 -> 10.0.0.2 UDP 50"), BadTimestamp);
        assert_eq!(malformed_reason("1 1e3 10.0.0.1 -> 10.0.0.2 UDP 50"), BadTimestamp);
        assert_eq!(malformed_reason("1 1.0 10.0.0.1 => 10.0.0.2 UDP 50"), MissingArrow);
        assert_eq!(malformed_reason("1 1.0 10.0.0.1 10.0.0.2 UDP 50 x"), MissingArrow);
        assert_eq!(malformed_reason("1 1.0 10.0.0.256 -> 10.0.0.2 UDP 50"), BadIp);
        assert_eq!(malformed_reason("1 1.0 fe80::1 -> fe80::2 UDP 50"), BadIp);
        assert_eq!(malformed_reason("1 1.0 10.0.0.1 -> 10.0.0.2 UDP fifty"), BadLength);
        assert_eq!(malformed_reason("1 1.0 10.0.0.1 -> 10.0.0.2 UDP"), MissingField);
        assert_eq!(malformed_reason("1 1.0"), MissingField);
    }

    #[test]
    fn unknown_protocol_is_other() {
        let r = parse_line("7 0.5 10.0.0.1 -> 10.0.0.2 ARP 60 Who has 10.0.0.2?")
            .record()
            .unwrap();
        assert_eq!(r.protocol, Protocol::Other("ARP".into()));
        // case-sensitive
        let r = parse_line("7 0.5 10.0.0.1 -> 10.0.0.2 udp 60").record().unwrap();
        assert!(r.protocol.is_other());
    }

    #[test]
    fn detail_may_be_empty() {
        let r = parse_line("7 0.5 10.0.0.1 -> 10.0.0.2 UDP 60").record().unwrap();
        assert_eq!(r.detail, "");
        assert_eq!(parse_line(&format_line(&r)).record(), Some(r));
    }

    #[test]
    fn timestamp_precision() {
        let t = |s: &str| s.parse::<Timestamp>().map(Timestamp::as_micros);
        assert_eq!(t("45.406170"), Ok(45_406_170));
        assert_eq!(t("12"), Ok(12_000_000));
        assert_eq!(t("0.0000004"), Ok(0));
        assert_eq!(t("0.0000005"), Ok(1));
        assert_eq!(t("1.9999996"), Ok(2_000_000));
        assert_eq!(t("1."), Err(()));
        assert_eq!(t(".5"), Err(()));
        assert_eq!(Timestamp::from_micros(138_040_150).to_string(), "138.040150");
    }

    #[test]
    fn carriage_return_is_stripped() {
        let r = parse_line("1 0.1 10.0.0.1 -> 10.0.0.2 UDP 60 x\r").record().unwrap();
        assert_eq!(r.detail, "x");
    }
}
