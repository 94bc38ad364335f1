//! Helpers shared by the integration tests. The brute-force counter here is
//! deliberately written without touching the library's parser or detectors.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use hadec::{format_line, generate_trace, AttackClass, PacketRecord, Protocol, Timestamp, TraceSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// Snippets as captured, with wrapped continuation lines joined back up. The
// HTTP request target was wrapped mid-URL, so it is rejoined without a space.
pub const TCP_SYN: &str = "17956  45.406170  10.12.32.1 -> 10.12.32.101 TCP 119 [TCP Retransmission] 0 > 480 [SYN] Seq=0 Win=10000 Len=43 MSS=1452 SACK_PERM=1 TSval=422940867 TSecr=0 WS=32";
pub const HTTP_GET: &str = "46737 2641.808087 10.12.32.1 -> 10.12.32.101 HTTP 653 GET /posts/17076163/ivc/dddc?_=1432840178190 HTTP/1.1";
pub const UDP: &str = "139875\t138.04015 10.12.32.1 -> 10.12.32.101 UDP\t50\tSrc port: 55348  Dst port: http";
pub const ICMP_TYPO: &str = "229883\t2658.8827  10.12.32.1 ->  10.12.32.1O1 ICMP\t42\tEcho (ping) request  id=0x0001, seq=11157/38187, ttl=63 (reply in 229884)";

/// Splits a log line the slow, obvious way. Returns source address,
/// protocol token and detail text, or `None` for anything malformed.
pub fn naive_fields(line: &str) -> Option<(Ipv4Addr, String, String)> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut rest = line;
    let mut tokens = Vec::new();
    for _ in 0..7 {
        rest = rest.trim_start_matches([' ', '\t']);
        let end = rest.find([' ', '\t']).unwrap_or(rest.len());
        if end == 0 {
            return None;
        }
        tokens.push(&rest[..end]);
        rest = &rest[end..];
    }
    let detail = rest.trim_start_matches([' ', '\t']).to_string();
    let digits = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit());
    if !digits(tokens[0]) || tokens[0].parse::<u64>().map_or(true, |n| n == 0) || !digits(tokens[6]) || tokens[6].parse::<u32>().is_err() {
        return None;
    }
    let ts_ok = match tokens[1].split_once('.') {
        Some((a, b)) => digits(a) && digits(b),
        None => digits(tokens[1]),
    };
    if !ts_ok || tokens[3] != "->" {
        return None;
    }
    let src: Ipv4Addr = tokens[2].parse().ok()?;
    let _dst: Ipv4Addr = tokens[4].parse().ok()?;
    Some((src, tokens[5].to_string(), detail))
}

pub fn naive_matches(class: AttackClass, proto: &str, detail: &str) -> bool {
    match class {
        AttackClass::Udp => proto == "UDP" || proto == "QUIC",
        AttackClass::Syn => proto == "TCP" && detail.contains("[SYN]") && !detail.contains("[SYN, ACK]"),
        AttackClass::HttpGet => proto == "HTTP" && detail.starts_with("GET "),
        AttackClass::Icmp => proto == "ICMP" && detail.contains("Echo (ping) request"),
    }
}

/// Single pass over the lines: per-source count of matching records.
pub fn brute_force_counts<'a>(lines: impl IntoIterator<Item = &'a str>, class: AttackClass) -> BTreeMap<Ipv4Addr, u64> {
    let mut counts = BTreeMap::new();
    for line in lines {
        if let Some((src, proto, detail)) = naive_fields(line) {
            if naive_matches(class, &proto, &detail) {
                *counts.entry(src).or_insert(0) += 1;
            }
        }
    }
    counts
}

pub fn brute_force_file(path: &Path, class: AttackClass, threshold: u64) -> BTreeMap<Ipv4Addr, u64> {
    let reader = BufReader::new(File::open(path).unwrap());
    let lines: Vec<String> = reader.lines().map(Result::unwrap).collect();
    let mut counts = brute_force_counts(lines.iter().map(String::as_str), class);
    counts.retain(|_, c| *c > threshold);
    counts
}

/// Writes the trace for `spec` to `path`; returns (lines, bytes).
pub fn write_trace(spec: &TraceSpec, path: &Path) -> (u64, u64) {
    let mut out = BufWriter::new(File::create(path).unwrap());
    let (mut lines, mut bytes) = (0u64, 0u64);
    for record in generate_trace(spec).unwrap() {
        let line = format_line(&record);
        out.write_all(line.as_bytes()).unwrap();
        out.write_all(b"\n").unwrap();
        lines += 1;
        bytes += line.len() as u64 + 1;
    }
    out.flush().unwrap();
    (lines, bytes)
}

/// Generates traces (seed advancing) into `path`, stopping at the first
/// line boundary at or past `target` bytes.
pub fn write_sized_trace(class: AttackClass, target: u64, path: &Path) -> u64 {
    let mut out = BufWriter::new(File::create(path).unwrap());
    let mut bytes = 0u64;
    let mut seed = 1u64;
    'fill: loop {
        let spec = TraceSpec::new(class, 200, 1100).with_seed(seed);
        for record in generate_trace(&spec).unwrap() {
            if bytes >= target {
                break 'fill;
            }
            let line = format_line(&record);
            out.write_all(line.as_bytes()).unwrap();
            out.write_all(b"\n").unwrap();
            bytes += line.len() as u64 + 1;
        }
        seed += 1;
    }
    out.flush().unwrap();
    bytes
}

pub fn as_map(reports: &[hadec::AttackerReport]) -> BTreeMap<Ipv4Addr, u64> {
    let map: BTreeMap<_, _> = reports.iter().map(|r| (r.src_ip, r.count)).collect();
    assert_eq!(map.len(), reports.len(), "duplicate source in report");
    map
}

pub fn trace_lines(spec: &TraceSpec) -> Vec<String> {
    generate_trace(spec).unwrap().map(|r| format_line(&r)).collect()
}

/// A valid record with awkward but legal detail text.
pub fn random_record(rng: &mut ChaCha8Rng) -> PacketRecord {
    const PROTOS: [&str; 8] = ["TCP", "UDP", "QUIC", "HTTP", "ICMP", "ARP", "DNS", "tcp"];
    const WORDS: [&str; 8] = ["[SYN]", "GET", "/index.html", "Echo (ping) request", "Len=0", "->", "  ", "\t"];
    let n_words = rng.random_range(0..6);
    let mut detail = String::new();
    for i in 0..n_words {
        if i > 0 {
            detail.push(' ');
        }
        detail.push_str(WORDS[rng.random_range(0..WORDS.len())]);
    }
    // Detail keeps inner whitespace but never starts with it or ends in CR.
    let detail = detail.trim_start_matches([' ', '\t']).to_string();
    PacketRecord {
        frame_no: rng.random_range(1..u64::MAX / 2),
        timestamp: Timestamp::from_micros(rng.random_range(0..1u64 << 50)),
        src_ip: Ipv4Addr::from(rng.random::<u32>()),
        dst_ip: Ipv4Addr::from(rng.random::<u32>()),
        protocol: Protocol::from_token(PROTOS[rng.random_range(0..PROTOS.len())]),
        length: rng.random(),
        detail,
    }
}
