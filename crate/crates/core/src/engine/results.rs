//! Results file: tab-separated attacker lines followed by a `#` stats block.
//!
//! ```text
//! 10.1.2.3    1100    udp
//! 10.4.5.6    1100    udp
//! # attack_class=udp
//! # threshold=500
//! # records_seen=1375000
//! # records_matched=1100412
//! # reduced_records=1100412
//! # malformed=0
//! # attackers=2
//! ```

use std::fmt::Write;
use std::net::Ipv4Addr;

use super::DetectionResult;
use crate::detect::{AttackClass, AttackerReport};

pub(super) fn render(result: &DetectionResult) -> String {
    let mut out = String::with_capacity(32 * (result.attackers.len() + 8));
    for report in &result.attackers {
        out.push_str(&report.to_line());
        out.push('\n');
    }
    let s = &result.stats;
    let _ = writeln!(out, "# attack_class={}", result.attack_class);
    let _ = writeln!(out, "# threshold={}", result.threshold);
    let _ = writeln!(out, "# records_seen={}", s.records_seen);
    let _ = writeln!(out, "# records_matched={}", s.records_matched);
    let _ = writeln!(out, "# reduced_records={}", s.reduced_records);
    let _ = writeln!(out, "# malformed={}", s.malformed_count);
    let _ = writeln!(out, "# attackers={}", result.attackers.len());
    out
}

/// A results file read back from text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultsFile {
    pub attackers: Vec<AttackerReport>,
    pub attack_class: AttackClass,
    pub threshold: u64,
    pub records_seen: u64,
    pub records_matched: u64,
    pub reduced_records: u64,
    pub malformed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResultsError {
    #[error("line {0}: malformed attacker line")]
    BadLine(usize),
    #[error("stats block is missing `{0}`")]
    MissingStat(&'static str),
    #[error("stats block value for `{0}` is invalid")]
    BadStat(&'static str),
    #[error("stats block says {stated} attackers but {listed} are listed")]
    CountMismatch { stated: u64, listed: usize },
}

pub fn parse_results(text: &str) -> Result<ResultsFile, ResultsError> {
    let mut attackers = Vec::new();
    let mut stats: Vec<(&str, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(stat) = line.strip_prefix('#') {
            if let Some((k, v)) = stat.trim().split_once('=') {
                stats.push((k.trim(), v.trim()));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        attackers.push(parse_attacker(line).ok_or(ResultsError::BadLine(i + 1))?);
    }

    let get = |key: &'static str| -> Result<&str, ResultsError> {
        stats
            .iter()
            .rev()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or(ResultsError::MissingStat(key))
    };
    let num = |key: &'static str| -> Result<u64, ResultsError> {
        get(key)?.parse().map_err(|_| ResultsError::BadStat(key))
    };

    let stated = num("attackers")?;
    if stated != attackers.len() as u64 {
        return Err(ResultsError::CountMismatch {
            stated,
            listed: attackers.len(),
        });
    }
    Ok(ResultsFile {
        attack_class: get("attack_class")?
            .parse()
            .map_err(|_| ResultsError::BadStat("attack_class"))?,
        threshold: num("threshold")?,
        records_seen: num("records_seen")?,
        records_matched: num("records_matched")?,
        reduced_records: num("reduced_records")?,
        malformed: num("malformed")?,
        attackers,
    })
}

pub(crate) fn parse_attacker(line: &str) -> Option<AttackerReport> {
    let mut fields = line.split(['\t', ' ']).filter(|f| !f.is_empty());
    let src_ip: Ipv4Addr = fields.next()?.parse().ok()?;
    let count: u64 = fields.next()?.parse().ok()?;
    let attack_class: AttackClass = fields.next()?.parse().ok()?;
    if fields.next().is_some() {
        return None;
    }
    Some(AttackerReport {
        src_ip,
        count,
        attack_class,
    })
}
