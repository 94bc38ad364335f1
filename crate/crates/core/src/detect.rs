//! Flood detectors: the per-class mapper predicates and the report type the
//! counter-based reducer produces.
//!
//! Each attack class is a [`FloodDetector`] implementation. Detectors are
//! looked up by name through a [`DetectorRegistry`], so the engine and the
//! CLI never match on the class directly.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;
use std::sync::Arc;

use crate::logformat::{PacketRecord, Protocol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttackClass {
    Syn,
    HttpGet,
    Udp,
    Icmp,
}

impl AttackClass {
    pub const ALL: [AttackClass; 4] = [
        AttackClass::Syn,
        AttackClass::HttpGet,
        AttackClass::Udp,
        AttackClass::Icmp,
    ];

    /// Name used on the command line and in results files.
    pub fn name(self) -> &'static str {
        match self {
            AttackClass::Syn => "syn",
            AttackClass::HttpGet => "http-get",
            AttackClass::Udp => "udp",
            AttackClass::Icmp => "icmp",
        }
    }

    /// The built-in detector for this class.
    pub fn detector(self) -> Arc<dyn FloodDetector> {
        match self {
            AttackClass::Syn => Arc::new(SynFlood),
            AttackClass::HttpGet => Arc::new(HttpGetFlood),
            AttackClass::Udp => Arc::new(UdpFlood),
            AttackClass::Icmp => Arc::new(IcmpFlood),
        }
    }
}

impl fmt::Display for AttackClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown attack class `{0}` (expected one of syn, http-get, udp, icmp)")]
pub struct UnknownAttackClass(pub String);

impl FromStr for AttackClass {
    type Err = UnknownAttackClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownAttackClass(s.to_string()))
    }
}

/// A mapper predicate for one flood type.
///
/// Implementations must be pure and must only look at the record's protocol
/// and detail text.
pub trait FloodDetector: Send + Sync {
    fn class(&self) -> AttackClass;

    /// Whether the record is a packet of this flood's type.
    fn matches(&self, record: &PacketRecord) -> bool;

    fn name(&self) -> &'static str {
        self.class().name()
    }
}

impl fmt::Debug for dyn FloodDetector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FloodDetector({})", self.name())
    }
}

/// UDP and QUIC datagrams.
#[derive(Debug, Clone, Copy, Default)]
pub struct UdpFlood;

/// TCP segments carrying a bare `[SYN]`. Retransmitted SYNs count; SYN-ACK
/// replies do not.
#[derive(Debug, Clone, Copy, Default)]
pub struct SynFlood;

/// HTTP requests whose detail starts with the `GET ` method.
#[derive(Debug, Clone, Copy, Default)]
pub struct HttpGetFlood;

/// ICMP echo requests. Echo replies come from the victim and are ignored.
#[derive(Debug, Clone, Copy, Default)]
pub struct IcmpFlood;

pub fn predicate_udp(r: &PacketRecord) -> bool {
    matches!(r.protocol, Protocol::Udp | Protocol::Quic)
}

pub fn predicate_syn(r: &PacketRecord) -> bool {
    r.protocol == Protocol::Tcp && r.detail.contains("[SYN]") && !r.detail.contains("[SYN, ACK]")
}

pub fn predicate_http_get(r: &PacketRecord) -> bool {
    r.protocol == Protocol::Http && r.detail.starts_with("GET ")
}

pub fn predicate_icmp(r: &PacketRecord) -> bool {
    r.protocol == Protocol::Icmp && r.detail.contains("Echo (ping) request")
}

impl FloodDetector for UdpFlood {
    fn class(&self) -> AttackClass {
        AttackClass::Udp
    }
    fn matches(&self, record: &PacketRecord) -> bool {
        predicate_udp(record)
    }
}

impl FloodDetector for SynFlood {
    fn class(&self) -> AttackClass {
        AttackClass::Syn
    }
    fn matches(&self, record: &PacketRecord) -> bool {
        predicate_syn(record)
    }
}

impl FloodDetector for HttpGetFlood {
    fn class(&self) -> AttackClass {
        AttackClass::HttpGet
    }
    fn matches(&self, record: &PacketRecord) -> bool {
        predicate_http_get(record)
    }
}

impl FloodDetector for IcmpFlood {
    fn class(&self) -> AttackClass {
        AttackClass::Icmp
    }
    fn matches(&self, record: &PacketRecord) -> bool {
        predicate_icmp(record)
    }
}

/// Detectors registered by name.
#[derive(Clone)]
pub struct DetectorRegistry {
    detectors: BTreeMap<&'static str, Arc<dyn FloodDetector>>,
}

impl DetectorRegistry {
    pub fn empty() -> Self {
        DetectorRegistry {
            detectors: BTreeMap::new(),
        }
    }

    /// Registry holding the four built-in flood detectors.
    pub fn builtin() -> Self {
        let mut registry = Self::empty();
        for class in AttackClass::ALL {
            registry.register(class.detector());
        }
        registry
    }

    /// Adds a detector, replacing any previous one with the same name.
    pub fn register(&mut self, detector: Arc<dyn FloodDetector>) -> Option<Arc<dyn FloodDetector>> {
        self.detectors.insert(detector.name(), detector)
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn FloodDetector>> {
        self.detectors.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.detectors.keys().copied()
    }
}

impl Default for DetectorRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl fmt::Debug for DetectorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.detectors.keys()).finish()
    }
}

/// Reducer output: a source that sent more matching packets than the
/// threshold within one job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AttackerReport {
    pub src_ip: Ipv4Addr,
    pub count: u64,
    pub attack_class: AttackClass,
}

impl AttackerReport {
    /// Results-file line: `src_ip<TAB>count<TAB>attack_class`.
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}", self.src_ip, self.count, self.attack_class)
    }
}
