//! Seeded synthetic traffic: flooding sources mixed with legitimate hosts.
//!
//! Attackers are drawn from 10.0.0.0/8 and legitimate hosts from
//! 192.168.0.0/16, so the two sets never overlap. Every attacker sends exactly
//! `packets_per_attacker` packets matching the chosen flood type. Legitimate
//! hosts send at most `legitimate_max_packets` matching packets each plus
//! noise that no detector matches. The whole stream is a shuffle of per-source
//! slots, replayed with exponential inter-arrival gaps.

use std::collections::{BTreeMap, HashSet};
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::detect::AttackClass;
use crate::logformat::{PacketRecord, Protocol, Timestamp};

const MAX_ATTACKERS: u32 = 4_000_000;
/// 192.168.0.0/16 with the .0 and .255 host octets excluded.
const MAX_LEGIT_HOSTS: u32 = 256 * 254;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    pub seed: u64,
    pub attack_class: AttackClass,
    pub attacker_count: u32,
    pub packets_per_attacker: u32,
    /// Share of attack packets in the whole stream, in (0, 1].
    pub attack_fraction: f64,
    pub victim_ip: Ipv4Addr,
    pub legitimate_host_count: u32,
    pub legitimate_max_packets: u32,
    /// Mean packet rate used for timestamp gaps.
    pub packets_per_second: f64,
    /// Extra filler characters appended to every detail field; widens lines
    /// without changing what any detector sees.
    pub detail_padding: usize,
}

impl TraceSpec {
    /// An 80/20 attack mix against 10.12.32.101 with 50 legitimate hosts.
    pub fn new(attack_class: AttackClass, attacker_count: u32, packets_per_attacker: u32) -> Self {
        TraceSpec {
            seed: 0,
            attack_class,
            attacker_count,
            packets_per_attacker,
            attack_fraction: 0.8,
            victim_ip: Ipv4Addr::new(10, 12, 32, 101),
            legitimate_host_count: 50,
            legitimate_max_packets: packets_per_attacker.saturating_sub(1).min(100),
            packets_per_second: 100_000.0,
            detail_padding: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Picks an attacker count so that the formatted trace comes out close to
    /// `target_bytes`, keeping `packets_per_attacker` fixed. Larger targets
    /// never yield fewer attackers.
    pub fn for_file_size(
        attack_class: AttackClass,
        target_bytes: u64,
        packets_per_attacker: u32,
        seed: u64,
    ) -> Self {
        let base = TraceSpec::new(attack_class, 1, packets_per_attacker).with_seed(seed);
        let line_len = mean_line_len(&base);
        let total_records = target_bytes as f64 / line_len;
        let attack_records = total_records * base.attack_fraction;
        let attackers = (attack_records / packets_per_attacker as f64).round();
        TraceSpec {
            attacker_count: attackers.clamp(1.0, MAX_ATTACKERS as f64) as u32,
            ..base
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.attacker_count == 0 {
            return Err(TraceError::NoAttackers);
        }
        if self.attacker_count > MAX_ATTACKERS {
            return Err(TraceError::TooManyAttackers(self.attacker_count));
        }
        if self.packets_per_attacker == 0 {
            return Err(TraceError::NoAttackPackets);
        }
        if !(self.attack_fraction > 0.0 && self.attack_fraction <= 1.0) {
            return Err(TraceError::BadAttackFraction(self.attack_fraction));
        }
        if self.legitimate_max_packets >= self.packets_per_attacker {
            return Err(TraceError::NotSeparable {
                legitimate_max: self.legitimate_max_packets,
                packets_per_attacker: self.packets_per_attacker,
            });
        }
        if self.legitimate_host_count > MAX_LEGIT_HOSTS {
            return Err(TraceError::TooManyLegitimateHosts(self.legitimate_host_count));
        }
        if !(self.packets_per_second.is_finite() && self.packets_per_second > 0.0) {
            return Err(TraceError::BadRate(self.packets_per_second));
        }
        if self.legitimate_total() > 0 && self.legitimate_host_count == 0 {
            return Err(TraceError::NoLegitimateHosts);
        }
        Ok(())
    }

    pub fn attack_total(&self) -> u64 {
        u64::from(self.attacker_count) * u64::from(self.packets_per_attacker)
    }

    /// Number of records in the generated stream.
    pub fn total_records(&self) -> u64 {
        let attack = self.attack_total();
        if self.attack_fraction >= 1.0 {
            attack
        } else {
            ((attack as f64 / self.attack_fraction).round() as u64).max(attack)
        }
    }

    pub fn legitimate_total(&self) -> u64 {
        self.total_records() - self.attack_total()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("attacker_count must be at least 1")]
    NoAttackers,
    #[error("attacker_count {0} exceeds the supported maximum of {MAX_ATTACKERS}")]
    TooManyAttackers(u32),
    #[error("packets_per_attacker must be at least 1")]
    NoAttackPackets,
    #[error("attack_fraction {0} is outside (0, 1]")]
    BadAttackFraction(f64),
    #[error("legitimate_max_packets ({legitimate_max}) must be below packets_per_attacker ({packets_per_attacker})")]
    NotSeparable {
        legitimate_max: u32,
        packets_per_attacker: u32,
    },
    #[error("legitimate_host_count {0} exceeds the supported maximum of {MAX_LEGIT_HOSTS}")]
    TooManyLegitimateHosts(u32),
    #[error("packets_per_second must be positive, got {0}")]
    BadRate(f64),
    #[error("an attack_fraction below 1 needs at least one legitimate host")]
    NoLegitimateHosts,
}

/// What a generated record was drawn as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// Flood packet from an attacker.
    Attack,
    /// Legitimate packet that still matches the flood's predicate.
    LegitimateMatch,
    /// Legitimate packet no detector matches.
    Noise,
}

/// Source addresses and per-host matching counts, fixed by the seed.
struct TracePlan {
    attackers: Vec<Ipv4Addr>,
    legit_hosts: Vec<Ipv4Addr>,
    legit_matches: Vec<u32>,
    noise: u64,
}

impl TracePlan {
    fn build(spec: &TraceSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut seen = HashSet::with_capacity(spec.attacker_count as usize);
        let mut attackers = Vec::with_capacity(spec.attacker_count as usize);
        while attackers.len() < spec.attacker_count as usize {
            let host: u32 = rng.random_range(1..(1 << 24) - 1);
            let ip = Ipv4Addr::from(0x0a00_0000 | host);
            let last = ip.octets()[3];
            if last == 0 || last == 255 || ip == spec.victim_ip || !seen.insert(ip) {
                continue;
            }
            attackers.push(ip);
        }

        let mut seen = HashSet::with_capacity(spec.legitimate_host_count as usize);
        let mut legit_hosts = Vec::with_capacity(spec.legitimate_host_count as usize);
        while legit_hosts.len() < spec.legitimate_host_count as usize {
            let ip = Ipv4Addr::new(192, 168, rng.random(), rng.random_range(1..255));
            if ip != spec.victim_ip && seen.insert(ip) {
                legit_hosts.push(ip);
            }
        }

        let mut budget = spec.legitimate_total();
        let legit_matches = legit_hosts
            .iter()
            .map(|_| {
                let want = u64::from(rng.random_range(0..=spec.legitimate_max_packets));
                let take = want.min(budget);
                budget -= take;
                take as u32
            })
            .collect();

        TracePlan {
            attackers,
            legit_hosts,
            legit_matches,
            noise: budget,
        }
    }
}

/// Streaming generator; yields records in frame order.
pub struct TraceGenerator {
    spec: TraceSpec,
    rng: ChaCha8Rng,
    plan: TracePlan,
    slots: Vec<u32>,
    next: usize,
    clock: Timestamp,
    gap: Exp<f64>,
    wire_bytes: u64,
}

impl TraceGenerator {
    pub fn new(spec: TraceSpec) -> Result<Self, TraceError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let plan = TracePlan::build(&spec, &mut rng);

        // Slot values: [0, A) attacker, [A, A+H) legitimate match,
        // [A+H, A+2H) noise, each indexing the source host.
        let attackers = plan.attackers.len() as u32;
        let hosts = plan.legit_hosts.len() as u32;
        let mut slots = Vec::with_capacity(spec.total_records() as usize);
        for a in 0..attackers {
            slots.extend(std::iter::repeat_n(a, spec.packets_per_attacker as usize));
        }
        for (h, &m) in plan.legit_matches.iter().enumerate() {
            slots.extend(std::iter::repeat_n(attackers + h as u32, m as usize));
        }
        for _ in 0..plan.noise {
            slots.push(attackers + hosts + rng.random_range(0..hosts));
        }
        slots.shuffle(&mut rng);

        let gap = Exp::new(spec.packets_per_second).expect("rate validated");
        Ok(TraceGenerator {
            spec,
            rng,
            plan,
            slots,
            next: 0,
            clock: Timestamp::ZERO,
            gap,
            wire_bytes: 0,
        })
    }

    pub fn spec(&self) -> &TraceSpec {
        &self.spec
    }

    /// Sum of the `length` column over records emitted so far: the on-the-wire
    /// volume the log represents.
    pub fn wire_bytes(&self) -> u64 {
        self.wire_bytes
    }

    pub fn attacker_ips(&self) -> &[Ipv4Addr] {
        &self.plan.attackers
    }

    pub fn legitimate_ips(&self) -> &[Ipv4Addr] {
        &self.plan.legit_hosts
    }

    /// Yields each record together with the label it was drawn under.
    pub fn labeled(self) -> Labeled {
        Labeled(self)
    }

    fn next_labeled(&mut self) -> Option<(PacketRecord, Label)> {
        let slot = *self.slots.get(self.next)?;
        self.next += 1;
        let frame_no = self.next as u64;

        let secs = self.gap.sample(&mut self.rng);
        self.clock = self.clock.saturating_add_micros((secs * 1e6).round() as u64);

        let attackers = self.plan.attackers.len() as u32;
        let hosts = self.plan.legit_hosts.len() as u32;
        let (src_ip, label) = if slot < attackers {
            (self.plan.attackers[slot as usize], Label::Attack)
        } else if slot < attackers + hosts {
            (self.plan.legit_hosts[(slot - attackers) as usize], Label::LegitimateMatch)
        } else {
            (self.plan.legit_hosts[(slot - attackers - hosts) as usize], Label::Noise)
        };

        let (protocol, length, mut detail) = match label {
            Label::Attack | Label::LegitimateMatch => flood_packet(self.spec.attack_class, &mut self.rng, self.clock),
            Label::Noise => noise_packet(self.spec.attack_class, &mut self.rng, src_ip, self.spec.victim_ip),
        };
        if self.spec.detail_padding > 0 {
            detail.push_str(" pad=");
            detail.extend(std::iter::repeat_n('.', self.spec.detail_padding));
        }
        self.wire_bytes += u64::from(length);

        let record = PacketRecord {
            frame_no,
            timestamp: self.clock,
            src_ip,
            dst_ip: self.spec.victim_ip,
            protocol,
            length,
            detail,
        };
        Some((record, label))
    }
}

impl Iterator for TraceGenerator {
    type Item = PacketRecord;

    fn next(&mut self) -> Option<PacketRecord> {
        self.next_labeled().map(|(r, _)| r)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.slots.len() - self.next;
        (left, Some(left))
    }
}

pub struct Labeled(TraceGenerator);

impl Labeled {
    pub fn wire_bytes(&self) -> u64 {
        self.0.wire_bytes
    }
}

impl Iterator for Labeled {
    type Item = (PacketRecord, Label);

    fn next(&mut self) -> Option<Self::Item> {
        self.0.next_labeled()
    }
}

/// Generates the record stream for `spec`.
pub fn generate_trace(spec: &TraceSpec) -> Result<TraceGenerator, TraceError> {
    TraceGenerator::new(spec.clone())
}

/// Sources whose matching-packet count strictly exceeds `threshold`, with
/// their exact counts. Computed from the seeded plan without replaying the
/// stream.
pub fn ground_truth(spec: &TraceSpec, threshold: u64) -> Result<BTreeMap<Ipv4Addr, u64>, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plan = TracePlan::build(spec, &mut rng);
    let per_attacker = u64::from(spec.packets_per_attacker);
    let attackers = plan.attackers.iter().map(|ip| (*ip, per_attacker));
    let legit = plan
        .legit_hosts
        .iter()
        .zip(&plan.legit_matches)
        .map(|(ip, m)| (*ip, u64::from(*m)));
    Ok(attackers.chain(legit).filter(|(_, count)| *count > threshold).collect())
}

fn flood_packet(class: AttackClass, rng: &mut ChaCha8Rng, clock: Timestamp) -> (Protocol, u32, String) {
    let sport: u16 = rng.random_range(1024..=65535);
    match class {
        AttackClass::Udp => {
            if rng.random_ratio(1, 10) {
                let dcid: u64 = rng.random();
                (Protocol::Quic, 1252, format!("Protected Payload (KP0), DCID={dcid:016x}"))
            } else {
                let len = rng.random_range(1024..=1470);
                (Protocol::Udp, len, format!("Src port: {sport}  Dst port: http"))
            }
        }
        AttackClass::Syn => {
            if rng.random_ratio(3, 10) {
                (
                    Protocol::Tcp,
                    119,
                    format!("[TCP Retransmission] {sport} > 80 [SYN] Seq=0 Win=10000 Len=43 MSS=1452"),
                )
            } else {
                (Protocol::Tcp, 74, format!("{sport} > 80 [SYN] Seq=0 Win=29200 Len=0 MSS=1460"))
            }
        }
        AttackClass::HttpGet => {
            let post: u32 = rng.random_range(10_000_000..100_000_000);
            let len = rng.random_range(400..=700);
            let ms = 1_432_840_000_000 + clock.as_micros() / 1000;
            (Protocol::Http, len, format!("GET /posts/{post}/ivc/dddc?_={ms} HTTP/1.1"))
        }
        AttackClass::Icmp => {
            let id: u16 = rng.random();
            let seq: u16 = rng.random();
            (
                Protocol::Icmp,
                42,
                format!("Echo (ping) request  id=0x{id:04x}, seq={seq}/{}, ttl=63", seq.swap_bytes()),
            )
        }
    }
}

fn noise_packet(class: AttackClass, rng: &mut ChaCha8Rng, src: Ipv4Addr, victim: Ipv4Addr) -> (Protocol, u32, String) {
    let sport: u16 = rng.random_range(1024..=65535);
    match rng.random_range(0..4u8) {
        0 => (Protocol::Other("ARP".into()), 60, format!("Who has {victim}? Tell {src}")),
        1 => {
            let id: u16 = rng.random();
            (
                Protocol::Other("DNS".into()),
                74,
                format!("Standard query 0x{id:04x} A www.example.com"),
            )
        }
        2 => (Protocol::Tcp, 66, format!("{sport} > 443 [ACK] Seq=1 Ack=1 Win=501 Len=0")),
        _ => match class {
            AttackClass::Syn => (Protocol::Tcp, 74, format!("80 > {sport} [SYN, ACK] Seq=0 Ack=1 Win=28960 Len=0")),
            AttackClass::Icmp => (Protocol::Icmp, 42, "Echo (ping) reply    id=0x0001, seq=1/256, ttl=64".to_string()),
            AttackClass::HttpGet => (Protocol::Http, 1514, "HTTP/1.1 200 OK  (text/html)".to_string()),
            AttackClass::Udp => (Protocol::Tcp, 66, format!("{sport} > 80 [FIN, ACK] Seq=1 Ack=1 Win=501 Len=0")),
        },
    }
}

/// Mean formatted line length (newline included) over a short sample.
fn mean_line_len(spec: &TraceSpec) -> f64 {
    let sample = TraceSpec {
        attacker_count: 20,
        packets_per_attacker: 100,
        legitimate_max_packets: spec.legitimate_max_packets.min(99),
        ..spec.clone()
    };
    let generator = TraceGenerator::new(sample).expect("sample spec is valid");
    let (count, bytes) = generator.fold((0u64, 0u64), |(n, b), r| {
        (n + 1, b + crate::logformat::format_line(&r).len() as u64 + 1)
    });
    bytes as f64 / count as f64
}
