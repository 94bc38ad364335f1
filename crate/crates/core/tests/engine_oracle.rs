//! Generator contracts and engine-versus-brute-force equivalence.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::sync::Arc;

use hadec::detect::{DetectorRegistry, FloodDetector};
use hadec::engine::{parse_results, run_job_with, split_blocks, EngineError};
use hadec::traffgen::{Label, TraceError};
use hadec::{generate_trace, ground_truth, run_job, AttackClass, JobConfig, PacketRecord, Protocol, TraceSpec};
use proptest::prelude::*;

use common::{as_map, brute_force_counts, brute_force_file, trace_lines, write_trace};

fn job(class: AttackClass, threshold: u64, block_size: u64, workers: usize, reducers: usize) -> JobConfig {
    JobConfig {
        attack_class: class,
        threshold,
        block_size,
        worker_count: workers,
        reducer_count: reducers,
    }
}

#[test]
fn hundred_udp_attackers_six_hundred_each() {
    let spec = TraceSpec::new(AttackClass::Udp, 100, 600).with_seed(7);
    let lines = trace_lines(&spec);
    let counts = brute_force_counts(lines.iter().map(String::as_str), AttackClass::Udp);
    let attackers: BTreeMap<_, _> = counts.into_iter().filter(|(ip, _)| ip.octets()[0] == 10).collect();
    assert_eq!(attackers.len(), 100);
    assert!(attackers.values().all(|&c| c == 600));
    assert_eq!(ground_truth(&spec, 500).unwrap(), attackers);
}

#[test]
fn three_attackers_recoverable_by_counting() {
    let mut spec = TraceSpec::new(AttackClass::Syn, 3, 501).with_seed(42);
    spec.legitimate_host_count = 50;
    spec.legitimate_max_packets = 100;
    let lines = trace_lines(&spec);
    let mut counts = brute_force_counts(lines.iter().map(String::as_str), AttackClass::Syn);
    counts.retain(|_, c| *c > 500);
    assert_eq!(counts.len(), 3);
    assert_eq!(ground_truth(&spec, 500).unwrap(), counts);
}

#[test]
fn ground_truth_is_strict() {
    let over = TraceSpec::new(AttackClass::Icmp, 5, 501).with_seed(1);
    let truth = ground_truth(&over, 500).unwrap();
    assert_eq!(truth.len(), 5);
    assert!(truth.values().all(|&c| c == 501));
    let at = TraceSpec::new(AttackClass::Icmp, 5, 500).with_seed(1);
    assert!(ground_truth(&at, 500).unwrap().is_empty());
}

#[test]
fn generator_is_deterministic() {
    let spec = TraceSpec::new(AttackClass::HttpGet, 30, 200).with_seed(99);
    assert_eq!(trace_lines(&spec), trace_lines(&spec));
    let other = spec.clone().with_seed(100);
    assert_ne!(trace_lines(&spec), trace_lines(&other));
}

#[test]
fn generator_stream_shape() {
    let spec = TraceSpec::new(AttackClass::Udp, 40, 300).with_seed(5);
    let records: Vec<(PacketRecord, Label)> = generate_trace(&spec).unwrap().labeled().collect();
    assert_eq!(records.len() as u64, spec.total_records());
    for (i, (r, _)) in records.iter().enumerate() {
        assert_eq!(r.frame_no, i as u64 + 1);
    }
    assert!(records.windows(2).all(|w| w[0].0.timestamp <= w[1].0.timestamp));

    let attack = records.iter().filter(|(_, l)| *l == Label::Attack).count() as f64;
    let fraction = attack / records.len() as f64;
    assert!((fraction - 0.8).abs() < 0.01, "attack fraction {fraction}");

    let attackers: HashSet<_> = records.iter().filter(|(_, l)| *l == Label::Attack).map(|(r, _)| r.src_ip).collect();
    let legit: HashSet<_> = records.iter().filter(|(_, l)| *l != Label::Attack).map(|(r, _)| r.src_ip).collect();
    assert_eq!(attackers.len(), 40);
    assert!(attackers.is_disjoint(&legit));
    assert!(legit.len() <= 50);
    assert!(records.iter().any(|(r, _)| matches!(r.protocol, Protocol::Other(_))));
}

#[test]
fn invalid_specs_are_rejected_up_front() {
    let mut spec = TraceSpec::new(AttackClass::Udp, 1, 10);
    spec.legitimate_max_packets = 10;
    assert!(matches!(generate_trace(&spec), Err(TraceError::NotSeparable { .. })));
    assert!(matches!(
        generate_trace(&TraceSpec::new(AttackClass::Udp, 0, 10)),
        Err(TraceError::NoAttackers)
    ));
    assert!(matches!(
        generate_trace(&TraceSpec::new(AttackClass::Udp, 1, 0)),
        Err(TraceError::NoAttackPackets)
    ));
    let mut spec = TraceSpec::new(AttackClass::Udp, 1, 10);
    spec.attack_fraction = 0.0;
    assert!(generate_trace(&spec).is_err());
}

#[test]
fn larger_file_targets_mean_more_attackers() {
    let mut last = 0;
    for mb in [10u64, 100, 1000] {
        let spec = TraceSpec::for_file_size(AttackClass::Udp, mb << 20, 1100, 1);
        assert!(spec.attacker_count > last);
        last = spec.attacker_count;
    }
}

#[test]
fn engine_matches_ground_truth_for_every_class() {
    let dir = tempfile::tempdir().unwrap();
    for class in AttackClass::ALL {
        let spec = TraceSpec::new(class, 25, 700).with_seed(11);
        let path = dir.path().join(format!("{class}.log"));
        write_trace(&spec, &path);
        for threshold in [1, 500, 699, 700] {
            let result = run_job(&[&path], &job(class, threshold, 64 << 10, 3, 2)).unwrap();
            assert_eq!(as_map(&result.attackers), brute_force_file(&path, class, threshold), "{class} t={threshold}");
            assert_eq!(as_map(&result.attackers), ground_truth(&spec, threshold).unwrap());
            assert!(result.attackers.iter().all(|a| a.attack_class == class));
        }
    }
}

#[test]
fn several_input_files_are_one_job() {
    let dir = tempfile::tempdir().unwrap();
    let spec = TraceSpec::new(AttackClass::Udp, 10, 400).with_seed(2);
    let lines = trace_lines(&spec);
    let mut paths = Vec::new();
    for (i, chunk) in lines.chunks(lines.len() / 3 + 1).enumerate() {
        let path = dir.path().join(format!("part-{i}.log"));
        fs::write(&path, chunk.join("\n") + "\n").unwrap();
        paths.push(path);
    }
    let result = run_job(&paths, &job(AttackClass::Udp, 300, 4096, 2, 1)).unwrap();
    assert_eq!(as_map(&result.attackers), ground_truth(&spec, 300).unwrap());
    assert_eq!(result.stats.records_seen, lines.len() as u64);
}

#[test]
fn malformed_lines_are_counted_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mixed.log");
    let mut f = fs::File::create(&path).unwrap();
    for i in 1..=20 {
        writeln!(f, "{i}\t0.{i:06}\t10.0.0.1 -> 10.0.0.9\tUDP\t60\tpayload").unwrap();
        writeln!(f, "{i}\t0.{i:06}\t10.0.0.1 -> 10.0.0.9O\tUDP\t60\tpayload").unwrap();
    }
    writeln!(f).unwrap();
    writeln!(f, "garbage").unwrap();
    drop(f);
    let result = run_job(&[&path], &job(AttackClass::Udp, 10, 128, 2, 1)).unwrap();
    assert_eq!(as_map(&result.attackers), BTreeMap::from([("10.0.0.1".parse().unwrap(), 20)]));
    assert_eq!(result.stats.records_seen, 42);
    assert_eq!(result.stats.malformed_count, 22);
    assert_eq!(result.stats.records_matched, 20);
}

#[test]
fn oversized_line_is_an_error_not_a_guess() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wide.log");
    fs::write(&path, format!("1\t0.0\t10.0.0.1 -> 10.0.0.2\tUDP\t60\t{}\n", "x".repeat(500))).unwrap();
    let err = run_job(&[&path], &job(AttackClass::Udp, 1, 100, 1, 1)).unwrap_err();
    assert!(matches!(err, EngineError::LineTooLong { line_no: 1, .. }), "{err}");
}

#[test]
fn missing_input_is_an_io_error() {
    let err = run_job(&["/nonexistent/input.log"], &job(AttackClass::Udp, 1, 100, 1, 1)).unwrap_err();
    assert!(matches!(err, EngineError::Io { .. }));
}

#[test]
fn custom_detector_through_registry() {
    struct AnyUdpFrom10;
    impl FloodDetector for AnyUdpFrom10 {
        fn class(&self) -> AttackClass {
            AttackClass::Udp
        }
        fn name(&self) -> &'static str {
            "udp-from-10"
        }
        fn matches(&self, r: &PacketRecord) -> bool {
            matches!(r.protocol, Protocol::Udp | Protocol::Quic) && r.src_ip.octets()[0] == 10
        }
    }
    let mut registry = DetectorRegistry::builtin();
    assert!(registry.register(Arc::new(AnyUdpFrom10)).is_none());
    assert!(registry.names().any(|n| n == "udp-from-10"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.log");
    let spec = TraceSpec::new(AttackClass::Udp, 5, 200).with_seed(4);
    write_trace(&spec, &path);
    let detector = registry.get("udp-from-10").unwrap();
    let result = run_job_with(&[&path], &job(AttackClass::Udp, 150, 1 << 20, 2, 1), detector).unwrap();
    assert_eq!(as_map(&result.attackers), ground_truth(&spec, 150).unwrap());
}

#[test]
fn results_file_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.log");
    let spec = TraceSpec::new(AttackClass::Icmp, 8, 300).with_seed(8);
    write_trace(&spec, &path);
    let result = run_job(&[&path], &job(AttackClass::Icmp, 200, 8192, 2, 3)).unwrap();
    let out = dir.path().join("r.results");
    result.write_results(&out).unwrap();
    let parsed = parse_results(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(parsed.attackers, result.attackers);
    assert_eq!(parsed.attack_class, AttackClass::Icmp);
    assert_eq!(parsed.threshold, 200);
    assert_eq!(parsed.records_seen, result.stats.records_seen);
    assert_eq!(parsed.records_matched, parsed.reduced_records);
}

#[test]
fn blocks_cover_the_file_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.log");
    let (lines, bytes) = write_trace(&TraceSpec::new(AttackClass::Udp, 10, 200).with_seed(1), &path);
    for bs in [200u64, 1000, 4096, 1 << 20] {
        let blocks = split_blocks(&path, bs).unwrap();
        assert_eq!(blocks.first().unwrap().byte_start, 0);
        assert_eq!(blocks.last().unwrap().byte_end, bytes);
        assert!(blocks.windows(2).all(|w| w[0].byte_end == w[1].byte_start));
        assert_eq!(blocks.iter().map(|b| b.record_count).sum::<u64>(), lines);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Any spec, any job layout: the engine agrees with a naive count.
    #[test]
    fn engine_equals_brute_force(
        class_ix in 0usize..4,
        attackers in 1u32..30,
        ppa in 2u32..400,
        seed in any::<u64>(),
        threshold in 1u64..450,
        block_size in 200u64..20_000,
        workers in 1usize..6,
        reducers in 1usize..5,
    ) {
        let class = AttackClass::ALL[class_ix];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.log");
        let spec = TraceSpec::new(class, attackers, ppa).with_seed(seed);
        write_trace(&spec, &path);
        let result = run_job(&[&path], &job(class, threshold, block_size, workers, reducers)).unwrap();
        prop_assert_eq!(as_map(&result.attackers), brute_force_file(&path, class, threshold));
        prop_assert_eq!(as_map(&result.attackers), ground_truth(&spec, threshold).unwrap());
        prop_assert_eq!(result.stats.records_matched, result.stats.reduced_records);
        prop_assert_eq!(result.stats.records_seen, spec.total_records());
    }

    /// The results file depends only on the input and the threshold.
    #[test]
    fn layout_does_not_change_the_results_file(
        seed in any::<u64>(),
        block_a in 200u64..50_000,
        block_b in 200u64..50_000,
        workers_a in 1usize..8,
        workers_b in 1usize..8,
        reducers_a in 1usize..6,
        reducers_b in 1usize..6,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.log");
        write_trace(&TraceSpec::new(AttackClass::Udp, 12, 150).with_seed(seed), &path);
        let a = run_job(&[&path], &job(AttackClass::Udp, 100, block_a, workers_a, reducers_a)).unwrap();
        let b = run_job(&[&path], &job(AttackClass::Udp, 100, block_b, workers_b, reducers_b)).unwrap();
        prop_assert_eq!(a.to_results_text(), b.to_results_text());
    }

    /// Raising the threshold only ever removes attackers.
    #[test]
    fn higher_threshold_reports_a_subset(seed in any::<u64>(), low in 1u64..300, extra in 0u64..300) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.log");
        let spec = TraceSpec::new(AttackClass::Syn, 6, 320).with_seed(seed);
        write_trace(&spec, &path);
        let lo = as_map(&run_job(&[&path], &job(AttackClass::Syn, low, 4096, 2, 2)).unwrap().attackers);
        let hi = as_map(&run_job(&[&path], &job(AttackClass::Syn, low + extra, 4096, 2, 2)).unwrap().attackers);
        for (ip, c) in &hi {
            prop_assert_eq!(lo.get(ip), Some(c));
        }
    }
}
