mod common;

use std::fs;

use common::{addr, synth};
use lineage_core::dataset::{self, DatasetBundle, InputDigest, Manifest};
use lineage_core::ingest::{ContractRecord, Corpus, FilePath, LoadReport, TraceEvent};
use lineage_core::stats::compute_stats;
use lineage_core::{Address, Error, Selector};

const DAY: u64 = 86_400;

fn calls(proxy: Address, callee: Address, first: u64, last: u64) -> Vec<TraceEvent> {
    [first, last]
        .into_iter()
        .enumerate()
        .map(|(i, t)| TraceEvent {
            proxy_address: proxy,
            callee_address: callee,
            timestamp: t,
            block_number: t,
            selector: Selector::from_bytes(synth::UPGRADE_TO),
            tx_id: format!("{callee}-{i}"),
        })
        .collect()
}

/// Lineages A -> B (gap 1 day) and C -> D -> E (gaps 3 and 2 days); E is closed.
fn stats_fixture() -> LoadReport {
    let (a, b, c, d, e) = (addr(0xa), addr(0xb), addr(0xc), addr(0xd), addr(0xe));
    let (p1, p2) = (addr(0xf1), addr(0xf2));
    let mut events = Vec::new();
    events.extend(calls(p1, a, 0, DAY));
    events.extend(calls(p1, b, 2 * DAY, 3 * DAY));
    events.extend(calls(p2, c, 0, DAY));
    events.extend(calls(p2, d, 4 * DAY, 5 * DAY));
    events.extend(calls(p2, e, 7 * DAY, 8 * DAY));
    let file = |addr, creator, name: &str, text: &str| {
        synth::open_record(addr, creator, vec![("contracts", name, text.to_string())])
    };
    let contracts = vec![
        file(a, addr(0x01), "Token.sol", "a\nb\nc\nd\n"),
        file(b, addr(0x01), "Token.sol", "a\nb\nc\nX\n"),
        file(c, addr(0x02), "Vault.sol", "v\nw\n"),
        file(d, addr(0x02), "Vault.sol", "v\nw\n"),
        ContractRecord::closed(e, addr(0x02), 0),
    ];
    Corpus::from_parts(events, contracts).unwrap()
}

fn bundle_of(report: &LoadReport) -> DatasetBundle {
    let output = dataset::run_pipeline(&report.corpus);
    let manifest = Manifest::new(dataset::default_generated_at(&report.corpus).unwrap(), vec![]);
    DatasetBundle::assemble(report, &output, manifest).unwrap()
}

fn close(a: Option<f64>, b: f64) {
    assert!(a.is_some_and(|a| (a - b).abs() < 1e-9), "{a:?} != {b}");
}

#[test]
fn stats_over_hand_built_bundle() {
    let stats = compute_stats(&bundle_of(&stats_fixture()));
    assert_eq!(stats.lineages, 2);
    assert_eq!(stats.distinct_creators, 2);
    assert_eq!(stats.contract_pairs, 3);
    assert_eq!(stats.total_contracts, 5);
    assert_eq!(stats.open_source_contracts, 4);
    close(stats.open_source_pct, 80.0);
    assert_eq!(stats.solidity_files, 4);
    assert_eq!(stats.file_pairs, 2);
    close(stats.updated_files_pct, 50.0);
    close(stats.average_gap_days, 2.0);
    close(stats.files_in_pairs_pct, 100.0);
    close(stats.average_line_similarity, 0.875);
    close(stats.high_similarity_pct, 50.0);
    assert_eq!(stats.function_pairs, 0);
    assert_eq!(stats.lineage_size_histogram, [(2, 1), (3, 1)].into_iter().collect());

    let mut csv = Vec::new();
    stats.write_csv(&mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.lines().any(|l| l == "lineages_of_size_3,1"), "{csv}");
}

#[test]
fn emit_then_load_round_trips() {
    let corpus = synth::source_corpus(11, &Default::default());
    let report = Corpus::from_parts(corpus.events, corpus.contracts).unwrap();
    let bundle = bundle_of(&report);
    assert!(!bundle.function_pairs.is_empty());
    let dir = tempfile::tempdir().unwrap();
    dataset::emit_dataset(&bundle, dir.path()).unwrap();
    let reloaded = dataset::load_bundle(dir.path()).unwrap();
    assert_eq!(reloaded, bundle);
    assert_eq!(compute_stats(&reloaded), compute_stats(&bundle));

    let again = tempfile::tempdir().unwrap();
    dataset::emit_dataset(&reloaded, again.path()).unwrap();
    for name in [dataset::MANIFEST_FILE, dataset::LINEAGES_FILE, dataset::FILE_PAIRS_FILE, dataset::FUNCTION_PAIRS_FILE] {
        assert_eq!(fs::read(dir.path().join(name)).unwrap(), fs::read(again.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn tampered_source_is_rejected() {
    let bundle = bundle_of(&stats_fixture());
    let dir = tempfile::tempdir().unwrap();
    dataset::emit_dataset(&bundle, dir.path()).unwrap();
    let target = dataset::source_path(dir.path(), addr(0xa), &FilePath::new("contracts", "Token.sol")).unwrap();
    fs::write(&target, "tampered\n").unwrap();
    assert!(matches!(dataset::load_bundle(dir.path()), Err(Error::Integrity(_))));
    fs::remove_file(&target).unwrap();
    assert!(dataset::load_bundle(dir.path()).unwrap_err().is_io());
}

#[test]
fn inconsistent_bundle_is_not_emitted() {
    let mut bundle = bundle_of(&stats_fixture());
    bundle.contract_pairs[0].successor = addr(0x77);
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(dataset::emit_dataset(&bundle, dir.path()), Err(Error::Integrity(_))));
}

#[test]
fn unsafe_source_paths_are_refused() {
    let root = std::path::Path::new("/tmp/bundle");
    for (d, f) in [("..", "x.sol"), ("a/../../b", "x.sol"), ("", "../x.sol"), ("/etc", "passwd"), ("", "")] {
        assert!(dataset::source_path(root, addr(1), &FilePath::new(d, f)).is_err(), "{d}/{f}");
    }
    assert!(dataset::source_path(root, addr(1), &FilePath::new("contracts/lib", "A.sol")).is_ok());
}

#[test]
fn manifest_digests_detect_changed_inputs() {
    let manifest = Manifest::new(5, vec![InputDigest::of_bytes("traces", b"one\n"), InputDigest::of_bytes("contracts", b"")]);
    assert_eq!(manifest.inputs[0].name, "contracts");
    manifest.verify_input("traces", b"one\n").unwrap();
    assert!(manifest.verify_input("traces", b"two\n").is_err());
    assert!(manifest.verify_input("findings", b"").is_err());
    assert_eq!(
        manifest.inputs[1].sha256,
        "2c8b08da5ce60398e1f19af0e5dccc744df274b826abe585eaba68c525434806"
    );
}
