//! Serving-path integration: transparency across tiering states, stateless
//! failover between server instances, balance-strategy behavior, DST
//! reads, and wire-level error handling.

use std::sync::Arc;
use std::time::Duration;

use evstore::catalog::EventId;
use evstore::config::Config;
use evstore::harness::generate::{Generator, GeneratorProfile};
use evstore::harness::rig::{feed_generator, produce_dst_version, FeedOptions, Rig};
use evstore::server::{BalanceStrategy, PayloadKind, ServeError};

fn fast_config() -> Config {
    Config {
        journal_fsync: false,
        nominal_rate: 0,
        tape_bandwidth: 0,
        tape_mount_latency_ms: 0,
        prune_interval_ms: 50,
        max_chunk_size: 1 << 20,
        buffer_capacity: 8 << 20,
        service_latency_us: 0,
        server_bandwidth: 0,
        server_request_budget: 0.0,
        pin_window_ms: 0,
        ..Config::default()
    }
}

fn profile(events: u64) -> GeneratorProfile {
    GeneratorProfile {
        seed: 23,
        first_run: 1,
        runs: 1,
        events_per_run: events,
        payload_mean: 30 * 1024,
        payload_jitter_pct: 20,
        compressible_ppm: 500_000,
        max_chunk_size: 1 << 20,
    }
}

fn ingest(rig: &Arc<Rig>, generator: &Generator) {
    let report = feed_generator(
        rig,
        generator,
        &FeedOptions {
            streams: 2,
            ..Default::default()
        },
    );
    assert_eq!(report.send_errors, 0);
    assert!(rig.pipeline.wait_drained(Duration::from_secs(60)));
}

#[test]
fn serve_is_transparent_across_tiering_states() {
    let dir = tempfile::tempdir().unwrap();
    let rig = Arc::new(Rig::launch(dir.path(), fast_config(), 2).unwrap());
    let generator = Generator::new(profile(50));
    ingest(&rig, &generator);

    let id = EventId::new(1, 17);
    let mut client = rig.client(BalanceStrategy::ClientLibrary);
    let cached = client.read_event(id, &PayloadKind::Raw).unwrap().bytes;
    assert_eq!(cached, generator.payload(id));

    // Force every payload file to TapeOnly.
    let recalls_before = rig.hsm.stats().recalls_performed;
    for f in rig.hsm.files() {
        if f.state == evstore::hsm::FileState::OnTapeCached {
            rig.hsm.evict(f.file_id).unwrap();
        }
    }
    // Header lookups still succeed, bitwise equal, with zero recalls.
    let h_before = rig.catalog.get_header(id).unwrap();
    assert_eq!(rig.hsm.stats().recalls_performed, recalls_before);

    // Reads transparently recall and return identical bytes.
    let recalled = client.read_event(id, &PayloadKind::Raw).unwrap().bytes;
    assert_eq!(recalled, cached, "bitwise identical across states");
    assert!(rig.hsm.stats().recalls_performed > recalls_before);
    let h_after = rig.catalog.get_header(id).unwrap();
    assert_eq!(h_before, h_after);
}

#[test]
fn killing_a_server_only_costs_a_retry() {
    let dir = tempfile::tempdir().unwrap();
    let rig = Arc::new(Rig::launch(dir.path(), fast_config(), 2).unwrap());
    let generator = Generator::new(profile(30));
    ingest(&rig, &generator);

    let mut client = rig.client(BalanceStrategy::ClientLibrary);
    let first = client.read_event(EventId::new(1, 0), &PayloadKind::Raw).unwrap();
    assert_eq!(first.retries, 0);

    // Kill one of the two server instances between requests.
    rig.shutdown_server(0);

    let mut total_retries = 0;
    for e in 0..10 {
        let out = client.read_event(EventId::new(1, e), &PayloadKind::Raw).unwrap();
        assert_eq!(out.bytes, generator.payload(EventId::new(1, e)));
        total_retries += out.retries;
    }
    assert!(total_retries >= 1, "the dead endpoint cost at least one retry");
}

#[test]
fn round_robin_spreads_requests_evenly() {
    let dir = tempfile::tempdir().unwrap();
    let rig = Arc::new(Rig::launch(dir.path(), fast_config(), 3).unwrap());
    let generator = Generator::new(profile(10));
    ingest(&rig, &generator);

    let mut client = rig.client(BalanceStrategy::ClientLibrary);
    let mut counts = std::collections::HashMap::new();
    let header = rig.catalog.get_header(EventId::new(1, 0)).unwrap();
    for _ in 0..300 {
        let chosen = client.choose_server(header.raw.file_id).unwrap();
        *counts.entry(chosen.endpoint.label).or_insert(0u32) += 1;
        assert!(!chosen.fallback_warning);
    }
    assert_eq!(counts.len(), 3);
    for (label, count) in counts {
        assert!(
            (80..=120).contains(&count),
            "{label} got {count}, expected 100 +/- 20%"
        );
    }
}

#[test]
fn catalog_affinity_is_deterministic_with_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let rig = Arc::new(Rig::launch(dir.path(), fast_config(), 2).unwrap());
    let generator = Generator::new(profile(10));
    ingest(&rig, &generator);

    let header = rig.catalog.get_header(EventId::new(1, 0)).unwrap();
    let db = rig
        .catalog
        .file(header.raw.file_id)
        .unwrap()
        .db_id
        .and_then(|id| rig.catalog.db(id))
        .unwrap();

    let mut client = rig.client(BalanceStrategy::CatalogAffinity);
    for _ in 0..20 {
        let chosen = client.choose_server(header.raw.file_id).unwrap();
        assert_eq!(chosen.endpoint.label, db.server_affinity, "pinned endpoint");
        assert!(!chosen.fallback_warning);
    }

    // Kill the affinity server: choice falls back with a warning flag.
    let endpoints = rig.endpoints();
    let affinity_index = endpoints
        .iter()
        .position(|e| e.label == db.server_affinity)
        .unwrap();
    rig.shutdown_server(affinity_index);
    let mut client = rig.client(BalanceStrategy::CatalogAffinity);
    // The dead endpoint is not in the endpoint list anymore, so the
    // fallback path triggers.
    let chosen = client.choose_server(header.raw.file_id).unwrap();
    assert_ne!(chosen.endpoint.label, db.server_affinity);
    assert!(chosen.fallback_warning);
}

#[test]
fn dst_versions_read_independently() {
    let dir = tempfile::tempdir().unwrap();
    let rig = Arc::new(Rig::launch(dir.path(), fast_config(), 2).unwrap());
    let generator = Generator::new(profile(40));
    ingest(&rig, &generator);

    // Two DST versions, different sizes (reconstruction outputs).
    produce_dst_version(&rig, &generator, 1, "dst-v1", 200_000).unwrap();
    produce_dst_version(&rig, &generator, 1, "dst-v2", 120_000).unwrap();

    let mut client = rig.client(BalanceStrategy::ClientLibrary);
    let id = EventId::new(1, 5);
    let raw = client.read_event(id, &PayloadKind::Raw).unwrap().bytes;
    let v1 = client
        .read_event(id, &PayloadKind::Dst("dst-v1".into()))
        .unwrap()
        .bytes;
    let v2 = client
        .read_event(id, &PayloadKind::Dst("dst-v2".into()))
        .unwrap()
        .bytes;
    let full = generator.payload(id);
    assert_eq!(raw, full);
    assert_eq!(v1, full[..v1.len()].to_vec());
    assert_eq!(v2, full[..v2.len()].to_vec());
    assert!(v1.len() > v2.len());

    match client.read_event(id, &PayloadKind::Dst("dst-v9".into())) {
        Err(ServeError::VersionUnbound(v)) => assert_eq!(v, "dst-v9"),
        other => panic!("expected VersionUnbound, got {other:?}"),
    }
}

#[test]
fn scan_reads_whole_run_in_locator_order() {
    let dir = tempfile::tempdir().unwrap();
    let rig = Arc::new(Rig::launch(dir.path(), fast_config(), 2).unwrap());
    let generator = Generator::new(profile(80));
    ingest(&rig, &generator);

    let mut client = rig.client(BalanceStrategy::ClientLibrary);
    let res = client.scan(1, &PayloadKind::Raw, None).unwrap();
    assert_eq!(res.events_read, 80);
    assert!(res.failures.is_empty());
    let expected: u64 = generator.manifest().total_payload_bytes();
    assert_eq!(res.bytes_read, expected);

    // An empty share scans to zero records in ~zero time.
    let empty = client.scan(1, &PayloadKind::Raw, Some(5..5)).unwrap();
    assert_eq!(empty.events_read, 0);
    assert!(empty.failures.is_empty());

    // Scanning an unsealed run is refused.
    let err = client.scan(77, &PayloadKind::Raw, None).unwrap_err();
    assert!(matches!(err, ServeError::RunNotSealed(77)));
}

#[test]
fn strategies_return_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let rig = Arc::new(Rig::launch(dir.path(), fast_config(), 3).unwrap());
    let generator = Generator::new(profile(30));
    ingest(&rig, &generator);

    let mut lib = rig.client(BalanceStrategy::ClientLibrary);
    let mut aff = rig.client(BalanceStrategy::CatalogAffinity);
    for e in 0..30 {
        let id = EventId::new(1, e);
        let a = lib.read_event(id, &PayloadKind::Raw).unwrap().bytes;
        let b = aff.read_event(id, &PayloadKind::Raw).unwrap().bytes;
        assert_eq!(a, b, "strategy changes distribution, never bytes");
    }
}

#[test]
fn wire_errors_are_typed() {
    let dir = tempfile::tempdir().unwrap();
    let rig = Arc::new(Rig::launch(dir.path(), fast_config(), 1).unwrap());
    let generator = Generator::new(profile(5));
    ingest(&rig, &generator);

    let mut client = rig.client(BalanceStrategy::ClientLibrary);
    let header = rig.catalog.get_header(EventId::new(1, 0)).unwrap();

    // Unknown file.
    let mut bad = header.raw;
    bad.file_id = 9999;
    assert!(matches!(
        client.read_locator(&bad),
        Err(ServeError::NoSuchFile)
    ));

    // Range past the end of the file.
    let mut oob = header.raw;
    oob.offset = u64::MAX / 2;
    assert!(matches!(
        client.read_locator(&oob),
        Err(ServeError::RangeOutOfBounds)
    ));

    // Stat returns size and state.
    let (size, state, checksum) = client.stat(header.raw.file_id).unwrap();
    let managed = rig.hsm.file(header.raw.file_id).unwrap();
    assert_eq!(size, managed.size);
    assert_eq!(checksum, managed.checksum);
    assert!(state >= 1 && state <= 5);
}
