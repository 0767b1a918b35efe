//! Runtime configuration. One flat key set covers every subsystem; values
//! load from a JSON file and individual keys can be overridden through
//! `EVSTORE_*` environment variables (`EVSTORE_TAPE_BANDWIDTH=2097152`).
//!
//! Defaults are desk-scale analogues of the production figures: 64 MiB
//! chunks instead of 1 GB, 8 MiB/s nominal recording rate instead of
//! 35 MB/s, 20 MiB/s tape bandwidth, 200 ms tape mount latency, 30 KiB
//! events, and a 60 s cache pin window standing in for 24 hours.

use std::path::Path;

use serde::{Deserialize, Serialize};

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * 1024;
pub const GIB: u64 = 1024 * 1024 * 1024;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    // -- catalog --
    /// fsync the catalog journal on every commit.
    pub journal_fsync: bool,
    /// Default lease ttl in milliseconds.
    pub lease_ttl_ms: u64,
    /// How long a queued database creation waits before CreationTimeout.
    pub create_queue_timeout_ms: u64,

    // -- hsm --
    /// Disk cache pool capacity in bytes.
    pub cache_capacity: u64,
    /// Minimum time a freshly cached file stays evictable-proof (the 24 h
    /// production pin window, scaled).
    pub pin_window_ms: u64,
    /// Simulated tape mount latency per volume switch, milliseconds.
    pub tape_mount_latency_ms: u64,
    /// Simulated sequential tape bandwidth, bytes/s (applies to stored bytes).
    pub tape_bandwidth: u64,
    /// Bytes of stored data per simulated tape volume.
    pub tape_volume_capacity: u64,
    /// Track the compressed size of the bare payload stream per migrated
    /// file so hsm stats can report the on-tape overhead. Costs one extra
    /// compression pass per migration.
    pub tape_payload_overhead_tracking: bool,
    /// Retries for a failed tape read before RecallFailed.
    pub recall_retries: u32,

    // -- cdr --
    /// Maximum chunk file size in bytes (production analogue: 1 GB).
    pub max_chunk_size: u64,
    /// Buffer capacity per side (online/offline), bytes.
    pub buffer_capacity: u64,
    /// Backpressure engages above this fraction of buffer capacity...
    pub buffer_high_watermark: f64,
    /// ...and releases below this one.
    pub buffer_low_watermark: f64,
    /// Nominal pipeline-to-tape rate, bytes/s (production analogue 35 MB/s).
    pub nominal_rate: u64,
    /// Allowed catch-up multiple over the nominal rate while backlog exists.
    pub catchup_factor: f64,
    /// Out-of-order chunk arrivals tolerated per run before SequenceGap.
    pub reorder_window: u32,
    /// Prune pass cadence, milliseconds.
    pub prune_interval_ms: u64,
    /// Number of ingest workers (runs are sharded across them).
    pub ingest_workers: u32,
    /// Chunks per container database (production: a few databases per
    /// minute; desk default one database per chunk).
    pub chunks_per_database: u32,
    /// Transfer retry attempts per chunk on a corrupt frame.
    pub transfer_retries: u32,

    // -- backends --
    /// ContainerA page size in bytes.
    pub container_page_size: u32,
    /// ContainerA page fill target, parts per million of the page usable
    /// for object bytes. Calibrated so the default 30 KiB payload profile
    /// yields ~30% structural overhead.
    pub container_fill_ppm: u32,
    /// Fraction (ppm) of structural filler drawn from a seeded random
    /// stream; the rest is zeros. Calibrated so compressed container files
    /// land at ~6% overhead over compressed bare payloads.
    pub container_structure_entropy_ppm: u32,
    /// zstd level used for tape compression and overhead reports.
    pub compression_level: i32,

    // -- dataserver --
    /// Maximum single read size, bytes.
    pub max_single_read: u32,
    /// Per-server service bandwidth budget, bytes/s (disk+NIC analogue).
    pub server_bandwidth: u64,
    /// Simulated per-request service latency (seek + dispatch), microseconds.
    pub service_latency_us: u64,
    /// Per-server request-processing budget, requests/s (0 = unlimited);
    /// models the server process capacity that capped the container-backed
    /// store before the migration.
    pub server_request_budget: f64,
    /// Request tokens one container-backed read costs (descriptor chase
    /// plus page-map lookups); flat reads cost 1.
    pub container_request_cost: f64,
    /// Extra service latency multiplier for container-backed reads
    /// (descriptor chase), applied to service_latency_us.
    pub container_latency_factor: f64,
    /// Client-side retry attempts across endpoints.
    pub client_retries: u32,

    // -- migration --
    /// Sampled verification fraction for runs past the full-verify window.
    pub verify_sample_fraction: f64,
    /// Runs verified at 100% from the start of a migration campaign.
    pub full_verify_runs: u32,
    /// Or this fraction of total migrated volume, whichever is larger.
    pub full_verify_volume_fraction: f64,

    // -- harness / generator --
    pub generator_seed: u64,
    pub events_per_run: u64,
    pub runs: u32,
    /// Mean payload size in bytes (production analogue 30 kB).
    pub payload_mean: u32,
    /// Payload sizes drawn uniformly within ±this percentage of the mean.
    pub payload_jitter_pct: u32,
    /// Fraction (ppm) of payload bytes that are repetitive (compressible).
    pub payload_compressible_ppm: u32,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            journal_fsync: true,
            lease_ttl_ms: 10_000,
            create_queue_timeout_ms: 30_000,

            cache_capacity: 8 * GIB,
            pin_window_ms: 60_000,
            tape_mount_latency_ms: 200,
            tape_bandwidth: 20 * MIB,
            tape_volume_capacity: 512 * MIB,
            tape_payload_overhead_tracking: true,
            recall_retries: 2,

            max_chunk_size: 64 * MIB,
            buffer_capacity: 8 * 64 * MIB,
            buffer_high_watermark: 0.75,
            buffer_low_watermark: 0.50,
            nominal_rate: 8 * MIB,
            catchup_factor: 2.0,
            reorder_window: 16,
            prune_interval_ms: 2_000,
            ingest_workers: 2,
            chunks_per_database: 1,
            transfer_retries: 3,

            container_page_size: 8192,
            container_fill_ppm: 856_000,
            container_structure_entropy_ppm: 88_000,
            compression_level: 1,

            max_single_read: 8 * MIB as u32,
            server_bandwidth: 24 * MIB,
            service_latency_us: 1_000,
            server_request_budget: 1_200.0,
            container_request_cost: 2.5,
            container_latency_factor: 2.0,
            client_retries: 3,

            verify_sample_fraction: 0.05,
            full_verify_runs: 2,
            full_verify_volume_fraction: 0.10,

            generator_seed: 1,
            events_per_run: 2048,
            runs: 4,
            payload_mean: 30 * KIB as u32,
            payload_jitter_pct: 20,
            payload_compressible_ppm: 500_000,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Config = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        cfg.apply_env();
        Ok(cfg)
    }

    /// Applies `EVSTORE_<UPPERCASE_KEY>` environment overrides on top of the
    /// current values.
    pub fn apply_env(&mut self) {
        let mut as_value = serde_json::to_value(&*self).expect("config serializes");
        let map = as_value.as_object_mut().expect("config is an object");
        for (key, slot) in map.iter_mut() {
            let env_key = format!("EVSTORE_{}", key.to_uppercase());
            if let Ok(raw) = std::env::var(&env_key) {
                *slot = parse_env_value(&raw, slot);
            }
        }
        *self = serde_json::from_value(as_value).expect("config round-trips");
    }

    /// Effective catch-up rate in bytes/s.
    pub fn catchup_rate(&self) -> u64 {
        (self.nominal_rate as f64 * self.catchup_factor) as u64
    }
}

/// On-disk layout of one deployment: everything lives under a single root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: std::path::PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<std::path::PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn catalog_dir(&self) -> std::path::PathBuf {
        self.root.join("catalog")
    }

    pub fn online_dir(&self) -> std::path::PathBuf {
        self.root.join("buffers").join("online")
    }

    pub fn offline_dir(&self) -> std::path::PathBuf {
        self.root.join("buffers").join("offline")
    }

    pub fn container_dir(&self) -> std::path::PathBuf {
        self.root.join("containerA")
    }

    pub fn flat_dir(&self) -> std::path::PathBuf {
        self.root.join("flatB")
    }

    pub fn cache_dir(&self) -> std::path::PathBuf {
        self.root.join("cache")
    }

    pub fn tape_dir(&self) -> std::path::PathBuf {
        self.root.join("tape")
    }

    pub fn out_dir(&self) -> std::path::PathBuf {
        self.root.join("out")
    }

    pub fn ensure(&self) -> std::io::Result<()> {
        for d in [
            self.catalog_dir(),
            self.online_dir(),
            self.offline_dir(),
            self.container_dir(),
            self.flat_dir(),
            self.cache_dir(),
            self.tape_dir(),
            self.out_dir(),
        ] {
            std::fs::create_dir_all(d)?;
        }
        Ok(())
    }
}

fn parse_env_value(raw: &str, current: &serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match current {
        Value::Bool(_) => Value::Bool(raw == "1" || raw.eq_ignore_ascii_case("true")),
        Value::Number(n) if n.is_f64() => raw
            .parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map(Value::Number)
            .unwrap_or_else(|| current.clone()),
        Value::Number(_) => raw
            .parse::<i64>()
            .map(|v| Value::Number(v.into()))
            .unwrap_or_else(|_| current.clone()),
        _ => Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        let cfg = Config::default();
        assert!(cfg.buffer_capacity >= 2 * cfg.max_chunk_size);
        assert!(cfg.buffer_low_watermark < cfg.buffer_high_watermark);
        assert!(cfg.catchup_factor >= 1.0);
        // Catch-up must fit under the raw tape bandwidth or backlog can
        // never drain faster than nominal.
        assert!(cfg.catchup_rate() <= cfg.tape_bandwidth);
    }

    #[test]
    fn env_override_round_trip() {
        let mut cfg = Config::default();
        std::env::set_var("EVSTORE_LEASE_TTL_MS", "1234");
        std::env::set_var("EVSTORE_JOURNAL_FSYNC", "false");
        std::env::set_var("EVSTORE_CATCHUP_FACTOR", "3.5");
        cfg.apply_env();
        std::env::remove_var("EVSTORE_LEASE_TTL_MS");
        std::env::remove_var("EVSTORE_JOURNAL_FSYNC");
        std::env::remove_var("EVSTORE_CATCHUP_FACTOR");
        assert_eq!(cfg.lease_ttl_ms, 1234);
        assert!(!cfg.journal_fsync);
        assert!((cfg.catchup_factor - 3.5).abs() < 1e-9);
    }
}
