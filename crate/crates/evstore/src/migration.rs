//! Live migration between the two payload backends, one run at a time:
//! copy the run's payloads into a flat file, verify (100% for the first
//! runs of a campaign, seeded sampling afterwards), then atomically rebind
//! the run's raw locators. Old locators stay valid throughout — readers
//! active during a migration observe either all-old or all-new locators
//! for a run, never a mix — and a failed verification leaves them
//! untouched.
//!
//! A per-run manifest file makes an interrupted copy resumable and a
//! completed migration idempotent.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{read_range, FlatWriter};
use crate::catalog::{BackendKind, Catalog, CatalogError, FileKind, StorageLocator};
use crate::codec::crc32;
use crate::config::Config;
use crate::hsm::{Hsm, HsmError};
use crate::rng::mix64;

pub const FAULT_COPY: &str = "migration.copy";
pub const FAULT_VERIFY: &str = "migration.verify";
pub const FAULT_PRE_SWITCH: &str = "migration.pre_switch";

pub type MigrationFaultHook = Arc<dyn Fn(&str) -> bool + Send + Sync>;

#[derive(Debug, Error)]
pub enum MigrationError {
    #[error("run {0} is not sealed")]
    NotSealed(u32),
    #[error("run {0} has no events")]
    EmptyRun(u32),
    #[error("a migration job for run {0} is already in progress")]
    InProgress(u32),
    #[error("verification failed: {} mismatches on run {}", .0.mismatches.len(), .0.run)]
    VerificationFailed(Box<VerificationReport>),
    #[error("injected crash at '{0}'")]
    Crashed(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Hsm(#[from] HsmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MigrationPhase {
    Copy,
    VerifyFull,
    VerifySampled,
    Switch,
    Done,
}

/// A detected divergence, with both locators kept for forensics.
#[derive(Debug, Clone)]
pub struct Mismatch {
    pub event: u64,
    pub old_locator: StorageLocator,
    pub new_locator: StorageLocator,
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub run: u32,
    pub events_compared_full: u64,
    pub events_compared_sampled: u64,
    pub mismatches: Vec<Mismatch>,
    pub sampling_seed: u64,
    pub phase_reached: MigrationPhase,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// Plain-text record, one field per line, mismatches as CSV rows.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("run: {}\n", self.run));
        out.push_str(&format!("phase_reached: {:?}\n", self.phase_reached));
        out.push_str(&format!(
            "events_compared_full: {}\n",
            self.events_compared_full
        ));
        out.push_str(&format!(
            "events_compared_sampled: {}\n",
            self.events_compared_sampled
        ));
        out.push_str(&format!("sampling_seed: {}\n", self.sampling_seed));
        out.push_str(&format!("mismatches: {}\n", self.mismatches.len()));
        for m in &self.mismatches {
            out.push_str(&format!(
                "mismatch,{},{}:{}+{},{}:{}+{}\n",
                m.event,
                m.old_locator.file_id,
                m.old_locator.offset,
                m.old_locator.length,
                m.new_locator.file_id,
                m.new_locator.offset,
                m.new_locator.length,
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OverheadReport {
    pub payload_bytes: u64,
    pub file_bytes: u64,
    /// file_bytes / payload_bytes - 1.
    pub structural_overhead: f64,
    /// compressed(files) / compressed(payload streams) - 1.
    pub post_compression_overhead: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    run: u32,
    total_events: u64,
    copied_events: u64,
    flat_len: u64,
    done: bool,
}

#[derive(Debug, Clone)]
pub struct MigrationOptions {
    pub sample_fraction: f64,
    pub full_verify_runs: u32,
    pub full_verify_volume_fraction: f64,
    pub compression_level: i32,
}

impl From<&Config> for MigrationOptions {
    fn from(cfg: &Config) -> Self {
        Self {
            sample_fraction: cfg.verify_sample_fraction,
            full_verify_runs: cfg.full_verify_runs,
            full_verify_volume_fraction: cfg.full_verify_volume_fraction,
            compression_level: cfg.compression_level,
        }
    }
}

pub struct Migrator {
    catalog: Arc<Catalog>,
    hsm: Arc<Hsm>,
    flat_dir: PathBuf,
    opts: MigrationOptions,
    in_progress: Mutex<HashSet<u32>>,
    fault: Mutex<Option<MigrationFaultHook>>,
    /// One-shot post-copy corruption: (run, event index) whose copied
    /// payload gets a byte flipped before verification.
    corrupt_after_copy: Mutex<Option<(u32, u64)>>,
}

impl Migrator {
    pub fn new(
        catalog: Arc<Catalog>,
        hsm: Arc<Hsm>,
        flat_dir: &Path,
        opts: MigrationOptions,
    ) -> std::io::Result<Self> {
        std::fs::create_dir_all(flat_dir)?;
        Ok(Self {
            catalog,
            hsm,
            flat_dir: flat_dir.to_path_buf(),
            opts,
            in_progress: Mutex::new(HashSet::new()),
            fault: Mutex::new(None),
            corrupt_after_copy: Mutex::new(None),
        })
    }

    pub fn set_fault_hook(&self, hook: Option<MigrationFaultHook>) {
        *self.fault.lock().unwrap() = hook;
    }

    pub fn corrupt_after_copy(&self, run: u32, event: u64) {
        *self.corrupt_after_copy.lock().unwrap() = Some((run, event));
    }

    fn fault_point(&self, point: &str) -> Result<(), MigrationError> {
        let hook = self.fault.lock().unwrap().clone();
        if let Some(h) = hook {
            if h(point) {
                return Err(MigrationError::Crashed(point.to_string()));
            }
        }
        Ok(())
    }

    fn flat_path(&self, run: u32) -> PathBuf {
        self.flat_dir.join(format!("run{run:06}.dat"))
    }

    fn manifest_path(&self, run: u32) -> PathBuf {
        self.flat_dir.join(format!("run{run:06}.mig.json"))
    }

    fn load_manifest(&self, run: u32) -> Option<RunManifest> {
        let text = std::fs::read_to_string(self.manifest_path(run)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn store_manifest(&self, m: &RunManifest) -> std::io::Result<()> {
        let path = self.manifest_path(m.run);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(m).unwrap())?;
        std::fs::rename(&tmp, path)
    }

    /// Completed migrations so far: (runs, payload bytes migrated). Drives
    /// the full-verify-first policy across process restarts.
    fn campaign_progress(&self) -> (u32, u64) {
        let mut runs = 0u32;
        let mut bytes = 0u64;
        if let Ok(dir) = std::fs::read_dir(&self.flat_dir) {
            for entry in dir.flatten() {
                let name = entry.file_name();
                let name = name.to_string_lossy();
                if !name.ends_with(".mig.json") {
                    continue;
                }
                if let Ok(text) = std::fs::read_to_string(entry.path()) {
                    if let Ok(m) = serde_json::from_str::<RunManifest>(&text) {
                        if m.done {
                            runs += 1;
                            bytes += m.flat_len;
                        }
                    }
                }
            }
        }
        (runs, bytes)
    }

    /// Whether the next run gets 100% verification: the first N runs of
    /// the campaign, or until the configured fraction of total volume has
    /// been full-verified, whichever window is larger.
    fn wants_full_verify(&self) -> bool {
        let (runs_done, bytes_done) = self.campaign_progress();
        if runs_done < self.opts.full_verify_runs {
            return true;
        }
        let total = self.catalog.stats().payload_bytes;
        total > 0 && (bytes_done as f64) < self.opts.full_verify_volume_fraction * total as f64
    }

    fn old_payload(&self, loc: &StorageLocator) -> Result<Vec<u8>, MigrationError> {
        let path = self.hsm.ensure_online(loc.file_id)?;
        Ok(read_range(&path, loc.offset, loc.length)?)
    }

    /// Migrates one sealed run. Resumable after a crash (the copy picks up
    /// from the manifest) and a no-op if the run is already switched.
    pub fn migrate_run(
        &self,
        run: u32,
        sample_fraction: f64,
        seed: u64,
    ) -> Result<VerificationReport, MigrationError> {
        {
            let mut busy = self.in_progress.lock().unwrap();
            if !busy.insert(run) {
                return Err(MigrationError::InProgress(run));
            }
        }
        let result = self.migrate_run_inner(run, sample_fraction, seed);
        self.in_progress.lock().unwrap().remove(&run);
        result
    }

    fn migrate_run_inner(
        &self,
        run: u32,
        sample_fraction: f64,
        seed: u64,
    ) -> Result<VerificationReport, MigrationError> {
        if self.catalog.run_switched(run) {
            return Ok(VerificationReport {
                run,
                events_compared_full: 0,
                events_compared_sampled: 0,
                mismatches: vec![],
                sampling_seed: seed,
                phase_reached: MigrationPhase::Done,
            });
        }
        if !self.catalog.run_sealed(run) {
            return Err(MigrationError::NotSealed(run));
        }
        let headers = self.catalog.run_headers(run);
        if headers.is_empty() {
            return Err(MigrationError::EmptyRun(run));
        }
        let total_events = headers.len() as u64;
        let full_verify = self.wants_full_verify();

        // ---- Copy ----
        let flat_path = self.flat_path(run);
        let mut manifest = match self.load_manifest(run) {
            Some(m) if m.total_events == total_events && flat_path.exists() => m,
            _ => RunManifest {
                run,
                total_events,
                copied_events: 0,
                flat_len: 0,
                done: false,
            },
        };
        if manifest.copied_events < total_events {
            let mut writer = if manifest.copied_events == 0 {
                FlatWriter::create(&flat_path)?
            } else {
                FlatWriter::resume(&flat_path, manifest.flat_len, manifest.copied_events)?
            };
            for h in headers.iter().skip(manifest.copied_events as usize) {
                self.fault_point(FAULT_COPY)?;
                let payload = self.old_payload(&h.raw)?;
                writer.append(&payload)?;
                manifest.copied_events += 1;
                manifest.flat_len = writer.file_size();
                if manifest.copied_events % 256 == 0 {
                    writer.flush()?;
                    self.store_manifest(&manifest)?;
                }
            }
            writer.finish()?;
            self.store_manifest(&manifest)?;
        }

        // One-shot injected corruption lands after the copy, before any
        // verification gets a look.
        {
            let mut hook = self.corrupt_after_copy.lock().unwrap();
            if let Some((r, event)) = *hook {
                if r == run {
                    *hook = None;
                    let offset: u64 = headers
                        .iter()
                        .take(event as usize)
                        .map(|h| h.raw.length as u64)
                        .sum();
                    flip_byte(&flat_path, offset)?;
                }
            }
        }

        // New locators the switch would install (file_id filled later).
        let mut new_locators = Vec::with_capacity(headers.len());
        let mut offset = 0u64;
        for h in &headers {
            new_locators.push(StorageLocator {
                backend: BackendKind::FlatB,
                file_id: 0,
                offset,
                length: h.raw.length,
                checksum: h.raw.checksum,
            });
            offset += h.raw.length as u64;
        }

        // ---- Verify ----
        self.fault_point(FAULT_VERIFY)?;
        let mut report = VerificationReport {
            run,
            events_compared_full: 0,
            events_compared_sampled: 0,
            mismatches: vec![],
            sampling_seed: seed,
            phase_reached: if full_verify {
                MigrationPhase::VerifyFull
            } else {
                MigrationPhase::VerifySampled
            },
        };
        let threshold = (sample_fraction.clamp(0.0, 1.0) * 1_000_000.0) as u64;
        for (h, new_loc) in headers.iter().zip(new_locators.iter()) {
            let selected = if full_verify {
                true
            } else {
                mix64(&[seed, run as u64, h.id.event]) % 1_000_000 < threshold
            };
            if !selected {
                continue;
            }
            let old_bytes = self.old_payload(&h.raw)?;
            let new_bytes = read_range(&flat_path, new_loc.offset, new_loc.length)?;
            if full_verify {
                report.events_compared_full += 1;
            } else {
                report.events_compared_sampled += 1;
            }
            if old_bytes != new_bytes {
                report.mismatches.push(Mismatch {
                    event: h.id.event,
                    old_locator: h.raw,
                    new_locator: *new_loc,
                });
            }
        }
        if !report.passed() {
            // Force a fresh copy on the next attempt; the old locators
            // stay live so nothing is lost by discarding this copy.
            manifest.copied_events = 0;
            manifest.flat_len = 0;
            self.store_manifest(&manifest)?;
            return Err(MigrationError::VerificationFailed(Box::new(report)));
        }

        // ---- Switch ----
        self.fault_point(FAULT_PRE_SWITCH)?;
        let flat_bytes = std::fs::read(&flat_path)?;
        let flat_crc = crc32(&flat_bytes);
        let flat_size = flat_bytes.len() as u64;
        drop(flat_bytes);
        let flat_file_id = self.hsm.register_file(
            &format!("flat/run{run:06}.dat"),
            &flat_path,
            flat_size,
            flat_crc,
            FileKind::Flat,
            None,
        )?;
        self.catalog.apply_run_switch(run, flat_file_id)?;
        report.phase_reached = MigrationPhase::Done;

        manifest.done = true;
        self.store_manifest(&manifest)?;
        Ok(report)
    }

    /// Migrates every sealed, not-yet-switched run in order.
    pub fn migrate_all(&self, seed: u64) -> Result<Vec<VerificationReport>, MigrationError> {
        let mut runs = self.catalog.runs();
        runs.sort_unstable();
        let mut reports = Vec::new();
        for run in runs {
            if !self.catalog.run_sealed(run) || self.catalog.run_switched(run) {
                continue;
            }
            reports.push(self.migrate_run(run, self.opts.sample_fraction, seed)?);
        }
        Ok(reports)
    }

    /// Standalone re-check of a migrated run: a seeded event subset is
    /// compared byte-for-byte between the archived (pre-switch) locators
    /// and the live ones. Mismatches are data in the report, not errors.
    pub fn verify_sample(
        &self,
        run: u32,
        fraction: f64,
        seed: u64,
    ) -> Result<VerificationReport, MigrationError> {
        let archived = self
            .catalog
            .archived_raw(run)
            .ok_or(MigrationError::NotSealed(run))?;
        let headers = self.catalog.run_headers(run);
        let mut report = VerificationReport {
            run,
            events_compared_full: 0,
            events_compared_sampled: 0,
            mismatches: vec![],
            sampling_seed: seed,
            phase_reached: MigrationPhase::VerifySampled,
        };
        let threshold = (fraction.clamp(0.0, 1.0) * 1_000_000.0) as u64;
        for (h, old_loc) in headers.iter().zip(archived.iter()) {
            let selected = fraction >= 1.0
                || mix64(&[seed, run as u64, h.id.event]) % 1_000_000 < threshold;
            if !selected {
                continue;
            }
            let old_bytes = self.old_payload(old_loc)?;
            let new_path = self.hsm.ensure_online(h.raw.file_id)?;
            let new_bytes = read_range(&new_path, h.raw.offset, h.raw.length)?;
            report.events_compared_sampled += 1;
            if old_bytes != new_bytes {
                report.mismatches.push(Mismatch {
                    event: h.id.event,
                    old_locator: *old_loc,
                    new_locator: h.raw,
                });
            }
        }
        Ok(report)
    }

    /// Structural and post-compression overhead of one backend's files.
    pub fn overhead_report(&self, backend: BackendKind) -> Result<OverheadReport, MigrationError> {
        let kind = match backend {
            BackendKind::ContainerA => FileKind::Container,
            BackendKind::FlatB => FileKind::Flat,
        };
        let mut payload_bytes = 0u64;
        let mut file_bytes = 0u64;
        let mut compressed_files = 0u64;
        let mut compressed_payloads = 0u64;
        for entry in self.catalog.list_files() {
            if entry.kind != kind {
                continue;
            }
            let spans = self.catalog.payload_spans(entry.file_id);
            if spans.is_empty() {
                continue;
            }
            let path = self.hsm.ensure_online(entry.file_id)?;
            let bytes = std::fs::read(&path)?;
            let mut payload_stream =
                Vec::with_capacity(spans.iter().map(|&(_, l)| l as usize).sum());
            for &(off, len) in &spans {
                payload_stream.extend_from_slice(&bytes[off as usize..off as usize + len as usize]);
            }
            payload_bytes += payload_stream.len() as u64;
            file_bytes += bytes.len() as u64;
            compressed_files +=
                zstd::bulk::compress(&bytes, self.opts.compression_level)?.len() as u64;
            compressed_payloads +=
                zstd::bulk::compress(&payload_stream, self.opts.compression_level)?.len() as u64;
        }
        Ok(OverheadReport {
            payload_bytes,
            file_bytes,
            structural_overhead: if payload_bytes > 0 {
                file_bytes as f64 / payload_bytes as f64 - 1.0
            } else {
                0.0
            },
            post_compression_overhead: if compressed_payloads > 0 {
                compressed_files as f64 / compressed_payloads as f64 - 1.0
            } else {
                0.0
            },
        })
    }
}

fn flip_byte(path: &Path, offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    let f = std::fs::OpenOptions::new().read(true).write(true).open(path)?;
    let mut b = [0u8; 1];
    f.read_exact_at(&mut b, offset)?;
    b[0] ^= 0x5A;
    f.write_all_at(&b, offset)
}
