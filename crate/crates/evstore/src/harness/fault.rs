//! Deterministic fault plans: scripted stalls, slowdowns, corruptions, and
//! crashes, replayable by seed. The driver applies timed events against a
//! running rig; feed-time and migration-time events are picked up by the
//! respective operations.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cdr::transfer::WireCorruption;

use super::rig::Rig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum FaultEvent {
    /// The lock service hangs: acquisitions block (no errors) until the
    /// stall lifts.
    StallLockService { at_ms: u64, duration_ms: u64 },
    /// The tape path is unavailable: the migration pump freezes and the
    /// backlog grows; drain afterwards runs at the catch-up rate.
    StallTape { at_ms: u64, duration_ms: u64 },
    /// The tape drive degrades to `factor` of its bandwidth.
    SlowTape {
        at_ms: u64,
        duration_ms: u64,
        factor: f64,
    },
    /// Flip one byte of a chunk's in-flight copy on the wire.
    CorruptStream {
        run: u32,
        sequence: u32,
        byte_offset: u64,
    },
    /// Kill the migration job for `run` when it reaches `phase`
    /// ("copy" | "verify" | "pre_switch"); the job is resumable.
    CrashMigrator { run: u32, phase: String },
    /// Flip one byte of a copied payload between copy and verification.
    CorruptMigratedPayload { run: u32, event: u64 },
    /// Kill this many scan clients at a scripted moment.
    KillScanClients { at_ms: u64, count: u32 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FaultPlan {
    pub seed: u64,
    pub events: Vec<FaultEvent>,
}

impl FaultPlan {
    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).unwrap())
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn stream_corruptions(&self) -> Vec<WireCorruption> {
        self.events
            .iter()
            .filter_map(|e| match e {
                FaultEvent::CorruptStream {
                    run,
                    sequence,
                    byte_offset,
                } => Some(WireCorruption {
                    run: *run,
                    sequence: *sequence,
                    byte_offset: *byte_offset,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn migrator_crashes(&self) -> Vec<(u32, String)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                FaultEvent::CrashMigrator { run, phase } => Some((*run, phase.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn migrated_corruptions(&self) -> Vec<(u32, u64)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                FaultEvent::CorruptMigratedPayload { run, event } => Some((*run, *event)),
                _ => None,
            })
            .collect()
    }

    pub fn kill_events(&self) -> Vec<(u64, u32)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                FaultEvent::KillScanClients { at_ms, count } => Some((*at_ms, *count)),
                _ => None,
            })
            .collect()
    }
}

/// Applies the plan's timed events (stalls, slowdowns) against a rig. The
/// thread finishes once every timed event has fired.
pub fn drive_timed_faults(rig: &Arc<Rig>, plan: &FaultPlan) -> std::thread::JoinHandle<()> {
    let mut timed: Vec<(u64, FaultEvent)> = plan
        .events
        .iter()
        .filter_map(|e| match e {
            FaultEvent::StallLockService { at_ms, .. }
            | FaultEvent::StallTape { at_ms, .. }
            | FaultEvent::SlowTape { at_ms, .. } => Some((*at_ms, e.clone())),
            _ => None,
        })
        .collect();
    timed.sort_by_key(|(t, _)| *t);
    let rig = rig.clone();
    std::thread::Builder::new()
        .name("fault-driver".into())
        .spawn(move || {
            let start = Instant::now();
            for (at_ms, event) in timed {
                let due = start + Duration::from_millis(at_ms);
                let now = Instant::now();
                if due > now {
                    std::thread::sleep(due - now);
                }
                match event {
                    FaultEvent::StallLockService { duration_ms, .. } => {
                        rig.catalog
                            .leases()
                            .stall_until(Instant::now() + Duration::from_millis(duration_ms));
                    }
                    FaultEvent::StallTape { duration_ms, .. } => {
                        rig.pipeline.stall_migration_until(
                            Instant::now() + Duration::from_millis(duration_ms),
                        );
                    }
                    FaultEvent::SlowTape {
                        duration_ms,
                        factor,
                        ..
                    } => {
                        rig.hsm.tape_control().slow_down(
                            factor,
                            Instant::now() + Duration::from_millis(duration_ms),
                        );
                    }
                    _ => {}
                }
            }
        })
        .expect("spawn fault driver")
}
