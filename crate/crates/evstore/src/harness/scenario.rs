//! End-to-end fault scenario execution: play a generator through the full
//! pipeline under a fault plan, run migrations (with injected crashes and
//! resume), keep readers going, audit retention continuously, and verify
//! the store against the generator manifest at the end.
//!
//! The verdict is oracle-driven: every expected event is read back through
//! the full serving path and compared against the manifest's length and
//! checksum. Loss and corruption are separate counts; the retention
//! auditor reports any instant at which a chunk had zero live copies.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::catalog::EventId;
use crate::migration::MigrationError;
use crate::server::{BalanceStrategy, PayloadKind};

use super::fault::{drive_timed_faults, FaultPlan};
use super::generate::Generator;
use super::rig::{feed_generator, FeedOptions, Rig};

#[derive(Debug, Default)]
pub struct ScenarioOutcome {
    pub events_expected: u64,
    pub events_verified: u64,
    pub lost: Vec<EventId>,
    pub corrupted: Vec<EventId>,
    pub late_deletion_violations: u64,
    pub retention_checks: u64,
    pub reader_reads: u64,
    pub reader_failures: u64,
    pub clients_killed: u32,
    pub migrated_runs: Vec<u32>,
    pub migrator_crashes_injected: u32,
    pub pipeline_drained: bool,
    pub feed_send_errors: u64,
}

impl ScenarioOutcome {
    pub fn clean(&self) -> bool {
        self.lost.is_empty()
            && self.corrupted.is_empty()
            && self.late_deletion_violations == 0
            && self.pipeline_drained
            && self.feed_send_errors == 0
    }
}

pub struct ScenarioSpec {
    pub streams: u32,
    pub source_rate: u64,
    /// Runs to migrate A->B once sealed (empty = none).
    pub migrate_runs: Vec<u32>,
    pub drain_timeout: Duration,
    /// Background readers hammering random events while everything runs.
    pub reader_threads: u32,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            streams: 4,
            source_rate: 0,
            migrate_runs: vec![],
            drain_timeout: Duration::from_secs(300),
            reader_threads: 0,
        }
    }
}

/// Continuous retention auditor: never a chunk with zero live copies.
pub struct RetentionAuditor {
    stop: Arc<AtomicBool>,
    violations: Arc<AtomicU64>,
    checks: Arc<AtomicU64>,
    join: Option<std::thread::JoinHandle<()>>,
}

impl RetentionAuditor {
    pub fn start(rig: &Arc<Rig>) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let violations = Arc::new(AtomicU64::new(0));
        let checks = Arc::new(AtomicU64::new(0));
        let (s, v, c, rig) = (stop.clone(), violations.clone(), checks.clone(), rig.clone());
        let join = std::thread::Builder::new()
            .name("retention-auditor".into())
            .spawn(move || {
                while !s.load(Ordering::SeqCst) {
                    for audit in rig.pipeline.audit_chunks() {
                        c.fetch_add(1, Ordering::SeqCst);
                        if audit.live_copies() == 0 {
                            v.fetch_add(1, Ordering::SeqCst);
                        }
                    }
                    std::thread::sleep(Duration::from_millis(20));
                }
            })
            .expect("spawn auditor");
        Self {
            stop,
            violations,
            checks,
            join: Some(join),
        }
    }

    pub fn finish(mut self) -> (u64, u64) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
        (
            self.violations.load(Ordering::SeqCst),
            self.checks.load(Ordering::SeqCst),
        )
    }
}

/// Runs the plan against a rig end to end and returns the audited outcome.
pub fn run_fault_scenario(
    rig: &Arc<Rig>,
    generator: &Generator,
    plan: &FaultPlan,
    spec: &ScenarioSpec,
) -> ScenarioOutcome {
    let mut outcome = ScenarioOutcome::default();
    let manifest = generator.manifest();
    outcome.events_expected = manifest.len() as u64;

    let auditor = RetentionAuditor::start(rig);
    let fault_driver = drive_timed_faults(rig, plan);

    // Background readers: random already-ingested events, full read path.
    let reader_stop = Arc::new(AtomicBool::new(false));
    let reader_reads = Arc::new(AtomicU64::new(0));
    let reader_failures = Arc::new(AtomicU64::new(0));
    let killed = Arc::new(AtomicU64::new(0));
    let mut reader_joins = Vec::new();
    let kill_events = plan.kill_events();
    for r in 0..spec.reader_threads {
        let rig2 = rig.clone();
        let stop = reader_stop.clone();
        let reads = reader_reads.clone();
        let fails = reader_failures.clone();
        let killed = killed.clone();
        let kill_events = kill_events.clone();
        let seed = plan.seed ^ r as u64;
        reader_joins.push(
            std::thread::Builder::new()
                .name(format!("scenario-reader-{r}"))
                .stack_size(512 * 1024)
                .spawn(move || {
                    let started = Instant::now();
                    let mut client = rig2.client(BalanceStrategy::ClientLibrary);
                    let mut rng = crate::rng::SplitMix64::derive(seed, &[r as u64]);
                    loop {
                        if stop.load(Ordering::SeqCst) {
                            return;
                        }
                        // Scripted kill: this reader vanishes mid-flight,
                        // no cleanup, connection dropped wherever it was.
                        let elapsed = started.elapsed().as_millis() as u64;
                        if kill_events
                            .iter()
                            .any(|(at_ms, count)| elapsed >= *at_ms && (r as u64) < *count as u64)
                        {
                            killed.fetch_add(1, Ordering::SeqCst);
                            return;
                        }
                        let runs = rig2.catalog.runs();
                        if runs.is_empty() {
                            std::thread::sleep(Duration::from_millis(20));
                            continue;
                        }
                        let run = runs[rng.next_below(runs.len() as u64) as usize];
                        let len = rig2.catalog.run_len(run);
                        if len == 0 {
                            continue;
                        }
                        let event = rng.next_below(len);
                        match client.read_event(EventId::new(run, event), &PayloadKind::Raw) {
                            Ok(_) => {
                                reads.fetch_add(1, Ordering::SeqCst);
                            }
                            Err(_) => {
                                fails.fetch_add(1, Ordering::SeqCst);
                            }
                        }
                    }
                })
                .expect("spawn reader"),
        );
    }

    // Feed everything through transfer, with wire corruptions from the plan.
    let feed = feed_generator(
        rig,
        generator,
        &FeedOptions {
            streams: spec.streams,
            source_rate: spec.source_rate,
            corruptions: plan.stream_corruptions(),
        },
    );
    outcome.feed_send_errors = feed.send_errors;

    outcome.pipeline_drained = rig.pipeline.wait_drained(spec.drain_timeout);
    let _ = fault_driver.join();

    // Migrations, with scripted crashes and a resume after each.
    let crashes = plan.migrator_crashes();
    for (run, event) in plan.migrated_corruptions() {
        rig.migrator.corrupt_after_copy(run, event);
    }
    for &run in &spec.migrate_runs {
        let crash_phase = crashes.iter().find(|(r, _)| *r == run).map(|(_, p)| p.clone());
        if let Some(phase) = crash_phase {
            let point: &'static str = match phase.as_str() {
                "copy" => crate::migration::FAULT_COPY,
                "verify" => crate::migration::FAULT_VERIFY,
                _ => crate::migration::FAULT_PRE_SWITCH,
            };
            // A copy crash lands mid-stream (after some events), not on
            // the first one; other phases fire on first reach.
            let countdown = Arc::new(AtomicU64::new(if point == crate::migration::FAULT_COPY {
                40
            } else {
                0
            }));
            let armed = Arc::new(AtomicBool::new(true));
            let (cd, armed2) = (countdown.clone(), armed.clone());
            rig.migrator.set_fault_hook(Some(Arc::new(move |at: &str| {
                if at != point || !armed2.load(Ordering::SeqCst) {
                    return false;
                }
                if cd.load(Ordering::SeqCst) == 0 {
                    armed2.store(false, Ordering::SeqCst);
                    return true;
                }
                cd.fetch_sub(1, Ordering::SeqCst);
                false
            })));
            match rig.migrator.migrate_run(run, rig.config.verify_sample_fraction, plan.seed) {
                Err(MigrationError::Crashed(_)) => {
                    outcome.migrator_crashes_injected += 1;
                }
                Ok(_) => {}
                Err(_) => {}
            }
            rig.migrator.set_fault_hook(None);
        }
        match rig
            .migrator
            .migrate_run(run, rig.config.verify_sample_fraction, plan.seed)
        {
            Ok(report) if report.passed() => outcome.migrated_runs.push(run),
            _ => {}
        }
    }

    // Let readers (and the kill script) run a little against the final
    // store before stopping them.
    std::thread::sleep(Duration::from_millis(300));
    reader_stop.store(true, Ordering::SeqCst);
    for j in reader_joins {
        let _ = j.join();
    }
    outcome.reader_reads = reader_reads.load(Ordering::SeqCst);
    outcome.reader_failures = reader_failures.load(Ordering::SeqCst);
    outcome.clients_killed = killed.load(Ordering::SeqCst) as u32;

    // Oracle pass: every manifest event back through the serving path.
    let mut client = rig.client(BalanceStrategy::ClientLibrary);
    for entry in manifest.iter() {
        match client.read_event(entry.id, &PayloadKind::Raw) {
            Ok(out) => {
                if out.bytes.len() as u32 != entry.length
                    || crate::codec::crc32(&out.bytes) != entry.checksum
                {
                    outcome.corrupted.push(entry.id);
                } else {
                    outcome.events_verified += 1;
                }
            }
            Err(_) => outcome.lost.push(entry.id),
        }
    }

    let (violations, checks) = auditor.finish();
    outcome.late_deletion_violations = violations;
    outcome.retention_checks = checks;
    outcome
}
