//! Central Data Recording pipeline: receives chunk files over parallel
//! transfer streams into the offline buffer, ingests them (payloads to the
//! active backend, one header batch per chunk into the catalog, the file
//! under HSM control), drives migration to tape at a rate-controlled pace
//! with catch-up after stalls, and prunes buffer copies only once a
//! verified tape copy exists.
//!
//! Retention is conservative by construction: a chunk is deleted from a
//! buffer only in SafeOnTape state, and both buffer sides retain
//! independently until then.

pub mod chunk;
pub mod transfer;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::backend::{ContainerParams, PayloadWriter};
use crate::catalog::{
    BackendKind, Catalog, CatalogError, EventHeader, EventId, FileKind, HolderId, IngestResult,
    LeaseError, LockMode, StorageLocator,
};
use crate::codec::now_ms;
use crate::config::Config;
use crate::hsm::{Hsm, HsmError};
use crate::metrics::Metrics;
use crate::rng::mix64;
use chunk::{ChunkError, ChunkFile};

#[derive(Debug, Error)]
pub enum CdrError {
    #[error(transparent)]
    FrameCorrupt(#[from] ChunkError),
    #[error("run {run}: chunk {sequence} beyond the reorder window (next expected {expected})")]
    SequenceGap {
        run: u32,
        sequence: u32,
        expected: u32,
    },
    #[error("backend write failed: {0}")]
    BackendWriteFailed(String),
    #[error(transparent)]
    Hsm(#[from] HsmError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("pipeline is stopped")]
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkStatus {
    Received,
    Ingested,
    SafeOnTape,
}

#[derive(Debug, Clone)]
struct ChunkTrack {
    size: u64,
    status: ChunkStatus,
    online_path: Option<PathBuf>,
    offline_path: Option<PathBuf>,
    file_id: Option<u64>,
}

#[derive(Debug, Default)]
struct RunTrack {
    next_ingest_seq: u32,
    /// Total chunks announced by the source; sealing waits for all of them.
    announced: Option<u32>,
    ingested: u32,
    sealed: bool,
    db_chunk_counts: HashMap<u64, u32>,
}

#[derive(Default)]
struct PipeState {
    chunks: BTreeMap<(u32, u32), ChunkTrack>,
    runs: BTreeMap<u32, RunTrack>,
    online_used: u64,
    offline_used: u64,
    online_bp: bool,
    offline_bp: bool,
    bytes_received: u64,
    failed_chunks: Vec<(u32, u32, String)>,
}

/// Point-in-time retention view of one chunk, for the late-deletion
/// auditor.
#[derive(Debug, Clone)]
pub struct ChunkAudit {
    pub run: u32,
    pub sequence: u32,
    pub status: ChunkStatus,
    pub online: bool,
    pub offline: bool,
    pub backend_disk: bool,
    pub tape_verified: bool,
}

impl ChunkAudit {
    pub fn live_copies(&self) -> u32 {
        u32::from(self.online)
            + u32::from(self.offline)
            + u32::from(self.backend_disk)
            + u32::from(self.tape_verified)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PruneReport {
    pub pruned_online: u64,
    pub pruned_offline: u64,
}

#[derive(Debug, Clone)]
pub struct CdrOptions {
    pub max_chunk_size: u64,
    pub buffer_capacity: u64,
    pub high_watermark: f64,
    pub low_watermark: f64,
    pub nominal_rate: u64,
    pub catchup_factor: f64,
    pub reorder_window: u32,
    pub prune_interval_ms: u64,
    pub ingest_workers: u32,
    pub chunks_per_database: u32,
    pub transfer_retries: u32,
    pub active_backend: BackendKind,
    pub container_params: ContainerParams,
    /// Affinity labels handed to newly created databases, round-robin.
    pub affinities: Vec<String>,
}

impl CdrOptions {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            max_chunk_size: cfg.max_chunk_size,
            buffer_capacity: cfg.buffer_capacity,
            high_watermark: cfg.buffer_high_watermark,
            low_watermark: cfg.buffer_low_watermark,
            nominal_rate: cfg.nominal_rate,
            catchup_factor: cfg.catchup_factor,
            reorder_window: cfg.reorder_window,
            prune_interval_ms: cfg.prune_interval_ms,
            ingest_workers: cfg.ingest_workers.max(1),
            chunks_per_database: cfg.chunks_per_database.max(1),
            transfer_retries: cfg.transfer_retries,
            active_backend: BackendKind::ContainerA,
            container_params: ContainerParams::from_config(cfg, cfg.generator_seed),
            affinities: vec!["srv0".to_string()],
        }
    }
}

pub struct CdrPipeline {
    catalog: Arc<Catalog>,
    hsm: Arc<Hsm>,
    offline_dir: PathBuf,
    backend_dir: PathBuf,
    opts: CdrOptions,
    state: Mutex<PipeState>,
    space_cv: Condvar,
    ingest_cv: Condvar,
    identity: HolderId,
    metrics: Arc<Metrics>,
    stop: AtomicBool,
    migration_stall_until: Mutex<Option<Instant>>,
    workers: Mutex<Vec<std::thread::JoinHandle<()>>>,
}

impl CdrPipeline {
    pub fn new(
        catalog: Arc<Catalog>,
        hsm: Arc<Hsm>,
        offline_dir: &Path,
        backend_dir: &Path,
        opts: CdrOptions,
    ) -> std::io::Result<Arc<Self>> {
        std::fs::create_dir_all(offline_dir)?;
        std::fs::create_dir_all(backend_dir)?;
        Ok(Arc::new(Self {
            catalog,
            hsm,
            offline_dir: offline_dir.to_path_buf(),
            backend_dir: backend_dir.to_path_buf(),
            opts,
            state: Mutex::new(PipeState::default()),
            space_cv: Condvar::new(),
            ingest_cv: Condvar::new(),
            identity: HolderId::local("cdr"),
            metrics: Arc::new(Metrics::new()),
            stop: AtomicBool::new(false),
            migration_stall_until: Mutex::new(None),
            workers: Mutex::new(Vec::new()),
        }))
    }

    pub fn metrics(&self) -> Arc<Metrics> {
        self.metrics.clone()
    }

    pub fn hsm(&self) -> &Arc<Hsm> {
        &self.hsm
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn options(&self) -> &CdrOptions {
        &self.opts
    }

    /// Fault injection: freeze the tape migration pump until the deadline.
    /// No allowance accrues while frozen, so the drain afterwards cannot
    /// exceed the catch-up rate.
    pub fn stall_migration_until(&self, deadline: Instant) {
        *self.migration_stall_until.lock().unwrap() = Some(deadline);
    }

    // ---- worker management ----

    /// Spawns the ingest workers, the rate-controlled migration pump, the
    /// pruner, and the metrics sampler.
    pub fn start(self: &Arc<Self>) {
        let mut workers = self.workers.lock().unwrap();
        for w in 0..self.opts.ingest_workers {
            let me = self.clone();
            workers.push(
                std::thread::Builder::new()
                    .name(format!("cdr-ingest-{w}"))
                    .spawn(move || me.ingest_loop(w))
                    .expect("spawn ingest worker"),
            );
        }
        let me = self.clone();
        workers.push(
            std::thread::Builder::new()
                .name("cdr-pump".into())
                .spawn(move || me.pump_loop())
                .expect("spawn pump"),
        );
        let me = self.clone();
        workers.push(
            std::thread::Builder::new()
                .name("cdr-prune".into())
                .spawn(move || me.prune_loop())
                .expect("spawn pruner"),
        );
        let me = self.clone();
        workers.push(
            std::thread::Builder::new()
                .name("cdr-metrics".into())
                .spawn(move || me.metrics_loop())
                .expect("spawn metrics"),
        );
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        self.ingest_cv.notify_all();
        self.space_cv.notify_all();
        let mut workers = self.workers.lock().unwrap();
        for w in workers.drain(..) {
            let _ = w.join();
        }
    }

    fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    // ---- source side (online buffer) ----

    /// Blocks until the online buffer can hold `size` more bytes; the
    /// source observes waiting, never an error.
    pub fn reserve_online(&self, size: u64) {
        let mut st = self.state.lock().unwrap();
        loop {
            let low = (self.opts.buffer_capacity as f64 * self.opts.low_watermark) as u64;
            let admit = st.online_used + size <= self.opts.buffer_capacity
                && (!st.online_bp || st.online_used <= low);
            if admit {
                st.online_bp = false;
                return;
            }
            if self.stopped() {
                return;
            }
            st = self
                .space_cv
                .wait_timeout(st, Duration::from_millis(200))
                .unwrap()
                .0;
        }
    }

    /// Registers a chunk the source has written into the online buffer.
    pub fn online_written(&self, run: u32, sequence: u32, path: &Path, size: u64) {
        let mut st = self.state.lock().unwrap();
        st.online_used += size;
        if st.online_used >= (self.opts.buffer_capacity as f64 * self.opts.high_watermark) as u64 {
            st.online_bp = true;
        }
        let entry = st.chunks.entry((run, sequence)).or_insert(ChunkTrack {
            size,
            status: ChunkStatus::Received,
            online_path: None,
            offline_path: None,
            file_id: None,
        });
        entry.online_path = Some(path.to_path_buf());
        entry.size = size;
    }

    /// Announces how many chunks a run has; the run seals once all of them
    /// are ingested.
    pub fn end_run(&self, run: u32, chunk_count: u32) {
        {
            let mut st = self.state.lock().unwrap();
            st.runs.entry(run).or_default().announced = Some(chunk_count);
        }
        self.ingest_cv.notify_all();
    }

    // ---- offline side ----

    fn reserve_offline(&self, size: u64) {
        let mut st = self.state.lock().unwrap();
        loop {
            let low = (self.opts.buffer_capacity as f64 * self.opts.low_watermark) as u64;
            let admit = st.offline_used + size <= self.opts.buffer_capacity
                && (!st.offline_bp || st.offline_used <= low);
            if admit {
                st.offline_bp = false;
                return;
            }
            if self.stopped() {
                return;
            }
            st = self
                .space_cv
                .wait_timeout(st, Duration::from_millis(200))
                .unwrap()
                .0;
        }
    }

    /// Receives one chunk's bytes: verify the frame, persist into the
    /// offline buffer, queue for ingest. Returns the transfer ack status.
    pub fn receive_chunk(&self, bytes: Vec<u8>) -> u32 {
        let decoded = match ChunkFile::decode(&bytes) {
            Ok(c) => c,
            Err(_) => return transfer::ACK_CORRUPT,
        };
        let run = decoded.run;
        let seq = decoded.sequence;
        {
            let st = self.state.lock().unwrap();
            if let Some(track) = st.chunks.get(&(run, seq)) {
                if track.offline_path.is_some() {
                    // Duplicate push (sender retry after a lost ack).
                    return transfer::ACK_OK;
                }
            }
            let next = st.runs.get(&run).map(|r| r.next_ingest_seq).unwrap_or(0);
            if seq > next && seq - next > self.opts.reorder_window {
                return transfer::ACK_REJECT;
            }
        }

        let path = self.offline_dir.join(format!("r{run:06}-s{seq:06}.cdr"));
        let tmp = path.with_extension("part");
        if std::fs::write(&tmp, &bytes).is_err() || std::fs::rename(&tmp, &path).is_err() {
            return transfer::ACK_REJECT;
        }

        let mut st = self.state.lock().unwrap();
        let size = bytes.len() as u64;
        st.offline_used += size;
        if st.offline_used >= (self.opts.buffer_capacity as f64 * self.opts.high_watermark) as u64
        {
            st.offline_bp = true;
        }
        st.bytes_received += size;
        let entry = st.chunks.entry((run, seq)).or_insert(ChunkTrack {
            size,
            status: ChunkStatus::Received,
            online_path: None,
            offline_path: None,
            file_id: None,
        });
        entry.offline_path = Some(path);
        st.runs.entry(run).or_default();
        drop(st);
        self.ingest_cv.notify_all();
        transfer::ACK_OK
    }

    // ---- ingest ----

    fn ingest_loop(&self, worker: u32) {
        let workers = self.opts.ingest_workers;
        loop {
            let next = {
                let mut st = self.state.lock().unwrap();
                loop {
                    if self.stopped() {
                        return;
                    }
                    let mut found = None;
                    for (&run, rt) in st.runs.iter() {
                        if run % workers != worker {
                            continue;
                        }
                        let seq = rt.next_ingest_seq;
                        if let Some(track) = st.chunks.get(&(run, seq)) {
                            if track.status == ChunkStatus::Received
                                && track.offline_path.is_some()
                            {
                                found = Some((run, seq, track.offline_path.clone().unwrap()));
                                break;
                            }
                        }
                    }
                    if let Some(f) = found {
                        break f;
                    }
                    st = self
                        .ingest_cv
                        .wait_timeout(st, Duration::from_millis(100))
                        .unwrap()
                        .0;
                }
            };
            let (run, seq, path) = next;
            let mut attempts = 0u32;
            loop {
                match self.ingest_chunk_file(run, seq, &path) {
                    Ok(_) => break,
                    Err(CdrError::Stopped) => return,
                    Err(e) => {
                        attempts += 1;
                        if attempts >= 100 {
                            let mut st = self.state.lock().unwrap();
                            st.failed_chunks.push((run, seq, e.to_string()));
                            // Skip so the run does not wedge; the chunk
                            // stays retained in both buffers.
                            if let Some(rt) = st.runs.get_mut(&run) {
                                rt.next_ingest_seq = seq + 1;
                            }
                            break;
                        }
                        std::thread::sleep(Duration::from_millis(100));
                        if self.stopped() {
                            return;
                        }
                    }
                }
            }
        }
    }

    fn database_for(&self, run: u32, seq: u32) -> Result<u64, CdrError> {
        let db_index = seq / self.opts.chunks_per_database;
        let name = format!("run{run:06}-db{db_index:04}");
        if let Some(db) = self.catalog.db_by_name(&name) {
            return Ok(db.db_id);
        }
        let affinity = &self.opts.affinities
            [(run as usize + db_index as usize) % self.opts.affinities.len()];
        match self.catalog.create_database(&name, affinity, &self.identity) {
            Ok(id) => Ok(id),
            Err(CatalogError::DuplicateName(_)) => Ok(self
                .catalog
                .db_by_name(&name)
                .map(|d| d.db_id)
                .expect("duplicate name implies the db exists")),
            Err(e) => Err(e.into()),
        }
    }

    fn acquire_db_lease(&self, db_id: u64) -> Result<u64, CdrError> {
        let resource = format!("db:{db_id}");
        loop {
            if self.stopped() {
                return Err(CdrError::Stopped);
            }
            match self.catalog.leases().acquire(
                &self.identity,
                &resource,
                LockMode::Exclusive,
                self.catalog.options().lease_ttl_ms,
                now_ms(),
            ) {
                Ok(l) => return Ok(l.lease_id),
                Err(LeaseError::Conflict { .. }) => {
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(CatalogError::from(e).into()),
            }
        }
    }

    /// Ingests one received chunk: payloads into the active backend, the
    /// file under HSM control, one atomic header batch (with its ingest
    /// mark) into the catalog. Idempotent per (run, sequence).
    pub fn ingest_chunk_file(
        &self,
        run: u32,
        seq: u32,
        path: &Path,
    ) -> Result<IngestResult, CdrError> {
        if let Some(prior) = self.catalog.ingest_result(run, seq) {
            self.note_ingested(run, seq, prior.file_id);
            return Ok(prior);
        }

        let bytes = std::fs::read(path)?;
        let decoded = ChunkFile::decode(&bytes)?;
        drop(bytes);
        let db_id = self.database_for(run, seq)?;

        let backend = self.opts.active_backend;
        let ext = match backend {
            BackendKind::ContainerA => "caf",
            BackendKind::FlatB => "dat",
        };
        let file_path = self.backend_dir.join(format!("r{run:06}-c{seq:06}.{ext}"));
        let mut params = self.opts.container_params.clone();
        params.seed = mix64(&[params.seed, run as u64, seq as u64]);
        let mut writer = PayloadWriter::create(backend, &file_path, db_id, &params)
            .map_err(|e| CdrError::BackendWriteFailed(e.to_string()))?;

        let ingest_time = now_ms();
        let mut headers: Vec<EventHeader> = Vec::with_capacity(decoded.records.len());
        let mut payload_bytes = 0u64;
        for rec in &decoded.records {
            let (offset, length) = writer
                .write_payload(&rec.payload)
                .map_err(|e| CdrError::BackendWriteFailed(e.to_string()))?;
            let checksum = crate::codec::crc32(&rec.payload);
            payload_bytes += length as u64;
            headers.push(EventHeader {
                id: EventId::new(run, rec.event_number),
                raw: StorageLocator {
                    backend,
                    file_id: 0, // fixed up after registration
                    offset,
                    length,
                    checksum,
                },
                dsts: vec![],
                ingest_time,
                trigger_tag: checksum % 16,
            });
        }
        let whole_crc = writer.whole_file_crc();
        let summary = writer
            .finish()
            .map_err(|e| CdrError::BackendWriteFailed(e.to_string()))?;

        let kind = match backend {
            BackendKind::ContainerA => FileKind::Container,
            BackendKind::FlatB => FileKind::Flat,
        };
        // Catalog registration first (headers need the file id), HSM
        // adoption after the batch commits, so the tape path sees the
        // file's payload spans from the start.
        let file_id = self.catalog.register_file(
            &format!("run{run:06}/chunk{seq:06}.{ext}"),
            kind,
            Some(db_id),
            summary.file_size,
            whole_crc,
            &file_path,
        )?;
        for h in &mut headers {
            h.raw.file_id = file_id;
        }

        let result = IngestResult {
            events: headers.len() as u64,
            db_id,
            file_id,
            bytes: payload_bytes,
        };

        let lease_id = self.acquire_db_lease(db_id)?;
        let commit = (|| -> Result<(), CdrError> {
            let mut txn = self.catalog.begin_txn(lease_id, &self.identity)?;
            if !headers.is_empty() {
                txn.stage_put_headers(db_id, headers)?;
            }
            txn.stage_ingest_mark(run, seq, result)?;
            let seal_db = {
                let st = self.state.lock().unwrap();
                let count = st
                    .runs
                    .get(&run)
                    .and_then(|r| r.db_chunk_counts.get(&db_id))
                    .copied()
                    .unwrap_or(0);
                count + 1 >= self.opts.chunks_per_database
            };
            if seal_db {
                txn.stage_seal_database(db_id)?;
            }
            txn.commit()?;
            Ok(())
        })();
        let _ = self.catalog.leases().release(lease_id, &self.identity);
        commit?;
        self.hsm.adopt_file(file_id)?;

        {
            let mut st = self.state.lock().unwrap();
            let rt = st.runs.entry(run).or_default();
            *rt.db_chunk_counts.entry(db_id).or_insert(0) += 1;
        }
        self.note_ingested(run, seq, file_id);
        Ok(result)
    }

    fn note_ingested(&self, run: u32, seq: u32, file_id: u64) {
        let seal = {
            let mut st = self.state.lock().unwrap();
            if let Some(track) = st.chunks.get_mut(&(run, seq)) {
                track.status = ChunkStatus::Ingested;
                track.file_id = Some(file_id);
            }
            let rt = st.runs.entry(run).or_default();
            if seq >= rt.next_ingest_seq {
                rt.next_ingest_seq = seq + 1;
            }
            rt.ingested += 1;
            let all_in = rt.announced.is_some_and(|n| rt.ingested >= n);
            if all_in && !rt.sealed {
                rt.sealed = true;
                true
            } else {
                false
            }
        };
        self.ingest_cv.notify_all();
        if seal && self.catalog.run_len(run) > 0 {
            let _ = self.catalog.seal_run(run);
        }
    }

    // ---- migration pump (the rate controller) ----

    /// Nominal rate with zero backlog, up to nominal times the catch-up
    /// factor while backlog exists.
    fn effective_rate(&self, backlog: u64) -> f64 {
        let nominal = self.opts.nominal_rate as f64;
        if backlog > 0 {
            nominal * self.opts.catchup_factor
        } else {
            nominal
        }
    }

    fn pump_loop(&self) {
        let mut allowance = 0f64;
        let mut last = Instant::now();
        while !self.stopped() {
            {
                let mut stall = self.migration_stall_until.lock().unwrap();
                if let Some(until) = *stall {
                    if Instant::now() < until {
                        drop(stall);
                        std::thread::sleep(Duration::from_millis(10));
                        last = Instant::now();
                        allowance = 0.0;
                        continue;
                    }
                    *stall = None;
                }
            }

            if self.opts.nominal_rate == 0 {
                // Unpaced: drain whatever is pending.
                if self.hsm.peek_pending().is_some() {
                    let _ = self.hsm.migrate_next();
                } else {
                    std::thread::sleep(Duration::from_millis(5));
                }
                last = Instant::now();
                continue;
            }

            let now = Instant::now();
            let dt = now.duration_since(last).as_secs_f64();
            last = now;

            let backlog = self.hsm.backlog_bytes();
            let rate = self.effective_rate(backlog);
            let cap = match self.hsm.peek_pending() {
                Some((_, size)) => (size as f64).max(rate * 0.25),
                None => rate * 0.25,
            };
            allowance = (allowance + rate * dt).min(cap);

            if let Some((_, size)) = self.hsm.peek_pending() {
                if allowance >= size as f64 {
                    match self.hsm.migrate_next() {
                        Ok(Some(_)) => {
                            allowance -= size as f64;
                            // Time spent writing tape must not accrue
                            // allowance on top of the bytes just paid.
                            last = Instant::now();
                        }
                        Ok(None) => {}
                        Err(_e) => {
                            std::thread::sleep(Duration::from_millis(50));
                            last = Instant::now();
                        }
                    }
                    continue;
                }
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    // ---- prune ----

    /// Marks chunks whose backing file has a verified tape copy SafeOnTape
    /// and deletes both buffer copies; never deletes under any other
    /// condition.
    pub fn confirm_and_prune(&self) -> PruneReport {
        let candidates: Vec<((u32, u32), u64)> = {
            let st = self.state.lock().unwrap();
            st.chunks
                .iter()
                .filter(|(_, t)| t.status == ChunkStatus::Ingested)
                .filter_map(|(k, t)| t.file_id.map(|f| (*k, f)))
                .collect()
        };
        let mut report = PruneReport::default();
        for ((run, seq), file_id) in candidates {
            let tape_safe = self
                .hsm
                .file(file_id)
                .map(|f| f.tape_copy.is_some())
                .unwrap_or(false);
            if !tape_safe {
                continue;
            }
            {
                let mut st = self.state.lock().unwrap();
                if let Some(track) = st.chunks.get_mut(&(run, seq)) {
                    track.status = ChunkStatus::SafeOnTape;
                    let offline = track.offline_path.take();
                    let online = track.online_path.take();
                    let size = track.size;
                    if let Some(p) = offline {
                        let _ = std::fs::remove_file(p);
                        st.offline_used = st.offline_used.saturating_sub(size);
                        report.pruned_offline += 1;
                    }
                    if let Some(p) = online {
                        let _ = std::fs::remove_file(p);
                        st.online_used = st.online_used.saturating_sub(size);
                        report.pruned_online += 1;
                    }
                    let low =
                        (self.opts.buffer_capacity as f64 * self.opts.low_watermark) as u64;
                    if st.offline_used <= low {
                        st.offline_bp = false;
                    }
                    if st.online_used <= low {
                        st.online_bp = false;
                    }
                }
            }
            self.space_cv.notify_all();
        }
        report
    }

    fn prune_loop(&self) {
        while !self.stopped() {
            self.confirm_and_prune();
            std::thread::sleep(Duration::from_millis(self.opts.prune_interval_ms.min(500)));
        }
    }

    fn metrics_loop(&self) {
        while !self.stopped() {
            let hs = self.hsm.stats();
            let (online, offline) = self.buffer_usage();
            self.metrics
                .record(hs.raw_bytes_on_tape, online, offline, hs.tape_backlog_bytes);
            std::thread::sleep(Duration::from_millis(100));
        }
    }

    // ---- observation ----

    pub fn audit_chunks(&self) -> Vec<ChunkAudit> {
        let st = self.state.lock().unwrap();
        st.chunks
            .iter()
            .map(|(&(run, sequence), t)| {
                let (backend_disk, tape_verified) =
                    match t.file_id.and_then(|f| self.hsm.file(f)) {
                        Some(f) => (
                            !matches!(
                                f.state,
                                crate::hsm::FileState::TapeOnly | crate::hsm::FileState::Recalling
                            ),
                            f.tape_copy.is_some(),
                        ),
                        None => (false, false),
                    };
                ChunkAudit {
                    run,
                    sequence,
                    status: t.status,
                    online: t.online_path.is_some(),
                    offline: t.offline_path.is_some(),
                    backend_disk,
                    tape_verified,
                }
            })
            .collect()
    }

    pub fn buffer_usage(&self) -> (u64, u64) {
        let st = self.state.lock().unwrap();
        (st.online_used, st.offline_used)
    }

    pub fn bytes_received(&self) -> u64 {
        self.state.lock().unwrap().bytes_received
    }

    pub fn failed_chunks(&self) -> Vec<(u32, u32, String)> {
        self.state.lock().unwrap().failed_chunks.clone()
    }

    /// True once every tracked chunk is SafeOnTape and every announced run
    /// is fully ingested.
    pub fn drained(&self) -> bool {
        let st = self.state.lock().unwrap();
        !st.chunks.is_empty()
            && st
                .chunks
                .values()
                .all(|t| t.status == ChunkStatus::SafeOnTape)
            && st
                .runs
                .values()
                .all(|r| r.announced.is_some_and(|n| r.ingested >= n))
    }

    pub fn wait_drained(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if self.drained() {
                return true;
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        self.drained()
    }
}

/// The pipeline is the chunk sink behind the transfer receiver.
impl transfer::ChunkSink for CdrPipeline {
    fn reserve(&self, size: u64) {
        self.reserve_offline(size);
    }

    fn accept(&self, bytes: Vec<u8>) -> u32 {
        self.receive_chunk(bytes)
    }
}
