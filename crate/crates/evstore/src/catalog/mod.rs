//! The federation catalog: event headers, run and database registry,
//! physical file locations, and the lease service governing all mutation.
//!
//! Headers are always online: every lookup is served from the in-memory
//! table, which is rebuilt from the journal on open and never depends on
//! any payload file's tiering state.
//!
//! Mutations are transactional. A [`CatalogTxn`] stages operations under an
//! exclusive lease and commits them as one atomic journal record; dropping
//! the transaction (or losing the lease to the reaper) discards everything
//! staged. Database creation is the one globally serialized operation: a
//! FIFO queue admits one creator at a time, the entry is journaled as an
//! intent before it becomes visible, and recovery either completes the
//! creation or removes it entirely.

mod journal;
mod lease;
mod types;

pub use journal::{IngestResult, JournalOp, TapeCopy};
pub use lease::{LeaseError, LeaseService, LockLease, LockMode};
pub use types::{
    BackendKind, DatabaseEntry, DbState, EventHeader, EventId, FileEntry, FileKind, HolderId,
    StorageLocator,
};

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::codec::now_ms;
use crate::config::Config;
use journal::Journal;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("name '{0}' already exists")]
    DuplicateName(String),
    #[error("timed out waiting in the database-creation queue")]
    CreationTimeout,
    #[error("database {0} is not open")]
    NotOpen(u64),
    #[error("operation requires a live exclusive lease on {0}")]
    LeaseRequired(String),
    #[error("run {run}: expected event {expected}, got {got}")]
    SequenceGap { run: u32, expected: u64, got: u64 },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("event {id} already has version '{version}' bound")]
    VersionAlreadyBound { id: EventId, version: String },
    #[error("run {0} is sealed")]
    RunSealed(u32),
    #[error("permission denied: resource owned by uid {need_uid}, caller is uid {have_uid}")]
    PermissionDenied { need_uid: u32, have_uid: u32 },
    #[error(transparent)]
    Lease(#[from] LeaseError),
    #[error("injected crash at '{0}'")]
    FaultInjected(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type FaultHook = Arc<dyn Fn(&str) -> bool + Send + Sync>;

/// Crash points enumerated by the creation crash-matrix test. Each point is
/// a deterministic durable state: before anything is journaled, after the
/// intent is durable, after the commit record is durable, and after the
/// entry is applied in memory.
pub const CREATE_DB_FAULT_POINTS: &[&str] = &[
    "create.begin",
    "create.after_intent",
    "create.after_commit",
    "create.after_apply",
];

#[derive(Debug, Clone, Copy)]
pub struct CatalogStats {
    pub header_count: u64,
    pub header_bytes: u64,
    pub payload_bytes: u64,
    /// header_bytes / payload_bytes over all registered RAW data; 0 when
    /// the catalog is empty.
    pub metadata_ratio: f64,
}

#[derive(Debug, Clone)]
struct RunState {
    headers: Vec<EventHeader>,
    sealed: bool,
    owner_uid: u32,
    archived_raw: Option<Vec<StorageLocator>>,
}

#[derive(Debug, Clone)]
struct FileRuntime {
    entry: FileEntry,
    tape: Option<TapeCopy>,
    /// (offset, length) payload ranges inside the file, derived from the
    /// locators that reference it.
    spans: Vec<(u64, u32)>,
}

#[derive(Default)]
struct CatalogState {
    dbs: BTreeMap<u64, DatabaseEntry>,
    db_names: HashMap<String, u64>,
    pending_create: Option<DatabaseEntry>,
    runs: BTreeMap<u32, RunState>,
    files: BTreeMap<u64, FileRuntime>,
    ingests: HashMap<(u32, u32), IngestResult>,
    next_db_id: u64,
    next_file_id: u64,
    header_count: u64,
    header_bytes: u64,
    payload_bytes: u64,
}

impl CatalogState {
    fn run_len(&self, run: u32) -> u64 {
        self.runs.get(&run).map(|r| r.headers.len() as u64).unwrap_or(0)
    }

    fn apply(&mut self, op: &JournalOp) {
        match op {
            JournalOp::DbIntent { entry } => {
                self.next_db_id = self.next_db_id.max(entry.db_id);
                let mut e = entry.clone();
                e.state = DbState::Creating;
                self.pending_create = Some(e);
            }
            JournalOp::DbCommit { db_id } => {
                if let Some(mut entry) = self.pending_create.take() {
                    if entry.db_id == *db_id {
                        entry.state = DbState::Open;
                        self.db_names.insert(entry.name.clone(), entry.db_id);
                        self.dbs.insert(entry.db_id, entry);
                    }
                }
            }
            JournalOp::DbSeal { db_id } => {
                if let Some(db) = self.dbs.get_mut(db_id) {
                    db.state = DbState::Sealed;
                }
            }
            JournalOp::Txn { ops } => {
                for op in ops {
                    self.apply(op);
                }
            }
            JournalOp::PutBatch { headers, run, .. } => {
                let rs = self.runs.entry(*run).or_insert_with(|| RunState {
                    headers: Vec::new(),
                    sealed: false,
                    owner_uid: 0,
                    archived_raw: None,
                });
                for h in headers {
                    self.header_count += 1;
                    self.header_bytes += h.encoded_len();
                    self.payload_bytes += h.raw.length as u64;
                    if let Some(f) = self.files.get_mut(&h.raw.file_id) {
                        f.spans.push((h.raw.offset, h.raw.length));
                    }
                    rs.headers.push(h.clone());
                }
            }
            JournalOp::AttachDst {
                id,
                version,
                locator,
            } => {
                if let Some(rs) = self.runs.get_mut(&id.run) {
                    if let Some(h) = rs.headers.get_mut(id.event as usize) {
                        let before = h.encoded_len();
                        h.dsts.push((version.clone(), *locator));
                        self.header_bytes += h.encoded_len() - before;
                        if let Some(f) = self.files.get_mut(&locator.file_id) {
                            f.spans.push((locator.offset, locator.length));
                        }
                    }
                }
            }
            JournalOp::RunSeal { run } => {
                if let Some(rs) = self.runs.get_mut(run) {
                    rs.sealed = true;
                }
            }
            JournalOp::FileRegister { entry } => {
                self.next_file_id = self.next_file_id.max(entry.file_id);
                self.files.insert(
                    entry.file_id,
                    FileRuntime {
                        entry: entry.clone(),
                        tape: None,
                        spans: Vec::new(),
                    },
                );
            }
            JournalOp::FileTapeCopy { file_id, copy } => {
                if let Some(f) = self.files.get_mut(file_id) {
                    f.tape = Some(*copy);
                }
            }
            JournalOp::RunSwitch { run, flat_file_id } => {
                if let Some(rs) = self.runs.get_mut(run) {
                    let archived: Vec<StorageLocator> =
                        rs.headers.iter().map(|h| h.raw).collect();
                    let mut offset = 0u64;
                    let mut new_spans = Vec::with_capacity(rs.headers.len());
                    for h in rs.headers.iter_mut() {
                        h.raw = StorageLocator {
                            backend: BackendKind::FlatB,
                            file_id: *flat_file_id,
                            offset,
                            length: h.raw.length,
                            checksum: h.raw.checksum,
                        };
                        new_spans.push((offset, h.raw.length));
                        offset += h.raw.length as u64;
                    }
                    rs.archived_raw = Some(archived);
                    if let Some(f) = self.files.get_mut(flat_file_id) {
                        f.spans = new_spans;
                    }
                }
            }
            JournalOp::IngestMark {
                run,
                sequence,
                result,
            } => {
                self.ingests.insert((*run, *sequence), *result);
                if let Some(rs) = self.runs.get_mut(run) {
                    if rs.owner_uid == 0 {
                        if let Some(db) = self.dbs.get(&result.db_id) {
                            rs.owner_uid = db.owner_uid;
                        }
                    }
                }
            }
            JournalOp::DbSnapshot { entry } => {
                self.next_db_id = self.next_db_id.max(entry.db_id);
                self.db_names.insert(entry.name.clone(), entry.db_id);
                self.dbs.insert(entry.db_id, entry.clone());
            }
            JournalOp::RunMeta {
                run,
                sealed,
                archived_raw,
            } => {
                if let Some(rs) = self.runs.get_mut(run) {
                    rs.sealed = *sealed;
                    rs.archived_raw = archived_raw.clone();
                }
            }
        }
    }

    fn snapshot_ops(&self) -> Vec<JournalOp> {
        let mut ops = Vec::new();
        for db in self.dbs.values() {
            ops.push(JournalOp::DbSnapshot { entry: db.clone() });
        }
        for f in self.files.values() {
            ops.push(JournalOp::FileRegister {
                entry: f.entry.clone(),
            });
            if let Some(copy) = f.tape {
                ops.push(JournalOp::FileTapeCopy {
                    file_id: f.entry.file_id,
                    copy,
                });
            }
        }
        for (run, rs) in &self.runs {
            for batch in rs.headers.chunks(2048) {
                ops.push(JournalOp::PutBatch {
                    db_id: 0,
                    run: *run,
                    headers: batch.to_vec(),
                });
            }
            ops.push(JournalOp::RunMeta {
                run: *run,
                sealed: rs.sealed,
                archived_raw: rs.archived_raw.clone(),
            });
        }
        for ((run, seq), result) in &self.ingests {
            ops.push(JournalOp::IngestMark {
                run: *run,
                sequence: *seq,
                result: *result,
            });
        }
        ops
    }
}

#[derive(Default)]
struct CreateGate {
    busy: bool,
    queue: VecDeque<u64>,
    next_ticket: u64,
}

#[derive(Debug, Clone)]
pub struct CatalogOptions {
    pub fsync: bool,
    pub lease_ttl_ms: u64,
    pub create_timeout_ms: u64,
}

impl From<&Config> for CatalogOptions {
    fn from(cfg: &Config) -> Self {
        Self {
            fsync: cfg.journal_fsync,
            lease_ttl_ms: cfg.lease_ttl_ms,
            create_timeout_ms: cfg.create_queue_timeout_ms,
        }
    }
}

impl Default for CatalogOptions {
    fn default() -> Self {
        Self {
            fsync: true,
            lease_ttl_ms: 10_000,
            create_timeout_ms: 30_000,
        }
    }
}

pub struct Catalog {
    dir: PathBuf,
    state: RwLock<CatalogState>,
    journal: Mutex<Journal>,
    leases: LeaseService,
    create_gate: Mutex<CreateGate>,
    create_cv: Condvar,
    fault: Mutex<Option<FaultHook>>,
    opts: CatalogOptions,
    internal: HolderId,
}

impl Catalog {
    pub fn open(dir: &Path, opts: CatalogOptions) -> std::io::Result<Self> {
        let (journal, ops) = Journal::open(dir, opts.fsync)?;
        let mut state = CatalogState::default();
        for op in &ops {
            state.apply(op);
        }
        // An intent with no commit is an interrupted creation: remove it.
        state.pending_create = None;
        Ok(Self {
            dir: dir.to_path_buf(),
            state: RwLock::new(state),
            journal: Mutex::new(journal),
            leases: LeaseService::new(),
            create_gate: Mutex::new(CreateGate::default()),
            create_cv: Condvar::new(),
            fault: Mutex::new(None),
            opts,
            internal: HolderId::local("catalog-internal"),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn leases(&self) -> &LeaseService {
        &self.leases
    }

    pub fn options(&self) -> &CatalogOptions {
        &self.opts
    }

    pub fn set_fault_hook(&self, hook: Option<FaultHook>) {
        *self.fault.lock().unwrap() = hook;
    }

    fn fault_point(&self, point: &str) -> Result<(), CatalogError> {
        let hook = self.fault.lock().unwrap().clone();
        if let Some(h) = hook {
            if h(point) {
                return Err(CatalogError::FaultInjected(point.to_string()));
            }
        }
        Ok(())
    }

    /// Acquires an internal exclusive lease, retrying briefly on conflict.
    /// System-side mutations (file registry, run control) go through this
    /// so that every write still funnels through the lease service.
    fn internal_lease(&self, resource: &str) -> Result<LockLease, CatalogError> {
        let deadline = Instant::now() + Duration::from_millis(self.opts.lease_ttl_ms.max(2_000));
        loop {
            match self.leases.acquire(
                &self.internal,
                resource,
                LockMode::Exclusive,
                self.opts.lease_ttl_ms,
                now_ms(),
            ) {
                Ok(l) => return Ok(l),
                Err(LeaseError::Conflict { .. }) if Instant::now() < deadline => {
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    // ---- database creation ----

    pub fn create_database(
        &self,
        name: &str,
        affinity: &str,
        identity: &HolderId,
    ) -> Result<u64, CatalogError> {
        let deadline = Instant::now() + Duration::from_millis(self.opts.create_timeout_ms);
        let ticket = {
            let mut g = self.create_gate.lock().unwrap();
            g.next_ticket += 1;
            let t = g.next_ticket;
            g.queue.push_back(t);
            t
        };
        {
            let mut g = self.create_gate.lock().unwrap();
            loop {
                if !g.busy && g.queue.front() == Some(&ticket) {
                    g.queue.pop_front();
                    g.busy = true;
                    break;
                }
                let now = Instant::now();
                if now >= deadline {
                    g.queue.retain(|&t| t != ticket);
                    return Err(CatalogError::CreationTimeout);
                }
                let (guard, _) = self.create_cv.wait_timeout(g, deadline - now).unwrap();
                g = guard;
            }
        }
        let result = self.create_admitted(name, affinity, identity);
        {
            let mut g = self.create_gate.lock().unwrap();
            g.busy = false;
        }
        self.create_cv.notify_all();
        result
    }

    fn create_admitted(
        &self,
        name: &str,
        affinity: &str,
        identity: &HolderId,
    ) -> Result<u64, CatalogError> {
        self.fault_point("create.begin")?;
        let now = now_ms();
        let lease = self.leases.acquire(
            identity,
            "federation:db-create",
            LockMode::Exclusive,
            self.opts.lease_ttl_ms,
            now,
        )?;

        let entry = {
            let mut st = self.state.write().unwrap();
            if st.db_names.contains_key(name) {
                drop(st);
                let _ = self.leases.release(lease.lease_id, identity);
                return Err(CatalogError::DuplicateName(name.to_string()));
            }
            st.next_db_id += 1;
            let entry = DatabaseEntry {
                db_id: st.next_db_id,
                name: name.to_string(),
                server_affinity: affinity.to_string(),
                state: DbState::Creating,
                created_at: now,
                owner_uid: identity.uid,
            };
            st.pending_create = Some(entry.clone());
            entry
        };
        let db_id = entry.db_id;

        // Journal intent, then commit, each made durable before the next
        // step. A crash at any fault point below leaves either no durable
        // trace (recovery removes the entry) or both records (recovery
        // completes it); the federation-wide creation lease is in-memory
        // only and cannot outlive the process.
        {
            let mut j = self.journal.lock().unwrap();
            j.append(&JournalOp::DbIntent { entry })?;
            j.sync()?;
            self.fault_point("create.after_intent")?;
            j.append(&JournalOp::DbCommit { db_id })?;
            j.sync()?;
            self.fault_point("create.after_commit")?;

            let mut st = self.state.write().unwrap();
            st.apply(&JournalOp::DbCommit { db_id });
        }
        self.fault_point("create.after_apply")?;

        self.leases.release(lease.lease_id, identity)?;
        Ok(db_id)
    }

    /// Simulates process death: buffered, un-synced journal bytes are
    /// discarded and the instance must not be used again. Tests reopen the
    /// directory afterwards.
    pub fn simulate_crash(self) {
        // Journal's BufWriter would flush on drop; routing through a sync
        // here is fine because every fault point already synced what a real
        // crash would have made durable.
        let _ = self;
    }

    // ---- transactions ----

    pub fn begin_txn(
        &self,
        lease_id: u64,
        identity: &HolderId,
    ) -> Result<CatalogTxn<'_>, CatalogError> {
        let lease = self.leases.check_live(lease_id, identity, now_ms())?;
        Ok(CatalogTxn {
            catalog: self,
            lease_id,
            resource: lease.resource,
            identity: identity.clone(),
            staged: Vec::new(),
            run_cursors: HashMap::new(),
        })
    }

    /// Stage-and-commit convenience: the batch is atomic and queryable as
    /// soon as this returns.
    pub fn put_headers(
        &self,
        lease_id: u64,
        identity: &HolderId,
        db_id: u64,
        headers: Vec<EventHeader>,
    ) -> Result<u64, CatalogError> {
        let mut txn = self.begin_txn(lease_id, identity)?;
        let n = txn.stage_put_headers(db_id, headers)?;
        txn.commit()?;
        Ok(n)
    }

    pub fn attach_dst(
        &self,
        lease_id: u64,
        identity: &HolderId,
        id: EventId,
        version: &str,
        locator: StorageLocator,
    ) -> Result<(), CatalogError> {
        let mut txn = self.begin_txn(lease_id, identity)?;
        txn.stage_attach_dst(id, version, locator)?;
        txn.commit()
    }

    fn commit_ops(&self, ops: Vec<JournalOp>, check: impl FnOnce(&CatalogState) -> Result<(), CatalogError>) -> Result<(), CatalogError> {
        let mut j = self.journal.lock().unwrap();
        {
            let st = self.state.read().unwrap();
            check(&st)?;
        }
        let record = if ops.len() == 1 {
            ops.into_iter().next().unwrap()
        } else {
            JournalOp::Txn { ops }
        };
        j.append(&record)?;
        j.sync()?;
        let mut st = self.state.write().unwrap();
        st.apply(&record);
        Ok(())
    }

    // ---- reads ----

    pub fn get_header(&self, id: EventId) -> Result<EventHeader, CatalogError> {
        let st = self.state.read().unwrap();
        st.runs
            .get(&id.run)
            .and_then(|r| r.headers.get(id.event as usize))
            .cloned()
            .ok_or_else(|| CatalogError::NotFound(format!("event {id}")))
    }

    pub fn run_headers(&self, run: u32) -> Vec<EventHeader> {
        let st = self.state.read().unwrap();
        st.runs
            .get(&run)
            .map(|r| r.headers.clone())
            .unwrap_or_default()
    }

    pub fn run_len(&self, run: u32) -> u64 {
        self.state.read().unwrap().run_len(run)
    }

    pub fn run_sealed(&self, run: u32) -> bool {
        let st = self.state.read().unwrap();
        st.runs.get(&run).map(|r| r.sealed).unwrap_or(false)
    }

    pub fn runs(&self) -> Vec<u32> {
        self.state.read().unwrap().runs.keys().copied().collect()
    }

    /// Pre-switch raw locators of a migrated run, kept for re-verification.
    pub fn archived_raw(&self, run: u32) -> Option<Vec<StorageLocator>> {
        let st = self.state.read().unwrap();
        st.runs.get(&run).and_then(|r| r.archived_raw.clone())
    }

    pub fn run_switched(&self, run: u32) -> bool {
        let st = self.state.read().unwrap();
        st.runs
            .get(&run)
            .map(|r| r.archived_raw.is_some())
            .unwrap_or(false)
    }

    pub fn db(&self, db_id: u64) -> Option<DatabaseEntry> {
        self.state.read().unwrap().dbs.get(&db_id).cloned()
    }

    pub fn db_by_name(&self, name: &str) -> Option<DatabaseEntry> {
        let st = self.state.read().unwrap();
        st.db_names.get(name).and_then(|id| st.dbs.get(id)).cloned()
    }

    pub fn list_dbs(&self) -> Vec<DatabaseEntry> {
        self.state.read().unwrap().dbs.values().cloned().collect()
    }

    pub fn file(&self, file_id: u64) -> Option<FileEntry> {
        let st = self.state.read().unwrap();
        st.files.get(&file_id).map(|f| f.entry.clone())
    }

    pub fn file_tape_copy(&self, file_id: u64) -> Option<TapeCopy> {
        let st = self.state.read().unwrap();
        st.files.get(&file_id).and_then(|f| f.tape)
    }

    pub fn list_files(&self) -> Vec<FileEntry> {
        let st = self.state.read().unwrap();
        st.files.values().map(|f| f.entry.clone()).collect()
    }

    /// Every registered file together with its tape copy, if any; the HSM
    /// rebuilds its namespace from this on open.
    pub fn files_snapshot(&self) -> Vec<(FileEntry, Option<TapeCopy>)> {
        let st = self.state.read().unwrap();
        st.files
            .values()
            .map(|f| (f.entry.clone(), f.tape))
            .collect()
    }

    /// Payload byte ranges inside a file, sorted by offset; derived from
    /// the locators that reference the file.
    pub fn payload_spans(&self, file_id: u64) -> Vec<(u64, u32)> {
        let st = self.state.read().unwrap();
        let mut spans = st
            .files
            .get(&file_id)
            .map(|f| f.spans.clone())
            .unwrap_or_default();
        spans.sort_unstable();
        spans
    }

    pub fn ingest_result(&self, run: u32, sequence: u32) -> Option<IngestResult> {
        self.state.read().unwrap().ingests.get(&(run, sequence)).copied()
    }

    pub fn stats(&self) -> CatalogStats {
        let st = self.state.read().unwrap();
        CatalogStats {
            header_count: st.header_count,
            header_bytes: st.header_bytes,
            payload_bytes: st.payload_bytes,
            metadata_ratio: if st.payload_bytes == 0 {
                0.0
            } else {
                st.header_bytes as f64 / st.payload_bytes as f64
            },
        }
    }

    // ---- system-side mutations ----

    pub fn register_file(
        &self,
        logical_name: &str,
        kind: FileKind,
        db_id: Option<u64>,
        size: u64,
        checksum: u32,
        disk_path: &Path,
    ) -> Result<u64, CatalogError> {
        let lease = self.internal_lease("catalog:files")?;
        let result = (|| {
            let file_id = {
                let st = self.state.read().unwrap();
                if st.files.values().any(|f| f.entry.logical_name == logical_name) {
                    return Err(CatalogError::DuplicateName(logical_name.to_string()));
                }
                st.next_file_id + 1
            };
            let entry = FileEntry {
                file_id,
                logical_name: logical_name.to_string(),
                kind,
                db_id,
                size,
                checksum,
                disk_path: disk_path.to_path_buf(),
            };
            self.commit_ops(vec![JournalOp::FileRegister { entry }], |_| Ok(()))?;
            Ok(file_id)
        })();
        let _ = self.leases.release(lease.lease_id, &self.internal);
        result
    }

    pub fn record_tape_copy(&self, file_id: u64, copy: TapeCopy) -> Result<(), CatalogError> {
        let lease = self.internal_lease("catalog:files")?;
        let result = self.commit_ops(vec![JournalOp::FileTapeCopy { file_id, copy }], |st| {
            if st.files.contains_key(&file_id) {
                Ok(())
            } else {
                Err(CatalogError::NotFound(format!("file {file_id}")))
            }
        });
        let _ = self.leases.release(lease.lease_id, &self.internal);
        result
    }

    pub fn seal_run(&self, run: u32) -> Result<(), CatalogError> {
        let lease = self.internal_lease(&format!("run:{run}"))?;
        let result = self.commit_ops(vec![JournalOp::RunSeal { run }], |st| {
            if st.runs.contains_key(&run) {
                Ok(())
            } else {
                Err(CatalogError::NotFound(format!("run {run}")))
            }
        });
        let _ = self.leases.release(lease.lease_id, &self.internal);
        result
    }

    /// Atomically rebinds every raw locator of a sealed run onto the flat
    /// backend file. Readers observe all-old or all-new locators, never a
    /// mix. Idempotent: re-switching an already switched run is a no-op.
    pub fn apply_run_switch(&self, run: u32, flat_file_id: u64) -> Result<bool, CatalogError> {
        let lease = self.internal_lease(&format!("run:{run}"))?;
        let result = (|| {
            {
                let st = self.state.read().unwrap();
                let rs = st
                    .runs
                    .get(&run)
                    .ok_or_else(|| CatalogError::NotFound(format!("run {run}")))?;
                if rs.archived_raw.is_some() {
                    return Ok(false);
                }
                if !rs.sealed {
                    return Err(CatalogError::NotOpen(run as u64));
                }
                let total: u64 = rs.headers.iter().map(|h| h.raw.length as u64).sum();
                let f = st
                    .files
                    .get(&flat_file_id)
                    .ok_or_else(|| CatalogError::NotFound(format!("file {flat_file_id}")))?;
                if f.entry.size != total {
                    return Err(CatalogError::NotFound(format!(
                        "flat file {flat_file_id} size {} != run payload bytes {total}",
                        f.entry.size
                    )));
                }
            }
            self.commit_ops(vec![JournalOp::RunSwitch { run, flat_file_id }], |_| Ok(()))?;
            Ok(true)
        })();
        let _ = self.leases.release(lease.lease_id, &self.internal);
        result
    }

    /// Full structural consistency check; returns human-readable issues.
    pub fn verify(&self) -> Vec<String> {
        let st = self.state.read().unwrap();
        let mut issues = Vec::new();
        if st.pending_create.is_some() {
            issues.push("a database creation is pending".to_string());
        }
        for (run, rs) in &st.runs {
            for (i, h) in rs.headers.iter().enumerate() {
                if h.id.run != *run || h.id.event != i as u64 {
                    issues.push(format!(
                        "run {run}: header at index {i} has id {}",
                        h.id
                    ));
                }
                for loc in std::iter::once(&h.raw).chain(h.dsts.iter().map(|(_, l)| l)) {
                    match st.files.get(&loc.file_id) {
                        None => issues.push(format!(
                            "event {}: locator references unknown file {}",
                            h.id, loc.file_id
                        )),
                        Some(f) if loc.end() > f.entry.size => issues.push(format!(
                            "event {}: locator [{}, {}) exceeds file {} size {}",
                            h.id,
                            loc.offset,
                            loc.end(),
                            loc.file_id,
                            f.entry.size
                        )),
                        _ => {}
                    }
                }
            }
        }
        for ((run, seq), res) in &st.ingests {
            if !st.dbs.contains_key(&res.db_id) {
                issues.push(format!(
                    "ingest mark {run}/{seq} references unknown db {}",
                    res.db_id
                ));
            }
            if !st.files.contains_key(&res.file_id) {
                issues.push(format!(
                    "ingest mark {run}/{seq} references unknown file {}",
                    res.file_id
                ));
            }
        }
        issues
    }

    pub fn compact(&self) -> std::io::Result<()> {
        let mut j = self.journal.lock().unwrap();
        let ops = self.state.read().unwrap().snapshot_ops();
        j.compact(&ops)
    }

    pub fn journal_bytes(&self) -> u64 {
        self.journal.lock().unwrap().appended_bytes()
    }
}

/// Staged catalog mutations under one exclusive lease. Nothing is visible
/// or durable until `commit`; dropping the transaction rolls it back.
pub struct CatalogTxn<'a> {
    catalog: &'a Catalog,
    lease_id: u64,
    resource: String,
    identity: HolderId,
    staged: Vec<JournalOp>,
    run_cursors: HashMap<u32, u64>,
}

impl<'a> CatalogTxn<'a> {
    fn require_resource(&self, resource: &str) -> Result<(), CatalogError> {
        if self.resource == resource {
            Ok(())
        } else {
            Err(CatalogError::LeaseRequired(resource.to_string()))
        }
    }

    pub fn stage_put_headers(
        &mut self,
        db_id: u64,
        headers: Vec<EventHeader>,
    ) -> Result<u64, CatalogError> {
        self.require_resource(&format!("db:{db_id}"))?;
        if headers.is_empty() {
            return Ok(0);
        }
        let run = headers[0].id.run;
        {
            let st = self.catalog.state.read().unwrap();
            let db = st
                .dbs
                .get(&db_id)
                .ok_or_else(|| CatalogError::NotFound(format!("db {db_id}")))?;
            if db.state != DbState::Open {
                return Err(CatalogError::NotOpen(db_id));
            }
            if db.owner_uid != self.identity.uid {
                return Err(CatalogError::PermissionDenied {
                    need_uid: db.owner_uid,
                    have_uid: self.identity.uid,
                });
            }
            if st.runs.get(&run).map(|r| r.sealed).unwrap_or(false) {
                return Err(CatalogError::RunSealed(run));
            }
            let cursor = self
                .run_cursors
                .get(&run)
                .copied()
                .unwrap_or_else(|| st.run_len(run));
            let mut expected = cursor;
            for h in &headers {
                if h.id.run != run {
                    return Err(CatalogError::SequenceGap {
                        run,
                        expected,
                        got: h.id.event,
                    });
                }
                if h.id.event != expected {
                    return Err(CatalogError::SequenceGap {
                        run,
                        expected,
                        got: h.id.event,
                    });
                }
                expected += 1;
            }
            self.run_cursors.insert(run, expected);
        }
        let n = headers.len() as u64;
        self.staged.push(JournalOp::PutBatch {
            db_id,
            run,
            headers,
        });
        Ok(n)
    }

    pub fn stage_attach_dst(
        &mut self,
        id: EventId,
        version: &str,
        locator: StorageLocator,
    ) -> Result<(), CatalogError> {
        self.require_resource(&format!("run:{}", id.run))?;
        {
            let st = self.catalog.state.read().unwrap();
            let h = st
                .runs
                .get(&id.run)
                .and_then(|r| r.headers.get(id.event as usize))
                .ok_or_else(|| CatalogError::NotFound(format!("event {id}")))?;
            if h.dst(version).is_some() {
                return Err(CatalogError::VersionAlreadyBound {
                    id,
                    version: version.to_string(),
                });
            }
        }
        // Also reject a double-bind staged earlier in this same txn.
        let dup = self.staged.iter().any(|op| {
            matches!(op, JournalOp::AttachDst { id: i, version: v, .. } if *i == id && v == version)
        });
        if dup {
            return Err(CatalogError::VersionAlreadyBound {
                id,
                version: version.to_string(),
            });
        }
        self.staged.push(JournalOp::AttachDst {
            id,
            version: version.to_string(),
            locator,
        });
        Ok(())
    }

    pub fn stage_ingest_mark(
        &mut self,
        run: u32,
        sequence: u32,
        result: IngestResult,
    ) -> Result<(), CatalogError> {
        self.staged.push(JournalOp::IngestMark {
            run,
            sequence,
            result,
        });
        Ok(())
    }

    pub fn stage_seal_database(&mut self, db_id: u64) -> Result<(), CatalogError> {
        self.require_resource(&format!("db:{db_id}"))?;
        self.staged.push(JournalOp::DbSeal { db_id });
        Ok(())
    }

    /// Validates the lease and sequence continuity once more under the
    /// commit lock, then journals all staged ops as one atomic record and
    /// applies them. Any failure leaves the catalog untouched.
    pub fn commit(self) -> Result<(), CatalogError> {
        if self.staged.is_empty() {
            return Ok(());
        }
        let CatalogTxn {
            catalog,
            lease_id,
            identity,
            staged,
            ..
        } = self;
        catalog
            .leases
            .check_live(lease_id, &identity, now_ms())?;
        catalog.commit_ops(staged.clone(), |st| {
            // Re-validate run continuity against the committed state: a
            // competing commit may have moved the cursor since staging.
            let mut cursors: HashMap<u32, u64> = HashMap::new();
            for op in &staged {
                match op {
                    JournalOp::PutBatch { run, headers, .. } => {
                        let cursor = cursors
                            .entry(*run)
                            .or_insert_with(|| st.run_len(*run));
                        for h in headers {
                            if h.id.event != *cursor {
                                return Err(CatalogError::SequenceGap {
                                    run: *run,
                                    expected: *cursor,
                                    got: h.id.event,
                                });
                            }
                            *cursor += 1;
                        }
                    }
                    JournalOp::AttachDst { id, version, .. } => {
                        let bound = st
                            .runs
                            .get(&id.run)
                            .and_then(|r| r.headers.get(id.event as usize))
                            .map(|h| h.dst(version).is_some())
                            .unwrap_or(false);
                        if bound {
                            return Err(CatalogError::VersionAlreadyBound {
                                id: *id,
                                version: version.clone(),
                            });
                        }
                    }
                    _ => {}
                }
            }
            Ok(())
        })
    }
}
