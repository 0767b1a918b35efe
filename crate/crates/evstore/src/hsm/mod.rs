//! Simulated hierarchical storage manager: a disk cache pool plus the
//! simulated tape tier. Owns the per-file state machine
//!
//! ```text
//! DiskOnly -> MigratingToTape -> OnTapeCached -> TapeOnly
//!                 |  (verify fail)    ^              |
//!                 +-> DiskOnly        +-- Recalling <+
//! ```
//!
//! Disk bytes are deleted only from `OnTapeCached` (never from `DiskOnly`
//! or `MigratingToTape`), so at every instant a registered file is
//! recoverable from disk or from a verified tape copy. The file namespace
//! and tape copies persist through the catalog journal; tiering state is
//! re-derived on open from what is actually present on disk and tape.

pub mod tape;

pub use tape::{TapeControl, TapeError, TapeLibrary, TapeOptions};

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, FileKind, TapeCopy};
use crate::codec::{crc32, now_ms};
use crate::config::Config;

#[derive(Debug, Error)]
pub enum HsmError {
    #[error("checksum mismatch registering '{0}'")]
    ChecksumMismatch(String),
    #[error("file {0} not found")]
    NotFound(u64),
    #[error("file {file_id} not evictable: {reason}")]
    NotEvictable { file_id: u64, reason: String },
    #[error("tape write failed for file {file_id}: {detail}")]
    TapeWriteFailed { file_id: u64, detail: String },
    #[error("recall failed for file {file_id}: {detail}")]
    RecallFailed { file_id: u64, detail: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileState {
    DiskOnly,
    MigratingToTape,
    OnTapeCached,
    TapeOnly,
    Recalling,
}

impl FileState {
    pub fn label(self) -> &'static str {
        match self {
            FileState::DiskOnly => "disk-only",
            FileState::MigratingToTape => "migrating",
            FileState::OnTapeCached => "tape+cached",
            FileState::TapeOnly => "tape-only",
            FileState::Recalling => "recalling",
        }
    }

    fn disk_resident(self) -> bool {
        !matches!(self, FileState::TapeOnly | FileState::Recalling)
    }
}

/// HSM view of a managed file.
#[derive(Debug, Clone)]
pub struct ManagedFile {
    pub file_id: u64,
    pub logical_name: String,
    pub size: u64,
    pub checksum: u32,
    pub kind: FileKind,
    pub db_id: Option<u64>,
    pub state: FileState,
    pub disk_path: PathBuf,
    pub tape_copy: Option<TapeCopy>,
    pub last_access: u64,
    pub pinned_until: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HsmStats {
    pub files: u64,
    pub disk_only: u64,
    pub migrating: u64,
    pub on_tape_cached: u64,
    pub tape_only: u64,
    pub recalling: u64,
    pub cache_used: u64,
    pub cache_capacity: u64,
    /// Raw bytes of files still awaiting a tape copy.
    pub tape_backlog_bytes: u64,
    /// Raw bytes of files safely on tape (the cumulative Figure-2 metric).
    pub raw_bytes_on_tape: u64,
    pub stored_bytes_on_tape: u64,
    /// stored / raw over migrated files.
    pub compression_ratio_observed: f64,
    /// Excess tape the container structure costs over bare payloads, after
    /// compression; 0 when nothing tracked.
    pub overhead_on_tape: f64,
    pub recalls_performed: u64,
}

#[derive(Debug, Clone)]
pub struct HsmOptions {
    pub cache_capacity: u64,
    pub pin_window_ms: u64,
    pub payload_overhead_tracking: bool,
    pub recall_retries: u32,
}

impl From<&Config> for HsmOptions {
    fn from(cfg: &Config) -> Self {
        Self {
            cache_capacity: cfg.cache_capacity,
            pin_window_ms: cfg.pin_window_ms,
            payload_overhead_tracking: cfg.tape_payload_overhead_tracking,
            recall_retries: cfg.recall_retries,
        }
    }
}

struct HsmState {
    files: std::collections::BTreeMap<u64, ManagedFile>,
    pending: VecDeque<u64>,
    transitions: Vec<(u64, FileState, FileState)>,
}

impl HsmState {
    fn transition(&mut self, file_id: u64, to: FileState) {
        if let Some(f) = self.files.get_mut(&file_id) {
            let from = f.state;
            f.state = to;
            self.transitions.push((file_id, from, to));
        }
    }
}

pub struct Hsm {
    catalog: Arc<Catalog>,
    tape: TapeLibrary,
    state: Mutex<HsmState>,
    recall_cv: Condvar,
    cache_dir: PathBuf,
    opts: HsmOptions,
    recalls: AtomicU64,
}

impl Hsm {
    pub fn open(
        catalog: Arc<Catalog>,
        cache_dir: &Path,
        tape_dir: &Path,
        opts: HsmOptions,
        tape_opts: TapeOptions,
    ) -> std::io::Result<Arc<Self>> {
        std::fs::create_dir_all(cache_dir)?;
        let tape = TapeLibrary::open(tape_dir, tape_opts)?;
        let mut state = HsmState {
            files: Default::default(),
            pending: VecDeque::new(),
            transitions: Vec::new(),
        };
        for (entry, copy) in catalog.files_snapshot() {
            if let Some(c) = &copy {
                tape.note_existing(c);
            }
            let staging = cache_dir.join(format!("f{}.dat", entry.file_id));
            let disk_path = if staging.exists() {
                staging
            } else {
                entry.disk_path.clone()
            };
            let on_disk = disk_path.exists();
            let state_now = match (&copy, on_disk) {
                (Some(_), true) => FileState::OnTapeCached,
                (Some(_), false) => FileState::TapeOnly,
                (None, _) => FileState::DiskOnly,
            };
            if state_now == FileState::DiskOnly {
                state.pending.push_back(entry.file_id);
            }
            state.files.insert(
                entry.file_id,
                ManagedFile {
                    file_id: entry.file_id,
                    logical_name: entry.logical_name,
                    size: entry.size,
                    checksum: entry.checksum,
                    kind: entry.kind,
                    db_id: entry.db_id,
                    state: state_now,
                    disk_path,
                    tape_copy: copy,
                    last_access: now_ms(),
                    pinned_until: 0,
                },
            );
        }
        Ok(Arc::new(Self {
            catalog,
            tape,
            state: Mutex::new(state),
            recall_cv: Condvar::new(),
            cache_dir: cache_dir.to_path_buf(),
            opts,
            recalls: AtomicU64::new(0),
        }))
    }

    pub fn tape_control(&self) -> Arc<TapeControl> {
        self.tape.control()
    }

    /// A zero pin window disables pinning entirely.
    fn pin_deadline(&self) -> u64 {
        if self.opts.pin_window_ms == 0 {
            0
        } else {
            now_ms() + self.opts.pin_window_ms
        }
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    /// Takes a completed file under HSM control. The file must exist with
    /// the stated size and checksum; from here on the HSM owns its
    /// placement.
    pub fn register_file(
        &self,
        logical_name: &str,
        disk_path: &Path,
        size: u64,
        checksum: u32,
        kind: FileKind,
        db_id: Option<u64>,
    ) -> Result<u64, HsmError> {
        verify_disk_copy(logical_name, disk_path, size, checksum)?;
        let file_id =
            self.catalog
                .register_file(logical_name, kind, db_id, size, checksum, disk_path)?;
        self.adopt_file(file_id)?;
        Ok(file_id)
    }

    /// Takes an already catalog-registered file under HSM control; the
    /// catalog entry carries size, checksum, and path. Ingest registers
    /// with the catalog first (headers want the file id), then hands the
    /// file over here.
    pub fn adopt_file(&self, file_id: u64) -> Result<(), HsmError> {
        let entry = self
            .catalog
            .file(file_id)
            .ok_or(HsmError::NotFound(file_id))?;
        verify_disk_copy(
            &entry.logical_name,
            &entry.disk_path,
            entry.size,
            entry.checksum,
        )?;
        let mut st = self.state.lock().unwrap();
        if st.files.contains_key(&file_id) {
            return Ok(());
        }
        st.files.insert(
            file_id,
            ManagedFile {
                file_id,
                logical_name: entry.logical_name,
                size: entry.size,
                checksum: entry.checksum,
                kind: entry.kind,
                db_id: entry.db_id,
                state: FileState::DiskOnly,
                disk_path: entry.disk_path,
                tape_copy: None,
                last_access: now_ms(),
                pinned_until: 0,
            },
        );
        st.pending.push_back(file_id);
        Ok(())
    }

    /// Next file awaiting migration (FIFO by registration) and its size.
    pub fn peek_pending(&self) -> Option<(u64, u64)> {
        let st = self.state.lock().unwrap();
        st.pending.front().and_then(|id| {
            st.files
                .get(id)
                .filter(|f| f.state == FileState::DiskOnly)
                .map(|f| (f.file_id, f.size))
        })
    }

    /// Migrates the head of the queue; `Ok(None)` when nothing is pending.
    /// On a verification failure the file returns to DiskOnly at the front
    /// of the queue and the error is surfaced.
    pub fn migrate_next(&self) -> Result<Option<u64>, HsmError> {
        let (file_id, path, checksum, kind) = {
            let mut st = self.state.lock().unwrap();
            loop {
                let Some(id) = st.pending.pop_front() else {
                    return Ok(None);
                };
                let Some(f) = st.files.get(&id) else { continue };
                if f.state != FileState::DiskOnly {
                    continue;
                }
                let out = (id, f.disk_path.clone(), f.checksum, f.kind);
                st.transition(id, FileState::MigratingToTape);
                break out;
            }
        };

        let spans_owned;
        let spans: Option<&[(u64, u32)]> =
            if self.opts.payload_overhead_tracking && kind == FileKind::Container {
                spans_owned = self.catalog.payload_spans(file_id);
                Some(&spans_owned)
            } else {
                None
            };

        match self.tape.write_file(&path, checksum, spans) {
            Ok(copy) => {
                self.catalog.record_tape_copy(file_id, copy)?;
                let mut st = self.state.lock().unwrap();
                if let Some(f) = st.files.get_mut(&file_id) {
                    f.tape_copy = Some(copy);
                    f.pinned_until = self.pin_deadline();
                }
                st.transition(file_id, FileState::OnTapeCached);
                Ok(Some(file_id))
            }
            Err(e) => {
                let mut st = self.state.lock().unwrap();
                st.transition(file_id, FileState::DiskOnly);
                st.pending.push_front(file_id);
                Err(HsmError::TapeWriteFailed {
                    file_id,
                    detail: e.to_string(),
                })
            }
        }
    }

    /// Migrates up to `max_files`, FIFO; returns what made it to tape.
    pub fn migrate_pending(&self, max_files: usize) -> (Vec<u64>, Vec<HsmError>) {
        let mut migrated = Vec::new();
        let mut failures = Vec::new();
        for _ in 0..max_files {
            match self.migrate_next() {
                Ok(Some(id)) => migrated.push(id),
                Ok(None) => break,
                Err(e) => {
                    failures.push(e);
                    break;
                }
            }
        }
        (migrated, failures)
    }

    pub fn evict(&self, file_id: u64) -> Result<(), HsmError> {
        self.evict_at(file_id, now_ms())
    }

    /// Drops the disk copy of an on-tape file past its pin window.
    pub fn evict_at(&self, file_id: u64, now: u64) -> Result<(), HsmError> {
        let mut st = self.state.lock().unwrap();
        let f = st.files.get(&file_id).ok_or(HsmError::NotFound(file_id))?;
        if f.state != FileState::OnTapeCached {
            return Err(HsmError::NotEvictable {
                file_id,
                reason: format!("state is {}", f.state.label()),
            });
        }
        if now <= f.pinned_until {
            return Err(HsmError::NotEvictable {
                file_id,
                reason: "still pinned".into(),
            });
        }
        let path = f.disk_path.clone();
        std::fs::remove_file(&path)?;
        st.transition(file_id, FileState::TapeOnly);
        Ok(())
    }

    /// Evicts least-recently-accessed unpinned cached files until
    /// `target_free` bytes are free or nothing is eligible; returns bytes
    /// freed.
    pub fn cache_gc(&self, target_free: u64) -> u64 {
        let now = now_ms();
        let mut freed = 0u64;
        loop {
            let free = self
                .opts
                .cache_capacity
                .saturating_sub(self.cache_used());
            if free >= target_free {
                return freed;
            }
            let candidate = {
                let st = self.state.lock().unwrap();
                st.files
                    .values()
                    .filter(|f| f.state == FileState::OnTapeCached && now > f.pinned_until)
                    .min_by_key(|f| f.last_access)
                    .map(|f| (f.file_id, f.size))
            };
            let Some((id, size)) = candidate else {
                return freed;
            };
            match self.evict_at(id, now) {
                Ok(()) => freed += size,
                Err(_) => return freed,
            }
        }
    }

    /// The transparency primitive: returns a readable disk path, recalling
    /// from tape when needed. Concurrent callers for one file share a
    /// single recall.
    pub fn ensure_online(&self, file_id: u64) -> Result<PathBuf, HsmError> {
        let mut st = self.state.lock().unwrap();
        loop {
            let f = st.files.get_mut(&file_id).ok_or(HsmError::NotFound(file_id))?;
            match f.state {
                s if s.disk_resident() => {
                    f.last_access = now_ms();
                    return Ok(f.disk_path.clone());
                }
                FileState::Recalling => {
                    st = self.recall_cv.wait(st).unwrap();
                }
                FileState::TapeOnly => {
                    let copy = f.tape_copy.expect("TapeOnly implies tape copy");
                    let size = f.size;
                    st.transition(file_id, FileState::Recalling);
                    drop(st);

                    let staging = self.cache_dir.join(format!("f{file_id}.dat"));
                    let mut result = Err(TapeError::Verify("no attempt".into()));
                    for _ in 0..=self.opts.recall_retries {
                        result = self.tape.read_file(&copy, size, &staging);
                        if result.is_ok() {
                            break;
                        }
                    }

                    let mut st2 = self.state.lock().unwrap();
                    match result {
                        Ok(()) => {
                            self.recalls.fetch_add(1, Ordering::SeqCst);
                            if let Some(f) = st2.files.get_mut(&file_id) {
                                f.disk_path = staging.clone();
                                f.last_access = now_ms();
                                f.pinned_until = self.pin_deadline();
                            }
                            st2.transition(file_id, FileState::OnTapeCached);
                            self.recall_cv.notify_all();
                            return Ok(staging);
                        }
                        Err(e) => {
                            st2.transition(file_id, FileState::TapeOnly);
                            self.recall_cv.notify_all();
                            return Err(HsmError::RecallFailed {
                                file_id,
                                detail: e.to_string(),
                            });
                        }
                    }
                }
                FileState::MigratingToTape | FileState::DiskOnly | FileState::OnTapeCached => {
                    unreachable!("disk_resident covered above")
                }
            }
        }
    }

    pub fn file(&self, file_id: u64) -> Option<ManagedFile> {
        self.state.lock().unwrap().files.get(&file_id).cloned()
    }

    pub fn files(&self) -> Vec<ManagedFile> {
        self.state.lock().unwrap().files.values().cloned().collect()
    }

    pub fn cache_used(&self) -> u64 {
        let st = self.state.lock().unwrap();
        st.files
            .values()
            .filter(|f| f.state.disk_resident())
            .map(|f| f.size)
            .sum()
    }

    /// Raw bytes still awaiting a verified tape copy.
    pub fn backlog_bytes(&self) -> u64 {
        let st = self.state.lock().unwrap();
        st.files
            .values()
            .filter(|f| f.tape_copy.is_none())
            .map(|f| f.size)
            .sum()
    }

    /// Bytes the cache holds beyond its capacity; migration pressure.
    pub fn cache_pressure(&self) -> u64 {
        self.cache_used().saturating_sub(self.opts.cache_capacity)
    }

    pub fn stats(&self) -> HsmStats {
        let st = self.state.lock().unwrap();
        let mut s = HsmStats {
            cache_capacity: self.opts.cache_capacity,
            recalls_performed: self.recalls.load(Ordering::SeqCst),
            ..Default::default()
        };
        let mut container_stored = 0u64;
        let mut container_payload_only = 0u64;
        for f in st.files.values() {
            s.files += 1;
            match f.state {
                FileState::DiskOnly => s.disk_only += 1,
                FileState::MigratingToTape => s.migrating += 1,
                FileState::OnTapeCached => s.on_tape_cached += 1,
                FileState::TapeOnly => s.tape_only += 1,
                FileState::Recalling => s.recalling += 1,
            }
            if f.state.disk_resident() {
                s.cache_used += f.size;
            }
            match &f.tape_copy {
                Some(c) => {
                    s.raw_bytes_on_tape += f.size;
                    s.stored_bytes_on_tape += c.stored_bytes;
                    if let Some(p) = c.payload_only_stored {
                        container_stored += c.stored_bytes;
                        container_payload_only += p;
                    }
                }
                None => s.tape_backlog_bytes += f.size,
            }
        }
        if s.raw_bytes_on_tape > 0 {
            s.compression_ratio_observed =
                s.stored_bytes_on_tape as f64 / s.raw_bytes_on_tape as f64;
        }
        if container_payload_only > 0 {
            s.overhead_on_tape =
                container_stored as f64 / container_payload_only as f64 - 1.0;
        }
        s
    }

    /// Durability audit: every managed file must be readable from disk or
    /// covered by a verified tape copy.
    pub fn verify_durability(&self) -> Vec<String> {
        let files = self.files();
        let mut issues = Vec::new();
        for f in files {
            let disk_ok = f.state.disk_resident() && f.disk_path.exists();
            let tape_ok = f.tape_copy.is_some();
            if !disk_ok && !tape_ok {
                issues.push(format!(
                    "file {} ({}) has neither disk bytes nor a tape copy",
                    f.file_id, f.logical_name
                ));
            }
        }
        issues
    }

    /// Observed state transitions, for the state-machine property checks.
    pub fn transition_log(&self) -> Vec<(u64, FileState, FileState)> {
        self.state.lock().unwrap().transitions.clone()
    }
}

fn verify_disk_copy(
    logical_name: &str,
    disk_path: &Path,
    size: u64,
    checksum: u32,
) -> Result<(), HsmError> {
    let meta = std::fs::metadata(disk_path)?;
    if meta.len() != size {
        return Err(HsmError::ChecksumMismatch(format!(
            "{logical_name}: size {} != declared {size}",
            meta.len()
        )));
    }
    let bytes = std::fs::read(disk_path)?;
    if crc32(&bytes) != checksum {
        return Err(HsmError::ChecksumMismatch(logical_name.to_string()));
    }
    Ok(())
}

/// The legal transition relation of the file state machine.
pub fn transition_allowed(from: FileState, to: FileState) -> bool {
    use FileState::*;
    matches!(
        (from, to),
        (DiskOnly, MigratingToTape)
            | (MigratingToTape, OnTapeCached)
            | (MigratingToTape, DiskOnly)
            | (OnTapeCached, TapeOnly)
            | (TapeOnly, Recalling)
            | (Recalling, OnTapeCached)
            | (Recalling, TapeOnly)
    )
}
