//! Catalog domain types: event identity, payload locators, headers, and the
//! database (container) registry entries.

use std::fmt;

use crate::codec::{ByteReader, ByteWriter};

/// Backend holding a payload: the page-structured container format or the
/// flat filename+offset format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BackendKind {
    ContainerA,
    FlatB,
}

impl BackendKind {
    pub fn as_u8(self) -> u8 {
        match self {
            BackendKind::ContainerA => 1,
            BackendKind::FlatB => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(BackendKind::ContainerA),
            2 => Some(BackendKind::FlatB),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BackendKind::ContainerA => "containerA",
            BackendKind::FlatB => "flatB",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Globally unique event identity: run number plus a dense per-run event
/// number assigned in ingestion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId {
    pub run: u32,
    pub event: u64,
}

impl EventId {
    pub fn new(run: u32, event: u64) -> Self {
        Self { run, event }
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.run, self.event)
    }
}

/// The universal payload address: backend, catalog-assigned file id, byte
/// range, and the CRC32 of exactly that range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageLocator {
    pub backend: BackendKind,
    pub file_id: u64,
    pub offset: u64,
    pub length: u32,
    pub checksum: u32,
}

impl StorageLocator {
    pub const ENCODED_LEN: usize = 1 + 8 + 8 + 4 + 4;

    pub fn encode(&self, w: &mut ByteWriter) {
        w.put_u8(self.backend.as_u8());
        w.put_u64(self.file_id);
        w.put_u64(self.offset);
        w.put_u32(self.length);
        w.put_u32(self.checksum);
    }

    pub fn decode(r: &mut ByteReader<'_>) -> std::io::Result<Self> {
        let backend = BackendKind::from_u8(r.get_u8()?).ok_or_else(|| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, "unknown backend tag")
        })?;
        Ok(Self {
            backend,
            file_id: r.get_u64()?,
            offset: r.get_u64()?,
            length: r.get_u32()?,
            checksum: r.get_u32()?,
        })
    }

    pub fn end(&self) -> u64 {
        self.offset + self.length as u64
    }
}

/// Per-event metadata record: the always-online index entry. Holds the RAW
/// locator and any number of per-version DST locators; a version binding is
/// immutable once written.
#[derive(Debug, Clone, PartialEq)]
pub struct EventHeader {
    pub id: EventId,
    pub raw: StorageLocator,
    pub dsts: Vec<(String, StorageLocator)>,
    pub ingest_time: u64,
    pub trigger_tag: u32,
}

impl EventHeader {
    pub fn dst(&self, version: &str) -> Option<&StorageLocator> {
        self.dsts
            .iter()
            .find(|(v, _)| v == version)
            .map(|(_, loc)| loc)
    }

    /// Size of the serialized header record; this is what catalog stats
    /// count as metadata bytes.
    pub fn encoded_len(&self) -> u64 {
        let mut w = ByteWriter::with_capacity(64);
        self.encode(&mut w);
        w.len() as u64
    }

    pub fn encode(&self, w: &mut ByteWriter) {
        w.put_u32(self.id.run);
        w.put_u64(self.id.event);
        self.raw.encode(w);
        w.put_u64(self.ingest_time);
        w.put_u32(self.trigger_tag);
        w.put_u8(self.dsts.len() as u8);
        for (version, loc) in &self.dsts {
            w.put_str(version);
            loc.encode(w);
        }
    }

    pub fn decode(r: &mut ByteReader<'_>) -> std::io::Result<Self> {
        let run = r.get_u32()?;
        let event = r.get_u64()?;
        let raw = StorageLocator::decode(r)?;
        let ingest_time = r.get_u64()?;
        let trigger_tag = r.get_u32()?;
        let n = r.get_u8()? as usize;
        let mut dsts = Vec::with_capacity(n);
        for _ in 0..n {
            let version = r.get_str()?;
            let loc = StorageLocator::decode(r)?;
            dsts.push((version, loc));
        }
        Ok(Self {
            id: EventId::new(run, event),
            raw,
            dsts,
            ingest_time,
            trigger_tag,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbState {
    Creating,
    Open,
    Sealed,
}

impl DbState {
    pub fn label(self) -> &'static str {
        match self {
            DbState::Creating => "creating",
            DbState::Open => "open",
            DbState::Sealed => "sealed",
        }
    }
}

/// Registry entry for one container database: name, placement affinity used
/// by catalog-side load balancing, and lifecycle state.
#[derive(Debug, Clone)]
pub struct DatabaseEntry {
    pub db_id: u64,
    pub name: String,
    /// Endpoint hint consumed by the CatalogAffinity balance strategy.
    pub server_affinity: String,
    pub state: DbState,
    pub created_at: u64,
    pub owner_uid: u32,
}

/// What a managed file holds; drives page-aligned serving and payload-span
/// accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Container,
    Flat,
    Other,
}

impl FileKind {
    pub fn as_u8(self) -> u8 {
        match self {
            FileKind::Container => 1,
            FileKind::Flat => 2,
            FileKind::Other => 3,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(FileKind::Container),
            2 => Some(FileKind::Flat),
            3 => Some(FileKind::Other),
            _ => None,
        }
    }
}

/// Catalog-side identity of a registered payload file. Tiering state lives
/// in the HSM; this is the durable namespace entry.
#[derive(Debug, Clone)]
pub struct FileEntry {
    pub file_id: u64,
    pub logical_name: String,
    pub kind: FileKind,
    pub db_id: Option<u64>,
    pub size: u64,
    pub checksum: u32,
    pub disk_path: std::path::PathBuf,
}

/// Client identity: numeric uid (the protection domain) plus a free-form
/// process tag for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HolderId {
    pub uid: u32,
    pub tag: String,
}

impl HolderId {
    pub fn new(uid: u32, tag: impl Into<String>) -> Self {
        Self {
            uid,
            tag: tag.into(),
        }
    }

    /// Identity of the current process.
    pub fn local(tag: impl Into<String>) -> Self {
        let uid = unsafe { libc::getuid() };
        Self::new(uid, tag)
    }
}

impl fmt::Display for HolderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "uid={}({})", self.uid, self.tag)
    }
}
