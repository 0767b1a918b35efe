//! The two payload backends behind one uniform write/read surface.
//!
//! ContainerA is a page-structured container: every object carries a
//! descriptor, occupies a page-rounded extent sized by a fill target, and
//! trails per-page records plus structural filler. The structural overhead
//! (~30% of payload bytes at the default profile) is emergent from the page
//! arithmetic, and the filler's entropy mix is calibrated so that the
//! overhead shrinks to ~6% once files are compressed onto tape.
//!
//! FlatB is the post-migration design: payloads concatenated back to back
//! with no framing at all; every byte of structure lives in the catalog
//! locators.
//!
//! Both backends store each payload contiguously, so any payload is
//! addressable as (file_id, offset, length) and byte-range serving never
//! needs to understand the container format.

mod container;
mod flat;

pub use container::{ContainerParams, ContainerWriter, DESCRIPTOR_LEN};
pub use flat::FlatWriter;

use std::fs::File;
use std::io;
use std::os::unix::fs::FileExt;
use std::path::Path;

use thiserror::Error;

use crate::catalog::{BackendKind, StorageLocator};
use crate::codec::crc32;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("zero-length payloads are not storable")]
    ZeroLength,
    #[error("backend write failed: {0}")]
    WriteFailed(String),
    #[error("checksum mismatch reading {context}")]
    ChecksumMismatch { context: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Summary returned when a backend file is sealed.
#[derive(Debug, Clone, Copy)]
pub struct FileSummary {
    pub file_size: u64,
    pub payload_bytes: u64,
    pub object_count: u64,
}

/// Append handle for either backend; `write_payload` returns the byte range
/// the payload landed at.
pub enum PayloadWriter {
    Container(ContainerWriter),
    Flat(FlatWriter),
}

impl PayloadWriter {
    pub fn create(
        backend: BackendKind,
        path: &Path,
        db_id: u64,
        params: &ContainerParams,
    ) -> io::Result<Self> {
        Ok(match backend {
            BackendKind::ContainerA => {
                Self::Container(ContainerWriter::create(path, db_id, params.clone())?)
            }
            BackendKind::FlatB => Self::Flat(FlatWriter::create(path)?),
        })
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            Self::Container(_) => BackendKind::ContainerA,
            Self::Flat(_) => BackendKind::FlatB,
        }
    }

    pub fn write_payload(&mut self, payload: &[u8]) -> Result<(u64, u32), BackendError> {
        if payload.is_empty() {
            return Err(BackendError::ZeroLength);
        }
        match self {
            Self::Container(w) => w.append(payload).map_err(BackendError::from),
            Self::Flat(w) => w.append(payload).map_err(BackendError::from),
        }
    }

    pub fn file_size(&self) -> u64 {
        match self {
            Self::Container(w) => w.file_size(),
            Self::Flat(w) => w.file_size(),
        }
    }

    pub fn payload_bytes(&self) -> u64 {
        match self {
            Self::Container(w) => w.payload_bytes(),
            Self::Flat(w) => w.payload_bytes(),
        }
    }

    pub fn whole_file_crc(&self) -> u32 {
        match self {
            Self::Container(w) => w.whole_file_crc(),
            Self::Flat(w) => w.whole_file_crc(),
        }
    }

    pub fn finish(self) -> io::Result<FileSummary> {
        match self {
            Self::Container(w) => w.finish(),
            Self::Flat(w) => w.finish(),
        }
    }
}

/// Reads an arbitrary byte range of a backend file.
pub fn read_range(path: &Path, offset: u64, length: u32) -> io::Result<Vec<u8>> {
    let f = File::open(path)?;
    let mut buf = vec![0u8; length as usize];
    f.read_exact_at(&mut buf, offset)?;
    Ok(buf)
}

/// Reads the payload a locator addresses and verifies its checksum.
pub fn read_locator(path: &Path, loc: &StorageLocator) -> Result<Vec<u8>, BackendError> {
    let bytes = read_range(path, loc.offset, loc.length)?;
    if crc32(&bytes) != loc.checksum {
        return Err(BackendError::ChecksumMismatch {
            context: format!("file {} at [{}, {})", loc.file_id, loc.offset, loc.end()),
        });
    }
    Ok(bytes)
}

/// The page-aligned byte span a container read actually touches; flat reads
/// touch exactly the requested range. Serving charges this against the
/// server's bandwidth budget.
pub fn service_span(kind: crate::catalog::FileKind, offset: u64, length: u32, page_size: u32, file_size: u64) -> u64 {
    match kind {
        crate::catalog::FileKind::Container => {
            let page = page_size as u64;
            let lo = (offset / page) * page;
            let hi = ((offset + length as u64).div_ceil(page)) * page;
            hi.min(file_size).saturating_sub(lo)
        }
        _ => length as u64,
    }
}
