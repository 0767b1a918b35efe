//! Client-side access: locator resolution through the catalog, server
//! choice under either balance strategy, retry across endpoints, run
//! scans, and query splitting.
//!
//! The two strategies mirror the two eras of the production system:
//! CatalogAffinity resolves purely from the owning database's affinity
//! hint recorded in the catalog; ClientLibrary resolves purely client-side
//! by round-robin over the endpoint list (the library-linked balancer).
//! Flat-backend files have no owning container database, so affinity
//! quietly degrades to the client-side strategy for them.

use std::collections::HashMap;
use std::io::Write;
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::catalog::{Catalog, EventId, StorageLocator};
use crate::codec::crc32;

use super::proto::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerEndpoint {
    pub label: String,
    pub addr: SocketAddr,
    pub weight: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalanceStrategy {
    CatalogAffinity,
    ClientLibrary,
}

#[derive(Debug, Clone)]
pub struct ChosenServer {
    pub endpoint: ServerEndpoint,
    /// Set when the affinity endpoint was unreachable and the choice fell
    /// back to the client-side strategy.
    pub fallback_warning: bool,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("no endpoints available")]
    NoEndpoints,
    #[error("event not found: {0}")]
    NotFound(String),
    #[error("version '{0}' is not bound for this event")]
    VersionUnbound(String),
    #[error("run {0} is not sealed")]
    RunNotSealed(u32),
    #[error("no such file on server")]
    NoSuchFile,
    #[error("requested range out of bounds")]
    RangeOutOfBounds,
    #[error("recall failed on server")]
    RecallFailed,
    #[error("permission denied")]
    PermissionDenied,
    #[error("malformed request")]
    BadRequest,
    #[error("server error status {0}")]
    Status(u8),
    #[error("payload checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error("transport failed after {retries} retries: {detail}")]
    Transport { retries: u32, detail: String },
}

fn status_error(status: u8) -> ServeError {
    match status {
        STATUS_NO_SUCH_FILE => ServeError::NoSuchFile,
        STATUS_RANGE_OUT_OF_BOUNDS => ServeError::RangeOutOfBounds,
        STATUS_RECALL_FAILED => ServeError::RecallFailed,
        STATUS_PERMISSION_DENIED => ServeError::PermissionDenied,
        STATUS_BAD_REQUEST => ServeError::BadRequest,
        other => ServeError::Status(other),
    }
}

/// What to read for an event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PayloadKind {
    Raw,
    Dst(String),
}

#[derive(Debug)]
pub struct ReadOutcome {
    pub bytes: Vec<u8>,
    pub retries: u32,
}

#[derive(Debug, Default)]
pub struct ScanResult {
    pub events_read: u64,
    pub bytes_read: u64,
    pub elapsed: Duration,
    /// (event_number, error) for events skipped and counted, never
    /// silently dropped.
    pub failures: Vec<(u64, String)>,
}

pub struct DataClient {
    catalog: std::sync::Arc<Catalog>,
    endpoints: Vec<ServerEndpoint>,
    strategy: BalanceStrategy,
    rr_cursor: usize,
    conns: HashMap<SocketAddr, TcpStream>,
    down_until: HashMap<SocketAddr, Instant>,
    uid: u32,
    retries: u32,
    max_single_read: u32,
}

impl DataClient {
    pub fn new(
        catalog: std::sync::Arc<Catalog>,
        endpoints: Vec<ServerEndpoint>,
        strategy: BalanceStrategy,
        retries: u32,
        max_single_read: u32,
    ) -> Self {
        Self {
            catalog,
            endpoints,
            strategy,
            rr_cursor: 0,
            conns: HashMap::new(),
            down_until: HashMap::new(),
            uid: unsafe { libc::getuid() },
            retries,
            max_single_read,
        }
    }

    fn endpoint_up(&self, ep: &ServerEndpoint) -> bool {
        match self.down_until.get(&ep.addr) {
            Some(t) => Instant::now() >= *t,
            None => true,
        }
    }

    fn round_robin(&mut self) -> Result<ServerEndpoint, ServeError> {
        if self.endpoints.is_empty() {
            return Err(ServeError::NoEndpoints);
        }
        for _ in 0..self.endpoints.len() {
            let ep = self.endpoints[self.rr_cursor % self.endpoints.len()].clone();
            self.rr_cursor += 1;
            if self.endpoint_up(&ep) {
                return Ok(ep);
            }
        }
        // Everything is cooling down; take the next anyway rather than
        // fail—the retry loop handles a dead endpoint.
        let ep = self.endpoints[self.rr_cursor % self.endpoints.len()].clone();
        self.rr_cursor += 1;
        Ok(ep)
    }

    /// Picks a server for a file under the configured strategy.
    pub fn choose_server(&mut self, file_id: u64) -> Result<ChosenServer, ServeError> {
        if self.endpoints.is_empty() {
            return Err(ServeError::NoEndpoints);
        }
        match self.strategy {
            BalanceStrategy::ClientLibrary => Ok(ChosenServer {
                endpoint: self.round_robin()?,
                fallback_warning: false,
            }),
            BalanceStrategy::CatalogAffinity => {
                let affinity = self
                    .catalog
                    .file(file_id)
                    .and_then(|f| f.db_id)
                    .and_then(|db| self.catalog.db(db))
                    .map(|db| db.server_affinity);
                match affinity {
                    Some(label) => {
                        let hit = self
                            .endpoints
                            .iter()
                            .find(|e| e.label == label)
                            .cloned()
                            .filter(|e| self.endpoint_up(e));
                        match hit {
                            Some(endpoint) => Ok(ChosenServer {
                                endpoint,
                                fallback_warning: false,
                            }),
                            None => Ok(ChosenServer {
                                endpoint: self.round_robin()?,
                                fallback_warning: true,
                            }),
                        }
                    }
                    // No owning database (flat backend): client-side choice.
                    None => Ok(ChosenServer {
                        endpoint: self.round_robin()?,
                        fallback_warning: false,
                    }),
                }
            }
        }
    }

    fn conn(&mut self, addr: SocketAddr) -> std::io::Result<&mut TcpStream> {
        if !self.conns.contains_key(&addr) {
            let stream = TcpStream::connect_timeout(&addr, Duration::from_millis(500))?;
            stream.set_nodelay(true)?;
            stream.set_read_timeout(Some(Duration::from_secs(30)))?;
            self.conns.insert(addr, stream);
        }
        Ok(self.conns.get_mut(&addr).unwrap())
    }

    fn request_once(
        &mut self,
        addr: SocketAddr,
        req: &ReadRequest,
    ) -> std::io::Result<(u8, Vec<u8>)> {
        let max = self.max_single_read;
        let result = (|| {
            let stream = self.conn(addr)?;
            stream.write_all(&req.encode())?;
            read_response(stream, max)
        })();
        if result.is_err() {
            self.conns.remove(&addr);
            self.down_until
                .insert(addr, Instant::now() + Duration::from_millis(500));
        }
        result
    }

    /// Reads the exact byte range of a locator and verifies its checksum,
    /// retrying across endpoints on transport failure.
    pub fn read_locator(&mut self, loc: &StorageLocator) -> Result<ReadOutcome, ServeError> {
        let req = ReadRequest {
            verb: VERB_READ,
            file_id: loc.file_id,
            offset: loc.offset,
            length: loc.length,
            uid: self.uid,
        };
        let mut retries = 0u32;
        let mut last_err = String::new();
        while retries <= self.retries {
            let chosen = self.choose_server(loc.file_id)?;
            match self.request_once(chosen.endpoint.addr, &req) {
                Ok((STATUS_OK, payload)) => {
                    if crc32(&payload) != loc.checksum || payload.len() != loc.length as usize {
                        return Err(ServeError::ChecksumMismatch(format!(
                            "file {} [{}, {})",
                            loc.file_id,
                            loc.offset,
                            loc.end()
                        )));
                    }
                    return Ok(ReadOutcome {
                        bytes: payload,
                        retries,
                    });
                }
                Ok((status, _)) => return Err(status_error(status)),
                Err(e) => {
                    last_err = e.to_string();
                    retries += 1;
                }
            }
        }
        Err(ServeError::Transport {
            retries,
            detail: last_err,
        })
    }

    /// The composite read path: header lookup, locator resolution, server
    /// choice, byte-range read, checksum verification.
    pub fn read_event(
        &mut self,
        id: EventId,
        kind: &PayloadKind,
    ) -> Result<ReadOutcome, ServeError> {
        let header = self
            .catalog
            .get_header(id)
            .map_err(|_| ServeError::NotFound(id.to_string()))?;
        let locator = match kind {
            PayloadKind::Raw => header.raw,
            PayloadKind::Dst(version) => *header
                .dst(version)
                .ok_or_else(|| ServeError::VersionUnbound(version.clone()))?,
        };
        self.read_locator(&locator)
    }

    /// Locator-ordered sequential scan of (a slice of) a sealed run.
    /// Per-event failures are skipped and counted.
    pub fn scan(
        &mut self,
        run: u32,
        kind: &PayloadKind,
        events: Option<std::ops::Range<u64>>,
    ) -> Result<ScanResult, ServeError> {
        if !self.catalog.run_sealed(run) {
            return Err(ServeError::RunNotSealed(run));
        }
        let headers = self.catalog.run_headers(run);
        let mut targets: Vec<(u64, StorageLocator)> = headers
            .iter()
            .filter(|h| {
                events
                    .as_ref()
                    .map(|r| r.contains(&h.id.event))
                    .unwrap_or(true)
            })
            .filter_map(|h| match kind {
                PayloadKind::Raw => Some((h.id.event, h.raw)),
                PayloadKind::Dst(v) => h.dst(v).map(|l| (h.id.event, *l)),
            })
            .collect();
        targets.sort_by_key(|(_, l)| (l.file_id, l.offset));

        let started = Instant::now();
        let mut result = ScanResult::default();
        for (event, loc) in targets {
            match self.read_locator(&loc) {
                Ok(out) => {
                    result.events_read += 1;
                    result.bytes_read += out.bytes.len() as u64;
                }
                Err(e) => result.failures.push((event, e.to_string())),
            }
        }
        result.elapsed = started.elapsed();
        Ok(result)
    }

    pub fn stat(&mut self, file_id: u64) -> Result<(u64, u8, u32), ServeError> {
        let req = ReadRequest {
            verb: VERB_STAT,
            file_id,
            offset: 0,
            length: 0,
            uid: self.uid,
        };
        let chosen = self.choose_server(file_id)?;
        match self.request_once(chosen.endpoint.addr, &req) {
            Ok((STATUS_OK, payload)) if payload.len() == 13 => Ok((
                u64::from_be_bytes(payload[0..8].try_into().unwrap()),
                payload[8],
                u32::from_be_bytes(payload[9..13].try_into().unwrap()),
            )),
            Ok((STATUS_OK, _)) => Err(ServeError::BadRequest),
            Ok((status, _)) => Err(status_error(status)),
            Err(e) => Err(ServeError::Transport {
                retries: 0,
                detail: e.to_string(),
            }),
        }
    }
}

/// Contiguous event selection `[start, end)` within one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSelection {
    pub run: u32,
    pub start: u64,
    pub end: u64,
}

impl EventSelection {
    pub fn len(&self) -> u64 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Splits a selection into ordered sub-selections of at most
/// `max_records_per_query` events each; their concatenation is the
/// original selection.
pub fn split_query(selection: &EventSelection, max_records_per_query: u64) -> Vec<EventSelection> {
    assert!(max_records_per_query > 0);
    let mut out = Vec::new();
    let mut start = selection.start;
    while start < selection.end {
        let end = (start + max_records_per_query).min(selection.end);
        out.push(EventSelection {
            run: selection.run,
            start,
            end,
        });
        start = end;
    }
    out
}
