//! Byte-range payload serving: lightweight stateless request handling over
//! TCP. Every request is self-contained; a handler holds no session state
//! and its memory footprint is bounded by the single-read limit, so one
//! server instance sustains hundreds of concurrent clients.
//!
//! Each server instance has two simulated capacity budgets: a byte budget
//! (disk + NIC) charged with the bytes a read actually touches
//! (page-aligned for container files, exact for flat files), and a
//! request-processing budget where container reads cost more than flat
//! reads. The second is what caps the container-backed store below the
//! network bandwidth, the way the original object-database server did.

pub mod client;
pub mod proto;

pub use client::{
    split_query, BalanceStrategy, ChosenServer, DataClient, EventSelection, PayloadKind,
    ReadOutcome, ScanResult, ServeError, ServerEndpoint,
};

use std::io::Read;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::backend::service_span;
use crate::catalog::FileKind;
use crate::config::Config;
use crate::hsm::{Hsm, HsmError};
use proto::*;

/// Debt-model token bucket: consumers always proceed but sleep off any
/// deficit, so the long-run rate never exceeds `rate` while short bursts
/// stay within one refill window.
pub struct TokenBucket {
    state: Mutex<(f64, Instant)>,
    rate: f64,
    burst: f64,
}

impl TokenBucket {
    /// `rate` per second; 0 disables pacing.
    pub fn new(rate: f64) -> Self {
        Self {
            state: Mutex::new((0.0, Instant::now())),
            rate,
            burst: rate * 0.1,
        }
    }

    pub fn consume(&self, amount: f64) {
        if self.rate <= 0.0 {
            return;
        }
        let deficit = {
            let mut s = self.state.lock().unwrap();
            let now = Instant::now();
            let dt = now.duration_since(s.1).as_secs_f64();
            s.1 = now;
            s.0 = (s.0 + dt * self.rate).min(self.burst);
            s.0 -= amount;
            -s.0
        };
        if deficit > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(deficit / self.rate));
        }
    }
}

#[derive(Default)]
pub struct ServerStats {
    pub open_handlers: AtomicU64,
    pub requests: AtomicU64,
    pub bytes_served: AtomicU64,
    /// Request tokens spent, scaled by 1000 (the CPU proxy gauge).
    pub request_tokens_spent_milli: AtomicU64,
    pub errors: AtomicU64,
}

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub max_single_read: u32,
    pub bandwidth: u64,
    pub request_budget: f64,
    pub container_request_cost: f64,
    pub service_latency: Duration,
    pub container_latency_factor: f64,
    pub page_size: u32,
}

impl From<&Config> for ServerOptions {
    fn from(cfg: &Config) -> Self {
        Self {
            max_single_read: cfg.max_single_read,
            bandwidth: cfg.server_bandwidth,
            request_budget: cfg.server_request_budget,
            container_request_cost: cfg.container_request_cost,
            service_latency: Duration::from_micros(cfg.service_latency_us),
            container_latency_factor: cfg.container_latency_factor,
            page_size: cfg.container_page_size,
        }
    }
}

/// A running server instance. Dropping or shutting it down kills the
/// listener and lets in-flight handlers finish; clients retry elsewhere.
pub struct ServerHandle {
    pub label: String,
    pub endpoint: SocketAddr,
    stats: Arc<ServerStats>,
    stop: Arc<AtomicBool>,
    accept_thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn stats(&self) -> &Arc<ServerStats> {
        &self.stats
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub struct DataServer;

impl DataServer {
    /// Binds and serves. `bind` may carry port 0; the handle reports the
    /// actual endpoint.
    pub fn spawn(
        label: &str,
        bind: &str,
        hsm: Arc<Hsm>,
        opts: ServerOptions,
    ) -> std::io::Result<ServerHandle> {
        let listener = TcpListener::bind(bind)?;
        let endpoint = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stats = Arc::new(ServerStats::default());
        let stop = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(ServerShared {
            byte_budget: TokenBucket::new(opts.bandwidth as f64),
            request_budget: TokenBucket::new(opts.request_budget),
            hsm,
            opts,
            stats: stats.clone(),
        });

        let stop2 = stop.clone();
        let name = format!("serve-{label}");
        let accept_thread = std::thread::Builder::new().name(name).spawn(move || {
            let mut handlers = Vec::new();
            while !stop2.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let shared = shared.clone();
                        let stop3 = stop2.clone();
                        handlers.push(
                            std::thread::Builder::new()
                                .name("serve-handler".into())
                                .stack_size(256 * 1024)
                                .spawn(move || handler_loop(stream, shared, stop3))
                                .expect("spawn handler"),
                        );
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
            for h in handlers {
                let _ = h.join();
            }
        })?;

        Ok(ServerHandle {
            label: label.to_string(),
            endpoint,
            stats,
            stop,
            accept_thread: Some(accept_thread),
        })
    }
}

struct ServerShared {
    hsm: Arc<Hsm>,
    opts: ServerOptions,
    stats: Arc<ServerStats>,
    byte_budget: TokenBucket,
    request_budget: TokenBucket,
}

fn handler_loop(mut stream: TcpStream, shared: Arc<ServerShared>, stop: Arc<AtomicBool>) {
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(Duration::from_millis(250)));
    let mut req_buf = [0u8; REQUEST_LEN];
    loop {
        match read_request(&mut stream, &mut req_buf, &stop) {
            Some(true) => {}
            Some(false) => return, // closed or stop
            None => continue,      // timeout, poll stop flag
        }
        shared.stats.open_handlers.fetch_add(1, Ordering::SeqCst);
        let outcome = handle_request(&req_buf, &shared, &mut stream);
        shared.stats.open_handlers.fetch_sub(1, Ordering::SeqCst);
        if outcome.is_err() {
            return;
        }
    }
}

/// Reads a full request, tolerating read timeouts between requests so the
/// stop flag stays responsive. Some(true) = got one; Some(false) = closed;
/// None = no data yet.
fn read_request(
    stream: &mut TcpStream,
    buf: &mut [u8; REQUEST_LEN],
    stop: &AtomicBool,
) -> Option<bool> {
    let mut filled = 0usize;
    loop {
        if stop.load(Ordering::SeqCst) && filled == 0 {
            return Some(false);
        }
        match stream.read(&mut buf[filled..]) {
            Ok(0) => return Some(false),
            Ok(n) => {
                filled += n;
                if filled == REQUEST_LEN {
                    return Some(true);
                }
            }
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                if filled == 0 {
                    return None;
                }
            }
            Err(_) => return Some(false),
        }
    }
}

fn handle_request(
    buf: &[u8; REQUEST_LEN],
    shared: &ServerShared,
    stream: &mut TcpStream,
) -> std::io::Result<()> {
    shared.stats.requests.fetch_add(1, Ordering::SeqCst);
    let Some(req) = ReadRequest::decode(buf) else {
        shared.stats.errors.fetch_add(1, Ordering::SeqCst);
        return write_response(stream, STATUS_BAD_REQUEST, &[]);
    };
    match req.verb {
        VERB_READ => match serve_read(&req, shared) {
            Ok(payload) => {
                shared
                    .stats
                    .bytes_served
                    .fetch_add(payload.len() as u64, Ordering::SeqCst);
                write_response(stream, STATUS_OK, &payload)
            }
            Err(status) => {
                shared.stats.errors.fetch_add(1, Ordering::SeqCst);
                write_response(stream, status, &[])
            }
        },
        VERB_STAT => match serve_stat(&req, shared) {
            Ok(payload) => write_response(stream, STATUS_OK, &payload),
            Err(status) => {
                shared.stats.errors.fetch_add(1, Ordering::SeqCst);
                write_response(stream, status, &[])
            }
        },
        _ => {
            shared.stats.errors.fetch_add(1, Ordering::SeqCst);
            write_response(stream, STATUS_BAD_REQUEST, &[])
        }
    }
}

/// One self-contained read: resolve the file, make it online (transparent
/// recall), pay the simulated service costs, return exactly the requested
/// bytes.
fn serve_read(req: &ReadRequest, shared: &ServerShared) -> Result<Vec<u8>, u8> {
    let opts = &shared.opts;
    if req.length == 0 || req.length > opts.max_single_read {
        return Err(STATUS_RANGE_OUT_OF_BOUNDS);
    }
    let file = shared.hsm.file(req.file_id).ok_or(STATUS_NO_SUCH_FILE)?;
    if req.offset + req.length as u64 > file.size {
        return Err(STATUS_RANGE_OUT_OF_BOUNDS);
    }

    let path = shared.hsm.ensure_online(req.file_id).map_err(|e| match e {
        HsmError::RecallFailed { .. } => STATUS_RECALL_FAILED,
        HsmError::NotFound(_) => STATUS_NO_SUCH_FILE,
        _ => STATUS_INTERNAL,
    })?;

    let is_container = file.kind == FileKind::Container;
    let latency = if is_container {
        opts.service_latency.mul_f64(opts.container_latency_factor)
    } else {
        opts.service_latency
    };
    if !latency.is_zero() {
        std::thread::sleep(latency);
    }
    let request_cost = if is_container {
        opts.container_request_cost
    } else {
        1.0
    };
    shared.request_budget.consume(request_cost);
    shared
        .stats
        .request_tokens_spent_milli
        .fetch_add((request_cost * 1000.0) as u64, Ordering::SeqCst);

    let touched = service_span(file.kind, req.offset, req.length, opts.page_size, file.size);
    shared.byte_budget.consume(touched as f64);

    crate::backend::read_range(&path, req.offset, req.length).map_err(|_| STATUS_INTERNAL)
}

fn serve_stat(req: &ReadRequest, shared: &ServerShared) -> Result<Vec<u8>, u8> {
    let file = shared.hsm.file(req.file_id).ok_or(STATUS_NO_SUCH_FILE)?;
    shared.request_budget.consume(1.0);
    let mut payload = Vec::with_capacity(13);
    payload.extend_from_slice(&file.size.to_be_bytes());
    payload.push(match file.state {
        crate::hsm::FileState::DiskOnly => 1,
        crate::hsm::FileState::MigratingToTape => 2,
        crate::hsm::FileState::OnTapeCached => 3,
        crate::hsm::FileState::TapeOnly => 4,
        crate::hsm::FileState::Recalling => 5,
    });
    payload.extend_from_slice(&file.checksum.to_be_bytes());
    Ok(payload)
}
