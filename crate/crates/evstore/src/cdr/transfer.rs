//! Chunk transfer protocol: length-prefixed chunk push over a byte stream,
//! acknowledged with 8 bytes (crc32 echo of the received bytes plus a
//! status word). Multiple streams run in parallel; each stream is one TCP
//! connection. Backpressure is physical: the receiver does not read a
//! chunk body until its buffer has room, which stalls the sender through
//! TCP flow control rather than erroring.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::codec::crc32;

pub const ACK_OK: u32 = 0;
pub const ACK_CORRUPT: u32 = 1;
pub const ACK_REJECT: u32 = 2;

const MAX_WIRE_CHUNK: usize = 2 * 1024 * 1024 * 1024 - 1;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("chunk rejected by receiver (status {0})")]
    Rejected(u32),
    #[error("chunk still corrupt after {0} attempts")]
    RetriesExhausted(u32),
    #[error("ack checksum mismatch")]
    AckMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One-shot wire corruption to inject: flips a byte of the named chunk's
/// in-flight copy (the stored original is untouched, so a retry heals).
#[derive(Debug, Clone, Copy)]
pub struct WireCorruption {
    pub run: u32,
    pub sequence: u32,
    pub byte_offset: u64,
}

pub struct TransferSender {
    stream: TcpStream,
    corruption: Arc<Mutex<Option<WireCorruption>>>,
    retries: u32,
}

impl TransferSender {
    pub fn connect(addr: SocketAddr, retries: u32) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            corruption: Arc::new(Mutex::new(None)),
            retries,
        })
    }

    pub fn inject_corruption(&self, c: WireCorruption) {
        *self.corruption.lock().unwrap() = Some(c);
    }

    /// Pushes one chunk; retries with a clean copy when the receiver
    /// reports a corrupt frame.
    pub fn send_chunk(
        &mut self,
        run: u32,
        sequence: u32,
        bytes: &[u8],
    ) -> Result<(), TransferError> {
        assert!(bytes.len() <= MAX_WIRE_CHUNK);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let mut wire: Vec<u8> = bytes.to_vec();
            {
                let mut c = self.corruption.lock().unwrap();
                if let Some(spec) = *c {
                    if spec.run == run && spec.sequence == sequence {
                        let at = (spec.byte_offset as usize).min(wire.len() - 1);
                        wire[at] ^= 0xA5;
                        *c = None;
                    }
                }
            }
            self.stream.write_all(&(wire.len() as u32).to_be_bytes())?;
            self.stream.write_all(&wire)?;

            let mut ack = [0u8; 8];
            self.stream.read_exact(&mut ack)?;
            let echoed = u32::from_be_bytes(ack[0..4].try_into().unwrap());
            let status = u32::from_be_bytes(ack[4..8].try_into().unwrap());
            match status {
                ACK_OK => {
                    if echoed != crc32(&wire) {
                        return Err(TransferError::AckMismatch);
                    }
                    return Ok(());
                }
                ACK_CORRUPT if attempt <= self.retries => continue,
                ACK_CORRUPT => return Err(TransferError::RetriesExhausted(attempt)),
                other => return Err(TransferError::Rejected(other)),
            }
        }
    }
}

/// Receiver side: accepts streams and hands verified chunk bytes to the
/// sink. The sink blocks while its buffer is full, which is exactly how
/// backpressure reaches the sender.
pub struct TransferReceiver {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<std::thread::JoinHandle<()>>,
}

/// What the pipeline exposes to the receiver.
pub trait ChunkSink: Send + Sync + 'static {
    /// Blocks until buffer room exists for `size` bytes.
    fn reserve(&self, size: u64);
    /// Stores one verified-or-not chunk; returns the ack status word.
    fn accept(&self, bytes: Vec<u8>) -> u32;
}

impl TransferReceiver {
    pub fn spawn(bind: &str, sink: Arc<dyn ChunkSink>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop2 = stop.clone();
        let accept_thread = std::thread::Builder::new()
            .name("cdr-recv-accept".into())
            .spawn(move || {
                let mut conns: Vec<std::thread::JoinHandle<()>> = Vec::new();
                while !stop2.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let sink = sink.clone();
                            let stop3 = stop2.clone();
                            conns.push(
                                std::thread::Builder::new()
                                    .name("cdr-recv-stream".into())
                                    .stack_size(512 * 1024)
                                    .spawn(move || stream_loop(stream, sink, stop3))
                                    .expect("spawn receiver stream"),
                            );
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(10));
                        }
                        Err(_) => break,
                    }
                }
                for c in conns {
                    let _ = c.join();
                }
            })?;
        Ok(Self {
            addr,
            stop,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TransferReceiver {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn stream_loop(mut stream: TcpStream, sink: Arc<dyn ChunkSink>, stop: Arc<AtomicBool>) {
    let _ = stream.set_nodelay(true);
    loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        let mut len_buf = [0u8; 4];
        match stream.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(_) => return, // stream closed
        }
        let len = u32::from_be_bytes(len_buf) as usize;
        if len > MAX_WIRE_CHUNK {
            return;
        }
        // Backpressure point: hold the body in the socket until room.
        sink.reserve(len as u64);
        let mut body = vec![0u8; len];
        if stream.read_exact(&mut body).is_err() {
            return;
        }
        let echo = crc32(&body);
        let status = sink.accept(body);
        let mut ack = [0u8; 8];
        ack[0..4].copy_from_slice(&echo.to_be_bytes());
        ack[4..8].copy_from_slice(&status.to_be_bytes());
        if stream.write_all(&ack).is_err() {
            return;
        }
    }
}
