//! A full single-host deployment: catalog, HSM, pipeline, migrator, and a
//! set of data-server instances on loopback, wired together under one
//! directory layout. Tests and the CLI drive everything through this.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::mpsc::{sync_channel, SyncSender};
use std::sync::{Arc, Mutex};

use crate::backend::{ContainerParams, PayloadWriter};
use crate::catalog::{
    BackendKind, Catalog, CatalogOptions, EventId, FileKind, HolderId, LockMode, StorageLocator,
};
use crate::cdr::transfer::{TransferReceiver, TransferSender, WireCorruption};
use crate::cdr::{CdrOptions, CdrPipeline};
use crate::codec::{crc32, now_ms};
use crate::config::{Config, Layout};
use crate::hsm::{Hsm, HsmOptions, TapeOptions};
use crate::migration::{MigrationOptions, Migrator};
use crate::server::{BalanceStrategy, DataClient, DataServer, ServerEndpoint, ServerHandle, ServerOptions};

use super::generate::Generator;

pub struct Rig {
    pub layout: Layout,
    pub config: Config,
    pub catalog: Arc<Catalog>,
    pub hsm: Arc<Hsm>,
    pub pipeline: Arc<CdrPipeline>,
    pub migrator: Arc<Migrator>,
    servers: Mutex<Vec<ServerHandle>>,
    receiver: Mutex<Option<TransferReceiver>>,
}

impl Rig {
    /// Brings up the whole deployment under `root` with `server_count`
    /// data-server instances.
    pub fn launch(root: &Path, config: Config, server_count: usize) -> std::io::Result<Self> {
        let layout = Layout::new(root);
        layout.ensure()?;

        let catalog = Arc::new(Catalog::open(
            &layout.catalog_dir(),
            CatalogOptions::from(&config),
        )?);
        let hsm = Hsm::open(
            catalog.clone(),
            &layout.cache_dir(),
            &layout.tape_dir(),
            HsmOptions::from(&config),
            TapeOptions::from(&config),
        )?;

        let mut servers = Vec::new();
        for i in 0..server_count {
            let label = format!("srv{i}");
            servers.push(DataServer::spawn(
                &label,
                "127.0.0.1:0",
                hsm.clone(),
                ServerOptions::from(&config),
            )?);
        }

        let mut cdr_opts = CdrOptions::from_config(&config);
        cdr_opts.affinities = if servers.is_empty() {
            vec!["srv0".to_string()]
        } else {
            servers.iter().map(|s| s.label.clone()).collect()
        };
        let pipeline = CdrPipeline::new(
            catalog.clone(),
            hsm.clone(),
            &layout.offline_dir(),
            &layout.container_dir(),
            cdr_opts,
        )?;
        pipeline.start();

        let receiver = TransferReceiver::spawn("127.0.0.1:0", pipeline.clone())?;

        let migrator = Arc::new(Migrator::new(
            catalog.clone(),
            hsm.clone(),
            &layout.flat_dir(),
            MigrationOptions::from(&config),
        )?);

        Ok(Self {
            layout,
            config,
            catalog,
            hsm,
            pipeline,
            migrator,
            servers: Mutex::new(servers),
            receiver: Mutex::new(Some(receiver)),
        })
    }

    pub fn endpoints(&self) -> Vec<ServerEndpoint> {
        self.servers
            .lock()
            .unwrap()
            .iter()
            .map(|s| ServerEndpoint {
                label: s.label.clone(),
                addr: s.endpoint,
                weight: 1,
            })
            .collect()
    }

    pub fn receiver_addr(&self) -> SocketAddr {
        self.receiver
            .lock()
            .unwrap()
            .as_ref()
            .expect("receiver running")
            .addr()
    }

    pub fn client(&self, strategy: BalanceStrategy) -> DataClient {
        DataClient::new(
            self.catalog.clone(),
            self.endpoints(),
            strategy,
            self.config.client_retries,
            self.config.max_single_read,
        )
    }

    /// Kills one server instance; in-flight clients see transport errors
    /// and retry elsewhere.
    pub fn shutdown_server(&self, index: usize) {
        let mut servers = self.servers.lock().unwrap();
        if index < servers.len() {
            let mut s = servers.remove(index);
            s.shutdown();
        }
    }

    pub fn server_stats(&self) -> Vec<(String, u64, u64, u64)> {
        self.servers
            .lock()
            .unwrap()
            .iter()
            .map(|s| {
                let st = s.stats();
                (
                    s.label.clone(),
                    st.open_handlers.load(std::sync::atomic::Ordering::SeqCst),
                    st.bytes_served.load(std::sync::atomic::Ordering::SeqCst),
                    st.request_tokens_spent_milli
                        .load(std::sync::atomic::Ordering::SeqCst),
                )
            })
            .collect()
    }

    pub fn peak_open_handlers(&self) -> u64 {
        self.servers
            .lock()
            .unwrap()
            .iter()
            .map(|s| {
                s.stats()
                    .open_handlers
                    .load(std::sync::atomic::Ordering::SeqCst)
            })
            .sum()
    }

    pub fn shutdown(&self) {
        if let Some(mut r) = self.receiver.lock().unwrap().take() {
            r.shutdown();
        }
        self.pipeline.stop();
        let mut servers = self.servers.lock().unwrap();
        for s in servers.iter_mut() {
            s.shutdown();
        }
        servers.clear();
    }
}

impl Drop for Rig {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Debug, Clone, Default)]
pub struct FeedOptions {
    pub streams: u32,
    /// Bytes/s pacing of the source; 0 feeds as fast as buffers allow.
    pub source_rate: u64,
    pub corruptions: Vec<WireCorruption>,
}

#[derive(Debug, Clone, Default)]
pub struct FeedReport {
    pub chunks_sent: u64,
    pub bytes_sent: u64,
    pub send_errors: u64,
}

/// Plays the generator through the full transfer path: chunks land in the
/// online buffer first (both-sides retention), then flow over parallel
/// streams to the pipeline's receiver.
pub fn feed_generator(rig: &Rig, generator: &Generator, opts: &FeedOptions) -> FeedReport {
    let streams = opts.streams.max(1);
    let addr = rig.receiver_addr();
    let retries = rig.config.transfer_retries;

    struct Job {
        run: u32,
        seq: u32,
        bytes: Vec<u8>,
        corrupt: Option<WireCorruption>,
    }

    let mut senders: Vec<SyncSender<Job>> = Vec::new();
    let mut joins = Vec::new();
    let errors = Arc::new(std::sync::atomic::AtomicU64::new(0));
    for s in 0..streams {
        let (tx, rx) = sync_channel::<Job>(2);
        senders.push(tx);
        let errors = errors.clone();
        joins.push(
            std::thread::Builder::new()
                .name(format!("cdr-send-{s}"))
                .spawn(move || {
                    let mut sender = match TransferSender::connect(addr, retries) {
                        Ok(s) => s,
                        Err(_) => {
                            errors.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                            return;
                        }
                    };
                    while let Ok(job) = rx.recv() {
                        if let Some(c) = job.corrupt {
                            sender.inject_corruption(c);
                        }
                        if sender.send_chunk(job.run, job.seq, &job.bytes).is_err() {
                            errors.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                        }
                    }
                })
                .expect("spawn sender"),
        );
    }

    let mut report = FeedReport::default();
    let mut pace_debt = 0f64;
    let mut pace_last = std::time::Instant::now();
    let profile = generator.profile().clone();
    let mut stream_cursor = 0usize;
    for run in profile.run_numbers() {
        let layout = generator.chunk_layout(run);
        for (seq, _range) in layout.iter().enumerate() {
            let seq = seq as u32;
            let chunk = generator.build_chunk(run, seq).expect("layout covers seq");
            let bytes = chunk.encode();

            // Source-side pacing.
            if opts.source_rate > 0 {
                let now = std::time::Instant::now();
                pace_debt -= now.duration_since(pace_last).as_secs_f64() * opts.source_rate as f64;
                pace_last = now;
                pace_debt = pace_debt.max(0.0) + bytes.len() as f64;
                let over = pace_debt / opts.source_rate as f64;
                if over > 0.0 {
                    std::thread::sleep(std::time::Duration::from_secs_f64(over.min(5.0)));
                }
            }

            // Online buffer first: retention on both sides until tape-safe.
            rig.pipeline.reserve_online(bytes.len() as u64);
            let online_path = rig
                .layout
                .online_dir()
                .join(format!("r{run:06}-s{seq:06}.cdr"));
            std::fs::write(&online_path, &bytes).expect("online buffer write");
            rig.pipeline
                .online_written(run, seq, &online_path, bytes.len() as u64);

            let corrupt = opts
                .corruptions
                .iter()
                .find(|c| c.run == run && c.sequence == seq)
                .copied();
            report.chunks_sent += 1;
            report.bytes_sent += bytes.len() as u64;
            let job = Job {
                run,
                seq,
                bytes,
                corrupt,
            };
            senders[stream_cursor % senders.len()].send(job).expect("sender alive");
            stream_cursor += 1;
        }
        rig.pipeline.end_run(run, layout.len() as u32);
    }
    drop(senders);
    for j in joins {
        let _ = j.join();
    }
    report.send_errors = errors.load(std::sync::atomic::Ordering::SeqCst);
    report
}

/// Produces a DST version for every event of a run (payloads derived from
/// the generator, scaled), stores them in a container file, and binds them
/// through attach_dst. Models reconstruction output.
pub fn produce_dst_version(
    rig: &Rig,
    generator: &Generator,
    run: u32,
    version: &str,
    size_ppm: u32,
) -> Result<u64, crate::catalog::CatalogError> {
    let headers = rig.catalog.run_headers(run);
    let identity = HolderId::local("dst-producer");
    let path = rig
        .layout
        .container_dir()
        .join(format!("r{run:06}-{version}.caf"));
    let params = ContainerParams::from_config(&rig.config, crate::rng::mix64(&[run as u64, 77]));
    let mut writer = PayloadWriter::create(BackendKind::ContainerA, &path, 0, &params)
        .map_err(crate::catalog::CatalogError::Io)?;

    let mut locs: Vec<(EventId, u64, u32, u32)> = Vec::with_capacity(headers.len());
    for h in &headers {
        let full = generator.payload(h.id);
        let take = ((full.len() as u64 * size_ppm as u64) / 1_000_000).max(1) as usize;
        let payload = &full[..take.min(full.len())];
        let (offset, length) = writer
            .write_payload(payload)
            .map_err(|e| crate::catalog::CatalogError::Io(std::io::Error::other(e.to_string())))?;
        locs.push((h.id, offset, length, crc32(payload)));
    }
    let whole_crc = writer.whole_file_crc();
    let summary = writer.finish().map_err(crate::catalog::CatalogError::Io)?;
    let file_id = rig
        .hsm
        .register_file(
            &format!("run{run:06}/{version}.caf"),
            &path,
            summary.file_size,
            whole_crc,
            FileKind::Container,
            None,
        )
        .map_err(|e| crate::catalog::CatalogError::Io(std::io::Error::other(e.to_string())))?;

    let lease = rig.catalog.leases().acquire(
        &identity,
        &format!("run:{run}"),
        LockMode::Exclusive,
        rig.config.lease_ttl_ms,
        now_ms(),
    )?;
    let mut txn = rig.catalog.begin_txn(lease.lease_id, &identity)?;
    for (id, offset, length, checksum) in locs {
        txn.stage_attach_dst(
            id,
            version,
            StorageLocator {
                backend: BackendKind::ContainerA,
                file_id,
                offset,
                length,
                checksum,
            },
        )?;
    }
    txn.commit()?;
    let _ = rig.catalog.leases().release(lease.lease_id, &identity);
    Ok(file_id)
}
