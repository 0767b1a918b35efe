//! Scan-scalability stress experiment: for each client count, start that
//! many clients simultaneously (barrier release within a narrow window),
//! have each scan an equal share of the sealed dataset, and record
//! per-client times plus aggregate throughput and server gauges.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier, Mutex};
use std::time::{Duration, Instant};

use crate::server::{BalanceStrategy, PayloadKind};

use super::rig::Rig;

#[derive(Debug, Clone)]
pub struct StressRow {
    pub label: String,
    pub clients: u32,
    pub events_read: u64,
    pub bytes_read: u64,
    pub failures: u64,
    /// Wall time of the slowest client; the aggregate window.
    pub elapsed_max_s: f64,
    pub per_client_mean_s: f64,
    pub per_client_p95_s: f64,
    pub aggregate_bps: f64,
    pub peak_open_handlers: u64,
    /// Request tokens spent across servers during the cell (CPU proxy).
    pub cpu_proxy_tokens: f64,
}

/// One stress cell: `clients` simultaneous scanners over an equal split of
/// `runs`.
pub fn stress_cell(
    rig: &Arc<Rig>,
    label: &str,
    strategy: BalanceStrategy,
    clients: u32,
    runs: &[u32],
) -> StressRow {
    let clients = clients.max(1);
    let shares: Vec<Vec<(u32, std::ops::Range<u64>)>> = (0..clients)
        .map(|c| {
            runs.iter()
                .map(|&run| {
                    let len = rig.catalog.run_len(run);
                    let lo = len * c as u64 / clients as u64;
                    let hi = len * (c as u64 + 1) / clients as u64;
                    (run, lo..hi)
                })
                .collect()
        })
        .collect();

    let tokens_before: u64 = rig
        .server_stats()
        .iter()
        .map(|(_, _, _, tokens_milli)| tokens_milli)
        .sum();

    let barrier = Arc::new(Barrier::new(clients as usize + 1));
    let stop_sampler = Arc::new(AtomicBool::new(false));
    let peak = Arc::new(Mutex::new(0u64));
    let sampler = {
        let rig = rig.clone();
        let stop = stop_sampler.clone();
        let peak = peak.clone();
        std::thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                let now = rig.peak_open_handlers();
                let mut p = peak.lock().unwrap();
                if now > *p {
                    *p = now;
                }
                drop(p);
                std::thread::sleep(Duration::from_millis(10));
            }
        })
    };

    let mut joins = Vec::new();
    for share in shares {
        let rig = rig.clone();
        let barrier = barrier.clone();
        joins.push(
            std::thread::Builder::new()
                .name("stress-client".into())
                .stack_size(512 * 1024)
                .spawn(move || {
                    let mut client = rig.client(strategy);
                    barrier.wait();
                    let started = Instant::now();
                    let mut events = 0u64;
                    let mut bytes = 0u64;
                    let mut failures = 0u64;
                    for (run, range) in share {
                        match client.scan(run, &PayloadKind::Raw, Some(range)) {
                            Ok(res) => {
                                events += res.events_read;
                                bytes += res.bytes_read;
                                failures += res.failures.len() as u64;
                            }
                            Err(_) => failures += 1,
                        }
                    }
                    (events, bytes, failures, started.elapsed().as_secs_f64())
                })
                .expect("spawn stress client"),
        );
    }
    // Simultaneous start.
    barrier.wait();

    let mut events = 0u64;
    let mut bytes = 0u64;
    let mut failures = 0u64;
    let mut times: Vec<f64> = Vec::with_capacity(clients as usize);
    for j in joins {
        let (e, b, f, t) = j.join().expect("stress client panicked");
        events += e;
        bytes += b;
        failures += f;
        times.push(t);
    }
    stop_sampler.store(true, Ordering::SeqCst);
    let _ = sampler.join();

    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let elapsed_max = times.last().copied().unwrap_or(0.0);
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let p95 = times[((times.len() as f64 * 0.95).ceil() as usize - 1).min(times.len() - 1)];
    let tokens_after: u64 = rig
        .server_stats()
        .iter()
        .map(|(_, _, _, tokens_milli)| tokens_milli)
        .sum();
    let peak_open_handlers = *peak.lock().unwrap();

    StressRow {
        label: label.to_string(),
        clients,
        events_read: events,
        bytes_read: bytes,
        failures,
        elapsed_max_s: elapsed_max,
        per_client_mean_s: mean,
        per_client_p95_s: p95,
        aggregate_bps: if elapsed_max > 0.0 {
            bytes as f64 / elapsed_max
        } else {
            0.0
        },
        peak_open_handlers,
        cpu_proxy_tokens: (tokens_after - tokens_before) as f64 / 1000.0,
    }
}

/// The full experiment: one row per client count.
pub fn stress_scan(
    rig: &Arc<Rig>,
    label: &str,
    strategy: BalanceStrategy,
    client_counts: &[u32],
    runs: &[u32],
) -> Vec<StressRow> {
    client_counts
        .iter()
        .map(|&n| stress_cell(rig, label, strategy, n, runs))
        .collect()
}
