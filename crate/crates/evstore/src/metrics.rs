//! Time-series capture for pipeline runs: cumulative raw bytes safely on
//! tape, buffer occupancy, and tape backlog. The report module turns these
//! into the plot-ready CSVs.

use std::sync::Mutex;
use std::time::Instant;

#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub t_s: f64,
    pub tape_raw_cum: u64,
    pub online_used: u64,
    pub offline_used: u64,
    pub backlog: u64,
}

pub struct Metrics {
    start: Instant,
    samples: Mutex<Vec<Sample>>,
}

impl Metrics {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
            samples: Mutex::new(Vec::new()),
        }
    }

    pub fn elapsed_s(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub fn record(&self, tape_raw_cum: u64, online_used: u64, offline_used: u64, backlog: u64) {
        self.samples.lock().unwrap().push(Sample {
            t_s: self.elapsed_s(),
            tape_raw_cum,
            online_used,
            offline_used,
            backlog,
        });
    }

    pub fn snapshot(&self) -> Vec<Sample> {
        self.samples.lock().unwrap().clone()
    }

    /// Mean tape rate (bytes/s) between two instants, from the cumulative
    /// series.
    pub fn tape_rate_between(&self, t0: f64, t1: f64) -> f64 {
        let samples = self.samples.lock().unwrap();
        let at = |t: f64| -> Option<(f64, u64)> {
            samples
                .iter()
                .take_while(|s| s.t_s <= t)
                .last()
                .map(|s| (s.t_s, s.tape_raw_cum))
        };
        match (at(t0), at(t1)) {
            (Some((ta, a)), Some((tb, b))) if tb > ta => (b - a) as f64 / (tb - ta),
            _ => 0.0,
        }
    }

    /// First sample time at or after `from` where the backlog is zero.
    pub fn backlog_zero_after(&self, from: f64) -> Option<f64> {
        self.samples
            .lock()
            .unwrap()
            .iter()
            .find(|s| s.t_s >= from && s.backlog == 0)
            .map(|s| s.t_s)
    }

    pub fn peak_buffer_bytes(&self) -> u64 {
        self.samples
            .lock()
            .unwrap()
            .iter()
            .map(|s| s.online_used.max(s.offline_used))
            .max()
            .unwrap_or(0)
    }
}

impl Default for Metrics {
    fn default() -> Self {
        Self::new()
    }
}
