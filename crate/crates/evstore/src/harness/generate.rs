//! Synthetic on-line system: a seeded generator producing the chunk stream
//! plus a manifest of every event's length and checksum. The manifest is
//! the independent oracle every end-to-end check compares against, so the
//! generator is pure: the same seed and profile reproduce the exact same
//! bytes, event by event.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::catalog::EventId;
use crate::cdr::chunk::{ChunkFile, ChunkRecord, HEADER_LEN, RECORD_OVERHEAD, TRAILER_LEN};
use crate::codec::crc32;
use crate::config::Config;
use crate::rng::{mix64, SplitMix64};

const BLOCK: usize = 512;
const MOTIF: usize = 16;

#[derive(Debug, Clone)]
pub struct GeneratorProfile {
    pub seed: u64,
    pub first_run: u32,
    pub runs: u32,
    pub events_per_run: u64,
    pub payload_mean: u32,
    pub payload_jitter_pct: u32,
    /// Fraction (ppm) of payload blocks that are repetitive.
    pub compressible_ppm: u32,
    pub max_chunk_size: u64,
}

impl GeneratorProfile {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            seed: cfg.generator_seed,
            first_run: 1,
            runs: cfg.runs,
            events_per_run: cfg.events_per_run,
            payload_mean: cfg.payload_mean,
            payload_jitter_pct: cfg.payload_jitter_pct,
            compressible_ppm: cfg.payload_compressible_ppm,
            max_chunk_size: cfg.max_chunk_size,
        }
    }

    pub fn run_numbers(&self) -> impl Iterator<Item = u32> {
        self.first_run..self.first_run + self.runs
    }

    pub fn total_events(&self) -> u64 {
        self.runs as u64 * self.events_per_run
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: EventId,
    pub length: u32,
    pub checksum: u32,
}

/// Every generated event's identity, length, and payload checksum.
#[derive(Debug, Default, Clone)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    index: HashMap<EventId, usize>,
}

impl Manifest {
    pub fn push(&mut self, entry: ManifestEntry) {
        self.index.insert(entry.id, self.entries.len());
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: EventId) -> Option<&ManifestEntry> {
        self.index.get(&id).map(|&i| &self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter()
    }

    pub fn total_payload_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.length as u64).sum()
    }

    /// Order-independent digest of the (id, length, checksum) multiset;
    /// two stores hold the same events iff their digests match.
    pub fn digest(&self) -> u64 {
        self.entries
            .iter()
            .fold(0u64, |acc, e| {
                acc.wrapping_add(mix64(&[
                    e.id.run as u64,
                    e.id.event,
                    e.length as u64,
                    e.checksum as u64,
                ]))
            })
    }

    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "run,event,length,checksum")?;
        for e in &self.entries {
            writeln!(f, "{},{},{},{}", e.id.run, e.id.event, e.length, e.checksum)?;
        }
        f.flush()
    }

    pub fn load_csv(path: &Path) -> std::io::Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut m = Manifest::default();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if i == 0 || line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> std::io::Result<u64> {
                s.and_then(|v| v.parse().ok()).ok_or_else(|| {
                    std::io::Error::new(std::io::ErrorKind::InvalidData, "bad manifest row")
                })
            };
            let run = parse(parts.next())? as u32;
            let event = parse(parts.next())?;
            let length = parse(parts.next())? as u32;
            let checksum = parse(parts.next())? as u32;
            m.push(ManifestEntry {
                id: EventId::new(run, event),
                length,
                checksum,
            });
        }
        Ok(m)
    }
}

pub struct Generator {
    profile: GeneratorProfile,
}

impl Generator {
    pub fn new(profile: GeneratorProfile) -> Self {
        Self { profile }
    }

    pub fn profile(&self) -> &GeneratorProfile {
        &self.profile
    }

    pub fn payload_len(&self, id: EventId) -> u32 {
        let mean = self.profile.payload_mean as u64;
        let jitter = mean * self.profile.payload_jitter_pct as u64 / 100;
        if jitter == 0 {
            return mean as u32;
        }
        let mut rng = SplitMix64::derive(self.profile.seed, &[id.run as u64, id.event, 1]);
        rng.next_range(mean - jitter, mean + jitter) as u32
    }

    /// The event's payload bytes: a block mix of repetitive motifs and
    /// seeded random data, with the repetitive share set by the
    /// compressibility knob.
    pub fn payload(&self, id: EventId) -> Vec<u8> {
        let len = self.payload_len(id) as usize;
        let mut out = vec![0u8; len];
        let mut coin = SplitMix64::derive(self.profile.seed, &[id.run as u64, id.event, 2]);
        let mut noise = SplitMix64::derive(self.profile.seed, &[id.run as u64, id.event, 3]);
        for (block_no, block) in out.chunks_mut(BLOCK).enumerate() {
            let compressible =
                coin.next_below(1_000_000) < self.profile.compressible_ppm as u64;
            if compressible {
                let mut motif = [0u8; MOTIF];
                SplitMix64::derive(
                    self.profile.seed,
                    &[id.run as u64, id.event, 4, block_no as u64],
                )
                .fill(&mut motif);
                for chunk in block.chunks_mut(MOTIF) {
                    chunk.copy_from_slice(&motif[..chunk.len()]);
                }
            } else {
                noise.fill(block);
            }
        }
        out
    }

    pub fn checksum(&self, id: EventId) -> u32 {
        crc32(&self.payload(id))
    }

    /// Full oracle pass: identity, length, and checksum of every event the
    /// profile generates.
    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::default();
        for run in self.profile.run_numbers() {
            for event in 0..self.profile.events_per_run {
                let id = EventId::new(run, event);
                let payload = self.payload(id);
                m.push(ManifestEntry {
                    id,
                    length: payload.len() as u32,
                    checksum: crc32(&payload),
                });
            }
        }
        m
    }

    /// Event ranges per chunk for a run: greedy packing, never exceeding
    /// max_chunk_size of encoded bytes.
    pub fn chunk_layout(&self, run: u32) -> Vec<std::ops::Range<u64>> {
        let mut chunks = Vec::new();
        let mut start = 0u64;
        let mut size = (HEADER_LEN + TRAILER_LEN) as u64;
        let mut event = 0u64;
        while event < self.profile.events_per_run {
            let rec =
                RECORD_OVERHEAD as u64 + self.payload_len(EventId::new(run, event)) as u64;
            if size + rec > self.profile.max_chunk_size && event > start {
                chunks.push(start..event);
                start = event;
                size = (HEADER_LEN + TRAILER_LEN) as u64;
            }
            size += rec;
            event += 1;
        }
        if event > start || chunks.is_empty() {
            chunks.push(start..event);
        }
        chunks
    }

    pub fn chunk_count(&self, run: u32) -> u32 {
        self.chunk_layout(run).len() as u32
    }

    /// Materializes one chunk of one run.
    pub fn build_chunk(&self, run: u32, sequence: u32) -> Option<ChunkFile> {
        let layout = self.chunk_layout(run);
        let range = layout.get(sequence as usize)?.clone();
        let records = range
            .map(|event| ChunkRecord {
                event_number: event,
                payload: self.payload(EventId::new(run, event)),
            })
            .collect();
        Some(ChunkFile {
            run,
            sequence,
            records,
        })
    }
}
