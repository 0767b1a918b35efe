//! Simulated tape library: a single drive over sequential volumes, with
//! per-volume mount latency, a sequential bandwidth cap, and real
//! compression of file bytes (which is what turns the container backend's
//! ~30% structural overhead into the ~6% on-tape overhead).
//!
//! Stored copies live under `tape_dir/vol<NNN>/pos<NNN>.tz` as zstd frames.
//! A write lands in a temp file, is verified by decompress-and-checksum,
//! and only then renamed into place.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::catalog::TapeCopy;
use crate::codec::crc32;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("tape verification failed: {0}")]
    Verify(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shared fault-injection surface for the tape device.
#[derive(Default)]
pub struct TapeControl {
    /// Bandwidth multiplier; 0 freezes the drive.
    rate_factor: Mutex<f64>,
    slow_until: Mutex<Option<Instant>>,
    corrupt_next_write: AtomicBool,
}

impl TapeControl {
    pub fn slow_down(&self, factor: f64, until: Instant) {
        *self.rate_factor.lock().unwrap() = factor;
        *self.slow_until.lock().unwrap() = Some(until);
    }

    pub fn corrupt_next_write(&self) {
        self.corrupt_next_write.store(true, Ordering::SeqCst);
    }

    fn factor(&self) -> f64 {
        let mut until = self.slow_until.lock().unwrap();
        match *until {
            Some(t) if Instant::now() < t => *self.rate_factor.lock().unwrap(),
            Some(_) => {
                *until = None;
                1.0
            }
            None => 1.0,
        }
    }

    fn take_corruption(&self) -> bool {
        self.corrupt_next_write.swap(false, Ordering::SeqCst)
    }
}

#[derive(Debug, Clone)]
pub struct TapeOptions {
    pub mount_latency_ms: u64,
    /// Bytes/s on stored (compressed) bytes; 0 disables pacing.
    pub bandwidth: u64,
    pub volume_capacity: u64,
    pub compression_level: i32,
}

impl From<&crate::config::Config> for TapeOptions {
    fn from(cfg: &crate::config::Config) -> Self {
        Self {
            mount_latency_ms: cfg.tape_mount_latency_ms,
            bandwidth: cfg.tape_bandwidth,
            volume_capacity: cfg.tape_volume_capacity,
            compression_level: cfg.compression_level,
        }
    }
}

struct DriveState {
    mounted: Option<u32>,
    volume: u32,
    position: u32,
    volume_bytes: u64,
}

pub struct TapeLibrary {
    dir: PathBuf,
    opts: TapeOptions,
    drive: Mutex<DriveState>,
    control: Arc<TapeControl>,
}

impl TapeLibrary {
    pub fn open(dir: &Path, opts: TapeOptions) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            opts,
            drive: Mutex::new(DriveState {
                mounted: None,
                volume: 1,
                position: 0,
                volume_bytes: 0,
            }),
            control: Arc::new(TapeControl::default()),
        })
    }

    pub fn control(&self) -> Arc<TapeControl> {
        self.control.clone()
    }

    /// Registers a copy recovered from the journal so new writes never
    /// collide with existing slots.
    pub fn note_existing(&self, copy: &TapeCopy) {
        let mut d = self.drive.lock().unwrap();
        if copy.volume_id > d.volume
            || (copy.volume_id == d.volume && copy.position > d.position)
        {
            d.volume = copy.volume_id;
            d.position = copy.position;
            // Unknown fill; force the next write onto a fresh volume.
            d.volume_bytes = self.opts.volume_capacity;
        }
    }

    fn copy_path(&self, volume: u32, position: u32) -> PathBuf {
        self.dir
            .join(format!("vol{volume:04}"))
            .join(format!("pos{position:06}.tz"))
    }

    /// Sequential-transfer simulation on stored bytes; respects the
    /// slow-down control.
    fn pace(&self, bytes: u64) {
        if self.opts.bandwidth == 0 {
            return;
        }
        let mut remaining = bytes as f64;
        while remaining > 0.0 {
            let factor = self.control.factor();
            if factor <= 0.0 {
                std::thread::sleep(Duration::from_millis(10));
                continue;
            }
            let rate = self.opts.bandwidth as f64 * factor;
            let slice = Duration::from_millis(10);
            std::thread::sleep(slice);
            remaining -= rate * slice.as_secs_f64();
        }
    }

    /// Sequential writes pay the mount only on a volume switch; a recall
    /// always pays it (mount plus locate to the copy's position).
    fn mount(&self, volume: u32, locate: bool) {
        let needs_mount = {
            let mut d = self.drive.lock().unwrap();
            if d.mounted == Some(volume) {
                false
            } else {
                d.mounted = Some(volume);
                true
            }
        };
        if (needs_mount || locate) && self.opts.mount_latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.opts.mount_latency_ms));
        }
    }

    /// Compresses and stores `src`, verifying the copy decompresses back to
    /// `expect_crc` before the slot becomes durable. When `payload_spans`
    /// is given, the bare payload stream is compressed as well so stats can
    /// report how much tape the payloads alone would have needed.
    pub fn write_file(
        &self,
        src: &Path,
        expect_crc: u32,
        payload_spans: Option<&[(u64, u32)]>,
    ) -> Result<TapeCopy, TapeError> {
        let raw = fs::read(src)?;
        let mut stored = zstd::bulk::compress(&raw, self.opts.compression_level)
            .map_err(TapeError::Io)?;
        if self.control.take_corruption() {
            let mid = stored.len() / 2;
            stored[mid] ^= 0xFF;
        }

        let payload_only_stored = match payload_spans {
            Some(spans) if !spans.is_empty() => {
                let mut stream =
                    Vec::with_capacity(spans.iter().map(|&(_, l)| l as usize).sum());
                for &(off, len) in spans {
                    let off = off as usize;
                    stream.extend_from_slice(&raw[off..off + len as usize]);
                }
                Some(
                    zstd::bulk::compress(&stream, self.opts.compression_level)
                        .map_err(TapeError::Io)?
                        .len() as u64,
                )
            }
            _ => None,
        };

        // Claim the slot.
        let (volume, position) = {
            let mut d = self.drive.lock().unwrap();
            if d.volume_bytes + stored.len() as u64 > self.opts.volume_capacity
                && d.volume_bytes > 0
            {
                d.volume += 1;
                d.position = 0;
                d.volume_bytes = 0;
            }
            d.position += 1;
            d.volume_bytes += stored.len() as u64;
            (d.volume, d.position)
        };

        self.mount(volume, false);
        self.pace(stored.len() as u64);

        let final_path = self.copy_path(volume, position);
        fs::create_dir_all(final_path.parent().unwrap())?;
        let tmp = final_path.with_extension("tmp");
        fs::write(&tmp, &stored)?;

        // Read-after-write verification straight from the medium.
        let back = fs::read(&tmp)?;
        let decompressed = zstd::bulk::decompress(&back, raw.len())
            .map_err(|e| TapeError::Verify(format!("decompress: {e}")))?;
        if crc32(&decompressed) != expect_crc {
            let _ = fs::remove_file(&tmp);
            return Err(TapeError::Verify(format!(
                "checksum mismatch on volume {volume} position {position}"
            )));
        }
        fs::rename(&tmp, &final_path)?;

        Ok(TapeCopy {
            volume_id: volume,
            position,
            stored_bytes: stored.len() as u64,
            checksum_after_decompress: expect_crc,
            payload_only_stored,
        })
    }

    /// Recalls a copy to `dst`: mount latency, sequential read pacing,
    /// decompression, checksum verification, atomic rename.
    pub fn read_file(&self, copy: &TapeCopy, expect_len: u64, dst: &Path) -> Result<(), TapeError> {
        self.mount(copy.volume_id, true);
        self.pace(copy.stored_bytes);
        let stored = fs::read(self.copy_path(copy.volume_id, copy.position))?;
        let raw = zstd::bulk::decompress(&stored, expect_len as usize)
            .map_err(|e| TapeError::Verify(format!("decompress: {e}")))?;
        if crc32(&raw) != copy.checksum_after_decompress {
            return Err(TapeError::Verify("recall checksum mismatch".into()));
        }
        let tmp = dst.with_extension("recall-tmp");
        fs::write(&tmp, &raw)?;
        fs::rename(&tmp, dst)?;
        Ok(())
    }
}
