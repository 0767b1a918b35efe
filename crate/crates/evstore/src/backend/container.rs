//! ContainerA file format.
//!
//! ```text
//! page 0:            magic "CAF1" | version u16 | reserved u16 | db_id u64
//!                    page_size u32 | fill_ppm u32 | entropy_ppm u32
//!                    seed u64 | created_ms u64 | structural filler
//! object extent:     descriptor (64 B) | payload | page records (16 B per
//!                    page) | structural filler, padded to a whole number
//!                    of pages
//! ```
//!
//! An object's extent spans `ceil((64 + len) / capacity)` pages where
//! `capacity = page_size * fill_ppm / 1e6`; the fill target is what makes
//! structural overhead proportional to payload volume. Payload bytes are
//! contiguous at `extent_start + 64`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::codec::{crc32, now_ms, ByteWriter};
use crate::rng::SplitMix64;

use super::FileSummary;

pub const DESCRIPTOR_LEN: usize = 64;
const PAGE_RECORD_LEN: usize = 16;
const FILE_MAGIC: &[u8; 4] = b"CAF1";
const OBJECT_MAGIC: &[u8; 4] = b"CAOB";

#[derive(Debug, Clone)]
pub struct ContainerParams {
    pub page_size: u32,
    pub fill_ppm: u32,
    pub entropy_ppm: u32,
    pub seed: u64,
}

impl ContainerParams {
    pub fn from_config(cfg: &crate::config::Config, seed: u64) -> Self {
        Self {
            page_size: cfg.container_page_size,
            fill_ppm: cfg.container_fill_ppm,
            entropy_ppm: cfg.container_structure_entropy_ppm,
            seed,
        }
    }

    pub fn capacity(&self) -> u64 {
        (self.page_size as u64 * self.fill_ppm as u64) / 1_000_000
    }
}

pub struct ContainerWriter {
    out: BufWriter<File>,
    path: PathBuf,
    params: ContainerParams,
    file_size: u64,
    payload_bytes: u64,
    object_seq: u64,
    page_cursor: u64,
    whole_crc: crc32fast::Hasher,
}

impl ContainerWriter {
    pub fn create(path: &Path, db_id: u64, params: ContainerParams) -> io::Result<Self> {
        let file = File::create(path)?;
        let mut w = Self {
            out: BufWriter::with_capacity(256 * 1024, file),
            path: path.to_path_buf(),
            params,
            file_size: 0,
            payload_bytes: 0,
            object_seq: 0,
            page_cursor: 1,
            whole_crc: crc32fast::Hasher::new(),
        };
        w.write_header_page(db_id)?;
        Ok(w)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file_size(&self) -> u64 {
        self.file_size
    }

    pub fn payload_bytes(&self) -> u64 {
        self.payload_bytes
    }

    /// CRC32 of every byte written so far; what the HSM registers.
    pub fn whole_file_crc(&self) -> u32 {
        self.whole_crc.clone().finalize()
    }

    fn write_header_page(&mut self, db_id: u64) -> io::Result<()> {
        let page = self.params.page_size as usize;
        let mut head = ByteWriter::with_capacity(page);
        head.put_bytes(FILE_MAGIC);
        head.put_u16(1);
        head.put_u16(0);
        head.put_u64(db_id);
        head.put_u32(self.params.page_size);
        head.put_u32(self.params.fill_ppm);
        head.put_u32(self.params.entropy_ppm);
        head.put_u64(self.params.seed);
        head.put_u64(now_ms());
        let mut buf = head.into_vec();
        let used = buf.len();
        buf.resize(page, 0);
        fill_structural(
            &mut buf[used..],
            self.params.seed,
            u64::MAX,
            self.params.entropy_ppm,
        );
        self.out.write_all(&buf)?;
        self.whole_crc.update(&buf);
        self.file_size += page as u64;
        Ok(())
    }

    /// Appends one object; returns the (offset, length) of its contiguous
    /// payload bytes.
    pub fn append(&mut self, payload: &[u8]) -> io::Result<(u64, u32)> {
        let page = self.params.page_size as u64;
        let capacity = self.params.capacity();
        let need = DESCRIPTOR_LEN as u64 + payload.len() as u64;
        let pages = need.div_ceil(capacity).max(1);
        let extent_len = (pages * page) as usize;
        debug_assert!(
            need + (pages as usize * PAGE_RECORD_LEN) as u64 <= extent_len as u64,
            "fill target leaves room for page records"
        );

        let mut extent = Vec::with_capacity(extent_len);
        let mut desc = ByteWriter::with_capacity(DESCRIPTOR_LEN);
        desc.put_bytes(OBJECT_MAGIC);
        desc.put_u64(self.object_seq);
        desc.put_u32(payload.len() as u32);
        desc.put_u32(crc32(payload));
        desc.put_u32(pages as u32);
        desc.put_u64(now_ms());
        desc.put_u32(0);
        let mut desc = desc.into_vec();
        desc.resize(DESCRIPTOR_LEN, 0);
        extent.extend_from_slice(&desc);
        extent.extend_from_slice(payload);

        for p in 0..pages {
            let mut rec = ByteWriter::with_capacity(PAGE_RECORD_LEN);
            rec.put_u32((self.page_cursor + p) as u32);
            rec.put_u16(if p + 1 == pages {
                (need % page) as u16
            } else {
                self.params.page_size as u16
            });
            rec.put_u16(0);
            rec.put_u64(self.object_seq);
            extent.extend_from_slice(rec.as_slice());
        }

        let used = extent.len();
        extent.resize(extent_len, 0);
        fill_structural(
            &mut extent[used..],
            self.params.seed,
            self.object_seq,
            self.params.entropy_ppm,
        );

        let offset = self.file_size + DESCRIPTOR_LEN as u64;
        self.out.write_all(&extent)?;
        self.whole_crc.update(&extent);
        self.file_size += extent_len as u64;
        self.payload_bytes += payload.len() as u64;
        self.object_seq += 1;
        self.page_cursor += pages;
        Ok((offset, payload.len() as u32))
    }

    pub fn finish(mut self) -> io::Result<FileSummary> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(FileSummary {
            file_size: self.file_size,
            payload_bytes: self.payload_bytes,
            object_count: self.object_seq,
        })
    }
}

/// Structural filler: `entropy_ppm` of the bytes come from a seeded random
/// stream (incompressible), the rest stay zero. This is what fixes how much
/// of the container overhead survives tape compression.
fn fill_structural(buf: &mut [u8], seed: u64, stream: u64, entropy_ppm: u32) {
    let mut rng = SplitMix64::derive(seed, &[stream, buf.len() as u64]);
    let block = 256usize;
    let noisy = (block * entropy_ppm as usize) / 1_000_000;
    if noisy == 0 {
        return;
    }
    for chunk in buf.chunks_mut(block) {
        let n = noisy.min(chunk.len());
        rng.fill(&mut chunk[..n]);
    }
}
