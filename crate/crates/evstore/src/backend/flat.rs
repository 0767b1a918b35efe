//! FlatB file format: payloads concatenated back to back, no framing. The
//! file size equals the sum of payload lengths; all structure lives in the
//! catalog locators.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::FileSummary;

pub struct FlatWriter {
    out: BufWriter<File>,
    path: PathBuf,
    offset: u64,
    object_count: u64,
    whole_crc: crc32fast::Hasher,
}

impl FlatWriter {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self {
            out: BufWriter::with_capacity(256 * 1024, File::create(path)?),
            path: path.to_path_buf(),
            offset: 0,
            object_count: 0,
            whole_crc: crc32fast::Hasher::new(),
        })
    }

    /// Opens an existing flat file for appending at `resume_at`, truncating
    /// anything beyond it. Migration resume relies on this.
    pub fn resume(path: &Path, resume_at: u64, object_count: u64) -> io::Result<Self> {
        let file = std::fs::OpenOptions::new().write(true).open(path)?;
        file.set_len(resume_at)?;
        use std::io::Seek;
        let mut file = file;
        file.seek(io::SeekFrom::Start(resume_at))?;
        Ok(Self {
            out: BufWriter::with_capacity(256 * 1024, file),
            path: path.to_path_buf(),
            offset: resume_at,
            object_count,
            whole_crc: crc32fast::Hasher::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file_size(&self) -> u64 {
        self.offset
    }

    pub fn payload_bytes(&self) -> u64 {
        self.offset
    }

    /// CRC32 of bytes written through this handle (not valid after resume).
    pub fn whole_file_crc(&self) -> u32 {
        self.whole_crc.clone().finalize()
    }

    pub fn append(&mut self, payload: &[u8]) -> io::Result<(u64, u32)> {
        let offset = self.offset;
        self.out.write_all(payload)?;
        self.whole_crc.update(payload);
        self.offset += payload.len() as u64;
        self.object_count += 1;
        Ok((offset, payload.len() as u32))
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()
    }

    pub fn finish(mut self) -> io::Result<FileSummary> {
        self.flush()?;
        Ok(FileSummary {
            file_size: self.offset,
            payload_bytes: self.offset,
            object_count: self.object_count,
        })
    }
}
