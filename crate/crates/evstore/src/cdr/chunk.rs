//! Chunk file format `CDR1`: the on-line system's output unit, a framed
//! sequence of event records with per-record and whole-body checksums.
//!
//! ```text
//! magic "CDR1" | version u16 | run u32 | sequence u32
//! repeated records: payload_len u32 | event_number u64 | payload | crc32(payload) u32
//! trailer: magic "1RDC" | record_count u32 | crc32(whole body) u32
//! ```
//!
//! All integers big-endian. The whole-body CRC covers every byte from the
//! leading magic through the record_count field inclusive.

use thiserror::Error;

use crate::codec::{crc32, ByteReader, ByteWriter};

pub const CHUNK_MAGIC: &[u8; 4] = b"CDR1";
pub const TRAILER_MAGIC: &[u8; 4] = b"1RDC";
pub const CHUNK_VERSION: u16 = 1;

/// Fixed framing bytes: header (14) + trailer (12).
pub const HEADER_LEN: usize = 14;
pub const TRAILER_LEN: usize = 12;
/// Per-record framing bytes around the payload.
pub const RECORD_OVERHEAD: usize = 16;

#[derive(Debug, Error)]
pub enum ChunkError {
    #[error("corrupt chunk frame: {0}")]
    FrameCorrupt(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkRecord {
    pub event_number: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkFile {
    pub run: u32,
    pub sequence: u32,
    pub records: Vec<ChunkRecord>,
}

impl ChunkFile {
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .records
                .iter()
                .map(|r| RECORD_OVERHEAD + r.payload.len())
                .sum::<usize>()
            + TRAILER_LEN
    }

    pub fn payload_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.payload.len() as u64).sum()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(self.encoded_len());
        w.put_bytes(CHUNK_MAGIC);
        w.put_u16(CHUNK_VERSION);
        w.put_u32(self.run);
        w.put_u32(self.sequence);
        for rec in &self.records {
            w.put_u32(rec.payload.len() as u32);
            w.put_u64(rec.event_number);
            w.put_bytes(&rec.payload);
            w.put_u32(crc32(&rec.payload));
        }
        w.put_bytes(TRAILER_MAGIC);
        w.put_u32(self.records.len() as u32);
        let body_crc = crc32(w.as_slice());
        w.put_u32(body_crc);
        w.into_vec()
    }

    pub fn decode(data: &[u8]) -> Result<Self, ChunkError> {
        if data.len() < HEADER_LEN + TRAILER_LEN {
            return Err(ChunkError::FrameCorrupt("chunk shorter than framing".into()));
        }
        // Whole-body CRC first; anything else is detail.
        let body_end = data.len() - 4;
        let stored = u32::from_be_bytes(data[body_end..].try_into().unwrap());
        if crc32(&data[..body_end]) != stored {
            return Err(ChunkError::FrameCorrupt("body crc mismatch".into()));
        }

        let mut r = ByteReader::new(data);
        let magic = r.get_bytes(4).map_err(frame)?;
        if magic != CHUNK_MAGIC {
            return Err(ChunkError::FrameCorrupt("bad chunk magic".into()));
        }
        let version = r.get_u16().map_err(frame)?;
        if version != CHUNK_VERSION {
            return Err(ChunkError::FrameCorrupt(format!(
                "unsupported chunk version {version}"
            )));
        }
        let run = r.get_u32().map_err(frame)?;
        let sequence = r.get_u32().map_err(frame)?;

        let mut records = Vec::new();
        loop {
            if r.remaining() < TRAILER_LEN {
                return Err(ChunkError::FrameCorrupt("truncated before trailer".into()));
            }
            if r.remaining() == TRAILER_LEN {
                break;
            }
            let len = r.get_u32().map_err(frame)? as usize;
            let event_number = r.get_u64().map_err(frame)?;
            let payload = r.get_bytes(len).map_err(frame)?.to_vec();
            let rec_crc = r.get_u32().map_err(frame)?;
            if crc32(&payload) != rec_crc {
                return Err(ChunkError::FrameCorrupt(format!(
                    "record crc mismatch at event {event_number}"
                )));
            }
            records.push(ChunkRecord {
                event_number,
                payload,
            });
        }
        let tmagic = r.get_bytes(4).map_err(frame)?;
        if tmagic != TRAILER_MAGIC {
            return Err(ChunkError::FrameCorrupt("bad trailer magic".into()));
        }
        let count = r.get_u32().map_err(frame)? as usize;
        if count != records.len() {
            return Err(ChunkError::FrameCorrupt(format!(
                "record count {count} != decoded {}",
                records.len()
            )));
        }
        Ok(Self {
            run,
            sequence,
            records,
        })
    }
}

fn frame(e: std::io::Error) -> ChunkError {
    ChunkError::FrameCorrupt(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ChunkFile {
        ChunkFile {
            run: 22018,
            sequence: 3,
            records: vec![
                ChunkRecord {
                    event_number: 6000,
                    payload: vec![1, 2, 3, 4, 5],
                },
                ChunkRecord {
                    event_number: 6001,
                    payload: vec![9; 1000],
                },
            ],
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let chunk = sample();
        let bytes = chunk.encode();
        assert_eq!(bytes.len(), chunk.encoded_len());
        assert_eq!(ChunkFile::decode(&bytes).unwrap(), chunk);
    }

    #[test]
    fn empty_chunk_is_valid() {
        let chunk = ChunkFile {
            run: 1,
            sequence: 0,
            records: vec![],
        };
        let bytes = chunk.encode();
        assert_eq!(bytes.len(), HEADER_LEN + TRAILER_LEN);
        let back = ChunkFile::decode(&bytes).unwrap();
        assert!(back.records.is_empty());
    }

    #[test]
    fn any_single_bit_flip_is_detected() {
        let bytes = sample().encode();
        // Every byte position: flip one bit, decode must fail.
        for pos in 0..bytes.len() {
            let mut corrupted = bytes.clone();
            corrupted[pos] ^= 0x10;
            assert!(
                ChunkFile::decode(&corrupted).is_err(),
                "flip at {pos} went undetected"
            );
        }
    }

    #[test]
    fn exact_header_layout() {
        let bytes = sample().encode();
        assert_eq!(&bytes[0..4], b"CDR1");
        assert_eq!(u16::from_be_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_be_bytes(bytes[6..10].try_into().unwrap()), 22018);
        assert_eq!(u32::from_be_bytes(bytes[10..14].try_into().unwrap()), 3);
        let n = bytes.len();
        assert_eq!(&bytes[n - 12..n - 8], b"1RDC");
        assert_eq!(u32::from_be_bytes(bytes[n - 8..n - 4].try_into().unwrap()), 2);
    }
}
