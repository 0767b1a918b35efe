//! Byte-range serving wire protocol, big-endian throughout.
//!
//! ```text
//! request:  magic "EVRD" | verb u8 (1=READ, 2=STAT) | file_id u64
//!           | offset u64 | length u32 | uid u32            (29 bytes)
//! response: status u8 | length u32 | payload | crc32(payload) u32
//! ```
//!
//! A STAT response's payload is `size u64 | state u8 | checksum u32`.

use std::io::{self, Read, Write};

pub const REQUEST_MAGIC: &[u8; 4] = b"EVRD";
pub const REQUEST_LEN: usize = 29;

pub const VERB_READ: u8 = 1;
pub const VERB_STAT: u8 = 2;

pub const STATUS_OK: u8 = 0;
pub const STATUS_NO_SUCH_FILE: u8 = 1;
pub const STATUS_RANGE_OUT_OF_BOUNDS: u8 = 2;
pub const STATUS_RECALL_FAILED: u8 = 3;
pub const STATUS_PERMISSION_DENIED: u8 = 4;
pub const STATUS_BAD_REQUEST: u8 = 5;
pub const STATUS_INTERNAL: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadRequest {
    pub verb: u8,
    pub file_id: u64,
    pub offset: u64,
    pub length: u32,
    pub uid: u32,
}

impl ReadRequest {
    pub fn encode(&self) -> [u8; REQUEST_LEN] {
        let mut buf = [0u8; REQUEST_LEN];
        buf[0..4].copy_from_slice(REQUEST_MAGIC);
        buf[4] = self.verb;
        buf[5..13].copy_from_slice(&self.file_id.to_be_bytes());
        buf[13..21].copy_from_slice(&self.offset.to_be_bytes());
        buf[21..25].copy_from_slice(&self.length.to_be_bytes());
        buf[25..29].copy_from_slice(&self.uid.to_be_bytes());
        buf
    }

    pub fn decode(buf: &[u8; REQUEST_LEN]) -> Option<Self> {
        if &buf[0..4] != REQUEST_MAGIC {
            return None;
        }
        Some(Self {
            verb: buf[4],
            file_id: u64::from_be_bytes(buf[5..13].try_into().unwrap()),
            offset: u64::from_be_bytes(buf[13..21].try_into().unwrap()),
            length: u32::from_be_bytes(buf[21..25].try_into().unwrap()),
            uid: u32::from_be_bytes(buf[25..29].try_into().unwrap()),
        })
    }
}

pub fn write_response(w: &mut impl Write, status: u8, payload: &[u8]) -> io::Result<()> {
    let mut head = [0u8; 5];
    head[0] = status;
    head[1..5].copy_from_slice(&(payload.len() as u32).to_be_bytes());
    w.write_all(&head)?;
    if !payload.is_empty() {
        w.write_all(payload)?;
    }
    w.write_all(&crate::codec::crc32(payload).to_be_bytes())
}

/// Reads one response; returns (status, payload) after verifying the
/// payload CRC.
pub fn read_response(r: &mut impl Read, max_len: u32) -> io::Result<(u8, Vec<u8>)> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head)?;
    let status = head[0];
    let len = u32::from_be_bytes(head[1..5].try_into().unwrap());
    if len > max_len {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("response length {len} exceeds limit {max_len}"),
        ));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    let mut crc_buf = [0u8; 4];
    r.read_exact(&mut crc_buf)?;
    if u32::from_be_bytes(crc_buf) != crate::codec::crc32(&payload) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "response payload crc mismatch",
        ));
    }
    Ok((status, payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_layout_is_bit_exact() {
        let req = ReadRequest {
            verb: VERB_READ,
            file_id: 0x0102030405060708,
            offset: 0x1112131415161718,
            length: 0x21222324,
            uid: 0x31323334,
        };
        let buf = req.encode();
        assert_eq!(&buf[0..4], b"EVRD");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 0x01);
        assert_eq!(buf[12], 0x08);
        assert_eq!(buf[13], 0x11);
        assert_eq!(buf[21], 0x21);
        assert_eq!(buf[25], 0x31);
        assert_eq!(ReadRequest::decode(&buf), Some(req));
    }

    #[test]
    fn response_round_trip_and_crc() {
        let mut wire = Vec::new();
        write_response(&mut wire, STATUS_OK, b"payload bytes").unwrap();
        let (status, payload) = read_response(&mut wire.as_slice(), 1024).unwrap();
        assert_eq!(status, STATUS_OK);
        assert_eq!(payload, b"payload bytes");

        // Corrupt the payload: the client must notice.
        wire[7] ^= 0xFF;
        assert!(read_response(&mut wire.as_slice(), 1024).is_err());
    }
}
