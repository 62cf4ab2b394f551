//! Binary embedding blob.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic     8 bytes  b"SGEMBED\0"
//! version   u32
//! dim       u32
//! rows      u64
//! payload   rows * dim * f32, row-major
//! checksum  u64      first 8 bytes of SHA-256(payload)
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;

pub const MAGIC: &[u8; 8] = b"SGEMBED\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8;
const TRAILER_LEN: usize = 8;

pub fn payload_checksum(payload: &[u8]) -> u64 {
    let digest = Sha256::digest(payload);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn payload_bytes(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.as_slice().len() * 4);
    for x in m.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Checksum of the payload section that [`encode`] would write for `m`.
pub fn matrix_checksum(m: &EmbeddingMatrix) -> u64 {
    payload_checksum(&payload_bytes(m))
}

pub fn encode(m: &EmbeddingMatrix) -> Vec<u8> {
    let payload = payload_bytes(m);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&payload_checksum(&payload).to_le_bytes());
    out
}

/// Decoded blob plus the checksum stored in its trailer.
pub struct Decoded {
    pub matrix: EmbeddingMatrix,
    pub checksum: u64,
}

pub fn decode(bytes: &[u8]) -> Result<Decoded> {
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(Error::Corrupt(format!(
            "file is {} bytes, shorter than header and trailer",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Corrupt("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if dim == 0 {
        return Err(Error::Corrupt("zero embedding dimension".into()));
    }
    let payload_len = usize::try_from(rows)
        .ok()
        .and_then(|r| r.checked_mul(dim))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Corrupt(format!("row count {rows} overflows")))?;
    let expected = HEADER_LEN + payload_len + TRAILER_LEN;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "length mismatch: header implies {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = u64::from_le_bytes(bytes[HEADER_LEN + payload_len..].try_into().unwrap());
    let actual = payload_checksum(payload);
    if stored != actual {
        return Err(Error::Corrupt(format!(
            "checksum mismatch: stored {stored:016x}, computed {actual:016x}"
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Decoded {
        matrix: EmbeddingMatrix::new(dim, data)?,
        checksum: stored,
    })
}

pub fn write_blob(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    fs::write(path, encode(m)).map_err(|e| Error::io(path, e))
}

pub fn read_blob(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?.matrix)
}
