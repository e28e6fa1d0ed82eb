//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, format version (u32 LE), object kind (u32 LE), the
//! little-endian payload, then a SHA-256 digest of everything before it.
//! Floats are stored as their IEEE-754 bit patterns, so a round trip is
//! bit-exact.

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"METAEMS\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint holds object kind {found}, expected {expected}")]
    KindMismatch { found: u32, expected: u32 },
    #[error("checkpoint digest mismatch: file is corrupted")]
    DigestMismatch,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }

    pub fn usizes(&mut self, v: &[usize]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.u64(x as u64);
        }
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        if self.buf.len() < n {
            return Err(PersistError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, PersistError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bool(&mut self) -> Result<bool, PersistError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(PersistError::Corrupt(format!("invalid bool byte {other}"))),
        }
    }

    fn len(&mut self, elem_size: usize) -> Result<usize, PersistError> {
        let n = self.u64()? as usize;
        if n.checked_mul(elem_size).is_none_or(|bytes| bytes > self.buf.len()) {
            return Err(PersistError::Truncated);
        }
        Ok(n)
    }

    pub fn usizes(&mut self) -> Result<Vec<usize>, PersistError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.u64().map(|v| v as usize)).collect()
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>, PersistError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> Result<String, PersistError> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| PersistError::Corrupt(e.to_string()))
    }

    pub fn finish(self) -> Result<(), PersistError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(PersistError::Corrupt(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

/// Objects that can be written to a checkpoint file.
pub trait Checkpoint: Sized {
    /// Distinguishes object types sharing the container format.
    const KIND: u32;
    fn encode(&self, enc: &mut Encoder);
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, PersistError>;
}

pub fn to_bytes<T: Checkpoint>(obj: &T) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.buf.extend_from_slice(MAGIC);
    enc.u32(FORMAT_VERSION);
    enc.u32(T::KIND);
    obj.encode(&mut enc);
    let digest = Sha256::digest(&enc.buf);
    enc.buf.extend_from_slice(&digest);
    enc.buf
}

pub fn from_bytes<T: Checkpoint>(bytes: &[u8]) -> Result<T, PersistError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(PersistError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN {
        return Err(PersistError::Truncated);
    }
    let mut header = Decoder::new(&bytes[MAGIC.len()..]);
    let version = header.u32()?;
    if version != FORMAT_VERSION {
        return Err(PersistError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(PersistError::DigestMismatch);
    }
    let kind = header.u32()?;
    if kind != T::KIND {
        return Err(PersistError::KindMismatch { found: kind, expected: T::KIND });
    }
    let mut dec = Decoder::new(&body[MAGIC.len() + 8..]);
    let obj = T::decode(&mut dec)?;
    dec.finish()?;
    Ok(obj)
}

pub fn save<T: Checkpoint>(path: &std::path::Path, obj: &T) -> Result<(), PersistError> {
    std::fs::write(path, to_bytes(obj))?;
    Ok(())
}

pub fn load<T: Checkpoint>(path: &std::path::Path) -> Result<T, PersistError> {
    from_bytes(&std::fs::read(path)?)
}
