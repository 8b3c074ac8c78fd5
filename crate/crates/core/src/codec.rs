//! Little-endian binary container shared by checkpoints, strategy state and
//! prepared datasets.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` payload length, payload,
//! then a SHA-256 digest over everything preceding it.

use byteorder::{ByteOrder, LittleEndian};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DIGEST_LEN: usize = 32;
const HEADER_LEN: usize = 8 + 4 + 8;

pub fn seal(magic: &[u8; 8], version: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Verifies magic, version and digest and returns the payload.
pub fn open<'a>(magic: &[u8; 8], version: u32, bytes: &'a [u8]) -> Result<&'a [u8]> {
    if bytes.len() < HEADER_LEN + DIGEST_LEN {
        return Err(Error::Corrupt(format!("truncated container ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let found = LittleEndian::read_u32(&bytes[8..12]);
    if found != version {
        return Err(Error::Corrupt(format!(
            "format version {found} does not match expected {version}"
        )));
    }
    let len = LittleEndian::read_u64(&bytes[12..20]);
    let expected_total = (HEADER_LEN as u64)
        .checked_add(len)
        .and_then(|n| n.checked_add(DIGEST_LEN as u64));
    if expected_total != Some(bytes.len() as u64) {
        return Err(Error::Corrupt("payload length does not match file size".into()));
    }
    let body_end = bytes.len() - DIGEST_LEN;
    let digest = Sha256::digest(&bytes[..body_end]);
    if digest.as_slice() != &bytes[body_end..] {
        return Err(Error::Corrupt("content hash mismatch".into()));
    }
    Ok(&bytes[HEADER_LEN..body_end])
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
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
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn f32s(&mut self, values: &[f32]) {
        self.u64(values.len() as u64);
        self.buf.reserve(values.len() * 4);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn u32s(&mut self, values: &[u32]) {
        self.u64(values.len() as u64);
        for v in values {
            self.u32(*v);
        }
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt(format!("unexpected end of payload at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8)?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8)?))
    }

    /// Reads a length prefix and checks it against the bytes that remain,
    /// so a hostile length cannot trigger a huge allocation.
    fn len_prefix(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.checked_mul(elem_size as u64).is_none_or(|b| b > remaining) {
            return Err(Error::Corrupt(format!("length prefix {n} exceeds payload")));
        }
        Ok(n as usize)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len_prefix(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("invalid utf-8 string".into()))
    }

    pub fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.len_prefix(4)?;
        let raw = self.take(n * 4)?;
        let mut out = vec![0f32; n];
        LittleEndian::read_f32_into(raw, &mut out);
        Ok(out)
    }

    pub fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.len_prefix(4)?;
        let raw = self.take(n * 4)?;
        let mut out = vec![0u32; n];
        LittleEndian::read_u32_into(raw, &mut out);
        Ok(out)
    }

    /// Count prefix for a sequence of records at least `min_record` bytes each.
    pub fn count(&mut self, min_record: usize) -> Result<usize> {
        self.len_prefix(min_record.max(1))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"TESTMAGC";

    #[test]
    fn sealed_payload_opens() {
        let sealed = seal(MAGIC, 3, b"hello");
        assert_eq!(open(MAGIC, 3, &sealed).unwrap(), b"hello");
    }

    #[test]
    fn tampering_is_detected() {
        let mut sealed = seal(MAGIC, 1, b"payload bytes");
        sealed[22] ^= 0x01;
        assert!(matches!(open(MAGIC, 1, &sealed), Err(Error::Corrupt(_))));
    }

    #[test]
    fn version_mismatch_is_refused() {
        let sealed = seal(MAGIC, 1, b"x");
        let err = open(MAGIC, 2, &sealed).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn hostile_length_prefix_is_rejected() {
        let mut w = Writer::new();
        w.u64(u64::MAX);
        let bytes = w.into_inner();
        let mut r = Reader::new(&bytes);
        assert!(r.f32s().is_err());
    }
}
