//! Little-endian container primitives shared by dataset and checkpoint files.
//!
//! Layout: 4-byte magic, `u32` version, payload, then an FNV-1a digest of
//! everything before it.

use collocate_core::rng::Fnv64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("not a {expected} file (bad magic)")]
    BadMagic { expected: &'static str },
    #[error("unsupported {what} version {found} (this build reads version {supported})")]
    UnsupportedVersion { what: &'static str, found: u32, supported: u32 },
    #[error("file truncated: needed {needed} bytes at offset {at}")]
    Truncated { needed: usize, at: usize },
    #[error("checksum mismatch, file is corrupt")]
    Checksum,
    #[error("invalid contents: {0}")]
    Invalid(String),
}

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut buf = magic.to_vec();
        buf.extend_from_slice(&version.to_le_bytes());
        Self { buf }
    }

    pub fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }

    pub fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn f64s(&mut self, xs: &[f64]) {
        xs.iter().for_each(|x| self.f64(*x));
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    pub fn finish(mut self) -> Vec<u8> {
        let mut h = Fnv64::default();
        h.write(&self.buf);
        let d = h.finish();
        self.buf.extend_from_slice(&d.to_le_bytes());
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and digest before any payload is parsed.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], what: &'static str, version: u32) -> Result<Self, FormatError> {
        if bytes.len() < 16 {
            return Err(FormatError::Truncated { needed: 16, at: 0 });
        }
        if &bytes[..4] != magic {
            return Err(FormatError::BadMagic { expected: what });
        }
        let found = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if found != version {
            return Err(FormatError::UnsupportedVersion { what, found, supported: version });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let mut h = Fnv64::default();
        h.write(body);
        if h.finish() != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(FormatError::Checksum);
        }
        Ok(Self { buf: body, pos: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated { needed: n, at: self.pos }),
        }
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A `u64` count that must fit in what is left, `unit` bytes per item.
    pub fn len(&mut self, unit: usize) -> Result<usize, FormatError> {
        let n = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(unit as u64) > left {
            return Err(FormatError::Truncated { needed: n.saturating_mul(unit as u64) as usize, at: self.pos });
        }
        Ok(n as usize)
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let raw = self.take(n.checked_mul(8).ok_or(FormatError::Truncated { needed: usize::MAX, at: self.pos })?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], FormatError> {
        let n = self.len(1)?;
        self.take(n)
    }

    pub fn finish(self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::Invalid(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}
