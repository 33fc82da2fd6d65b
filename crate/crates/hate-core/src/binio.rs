//! Little-endian binary primitives for the versioned container formats.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub struct Writer<W: Write> {
    inner: W,
    path: std::path::PathBuf,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W, path: &Path) -> Self {
        Writer {
            inner,
            path: path.to_path_buf(),
        }
    }

    fn io_err(&self, source: std::io::Error) -> Error {
        Error::Io {
            path: self.path.clone(),
            source,
        }
    }

    pub fn bytes(&mut self, data: &[u8]) -> Result<()> {
        self.inner.write_all(data).map_err(|e| self.io_err(e))
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u128(&mut self, v: u128) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    /// u32 byte length followed by the raw bytes.
    pub fn len_prefixed(&mut self, data: &[u8]) -> Result<()> {
        self.u32(data.len() as u32)?;
        self.bytes(data)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| self.io_err(e))
    }
}

pub struct Reader<R: Read> {
    inner: R,
    path: std::path::PathBuf,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R, path: &Path) -> Self {
        Reader {
            inner,
            path: path.to_path_buf(),
        }
    }

    pub fn corrupt(&self, message: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.clone(),
            message: message.into(),
        }
    }

    pub fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                self.corrupt("unexpected end of file")
            } else {
                Error::Io {
                    path: self.path.clone(),
                    source: e,
                }
            }
        })
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.bytes(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn u128(&mut self) -> Result<u128> {
        let mut b = [0u8; 16];
        self.bytes(&mut b)?;
        Ok(u128::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    /// Reads a u32 length prefix and that many bytes, with a sanity cap so a
    /// corrupt prefix cannot trigger a huge allocation.
    pub fn len_prefixed(&mut self, cap: usize) -> Result<Vec<u8>> {
        let len = self.u32()? as usize;
        if len > cap {
            return Err(self.corrupt(format!("length prefix {len} exceeds cap {cap}")));
        }
        let mut buf = vec![0u8; len];
        self.bytes(&mut buf)?;
        Ok(buf)
    }

    /// Fails unless the stream is exhausted.
    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.corrupt("trailing bytes after expected end of file")),
            Err(e) => Err(Error::Io {
                path: self.path.clone(),
                source: e,
            }),
        }
    }
}
