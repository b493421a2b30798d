//! Little-endian primitives for the binary buffer and checkpoint formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub(crate) struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Writer { inner }
    }

    pub fn into_inner(self) -> W {
        self.inner
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner
            .write_all(b)
            .map_err(|e| Error::io("<stream>", e))
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

    pub fn usize(&mut self, v: usize) -> Result<()> {
        self.u64(v as u64)
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, v: &[f64]) -> Result<()> {
        for &x in v {
            self.f64(x)?;
        }
        Ok(())
    }

    pub fn bool(&mut self, v: bool) -> Result<()> {
        self.bytes(&[v as u8])
    }

    pub fn string(&mut self, s: &str) -> Result<()> {
        self.usize(s.len())?;
        self.bytes(s.as_bytes())
    }

    pub fn matrix(&mut self, m: &Matrix) -> Result<()> {
        self.usize(m.rows())?;
        self.usize(m.cols())?;
        self.f64s(m.data())
    }

    pub fn usizes(&mut self, v: &[usize]) -> Result<()> {
        self.usize(v.len())?;
        for &x in v {
            self.usize(x)?;
        }
        Ok(())
    }
}

/// Reader that tracks its byte offset for error reporting.
pub(crate) struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Reader { inner, offset: 0 }
    }

    pub fn format_error(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.offset,
            message: message.into(),
        }
    }

    pub fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    pub fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| Error::Format {
            offset: self.offset,
            message: format!("truncated input ({e})"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.bytes()?))
    }

    /// Length-like value, sanity-bounded so corrupt input cannot trigger huge allocations.
    pub fn usize(&mut self) -> Result<usize> {
        let at = self.offset;
        let v = self.u64()?;
        if v > (1 << 40) {
            return Err(Error::Format {
                offset: at,
                message: format!("implausible length {v}"),
            });
        }
        Ok(v as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.bytes::<1>()?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(self.format_error(format!("invalid boolean byte {b}"))),
        }
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.usize()?;
        let mut buf = vec![0u8; n];
        self.fill(&mut buf)?;
        String::from_utf8(buf).map_err(|_| self.format_error("invalid UTF-8"))
    }

    pub fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let data = self.f64s(rows * cols)?;
        Matrix::from_vec(rows, cols, data)
    }

    pub fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.usize()?;
        (0..n).map(|_| self.usize()).collect()
    }
}
