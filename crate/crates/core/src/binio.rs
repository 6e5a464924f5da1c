//! Little-endian binary primitives shared by the dataset and checkpoint formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Upper bound on any length prefix, to reject corrupt files before allocating.
const MAX_LEN: u64 = 1 << 34;

pub(crate) struct BinWriter<W: Write> {
    inner: W,
    path: PathBuf,
}

impl<W: Write> BinWriter<W> {
    pub fn new(inner: W, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
        }
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes).map_err(|e| Error::io(&self.path, e))
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.put(b)
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.put(&v.to_le_bytes())
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.u64(s.len() as u64)?;
        self.put(s.as_bytes())
    }

    pub fn byte_array(&mut self, b: &[u8]) -> Result<()> {
        self.u64(b.len() as u64)?;
        self.put(b)
    }

    pub fn f32_array(&mut self, values: impl ExactSizeIterator<Item = f32>) -> Result<()> {
        self.u64(values.len() as u64)?;
        let mut buf = Vec::with_capacity(values.len() * 4);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.put(&buf)
    }

    pub fn f64_array(&mut self, values: impl ExactSizeIterator<Item = f64>) -> Result<()> {
        self.u64(values.len() as u64)?;
        let mut buf = Vec::with_capacity(values.len() * 8);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.put(&buf)
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.inner)
    }
}

pub(crate) struct BinReader<R: Read> {
    inner: R,
    path: PathBuf,
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
        }
    }

    pub fn fail(&self, reason: impl Into<String>) -> Error {
        Error::format(Some(self.path.clone()), reason)
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                self.fail("truncated file")
            } else {
                Error::io(&self.path, e)
            }
        })?;
        Ok(b)
    }

    pub fn expect(&mut self, magic: &[u8; 8]) -> Result<()> {
        let got = self.take::<8>()?;
        if &got != magic {
            return Err(self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn tag(&mut self) -> Result<[u8; 4]> {
        self.take::<4>()
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn len(&mut self, width: u64) -> Result<usize> {
        let n = self.u64()?;
        if n.saturating_mul(width) > MAX_LEN {
            return Err(self.fail(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }

    fn raw(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                self.fail("truncated file")
            } else {
                Error::io(&self.path, e)
            }
        })?;
        Ok(buf)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        let raw = self.raw(n)?;
        String::from_utf8(raw).map_err(|_| self.fail("invalid utf-8 string"))
    }

    pub fn byte_array(&mut self) -> Result<Vec<u8>> {
        let n = self.len(1)?;
        self.raw(n)
    }

    pub fn f32_array(&mut self) -> Result<Vec<f32>> {
        let n = self.len(4)?;
        let raw = self.raw(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn f64_array(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        let raw = self.raw(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Errors unless the stream is exhausted.
    pub fn end(mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.fail("trailing bytes")),
            Err(e) => Err(Error::io(&self.path, e)),
        }
    }
}

pub(crate) fn open(path: &Path) -> Result<BinReader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    Ok(BinReader::new(BufReader::new(f), path))
}

/// Writes through a temporary sibling and renames it into place, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    {
        let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        body(&mut w)?;
        let f = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
