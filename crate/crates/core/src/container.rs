//! Binary container for generated frames and decorrelated tensors.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "NOMADSET" u32 version
//! str config_hash, str fingerprint
//! u64 seed, u64 first_index, u32 K, u32 Nc, u32 M, u32 Ns, u32 flags, u64 records
//! per record: u64 frame_index
//!   "ACTV" f64 true_rate, bytes bits
//!   "TENS" f32[2 M K Ns]              interleaved re/im, (m, k, j) order
//!   if flags & FULL_FRAMES:
//!   "SYMB" bytes (i8 as u8)[K Ns]
//!   "CHAN" f64 noise_var, f32[2 M K]
//!   "RECV" f32[2 M Nc Ns]
//! ```
//!
//! Complex values are stored as `complex64` (two `f32`).

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::binio::{open, write_atomic, BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::frontend::DecorrelatedTensor;
use crate::scalar::{cplx, Cplx, Real};
use crate::simulator::{ActivityVector, ChannelState, PacketFrame, SymbolFrame};

const MAGIC: &[u8; 8] = b"NOMADSET";
const VERSION: u32 = 1;
const FULL_FRAMES: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub config_hash: String,
    /// Hash of the generation parameters; must match the consumer's expectation.
    pub fingerprint: String,
    pub seed: u64,
    pub first_index: u64,
    pub devices: usize,
    pub spreading_factor: usize,
    pub antennas: usize,
    pub symbols: usize,
}

/// One generated frame: labels, front-end tensor and optionally the raw frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord<T: Real> {
    pub index: u64,
    pub activity: ActivityVector,
    pub tensor: DecorrelatedTensor<T>,
    pub frame: Option<PacketFrame<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let h = &self.header;
        for r in &self.records {
            if r.activity.len() != h.devices || r.tensor.dims() != (h.antennas, h.devices, h.symbols) {
                return Err(Error::dims(
                    "dataset record",
                    (h.antennas, h.devices, h.symbols),
                    r.tensor.dims(),
                ));
            }
            if let Some(f) = &r.frame {
                if f.dims() != (h.devices, h.spreading_factor, h.antennas, h.symbols) {
                    return Err(Error::dims(
                        "dataset frame",
                        (h.devices, h.spreading_factor, h.antennas, h.symbols),
                        f.dims(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn complex_f32<'a, T: Real + 'a>(values: impl Iterator<Item = &'a Cplx<T>>) -> Vec<f32> {
    values
        .flat_map(|v| [v.re.as_f64() as f32, v.im.as_f64() as f32])
        .collect()
}

fn from_f32<T: Real>(pair: &[f32]) -> Cplx<T> {
    cplx(T::lit(f64::from(pair[0])), T::lit(f64::from(pair[1])))
}

fn section<W: Write>(w: &mut BinWriter<W>, tag: &[u8; 4]) -> Result<()> {
    w.bytes(tag)
}

fn expect_section<R: std::io::Read>(r: &mut BinReader<R>, tag: &[u8; 4]) -> Result<()> {
    let got = r.tag()?;
    if &got != tag {
        return Err(r.fail(format!(
            "expected section {}, found {}",
            String::from_utf8_lossy(tag),
            String::from_utf8_lossy(&got)
        )));
    }
    Ok(())
}

/// Writes a dataset atomically. Frames are included only if every record carries one.
pub fn write_dataset<T: Real>(path: &Path, data: &Dataset<T>) -> Result<()> {
    data.validate()?;
    let full = !data.records.is_empty() && data.records.iter().all(|r| r.frame.is_some());
    let h = &data.header;
    write_atomic(path, |out| {
        let mut w = BinWriter::new(out, path);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.str(&h.config_hash)?;
        w.str(&h.fingerprint)?;
        w.u64(h.seed)?;
        w.u64(h.first_index)?;
        for d in [h.devices, h.spreading_factor, h.antennas, h.symbols] {
            w.u32(d as u32)?;
        }
        w.u32(if full { FULL_FRAMES } else { 0 })?;
        w.u64(data.records.len() as u64)?;
        for rec in &data.records {
            w.u64(rec.index)?;
            section(&mut w, b"ACTV")?;
            w.f64(rec.activity.true_rate())?;
            let bits: Vec<u8> = rec.activity.bits().iter().map(|&b| u8::from(b)).collect();
            w.byte_array(&bits)?;
            section(&mut w, b"TENS")?;
            w.f32_array(complex_f32(rec.tensor.data().iter()).into_iter())?;
            if full {
                let f = rec.frame.as_ref().unwrap();
                section(&mut w, b"SYMB")?;
                let sym: Vec<u8> = f.symbols.symbols().iter().map(|&s| s as u8).collect();
                w.byte_array(&sym)?;
                section(&mut w, b"CHAN")?;
                w.f64(f.channel.noise_var())?;
                w.f32_array(complex_f32(f.channel.gains().iter()).into_iter())?;
                section(&mut w, b"RECV")?;
                let recv: Vec<f32> = f.received.iter().flat_map(|y| complex_f32(y.iter())).collect();
                w.f32_array(recv.into_iter())?;
            }
        }
        w.finish().map(|_| ())
    })
}

/// Reads only the header, for resumability and fingerprint checks.
pub fn read_header(path: &Path) -> Result<(DatasetHeader, u64)> {
    let mut r = open(path)?;
    let (h, _, n) = header(&mut r)?;
    Ok((h, n))
}

fn header<R: std::io::Read>(r: &mut BinReader<R>) -> Result<(DatasetHeader, bool, u64)> {
    r.expect(MAGIC)?;
    let v = r.u32()?;
    if v != VERSION {
        return Err(r.fail(format!("unsupported version {v}")));
    }
    let config_hash = r.str()?;
    let fingerprint = r.str()?;
    let seed = r.u64()?;
    let first_index = r.u64()?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let flags = r.u32()?;
    let n = r.u64()?;
    Ok((
        DatasetHeader {
            config_hash,
            fingerprint,
            seed,
            first_index,
            devices: dims[0],
            spreading_factor: dims[1],
            antennas: dims[2],
            symbols: dims[3],
        },
        flags & FULL_FRAMES != 0,
        n,
    ))
}

pub fn read_dataset<T: Real>(path: &Path) -> Result<Dataset<T>> {
    let mut r = open(path)?;
    let (h, full, n) = header(&mut r)?;
    let (k, nc, m, ns) = (h.devices, h.spreading_factor, h.antennas, h.symbols);
    let mut records = Vec::with_capacity(n.min(1 << 20) as usize);
    for _ in 0..n {
        let index = r.u64()?;
        expect_section(&mut r, b"ACTV")?;
        let rate = r.f64()?;
        let bits = r.byte_array()?;
        if bits.len() != k || bits.iter().any(|&b| b > 1) {
            return Err(r.fail("malformed activity section"));
        }
        let activity = ActivityVector::new(bits.iter().map(|&b| b == 1).collect(), rate);
        expect_section(&mut r, b"TENS")?;
        let raw = r.f32_array()?;
        if raw.len() != 2 * m * k * ns {
            return Err(r.fail("malformed tensor section"));
        }
        let vals: Vec<Cplx<T>> = raw.chunks_exact(2).map(from_f32).collect();
        let tensor = DecorrelatedTensor::from_array(
            Array3::from_shape_vec((m, k, ns), vals).map_err(|e| r.fail(e.to_string()))?,
        );
        let frame = if full {
            expect_section(&mut r, b"SYMB")?;
            let sym = r.byte_array()?;
            if sym.len() != k * ns {
                return Err(r.fail("malformed symbol section"));
            }
            let symbols = SymbolFrame::from_symbols(
                Array2::from_shape_vec((k, ns), sym.iter().map(|&s| s as i8).collect())
                    .map_err(|e| r.fail(e.to_string()))?,
            )
            .map_err(|e| r.fail(e.to_string()))?;
            expect_section(&mut r, b"CHAN")?;
            let noise_var = r.f64()?;
            let g = r.f32_array()?;
            if g.len() != 2 * m * k {
                return Err(r.fail("malformed channel section"));
            }
            let gains = Array2::from_shape_vec((m, k), g.chunks_exact(2).map(from_f32).collect())
                .map_err(|e| r.fail(e.to_string()))?;
            let channel = ChannelState::new(gains, noise_var).map_err(|e| r.fail(e.to_string()))?;
            expect_section(&mut r, b"RECV")?;
            let y = r.f32_array()?;
            if y.len() != 2 * m * nc * ns {
                return Err(r.fail("malformed received section"));
            }
            let received = y
                .chunks_exact(2 * nc * ns)
                .map(|c| Array2::from_shape_vec((nc, ns), c.chunks_exact(2).map(from_f32).collect()).unwrap())
                .collect();
            Some(PacketFrame {
                activity: activity.clone(),
                symbols,
                received,
                channel,
            })
        } else {
            None
        };
        records.push(DatasetRecord {
            index,
            activity,
            tensor,
            frame,
        });
    }
    r.end()?;
    Ok(Dataset { header: h, records })
}

/// Human-readable dump: one row per stored value.
pub fn write_debug_csv<T: Real>(path: &Path, data: &Dataset<T>) -> Result<()> {
    write_atomic(path, |out| {
        let mut line = |s: String| out.write_all(s.as_bytes()).map_err(|e| Error::io(path, e));
        line(format!(
            "# config_hash={} fingerprint={}\nframe,section,a,b,c,re,im\n",
            data.header.config_hash, data.header.fingerprint
        ))?;
        for rec in &data.records {
            for (k, &b) in rec.activity.bits().iter().enumerate() {
                line(format!("{},actv,{k},,,{},\n", rec.index, u8::from(b)))?;
            }
            for ((m, k, j), v) in rec.tensor.data().indexed_iter() {
                line(format!("{},tens,{m},{k},{j},{},{}\n", rec.index, v.re, v.im))?;
            }
            if let Some(f) = &rec.frame {
                for ((k, j), s) in f.symbols.symbols().indexed_iter() {
                    line(format!("{},symb,{k},{j},,{s},\n", rec.index))?;
                }
                for ((m, k), g) in f.channel.gains().indexed_iter() {
                    line(format!("{},chan,{m},{k},,{},{}\n", rec.index, g.re, g.im))?;
                }
                for (m, y) in f.received.iter().enumerate() {
                    for ((c, j), v) in y.indexed_iter() {
                        line(format!("{},recv,{m},{c},{j},{},{}\n", rec.index, v.re, v.im))?;
                    }
                }
            }
        }
        Ok(())
    })
}
