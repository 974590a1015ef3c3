//! Binary volume (KVOL) and weight checkpoint (KSEG) files, plus the dataset
//! manifest.
//!
//! Both binary formats are little-endian throughout.
//!
//! KVOL: `"KVOL"`, version `u16`, type tag `u8` (0 = `f64` intensities,
//! 1 = `u16` labels), extents `3 × u64`, spacing `f64` (mm), then the payload.
//!
//! KSEG: `"KSEG"`, version `u16`, tensor count `u32`, then per tensor a `u32`
//! name length, the UTF-8 name, rank `u32`, extents `rank × u64` and the
//! `f64` values.

use std::fs;
use std::path::{Path, PathBuf};

use kseg_core::autodiff::Tensor;
use kseg_core::data::{Extents, LabelVolume, Volume};
use kseg_core::models::Params;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

const KVOL_MAGIC: &[u8; 4] = b"KVOL";
const KSEG_MAGIC: &[u8; 4] = b"KSEG";
const VERSION: u16 = 1;
const TAG_INTENSITY: u8 = 0;
const TAG_LABELS: u8 = 1;

/// Cursor over a byte buffer; every read fails cleanly on truncation.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn usize(&mut self) -> std::result::Result<usize, String> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| format!("extent {v} out of range"))
    }

    fn header(&mut self, magic: &[u8; 4]) -> std::result::Result<(), String> {
        let m = self.take(4)?;
        if m != magic {
            return Err(format!("bad magic {m:?}, expected {:?}", std::str::from_utf8(magic).unwrap()));
        }
        let v = self.u16()?;
        if v != VERSION {
            return Err(format!("unsupported version {v}"));
        }
        Ok(())
    }

    fn finish(&self) -> std::result::Result<(), String> {
        if self.pos != self.buf.len() {
            return Err(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn kvol_header(out: &mut Vec<u8>, tag: u8, extents: Extents, spacing: f64) {
    out.extend_from_slice(KVOL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(tag);
    for e in extents {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    out.extend_from_slice(&spacing.to_le_bytes());
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(45 + 8 * v.len());
    kvol_header(&mut out, TAG_INTENSITY, v.extents(), v.spacing_mm());
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn encode_labels(l: &LabelVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(45 + 2 * l.len());
    kvol_header(&mut out, TAG_LABELS, l.extents(), l.spacing_mm());
    for x in l.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn kvol_body(r: &mut Reader, tag: u8) -> std::result::Result<(Extents, f64, usize), String> {
    r.header(KVOL_MAGIC)?;
    let found = r.u8()?;
    if found != tag {
        return Err(format!("type tag {found}, expected {tag}"));
    }
    let extents = [r.usize()?, r.usize()?, r.usize()?];
    let spacing = r.f64()?;
    let n = extents
        .iter()
        .try_fold(1usize, |a, &e| a.checked_mul(e))
        .ok_or("extents overflow")?;
    Ok((extents, spacing, n))
}

pub fn decode_volume(bytes: &[u8]) -> std::result::Result<Volume, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (extents, spacing, n) = kvol_body(&mut r, TAG_INTENSITY)?;
    let raw = r.take(n.checked_mul(8).ok_or("payload overflow")?)?;
    r.finish()?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(extents, spacing, data).map_err(|e| e.to_string())
}

pub fn decode_labels(bytes: &[u8]) -> std::result::Result<LabelVolume, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (extents, spacing, n) = kvol_body(&mut r, TAG_LABELS)?;
    let raw = r.take(n.checked_mul(2).ok_or("payload overflow")?)?;
    r.finish()?;
    let data = raw
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelVolume::new(extents, spacing, data).map_err(|e| e.to_string())
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    write_file(path, &encode_volume(v))
}

pub fn write_labels(path: &Path, l: &LabelVolume) -> Result<()> {
    write_file(path, &encode_labels(l))
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    decode_volume(&read_file(path)?).map_err(|m| CliError::format(path, m))
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    decode_labels(&read_file(path)?).map_err(|m| CliError::format(path, m))
}

pub fn encode_checkpoint(params: &Params) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(KSEG_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(KSEG_MAGIC)?;
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?.to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.usize()).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or("extents overflow")?;
        let raw = r.take(n.checked_mul(8).ok_or("payload overflow")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data).map_err(|e| e.to_string())?));
    }
    r.finish()?;
    Ok(out)
}

pub fn write_checkpoint(path: &Path, params: &Params) -> Result<()> {
    write_file(path, &encode_checkpoint(params))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode_checkpoint(&read_file(path)?).map_err(|m| CliError::format(path, m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub volume_path: PathBuf,
    pub label_path: PathBuf,
    pub split: SplitName,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut s = serde_json::to_string_pretty(entries).expect("manifest serialises");
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}
