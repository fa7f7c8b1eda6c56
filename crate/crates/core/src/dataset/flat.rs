//! Little-endian flat binary interchange format.
//!
//! ```text
//! "LNMB" | version u32 | flags u32 | n u64 | d u32 | k u32
//! features f32 × n·d (row-major) | observed u16 × n | [clean u16 × n] | split u8 × n
//! ```
//! Bit 0 of `flags` marks the presence of the clean label channel.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{LabeledDataset, Split};
use crate::error::{LnmError, Result};

pub const FLAT_MAGIC: &[u8; 4] = b"LNMB";
pub const FLAT_VERSION: u32 = 1;
const FLAG_CLEAN: u32 = 1;
const HEADER_LEN: u64 = 28;

pub fn save_flat(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    if ds.k() > usize::from(u16::MAX) + 1 {
        return Err(LnmError::domain(format!("{} classes do not fit u16 labels", ds.k())));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FLAT_MAGIC)?;
    w.write_all(&FLAT_VERSION.to_le_bytes())?;
    let flags = if ds.clean_labels().is_some() { FLAG_CLEAN } else { 0 };
    w.write_all(&flags.to_le_bytes())?;
    w.write_all(&(ds.n() as u64).to_le_bytes())?;
    w.write_all(&(ds.d() as u32).to_le_bytes())?;
    w.write_all(&(ds.k() as u32).to_le_bytes())?;
    for v in ds.features().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &y in ds.observed_labels() {
        w.write_all(&(y as u16).to_le_bytes())?;
    }
    if let Some(clean) = ds.clean_labels() {
        for &y in clean {
            w.write_all(&(y as u16).to_le_bytes())?;
        }
    }
    let tags: Vec<u8> = ds.split_tags().iter().map(|s| s.code()).collect();
    w.write_all(&tags)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(LnmError::Format {
                offset: self.buf.len() as u64,
                reason: format!(
                    "truncated while reading {what} (needed {len} bytes at offset {})",
                    self.pos
                ),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }
}

/// Reads and fully validates a flat file. Nothing is returned unless the whole
/// payload parses.
pub fn load_flat(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    parse(&buf)
}

fn format_err(offset: u64, reason: impl Into<String>) -> LnmError {
    LnmError::Format {
        offset,
        reason: reason.into(),
    }
}

fn parse(buf: &[u8]) -> Result<LabeledDataset> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4, "magic")? != FLAT_MAGIC {
        return Err(format_err(0, "bad magic, expected \"LNMB\""));
    }
    let version = cur.u32("version")?;
    if version != FLAT_VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let flags = cur.u32("flags")?;
    if flags & !FLAG_CLEAN != 0 {
        return Err(format_err(8, format!("unknown flag bits {flags:#x}")));
    }
    let n = cur.u64("n")?;
    let d = cur.u32("d")? as usize;
    let k = cur.u32("k")? as usize;
    debug_assert_eq!(cur.offset(), HEADER_LEN);
    let n = usize::try_from(n).map_err(|_| format_err(12, "sample count overflows usize"))?;
    let feat_len = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| format_err(12, "feature block size overflows"))?;

    let feat_start = cur.offset();
    let raw = cur.take(feat_len, "features")?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(format_err(feat_start + 4 * pos as u64, "non-finite feature value"));
    }
    let features = Array2::from_shape_vec((n, d), values).expect("length checked");

    let mut read_labels = |what: &str| -> Result<Vec<usize>> {
        let start = cur.offset();
        let raw = cur.take(2 * n, what)?;
        raw.chunks_exact(2)
            .enumerate()
            .map(|(i, c)| {
                let y = usize::from(u16::from_le_bytes(c.try_into().unwrap()));
                if y >= k {
                    Err(format_err(
                        start + 2 * i as u64,
                        format!("{what} {y} out of range for k={k}"),
                    ))
                } else {
                    Ok(y)
                }
            })
            .collect()
    };
    let observed = read_labels("observed label")?;
    let clean = if flags & FLAG_CLEAN != 0 {
        Some(read_labels("clean label")?)
    } else {
        None
    };
    let tag_start = cur.offset();
    let tags = cur
        .take(n, "split tags")?
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            Split::from_code(t).ok_or_else(|| format_err(tag_start + i as u64, format!("bad split tag {t}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if cur.pos != buf.len() {
        return Err(format_err(cur.offset(), "trailing bytes after payload"));
    }
    LabeledDataset::from_parts(features, observed, clean, tags, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_blobs, stratified_split};
    use crate::rng::RngState;

    fn sample() -> LabeledDataset {
        let ds = make_blobs(3, 20, 4, 1.0, &mut RngState::new(4)).unwrap();
        stratified_split(&ds, (0.6, 0.2, 0.2), &mut RngState::new(5)).unwrap()
    }

    #[test]
    fn round_trip_and_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.lnmb");
        let ds = sample();
        save_flat(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"LNMB");
        assert_eq!(bytes.len() as u64, HEADER_LEN + 60 * 4 * 4 + 60 * 2 * 2 + 60);
        assert_eq!(load_flat(&path).unwrap(), ds);
    }

    #[test]
    fn truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.lnmb");
        save_flat(&sample(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..100]).unwrap();
        match load_flat(&path) {
            Err(LnmError::Format { offset, reason }) => {
                assert_eq!(offset, 100);
                assert!(reason.contains("features"), "{reason}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"XXXX");
        bytes.extend_from_slice(&[0; 24]);
        assert!(matches!(parse(&bytes), Err(LnmError::Format { offset: 0, .. })));
        bytes[..4].copy_from_slice(b"LNMB");
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(parse(&bytes), Err(LnmError::Format { offset: 4, .. })));
    }
}
