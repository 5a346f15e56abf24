//! Versioned binary cache for [`EncodedDataset`].
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   "DADIDSET"
//! version      u32       currently 1
//! n, d         u64, u64  instances, encoded features
//! names        d x str   str = u32 byte length + UTF-8 bytes
//! n_groups     u64
//! groups       n_groups x (source: str, count: u32, indices: count x u32)
//! n_stats      u64
//! stats        n_stats x (column: str, mean: f64, std: f64)
//! labels       n bytes   0 or 1
//! sensitive    n bytes   0 or 1
//! features     n*d f64   row-major
//! ```
//!
//! Decoding never trusts declared lengths: every count is checked against the
//! remaining input before allocating, and trailing bytes are an error.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::data::encode::{ActionGroup, ColumnStats, EncodedDataset};
use crate::error::{DadiError, Result};

pub const MAGIC: &[u8; 8] = b"DADIDSET";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_dataset(ds: &EncodedDataset) -> Vec<u8> {
    let (n, d) = ds.features.dim();
    let mut out = Vec::with_capacity(32 + n * (d * 8 + 2));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for name in &ds.feature_names {
        put_str(&mut out, name);
    }
    out.extend_from_slice(&(ds.groups.len() as u64).to_le_bytes());
    for g in &ds.groups {
        put_str(&mut out, &g.source_column);
        out.extend_from_slice(&(g.feature_indices.len() as u32).to_le_bytes());
        for &j in &g.feature_indices {
            out.extend_from_slice(&(j as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&(ds.standardization.len() as u64).to_le_bytes());
    for s in &ds.standardization {
        put_str(&mut out, &s.column);
        out.extend_from_slice(&s.mean.to_le_bytes());
        out.extend_from_slice(&s.std.to_le_bytes());
    }
    out.extend_from_slice(&ds.labels);
    out.extend_from_slice(&ds.sensitive);
    for v in ds.features.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if len > self.remaining() {
            return Err(DadiError::Format(format!(
                "truncated dataset cache at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads a count whose items each occupy at least `min_item` bytes.
    fn count(&mut self, raw: u64, min_item: usize) -> Result<usize> {
        let fits = usize::try_from(raw)
            .ok()
            .filter(|&c| c.checked_mul(min_item.max(1)).is_some_and(|b| b <= self.remaining()));
        fits.ok_or_else(|| DadiError::Format(format!("declared count {raw} exceeds input")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| DadiError::Format("invalid utf-8".into()))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<EncodedDataset> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(DadiError::Format("not a dataset cache (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(DadiError::Format(format!(
            "unsupported dataset cache version {version}"
        )));
    }
    let n_raw = c.u64()?;
    let d_raw = c.u64()?;
    let d = c.count(d_raw, 4)?;
    let names = (0..d).map(|_| c.string()).collect::<Result<Vec<_>>>()?;

    let n_groups_raw = c.u64()?;
    let n_groups = c.count(n_groups_raw, 8)?;
    let mut groups = Vec::with_capacity(n_groups);
    for gid in 0..n_groups {
        let source = c.string()?;
        let k_raw = c.u32()?;
        let k = c.count(u64::from(k_raw), 4)?;
        let indices = (0..k)
            .map(|_| c.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        groups.push(ActionGroup {
            group_id: gid,
            feature_indices: indices,
            source_column: source,
        });
    }

    let n_stats_raw = c.u64()?;
    let n_stats = c.count(n_stats_raw, 20)?;
    let mut stats = Vec::with_capacity(n_stats);
    for _ in 0..n_stats {
        let column = c.string()?;
        let mean = c.f64()?;
        let std = c.f64()?;
        stats.push(ColumnStats { column, mean, std });
    }

    let row_bytes = d
        .checked_mul(8)
        .and_then(|b| b.checked_add(2))
        .ok_or_else(|| DadiError::Format("feature width overflow".into()))?;
    let n = c.count(n_raw, row_bytes)?;
    let labels = c.take(n)?.to_vec();
    let sensitive = c.take(n)?.to_vec();
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        values.push(c.f64()?);
    }
    if c.remaining() != 0 {
        return Err(DadiError::Format("trailing bytes after dataset cache".into()));
    }
    let features = Array2::from_shape_vec((n, d), values)
        .map_err(|e| DadiError::Format(e.to_string()))?;
    let ds = EncodedDataset {
        features,
        labels,
        sensitive,
        groups,
        feature_names: names,
        standardization: stats,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_dataset(path: &Path, ds: &EncodedDataset) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode_dataset(ds))
}

pub fn read_dataset(path: &Path) -> Result<EncodedDataset> {
    let bytes = fs::read(path).map_err(|e| DadiError::io(path, e))?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{make_synthetic, SyntheticParams};
    use proptest::prelude::*;

    fn small() -> EncodedDataset {
        make_synthetic(&SyntheticParams {
            n: 120,
            d_noise: 2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trips_bit_exact() {
        let mut ds = small();
        ds.standardization.push(ColumnStats {
            column: "age".into(),
            mean: 38.5,
            std: 13.25,
        });
        let back = decode_dataset(&encode_dataset(&ds)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_bad_magic_version_and_trailing() {
        let bytes = encode_dataset(&small());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_dataset(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(decode_dataset(&bad).unwrap_err().to_string().contains("version"));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(decode_dataset(&bad).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let ds = small();
        write_dataset(&path, &ds).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    proptest! {
        #[test]
        fn truncation_never_panics(cut in 0usize..4000) {
            let bytes = encode_dataset(&small());
            let cut = cut.min(bytes.len().saturating_sub(1));
            prop_assert!(decode_dataset(&bytes[..cut]).is_err());
        }
    }
}
