//! On-disk feature cache.
//!
//! One binary file holds consecutive records, each `MFC1` magic + two
//! little-endian u32s (n_mfcc, frames) + row-major f32 coefficients. A JSON
//! index lists every record's segment id, stem kind, byte offset, and label.

use std::collections::BTreeMap;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::MfccMatrix;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MFC1";

/// Which stem a cached record was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StemKind {
    Accompaniment,
    Vocal,
}

impl StemKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StemKind::Accompaniment => "accompaniment",
            StemKind::Vocal => "vocal",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IndexEntry {
    pub segment_id: String,
    pub stem: StemKind,
    pub offset: u64,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
pub struct CacheIndex {
    pub entries: Vec<IndexEntry>,
    /// Guards against mixing caches produced under different configs.
    pub config_hash: String,
}

impl CacheIndex {
    /// Offset lookup keyed by (segment_id, stem).
    pub fn lookup(&self) -> BTreeMap<(String, StemKind), u64> {
        self.entries
            .iter()
            .map(|e| ((e.segment_id.clone(), e.stem), e.offset))
            .collect()
    }
}

/// Sequential writer appending records and building the index in memory.
pub struct CacheWriter<W: Write + Seek> {
    out: W,
    index: CacheIndex,
}

impl<W: Write + Seek> CacheWriter<W> {
    pub fn new(out: W, config_hash: String) -> Self {
        Self { out, index: CacheIndex { entries: Vec::new(), config_hash } }
    }

    pub fn append(&mut self, mfcc: &MfccMatrix, stem: StemKind, label: u8) -> Result<u64> {
        let offset = self.out.stream_position()?;
        let shape = mfcc.values.shape();
        self.out.write_all(MAGIC)?;
        self.out.write_all(&(shape[0] as u32).to_le_bytes())?;
        self.out.write_all(&(shape[1] as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(mfcc.values.len() * 4);
        for &v in mfcc.values.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.out.write_all(&buf)?;
        self.index.entries.push(IndexEntry {
            segment_id: mfcc.segment_id.clone(),
            stem,
            offset,
            label,
        });
        Ok(offset)
    }

    pub fn finish(self) -> CacheIndex {
        self.index
    }
}

/// Read one record at the given offset.
pub fn read_record<R: Read + Seek>(input: &mut R, offset: u64, segment_id: &str) -> Result<MfccMatrix> {
    input.seek(SeekFrom::Start(offset))?;
    let mut header = [0u8; 12];
    input.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(Error::DataError(format!(
            "bad cache magic at offset {offset} for segment '{segment_id}'"
        )));
    }
    let n_mfcc = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let frames = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut raw = vec![0u8; n_mfcc * frames * 4];
    input.read_exact(&mut raw)?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    Ok(MfccMatrix {
        values: Tensor::from_vec(&[n_mfcc, frames], data)?,
        segment_id: segment_id.to_string(),
    })
}

pub fn write_index(path: &Path, index: &CacheIndex) -> Result<()> {
    let json = serde_json::to_string_pretty(index)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_index(path: &Path) -> Result<CacheIndex> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::PipelineError(format!("missing feature index {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&raw)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let values = Tensor::from_vec(&[3, 4], (0..12).map(|i| i as f64 * 0.125 - 0.7).collect()).unwrap();
        let m = MfccMatrix { values, segment_id: "seg_a".into() };
        let mut buf = Cursor::new(Vec::new());
        let mut w = CacheWriter::new(&mut buf, "deadbeef".into());
        let off1 = w.append(&m, StemKind::Vocal, 3).unwrap();
        let off2 = w.append(&m, StemKind::Accompaniment, 3).unwrap();
        let index = w.finish();
        assert_eq!(index.entries.len(), 2);
        assert_eq!(off1, 0);
        assert!(off2 > off1);

        let got = read_record(&mut buf, off2, "seg_a").unwrap();
        assert_eq!(got.values.shape(), &[3, 4]);
        for (a, b) in got.values.iter().zip(m.values.iter()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
    }

    #[test]
    fn bad_magic_detected() {
        let mut buf = Cursor::new(vec![0u8; 64]);
        assert!(matches!(read_record(&mut buf, 0, "x"), Err(Error::DataError(_))));
    }
}
