//! Binary container for precomputed per-video features.
//!
//! Layout (little-endian):
//!
//! ```text
//! header   magic "ERFT" | version u32 | d_st u32 | frames u32 | vocab u32 | count u64 | crc32 u32
//! records  count × [ id: 64 bytes, NUL padded | label u32 | has_label u32 | d_st + frames·vocab × f32 ]
//! trailer  crc32 u32 over all record bytes
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::video::FeatureRecord;

pub const MAGIC: [u8; 4] = *b"ERFT";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
pub const ID_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum FeatureFileError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a feature file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported feature file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{section} checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum {
        section: &'static str,
        stored: u32,
        computed: u32,
    },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("record {index}: {message}")]
    InvalidRecord { index: usize, message: String },
}

/// Dimensions shared by every record in a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHeader {
    pub version: u32,
    pub st_dim: u32,
    pub frames: u32,
    pub vocab: u32,
    pub count: u64,
}

impl FeatureHeader {
    pub fn record_len(&self) -> usize {
        ID_LEN + 8 + 4 * (self.st_dim as usize + self.frames as usize * self.vocab as usize)
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..4].copy_from_slice(&MAGIC);
        buf[4..8].copy_from_slice(&self.version.to_le_bytes());
        buf[8..12].copy_from_slice(&self.st_dim.to_le_bytes());
        buf[12..16].copy_from_slice(&self.frames.to_le_bytes());
        buf[16..20].copy_from_slice(&self.vocab.to_le_bytes());
        buf[20..28].copy_from_slice(&self.count.to_le_bytes());
        let crc = crc32fast::hash(&buf[..28]);
        buf[28..32].copy_from_slice(&crc.to_le_bytes());
        buf
    }

    fn decode(buf: &[u8]) -> Result<Self, FeatureFileError> {
        if buf.len() < HEADER_LEN {
            return Err(FeatureFileError::Truncated {
                expected: HEADER_LEN,
                found: buf.len(),
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().expect("4 bytes"));
        let magic: [u8; 4] = buf[0..4].try_into().expect("4 bytes");
        let stored = u32_at(28);
        let computed = crc32fast::hash(&buf[..28]);
        // the checksum covers the magic too, so a corrupted header byte is
        // always reported as a checksum failure
        if stored != computed {
            return Err(FeatureFileError::Checksum {
                section: "header",
                stored,
                computed,
            });
        }
        if magic != MAGIC {
            return Err(FeatureFileError::BadMagic(magic));
        }
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(FeatureFileError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(Self {
            version,
            st_dim: u32_at(8),
            frames: u32_at(12),
            vocab: u32_at(16),
            count: u64::from_le_bytes(buf[20..28].try_into().expect("8 bytes")),
        })
    }
}

fn encode_record(
    rec: &FeatureRecord,
    header: &FeatureHeader,
    index: usize,
    out: &mut Vec<u8>,
) -> Result<(), FeatureFileError> {
    let invalid = |message: String| FeatureFileError::InvalidRecord { index, message };
    let id = rec.video_id.as_bytes();
    if id.is_empty() || id.len() > ID_LEN || id.contains(&0) {
        return Err(invalid(format!("video id must be 1..={ID_LEN} bytes without NUL")));
    }
    if rec.st_feature.len() != header.st_dim as usize
        || rec.frame_object_probs.shape() != (header.frames as usize, header.vocab as usize)
    {
        return Err(invalid(format!(
            "shape st {} / probs {:?} does not match header ({}, {}×{})",
            rec.st_feature.len(),
            rec.frame_object_probs.shape(),
            header.st_dim,
            header.frames,
            header.vocab
        )));
    }
    let mut id_buf = [0u8; ID_LEN];
    id_buf[..id.len()].copy_from_slice(id);
    out.extend_from_slice(&id_buf);
    out.extend_from_slice(&rec.label.unwrap_or(0).to_le_bytes());
    out.extend_from_slice(&u32::from(rec.label.is_some()).to_le_bytes());
    for v in rec.st_feature.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    // row-major: frame by frame
    for f in 0..header.frames as usize {
        for c in 0..header.vocab as usize {
            out.extend_from_slice(&(rec.frame_object_probs[(f, c)] as f32).to_le_bytes());
        }
    }
    Ok(())
}

fn decode_record(buf: &[u8], header: &FeatureHeader, index: usize) -> Result<FeatureRecord, FeatureFileError> {
    let invalid = |message: String| FeatureFileError::InvalidRecord { index, message };
    let id_end = buf[..ID_LEN].iter().position(|&b| b == 0).unwrap_or(ID_LEN);
    let video_id = std::str::from_utf8(&buf[..id_end])
        .map_err(|e| invalid(format!("video id is not utf-8: {e}")))?
        .to_string();
    let label = u32::from_le_bytes(buf[ID_LEN..ID_LEN + 4].try_into().expect("4 bytes"));
    let has_label = u32::from_le_bytes(buf[ID_LEN + 4..ID_LEN + 8].try_into().expect("4 bytes"));
    let floats: Vec<f64> = buf[ID_LEN + 8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let d = header.st_dim as usize;
    Ok(FeatureRecord {
        video_id,
        st_feature: DVector::from_column_slice(&floats[..d]),
        frame_object_probs: DMatrix::from_row_slice(header.frames as usize, header.vocab as usize, &floats[d..]),
        label: (has_label != 0).then_some(label),
    })
}

/// Writes `records` and fsyncs. Values are stored as f32.
pub fn write_features(
    path: &Path,
    records: &[FeatureRecord],
    st_dim: usize,
    frames: usize,
    vocab: usize,
) -> Result<FeatureHeader, FeatureFileError> {
    let header = FeatureHeader {
        version: FORMAT_VERSION,
        st_dim: st_dim as u32,
        frames: frames as u32,
        vocab: vocab as u32,
        count: records.len() as u64,
    };
    let mut payload = Vec::with_capacity(header.record_len() * records.len());
    for (i, rec) in records.iter().enumerate() {
        encode_record(rec, &header, i, &mut payload)?;
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&header.encode())?;
    w.write_all(&payload)?;
    w.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
    let file = w.into_inner().map_err(|e| e.into_error())?;
    file.sync_all()?;
    Ok(header)
}

/// Decoded feature file held in memory. Readers share it immutably.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub header: FeatureHeader,
    pub records: Vec<FeatureRecord>,
}

impl FeatureFile {
    pub fn read(path: &Path) -> Result<Self, FeatureFileError> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FeatureFileError> {
        let header = FeatureHeader::decode(bytes)?;
        let rec_len = header.record_len();
        let payload_len = rec_len * header.count as usize;
        let expected = HEADER_LEN + payload_len + 4;
        if bytes.len() < expected {
            return Err(FeatureFileError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
        let stored = u32::from_le_bytes(bytes[HEADER_LEN + payload_len..expected].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(FeatureFileError::Checksum {
                section: "payload",
                stored,
                computed,
            });
        }
        let records = payload
            .chunks_exact(rec_len.max(1))
            .take(header.count as usize)
            .enumerate()
            .map(|(i, chunk)| decode_record(chunk, &header, i))
            .collect::<Result<_, _>>()?;
        Ok(Self { header, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, label: Option<u32>) -> FeatureRecord {
        FeatureRecord {
            video_id: id.into(),
            st_feature: DVector::from_vec(vec![0.5, -1.25, 3.0]),
            frame_object_probs: DMatrix::from_row_slice(2, 2, &[0.25, 0.75, 0.5, 0.5]),
            label,
        }
    }

    #[test]
    fn header_is_32_bytes_and_crc_checked() {
        let h = FeatureHeader {
            version: FORMAT_VERSION,
            st_dim: 3,
            frames: 2,
            vocab: 2,
            count: 0,
        };
        let bytes = h.encode();
        assert_eq!(FeatureHeader::decode(&bytes).unwrap(), h);
        let mut bad = bytes;
        bad[9] ^= 1;
        assert!(matches!(
            FeatureHeader::decode(&bad),
            Err(FeatureFileError::Checksum { section: "header", .. })
        ));
    }

    #[test]
    fn round_trip_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let recs = vec![record("a", Some(4)), record("b", None)];
        write_features(&path, &recs, 3, 2, 2).unwrap();
        let back = FeatureFile::read(&path).unwrap();
        assert_eq!(back.records, recs);
        assert_eq!(back.header.count, 2);
    }

    #[test]
    fn rejects_long_ids_and_bad_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let long = "x".repeat(65);
        assert!(matches!(
            write_features(&path, &[record(&long, None)], 3, 2, 2),
            Err(FeatureFileError::InvalidRecord { .. })
        ));
        assert!(matches!(
            write_features(&path, &[record("a", None)], 4, 2, 2),
            Err(FeatureFileError::InvalidRecord { .. })
        ));
    }
}
