//! DESC: a flat file of per-image descriptor records.
//!
//! ```text
//! "DESC" | version u16 = 1 | dim u32 | record_count u64
//! per record: image_id_len u16 | image_id utf8 | dim x f32
//! ```

use std::collections::HashSet;

use thiserror::Error;

use crate::codec::{self, Cursor, StrError};

pub const DESC_MAGIC: [u8; 4] = *b"DESC";
pub const DESC_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescFileError {
    #[error("bad magic: expected \"DESC\"")]
    BadMagic,
    #[error("unsupported DESC version {0}")]
    UnsupportedVersion(u16),
    #[error("stream truncated at byte {offset}")]
    TruncatedStream { offset: usize },
    #[error("invalid UTF-8 image id at byte {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("zero descriptor dimension")]
    ZeroDimension,
    #[error("record {image_id:?} has dim {actual}, file dim is {expected}")]
    DimensionMismatch {
        image_id: String,
        expected: usize,
        actual: usize,
    },
    #[error("record {image_id:?} has non-finite components")]
    NonFinite { image_id: String },
    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),
    #[error("image id longer than 65535 bytes: {0:?}")]
    IdTooLong(String),
    #[error("{count} trailing bytes at byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRecord {
    pub image_id: String,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorFile {
    pub dim: usize,
    pub records: Vec<DescriptorRecord>,
}

impl DescriptorFile {
    /// Records sorted by image id.
    pub fn new(dim: usize, mut records: Vec<DescriptorRecord>) -> Result<Self, DescFileError> {
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let file = Self { dim, records };
        file.check()?;
        Ok(file)
    }

    fn check(&self) -> Result<(), DescFileError> {
        if self.dim == 0 {
            return Err(DescFileError::ZeroDimension);
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.values.len() != self.dim {
                return Err(DescFileError::DimensionMismatch {
                    image_id: r.image_id.clone(),
                    expected: self.dim,
                    actual: r.values.len(),
                });
            }
            if r.values.iter().any(|v| !v.is_finite()) {
                return Err(DescFileError::NonFinite {
                    image_id: r.image_id.clone(),
                });
            }
            if !seen.insert(r.image_id.as_str()) {
                return Err(DescFileError::DuplicateImageId(r.image_id.clone()));
            }
        }
        Ok(())
    }

    pub fn write(&self) -> Result<Vec<u8>, DescFileError> {
        self.check()?;
        let mut out = Vec::with_capacity(18 + self.records.len() * (8 + self.dim * 4));
        out.extend_from_slice(&DESC_MAGIC);
        codec::put_u16(&mut out, DESC_VERSION);
        codec::put_u32(&mut out, self.dim as u32);
        codec::put_u64(&mut out, self.records.len() as u64);
        for r in &self.records {
            if !codec::put_str16(&mut out, &r.image_id) {
                return Err(DescFileError::IdTooLong(r.image_id.clone()));
            }
            codec::put_f32s(&mut out, &r.values);
        }
        Ok(out)
    }

    pub fn read(bytes: &[u8]) -> Result<Self, DescFileError> {
        let mut cur = Cursor::new(bytes);
        let short = |s: codec::Short| DescFileError::TruncatedStream { offset: s.offset };
        match cur.take(4) {
            Ok(m) if m == DESC_MAGIC => {}
            _ => return Err(DescFileError::BadMagic),
        }
        let version = cur.u16().map_err(short)?;
        if version != DESC_VERSION {
            return Err(DescFileError::UnsupportedVersion(version));
        }
        let dim = cur.u32().map_err(short)? as usize;
        if dim == 0 {
            return Err(DescFileError::ZeroDimension);
        }
        let count = cur.u64().map_err(short)?;
        let mut records = Vec::new();
        for _ in 0..count {
            let image_id = cur.str16().map_err(|e| match e {
                StrError::Short(s) => short(s),
                StrError::Utf8 { offset, .. } => DescFileError::InvalidUtf8 { offset },
            })?;
            let values = cur.f32s(dim).map_err(short)?;
            records.push(DescriptorRecord { image_id, values });
        }
        if cur.remaining() > 0 {
            return Err(DescFileError::TrailingBytes {
                offset: cur.offset(),
                count: cur.remaining(),
            });
        }
        let file = Self { dim, records };
        file.check()?;
        Ok(file)
    }
}
