//! Descriptor index with per-class representatives, exhaustive L2 search and
//! the INDX container.
//!
//! ```text
//! "INDX" | version u16 = 1 | mode u8 | dim u32 | class_count u32 | entry_count u64
//! per class: class_id u32 | dim x f32
//! per entry: image_id_len u16 | image_id utf8 | class_id u32 | dim x f32
//! CRC32 (IEEE) of all preceding bytes
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, Cursor, StrError};

pub const INDX_MAGIC: [u8; 4] = *b"INDX";
pub const INDX_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("index has no entries")]
    EmptyIndex,
    #[error("dimension mismatch: index dim {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("unknown class {0}")]
    UnknownClass(u32),
    #[error("no candidate classes given")]
    NoCandidates,
    #[error("descriptor for {image_id:?} has non-finite components")]
    NonFinite { image_id: String },
    #[error("bad magic: expected \"INDX\"")]
    BadMagic,
    #[error("unsupported INDX version {0}")]
    UnsupportedVersion(u16),
    #[error("stream truncated at byte {offset}")]
    TruncatedStream { offset: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed index at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("image id longer than 65535 bytes: {0:?}")]
    IdTooLong(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentativeMode {
    /// Element-wise mean of the class's descriptors.
    Mean,
    /// Descriptor of the class's lexicographically smallest image id.
    Exemplar,
}

impl RepresentativeMode {
    fn code(self) -> u8 {
        match self {
            RepresentativeMode::Mean => 0,
            RepresentativeMode::Exemplar => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RepresentativeMode::Mean),
            1 => Some(RepresentativeMode::Exemplar),
            _ => None,
        }
    }
}

impl std::str::FromStr for RepresentativeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(RepresentativeMode::Mean),
            "exemplar" => Ok(RepresentativeMode::Exemplar),
            other => Err(format!("unknown representative mode {other:?} (expected mean|exemplar)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub image_id: String,
    pub class_id: u32,
    pub descriptor: Vec<f32>,
}

impl IndexEntry {
    pub fn new(image_id: impl Into<String>, class_id: u32, descriptor: Vec<f32>) -> Self {
        Self {
            image_id: image_id.into(),
            class_id,
            descriptor,
        }
    }
}

/// Immutable once built; rebuild to change.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorIndex {
    dim: usize,
    mode: RepresentativeMode,
    entries: Vec<IndexEntry>,
    representatives: BTreeMap<u32, Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stage {
    Class,
    Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub class_id: u32,
    /// Set for image-stage hits.
    pub image_id: Option<String>,
    pub distance: f64,
}

/// Ranked hits, ascending distance with ties broken by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub stage: Stage,
    pub ranked: Vec<Hit>,
}

impl QueryResult {
    pub fn class_ids(&self) -> Vec<u32> {
        self.ranked.iter().map(|h| h.class_id).collect()
    }
}

/// Euclidean distance with f64 accumulation.
pub fn l2_distance(a: &[f32], b: &[f32]) -> Result<f64, IndexError> {
    if a.len() != b.len() {
        return Err(IndexError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(squared_distance(a, b).sqrt())
}

#[inline]
fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

fn check_k(k: usize, max: usize) -> Result<(), IndexError> {
    if k == 0 || k > max {
        return Err(IndexError::KOutOfRange { k, max });
    }
    Ok(())
}

/// Element-wise mean of `rows` in the given order, accumulated in f64.
fn mean_of<'a>(dim: usize, rows: impl Iterator<Item = &'a [f32]>) -> Vec<f32> {
    let mut acc = vec![0f64; dim];
    let mut n = 0usize;
    for row in rows {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v);
        }
        n += 1;
    }
    acc.into_iter().map(|a| (a / n as f64) as f32).collect()
}

impl DescriptorIndex {
    /// Builds representatives per `mode`. Entries are stored sorted by
    /// `(class_id, image_id, descriptor bits)`, so the result does not
    /// depend on input order.
    pub fn build(mut entries: Vec<IndexEntry>, mode: RepresentativeMode) -> Result<Self, IndexError> {
        let dim = entries.first().ok_or(IndexError::EmptyIndex)?.descriptor.len();
        if dim == 0 {
            return Err(IndexError::DimensionMismatch { expected: 1, actual: 0 });
        }
        for e in &entries {
            if e.descriptor.len() != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    actual: e.descriptor.len(),
                });
            }
            if e.descriptor.iter().any(|v| !v.is_finite()) {
                return Err(IndexError::NonFinite {
                    image_id: e.image_id.clone(),
                });
            }
        }
        entries.sort_by(|a, b| {
            a.class_id
                .cmp(&b.class_id)
                .then_with(|| a.image_id.cmp(&b.image_id))
                .then_with(|| {
                    let bits = |d: &[f32]| d.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                    bits(&a.descriptor).cmp(&bits(&b.descriptor))
                })
        });

        let mut representatives = BTreeMap::new();
        for group in entries.chunk_by(|a, b| a.class_id == b.class_id) {
            let rep = match mode {
                RepresentativeMode::Mean => mean_of(dim, group.iter().map(|e| e.descriptor.as_slice())),
                RepresentativeMode::Exemplar => group[0].descriptor.clone(),
            };
            representatives.insert(group[0].class_id, rep);
        }
        Ok(Self {
            dim,
            mode,
            entries,
            representatives,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> RepresentativeMode {
        self.mode
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn representatives(&self) -> &BTreeMap<u32, Vec<f32>> {
        &self.representatives
    }

    pub fn class_count(&self) -> usize {
        self.representatives.len()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.representatives.keys().copied()
    }

    fn check_query(&self, q: &[f32]) -> Result<(), IndexError> {
        if q.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: q.len(),
            });
        }
        Ok(())
    }

    /// The `k` classes whose representatives are nearest to `q`.
    pub fn query_classes(&self, q: &[f32], k: usize) -> Result<QueryResult, IndexError> {
        self.check_query(q)?;
        check_k(k, self.class_count())?;
        let mut scored: Vec<(f64, u32)> = self
            .representatives
            .iter()
            .map(|(&c, rep)| (squared_distance(q, rep).sqrt(), c))
            .collect();
        let by_rank = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_rank);
        Ok(QueryResult {
            stage: Stage::Class,
            ranked: scored
                .into_iter()
                .map(|(distance, class_id)| Hit {
                    class_id,
                    image_id: None,
                    distance,
                })
                .collect(),
        })
    }

    /// Ranks the images of `candidate_classes` by distance to `q` and keeps
    /// the top `k`. `k` may not exceed the number of candidate images.
    pub fn refine(&self, q: &[f32], candidate_classes: &[u32], k: usize) -> Result<QueryResult, IndexError> {
        self.check_query(q)?;
        if candidate_classes.is_empty() {
            return Err(IndexError::NoCandidates);
        }
        let mut wanted = BTreeSet::new();
        for &c in candidate_classes {
            if !self.representatives.contains_key(&c) {
                return Err(IndexError::UnknownClass(c));
            }
            wanted.insert(c);
        }
        let mut scored: Vec<(f64, &IndexEntry)> = self
            .entries
            .iter()
            .filter(|e| wanted.contains(&e.class_id))
            .map(|e| (squared_distance(q, &e.descriptor).sqrt(), e))
            .collect();
        check_k(k, scored.len())?;
        // Stable sort: entries are already in canonical order for full ties.
        scored.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| a.1.image_id.cmp(&b.1.image_id))
                .then(a.1.class_id.cmp(&b.1.class_id))
        });
        scored.truncate(k);
        Ok(QueryResult {
            stage: Stage::Image,
            ranked: scored
                .into_iter()
                .map(|(distance, e)| Hit {
                    class_id: e.class_id,
                    image_id: Some(e.image_id.clone()),
                    distance,
                })
                .collect(),
        })
    }

    /// Class stage with `candidates` classes, then image stage over them.
    pub fn query_two_stage(
        &self,
        q: &[f32],
        candidates: usize,
        k: usize,
    ) -> Result<(QueryResult, QueryResult), IndexError> {
        let classes = self.query_classes(q, candidates)?;
        let images = self.refine(q, &classes.class_ids(), k)?;
        Ok((classes, images))
    }

    pub fn save(&self) -> Result<Vec<u8>, IndexError> {
        let per_vec = self.dim * 4;
        let mut out = Vec::with_capacity(
            27 + self.representatives.len() * (4 + per_vec) + self.entries.len() * (10 + per_vec),
        );
        out.extend_from_slice(&INDX_MAGIC);
        codec::put_u16(&mut out, INDX_VERSION);
        out.push(self.mode.code());
        codec::put_u32(&mut out, self.dim as u32);
        codec::put_u32(&mut out, self.representatives.len() as u32);
        codec::put_u64(&mut out, self.entries.len() as u64);
        for (&class_id, rep) in &self.representatives {
            codec::put_u32(&mut out, class_id);
            codec::put_f32s(&mut out, rep);
        }
        for e in &self.entries {
            if !codec::put_str16(&mut out, &e.image_id) {
                return Err(IndexError::IdTooLong(e.image_id.clone()));
            }
            codec::put_u32(&mut out, e.class_id);
            codec::put_f32s(&mut out, &e.descriptor);
        }
        let crc = crc32fast::hash(&out);
        codec::put_u32(&mut out, crc);
        Ok(out)
    }

    /// Parses an INDX stream. The checksum is verified before any field
    /// after the magic is interpreted.
    pub fn load(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < 4 || bytes[..4] != INDX_MAGIC {
            return Err(IndexError::BadMagic);
        }
        if bytes.len() < 8 {
            return Err(IndexError::TruncatedStream { offset: bytes.len() });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(IndexError::ChecksumMismatch { stored, computed });
        }

        let mut cur = Cursor::new(body);
        let short = |s: codec::Short| IndexError::TruncatedStream { offset: s.offset };
        let malformed = |offset: usize, reason: &str| IndexError::Malformed {
            offset,
            reason: reason.to_owned(),
        };
        cur.take(4).map_err(short)?;
        let version = cur.u16().map_err(short)?;
        if version != INDX_VERSION {
            return Err(IndexError::UnsupportedVersion(version));
        }
        let at = cur.offset();
        let mode = RepresentativeMode::from_code(cur.u8().map_err(short)?)
            .ok_or_else(|| malformed(at, "unknown representative mode"))?;
        let at = cur.offset();
        let dim = cur.u32().map_err(short)? as usize;
        if dim == 0 {
            return Err(malformed(at, "zero dimension"));
        }
        let class_count = cur.u32().map_err(short)? as usize;
        let at = cur.offset();
        let entry_count = usize::try_from(cur.u64().map_err(short)?)
            .map_err(|_| malformed(at, "entry count overflows"))?;
        if entry_count == 0 {
            return Err(IndexError::EmptyIndex);
        }

        let mut representatives = BTreeMap::new();
        for _ in 0..class_count {
            let at = cur.offset();
            let class_id = cur.u32().map_err(short)?;
            let rep = cur.f32s(dim).map_err(short)?;
            if representatives.last_key_value().is_some_and(|(&last, _)| last >= class_id) {
                return Err(malformed(at, "class ids not strictly ascending"));
            }
            if rep.iter().any(|v| !v.is_finite()) {
                return Err(malformed(at, "non-finite representative"));
            }
            representatives.insert(class_id, rep);
        }

        let mut entries = Vec::with_capacity(entry_count.min(cur.remaining() / (6 + dim * 4)));
        let mut seen = BTreeSet::new();
        for _ in 0..entry_count {
            let at = cur.offset();
            let image_id = cur.str16().map_err(|e| match e {
                StrError::Short(s) => short(s),
                StrError::Utf8 { offset, .. } => malformed(offset, "image id is not UTF-8"),
            })?;
            let class_id = cur.u32().map_err(short)?;
            let descriptor = cur.f32s(dim).map_err(short)?;
            if !representatives.contains_key(&class_id) {
                return Err(malformed(at, "entry class has no representative"));
            }
            if descriptor.iter().any(|v| !v.is_finite()) {
                return Err(malformed(at, "non-finite descriptor"));
            }
            seen.insert(class_id);
            entries.push(IndexEntry {
                image_id,
                class_id,
                descriptor,
            });
        }
        if cur.remaining() > 0 {
            return Err(malformed(cur.offset(), "trailing bytes before checksum"));
        }
        if seen.len() != representatives.len() {
            return Err(malformed(cur.offset(), "representative without entries"));
        }
        Ok(Self {
            dim,
            mode,
            entries,
            representatives,
        })
    }
}

pub fn build_index(entries: Vec<IndexEntry>, mode: RepresentativeMode) -> Result<DescriptorIndex, IndexError> {
    DescriptorIndex::build(entries, mode)
}
