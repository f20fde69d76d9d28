//! Feature-map tensors and the FMAP container.
//!
//! An FMAP file holds every captured layer of one image. All integers are
//! little-endian:
//!
//! ```text
//! "FMAP" | version u16 = 1 | image_id_len u16 | image_id utf8 | layer_count u16
//! per layer: layer_id_len u16 | layer_id utf8 | H u32 | W u32 | K u32 | H*W*K x f32
//! ```
//!
//! Payload order is `(h, w, k)` with `k` fastest, so element `(h, w, k)` sits
//! at payload byte `((h * W + w) * K + k) * 4`.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::codec::{self, Cursor, StrError};

pub const FMAP_MAGIC: [u8; 4] = *b"FMAP";
pub const FMAP_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureIoError {
    #[error("bad magic at byte {offset}: expected \"FMAP\"")]
    BadMagic { offset: usize },
    #[error("unsupported FMAP version {version} at byte {offset}")]
    UnsupportedVersion { version: u16, offset: usize },
    #[error("stream truncated at byte {offset}{}", layer_suffix(.layer))]
    TruncatedStream { layer: Option<String>, offset: usize },
    #[error("non-finite activation in layer {layer:?} at byte {offset}")]
    NonFiniteValue { layer: String, offset: usize },
    #[error("zero dimension in layer {layer:?} header at byte {offset}")]
    ZeroDimension { layer: String, offset: usize },
    #[error("layer set is empty")]
    EmptyLayerSet,
    #[error("duplicate layer id {layer:?}")]
    DuplicateLayerId { layer: String },
    #[error("invalid UTF-8 identifier at byte {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("{count} unexpected trailing bytes at byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("layer {layer:?} dimensions overflow at byte {offset}")]
    DimensionOverflow { layer: String, offset: usize },
    #[error("identifier longer than 65535 bytes: {id:?}")]
    IdTooLong { id: String },
    #[error("more than 65535 layers")]
    TooManyLayers,
    #[error("layer {layer:?}: expected {expected} values for its shape, got {actual}")]
    ShapeMismatch {
        layer: String,
        expected: usize,
        actual: usize,
    },
}

fn layer_suffix(layer: &Option<String>) -> String {
    match layer {
        Some(l) => format!(" in layer {l:?}"),
        None => String::new(),
    }
}

/// One `H x W x K` activation tensor, channel-last.
///
/// The shape is enforced on construction; finiteness is checked by
/// [`validate`] so that defective tensors can still be represented and
/// reported.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    layer_id: String,
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        layer_id: impl Into<String>,
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f32>,
    ) -> Result<Self, FeatureIoError> {
        let layer_id = layer_id.into();
        if height == 0 || width == 0 || channels == 0 {
            return Err(FeatureIoError::ZeroDimension {
                layer: layer_id,
                offset: 0,
            });
        }
        let expected = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| FeatureIoError::DimensionOverflow {
                layer: layer_id.clone(),
                offset: 0,
            })?;
        if values.len() != expected {
            return Err(FeatureIoError::ShapeMismatch {
                layer: layer_id,
                expected,
                actual: values.len(),
            });
        }
        Ok(Self {
            layer_id,
            height,
            width,
            channels,
            values,
        })
    }

    /// Builds a map by evaluating `f(h, w, k)` for every element.
    pub fn from_fn(
        layer_id: impl Into<String>,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, FeatureIoError> {
        let mut values = Vec::with_capacity(height * width * channels);
        for h in 0..height {
            for w in 0..width {
                for k in 0..channels {
                    values.push(f(h, w, k));
                }
            }
        }
        Self::new(layer_id, height, width, channels, values)
    }

    pub fn filled(
        layer_id: impl Into<String>,
        height: usize,
        width: usize,
        channels: usize,
        value: f32,
    ) -> Result<Self, FeatureIoError> {
        Self::from_fn(layer_id, height, width, channels, |_, _, _| value)
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn offset_of(&self, h: usize, w: usize, k: usize) -> usize {
        (h * self.width + w) * self.channels + k
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, k: usize) -> f32 {
        self.values[self.offset_of(h, w, k)]
    }

    /// The K activations at spatial cell `(h, w)`.
    #[inline]
    pub fn cell(&self, h: usize, w: usize) -> &[f32] {
        let start = self.offset_of(h, w, 0);
        &self.values[start..start + self.channels]
    }

    /// `(h, w, k)` of a flat value index.
    pub fn position_of(&self, index: usize) -> (usize, usize, usize) {
        let k = index % self.channels;
        let cell = index / self.channels;
        (cell / self.width, cell % self.width, k)
    }

    /// Copy with every activation multiplied by `alpha`.
    pub fn scaled(&self, alpha: f32) -> Self {
        Self {
            values: self.values.iter().map(|v| v * alpha).collect(),
            ..self.clone()
        }
    }
}

/// All captured layers of one image. Layer order is significant: it fixes
/// the concatenation order of multi-layer descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSet {
    pub image_id: String,
    pub layers: Vec<FeatureMap>,
}

impl FeatureMapSet {
    /// Builds a set and rejects it unless [`validate`] finds nothing.
    pub fn new(image_id: impl Into<String>, layers: Vec<FeatureMap>) -> Result<Self, FeatureIoError> {
        let set = Self {
            image_id: image_id.into(),
            layers,
        };
        match validate(&set).into_iter().next() {
            None => Ok(set),
            Some(v) => Err(v.into_error(&set)),
        }
    }

    pub fn layer(&self, layer_id: &str) -> Option<&FeatureMap> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    pub fn layer_ids(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.layer_id.clone()).collect()
    }

    pub fn scaled(&self, alpha: f32) -> Self {
        Self {
            image_id: self.image_id.clone(),
            layers: self.layers.iter().map(|l| l.scaled(alpha)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyLayerSet,
    DuplicateLayerId {
        layer: String,
    },
    NonFinite {
        layer: String,
        /// `(h, w, k)` of the offending activation.
        index: (usize, usize, usize),
    },
}

impl Violation {
    fn into_error(self, set: &FeatureMapSet) -> FeatureIoError {
        match self {
            Violation::EmptyLayerSet => FeatureIoError::EmptyLayerSet,
            Violation::DuplicateLayerId { layer } => FeatureIoError::DuplicateLayerId { layer },
            Violation::NonFinite { layer, index } => {
                let offset = encoded_value_offset(set, &layer, index);
                FeatureIoError::NonFiniteValue { layer, offset }
            }
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyLayerSet => write!(f, "layer set is empty"),
            Violation::DuplicateLayerId { layer } => write!(f, "duplicate layer id {layer:?}"),
            Violation::NonFinite { layer, index } => {
                write!(f, "non-finite value in layer {layer:?} at (h, w, k) = {index:?}")
            }
        }
    }
}

/// Every invariant failure of `set`; empty iff the set is well formed.
pub fn validate(set: &FeatureMapSet) -> Vec<Violation> {
    let mut out = Vec::new();
    if set.layers.is_empty() {
        out.push(Violation::EmptyLayerSet);
    }
    let mut seen = HashSet::new();
    for layer in &set.layers {
        if !seen.insert(layer.layer_id.as_str()) {
            out.push(Violation::DuplicateLayerId {
                layer: layer.layer_id.clone(),
            });
        }
        if let Some(i) = layer.values.iter().position(|v| !v.is_finite()) {
            out.push(Violation::NonFinite {
                layer: layer.layer_id.clone(),
                index: layer.position_of(i),
            });
        }
    }
    out
}

/// Byte offset the given element would occupy in the encoded file.
fn encoded_value_offset(set: &FeatureMapSet, layer_id: &str, index: (usize, usize, usize)) -> usize {
    let mut offset = 4 + 2 + 2 + set.image_id.len() + 2;
    for layer in &set.layers {
        offset += 2 + layer.layer_id.len() + 12;
        if layer.layer_id == layer_id {
            return offset + layer.offset_of(index.0, index.1, index.2) * 4;
        }
        offset += layer.values.len() * 4;
    }
    offset
}

pub fn write_feature_map_set(set: &FeatureMapSet) -> Result<Vec<u8>, FeatureIoError> {
    if let Some(v) = validate(set).into_iter().next() {
        return Err(v.into_error(set));
    }
    let layer_count = u16::try_from(set.layers.len()).map_err(|_| FeatureIoError::TooManyLayers)?;
    let payload: usize = set.layers.iter().map(|l| l.values.len() * 4).sum();
    let mut out = Vec::with_capacity(16 + payload);
    out.extend_from_slice(&FMAP_MAGIC);
    codec::put_u16(&mut out, FMAP_VERSION);
    if !codec::put_str16(&mut out, &set.image_id) {
        return Err(FeatureIoError::IdTooLong {
            id: set.image_id.clone(),
        });
    }
    codec::put_u16(&mut out, layer_count);
    for layer in &set.layers {
        if !codec::put_str16(&mut out, &layer.layer_id) {
            return Err(FeatureIoError::IdTooLong {
                id: layer.layer_id.clone(),
            });
        }
        for dim in [layer.height, layer.width, layer.channels] {
            let dim = u32::try_from(dim).map_err(|_| FeatureIoError::DimensionOverflow {
                layer: layer.layer_id.clone(),
                offset: out.len(),
            })?;
            codec::put_u32(&mut out, dim);
        }
        codec::put_f32s(&mut out, &layer.values);
    }
    Ok(out)
}

pub fn read_feature_map_set(bytes: &[u8]) -> Result<FeatureMapSet, FeatureIoError> {
    let mut cur = Cursor::new(bytes);
    let truncated = |layer: Option<&str>, offset: usize| FeatureIoError::TruncatedStream {
        layer: layer.map(str::to_owned),
        offset,
    };
    let str_err = |layer: Option<&str>, e: StrError| match e {
        StrError::Short(s) => truncated(layer, s.offset),
        StrError::Utf8 { offset, .. } => FeatureIoError::InvalidUtf8 { offset },
    };

    match cur.take(4) {
        Ok(m) if m == FMAP_MAGIC => {}
        _ => return Err(FeatureIoError::BadMagic { offset: 0 }),
    }
    let version_at = cur.offset();
    let version = cur.u16().map_err(|s| truncated(None, s.offset))?;
    if version != FMAP_VERSION {
        return Err(FeatureIoError::UnsupportedVersion {
            version,
            offset: version_at,
        });
    }
    let image_id = cur.str16().map_err(|e| str_err(None, e))?;
    let layer_count = cur.u16().map_err(|s| truncated(None, s.offset))?;
    if layer_count == 0 {
        return Err(FeatureIoError::EmptyLayerSet);
    }

    let mut layers: Vec<FeatureMap> = Vec::with_capacity(layer_count as usize);
    for _ in 0..layer_count {
        let layer_id = cur.str16().map_err(|e| str_err(None, e))?;
        let lid = Some(layer_id.as_str());
        if layers.iter().any(|l| l.layer_id == layer_id) {
            return Err(FeatureIoError::DuplicateLayerId { layer: layer_id });
        }
        let header_at = cur.offset();
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = cur.u32().map_err(|s| truncated(lid, s.offset))? as usize;
        }
        let [height, width, channels] = dims;
        if height == 0 || width == 0 || channels == 0 {
            return Err(FeatureIoError::ZeroDimension {
                layer: layer_id,
                offset: header_at,
            });
        }
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| FeatureIoError::DimensionOverflow {
                layer: layer_id.clone(),
                offset: header_at,
            })?;
        let payload_at = cur.offset();
        let values = cur.f32s(n).map_err(|s| truncated(lid, s.offset))?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FeatureIoError::NonFiniteValue {
                layer: layer_id,
                offset: payload_at + i * 4,
            });
        }
        layers.push(FeatureMap {
            layer_id,
            height,
            width,
            channels,
            values,
        });
    }
    if cur.remaining() > 0 {
        return Err(FeatureIoError::TrailingBytes {
            offset: cur.offset(),
            count: cur.remaining(),
        });
    }
    Ok(FeatureMapSet { image_id, layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(values: Vec<f32>, k: usize) -> FeatureMapSet {
        FeatureMapSet::new("img", vec![FeatureMap::new("conv_a", 1, 1, k, values).unwrap()]).unwrap()
    }

    #[test]
    fn minimal_file_reads_back() {
        let bytes = write_feature_map_set(&single(vec![0.0], 1)).unwrap();
        let set = read_feature_map_set(&bytes).unwrap();
        assert_eq!(set.image_id, "img");
        assert_eq!(set.layers.len(), 1);
        assert_eq!(set.layers[0].layer_id(), "conv_a");
        assert_eq!(set.layers[0].values(), &[0.0]);
    }

    #[test]
    fn layout_of_two_channel_layer() {
        let bytes = write_feature_map_set(&single(vec![1.0, 2.0], 2)).unwrap();
        let mut expected = b"FMAP".to_vec();
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&3u16.to_le_bytes());
        expected.extend_from_slice(b"img");
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&6u16.to_le_bytes());
        expected.extend_from_slice(b"conv_a");
        for d in [1u32, 1, 2] {
            expected.extend_from_slice(&d.to_le_bytes());
        }
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&2.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn delta_tensor_lands_at_channel_last_offset() {
        let (hh, ww, kk) = (3, 4, 5);
        let (h, w, k) = (2, 1, 3);
        let map = FeatureMap::from_fn("d", hh, ww, kk, |a, b, c| {
            if (a, b, c) == (h, w, k) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let bytes = write_feature_map_set(&FeatureMapSet::new("x", vec![map]).unwrap()).unwrap();
        let header = 4 + 2 + 2 + 1 + 2 + 2 + 1 + 12;
        let nonzero: Vec<usize> = bytes[header..]
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0)
            .map(|(i, _)| i)
            .collect();
        let at = ((h * ww + w) * kk + k) * 4;
        // 1.0f32 = 00 00 80 3f
        assert_eq!(nonzero, vec![at + 2, at + 3]);
    }

    #[test]
    fn zero_height_header_is_rejected() {
        let mut bytes = write_feature_map_set(&single(vec![0.0], 1)).unwrap();
        let h_at = 4 + 2 + 2 + 3 + 2 + 2 + 6;
        bytes[h_at..h_at + 4].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(
            read_feature_map_set(&bytes),
            Err(FeatureIoError::ZeroDimension {
                layer: "conv_a".into(),
                offset: h_at
            })
        );
    }

    #[test]
    fn bad_magic_and_version() {
        assert_eq!(read_feature_map_set(b""), Err(FeatureIoError::BadMagic { offset: 0 }));
        assert_eq!(read_feature_map_set(b"FMAX\x01\x00"), Err(FeatureIoError::BadMagic { offset: 0 }));
        let mut bytes = write_feature_map_set(&single(vec![0.0], 1)).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            read_feature_map_set(&bytes),
            Err(FeatureIoError::UnsupportedVersion { version: 2, offset: 4 })
        ));
    }

    #[test]
    fn truncation_names_the_layer() {
        let bytes = write_feature_map_set(&single(vec![1.0, 2.0], 2)).unwrap();
        let cut = &bytes[..bytes.len() - 1];
        match read_feature_map_set(cut) {
            Err(FeatureIoError::TruncatedStream { layer, .. }) => assert_eq!(layer.as_deref(), Some("conv_a")),
            other => panic!("unexpected {other:?}"),
        }
        for len in 4..bytes.len() {
            assert!(matches!(
                read_feature_map_set(&bytes[..len]),
                Err(FeatureIoError::TruncatedStream { .. })
            ));
        }
    }

    #[test]
    fn non_finite_payload_is_rejected_with_offset() {
        let mut bytes = write_feature_map_set(&single(vec![1.0, 2.0], 2)).unwrap();
        let at = bytes.len() - 4;
        bytes[at..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert_eq!(
            read_feature_map_set(&bytes),
            Err(FeatureIoError::NonFiniteValue {
                layer: "conv_a".into(),
                offset: at
            })
        );
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = write_feature_map_set(&single(vec![0.0], 1)).unwrap();
        bytes.push(0);
        assert!(matches!(read_feature_map_set(&bytes), Err(FeatureIoError::TrailingBytes { count: 1, .. })));
    }

    #[test]
    fn empty_layer_list_cannot_be_written() {
        let set = FeatureMapSet {
            image_id: "e".into(),
            layers: vec![],
        };
        assert_eq!(write_feature_map_set(&set), Err(FeatureIoError::EmptyLayerSet));
    }

    #[test]
    fn validate_reports_injected_defects() {
        let a = FeatureMap::filled("conv_a", 2, 2, 2, 1.0).unwrap();
        let mut b = FeatureMap::filled("conv_b", 2, 2, 2, 1.0).unwrap();
        let good = FeatureMapSet {
            image_id: "i".into(),
            layers: vec![a.clone(), b.clone()],
        };
        assert!(validate(&good).is_empty());

        let idx = b.offset_of(0, 0, 1);
        b.values_mut()[idx] = f32::NAN;
        let nan = FeatureMapSet {
            image_id: "i".into(),
            layers: vec![a.clone(), b],
        };
        assert_eq!(
            validate(&nan),
            vec![Violation::NonFinite {
                layer: "conv_b".into(),
                index: (0, 0, 1)
            }]
        );
        match write_feature_map_set(&nan) {
            Err(FeatureIoError::NonFiniteValue { layer, offset }) => {
                assert_eq!(layer, "conv_b");
                let bytes = write_feature_map_set(&good).unwrap();
                assert_eq!(&bytes[offset..offset + 4], &1.0f32.to_le_bytes());
                assert_eq!(offset, bytes.len() - 8 * 4 + 4);
            }
            other => panic!("unexpected {other:?}"),
        }

        let dup = FeatureMapSet {
            image_id: "i".into(),
            layers: vec![a.clone(), a],
        };
        assert_eq!(
            validate(&dup),
            vec![Violation::DuplicateLayerId { layer: "conv_a".into() }]
        );
    }

    #[test]
    fn shape_is_enforced_on_construction() {
        assert!(matches!(
            FeatureMap::new("x", 2, 2, 2, vec![0.0; 7]),
            Err(FeatureIoError::ShapeMismatch { expected: 8, actual: 7, .. })
        ));
        assert!(matches!(
            FeatureMap::new("x", 0, 2, 2, vec![]),
            Err(FeatureIoError::ZeroDimension { .. })
        ));
    }
}
