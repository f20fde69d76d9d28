//! MAC, the multi-scale square region grid, R-MAC and MS-RMAC.
//!
//! All pooling is per channel over a channel-last [`FeatureMap`]. R-MAC sums
//! region vectors in region emission order (scale-major, then row-major), so
//! results are reproducible bit for bit.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_io::{FeatureMap, FeatureMapSet};

/// Region scale `l`; the square side is `2 * min(H, W) / (l + 1)`.
pub type Scale = u32;

pub const DEFAULT_SCALES: [Scale; 3] = [1, 2, 3];

/// Norms at or below this are treated as zero by [`l2_normalize`].
pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DescriptorError {
    #[error("region {region:?} exceeds a {height}x{width} map")]
    RegionOutOfBounds {
        region: Region,
        height: usize,
        width: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PoolKind {
    Mac,
    Rmac,
    Msrmac,
    Avgpool,
}

impl PoolKind {
    pub fn needs_scales(self) -> bool {
        matches!(self, PoolKind::Rmac | PoolKind::Msrmac)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoolKind::Mac => "MAC",
            PoolKind::Rmac => "RMAC",
            PoolKind::Msrmac => "MSRMAC",
            PoolKind::Avgpool => "AVGPOOL",
        }
    }
}

/// Axis-aligned rectangle on a feature-map grid: columns `x..x+w`, rows `y..y+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Region {
    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x + self.w <= width && self.y + self.h <= height
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionGrid {
    pub scales: Vec<Scale>,
    pub regions: Vec<Region>,
    /// Index range into `regions` for each entry of `scales`.
    pub scale_ranges: Vec<Range<usize>>,
    pub source_dims: (usize, usize),
}

impl RegionGrid {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn by_scale(&self) -> impl Iterator<Item = (Scale, &[Region])> + '_ {
        self.scales
            .iter()
            .zip(&self.scale_ranges)
            .map(|(&l, r)| (l, &self.regions[r.clone()]))
    }
}

/// Side of the square regions at scale `l`, at least 1.
pub fn region_side(height: usize, width: usize, scale: Scale) -> usize {
    assert!(scale >= 1, "region scale must be >= 1");
    ((2 * height.min(width)) / (scale as usize + 1)).max(1)
}

/// Start offsets of a side-`side` window along an axis of length `len`.
///
/// One placement when the window spans the axis. Otherwise the fewest evenly
/// spaced placements (at least two, first at 0 and last flush with the end)
/// whose rounded step never exceeds `floor(0.6 * side)`, which keeps every
/// consecutive pair overlapping by at least 40%. A side-1 window cannot
/// overlap a distinct neighbour, so it gets a single centred placement.
pub fn axis_offsets(len: usize, side: usize) -> Vec<usize> {
    assert!(side >= 1 && side <= len, "window side {side} must lie in 1..={len}");
    let slack = len - side;
    if slack == 0 {
        return vec![0];
    }
    let max_step = (6 * side) / 10;
    if max_step == 0 {
        return vec![slack / 2];
    }
    let gaps = slack.div_ceil(max_step).max(1);
    (0..=gaps)
        .map(|i| (2 * i * slack + gaps) / (2 * gaps))
        .collect()
}

/// Deterministic multi-scale grid of square regions, scale-major then
/// row-major.
///
/// # Panics
///
/// If `height` or `width` is zero or any scale is zero.
pub fn generate_regions(height: usize, width: usize, scales: &[Scale]) -> RegionGrid {
    assert!(height >= 1 && width >= 1, "map dimensions must be >= 1");
    let mut regions = Vec::new();
    let mut scale_ranges = Vec::with_capacity(scales.len());
    for &l in scales {
        let side = region_side(height, width, l);
        let ys = axis_offsets(height, side);
        let xs = axis_offsets(width, side);
        let start = regions.len();
        for &y in &ys {
            for &x in &xs {
                regions.push(Region { x, y, w: side, h: side });
            }
        }
        scale_ranges.push(start..regions.len());
    }
    RegionGrid {
        scales: scales.to_vec(),
        regions,
        scale_ranges,
        source_dims: (height, width),
    }
}

/// Where a block of descriptor components came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    /// Branch index once the descriptor is part of a combined descriptor.
    pub branch: Option<usize>,
    pub kind: PoolKind,
    pub layer_id: String,
    pub scales: Vec<Scale>,
    pub offset: usize,
    pub len: usize,
}

impl Span {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat image descriptor plus the spans that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDescriptor {
    pub values: Vec<f32>,
    pub provenance: Vec<Span>,
    /// Set when normalization met a zero vector.
    pub degenerate: bool,
}

impl GlobalDescriptor {
    /// Descriptor with no recorded provenance.
    pub fn from_values(values: Vec<f32>) -> Self {
        Self {
            values,
            provenance: Vec::new(),
            degenerate: false,
        }
    }

    fn single(values: Vec<f32>, kind: PoolKind, layer_id: &str, scales: &[Scale]) -> Self {
        let len = values.len();
        Self {
            values,
            provenance: vec![Span {
                branch: None,
                kind,
                layer_id: layer_id.to_owned(),
                scales: scales.to_vec(),
                offset: 0,
                len,
            }],
            degenerate: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Concatenates descriptors, shifting their spans into place.
pub fn concat(parts: impl IntoIterator<Item = GlobalDescriptor>) -> GlobalDescriptor {
    let mut out = GlobalDescriptor::from_values(Vec::new());
    for part in parts {
        let base = out.values.len();
        out.provenance.extend(part.provenance.into_iter().map(|mut s| {
            s.offset += base;
            s
        }));
        out.values.extend(part.values);
        out.degenerate |= part.degenerate;
    }
    out
}

/// Channel-wise max over a window. `region` must fit the map.
fn window_max(map: &FeatureMap, region: &Region) -> Vec<f32> {
    let mut acc = map.cell(region.y, region.x).to_vec();
    for h in region.y..region.y + region.h {
        for w in region.x..region.x + region.w {
            for (a, &v) in acc.iter_mut().zip(map.cell(h, w)) {
                if v > *a {
                    *a = v;
                }
            }
        }
    }
    acc
}

/// Maximum activation of each channel over the whole map.
pub fn mac(map: &FeatureMap) -> GlobalDescriptor {
    let whole = Region {
        x: 0,
        y: 0,
        w: map.width(),
        h: map.height(),
    };
    GlobalDescriptor::single(window_max(map, &whole), PoolKind::Mac, map.layer_id(), &[])
}

/// MAC restricted to `region`.
pub fn region_mac(map: &FeatureMap, region: &Region) -> Result<GlobalDescriptor, DescriptorError> {
    if !region.fits(map.height(), map.width()) {
        return Err(DescriptorError::RegionOutOfBounds {
            region: *region,
            height: map.height(),
            width: map.width(),
        });
    }
    Ok(GlobalDescriptor::single(
        window_max(map, region),
        PoolKind::Mac,
        map.layer_id(),
        &[],
    ))
}

/// Mean activation of each channel, accumulated in f64.
pub fn avg_pool(map: &FeatureMap) -> GlobalDescriptor {
    let mut acc = vec![0f64; map.channels()];
    for cell in map.values().chunks_exact(map.channels()) {
        for (a, &v) in acc.iter_mut().zip(cell) {
            *a += f64::from(v);
        }
    }
    let n = (map.height() * map.width()) as f64;
    let values = acc.into_iter().map(|a| (a / n) as f32).collect();
    GlobalDescriptor::single(values, PoolKind::Avgpool, map.layer_id(), &[])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RmacOptions {
    /// L2-normalize each region vector before summation.
    pub region_l2: bool,
}

pub fn rmac(map: &FeatureMap, scales: &[Scale]) -> GlobalDescriptor {
    rmac_with(map, scales, RmacOptions::default())
}

/// Sum of region MACs over the grid of `scales`.
pub fn rmac_with(map: &FeatureMap, scales: &[Scale], opts: RmacOptions) -> GlobalDescriptor {
    let grid = generate_regions(map.height(), map.width(), scales);
    let mut acc = vec![0f32; map.channels()];
    for region in &grid.regions {
        let mut v = window_max(map, region);
        if opts.region_l2 {
            normalize_in_place(&mut v);
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    GlobalDescriptor::single(acc, PoolKind::Rmac, map.layer_id(), scales)
}

pub fn msrmac(set: &FeatureMapSet, scales: &[Scale]) -> GlobalDescriptor {
    msrmac_with(set, scales, RmacOptions::default())
}

/// Per-layer R-MAC concatenated in set order.
pub fn msrmac_with(set: &FeatureMapSet, scales: &[Scale], opts: RmacOptions) -> GlobalDescriptor {
    msrmac_layers(set.layers.iter(), scales, opts)
}

pub(crate) fn msrmac_layers<'a>(
    layers: impl IntoIterator<Item = &'a FeatureMap>,
    scales: &[Scale],
    opts: RmacOptions,
) -> GlobalDescriptor {
    let mut out = concat(layers.into_iter().map(|l| rmac_with(l, scales, opts)));
    for span in &mut out.provenance {
        span.kind = PoolKind::Msrmac;
    }
    out
}

/// Returns `false` (leaving `v` untouched) when the norm is at or below
/// [`NORM_EPSILON`].
fn normalize_in_place(v: &mut [f32]) -> bool {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm <= NORM_EPSILON {
        return false;
    }
    for x in v.iter_mut() {
        *x = (f64::from(*x) / norm) as f32;
    }
    true
}

/// Unit-norm copy of `d`; a zero vector comes back unchanged with
/// `degenerate` set.
pub fn l2_normalize(d: &GlobalDescriptor) -> GlobalDescriptor {
    let mut out = d.clone();
    if !normalize_in_place(&mut out.values) {
        out.degenerate = true;
    }
    out
}
