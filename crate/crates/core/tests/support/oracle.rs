//! Element-by-element reference implementations used as test oracles.
//!
//! These read the raw channel-last buffer directly and never call the
//! library's pooling or placement code.

#![allow(dead_code)]

use cbir_core::{FeatureMap, FeatureMapSet};

pub fn at(map: &FeatureMap, h: usize, w: usize, k: usize) -> f32 {
    map.values()[(h * map.width() + w) * map.channels() + k]
}

pub fn brute_max(map: &FeatureMap, y: usize, x: usize, side_h: usize, side_w: usize) -> Vec<f32> {
    (0..map.channels())
        .map(|k| {
            let mut best = f32::NEG_INFINITY;
            for h in y..y + side_h {
                for w in x..x + side_w {
                    best = best.max(at(map, h, w, k));
                }
            }
            best
        })
        .collect()
}

pub fn brute_mac(map: &FeatureMap) -> Vec<f32> {
    brute_max(map, 0, 0, map.height(), map.width())
}

pub fn brute_side(height: usize, width: usize, scale: u32) -> usize {
    let s = (2.0 * height.min(width) as f64 / (scale as f64 + 1.0)).floor() as usize;
    s.max(1)
}

/// Offsets along one axis: fewest evenly spaced placements whose step is
/// at most floor(0.6 * side), found by linear search.
pub fn brute_offsets(len: usize, side: usize) -> Vec<usize> {
    if len == side {
        return vec![0];
    }
    let slack = len - side;
    let max_step = (side as f64 * 0.6 + 1e-9).floor() as usize;
    if max_step == 0 {
        return vec![slack / 2];
    }
    let mut n = 2;
    while (n - 1) * max_step < slack {
        n += 1;
    }
    (0..n)
        .map(|i| (i as f64 * slack as f64 / (n - 1) as f64).round() as usize)
        .collect()
}

/// `(x, y, side)` for every region, scale-major then row-major.
pub fn brute_regions(height: usize, width: usize, scales: &[u32]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for &l in scales {
        let s = brute_side(height, width, l);
        for y in brute_offsets(height, s) {
            for x in brute_offsets(width, s) {
                out.push((x, y, s));
            }
        }
    }
    out
}

pub fn brute_rmac(map: &FeatureMap, scales: &[u32]) -> Vec<f32> {
    let mut acc = vec![0f32; map.channels()];
    for (x, y, s) in brute_regions(map.height(), map.width(), scales) {
        for (a, m) in acc.iter_mut().zip(brute_max(map, y, x, s, s)) {
            *a += m;
        }
    }
    acc
}

pub fn brute_msrmac(set: &FeatureMapSet, scales: &[u32]) -> Vec<f32> {
    set.layers.iter().flat_map(|l| brute_rmac(l, scales)).collect()
}

pub fn naive_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        s += d * d;
    }
    s.sqrt()
}

/// Classes sorted by (distance to representative, class id).
pub fn brute_class_ranking(reps: &[(u32, Vec<f32>)], q: &[f32]) -> Vec<(u32, f64)> {
    let mut v: Vec<(u32, f64)> = reps.iter().map(|(c, r)| (*c, naive_distance(q, r))).collect();
    v.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    v
}
