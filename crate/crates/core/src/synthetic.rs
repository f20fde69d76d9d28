//! Gaussian-cluster feature maps for exercising the pipeline without a CNN.
//!
//! Every class owns a prototype amplitude per (layer, channel). An instance
//! of the class is its prototype broadcast over the spatial grid plus
//! i.i.d. `N(0, spread^2)` noise. Prototypes are drawn so that any two
//! classes differ by at least `margin` in L2 over the stacked amplitudes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::feature_io::{FeatureMap, FeatureMapSet};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerShape {
    pub layer_id: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl LayerShape {
    pub fn new(layer_id: impl Into<String>, height: usize, width: usize, channels: usize) -> Self {
        Self {
            layer_id: layer_id.into(),
            height,
            width,
            channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub classes: u32,
    pub layers: Vec<LayerShape>,
    /// Standard deviation of per-activation noise.
    pub spread: f32,
    /// Minimum L2 distance between class prototypes.
    pub margin: f32,
    pub seed: u64,
}

impl ClusterSpec {
    /// Ten classes over two small layers with margin = 10 x spread.
    pub fn ten_classes(seed: u64) -> Self {
        Self {
            classes: 10,
            layers: vec![LayerShape::new("conv_a", 6, 6, 8), LayerShape::new("conv_b", 4, 5, 8)],
            spread: 0.1,
            margin: 1.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub set: FeatureMapSet,
    pub class_id: u32,
}

#[derive(Debug, Clone)]
pub struct ClusterFixture {
    spec: ClusterSpec,
    /// `prototypes[class][layer][channel]`
    prototypes: Vec<Vec<Vec<f32>>>,
}

const MAX_PROTOTYPE_DRAWS: usize = 10_000;

impl ClusterFixture {
    /// # Panics
    ///
    /// If no prototype far enough from the others can be drawn, which only
    /// happens for a margin that is large relative to the channel count.
    pub fn new(spec: ClusterSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let hi = 2.0 * spec.margin;
        let mut prototypes: Vec<Vec<Vec<f32>>> = Vec::with_capacity(spec.classes as usize);
        while prototypes.len() < spec.classes as usize {
            let mut accepted = false;
            for _ in 0..MAX_PROTOTYPE_DRAWS {
                let candidate: Vec<Vec<f32>> = spec
                    .layers
                    .iter()
                    .map(|l| (0..l.channels).map(|_| rng.random_range(0.0..hi)).collect())
                    .collect();
                if prototypes.iter().all(|p| prototype_distance(p, &candidate) >= f64::from(spec.margin)) {
                    prototypes.push(candidate);
                    accepted = true;
                    break;
                }
            }
            assert!(accepted, "could not place class prototype {}", prototypes.len());
        }
        Self { spec, prototypes }
    }

    pub fn spec(&self) -> &ClusterSpec {
        &self.spec
    }

    /// `per_class` instances of every class, ids `{prefix}c{class}_{i}`,
    /// ordered by class then instance.
    pub fn sample(&self, prefix: &str, per_class: usize, seed: u64) -> Vec<SyntheticImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0f32, self.spec.spread).expect("spread must be finite and >= 0");
        let mut out = Vec::with_capacity(self.prototypes.len() * per_class);
        for (class, proto) in self.prototypes.iter().enumerate() {
            for i in 0..per_class {
                let layers = self
                    .spec
                    .layers
                    .iter()
                    .zip(proto)
                    .map(|(shape, amp)| {
                        FeatureMap::from_fn(&shape.layer_id, shape.height, shape.width, shape.channels, |_, _, k| {
                            amp[k] + noise.sample(&mut rng)
                        })
                        .expect("layer shape must be non-degenerate")
                    })
                    .collect();
                out.push(SyntheticImage {
                    set: FeatureMapSet {
                        image_id: format!("{prefix}c{class:03}_{i:04}"),
                        layers,
                    },
                    class_id: class as u32,
                });
            }
        }
        out
    }

    pub fn prototype_distance(&self, a: u32, b: u32) -> f64 {
        prototype_distance(&self.prototypes[a as usize], &self.prototypes[b as usize])
    }
}

fn prototype_distance(a: &[Vec<f32>], b: &[Vec<f32>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_io::validate;

    #[test]
    fn prototypes_respect_margin() {
        let fx = ClusterFixture::new(ClusterSpec::ten_classes(7));
        for a in 0..10 {
            for b in (a + 1)..10 {
                assert!(fx.prototype_distance(a, b) >= 1.0);
            }
        }
    }

    #[test]
    fn samples_are_valid_and_deterministic() {
        let fx = ClusterFixture::new(ClusterSpec::ten_classes(1));
        let a = fx.sample("q", 3, 42);
        let b = fx.sample("q", 3, 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert!(a.iter().all(|s| validate(&s.set).is_empty()));
        assert_eq!(a[4].class_id, 1);
        assert_eq!(a[4].set.image_id, "qc001_0001");
        assert_ne!(fx.sample("q", 3, 43), a);
    }
}
