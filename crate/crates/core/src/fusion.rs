//! Combined global descriptors: several pooling branches over the layers of
//! one image, concatenated into a single vector.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{self, GlobalDescriptor, PoolKind, RmacOptions, Scale, DEFAULT_SCALES};
use crate::feature_io::{FeatureMap, FeatureMapSet};

pub const DEFAULT_BALANCE_TOLERANCE: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("branch {branch}: unknown layer id {layer:?}")]
    UnknownLayerId { branch: usize, layer: String },
    #[error("branch {branch}: {kind} needs a non-empty scale list")]
    EmptyScaleList { branch: usize, kind: &'static str },
    #[error("branch {branch}: scale 0 is invalid")]
    InvalidScale { branch: usize },
    #[error("branch {branch}: no layers selected")]
    EmptyLayerList { branch: usize },
    #[error("fusion config has no branches")]
    NoBranches,
    #[error("balance tolerance must be finite and >= 1, got {0}")]
    InvalidTolerance(f64),
    #[error("expected {expected} branch descriptors, got {actual}")]
    BranchCountMismatch { expected: usize, actual: usize },
    #[error("branch {branch} descriptor has non-finite components")]
    NonFiniteDescriptor { branch: usize },
}

fn default_true() -> bool {
    true
}

fn default_tolerance() -> f64 {
    DEFAULT_BALANCE_TOLERANCE
}

/// Recipe for one descriptor branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub kind: PoolKind,
    pub layer_ids: Vec<String>,
    /// Required for RMAC and MSRMAC, ignored otherwise.
    #[serde(default)]
    pub scales: Vec<Scale>,
    #[serde(default)]
    pub normalize_branch: bool,
    /// L2-normalize region vectors before the R-MAC sum.
    #[serde(default)]
    pub region_l2: bool,
}

impl BranchConfig {
    pub fn new(kind: PoolKind, layer_ids: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            kind,
            layer_ids: layer_ids.into_iter().map(Into::into).collect(),
            scales: if kind.needs_scales() {
                DEFAULT_SCALES.to_vec()
            } else {
                Vec::new()
            },
            normalize_branch: false,
            region_l2: false,
        }
    }

    pub fn with_scales(mut self, scales: &[Scale]) -> Self {
        self.scales = scales.to_vec();
        self
    }

    pub fn normalized(mut self) -> Self {
        self.normalize_branch = true;
        self
    }

    fn check(&self, branch: usize) -> Result<(), FusionError> {
        if self.layer_ids.is_empty() {
            return Err(FusionError::EmptyLayerList { branch });
        }
        if self.kind.needs_scales() {
            if self.scales.is_empty() {
                return Err(FusionError::EmptyScaleList {
                    branch,
                    kind: self.kind.as_str(),
                });
            }
            if self.scales.contains(&0) {
                return Err(FusionError::InvalidScale { branch });
            }
        }
        Ok(())
    }

    fn select<'a>(&self, set: &'a FeatureMapSet, branch: usize) -> Result<Vec<&'a FeatureMap>, FusionError> {
        self.layer_ids
            .iter()
            .map(|id| {
                set.layer(id).ok_or_else(|| FusionError::UnknownLayerId {
                    branch,
                    layer: id.clone(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub branches: Vec<BranchConfig>,
    #[serde(default = "default_true")]
    pub final_normalize: bool,
    /// Largest tolerated `max(dim) / min(dim)` across branches.
    #[serde(default = "default_tolerance")]
    pub balance_tolerance: f64,
}

impl FusionConfig {
    pub fn new(branches: Vec<BranchConfig>) -> Self {
        Self {
            branches,
            final_normalize: true,
            balance_tolerance: DEFAULT_BALANCE_TOLERANCE,
        }
    }

    /// Three balanced branches over all given layers: MS-RMAC at the default
    /// scales, MAC and average pooling.
    pub fn default_for_layers(layer_ids: &[String]) -> Self {
        Self::new(vec![
            BranchConfig::new(PoolKind::Msrmac, layer_ids.iter().cloned()),
            BranchConfig::new(PoolKind::Mac, layer_ids.iter().cloned()),
            BranchConfig::new(PoolKind::Avgpool, layer_ids.iter().cloned()),
        ])
    }

    /// Fills the scale list of every RMAC/MSRMAC branch that has none.
    pub fn with_default_scales(mut self, scales: &[Scale]) -> Self {
        for b in &mut self.branches {
            if b.kind.needs_scales() && b.scales.is_empty() {
                b.scales = scales.to_vec();
            }
        }
        self
    }

    pub fn check(&self) -> Result<(), FusionError> {
        if self.branches.is_empty() {
            return Err(FusionError::NoBranches);
        }
        if !self.balance_tolerance.is_finite() || self.balance_tolerance < 1.0 {
            return Err(FusionError::InvalidTolerance(self.balance_tolerance));
        }
        self.branches.iter().enumerate().try_for_each(|(i, b)| b.check(i))
    }

    /// Checks the config and that every referenced layer exists in `set`.
    pub fn check_against(&self, set: &FeatureMapSet) -> Result<(), FusionError> {
        self.check()?;
        for (i, b) in self.branches.iter().enumerate() {
            b.select(set, i)?;
        }
        Ok(())
    }

    /// Combined descriptor length for inputs shaped like `set`.
    pub fn output_dim(&self, set: &FeatureMapSet) -> Result<usize, FusionError> {
        self.check()?;
        let mut dim = 0;
        for (i, b) in self.branches.iter().enumerate() {
            dim += b.select(set, i)?.iter().map(|l| l.channels()).sum::<usize>();
        }
        Ok(dim)
    }
}

/// Branch dimensions are further apart than the configured tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceWarning {
    pub branch_dims: Vec<usize>,
    pub ratio: f64,
    pub tolerance: f64,
}

impl fmt::Display for BalanceWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "branch dimensions {:?} are unbalanced: max/min ratio {:.3} exceeds {:.3}",
            self.branch_dims, self.ratio, self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub descriptor: GlobalDescriptor,
    pub balance_warning: Option<BalanceWarning>,
}

/// Runs one branch over the selected layers of `set`, in `layer_ids` order.
pub fn branch_descriptor(set: &FeatureMapSet, cfg: &BranchConfig) -> Result<GlobalDescriptor, FusionError> {
    branch_at(set, cfg, 0)
}

fn branch_at(set: &FeatureMapSet, cfg: &BranchConfig, branch: usize) -> Result<GlobalDescriptor, FusionError> {
    cfg.check(branch)?;
    let layers = cfg.select(set, branch)?;
    let opts = RmacOptions {
        region_l2: cfg.region_l2,
    };
    let d = match cfg.kind {
        PoolKind::Mac => descriptor::concat(layers.into_iter().map(descriptor::mac)),
        PoolKind::Avgpool => descriptor::concat(layers.into_iter().map(descriptor::avg_pool)),
        PoolKind::Rmac => descriptor::concat(
            layers
                .into_iter()
                .map(|l| descriptor::rmac_with(l, &cfg.scales, opts)),
        ),
        PoolKind::Msrmac => descriptor::msrmac_layers(layers, &cfg.scales, opts),
    };
    Ok(if cfg.normalize_branch {
        descriptor::l2_normalize(&d)
    } else {
        d
    })
}

/// Concatenates branch descriptors in branch order, tagging their spans with
/// the branch index, and optionally normalizes the result.
pub fn combine(descriptors: Vec<GlobalDescriptor>, cfg: &FusionConfig) -> Result<Fused, FusionError> {
    if descriptors.len() != cfg.branches.len() {
        return Err(FusionError::BranchCountMismatch {
            expected: cfg.branches.len(),
            actual: descriptors.len(),
        });
    }
    if let Some(branch) = descriptors.iter().position(|d| !d.is_finite()) {
        return Err(FusionError::NonFiniteDescriptor { branch });
    }
    let branch_dims: Vec<usize> = descriptors.iter().map(GlobalDescriptor::dim).collect();
    let balance_warning = balance_check(&branch_dims, cfg.balance_tolerance);

    let tagged = descriptors.into_iter().enumerate().map(|(i, mut d)| {
        for span in &mut d.provenance {
            span.branch = Some(i);
        }
        d
    });
    let mut descriptor = descriptor::concat(tagged);
    if cfg.final_normalize {
        descriptor.degenerate = false;
        descriptor = descriptor::l2_normalize(&descriptor);
    }
    Ok(Fused {
        descriptor,
        balance_warning,
    })
}

fn balance_check(dims: &[usize], tolerance: f64) -> Option<BalanceWarning> {
    let max = *dims.iter().max()?;
    let min = *dims.iter().min()?;
    let ratio = if min == 0 { f64::INFINITY } else { max as f64 / min as f64 };
    (ratio > tolerance).then(|| BalanceWarning {
        branch_dims: dims.to_vec(),
        ratio,
        tolerance,
    })
}

/// All branches of `cfg` over `set`, combined.
pub fn describe(set: &FeatureMapSet, cfg: &FusionConfig) -> Result<Fused, FusionError> {
    cfg.check()?;
    let parts = cfg
        .branches
        .iter()
        .enumerate()
        .map(|(i, b)| branch_at(set, b, i))
        .collect::<Result<Vec<_>, _>>()?;
    combine(parts, cfg)
}

/// Component range owned by each branch of a combined descriptor.
pub fn branch_ranges(d: &GlobalDescriptor) -> Vec<(usize, std::ops::Range<usize>)> {
    let mut out: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
    for span in &d.provenance {
        let Some(b) = span.branch else { continue };
        match out.last_mut() {
            Some((last, r)) if *last == b && r.end == span.offset => r.end = span.offset + span.len,
            _ => out.push((b, span.range())),
        }
    }
    out
}
