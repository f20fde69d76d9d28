//! JSON config file. Every command-line flag has a counterpart here; flags
//! win when both are given.

use std::path::{Path, PathBuf};

use cbir_core::{FeatureMapSet, FusionConfig, RepresentativeMode, Scale, DEFAULT_SCALES};
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_REFINE_CANDIDATES: usize = 5;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Defaults to three branches (MS-RMAC, MAC, AVGPOOL) over every layer.
    pub fusion: Option<FusionConfig>,
    pub scales: Option<Vec<Scale>>,
    pub representative_mode: Option<RepresentativeMode>,
    pub refine: Option<bool>,
    pub refine_candidates: Option<usize>,
    pub jobs: Option<usize>,
    pub k: Option<usize>,
    pub ks: Option<Vec<usize>>,
    pub paths: Paths,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub fmaps: Option<PathBuf>,
    pub desc: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub fmap: Option<PathBuf>,
    pub index_fmaps: Option<PathBuf>,
    pub query_fmaps: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: invalid config: {e}", path.display())))
    }

    pub fn scales(&self) -> Result<Vec<Scale>, CliError> {
        let scales = self.scales.clone().unwrap_or_else(|| DEFAULT_SCALES.to_vec());
        if scales.is_empty() || scales.contains(&0) {
            return Err(CliError::config("scales must be a non-empty list of integers >= 1"));
        }
        Ok(scales)
    }

    /// The configured fusion, or the default over `sample`'s layers, with
    /// missing scale lists filled from `scales`.
    pub fn fusion_for(&self, sample: &FeatureMapSet) -> Result<FusionConfig, CliError> {
        let scales = self.scales()?;
        let fusion = match &self.fusion {
            Some(f) => f.clone().with_default_scales(&scales),
            None => {
                let mut f = FusionConfig::default_for_layers(&sample.layer_ids());
                for b in &mut f.branches {
                    if b.kind.needs_scales() {
                        b.scales = scales.clone();
                    }
                }
                f
            }
        };
        fusion.check().map_err(|e| CliError::config(format!("fusion config: {e}")))?;
        Ok(fusion)
    }

    pub fn mode(&self, flag: Option<RepresentativeMode>) -> RepresentativeMode {
        flag.or(self.representative_mode).unwrap_or(RepresentativeMode::Mean)
    }

    /// Candidate class count when refinement is on. `flag` is `Some(None)`
    /// for a bare `--refine`.
    pub fn refine(&self, flag: Option<Option<usize>>) -> Option<usize> {
        let default = self.refine_candidates.unwrap_or(DEFAULT_REFINE_CANDIDATES);
        match flag {
            Some(m) => Some(m.unwrap_or(default)),
            None if self.refine == Some(true) => Some(default),
            None => None,
        }
    }
}

/// Flag value, else config value, else a usage error naming the flag.
pub fn required<T: Clone>(flag: Option<T>, config: &Option<T>, name: &str) -> Result<T, CliError> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| CliError::usage(format!("missing required --{name} (flag or config)")))
}
