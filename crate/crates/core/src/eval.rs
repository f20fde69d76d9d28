//! Recall@K over a held-out query split and the end-to-end experiment
//! runner.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::descriptor::Scale;
use crate::feature_io::FeatureMapSet;
use crate::fusion::{self, BalanceWarning, FusionConfig, FusionError};
use crate::index::{DescriptorIndex, IndexEntry, IndexError, QueryResult, RepresentativeMode, Stage};

/// Stated in every report so the numbers are not read as classifier
/// accuracy.
pub const REPORT_PROTOCOL: &str =
    "retrieval recall@k of query images against class representatives of a separate index split; \
     not fine-tuned classifier validation accuracy";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no ground-truth label for image {0:?}")]
    MissingTruth(String),
    #[error("no query result for image {0:?}")]
    MissingResult(String),
    #[error("query result for {0:?} is not a class-stage result")]
    WrongStage(String),
    #[error("k must be >= 1")]
    InvalidK,
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("ground truth line {line}: {reason}")]
    TruthParse { line: usize, reason: String },
    #[error("image {0:?} labeled twice")]
    DuplicateLabel(String),
    #[error("image id {0:?} appears more than once in a split")]
    DuplicateImageId(String),
    #[error("image {image_id:?}: {source}")]
    Fusion {
        image_id: String,
        #[source]
        source: FusionError,
    },
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// `image_id -> class_id`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    labels: BTreeMap<String, u32>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, class_id: u32) -> Result<(), EvalError> {
        let image_id = image_id.into();
        if self.labels.contains_key(&image_id) {
            return Err(EvalError::DuplicateLabel(image_id));
        }
        self.labels.insert(image_id, class_id);
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<u32> {
        self.labels.get(image_id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.labels.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Labels of the given ids only.
    pub fn restricted_to<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Self, EvalError> {
        let mut out = Self::new();
        for id in ids {
            let c = self.get(id).ok_or_else(|| EvalError::MissingTruth(id.to_owned()))?;
            out.insert(id, c)?;
        }
        Ok(out)
    }

    /// Parses `image_id<TAB>class_id` lines.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut out = Self::new();
        for (i, line) in text.split_terminator('\n').enumerate() {
            let line_no = i + 1;
            let bad = |reason: &str| EvalError::TruthParse {
                line: line_no,
                reason: reason.to_owned(),
            };
            let (id, class) = line.split_once('\t').ok_or_else(|| bad("expected image_id<TAB>class_id"))?;
            if id.is_empty() {
                return Err(bad("empty image id"));
            }
            let class: u32 = class.parse().map_err(|_| bad("class id is not a non-negative integer"))?;
            out.insert(id, class)?;
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        self.labels.iter().map(|(id, c)| format!("{id}\t{c}\n")).collect()
    }
}

impl FromIterator<(String, u32)> for GroundTruth {
    /// Later duplicates overwrite earlier ones.
    fn from_iter<T: IntoIterator<Item = (String, u32)>>(iter: T) -> Self {
        Self {
            labels: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub recall_at: BTreeMap<usize, f64>,
    pub top1_accuracy: f64,
    pub per_class: BTreeMap<u32, f64>,
    pub n_queries: usize,
    pub config_fingerprint: Option<String>,
}

impl EvalReport {
    /// Pretty JSON with lexicographically sorted keys.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report is always serializable");
        let mut s = serde_json::to_string_pretty(&value).expect("value is always serializable");
        s.push('\n');
        s
    }
}

fn normalize_ks(ks: &[usize]) -> Result<Vec<usize>, EvalError> {
    if ks.contains(&0) {
        return Err(EvalError::InvalidK);
    }
    let mut set: BTreeSet<usize> = ks.iter().copied().collect();
    set.insert(1);
    Ok(set.into_iter().collect())
}

/// Fraction of queries whose true class appears in the top `k` of their
/// class ranking, for each `k` (1 is always included).
pub fn recall_at_k(
    results: &BTreeMap<String, QueryResult>,
    truth: &GroundTruth,
    ks: &[usize],
) -> Result<EvalReport, EvalError> {
    let ks = normalize_ks(ks)?;
    for id in results.keys() {
        if truth.get(id).is_none() {
            return Err(EvalError::MissingTruth(id.clone()));
        }
    }
    if truth.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut hits = vec![0usize; ks.len()];
    let mut per_class: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (id, class) in truth.iter() {
        let result = results.get(id).ok_or_else(|| EvalError::MissingResult(id.to_owned()))?;
        if result.stage != Stage::Class {
            return Err(EvalError::WrongStage(id.to_owned()));
        }
        let rank = result.ranked.iter().position(|h| h.class_id == class);
        for (slot, &k) in hits.iter_mut().zip(&ks) {
            if rank.is_some_and(|r| r < k) {
                *slot += 1;
            }
        }
        let entry = per_class.entry(class).or_default();
        entry.1 += 1;
        if rank == Some(0) {
            entry.0 += 1;
        }
    }
    let n = truth.len();
    let recall_at: BTreeMap<usize, f64> = ks
        .iter()
        .zip(&hits)
        .map(|(&k, &h)| (k, h as f64 / n as f64))
        .collect();
    Ok(EvalReport {
        protocol: REPORT_PROTOCOL.to_owned(),
        top1_accuracy: recall_at[&1],
        recall_at,
        per_class: per_class
            .into_iter()
            .map(|(c, (h, total))| (c, h as f64 / total as f64))
            .collect(),
        n_queries: n,
        config_fingerprint: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub fusion: FusionConfig,
    /// Fills RMAC/MSRMAC branches that list no scales.
    pub scales: Vec<Scale>,
    pub mode: RepresentativeMode,
    pub ks: Vec<usize>,
    /// Re-rank classes by their best image within this many top classes.
    pub refine_candidates: Option<usize>,
}

impl ExperimentConfig {
    pub fn effective_fusion(&self) -> FusionConfig {
        self.fusion.clone().with_default_scales(&self.scales)
    }

    /// SHA-256 over the canonical JSON of every parameter that affects a
    /// ranking.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::json!({
            "fusion": self.effective_fusion(),
            "scales": self.scales,
            "mode": self.mode,
            "refine_candidates": self.refine_candidates,
        });
        let bytes = serde_json::to_vec(&canonical).expect("config is always serializable");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Combined descriptor of each set, with any balance warnings.
pub fn describe_all(
    sets: &[FeatureMapSet],
    fusion: &FusionConfig,
) -> Result<(Vec<Vec<f32>>, Vec<BalanceWarning>), EvalError> {
    let mut out = Vec::with_capacity(sets.len());
    let mut warnings = Vec::new();
    for set in sets {
        let fused = fusion::describe(set, fusion).map_err(|source| EvalError::Fusion {
            image_id: set.image_id.clone(),
            source,
        })?;
        if let Some(w) = fused.balance_warning {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        out.push(fused.descriptor.into_values());
    }
    Ok((out, warnings))
}

/// Full class ranking for `q`. With `refine_candidates = Some(m)` the top
/// `m` classes are reordered by the distance of their nearest image; the
/// remaining classes follow in representative order.
pub fn rank_classes(index: &DescriptorIndex, q: &[f32], refine_candidates: Option<usize>) -> Result<QueryResult, IndexError> {
    let all = index.query_classes(q, index.class_count())?;
    let Some(m) = refine_candidates else {
        return Ok(all);
    };
    let m = m.clamp(1, index.class_count());
    let candidates: Vec<u32> = all.ranked[..m].iter().map(|h| h.class_id).collect();
    let pool = index.entries().iter().filter(|e| candidates.contains(&e.class_id)).count();
    let images = index.refine(q, &candidates, pool)?;
    let mut seen = BTreeSet::new();
    let mut ranked = Vec::with_capacity(all.ranked.len());
    for hit in images.ranked {
        if seen.insert(hit.class_id) {
            ranked.push(crate::index::Hit {
                image_id: None,
                ..hit
            });
        }
    }
    ranked.extend(all.ranked.into_iter().filter(|h| !seen.contains(&h.class_id)));
    Ok(QueryResult {
        stage: Stage::Class,
        ranked,
    })
}

fn unique_ids(sets: &[FeatureMapSet]) -> Result<(), EvalError> {
    let mut seen = BTreeSet::new();
    for s in sets {
        if !seen.insert(s.image_id.as_str()) {
            return Err(EvalError::DuplicateImageId(s.image_id.clone()));
        }
    }
    Ok(())
}

/// Descriptors, index, queries and report in one deterministic pass.
/// `truth` must label every index and query image.
pub fn run_experiment(
    index_sets: &[FeatureMapSet],
    query_sets: &[FeatureMapSet],
    truth: &GroundTruth,
    cfg: &ExperimentConfig,
) -> Result<EvalReport, EvalError> {
    unique_ids(index_sets)?;
    unique_ids(query_sets)?;
    if query_sets.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let ks = normalize_ks(&cfg.ks)?;
    let fusion = cfg.effective_fusion();

    let (index_desc, _) = describe_all(index_sets, &fusion)?;
    let mut entries = Vec::with_capacity(index_desc.len());
    for (set, d) in index_sets.iter().zip(index_desc) {
        let class = truth
            .get(&set.image_id)
            .ok_or_else(|| EvalError::MissingTruth(set.image_id.clone()))?;
        entries.push(IndexEntry::new(set.image_id.clone(), class, d));
    }
    let index = DescriptorIndex::build(entries, cfg.mode)?;

    let query_truth = truth.restricted_to(query_sets.iter().map(|s| s.image_id.as_str()))?;
    let (query_desc, _) = describe_all(query_sets, &fusion)?;
    let mut results = BTreeMap::new();
    for (set, q) in query_sets.iter().zip(&query_desc) {
        results.insert(set.image_id.clone(), rank_classes(&index, q, cfg.refine_candidates)?);
    }
    let mut report = recall_at_k(&results, &query_truth, &ks)?;
    report.config_fingerprint = Some(cfg.fingerprint());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::Hit;

    fn ranking(classes: &[u32]) -> QueryResult {
        QueryResult {
            stage: Stage::Class,
            ranked: classes
                .iter()
                .enumerate()
                .map(|(i, &c)| Hit {
                    class_id: c,
                    image_id: None,
                    distance: i as f64,
                })
                .collect(),
        }
    }

    fn truth(pairs: &[(&str, u32)]) -> GroundTruth {
        pairs.iter().map(|(a, b)| (a.to_string(), *b)).collect()
    }

    #[test]
    fn perfect_and_second_place() {
        let t = truth(&[("a", 0), ("b", 1)]);
        let mut r = BTreeMap::new();
        r.insert("a".to_string(), ranking(&[0, 1]));
        r.insert("b".to_string(), ranking(&[1, 0]));
        let rep = recall_at_k(&r, &t, &[1, 2]).unwrap();
        assert_eq!(rep.recall_at[&1], 1.0);
        assert_eq!(rep.top1_accuracy, 1.0);

        r.insert("a".to_string(), ranking(&[1, 0]));
        r.insert("b".to_string(), ranking(&[0, 1]));
        let rep = recall_at_k(&r, &t, &[2]).unwrap();
        assert_eq!(rep.recall_at[&1], 0.0);
        assert_eq!(rep.recall_at[&2], 1.0);
        assert_eq!(rep.per_class[&0], 0.0);
        assert_eq!(rep.n_queries, 2);
    }

    #[test]
    fn missing_entries() {
        let t = truth(&[("a", 0)]);
        let r = BTreeMap::new();
        assert_eq!(recall_at_k(&r, &t, &[1]), Err(EvalError::MissingResult("a".into())));
        let mut r2 = BTreeMap::new();
        r2.insert("a".to_string(), ranking(&[0]));
        r2.insert("z".to_string(), ranking(&[0]));
        assert_eq!(recall_at_k(&r2, &t, &[1]), Err(EvalError::MissingTruth("z".into())));
        assert_eq!(recall_at_k(&BTreeMap::new(), &t, &[0]), Err(EvalError::InvalidK));
    }

    #[test]
    fn truth_text_round_trip() {
        let t = GroundTruth::parse("img_b\t3\nimg_a\t0\n").unwrap();
        assert_eq!(t.get("img_a"), Some(0));
        assert_eq!(t.to_text(), "img_a\t0\nimg_b\t3\n");
        assert!(matches!(GroundTruth::parse("x 1\n"), Err(EvalError::TruthParse { line: 1, .. })));
        assert!(matches!(GroundTruth::parse("x\t-1\n"), Err(EvalError::TruthParse { .. })));
        assert_eq!(GroundTruth::parse("x\t1\nx\t2\n"), Err(EvalError::DuplicateLabel("x".into())));
    }

    #[test]
    fn report_json_is_sorted_and_stable() {
        let t = truth(&[("a", 0)]);
        let mut r = BTreeMap::new();
        r.insert("a".to_string(), ranking(&[0]));
        let rep = recall_at_k(&r, &t, &[1]).unwrap();
        let json = rep.to_json();
        assert_eq!(json, rep.to_json());
        let keys: Vec<usize> = ["\"config_fingerprint\"", "\"n_queries\"", "\"per_class\"", "\"protocol\"", "\"recall_at\"", "\"top1_accuracy\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }
}
