use std::io::Write;
use std::path::{Path, PathBuf};

use cbir_core::fusion::describe;
use cbir_core::{
    run_experiment, DescriptorFile, DescriptorIndex, DescriptorRecord, ExperimentConfig, FeatureMapSet, FusionConfig,
    GroundTruth, IndexEntry, QueryResult, RepresentativeMode,
};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{required, CliConfig};
use crate::error::{desc_error, eval_error, fusion_error, index_error, CliError};
use crate::files::{check_clobber, list_fmaps, read_bytes, read_fmap, write_atomic};

pub struct ExtractArgs {
    pub fmaps: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

pub struct IndexArgs {
    pub desc: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub mode: Option<RepresentativeMode>,
    pub out: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

pub struct QueryArgs {
    pub index: Option<PathBuf>,
    pub fmap: Option<PathBuf>,
    pub k: Option<usize>,
    pub refine: Option<Option<usize>>,
    pub config: Option<PathBuf>,
}

pub struct EvalArgs {
    pub index_fmaps: Option<PathBuf>,
    pub query_fmaps: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub ks: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub mode: Option<RepresentativeMode>,
    pub refine: Option<Option<usize>>,
    pub config: Option<PathBuf>,
}

fn describe_one(set: &FeatureMapSet, fusion: &FusionConfig, path: &Path) -> Result<Vec<f32>, CliError> {
    let fused = describe(set, fusion).map_err(|e| fusion_error(&path.display().to_string(), e))?;
    Ok(fused.descriptor.into_values())
}

fn first_fusion_warning(sets: &[FeatureMapSet], fusion: &FusionConfig) {
    if let Some(first) = sets.first() {
        if let Ok(fused) = describe(first, fusion) {
            if let Some(w) = fused.balance_warning {
                eprintln!("warning: {w}");
            }
        }
    }
}

pub fn extract(args: ExtractArgs) -> Result<(), CliError> {
    let cfg = CliConfig::load(args.config.as_deref())?;
    let dir = required(args.fmaps, &cfg.paths.fmaps, "fmaps")?;
    let out = required(args.out, &cfg.paths.out, "out")?;
    let jobs = args
        .jobs
        .or(cfg.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    if jobs == 0 {
        return Err(CliError::config("jobs must be >= 1"));
    }
    let files = list_fmaps(&dir)?;
    let inputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    check_clobber(&out, &inputs)?;

    let first = read_fmap(&files[0])?;
    let fusion = cfg.fusion_for(&first)?;
    first_fusion_warning(std::slice::from_ref(&first), &fusion);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    let total = files.len();
    let results: Vec<Result<DescriptorRecord, CliError>> = pool.install(|| {
        files
            .par_iter()
            .enumerate()
            .map(|(i, path)| {
                let set = read_fmap(path)?;
                let values = describe_one(&set, &fusion, path)?;
                eprintln!("[{}/{total}] {} ({})", i + 1, set.image_id, path.display());
                Ok(DescriptorRecord {
                    image_id: set.image_id,
                    values,
                })
            })
            .collect()
    });
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let dim = records[0].values.len();
    let file = DescriptorFile::new(dim, records).map_err(|e| desc_error(&dir, e))?;
    let bytes = file.write().map_err(|e| desc_error(&out, e))?;
    write_atomic(&out, &bytes)?;
    eprintln!("wrote {} descriptors of dim {dim} to {}", file.records.len(), out.display());
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<GroundTruth, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::labeling(format!("{}: {e}", path.display())))?;
    GroundTruth::parse(&text).map_err(|e| CliError::labeling(format!("{}: {e}", path.display())))
}

pub fn index(args: IndexArgs) -> Result<(), CliError> {
    let cfg = CliConfig::load(args.config.as_deref())?;
    let desc_path = required(args.desc, &cfg.paths.desc, "desc")?;
    let labels_path = required(args.labels, &cfg.paths.labels, "labels")?;
    let out = required(args.out, &cfg.paths.out, "out")?;
    check_clobber(&out, &[&desc_path, &labels_path])?;
    let mode = cfg.mode(args.mode);

    let desc = DescriptorFile::read(&read_bytes(&desc_path)?).map_err(|e| desc_error(&desc_path, e))?;
    let labels = read_labels(&labels_path)?;
    if labels.is_empty() {
        return Err(CliError::labeling(format!("{}: no labels", labels_path.display())));
    }
    if desc.records.is_empty() {
        return Err(CliError::input(format!("{}: no descriptor records", desc_path.display())));
    }
    let mut entries = Vec::with_capacity(desc.records.len());
    for r in desc.records {
        let class = labels.get(&r.image_id).ok_or_else(|| {
            CliError::labeling(format!("image {:?} has no label in {}", r.image_id, labels_path.display()))
        })?;
        entries.push(IndexEntry::new(r.image_id, class, r.values));
    }
    let index = DescriptorIndex::build(entries, mode).map_err(|e| index_error("build", e))?;
    let bytes = index.save().map_err(|e| index_error("save", e))?;
    write_atomic(&out, &bytes)?;
    eprintln!(
        "indexed {} images in {} classes, dim {}, mode {:?}",
        index.entries().len(),
        index.class_count(),
        index.dim(),
        index.mode()
    );
    Ok(())
}

fn load_index(path: &Path) -> Result<DescriptorIndex, CliError> {
    let bytes = read_bytes(path)?;
    DescriptorIndex::load(&bytes).map_err(|e| CliError::input(format!("{}: malformed INDX: {e}", path.display())))
}

fn print_lines(out: &mut impl Write, result: &QueryResult) -> Result<(), CliError> {
    for hit in &result.ranked {
        let line = match &hit.image_id {
            Some(image) => json!({
                "stage": result.stage,
                "id": image,
                "class_id": hit.class_id,
                "distance": hit.distance,
            }),
            None => json!({
                "stage": result.stage,
                "id": hit.class_id,
                "distance": hit.distance,
            }),
        };
        writeln!(out, "{line}").map_err(|e| CliError::input(format!("stdout: {e}")))?;
    }
    Ok(())
}

pub fn query(args: QueryArgs) -> Result<(), CliError> {
    let cfg = CliConfig::load(args.config.as_deref())?;
    let index_path = required(args.index, &cfg.paths.index, "index")?;
    let fmap_path = required(args.fmap, &cfg.paths.fmap, "fmap")?;
    let k = required(args.k, &cfg.k, "k")?;
    let refine = cfg.refine(args.refine);

    let index = load_index(&index_path)?;
    let set = read_fmap(&fmap_path)?;
    let fusion = cfg.fusion_for(&set)?;
    let q = describe_one(&set, &fusion, &fmap_path)?;
    let ctx = format!("query {}", fmap_path.display());

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match refine {
        None => {
            let r = index.query_classes(&q, k).map_err(|e| index_error(&ctx, e))?;
            print_lines(&mut out, &r)?;
        }
        Some(m) => {
            let (classes, images) = index.query_two_stage(&q, m, k).map_err(|e| index_error(&ctx, e))?;
            print_lines(&mut out, &classes)?;
            print_lines(&mut out, &images)?;
        }
    }
    Ok(())
}

fn read_split(dir: &Path) -> Result<Vec<FeatureMapSet>, CliError> {
    let files = list_fmaps(dir)?;
    let sets = files.iter().map(|p| read_fmap(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(sets)
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = CliConfig::load(args.config.as_deref())?;
    let index_dir = required(args.index_fmaps, &cfg.paths.index_fmaps, "index-fmaps")?;
    let query_dir = required(args.query_fmaps, &cfg.paths.query_fmaps, "query-fmaps")?;
    let truth_path = required(args.truth, &cfg.paths.truth, "truth")?;
    let ks = required(args.ks, &cfg.ks, "ks")?;
    let out = required(args.out, &cfg.paths.out, "out")?;
    check_clobber(&out, &[&truth_path])?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::usage("--ks must list integers >= 1"));
    }

    let truth = read_labels(&truth_path)?;
    let index_sets = read_split(&index_dir)?;
    let query_sets = read_split(&query_dir)?;
    let fusion = cfg.fusion_for(&index_sets[0])?;
    first_fusion_warning(&index_sets, &fusion);

    let exp = ExperimentConfig {
        fusion,
        scales: cfg.scales()?,
        mode: cfg.mode(args.mode),
        ks,
        refine_candidates: cfg.refine(args.refine),
    };
    let report = run_experiment(&index_sets, &query_sets, &truth, &exp).map_err(eval_error)?;
    write_atomic(&out, report.to_json().as_bytes())?;
    let recalls: Vec<String> = report.recall_at.iter().map(|(k, r)| format!("R@{k}={r:.4}")).collect();
    eprintln!("{} queries: {}", report.n_queries, recalls.join(" "));
    eprintln!("note: {}", report.protocol);
    Ok(())
}
