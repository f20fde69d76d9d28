use std::io::Write;
use std::path::{Path, PathBuf};

use cbir_core::{read_feature_map_set, FeatureMapSet};
use tempfile::NamedTempFile;

use crate::error::{fmap_error, CliError};

pub const FMAP_EXTENSION: &str = "fmap";

/// Writes `bytes` to a temporary file beside `path` and renames it into
/// place, so a failed run never leaves a partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_fmap(path: &Path) -> Result<FeatureMapSet, CliError> {
    let bytes = read_bytes(path)?;
    read_feature_map_set(&bytes).map_err(|e| fmap_error(path, e))
}

/// `*.fmap` files directly inside `dir`, sorted by path.
pub fn list_fmaps(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == FMAP_EXTENSION) {
            out.push(path);
        }
    }
    if out.is_empty() {
        return Err(CliError::input(format!("{}: no .{FMAP_EXTENSION} files", dir.display())));
    }
    out.sort();
    Ok(out)
}

/// Rejects an output path that names one of the inputs.
pub fn check_clobber(out: &Path, inputs: &[&Path]) -> Result<(), CliError> {
    let canon = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let out_c = canon(out);
    for input in inputs {
        if canon(input) == out_c {
            return Err(CliError::usage(format!(
                "output {} would overwrite input {}",
                out.display(),
                input.display()
            )));
        }
    }
    Ok(())
}
