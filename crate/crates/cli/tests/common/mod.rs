#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cbir_core::synthetic::{ClusterFixture, ClusterSpec, SyntheticImage};
use cbir_core::write_feature_map_set;

pub fn cbir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbir"))
        .args(args)
        .output()
        .expect("cbir binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

pub fn fixture(seed: u64) -> ClusterFixture {
    ClusterFixture::new(ClusterSpec::ten_classes(seed))
}

/// Writes each image as `<dir>/<image_id>.fmap`.
pub fn write_split(dir: &Path, images: &[SyntheticImage]) {
    fs::create_dir_all(dir).unwrap();
    for img in images {
        let bytes = write_feature_map_set(&img.set).unwrap();
        fs::write(dir.join(format!("{}.fmap", img.set.image_id)), bytes).unwrap();
    }
}

pub fn write_labels(path: &Path, images: &[SyntheticImage]) {
    let text: String = images
        .iter()
        .map(|i| format!("{}\t{}\n", i.set.image_id, i.class_id))
        .collect();
    fs::write(path, text).unwrap();
}

/// Sorted file names in `dir`.
pub fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

pub struct Workspace {
    pub root: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Self {
            root: tempfile::tempdir().unwrap(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.path().join(rel)
    }

    pub fn mkdir(&self, rel: &str) -> PathBuf {
        let d = self.path(rel);
        fs::create_dir_all(&d).unwrap();
        d
    }
}
