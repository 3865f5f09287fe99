//! Writes the seeded synthetic mixture as a ready-to-use dataset directory.

use std::fs;
use std::path::{Path, PathBuf};

use tac_core::store::{self, DatasetManifest};
use tac_core::synthetic::{self, SyntheticConfig};

use crate::error::{CliResult, Stage};

/// Writes `images.tace`, `labels.txt`, `nouns.txt`, `nouns.tace` and
/// `manifest.toml` into `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, cfg: &SyntheticConfig, with_labels: bool) -> CliResult<PathBuf> {
    let fx = synthetic::generate(cfg).stage("synth")?;
    fs::create_dir_all(dir).stage("write")?;
    store::write_embeddings(dir.join("images.tace"), &fx.images).stage("write")?;
    fx.nouns
        .write(dir.join("nouns.txt"), dir.join("nouns.tace"))
        .stage("write")?;
    let label_path = if with_labels {
        store::write_assignments(dir.join("labels.txt"), &fx.labels, &[]).stage("write")?;
        Some(dir.join("labels.txt"))
    } else {
        None
    };
    let manifest = DatasetManifest {
        name: format!("synthetic-seed{}", cfg.seed),
        image_embedding_path: dir.join("images.tace"),
        label_path,
        noun_vocab_path: Some(dir.join("nouns.txt")),
        target_k: cfg.k,
        split: "all".into(),
    };
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest.to_toml(dir)).stage("write")?;
    Ok(path)
}
