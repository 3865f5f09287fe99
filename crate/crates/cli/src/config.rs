//! Fully resolved run configuration and its hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tac_core::distill::DistillConfig;
use tac_core::kmeans::{GranularityConfig, KmeansParams};
use tac_core::text_space::ZeroShotConfig;
use tac_core::TacError;

use crate::error::{CliError, CliResult, Stage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Notrain,
    Train,
    Eval,
    Zeroshot,
    SelectNouns,
    Counterpart,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Notrain => "notrain",
            Mode::Train => "train",
            Mode::Eval => "eval",
            Mode::Zeroshot => "zeroshot",
            Mode::SelectNouns => "select-nouns",
            Mode::Counterpart => "counterpart",
        }
    }
}

/// Every tunable of a run with defaults materialized. The output directory is
/// not part of the hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub mode: Mode,
    pub seed: u64,
    pub compact_cluster_size: usize,
    pub centers_per_class: usize,
    /// Explicit semantic center count; estimated from the data when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centers: Option<usize>,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub gamma: usize,
    pub retrieval_tau: f64,
    pub renormalize_halves: bool,
    pub n_neighbors: usize,
    pub tau_hat: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    pub relu: bool,
    pub use_dis: bool,
    pub use_con: bool,
    pub use_bal: bool,
    pub clip_tau: f64,
    /// Class-name text file for zero-shot mode, with paired embeddings.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<PathBuf>,
    /// Assignment file scored by eval mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    pub dump_features: bool,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Defaults for `mode` on `manifest`; `large_k` switches the distillation
    /// settings to the many-cluster preset.
    pub fn new(manifest: PathBuf, mode: Mode, large_k: bool) -> Self {
        let d = if large_k {
            DistillConfig::large_k()
        } else {
            DistillConfig::default()
        };
        let g = GranularityConfig::default();
        let km = KmeansParams::default();
        Self {
            manifest,
            mode,
            seed: 0,
            compact_cluster_size: g.compact_cluster_size,
            centers_per_class: g.centers_per_class,
            centers: None,
            kmeans_restarts: km.n_init,
            kmeans_max_iter: km.max_iter,
            kmeans_tol: km.tol,
            gamma: tac_core::text_space::DEFAULT_GAMMA,
            retrieval_tau: tac_core::text_space::DEFAULT_RETRIEVAL_TAU,
            renormalize_halves: true,
            n_neighbors: d.n_neighbors,
            tau_hat: d.tau_hat,
            alpha: d.alpha,
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            adam_beta1: d.adam_beta1,
            adam_beta2: d.adam_beta2,
            adam_eps: d.adam_eps,
            hidden: None,
            relu: d.relu,
            use_dis: d.use_dis,
            use_con: d.use_con,
            use_bal: d.use_bal,
            clip_tau: ZeroShotConfig::default().clip_tau,
            classes: None,
            predictions: None,
            dump_features: false,
            out_dir: PathBuf::from("tac-out"),
        }
    }

    pub fn granularity(&self) -> GranularityConfig {
        GranularityConfig {
            compact_cluster_size: self.compact_cluster_size,
            centers_per_class: self.centers_per_class,
        }
    }

    pub fn kmeans(&self) -> KmeansParams {
        KmeansParams {
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
            n_init: self.kmeans_restarts,
        }
    }

    pub fn zero_shot(&self) -> ZeroShotConfig {
        ZeroShotConfig {
            clip_tau: self.clip_tau,
            ..ZeroShotConfig::default()
        }
    }

    pub fn distill(&self) -> DistillConfig {
        DistillConfig {
            tau_hat: self.tau_hat,
            alpha: self.alpha,
            n_neighbors: self.n_neighbors,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            seed: self.seed,
            hidden: self.hidden,
            relu: self.relu,
            use_dis: self.use_dis,
            use_con: self.use_con,
            use_bal: self.use_bal,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::new("config", TacError::Parameter(msg)));
        if self.compact_cluster_size == 0 {
            return bad("compact cluster size must be >= 1".into());
        }
        if self.centers_per_class == 0 {
            return bad("centers per class must be >= 1".into());
        }
        if self.kmeans_restarts == 0 || self.kmeans_max_iter == 0 {
            return bad("k-means needs at least one restart and one iteration".into());
        }
        if self.gamma == 0 {
            return bad("gamma must be >= 1".into());
        }
        if !(self.retrieval_tau > 0.0 && self.retrieval_tau.is_finite()) {
            return bad(format!(
                "retrieval tau must be > 0, got {}",
                self.retrieval_tau
            ));
        }
        if self.centers.is_some_and(|c| c < 2) {
            return bad("explicit center count must be >= 2".into());
        }
        if !(self.clip_tau > 0.0 && self.clip_tau.is_finite()) {
            return bad(format!("clip tau must be > 0, got {}", self.clip_tau));
        }
        if self.mode == Mode::Train && self.lr <= 0.0 {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        self.distill().validate().stage("config")
    }

    /// Canonical TOML of everything except the output directory.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn hash(&self) -> String {
        hash_text(&self.canonical_toml())
    }

    /// `config.toml` content: the hash as a comment, then the canonical form.
    pub fn render(&self) -> String {
        format!("# config_hash: {}\n{}", self.hash(), self.canonical_toml())
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text)
            .map_err(|e| CliError::new("config", TacError::Format(format!("config: {e}"))))
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        fs::write(dir.join("config.toml"), self.render()).stage("write")
    }
}

pub fn hash_text(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RunConfig {
        RunConfig::new(PathBuf::from("/data/m.toml"), Mode::Notrain, false)
    }

    #[test]
    fn defaults_match_the_reference_settings() {
        let c = cfg();
        assert_eq!(
            (c.gamma, c.retrieval_tau, c.tau_hat, c.alpha),
            (5, 0.005, 0.5, 5.0)
        );
        assert_eq!(
            (c.n_neighbors, c.epochs, c.batch_size, c.lr),
            (50, 20, 512, 1e-3)
        );
        assert_eq!(c.compact_cluster_size, 300);
        let big = RunConfig::new(PathBuf::from("m"), Mode::Train, true);
        assert_eq!((big.tau_hat, big.batch_size, big.epochs), (5.0, 8192, 100));
        c.validate().unwrap();
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = cfg();
        let mut b = cfg();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.gamma = 3;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn render_roundtrip() {
        let mut a = cfg();
        a.hidden = Some(64);
        let back = RunConfig::parse(&a.render()).unwrap();
        assert_eq!(back.hash(), a.hash());
        assert_eq!(back.hidden, Some(64));
    }

    #[test]
    fn validation() {
        let mut c = cfg();
        c.gamma = 0;
        assert_eq!(c.validate().unwrap_err().exit_code(), 3);
        let mut c = cfg();
        c.tau_hat = -1.0;
        assert!(c.validate().is_err());
    }
}
