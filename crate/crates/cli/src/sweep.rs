//! Sequential one-axis hyperparameter sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use tac_core::metrics::MetricsReport;
use tac_core::TacError;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Stage};
use crate::pipeline;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    CompactSize,
    Gamma,
    RetrievalTau,
    Neighbors,
    DistillTau,
    Alpha,
}

impl Axis {
    pub const NAMES: [&'static str; 6] = [
        "compact-size",
        "gamma",
        "retrieval-tau",
        "neighbors",
        "distill-tau",
        "alpha",
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::CompactSize => "compact-size",
            Axis::Gamma => "gamma",
            Axis::RetrievalTau => "retrieval-tau",
            Axis::Neighbors => "neighbors",
            Axis::DistillTau => "distill-tau",
            Axis::Alpha => "alpha",
        }
    }

    /// Returns a copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> CliResult<RunConfig> {
        let mut cfg = base.clone();
        let count = |v: f64| -> CliResult<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(param(format!(
                    "{} takes non-negative integers, got {v}",
                    self.name()
                )))
            }
        };
        match self {
            Axis::CompactSize => cfg.compact_cluster_size = count(value)?,
            Axis::Gamma => cfg.gamma = count(value)?,
            Axis::RetrievalTau => cfg.retrieval_tau = value,
            Axis::Neighbors => cfg.n_neighbors = count(value)?,
            Axis::DistillTau => cfg.tau_hat = value,
            Axis::Alpha => cfg.alpha = value,
        }
        Ok(cfg)
    }
}

fn param(msg: String) -> CliError {
    CliError::new("sweep", TacError::Parameter(msg))
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Ok(match s {
            "compact-size" => Axis::CompactSize,
            "gamma" => Axis::Gamma,
            "retrieval-tau" => Axis::RetrievalTau,
            "neighbors" => Axis::Neighbors,
            "distill-tau" => Axis::DistillTau,
            "alpha" => Axis::Alpha,
            other => {
                return Err(param(format!(
                    "unknown sweep axis {other:?}; expected one of {}",
                    Axis::NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub run_id: usize,
    pub value: f64,
    pub cluster_entropy: f64,
    pub metrics: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub axis: Axis,
    pub rows: Vec<SweepRow>,
    pub csv_path: PathBuf,
}

pub fn csv_header() -> String {
    format!(
        "run_id,axis,value,cluster_entropy,{}",
        MetricsReport::csv_header()
    )
}

/// One full run per value under `base.out_dir/run_NNN`, all with the base
/// seed; results go to `base.out_dir/sweep.csv`.
pub fn sweep(base: &RunConfig, axis: &str, values: &[f64]) -> CliResult<SweepOutput> {
    let axis: Axis = axis.parse()?;
    if values.is_empty() {
        return Err(param("sweep needs at least one value".into()));
    }
    // validate every point before spending time on the first run
    let configs = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut cfg = axis.apply(base, v)?;
            cfg.out_dir = base.out_dir.join(format!("run_{i:03}"));
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<CliResult<Vec<_>>>()?;

    fs::create_dir_all(&base.out_dir).stage("write")?;
    let csv_path = base.out_dir.join("sweep.csv");
    let mut csv = csv_header();
    csv.push('\n');
    let mut rows = Vec::with_capacity(values.len());
    for (run_id, (cfg, &value)) in configs.iter().zip(values).enumerate() {
        let out = pipeline::run(cfg)?;
        let entropy = out.cluster_entropy.unwrap_or(f64::NAN);
        let metrics_cols = match &out.metrics {
            Some(m) => m.to_csv_row(),
            None => vec![""; MetricsReport::FIELDS.len()].join(","),
        };
        let _ = writeln!(
            csv,
            "{run_id},{},{value},{entropy:.6},{metrics_cols}",
            axis.name()
        );
        // rewritten after every run so a long sweep leaves partial results
        fs::write(&csv_path, &csv).stage("write")?;
        rows.push(SweepRow {
            run_id,
            value,
            cluster_entropy: entropy,
            metrics: out.metrics,
        });
    }
    Ok(SweepOutput {
        axis,
        rows,
        csv_path,
    })
}
