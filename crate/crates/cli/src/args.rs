//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tac_core::synthetic::SyntheticConfig;

use crate::config::{Mode, RunConfig};
use crate::error::{CliResult, EXIT_CODES_HELP};
use crate::{pipeline, sweep, synth};

const AFTER_HELP: &str = concat!(
    "Metrics files list, in order: nmi, acc, ari, n, k_pred, k_true, seed, config_hash, timestamp.\n",
    "sweep.csv prefixes them with run_id, axis, value, cluster_entropy.\n\n",
);

fn after_help() -> String {
    format!("{AFTER_HELP}{EXIT_CODES_HELP}")
}

#[derive(Debug, Parser)]
#[command(
    name = "tac",
    version,
    about = "Text-aided image clustering on precomputed embeddings"
)]
#[command(after_help = after_help())]
pub struct Cli {
    /// Directory receiving run artifacts.
    #[arg(long, global = true, env = "TAC_OUT_DIR", default_value = "tac-out")]
    pub out_dir: PathBuf,
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, env = "TAC_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find semantic centers and write the selected nouns per center.
    SelectNouns(RunArgs),
    /// Build per-image text counterparts from the selected nouns.
    Counterpart(RunArgs),
    /// Cluster images, either by k-means on [counterpart | image] or by distillation.
    Cluster {
        #[arg(long, value_enum, default_value_t = ClusterMode::Notrain)]
        mode: ClusterMode,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score an assignment file against the manifest labels.
    Eval {
        /// Assignment file, one integer per line.
        #[arg(long)]
        pred: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Classify images against embedded class names.
    Zeroshot {
        /// Class-name text file; embeddings are read from the sibling .tace or .tsv.
        #[arg(long)]
        classes: PathBuf,
        #[arg(long)]
        clip_tau: Option<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Repeat a clustering run over several values of one hyperparameter.
    Sweep {
        #[arg(long, value_enum, default_value_t = ClusterMode::Notrain)]
        mode: ClusterMode,
        /// One of compact-size, gamma, retrieval-tau, neighbors, distill-tau, alpha.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write the seeded synthetic mixture as a dataset with a manifest.
    Synth {
        /// Destination directory.
        dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Omit labels.txt and the manifest's labels entry.
        #[arg(long)]
        no_labels: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClusterMode {
    Notrain,
    Train,
}

impl From<ClusterMode> for Mode {
    fn from(m: ClusterMode) -> Self {
        match m {
            ClusterMode::Notrain => Mode::Notrain,
            ClusterMode::Train => Mode::Train,
        }
    }
}

/// Tunables shared by every run-based subcommand; unset flags keep defaults.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Dataset manifest (TOML).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the preset for datasets with many target clusters.
    #[arg(long)]
    pub large_k: bool,
    /// Expected size of a compact cluster when estimating the center count.
    #[arg(long)]
    pub compact_size: Option<usize>,
    #[arg(long)]
    pub centers_per_class: Option<usize>,
    /// Fixed semantic center count.
    #[arg(long, conflicts_with = "k_auto")]
    pub k: Option<usize>,
    /// Estimate the center count from the data (the default).
    #[arg(long)]
    pub k_auto: bool,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Nouns kept per center.
    #[arg(long)]
    pub gamma: Option<usize>,
    /// Softmax temperature for noun retrieval.
    #[arg(long)]
    pub retrieval_tau: Option<f64>,
    /// Concatenate counterparts and images without re-normalizing each half.
    #[arg(long)]
    pub no_renormalize: bool,
    /// Nearest neighbors per sample for distillation.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Temperature of the distillation contrast.
    #[arg(long)]
    pub distill_tau: Option<f64>,
    /// Weight of the balance term.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Tanh hidden activation instead of ReLU.
    #[arg(long)]
    pub tanh: bool,
    #[arg(long)]
    pub no_dis: bool,
    #[arg(long)]
    pub no_con: bool,
    #[arg(long)]
    pub no_bal: bool,
    /// Also write counterparts and clustering features as TSV.
    #[arg(long)]
    pub dump_features: bool,
}

impl RunArgs {
    pub fn resolve(&self, mode: Mode, out_dir: PathBuf) -> RunConfig {
        let manifest = self
            .manifest
            .canonicalize()
            .unwrap_or_else(|_| self.manifest.clone());
        let mut c = RunConfig::new(manifest, mode, self.large_k);
        c.seed = self.seed;
        c.out_dir = out_dir;
        set(&mut c.compact_cluster_size, self.compact_size);
        set(&mut c.centers_per_class, self.centers_per_class);
        c.centers = self.k;
        set(&mut c.kmeans_max_iter, self.max_iter);
        set(&mut c.kmeans_tol, self.tol);
        set(&mut c.kmeans_restarts, self.restarts);
        set(&mut c.gamma, self.gamma);
        set(&mut c.retrieval_tau, self.retrieval_tau);
        c.renormalize_halves = !self.no_renormalize;
        set(&mut c.n_neighbors, self.neighbors);
        set(&mut c.tau_hat, self.distill_tau);
        set(&mut c.alpha, self.alpha);
        set(&mut c.epochs, self.epochs);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.lr, self.lr);
        c.hidden = self.hidden.or(c.hidden);
        c.relu = !self.tanh;
        c.use_dis = !self.no_dis;
        c.use_con = !self.no_con;
        c.use_bal = !self.no_bal;
        c.dump_features = self.dump_features;
        c
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn report(out: &pipeline::RunOutput) {
    println!("out_dir: {}", out.out_dir.display());
    println!("config_hash: {}", out.config_hash);
    if let Some(h) = out.cluster_entropy {
        println!("cluster_entropy: {h:.6}");
    }
    if let Some(m) = &out.metrics {
        print!("{}", m.to_kv_text());
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let out_dir = cli.out_dir;
    let single = |run: &RunArgs, mode: Mode| pipeline::run(&run.resolve(mode, out_dir.clone()));
    match cli.command {
        Command::SelectNouns(run) => report(&single(&run, Mode::SelectNouns)?),
        Command::Counterpart(run) => report(&single(&run, Mode::Counterpart)?),
        Command::Cluster { mode, run } => report(&single(&run, mode.into())?),
        Command::Eval { pred, run } => {
            let mut cfg = run.resolve(Mode::Eval, out_dir);
            cfg.predictions = Some(pred.canonicalize().unwrap_or(pred));
            report(&pipeline::run(&cfg)?);
        }
        Command::Zeroshot {
            classes,
            clip_tau,
            run,
        } => {
            let mut cfg = run.resolve(Mode::Zeroshot, out_dir);
            cfg.classes = Some(classes.canonicalize().unwrap_or(classes));
            set(&mut cfg.clip_tau, clip_tau);
            report(&pipeline::run(&cfg)?);
        }
        Command::Sweep {
            mode,
            axis,
            values,
            run,
        } => {
            let out = sweep::sweep(&run.resolve(mode.into(), out_dir), &axis, &values)?;
            println!("axis: {}", out.axis.name());
            println!("runs: {}", out.rows.len());
            println!("csv: {}", out.csv_path.display());
        }
        Command::Synth {
            dir,
            n,
            seed,
            no_labels,
        } => {
            let cfg = SyntheticConfig {
                n,
                seed,
                ..Default::default()
            };
            let path = synth::write_dataset(&dir, &cfg, !no_labels)?;
            println!("manifest: {}", path.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn help_lists_metric_fields_in_file_order() {
        use tac_core::metrics::MetricsReport;
        assert!(AFTER_HELP.contains(&MetricsReport::FIELDS.join(", ")));
        assert!(after_help().contains("10  I/O failure"));
    }

    #[test]
    fn flags_override_defaults() {
        let cli = Cli::parse_from([
            "tac",
            "cluster",
            "--mode",
            "train",
            "--manifest",
            "m.toml",
            "--gamma",
            "3",
            "--alpha",
            "0",
            "--no-bal",
            "--out-dir",
            "x",
        ]);
        let Command::Cluster { mode, run } = cli.command else {
            panic!()
        };
        let cfg = run.resolve(mode.into(), cli.out_dir);
        assert_eq!(
            (cfg.mode, cfg.gamma, cfg.alpha, cfg.use_bal),
            (Mode::Train, 3, 0.0, false)
        );
        assert_eq!(cfg.tau_hat, 0.5);
        assert_eq!(cfg.out_dir, PathBuf::from("x"));
    }

    #[test]
    fn sweep_values_parse_as_list() {
        let cli = Cli::parse_from([
            "tac",
            "sweep",
            "--manifest",
            "m",
            "--axis",
            "gamma",
            "--values",
            "1,3,5,10",
        ]);
        let Command::Sweep { values, .. } = cli.command else {
            panic!()
        };
        assert_eq!(values, vec![1.0, 3.0, 5.0, 10.0]);
    }

    #[test]
    fn explicit_and_auto_center_count_conflict() {
        assert!(Cli::try_parse_from([
            "tac",
            "counterpart",
            "--manifest",
            "m",
            "--k",
            "5",
            "--k-auto"
        ])
        .is_err());
    }
}
