//! One end-to-end run: manifest in, artifacts and metrics out.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use tac_core::distill::{self, write_checkpoint, write_loss_csv};
use tac_core::kmeans::{estimate_k, kmeans_fit};
use tac_core::math::stream;
use tac_core::metrics::{cluster_size_entropy, MetricsReport};
use tac_core::neighbors::{build_graph, NeighborGraph};
use tac_core::store::{self, DatasetManifest, NounVocabulary};
use tac_core::text_space::{self, TextCounterparts};
use tac_core::{EmbeddingMatrix, ProbMatrix, RngState, TacError};

use crate::config::{Mode, RunConfig};
use crate::error::{CliError, CliResult, Stage};

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Final hard assignments; `None` for the selection and counterpart modes.
    pub assignments: Option<Vec<usize>>,
    /// Present only when ground-truth labels were available.
    pub metrics: Option<MetricsReport>,
    /// Cluster-size entropy of `assignments` in nats.
    pub cluster_entropy: Option<f64>,
    pub config_hash: String,
    pub out_dir: PathBuf,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    hash: String,
    out: &'a Path,
}

impl Ctx<'_> {
    fn header(&self) -> Vec<String> {
        vec![format!("config_hash: {}", self.hash)]
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Executes `cfg.mode`, writing every artifact under `cfg.out_dir`.
pub fn run(cfg: &RunConfig) -> CliResult<RunOutput> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir).stage("write")?;
    cfg.write(&cfg.out_dir)?;
    let ctx = Ctx {
        cfg,
        hash: cfg.hash(),
        out: &cfg.out_dir,
    };

    let manifest = DatasetManifest::load(&cfg.manifest).stage("manifest")?;
    let images = manifest.load_images().stage("load")?;
    let labels = manifest.load_labels(images.rows()).stage("load")?;
    let k = manifest.target_k;

    let assignments = match cfg.mode {
        Mode::Eval => {
            let path = cfg.predictions.as_ref().ok_or_else(|| {
                CliError::new(
                    "eval",
                    TacError::Parameter("eval mode needs a predictions file".into()),
                )
            })?;
            let pred = store::load_labels(path, images.rows()).stage("eval")?;
            if labels.is_none() {
                return Err(CliError::new(
                    "eval",
                    TacError::Parameter("eval mode needs a manifest with labels".into()),
                ));
            }
            pred
        }
        Mode::Zeroshot => zero_shot(&ctx, &images)?,
        _ => {
            let vocab = manifest.load_nouns().stage("load")?;
            let mut rng = RngState::new(cfg.seed, stream::KMEANS_INIT);
            let counterparts = match text_counterparts(&ctx, &images, &vocab, k, &mut rng)? {
                Some(c) if matches!(cfg.mode, Mode::Notrain | Mode::Train) => c,
                _ => {
                    return Ok(RunOutput {
                        assignments: None,
                        metrics: None,
                        cluster_entropy: None,
                        config_hash: ctx.hash,
                        out_dir: cfg.out_dir.clone(),
                    })
                }
            };
            if cfg.mode == Mode::Notrain {
                cluster_without_training(&ctx, &images, &counterparts, k, &mut rng)?
            } else {
                distill_and_predict(&ctx, &images, &counterparts, k)?
            }
        }
    };

    if cfg.mode != Mode::Eval {
        store::write_assignments(ctx.path("assignments.txt"), &assignments, &ctx.header())
            .stage("write")?;
    }
    let cluster_entropy = cluster_size_entropy(&assignments, k);
    let metrics = match &labels {
        Some(truth) => Some(write_metrics(&ctx, &assignments, truth)?),
        None => {
            eprintln!(
                "warning: manifest {} has no labels; wrote assignments only",
                cfg.manifest.display()
            );
            None
        }
    };
    Ok(RunOutput {
        assignments: Some(assignments),
        metrics,
        cluster_entropy: Some(cluster_entropy),
        config_hash: ctx.hash,
        out_dir: cfg.out_dir.clone(),
    })
}

fn write_metrics(ctx: &Ctx, pred: &[usize], truth: &[usize]) -> CliResult<MetricsReport> {
    let report = MetricsReport::evaluate(pred, truth)
        .stage("metrics")?
        .with_metadata(ctx.cfg.seed, ctx.hash.clone(), timestamp());
    fs::write(ctx.path("metrics.txt"), report.to_kv_text()).stage("write")?;
    fs::write(
        ctx.path("metrics.csv"),
        format!("{}\n{}\n", MetricsReport::csv_header(), report.to_csv_row()),
    )
    .stage("write")?;
    Ok(report)
}

/// Centers, noun selection and counterpart construction; stops after the
/// selection report in select-nouns mode. `rng` is left where center finding
/// stopped so the no-train k-means continues the same stream.
fn text_counterparts(
    ctx: &Ctx,
    images: &EmbeddingMatrix,
    vocab: &NounVocabulary,
    k: usize,
    rng: &mut RngState,
) -> CliResult<Option<TextCounterparts>> {
    let cfg = ctx.cfg;
    let n_centers = match cfg.centers {
        Some(c) => c,
        None => estimate_k(images.rows(), k, &cfg.granularity()).stage("centers")?,
    };
    let fit = kmeans_fit(images, n_centers, rng, &cfg.kmeans()).stage("centers")?;

    let probs =
        text_space::classify_nouns(vocab.embeddings(), &fit.centers, None).stage("select-nouns")?;
    let selection = text_space::select_nouns(&probs, cfg.gamma).stage("select-nouns")?;
    let mut header = ctx.header();
    header.push(format!("centers: {n_centers}"));
    header.push(format!("selected: {}", selection.len()));
    selection
        .write_report(ctx.path("selection.tsv"), vocab.nouns(), &header)
        .stage("write")?;
    if cfg.mode == Mode::SelectNouns {
        return Ok(None);
    }

    let counterparts =
        text_space::build_counterparts_from_vocab(images, vocab, &selection, cfg.retrieval_tau)
            .stage("counterpart")?;
    store::write_embeddings(ctx.path("counterparts.tace"), &counterparts.matrix).stage("write")?;
    if cfg.dump_features {
        store::write_embeddings(ctx.path("counterparts.tsv"), &counterparts.matrix)
            .stage("write")?;
    }
    Ok(Some(counterparts))
}

fn cluster_without_training(
    ctx: &Ctx,
    images: &EmbeddingMatrix,
    counterparts: &TextCounterparts,
    k: usize,
    rng: &mut RngState,
) -> CliResult<Vec<usize>> {
    let cfg = ctx.cfg;
    if cfg.dump_features {
        let features =
            store::concat_features_with(&counterparts.matrix, images, cfg.renormalize_halves)
                .stage("cluster")?;
        store::write_embeddings(ctx.path("features.tsv"), &features).stage("write")?;
    }
    text_space::cluster_no_train(
        images,
        counterparts,
        k,
        rng,
        &cfg.kmeans(),
        cfg.renormalize_halves,
    )
    .stage("cluster")
}

/// Reuses a neighbor graph cached in the run directory when it was built on
/// the same matrix with the same neighbor count.
fn cached_graph(path: &Path, x: &EmbeddingMatrix, n_neighbors: usize) -> CliResult<NeighborGraph> {
    if let Ok(g) = NeighborGraph::load(path) {
        if g.is_built_on(x) && g.n_neighbors() == n_neighbors {
            return Ok(g);
        }
    }
    let g = build_graph(x, n_neighbors).stage("neighbors")?;
    g.save(path).stage("write")?;
    Ok(g)
}

fn distill_and_predict(
    ctx: &Ctx,
    images: &EmbeddingMatrix,
    counterparts: &TextCounterparts,
    k: usize,
) -> CliResult<Vec<usize>> {
    let cfg = ctx.cfg;
    let image_graph = cached_graph(&ctx.path("images.graph"), images, cfg.n_neighbors)?;
    let text_graph = cached_graph(
        &ctx.path("counterparts.graph"),
        &counterparts.matrix,
        cfg.n_neighbors,
    )?;
    let out = distill::train(
        images,
        counterparts,
        &image_graph,
        &text_graph,
        k,
        &cfg.distill(),
    )
    .stage("train")?;

    let steps = out.steps();
    write_checkpoint(ctx.path("head_f.ckpt"), &out.image_head, steps).stage("write")?;
    write_checkpoint(ctx.path("head_g.ckpt"), &out.text_head, steps).stage("write")?;
    write_loss_csv(ctx.path("loss.csv"), &out.history, &ctx.header()).stage("write")?;
    if cfg.dump_features {
        let probs = out.image_head.predict_probs(images).stage("train")?;
        fs::write(ctx.path("features.tsv"), probs_tsv(&probs)).stage("write")?;
    }
    distill::predict(&out.image_head, images).stage("train")
}

fn probs_tsv(p: &ProbMatrix) -> String {
    let mut out = String::new();
    for i in 0..p.rows() {
        let row: Vec<String> = p.row(i).iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", row.join("\t"));
    }
    out
}

fn zero_shot(ctx: &Ctx, images: &EmbeddingMatrix) -> CliResult<Vec<usize>> {
    let classes_path = ctx.cfg.classes.as_ref().ok_or_else(|| {
        CliError::new(
            "zeroshot",
            TacError::Parameter("zeroshot mode needs a class-name file".into()),
        )
    })?;
    let classes = NounVocabulary::load(classes_path, store::paired_embedding_path(classes_path))
        .stage("load")?;
    let probs = text_space::zero_shot_classify(images, classes.embeddings(), &ctx.cfg.zero_shot())
        .stage("zeroshot")?;
    Ok(probs.argmax_rows())
}

/// Scores a prediction file against a label file without a manifest.
pub fn evaluate_files(pred: &Path, labels: &Path) -> CliResult<MetricsReport> {
    let truth = store::load_label_file(labels).stage("eval")?;
    let pred = store::load_labels(pred, truth.len()).stage("eval")?;
    MetricsReport::evaluate(&pred, &truth).stage("eval")
}
