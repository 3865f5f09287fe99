//! Discriminative text space construction.
//!
//! Nouns are classified against image semantic centers, the most confident
//! nouns of each center are kept, and every image is given a text
//! counterpart: a softmax-weighted mix of the kept nouns' embeddings.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{dim_err, param_err, Result, TacError};
use crate::kmeans::{kmeans_fit, KmeansParams};
use crate::math::{self, RngState};
use crate::matrix::{EmbeddingMatrix, ProbMatrix};
use crate::store::{concat_features_with, NounVocabulary};

/// Default number of nouns kept per semantic center.
pub const DEFAULT_GAMMA: usize = 5;
/// Default retrieval temperature for counterpart construction.
pub const DEFAULT_RETRIEVAL_TAU: f64 = 0.005;

/// Unit-normalized copies of the rows and their f64 form, used for cosine scores.
fn unit_rows(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if m.is_normalized() {
        Ok(m.clone())
    } else {
        m.clone().normalized()
    }
}

/// Cosine similarity of every row of `a` with every row of `b`, row-major.
fn cosine_table(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(dim_err(format!(
            "embedding dim {} does not match {}",
            a.dim(),
            b.dim()
        )));
    }
    let (a, b) = (unit_rows(a)?, unit_rows(b)?);
    let k = b.rows();
    let mut out = vec![0.0; a.rows() * k];
    out.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        for (j, s) in row.iter_mut().enumerate() {
            *s = math::dot(a.row(i), b.row(j)).clamp(-1.0, 1.0);
        }
    });
    Ok(out)
}

/// Per-noun distribution over semantic centers: softmax of cosine
/// similarities. `temperature = None` applies no temperature (scores are
/// used as-is).
pub fn classify_nouns(
    nouns: &EmbeddingMatrix,
    centers: &EmbeddingMatrix,
    temperature: Option<f64>,
) -> Result<ProbMatrix> {
    let tau = temperature.unwrap_or(1.0);
    let k = centers.rows();
    let mut scores = cosine_table(nouns, centers)?;
    for row in scores.chunks_mut(k) {
        math::softmax_temp_in_place(row, tau)?;
    }
    ProbMatrix::new(nouns.rows(), k, scores)
}

/// Nouns kept for one semantic center, most confident first.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterNouns {
    pub center: usize,
    /// `(noun index, confidence for this center)`.
    pub members: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NounSelection {
    /// Selected noun indices into the vocabulary, ascending.
    pub selected_indices: Vec<usize>,
    pub per_center: Vec<CenterNouns>,
    pub gamma: usize,
}

impl NounSelection {
    pub fn len(&self) -> usize {
        self.selected_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected_indices.is_empty()
    }

    /// Tab-separated `center, noun, confidence` report, one line per kept noun.
    pub fn report(&self, nouns: &[String], header: &[String]) -> String {
        let mut out = String::new();
        for h in header {
            let _ = writeln!(out, "# {h}");
        }
        out.push_str("center\tnoun\tconfidence\n");
        for c in &self.per_center {
            for &(idx, conf) in &c.members {
                let name = nouns.get(idx).map(String::as_str).unwrap_or("?");
                let _ = writeln!(out, "{}\t{}\t{:.6}", c.center, name, conf);
            }
        }
        out
    }

    pub fn write_report(
        &self,
        path: impl AsRef<Path>,
        nouns: &[String],
        header: &[String],
    ) -> Result<()> {
        std::fs::write(path, self.report(nouns, header))?;
        Ok(())
    }
}

/// Keeps, for each center, the nouns whose argmax is that center and whose
/// confidence is at least the `gamma`-th largest in that pool. Nouns tied at
/// the cut-off are all kept, so a list can exceed `gamma` only through ties.
pub fn select_nouns(probs: &ProbMatrix, gamma: usize) -> Result<NounSelection> {
    if gamma == 0 {
        return Err(param_err("gamma must be >= 1"));
    }
    if probs.rows() == 0 || probs.cols() == 0 {
        return Err(TacError::Selection(
            "no nouns or no centers to select from".into(),
        ));
    }
    let k = probs.cols();
    let mut pools: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    for i in 0..probs.rows() {
        let row = probs.row(i);
        let c = math::argmax(row);
        pools[c].push((i, row[c]));
    }

    let mut per_center = Vec::new();
    let mut selected = Vec::new();
    for (center, mut pool) in pools.into_iter().enumerate() {
        if pool.is_empty() {
            continue;
        }
        pool.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        if pool.len() > gamma {
            let threshold = pool[gamma - 1].1;
            pool.retain(|&(_, p)| p >= threshold);
        }
        selected.extend(pool.iter().map(|&(i, _)| i));
        per_center.push(CenterNouns {
            center,
            members: pool,
        });
    }
    if selected.is_empty() {
        return Err(TacError::Selection("every center pool is empty".into()));
    }
    selected.sort_unstable();
    Ok(NounSelection {
        selected_indices: selected,
        per_center,
        gamma,
    })
}

/// Per-image text representation in the selected noun space.
#[derive(Clone, Debug)]
pub struct TextCounterparts {
    pub matrix: EmbeddingMatrix,
    pub retrieval_tau: f64,
}

/// `t~_i = sum_j softmax_j(cos(v_i, t_j) / tau) * t_j` over the selected
/// nouns, then unit-normalized. Each row depends only on its own image.
pub fn build_counterparts(
    images: &EmbeddingMatrix,
    noun_embeddings: &EmbeddingMatrix,
    sel: &NounSelection,
    tau: f64,
) -> Result<TextCounterparts> {
    if sel.is_empty() {
        return Err(TacError::Selection("no nouns selected".into()));
    }
    if !(tau > 0.0) {
        return Err(param_err(format!(
            "retrieval temperature must be > 0, got {tau}"
        )));
    }
    let selected = unit_rows(&noun_embeddings.select_rows(&sel.selected_indices)?)?;
    let sims = cosine_table(images, &selected)?;
    let (m, dim) = (selected.rows(), selected.dim());

    let mut data = vec![0f32; images.rows() * dim];
    data.par_chunks_mut(dim)
        .zip(sims.par_chunks(m))
        .try_for_each(|(out, scores)| -> Result<()> {
            let weights = math::softmax_temp(scores, tau)?;
            let mut acc = vec![0f64; dim];
            for (j, w) in weights.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                for (a, &t) in acc.iter_mut().zip(selected.row(j)) {
                    *a += w * t as f64;
                }
            }
            math::normalize_f64_into(&acc, out)
        })?;
    let mut matrix = EmbeddingMatrix::new(images.rows(), dim, data)?;
    matrix.set_normalized(true);
    Ok(TextCounterparts {
        matrix,
        retrieval_tau: tau,
    })
}

/// Vocabulary-level convenience wrapper around [`build_counterparts`].
pub fn build_counterparts_from_vocab(
    images: &EmbeddingMatrix,
    vocab: &NounVocabulary,
    sel: &NounSelection,
    tau: f64,
) -> Result<TextCounterparts> {
    build_counterparts(images, vocab.embeddings(), sel, tau)
}

/// Training-free clustering: k-means on `[t~_i | v_i]` with `k` clusters.
pub fn cluster_no_train(
    images: &EmbeddingMatrix,
    counterparts: &TextCounterparts,
    k: usize,
    rng: &mut RngState,
    params: &KmeansParams,
    renormalize_halves: bool,
) -> Result<Vec<usize>> {
    let features = concat_features_with(&counterparts.matrix, images, renormalize_halves)?;
    Ok(kmeans_fit(&features, k, rng, params)?.assignment)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotConfig {
    /// Softmax temperature applied to cosine scores.
    pub clip_tau: f64,
    /// Prompt used when producing the class-name embeddings; must contain `[CLASS]`.
    pub prompt_template: String,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        Self {
            clip_tau: 0.01,
            prompt_template: "a photo of [CLASS]".into(),
        }
    }
}

impl ZeroShotConfig {
    pub fn prompt_for(&self, class_name: &str) -> String {
        self.prompt_template.replace("[CLASS]", class_name)
    }
}

/// Per-image class distribution: softmax over cosine(v_i, w_j) / tau.
pub fn zero_shot_classify(
    images: &EmbeddingMatrix,
    class_texts: &EmbeddingMatrix,
    cfg: &ZeroShotConfig,
) -> Result<ProbMatrix> {
    if !(cfg.clip_tau > 0.0) {
        return Err(param_err("zero-shot temperature must be > 0"));
    }
    let k = class_texts.rows();
    let mut scores = cosine_table(images, class_texts)?;
    for row in scores.chunks_mut(k) {
        math::softmax_temp_in_place(row, cfg.clip_tau)?;
    }
    ProbMatrix::new(images.rows(), k, scores)
}
