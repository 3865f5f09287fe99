//! Seeded two-modality Gaussian mixture used by tests and the `synth` CLI.
//!
//! Every class has several image sub-modes but a single text mode, and both
//! modalities share a common offset direction, so image-only clustering tends
//! to split classes by sub-mode while the text side separates them cleanly.

use crate::error::{param_err, Result};
use crate::math::{stream, RngState};
use crate::matrix::EmbeddingMatrix;
use crate::store::NounVocabulary;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    pub dim: usize,
    pub k: usize,
    pub modes_per_class: usize,
    pub image_radius: f64,
    pub text_radius: f64,
    /// Length of the shared offset added to every row of both modalities.
    pub offset: f64,
    pub image_sigma: f64,
    pub text_sigma: f64,
    pub nouns_per_class: usize,
    pub distractor_nouns: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            dim: 32,
            k: 4,
            modes_per_class: 2,
            image_radius: 2.5,
            text_radius: 2.5,
            offset: 10.0,
            image_sigma: 0.4,
            text_sigma: 0.15,
            nouns_per_class: 3,
            distractor_nouns: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticFixture {
    pub images: EmbeddingMatrix,
    /// Per-image text-side embeddings, usable directly as counterparts.
    pub texts: EmbeddingMatrix,
    pub labels: Vec<usize>,
    pub nouns: NounVocabulary,
}

/// Gram-Schmidt on Gaussian draws.
fn orthonormal(count: usize, dim: usize, rng: &mut RngState) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

fn emit(center: &[f64], sigma: f64, rng: &mut RngState, out: &mut Vec<f32>) {
    let start = out.len();
    out.extend(
        center
            .iter()
            .map(|&c| (c + sigma * rng.standard_normal()) as f32),
    );
    let norm = out[start..]
        .iter()
        .map(|&x| (x as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    for x in &mut out[start..] {
        *x = (*x as f64 / norm) as f32;
    }
}

fn combine(parts: &[(f64, &[f64])], dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &(w, dir) in parts {
        for (x, d) in v.iter_mut().zip(dir) {
            *x += w * d;
        }
    }
    v
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticFixture> {
    let (k, m, dim) = (cfg.k, cfg.modes_per_class, cfg.dim);
    if k < 2 || m == 0 || cfg.n < k {
        return Err(param_err(
            "synthetic fixture needs K >= 2, at least one mode and N >= K",
        ));
    }
    let directions = k * m + k + 1;
    if directions > dim {
        return Err(param_err(format!(
            "dim {dim} too small for {directions} orthogonal directions"
        )));
    }
    let mut rng = RngState::new(cfg.seed, stream::SYNTHETIC);
    let basis = orthonormal(directions, dim, &mut rng);
    let mode_dir = |c: usize, j: usize| basis[c * m + j].as_slice();
    let text_dir = |c: usize| basis[k * m + c].as_slice();
    let shared = basis[k * m + k].as_slice();

    let mut labels = Vec::with_capacity(cfg.n);
    let mut images = Vec::with_capacity(cfg.n * dim);
    let mut texts = Vec::with_capacity(cfg.n * dim);
    for i in 0..cfg.n {
        let c = i % k;
        let j = (i / k) % m;
        labels.push(c);
        let v = combine(
            &[(cfg.offset, shared), (cfg.image_radius, mode_dir(c, j))],
            dim,
        );
        emit(&v, cfg.image_sigma, &mut rng, &mut images);
        let t = combine(&[(cfg.offset, shared), (cfg.text_radius, text_dir(c))], dim);
        emit(&t, cfg.text_sigma, &mut rng, &mut texts);
    }

    // class nouns sit between all sub-modes of their class
    let mut names = Vec::new();
    let mut noun_rows = Vec::new();
    let mode_weight = cfg.image_radius / (m as f64).sqrt();
    for c in 0..k {
        let mut parts = vec![(cfg.offset, shared), (cfg.text_radius, text_dir(c))];
        parts.extend((0..m).map(|j| (mode_weight, mode_dir(c, j))));
        let center = combine(&parts, dim);
        for r in 0..cfg.nouns_per_class {
            names.push(format!("class{c}_noun{r}"));
            emit(&center, cfg.text_sigma, &mut rng, &mut noun_rows);
        }
    }
    for r in 0..cfg.distractor_nouns {
        let dir: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let unit: Vec<f64> = dir.iter().map(|x| x / len).collect();
        let center = combine(&[(cfg.offset, shared), (cfg.image_radius, &unit)], dim);
        names.push(format!("distractor{r}"));
        emit(&center, cfg.text_sigma, &mut rng, &mut noun_rows);
    }

    let n_nouns = names.len();
    Ok(SyntheticFixture {
        images: EmbeddingMatrix::new(cfg.n, dim, images)?.assume_normalized(1e-5)?,
        texts: EmbeddingMatrix::new(cfg.n, dim, texts)?.assume_normalized(1e-5)?,
        labels,
        nouns: NounVocabulary::new(
            names,
            EmbeddingMatrix::new(n_nouns, dim, noun_rows)?.assume_normalized(1e-5)?,
        )?,
    })
}
