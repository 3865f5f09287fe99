//! Ingestion formats: TACE binary embeddings, TSV embeddings, label and
//! assignment files, noun vocabularies and dataset manifests.
//!
//! TACE layout (little-endian, 32-byte header):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `b"TACE"`               |
//! | 4      | 4    | version, u32 (= 1)            |
//! | 8      | 8    | rows N, u64                   |
//! | 16     | 4    | dim D, u32                    |
//! | 20     | 1    | dtype code, u8 (0 = float32)  |
//! | 21     | 11   | reserved, zero                |
//! | 32     | 4·N·D| row-major f32 payload         |

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{dim_err, param_err, Result, TacError};
use crate::matrix::EmbeddingMatrix;

pub const TACE_MAGIC: [u8; 4] = *b"TACE";
pub const TACE_VERSION: u32 = 1;
pub const TACE_HEADER_LEN: usize = 32;
pub const DTYPE_F32: u8 = 0;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| TacError::Format(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| TacError::Format(format!("{}: {e}", path.display())))
}

fn is_tsv(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("tsv") | Some("txt")
    )
}

/// Serializes a matrix into TACE bytes.
pub fn encode_tace(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(TACE_HEADER_LEN + m.data().len() * 4);
    out.extend_from_slice(&TACE_MAGIC);
    out.extend_from_slice(&TACE_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    out.push(DTYPE_F32);
    out.resize(TACE_HEADER_LEN, 0);
    for &x in m.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_tace(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < TACE_HEADER_LEN {
        return Err(TacError::Format(format!(
            "file is {} bytes, shorter than the {TACE_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[0..4] != TACE_MAGIC {
        return Err(TacError::Format("bad magic, expected TACE".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TACE_VERSION {
        return Err(TacError::Format(format!(
            "unsupported TACE version {version}"
        )));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    if bytes[20] != DTYPE_F32 {
        return Err(TacError::Format(format!(
            "unsupported dtype code {}",
            bytes[20]
        )));
    }
    let payload = &bytes[TACE_HEADER_LEN..];
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| TacError::Format(format!("header shape {rows}x{dim} overflows")))?;
    if payload.len() != expected {
        return Err(TacError::Format(format!(
            "header declares {rows}x{dim} ({expected} payload bytes) but file has {}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingMatrix::new(rows, dim, data).map_err(|e| match e {
        TacError::Dimension(msg) => TacError::Format(msg),
        other => other,
    })
}

/// One row per line, values separated by tabs.
pub fn encode_tsv(m: &EmbeddingMatrix) -> String {
    let mut out = String::new();
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&line.join("\t"));
        out.push('\n');
    }
    out
}

pub fn decode_tsv(text: &str) -> Result<EmbeddingMatrix> {
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split('\t')
            .map(|tok| {
                tok.trim().parse::<f32>().map_err(|_| {
                    TacError::Format(format!(
                        "line {}: cannot parse {tok:?} as a number",
                        lineno + 1
                    ))
                })
            })
            .collect::<Result<Vec<f32>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(TacError::Format(format!(
                    "line {}: {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(TacError::Format("no rows in TSV embedding file".into()));
    }
    EmbeddingMatrix::from_rows(&rows)
}

/// Writes TACE, or TSV when the extension is `.tsv`/`.txt`.
pub fn write_embeddings(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    if is_tsv(path) {
        fs::write(path, encode_tsv(m))?;
    } else {
        fs::write(path, encode_tace(m))?;
    }
    Ok(())
}

/// Loads an embedding matrix, optionally unit-normalizing every row.
pub fn load_embeddings(path: impl AsRef<Path>, normalize: bool) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let m = if is_tsv(path) {
        decode_tsv(&read_text(path)?)?
    } else {
        decode_tace(&read_file(path)?)?
    };
    if normalize {
        m.normalized()
    } else {
        Ok(m)
    }
}

/// Parses newline-delimited non-negative integers. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_labels(text: &str, expected_n: Option<usize>) -> Result<Vec<usize>> {
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let label = line.parse::<usize>().map_err(|_| {
            TacError::Format(format!(
                "line {}: {line:?} is not a non-negative integer",
                lineno + 1
            ))
        })?;
        labels.push(label);
    }
    if let Some(n) = expected_n {
        if labels.len() != n {
            return Err(TacError::Data(format!(
                "expected {n} labels, found {}",
                labels.len()
            )));
        }
    }
    Ok(labels)
}

pub fn load_labels(path: impl AsRef<Path>, expected_n: usize) -> Result<Vec<usize>> {
    parse_labels(&read_text(path.as_ref())?, Some(expected_n))
}

/// Loads a label or assignment file without a length check.
pub fn load_label_file(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    parse_labels(&read_text(path.as_ref())?, None)
}

/// Renders assignments as one integer per line, with optional `#` header lines.
pub fn format_assignments(assignments: &[usize], header: &[String]) -> String {
    let mut out = String::with_capacity(assignments.len() * 3);
    for h in header {
        out.push_str("# ");
        out.push_str(h);
        out.push('\n');
    }
    for a in assignments {
        out.push_str(&a.to_string());
        out.push('\n');
    }
    out
}

pub fn write_assignments(
    path: impl AsRef<Path>,
    assignments: &[usize],
    header: &[String],
) -> Result<()> {
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(format_assignments(assignments, header).as_bytes())?;
    Ok(())
}

/// Trims, lowercases and collapses internal whitespace; underscores count
/// as spaces.
pub fn canonicalize_noun(noun: &str) -> String {
    noun.replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Candidate nouns paired row-for-row with their prompted text embeddings.
#[derive(Clone, Debug)]
pub struct NounVocabulary {
    nouns: Vec<String>,
    embeddings: EmbeddingMatrix,
}

impl NounVocabulary {
    pub fn new(nouns: Vec<String>, embeddings: EmbeddingMatrix) -> Result<Self> {
        if nouns.len() != embeddings.rows() {
            return Err(TacError::Data(format!(
                "{} nouns but {} embedding rows",
                nouns.len(),
                embeddings.rows()
            )));
        }
        let mut seen = HashSet::new();
        for n in &nouns {
            if !seen.insert(canonicalize_noun(n)) {
                return Err(TacError::Data(format!("duplicate noun {n:?}")));
            }
        }
        Ok(Self { nouns, embeddings })
    }

    /// Reads a one-noun-per-line text file and its embedding file.
    pub fn load(text_path: impl AsRef<Path>, embedding_path: impl AsRef<Path>) -> Result<Self> {
        let text = read_text(text_path.as_ref())?;
        let nouns: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        let embeddings = load_embeddings(embedding_path, true)?;
        Self::new(nouns, embeddings)
    }

    pub fn write(
        &self,
        text_path: impl AsRef<Path>,
        embedding_path: impl AsRef<Path>,
    ) -> Result<()> {
        let mut text = self.nouns.join("\n");
        text.push('\n');
        fs::write(text_path, text)?;
        write_embeddings(embedding_path, &self.embeddings)
    }

    pub fn len(&self) -> usize {
        self.nouns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nouns.is_empty()
    }

    pub fn nouns(&self) -> &[String] {
        &self.nouns
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }
}

/// Returns `[a_i | b_i]` for every row. With `renormalize_halves`, each
/// half is scaled to unit norm first, so every output row has norm sqrt(2).
pub fn concat_features_with(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    renormalize_halves: bool,
) -> Result<EmbeddingMatrix> {
    if a.rows() != b.rows() {
        return Err(dim_err(format!(
            "cannot concatenate {} rows with {} rows",
            a.rows(),
            b.rows()
        )));
    }
    let dim = a.dim() + b.dim();
    let mut data = Vec::with_capacity(a.rows() * dim);
    for i in 0..a.rows() {
        let start = data.len();
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
        if renormalize_halves {
            let (left, right) = data[start..].split_at_mut(a.dim());
            crate::math::l2_normalize_in_place(left)?;
            crate::math::l2_normalize_in_place(right)?;
        }
    }
    EmbeddingMatrix::new(a.rows(), dim, data)
}

pub fn concat_features(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    concat_features_with(a, b, true)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    name: String,
    images: PathBuf,
    labels: Option<PathBuf>,
    nouns: Option<PathBuf>,
    #[serde(rename = "K")]
    k: usize,
    split: String,
}

/// The embedding file paired with a word list: same stem with a `.tace`
/// extension, falling back to `.tsv` when only that exists.
pub fn paired_embedding_path(text_path: &Path) -> PathBuf {
    let tace = text_path.with_extension("tace");
    if tace.is_file() {
        return tace;
    }
    let tsv = text_path.with_extension("tsv");
    if tsv.is_file() && tsv != text_path {
        return tsv;
    }
    tace
}

/// Dataset description read from a TOML key-value file with the keys
/// `name`, `images`, `labels`, `nouns`, `K` and `split`. Relative paths are
/// resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub image_embedding_path: PathBuf,
    pub label_path: Option<PathBuf>,
    pub noun_vocab_path: Option<PathBuf>,
    pub target_k: usize,
    pub split: String,
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawManifest =
            toml::from_str(text).map_err(|e| TacError::Format(format!("manifest: {e}")))?;
        if raw.k < 2 {
            return Err(param_err(format!("manifest K must be >= 2, got {}", raw.k)));
        }
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        Ok(Self {
            name: raw.name,
            image_embedding_path: resolve(raw.images),
            label_path: raw.labels.map(resolve),
            noun_vocab_path: raw.nouns.map(resolve),
            target_k: raw.k,
            split: raw.split,
        })
    }

    /// Parses the manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&text, base)?;
        m.check_files()?;
        Ok(m)
    }

    fn check_files(&self) -> Result<()> {
        let mut required = vec![self.image_embedding_path.clone()];
        required.extend(self.label_path.clone());
        if let Some(nouns) = &self.noun_vocab_path {
            required.push(nouns.clone());
            required.push(self.noun_embedding_path()?);
        }
        for p in required {
            if !p.is_file() {
                return Err(TacError::Format(format!(
                    "referenced file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    /// The embedding file paired with the noun text file.
    pub fn noun_embedding_path(&self) -> Result<PathBuf> {
        let nouns = self
            .noun_vocab_path
            .as_ref()
            .ok_or_else(|| param_err("manifest has no `nouns` entry"))?;
        Ok(paired_embedding_path(nouns))
    }

    pub fn load_images(&self) -> Result<EmbeddingMatrix> {
        load_embeddings(&self.image_embedding_path, true)
    }

    pub fn load_labels(&self, expected_n: usize) -> Result<Option<Vec<usize>>> {
        self.label_path
            .as_ref()
            .map(|p| load_labels(p, expected_n))
            .transpose()
    }

    pub fn load_nouns(&self) -> Result<NounVocabulary> {
        let text = self
            .noun_vocab_path
            .as_ref()
            .ok_or_else(|| param_err("manifest has no `nouns` entry"))?;
        NounVocabulary::load(text, self.noun_embedding_path()?)
    }

    /// Renders the manifest back to TOML with paths relative to `base_dir`
    /// where possible.
    pub fn to_toml(&self, base_dir: &Path) -> String {
        let rel = |p: &Path| {
            p.strip_prefix(base_dir)
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/")
        };
        let mut out = format!(
            "name = {:?}\nimages = {:?}\n",
            self.name,
            rel(&self.image_embedding_path)
        );
        if let Some(l) = &self.label_path {
            out.push_str(&format!("labels = {:?}\n", rel(l)));
        }
        if let Some(n) = &self.noun_vocab_path {
            out.push_str(&format!("nouns = {:?}\n", rel(n)));
        }
        out.push_str(&format!(
            "K = {}\nsplit = {:?}\n",
            self.target_k, self.split
        ));
        out
    }
}
