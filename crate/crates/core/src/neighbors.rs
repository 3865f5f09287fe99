//! Exact cosine k-nearest-neighbor graph and the random-neighbor sampler.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{param_err, Result, TacError};
use crate::math::{self, RngState};
use crate::matrix::EmbeddingMatrix;

/// Query rows processed per parallel work item.
const QUERY_BLOCK: usize = 64;

pub const GRAPH_MAGIC: [u8; 4] = *b"TACG";

/// Content hash of a matrix, used to tie a graph to the rows it was built on.
pub fn fingerprint(m: &EmbeddingMatrix) -> u64 {
    let mut h = Sha256::new();
    h.update((m.rows() as u64).to_le_bytes());
    h.update((m.dim() as u64).to_le_bytes());
    for x in m.data() {
        h.update(x.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Row `i` lists the `n_neighbors` most similar other rows, most similar first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    rows: usize,
    n_neighbors: usize,
    indices: Vec<u32>,
    source: u64,
}

impl NeighborGraph {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n_neighbors(&self) -> usize {
        self.n_neighbors
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[i * self.n_neighbors..(i + 1) * self.n_neighbors]
    }

    /// Fingerprint of the matrix this graph was built on.
    pub fn source_fingerprint(&self) -> u64 {
        self.source
    }

    pub fn is_built_on(&self, m: &EmbeddingMatrix) -> bool {
        self.rows == m.rows() && self.source == fingerprint(m)
    }

    /// Cache layout (little-endian): magic `TACG`, N u64, N^ u64, source
    /// fingerprint u64, then N x N^ u32 indices row-major.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + self.indices.len() * 4);
        out.extend_from_slice(&GRAPH_MAGIC);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_neighbors as u64).to_le_bytes());
        out.extend_from_slice(&self.source.to_le_bytes());
        for i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 28 || bytes[..4] != GRAPH_MAGIC {
            return Err(TacError::Format("not a neighbor graph cache".into()));
        }
        let rd = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let (rows, n_neighbors, source) = (rd(4) as usize, rd(12) as usize, rd(20));
        let payload = &bytes[28..];
        if payload.len() != rows * n_neighbors * 4 {
            return Err(TacError::Format(format!(
                "graph header declares {rows}x{n_neighbors} but payload has {} bytes",
                payload.len()
            )));
        }
        let indices: Vec<u32> = payload
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if indices.iter().any(|&j| j as usize >= rows) {
            return Err(TacError::Data("neighbor index out of range".into()));
        }
        Ok(Self {
            rows,
            n_neighbors,
            indices,
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes =
            fs::read(path).map_err(|e| TacError::Format(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}

fn by_similarity(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Exact top-`n_neighbors` by cosine similarity, excluding self; ties go to
/// the lower index.
pub fn build_graph(x: &EmbeddingMatrix, n_neighbors: usize) -> Result<NeighborGraph> {
    let n = x.rows();
    if n_neighbors == 0 || n_neighbors >= n {
        return Err(param_err(format!(
            "need 1 <= n_neighbors < N, got n_neighbors = {n_neighbors} with N = {n}"
        )));
    }
    if n > u32::MAX as usize {
        return Err(param_err("graph indices are 32-bit"));
    }
    let unit = if x.is_normalized() {
        x.clone()
    } else {
        x.clone().normalized()?
    };

    let mut indices = vec![0u32; n * n_neighbors];
    indices
        .par_chunks_mut(QUERY_BLOCK * n_neighbors)
        .enumerate()
        .for_each(|(block, out)| {
            let mut cand: Vec<(f64, u32)> = Vec::with_capacity(n - 1);
            for (offset, dst) in out.chunks_mut(n_neighbors).enumerate() {
                let i = block * QUERY_BLOCK + offset;
                let q = unit.row(i);
                cand.clear();
                cand.extend(
                    (0..n)
                        .filter(|&j| j != i)
                        .map(|j| (math::dot(q, unit.row(j)), j as u32)),
                );
                if n_neighbors < cand.len() {
                    cand.select_nth_unstable_by(n_neighbors - 1, by_similarity);
                    cand.truncate(n_neighbors);
                }
                cand.sort_unstable_by(by_similarity);
                for (d, &(_, j)) in dst.iter_mut().zip(&cand) {
                    *d = j;
                }
            }
        });

    Ok(NeighborGraph {
        rows: n,
        n_neighbors,
        indices,
        source: fingerprint(x),
    })
}

/// A uniform draw from row `i`'s neighbor list.
pub fn sample_neighbor(g: &NeighborGraph, i: usize, rng: &mut RngState) -> usize {
    let row = g.neighbors(i);
    row[rng.uniform_int(row.len())] as usize
}
