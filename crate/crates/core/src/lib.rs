//! Text-aided clustering of images from precomputed vision-language
//! embeddings.
//!
//! The pipeline: estimate semantic centers with k-means, pick the nouns that
//! best describe each center, give every image a text counterpart built from
//! those nouns, then either cluster the concatenated features directly or
//! train two small cluster heads that distill from each other.

// `!(x > 0.0)` style checks deliberately reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distill;
pub mod error;
pub mod kmeans;
pub mod math;
pub mod matrix;
pub mod metrics;
pub mod neighbors;
pub mod store;
pub mod synthetic;
pub mod text_space;

pub use error::{Result, TacError};
pub use math::RngState;
pub use matrix::{EmbeddingMatrix, ProbMatrix};
