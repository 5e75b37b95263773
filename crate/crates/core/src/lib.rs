//! Compressed word-embedding tables built from shared subspace embeddings.
//!
//! Each token is mapped to a tuple of codes, one per subspace; its full
//! embedding is the concatenation of the code-selected rows of small shared
//! tables. Assignments come from radix dispersal of the token index
//! ([`radix`]) or from recursive k-means over pretrained vectors
//! ([`cluster`]). [`layer`] makes the tables trainable and [`io`] stores
//! everything in a little-endian binary format.

pub mod cluster;
pub mod codebook;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod kmeans;
pub mod layer;
pub mod matrix;
pub mod radix;

pub use codebook::{
    verify_uniqueness, AssignmentAlgorithm, CodeAssignment, Codebook, Provenance, SubspaceTables,
    Uniqueness, DEFAULT_INIT_STD,
};
pub use config::{compression_ratio, format_percent, param_count, split_dims, SubspaceConfig};
pub use error::{Error, FormatError, Result};
pub use kmeans::{balanced_assign, kmeans, ClusterResult, KMeansParams};
pub use matrix::{EmbeddingMatrix, Real};
pub use radix::{minimal_table_size, radix_assign, radix_assign_with_reserved, radix_codebook};
