//! The compressed embedding structure: code tuples per token plus one table
//! of shared vectors per subspace. A token's full vector is the
//! concatenation, in subspace order, of the rows its code tuple selects.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SubspaceConfig;
use crate::error::{Error, Result};
use crate::matrix::{EmbeddingMatrix, Real};

/// Standard deviation used when initializing subspace tables.
pub const DEFAULT_INIT_STD: f64 = 0.02;

/// Code tuple of every token, stored row-major: `codes[n * f + k]` is the
/// row of table `k` used by token `n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeAssignment {
    num_subspaces: usize,
    codes: Vec<u32>,
}

impl CodeAssignment {
    pub fn new(num_subspaces: usize, codes: Vec<u32>) -> Result<Self> {
        if num_subspaces == 0 || !codes.len().is_multiple_of(num_subspaces) {
            return Err(Error::Data(format!(
                "{} codes do not form rows of {num_subspaces}",
                codes.len()
            )));
        }
        Ok(Self {
            num_subspaces,
            codes,
        })
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let f = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != f) {
            return Err(Error::Data("ragged code rows".into()));
        }
        Self::new(f, rows.concat())
    }

    pub fn vocab_size(&self) -> usize {
        self.codes.len() / self.num_subspaces
    }

    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn row(&self, token: usize) -> &[u32] {
        &self.codes[token * self.num_subspaces..(token + 1) * self.num_subspaces]
    }

    pub fn code(&self, token: usize, subspace: usize) -> u32 {
        self.codes[token * self.num_subspaces + subspace]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.codes
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[u32]> {
        self.codes.chunks_exact(self.num_subspaces)
    }

    pub fn max_code(&self) -> Option<u32> {
        self.codes.iter().copied().max()
    }
}

/// Outcome of [`verify_uniqueness`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Uniqueness {
    pub unique: bool,
    /// Lexicographically smallest pair `(i, j)`, `i < j`, of tokens with the
    /// same code tuple.
    pub first_collision: Option<(usize, usize)>,
}

/// Checks that no two tokens share a complete code tuple.
pub fn verify_uniqueness(assignment: &CodeAssignment) -> Uniqueness {
    // first and second occurrence of each tuple
    let mut seen: HashMap<&[u32], (usize, Option<usize>)> =
        HashMap::with_capacity(assignment.vocab_size());
    for (n, row) in assignment.iter_rows().enumerate() {
        seen.entry(row)
            .and_modify(|e| {
                if e.1.is_none() {
                    e.1 = Some(n);
                }
            })
            .or_insert((n, None));
    }
    let first_collision = seen.values().filter_map(|&(i, j)| j.map(|j| (i, j))).min();
    Uniqueness {
        unique: first_collision.is_none(),
        first_collision,
    }
}

/// One table of shared vectors per subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceTables<T = f32> {
    tables: Vec<EmbeddingMatrix<T>>,
}

impl<T: Real> SubspaceTables<T> {
    pub fn new(tables: Vec<EmbeddingMatrix<T>>) -> Self {
        Self { tables }
    }

    pub fn zeros(config: &SubspaceConfig) -> Self {
        Self {
            tables: config
                .subspace_dims
                .iter()
                .map(|&dim| EmbeddingMatrix::zeros(config.table_size, dim))
                .collect(),
        }
    }

    /// Tables drawn from `N(0, std^2)` with a seeded ChaCha stream, filled
    /// table by table in row-major order.
    pub fn random_normal(config: &SubspaceConfig, std: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::InvalidConfig(format!("init std {std}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tables = Self::zeros(config);
        for table in &mut tables.tables {
            for v in table.as_mut_slice() {
                *v = T::from_f64(normal.sample(&mut rng)).unwrap_or_else(T::zero);
            }
        }
        Ok(tables)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn table(&self, k: usize) -> &EmbeddingMatrix<T> {
        &self.tables[k]
    }

    pub fn table_mut(&mut self, k: usize) -> &mut EmbeddingMatrix<T> {
        &mut self.tables[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmbeddingMatrix<T>> {
        self.tables.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut EmbeddingMatrix<T>> {
        self.tables.iter_mut()
    }

    pub fn into_inner(self) -> Vec<EmbeddingMatrix<T>> {
        self.tables
    }

    /// Multiplies every entry by `alpha`.
    pub fn scale(&mut self, alpha: T) {
        for table in &mut self.tables {
            for v in table.as_mut_slice() {
                *v = *v * alpha;
            }
        }
    }

    /// `self += alpha * other`; shapes must agree.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (dst, src) in self.tables.iter_mut().zip(&other.tables) {
            for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
                *d = *d + alpha * *s;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> SubspaceTables<U> {
        SubspaceTables {
            tables: self.tables.iter().map(EmbeddingMatrix::cast).collect(),
        }
    }

    pub(crate) fn check_shapes(&self, config: &SubspaceConfig) -> Result<()> {
        if self.tables.len() != config.num_subspaces {
            return Err(Error::Data(format!(
                "{} tables for {} subspaces",
                self.tables.len(),
                config.num_subspaces
            )));
        }
        for (k, (table, &dim)) in self.tables.iter().zip(&config.subspace_dims).enumerate() {
            if table.rows() != config.table_size || table.dim() != dim {
                return Err(Error::Data(format!(
                    "table {k} is {}x{}, expected {}x{dim}",
                    table.rows(),
                    table.dim(),
                    config.table_size
                )));
            }
        }
        Ok(())
    }
}

/// How a codebook's assignment was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignmentAlgorithm {
    #[serde(rename = "radix")]
    Radix,
    #[serde(rename = "cluster-naive")]
    ClusterNaive,
    #[serde(rename = "cluster-balanced")]
    ClusterBalanced,
}

impl AssignmentAlgorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Radix => "radix",
            Self::ClusterNaive => "cluster-naive",
            Self::ClusterBalanced => "cluster-balanced",
        }
    }
}

impl fmt::Display for AssignmentAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssignmentAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radix" => Ok(Self::Radix),
            "cluster-naive" => Ok(Self::ClusterNaive),
            "cluster-balanced" => Ok(Self::ClusterBalanced),
            other => Err(Error::Data(format!(
                "unknown assignment algorithm {other:?}"
            ))),
        }
    }
}

/// Enough information to replay the construction of a codebook.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub algorithm: AssignmentAlgorithm,
    pub seed: u64,
    pub init_std: f64,
}

impl Provenance {
    pub fn new(algorithm: AssignmentAlgorithm, seed: u64) -> Self {
        Self {
            algorithm,
            seed,
            init_std: DEFAULT_INIT_STD,
        }
    }
}

/// Config, assignment and tables bundled into the unit that replaces a flat
/// embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T = f32> {
    config: SubspaceConfig,
    assignment: CodeAssignment,
    tables: SubspaceTables<T>,
    reserved_tokens: Vec<usize>,
    provenance: Provenance,
}

impl<T: Real> Codebook<T> {
    /// Validates that all parts agree on shapes and that every code indexes
    /// an existing table row. Uniqueness is not required here; see
    /// [`verify_uniqueness`].
    pub fn new(
        config: SubspaceConfig,
        assignment: CodeAssignment,
        tables: SubspaceTables<T>,
        reserved_tokens: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        if assignment.num_subspaces() != config.num_subspaces
            || assignment.vocab_size() != config.vocab_size
        {
            return Err(Error::Data(format!(
                "assignment is {}x{}, config expects {}x{}",
                assignment.vocab_size(),
                assignment.num_subspaces(),
                config.vocab_size,
                config.num_subspaces
            )));
        }
        if let Some(max) = assignment.max_code() {
            if max as usize >= config.table_size {
                return Err(Error::Data(format!(
                    "code {max} out of range for table_size {}",
                    config.table_size
                )));
            }
        }
        tables.check_shapes(&config)?;
        if let Some(&bad) = reserved_tokens.iter().find(|&&t| t >= config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab_size: config.vocab_size,
            });
        }
        Ok(Self {
            config,
            assignment,
            tables,
            reserved_tokens,
            provenance,
        })
    }

    pub fn config(&self) -> &SubspaceConfig {
        &self.config
    }

    pub fn assignment(&self) -> &CodeAssignment {
        &self.assignment
    }

    pub fn tables(&self) -> &SubspaceTables<T> {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut SubspaceTables<T> {
        &mut self.tables
    }

    pub fn reserved_tokens(&self) -> &[usize] {
        &self.reserved_tokens
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn param_count(&self) -> u64 {
        self.config.param_count()
    }

    /// Same codebook with tables converted to another scalar type.
    pub fn cast<U: Real>(&self) -> Codebook<U> {
        Codebook {
            config: self.config.clone(),
            assignment: self.assignment.clone(),
            tables: self.tables.cast(),
            reserved_tokens: self.reserved_tokens.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn with_tables(self, tables: SubspaceTables<T>) -> Result<Self> {
        tables.check_shapes(&self.config)?;
        Ok(Self { tables, ..self })
    }

    pub(crate) fn check_token(&self, token: usize) -> Result<()> {
        if token >= self.config.vocab_size {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Writes the reconstruction of `token` into `out` (length `embed_dim`).
    pub(crate) fn reconstruct_into(&self, token: usize, out: &mut [T]) {
        let mut offset = 0;
        for (k, &code) in self.assignment.row(token).iter().enumerate() {
            let slice = self.tables.table(k).row(code as usize);
            out[offset..offset + slice.len()].copy_from_slice(slice);
            offset += slice.len();
        }
    }

    /// Full vector of one token.
    pub fn reconstruct_one(&self, token: usize) -> Result<Vec<T>> {
        self.check_token(token)?;
        let mut out = vec![T::zero(); self.config.embed_dim];
        self.reconstruct_into(token, &mut out);
        Ok(out)
    }

    /// Full `vocab_size x embed_dim` matrix. Rows are independent, so the
    /// parallel fill is identical to a sequential one.
    pub fn reconstruct_all(&self) -> EmbeddingMatrix<T> {
        let dim = self.config.embed_dim;
        let mut out = EmbeddingMatrix::zeros(self.config.vocab_size, dim);
        out.as_mut_slice()
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(n, row)| self.reconstruct_into(n, row));
        out
    }
}
