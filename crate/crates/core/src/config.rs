use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a compressed embedding structure: `num_subspaces` tables of
/// `table_size` vectors each, whose concatenation yields `embed_dim`
/// dimensional vectors for `vocab_size` tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_subspaces: usize,
    pub table_size: usize,
    pub subspace_dims: Vec<usize>,
}

impl SubspaceConfig {
    /// Builds a config with a balanced dimension split, rejecting shapes
    /// that cannot give every token a distinct code tuple.
    pub fn new(
        vocab_size: usize,
        embed_dim: usize,
        num_subspaces: usize,
        table_size: usize,
    ) -> Result<Self> {
        let config = Self::new_lossy(vocab_size, embed_dim, num_subspaces, table_size)?;
        if !config.has_capacity() {
            return Err(Error::InvalidConfig(format!(
                "table_size^num_subspaces = {table_size}^{num_subspaces} < vocab_size = {vocab_size}"
            )));
        }
        Ok(config)
    }

    /// Like [`SubspaceConfig::new`] but permits `table_size^num_subspaces <
    /// vocab_size`, i.e. tokens that are forced to share a full code tuple.
    pub fn new_lossy(
        vocab_size: usize,
        embed_dim: usize,
        num_subspaces: usize,
        table_size: usize,
    ) -> Result<Self> {
        if vocab_size == 0 || embed_dim == 0 || num_subspaces == 0 || table_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "all sizes must be positive (vocab_size={vocab_size}, embed_dim={embed_dim}, \
                 num_subspaces={num_subspaces}, table_size={table_size})"
            )));
        }
        if table_size > u32::MAX as usize {
            return Err(Error::InvalidConfig(format!(
                "table_size {table_size} exceeds u32 codes"
            )));
        }
        let subspace_dims = split_dims(embed_dim, num_subspaces)?;
        Ok(Self {
            vocab_size,
            embed_dim,
            num_subspaces,
            table_size,
            subspace_dims,
        })
    }

    /// Rebuilds a config from stored fields, checking every structural
    /// invariant except capacity.
    pub fn from_parts(
        vocab_size: usize,
        embed_dim: usize,
        num_subspaces: usize,
        table_size: usize,
        subspace_dims: Vec<usize>,
    ) -> Result<Self> {
        let config = Self::new_lossy(vocab_size, embed_dim, num_subspaces, table_size)?;
        if subspace_dims.len() != num_subspaces {
            return Err(Error::InvalidConfig(format!(
                "{} subspace dims for {num_subspaces} subspaces",
                subspace_dims.len()
            )));
        }
        if subspace_dims.iter().sum::<usize>() != embed_dim || subspace_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "subspace dims {subspace_dims:?} do not partition embed_dim {embed_dim}"
            )));
        }
        let max = subspace_dims.iter().max().copied().unwrap_or(0);
        let min = subspace_dims.iter().min().copied().unwrap_or(0);
        if max - min > 1 {
            return Err(Error::InvalidConfig(format!(
                "unbalanced subspace dims {subspace_dims:?}"
            )));
        }
        Ok(Self {
            subspace_dims,
            ..config
        })
    }

    /// `table_size^num_subspaces >= vocab_size`, evaluated without overflow.
    pub fn has_capacity(&self) -> bool {
        capacity_at_least(self.table_size, self.num_subspaces, self.vocab_size)
    }

    /// Column offset of each subspace inside a reconstructed vector.
    pub fn offsets(&self) -> Vec<usize> {
        self.subspace_dims
            .iter()
            .scan(0, |acc, &dim| {
                let start = *acc;
                *acc += dim;
                Some(start)
            })
            .collect()
    }

    pub fn param_count(&self) -> u64 {
        param_count(self)
    }
}

/// True when `base^exp >= target`.
pub(crate) fn capacity_at_least(base: usize, exp: usize, target: usize) -> bool {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.saturating_mul(base as u128);
        if acc >= target as u128 {
            return true;
        }
    }
    acc >= target as u128
}

/// Splits `embed_dim` into `num_subspaces` sizes differing by at most one,
/// larger parts first.
pub fn split_dims(embed_dim: usize, num_subspaces: usize) -> Result<Vec<usize>> {
    if num_subspaces == 0 || num_subspaces > embed_dim {
        return Err(Error::InvalidConfig(format!(
            "cannot split {embed_dim} dims into {num_subspaces} non-empty subspaces"
        )));
    }
    let base = embed_dim / num_subspaces;
    let extra = embed_dim % num_subspaces;
    Ok((0..num_subspaces)
        .map(|k| if k < extra { base + 1 } else { base })
        .collect())
}

/// Number of learnable embedding parameters: `sum_k table_size * dims[k]`.
/// The flat table (`num_subspaces = 1`, `table_size = vocab_size`) yields
/// `vocab_size * embed_dim`.
pub fn param_count(config: &SubspaceConfig) -> u64 {
    config
        .subspace_dims
        .iter()
        .map(|&dim| config.table_size as u64 * dim as u64)
        .sum()
}

/// Percentage reduction of `params` relative to `baseline_params`.
pub fn compression_ratio(params: u64, baseline_params: u64) -> Result<f64> {
    if baseline_params == 0 {
        return Err(Error::InvalidConfig(
            "baseline parameter count must be positive".into(),
        ));
    }
    Ok(100.0 * (1.0 - params as f64 / baseline_params as f64))
}

/// Renders a percentage with two decimals, as used in reports.
pub fn format_percent(value: f64) -> String {
    format!("{value:.2}")
}
