//! Index-based dispersal: token `n` takes the base-`Q` digits of its index
//! as its code tuple, least significant digit in the first subspace.

use crate::codebook::{AssignmentAlgorithm, CodeAssignment, Codebook, Provenance, SubspaceTables};
use crate::config::{capacity_at_least, SubspaceConfig};
use crate::error::{Error, Result};

/// Smallest `Q` with `Q^num_subspaces >= vocab_size`, by integer search.
pub fn minimal_table_size(vocab_size: usize, num_subspaces: usize) -> usize {
    if vocab_size <= 1 || num_subspaces == 0 {
        return 1;
    }
    let (mut lo, mut hi) = (1usize, vocab_size);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if capacity_at_least(mid, num_subspaces, vocab_size) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// Base-`table_size` digits of `index`, least significant first.
pub(crate) fn digits(mut index: usize, table_size: usize, out: &mut [u32]) {
    for d in out.iter_mut() {
        *d = (index % table_size) as u32;
        index /= table_size;
    }
}

fn resolve_table_size(
    vocab_size: usize,
    num_subspaces: usize,
    table_size: Option<usize>,
) -> Result<usize> {
    if vocab_size == 0 || num_subspaces == 0 {
        return Err(Error::InvalidConfig(
            "vocab_size and num_subspaces must be positive".into(),
        ));
    }
    match table_size {
        None => Ok(minimal_table_size(vocab_size, num_subspaces)),
        Some(q) if q > 0 && capacity_at_least(q, num_subspaces, vocab_size) => Ok(q),
        Some(q) => Err(Error::Capacity(format!(
            "table_size {q} gives {q}^{num_subspaces} tuples, fewer than {vocab_size} tokens"
        ))),
    }
}

/// Assigns `codes[n][k] = floor(n / Q^k) mod Q`.
pub fn radix_assign(
    vocab_size: usize,
    num_subspaces: usize,
    table_size: Option<usize>,
) -> Result<CodeAssignment> {
    radix_assign_with_reserved(vocab_size, num_subspaces, table_size, &[])
}

/// Radix assignment where `reserved` tokens take the first tuples, in the
/// order given, and the remaining tokens follow in index order. An empty
/// `reserved` list is identical to [`radix_assign`].
pub fn radix_assign_with_reserved(
    vocab_size: usize,
    num_subspaces: usize,
    table_size: Option<usize>,
    reserved: &[usize],
) -> Result<CodeAssignment> {
    let q = resolve_table_size(vocab_size, num_subspaces, table_size)?;
    let position = reserved_order(vocab_size, reserved)?;
    let mut codes = vec![0u32; vocab_size * num_subspaces];
    for (n, row) in codes.chunks_exact_mut(num_subspaces).enumerate() {
        digits(position[n], q, row);
    }
    CodeAssignment::new(num_subspaces, codes)
}

/// Position of each token when reserved tokens are moved to the front.
pub(crate) fn reserved_order(vocab_size: usize, reserved: &[usize]) -> Result<Vec<usize>> {
    let mut position = vec![usize::MAX; vocab_size];
    for (i, &token) in reserved.iter().enumerate() {
        if token >= vocab_size {
            return Err(Error::TokenOutOfRange { token, vocab_size });
        }
        if position[token] != usize::MAX {
            return Err(Error::InvalidConfig(format!(
                "reserved token {token} listed twice"
            )));
        }
        position[token] = i;
    }
    let free = position.iter_mut().filter(|p| **p == usize::MAX);
    for (next, p) in (reserved.len()..).zip(free) {
        *p = next;
    }
    Ok(position)
}

/// Radix assignment plus freshly initialized tables.
pub fn radix_codebook(
    vocab_size: usize,
    embed_dim: usize,
    num_subspaces: usize,
    table_size: Option<usize>,
    reserved: &[usize],
    seed: u64,
    init_std: f64,
) -> Result<Codebook> {
    let q = resolve_table_size(vocab_size, num_subspaces, table_size)?;
    let config = SubspaceConfig::new(vocab_size, embed_dim, num_subspaces, q)?;
    let assignment = radix_assign_with_reserved(vocab_size, num_subspaces, Some(q), reserved)?;
    let tables = SubspaceTables::random_normal(&config, init_std, seed)?;
    let provenance = Provenance {
        algorithm: AssignmentAlgorithm::Radix,
        seed,
        init_std,
    };
    Codebook::new(config, assignment, tables, reserved.to_vec(), provenance)
}
