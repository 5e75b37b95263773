//! Fixtures shared by the criterion benches.

use subspace_core::EmbeddingMatrix;

/// Deterministic pseudo-random matrix (xorshift), cheap to build for benches.
pub fn pseudo_random_matrix(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut state = seed | 1;
    let data = (0..rows * dim)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 40) as f32 / (1u64 << 24) as f32 - 0.5
        })
        .collect();
    EmbeddingMatrix::new(rows, dim, data).expect("finite values")
}
