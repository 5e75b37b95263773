#![allow(dead_code)]

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use subspace_core::{CodeAssignment, EmbeddingMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize, std: f32) -> EmbeddingMatrix {
    let data = (0..rows * dim)
        .map(|_| {
            let z: f32 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    EmbeddingMatrix::new(rows, dim, data).unwrap()
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let data = (0..rows * dim)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    EmbeddingMatrix::new(rows, dim, data).unwrap()
}

/// O(D^2) pairwise comparison: lexicographically smallest colliding pair.
pub fn brute_force_collision(a: &CodeAssignment) -> Option<(usize, usize)> {
    let d = a.vocab_size();
    for i in 0..d {
        for j in i + 1..d {
            if a.row(i) == a.row(j) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Minimum inertia over all labelings of `points` into two non-empty groups;
/// with `balanced`, only labelings whose sizes differ by at most one.
pub fn exhaustive_two_partition(points: &[Vec<f64>], balanced: bool) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1u32 << n) - 1 {
        let ones = mask.count_ones() as usize;
        if balanced && ones.abs_diff(n - ones) > 1 {
            continue;
        }
        let mut cost = 0.0;
        for side in [0, 1] {
            let members: Vec<&Vec<f64>> = (0..n)
                .filter(|&i| (mask >> i) & 1 == side)
                .map(|i| &points[i])
                .collect();
            let mut mean = vec![0.0; dim];
            for p in &members {
                for (m, v) in mean.iter_mut().zip(p.iter()) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= members.len() as f64);
            for p in &members {
                cost += p
                    .iter()
                    .zip(&mean)
                    .map(|(v, m)| (v - m) * (v - m))
                    .sum::<f64>();
            }
        }
        best = best.min(cost);
    }
    best
}

/// Runs one acceptance criterion, prints a single PASS/FAIL line with its
/// runtime, and panics on failure or budget overrun.
pub fn criterion(
    id: &str,
    title: &str,
    budget: Duration,
    body: impl FnOnce() -> Result<String, String>,
) {
    let start = Instant::now();
    let outcome = body();
    let elapsed = start.elapsed();
    let outcome = match outcome {
        Ok(detail) if elapsed > budget => {
            Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}"))
        }
        other => other,
    };
    match outcome {
        Ok(detail) => println!("[PASS] {id} {title} ({elapsed:.2?}): {detail}"),
        Err(why) => {
            println!("[FAIL] {id} {title} ({elapsed:.2?}): {why}");
            panic!("{id} failed: {why}");
        }
    }
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}
