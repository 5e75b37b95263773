//! Context-aware assignment from pretrained vectors.
//!
//! Tokens start in one group. At every level but the last, each group is
//! clustered and the cluster label becomes that level's code, so groups are
//! refined by their growing code prefix. At the last level every member of a
//! group receives a distinct code from a seeded permutation, which makes the
//! full tuples unique. Labels are shared across groups: all groups at a level
//! index the same `table_size` table rows.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codebook::{
    verify_uniqueness, AssignmentAlgorithm, CodeAssignment, Codebook, Provenance, SubspaceTables,
};
use crate::config::SubspaceConfig;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansParams};
use crate::matrix::EmbeddingMatrix;
use crate::radix::digits;

/// Assignment plus the group structure it was built from.
#[derive(Clone, Debug)]
pub struct ClusterAssignment {
    pub assignment: CodeAssignment,
    /// `level_group_sizes[k]` lists the sizes of the groups that were split
    /// to produce code `k`, ordered by their code prefix. Level 0 is the
    /// single group of all non-reserved tokens.
    pub level_group_sizes: Vec<Vec<usize>>,
}

fn mix_seed(seed: u64, level: usize, group: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        .wrapping_add((level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((group as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds a unique assignment for `config` from `pretrained` (one row per
/// token, any dimension). `params.k` is ignored; each group uses
/// `min(table_size, group size)` clusters.
pub fn cluster_assign(
    pretrained: &EmbeddingMatrix,
    config: &SubspaceConfig,
    params: &KMeansParams,
) -> Result<CodeAssignment> {
    Ok(cluster_assign_detailed(pretrained, config, params, &[])?.assignment)
}

/// [`cluster_assign`] with reserved tokens and group statistics. Reserved
/// tokens take the leading radix tuples before clustering starts, are left
/// out of every clustering step, and their tuples are never handed out to
/// ordinary tokens.
pub fn cluster_assign_detailed(
    pretrained: &EmbeddingMatrix,
    config: &SubspaceConfig,
    params: &KMeansParams,
    reserved: &[usize],
) -> Result<ClusterAssignment> {
    let (d, f, q) = (config.vocab_size, config.num_subspaces, config.table_size);
    if pretrained.rows() != d {
        return Err(Error::Data(format!(
            "pretrained matrix has {} rows, vocabulary has {d} tokens",
            pretrained.rows()
        )));
    }
    if !config.has_capacity() {
        return Err(Error::Capacity(format!(
            "{q}^{f} tuples cannot cover {d} tokens"
        )));
    }

    let mut codes = vec![0u32; d * f];
    let mut is_reserved = vec![false; d];
    let mut reserved_last: HashMap<Vec<u32>, Vec<u32>> = HashMap::new();
    if reserved.len() > d {
        return Err(Error::InvalidConfig(
            "more reserved tokens than vocabulary".into(),
        ));
    }
    for (i, &token) in reserved.iter().enumerate() {
        if token >= d {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: d,
            });
        }
        if is_reserved[token] {
            return Err(Error::InvalidConfig(format!(
                "reserved token {token} listed twice"
            )));
        }
        is_reserved[token] = true;
        let row = &mut codes[token * f..(token + 1) * f];
        digits(i, q, row);
        reserved_last
            .entry(row[..f - 1].to_vec())
            .or_default()
            .push(row[f - 1]);
    }

    let mut groups: Vec<Vec<usize>> = vec![(0..d).filter(|&n| !is_reserved[n]).collect()];
    groups.retain(|g| !g.is_empty());
    let mut level_group_sizes = Vec::with_capacity(f);

    for level in 0..f - 1 {
        level_group_sizes.push(groups.iter().map(Vec::len).collect());
        let labelled: Vec<Vec<usize>> = groups
            .par_iter()
            .enumerate()
            .map(|(gi, group)| {
                if group.len() == 1 {
                    return Ok(vec![0]);
                }
                let mut data = Vec::with_capacity(group.len() * pretrained.dim());
                for &n in group {
                    data.extend(pretrained.row(n).iter().map(|&v| f64::from(v)));
                }
                let points = EmbeddingMatrix::new(group.len(), pretrained.dim(), data)?;
                let group_params = KMeansParams {
                    k: q.min(group.len()),
                    seed: mix_seed(params.seed, level, gi),
                    ..params.clone()
                };
                Ok(kmeans(&points, &group_params)?.labels)
            })
            .collect::<Result<_>>()?;

        let mut refined = Vec::new();
        for (group, labels) in groups.iter().zip(&labelled) {
            let k = labels.iter().max().map_or(0, |m| m + 1);
            let mut split = vec![Vec::new(); k];
            for (&n, &label) in group.iter().zip(labels) {
                codes[n * f + level] = label as u32;
                split[label].push(n);
            }
            refined.extend(split.into_iter().filter(|g| !g.is_empty()));
        }
        groups = refined;
    }
    level_group_sizes.push(groups.iter().map(Vec::len).collect());

    for (gi, group) in groups.iter().enumerate() {
        let prefix = &codes[group[0] * f..group[0] * f + f - 1];
        let taken = reserved_last.get(prefix);
        let mut free: Vec<u32> = (0..q as u32)
            .filter(|v| taken.is_none_or(|t| !t.contains(v)))
            .collect();
        if group.len() > free.len() {
            return Err(Error::Capacity(format!(
                "group with code prefix {prefix:?} holds {} tokens but only {} final codes are free; \
                 use balanced clustering or a larger table_size",
                group.len(),
                free.len()
            )));
        }
        free.truncate(group.len());
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, f - 1, gi));
        free.shuffle(&mut rng);
        for (&n, &code) in group.iter().zip(&free) {
            codes[n * f + f - 1] = code;
        }
    }

    let assignment = CodeAssignment::new(f, codes)?;
    let check = verify_uniqueness(&assignment);
    if let Some((i, j)) = check.first_collision {
        return Err(Error::Capacity(format!(
            "tokens {i} and {j} received the same code tuple"
        )));
    }
    Ok(ClusterAssignment {
        assignment,
        level_group_sizes,
    })
}

/// Cluster assignment plus freshly initialized tables of dimension
/// `config.embed_dim`; centroids are not reused since their dimension is the
/// pretrained one.
pub fn cluster_codebook(
    pretrained: &EmbeddingMatrix,
    config: &SubspaceConfig,
    params: &KMeansParams,
    reserved: &[usize],
    init_std: f64,
) -> Result<(Codebook, ClusterAssignment)> {
    let detailed = cluster_assign_detailed(pretrained, config, params, reserved)?;
    let tables = SubspaceTables::random_normal(config, init_std, params.seed)?;
    let algorithm = if params.balanced {
        AssignmentAlgorithm::ClusterBalanced
    } else {
        AssignmentAlgorithm::ClusterNaive
    };
    let codebook = Codebook::new(
        config.clone(),
        detailed.assignment.clone(),
        tables,
        reserved.to_vec(),
        Provenance {
            algorithm,
            seed: params.seed,
            init_std,
        },
    )?;
    Ok((codebook, detailed))
}

/// Mean pretrained L2 distance over a set of token pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PairStats {
    pub pairs: usize,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Accumulator {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn finish(&self) -> PairStats {
        if self.n == 0 {
            return PairStats {
                pairs: 0,
                mean: f64::NAN,
                std_error: f64::NAN,
            };
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 {
            ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        PairStats {
            pairs: self.n,
            mean,
            std_error: (var / n).sqrt(),
        }
    }
}

/// Pretrained distances grouped by how many code coordinates a pair shares.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityReport {
    /// Indexed by the number of shared coordinates, `0..=num_subspaces`.
    pub by_shared: Vec<PairStats>,
    pub first_code_shared: PairStats,
    pub first_code_differs: PairStats,
    /// Whether every pair was visited rather than a sample.
    pub exhaustive: bool,
}

impl fmt::Display for SimilarityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "shared  pairs       mean_l2     std_err")?;
        for (s, row) in self.by_shared.iter().enumerate() {
            writeln!(
                f,
                "{s:<7} {:<11} {:<11.6} {:.6}",
                row.pairs, row.mean, row.std_error
            )?;
        }
        writeln!(
            f,
            "first code shared: {:.6} ({} pairs), differs: {:.6} ({} pairs)",
            self.first_code_shared.mean,
            self.first_code_shared.pairs,
            self.first_code_differs.mean,
            self.first_code_differs.pairs
        )
    }
}

/// Visits every token pair when there are at most `max_pairs` of them and
/// otherwise draws `max_pairs` random distinct pairs with a seeded RNG.
pub fn shared_prefix_similarity_report(
    pretrained: &EmbeddingMatrix,
    assignment: &CodeAssignment,
    max_pairs: usize,
    seed: u64,
) -> Result<SimilarityReport> {
    let d = assignment.vocab_size();
    if pretrained.rows() != d {
        return Err(Error::Data(format!(
            "pretrained matrix has {} rows, assignment has {d}",
            pretrained.rows()
        )));
    }
    let f = assignment.num_subspaces();
    let mut by_shared: Vec<Accumulator> = (0..=f).map(|_| Accumulator::default()).collect();
    let mut first_shared = Accumulator::default();
    let mut first_differs = Accumulator::default();

    let mut visit = |i: usize, j: usize| {
        let (a, b) = (assignment.row(i), assignment.row(j));
        let shared = a.iter().zip(b).filter(|(x, y)| x == y).count();
        let dist = pretrained
            .row(i)
            .iter()
            .zip(pretrained.row(j))
            .map(|(&x, &y)| {
                let t = f64::from(x) - f64::from(y);
                t * t
            })
            .sum::<f64>()
            .sqrt();
        by_shared[shared].push(dist);
        if a[0] == b[0] {
            first_shared.push(dist);
        } else {
            first_differs.push(dist);
        }
    };

    let total = d.saturating_mul(d.saturating_sub(1)) / 2;
    let exhaustive = total <= max_pairs;
    if exhaustive {
        for i in 0..d {
            for j in i + 1..d {
                visit(i, j);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..max_pairs {
            let i = rng.random_range(0..d);
            let mut j = rng.random_range(0..d - 1);
            if j >= i {
                j += 1;
            }
            visit(i.min(j), i.max(j));
        }
    }

    Ok(SimilarityReport {
        by_shared: by_shared.iter().map(Accumulator::finish).collect(),
        first_code_shared: first_shared.finish(),
        first_code_differs: first_differs.finish(),
        exhaustive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f32]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn two_blobs_share_first_code() {
        let pre = column(&[0.0, 0.1, 10.0, 10.1]);
        let config = SubspaceConfig::new(4, 2, 2, 2).unwrap();
        let a = cluster_assign(&pre, &config, &KMeansParams::new(2).balanced(true)).unwrap();
        assert_eq!(a.code(0, 0), a.code(1, 0));
        assert_eq!(a.code(2, 0), a.code(3, 0));
        assert_ne!(a.code(0, 0), a.code(2, 0));
        assert!(verify_uniqueness(&a).unique);

        let report = shared_prefix_similarity_report(&pre, &a, 1000, 0).unwrap();
        assert!(report.exhaustive);
        assert!((report.first_code_shared.mean - 0.1).abs() < 1e-6);
        assert!((report.first_code_differs.mean - 10.0).abs() < 1e-6);
    }

    #[test]
    fn identical_vectors_still_unique() {
        let pre = column(&[1.5; 27]);
        let config = SubspaceConfig::new(27, 3, 3, 3).unwrap();
        let a = cluster_assign(&pre, &config, &KMeansParams::new(3).balanced(true)).unwrap();
        assert!(verify_uniqueness(&a).unique);
        let report = shared_prefix_similarity_report(&pre, &a, 10_000, 0).unwrap();
        assert!(report
            .by_shared
            .iter()
            .filter(|s| s.pairs > 0)
            .all(|s| s.mean == 0.0));
    }

    #[test]
    fn oversized_final_group_is_a_capacity_error() {
        // naive clustering of one tight blob plus one outlier leaves a final
        // group of 3 with only 2 final codes
        let pre = column(&[0.0, 0.0, 0.0, 100.0]);
        let config = SubspaceConfig::new(4, 2, 2, 2).unwrap();
        let err = cluster_assign(&pre, &config, &KMeansParams::new(2)).unwrap_err();
        assert!(
            matches!(err, Error::Capacity(ref m) if m.contains("prefix")),
            "{err}"
        );
    }

    #[test]
    fn row_mismatch_is_a_data_error() {
        let config = SubspaceConfig::new(4, 2, 2, 2).unwrap();
        assert!(matches!(
            cluster_assign(&column(&[0.0; 3]), &config, &KMeansParams::new(2)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn reserved_tokens_keep_dedicated_tuples() {
        let values: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let config = SubspaceConfig::new(16, 4, 2, 5).unwrap();
        let params = KMeansParams::new(5).balanced(true).seed(9);
        let out = cluster_assign_detailed(&column(&values), &config, &params, &[15, 3]).unwrap();
        let a = &out.assignment;
        assert_eq!(a.row(15), &[0, 0]);
        assert_eq!(a.row(3), &[1, 0]);
        assert!(verify_uniqueness(a).unique);
        assert_eq!(out.level_group_sizes[0], vec![14]);
    }

    #[test]
    fn reserved_tuples_consume_final_slots() {
        // with no slack, a full cluster that shares a prefix with a reserved
        // tuple cannot fit
        let values: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let config = SubspaceConfig::new(16, 4, 2, 4).unwrap();
        let params = KMeansParams::new(4).balanced(true).seed(9);
        let err =
            cluster_assign_detailed(&column(&values), &config, &params, &[15, 3]).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
    }

    #[test]
    fn single_subspace_permutes_all_tokens() {
        let config = SubspaceConfig::new(5, 4, 1, 5).unwrap();
        let a = cluster_assign(
            &column(&[3.0, 1.0, 4.0, 1.0, 5.0]),
            &config,
            &KMeansParams::new(1),
        )
        .unwrap();
        let mut codes = a.as_slice().to_vec();
        codes.sort_unstable();
        assert_eq!(codes, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn deterministic_under_seed() {
        let values: Vec<f32> = (0..200).map(|i| ((i * 37) % 101) as f32 * 0.1).collect();
        let pre = EmbeddingMatrix::new(100, 2, values).unwrap();
        let config = SubspaceConfig::new(100, 6, 3, 5).unwrap();
        let params = KMeansParams::new(5).balanced(true).seed(4);
        let a = cluster_assign(&pre, &config, &params).unwrap();
        let b = cluster_assign(&pre, &config, &params).unwrap();
        assert_eq!(a, b);
    }
}
