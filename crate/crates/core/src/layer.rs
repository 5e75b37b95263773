//! Trainable view of a codebook: batched lookup, gradient scatter into the
//! shared tables, and fitting tables to a target embedding matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codebook::{AssignmentAlgorithm, CodeAssignment, Codebook, Provenance, SubspaceTables};
use crate::config::SubspaceConfig;
use crate::error::{Error, Result};
use crate::matrix::{EmbeddingMatrix, Real};

/// Reconstructed vectors for a batch of tokens, one row per entry.
pub fn forward<T: Real>(codebook: &Codebook<T>, tokens: &[usize]) -> Result<EmbeddingMatrix<T>> {
    let dim = codebook.config().embed_dim;
    let mut out = EmbeddingMatrix::zeros(tokens.len(), dim);
    for (i, &token) in tokens.iter().enumerate() {
        codebook.check_token(token)?;
        codebook.reconstruct_into(token, out.row_mut(i));
    }
    Ok(out)
}

/// Gradient of a loss with respect to the tables, given the gradient with
/// respect to the batch output. Each row's subspace slices are added into
/// the table rows its code tuple selects, in batch order.
pub fn backward<T: Real>(
    codebook: &Codebook<T>,
    tokens: &[usize],
    upstream: &EmbeddingMatrix<T>,
) -> Result<SubspaceTables<T>> {
    let config = codebook.config();
    if upstream.rows() != tokens.len() || upstream.dim() != config.embed_dim {
        return Err(Error::Data(format!(
            "upstream gradient is {}x{}, batch needs {}x{}",
            upstream.rows(),
            upstream.dim(),
            tokens.len(),
            config.embed_dim
        )));
    }
    let mut grad = SubspaceTables::zeros(config);
    accumulate(codebook, tokens, upstream, &mut grad)?;
    Ok(grad)
}

fn accumulate<T: Real>(
    codebook: &Codebook<T>,
    tokens: &[usize],
    upstream: &EmbeddingMatrix<T>,
    grad: &mut SubspaceTables<T>,
) -> Result<()> {
    let dims = &codebook.config().subspace_dims;
    for (i, &token) in tokens.iter().enumerate() {
        codebook.check_token(token)?;
        let mut slice = upstream.row(i);
        for (k, &code) in codebook.assignment().row(token).iter().enumerate() {
            let (head, tail) = slice.split_at(dims[k]);
            for (g, u) in grad
                .table_mut(k)
                .row_mut(code as usize)
                .iter_mut()
                .zip(head)
            {
                *g = *g + *u;
            }
            slice = tail;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Tokens per step. A batch at least as large as the vocabulary means a
    /// full, deterministic pass over all tokens in index order; smaller
    /// batches are drawn uniformly with replacement.
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 256,
            steps: 1000,
            seed: 0,
            init_std: 0.02,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Distilled<T = f32> {
    pub codebook: Codebook<T>,
    /// Full-matrix MSE before training followed by the MSE after each step,
    /// so `mse_history.len() == steps + 1`.
    pub mse_history: Vec<f64>,
}

fn check_target<T: Real>(target: &EmbeddingMatrix<T>, config: &SubspaceConfig) -> Result<()> {
    if target.rows() != config.vocab_size || target.dim() != config.embed_dim {
        return Err(Error::Data(format!(
            "target is {}x{}, codebook reconstructs {}x{}",
            target.rows(),
            target.dim(),
            config.vocab_size,
            config.embed_dim
        )));
    }
    Ok(())
}

/// Fits freshly initialized tables (seeded from `train.seed`) to `target`.
pub fn distill<T: Real>(
    target: &EmbeddingMatrix<T>,
    assignment: &CodeAssignment,
    config: &SubspaceConfig,
    train: &TrainConfig,
) -> Result<Distilled<T>> {
    let tables = SubspaceTables::random_normal(config, train.init_std, train.seed)?;
    let provenance = Provenance {
        algorithm: AssignmentAlgorithm::Radix,
        seed: train.seed,
        init_std: train.init_std,
    };
    let codebook = Codebook::new(
        config.clone(),
        assignment.clone(),
        tables,
        vec![],
        provenance,
    )?;
    distill_codebook(codebook, target, train)
}

/// Gradient descent on `1/2 * sum ||forward(batch) - target(batch)||^2`,
/// starting from the codebook's current tables.
pub fn distill_codebook<T: Real>(
    mut codebook: Codebook<T>,
    target: &EmbeddingMatrix<T>,
    train: &TrainConfig,
) -> Result<Distilled<T>> {
    train.validate()?;
    check_target(target, codebook.config())?;
    let vocab = codebook.config().vocab_size;
    let lr = T::from_f64(train.learning_rate)
        .ok_or_else(|| Error::InvalidConfig("learning rate not representable".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let full: Vec<usize> = (0..vocab).collect();
    let mut batch = Vec::with_capacity(train.batch_size.min(vocab));

    let mut mse_history = Vec::with_capacity(train.steps + 1);
    mse_history.push(codebook.reconstruct_all().mse(target)?);
    for _ in 0..train.steps {
        let tokens: &[usize] = if train.batch_size >= vocab {
            &full
        } else {
            batch.clear();
            batch.extend((0..train.batch_size).map(|_| rng.random_range(0..vocab)));
            &batch
        };
        let mut residual = forward(&codebook, tokens)?;
        for (i, &token) in tokens.iter().enumerate() {
            for (r, t) in residual.row_mut(i).iter_mut().zip(target.row(token)) {
                *r = *r - *t;
            }
        }
        let grad = backward(&codebook, tokens, &residual)?;
        codebook.tables_mut().axpy(-lr, &grad);
        mse_history.push(codebook.reconstruct_all().mse(target)?);
    }
    Ok(Distilled {
        codebook,
        mse_history,
    })
}

/// Exact least-squares tables: row `q` of table `k` becomes the mean of the
/// target's subspace-`k` slices over tokens with code `q` there. Rows no
/// token uses keep their `init` values.
pub fn closed_form_tables<T: Real>(
    target: &EmbeddingMatrix<T>,
    assignment: &CodeAssignment,
    config: &SubspaceConfig,
    init: SubspaceTables<T>,
) -> Result<SubspaceTables<T>> {
    check_target(target, config)?;
    if assignment.vocab_size() != config.vocab_size
        || assignment.num_subspaces() != config.num_subspaces
    {
        return Err(Error::Data("assignment shape does not match config".into()));
    }
    init.check_shapes(config)?;
    let offsets = config.offsets();
    let mut tables = init;
    for (k, (&offset, &dim)) in offsets.iter().zip(&config.subspace_dims).enumerate() {
        let mut sums = vec![0.0f64; config.table_size * dim];
        let mut counts = vec![0usize; config.table_size];
        for n in 0..config.vocab_size {
            let q = assignment.code(n, k) as usize;
            counts[q] += 1;
            let src = &target.row(n)[offset..offset + dim];
            for (s, v) in sums[q * dim..(q + 1) * dim].iter_mut().zip(src) {
                *s += v.to_f64().unwrap_or(f64::NAN);
            }
        }
        let table = tables.table_mut(k);
        for (q, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            for (dst, s) in table
                .row_mut(q)
                .iter_mut()
                .zip(&sums[q * dim..(q + 1) * dim])
            {
                *dst = T::from_f64(s / count as f64).unwrap_or_else(T::nan);
            }
        }
    }
    Ok(tables)
}

/// Closed-form fit with default initialization (seed 0) for unused rows.
pub fn closed_form_distill<T: Real>(
    target: &EmbeddingMatrix<T>,
    assignment: &CodeAssignment,
    config: &SubspaceConfig,
) -> Result<Codebook<T>> {
    let provenance = Provenance::new(AssignmentAlgorithm::Radix, 0);
    let init = SubspaceTables::random_normal(config, provenance.init_std, provenance.seed)?;
    let tables = closed_form_tables(target, assignment, config, init)?;
    Codebook::new(
        config.clone(),
        assignment.clone(),
        tables,
        vec![],
        provenance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radix::radix_assign;

    fn radix_codebook_f64(d: usize, dim: usize, f: usize, q: usize, seed: u64) -> Codebook<f64> {
        let config = SubspaceConfig::new(d, dim, f, q).unwrap();
        let tables = SubspaceTables::random_normal(&config, 1.0, seed).unwrap();
        Codebook::new(
            config,
            radix_assign(d, f, Some(q)).unwrap(),
            tables,
            vec![],
            Provenance::new(AssignmentAlgorithm::Radix, seed),
        )
        .unwrap()
    }

    #[test]
    fn forward_matches_reconstruction() {
        let cb = radix_codebook_f64(12, 6, 2, 4, 1);
        let all: Vec<usize> = (0..12).collect();
        assert_eq!(forward(&cb, &all).unwrap(), cb.reconstruct_all());
        let twice = forward(&cb, &[3, 3]).unwrap();
        assert_eq!(twice.row(0), twice.row(1));
        assert_eq!(forward(&cb, &[]).unwrap().rows(), 0);
        assert!(matches!(
            forward(&cb, &[12]),
            Err(Error::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn backward_scatters_into_selected_rows() {
        let cb = radix_codebook_f64(12, 6, 2, 4, 1);
        let ones = EmbeddingMatrix::new(1, 6, vec![1.0; 6]).unwrap();
        let g = backward(&cb, &[9], &ones).unwrap();
        // 9 = (1, 2) in base 4
        for (k, code) in [(0, 1), (1, 2)] {
            for q in 0..4 {
                let expect = if q == code { 1.0 } else { 0.0 };
                assert!(g.table(k).row(q).iter().all(|&v| v == expect));
            }
        }
        let twice = backward(
            &cb,
            &[9, 9],
            &EmbeddingMatrix::new(2, 6, vec![1.0; 12]).unwrap(),
        )
        .unwrap();
        let mut doubled = g.clone();
        doubled.scale(2.0);
        assert_eq!(twice, doubled);
        assert!(backward(
            &cb,
            &[9],
            &EmbeddingMatrix::new(1, 5, vec![1.0; 5]).unwrap()
        )
        .is_err());
    }

    #[test]
    fn flat_table_fits_in_one_step() {
        let target =
            EmbeddingMatrix::<f64>::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![4.0, 0.0]])
                .unwrap();
        let config = SubspaceConfig::new(3, 2, 1, 3).unwrap();
        let assignment = radix_assign(3, 1, Some(3)).unwrap();
        let train = TrainConfig {
            learning_rate: 1.0,
            batch_size: 3,
            steps: 1,
            ..Default::default()
        };
        let out = distill(&target, &assignment, &config, &train).unwrap();
        assert_eq!(out.mse_history.len(), 2);
        assert_eq!(out.mse_history[1], 0.0);
        let closed = closed_form_distill(&target, &assignment, &config).unwrap();
        assert_eq!(closed.reconstruct_all(), target);
    }

    #[test]
    fn forced_collision_fits_the_mean() {
        let target = EmbeddingMatrix::<f64>::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        let config = SubspaceConfig::new_lossy(2, 1, 1, 1).unwrap();
        let assignment = CodeAssignment::new(1, vec![0, 0]).unwrap();
        let closed = closed_form_distill(&target, &assignment, &config).unwrap();
        assert_eq!(closed.tables().table(0).row(0), &[2.0]);
        assert_eq!(closed.reconstruct_all().mse(&target).unwrap(), 1.0);

        let train = TrainConfig {
            learning_rate: 0.25,
            batch_size: 2,
            steps: 200,
            ..Default::default()
        };
        let out = distill(&target, &assignment, &config, &train).unwrap();
        assert!((out.codebook.tables().table(0).row(0)[0] - 2.0).abs() < 1e-12);
        assert!((out.mse_history.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn minibatch_training_reduces_error() {
        // a target the codebook can represent exactly
        let source = radix_codebook_f64(200, 8, 2, 15, 3);
        let target = source.reconstruct_all();
        let train = TrainConfig {
            learning_rate: 0.05,
            batch_size: 32,
            steps: 500,
            ..Default::default()
        };
        let out = distill(&target, source.assignment(), source.config(), &train).unwrap();
        assert!(out.mse_history.last().unwrap() < &(0.1 * out.mse_history[0]));
    }

    #[test]
    fn rejects_mismatched_target() {
        let config = SubspaceConfig::new(4, 2, 2, 2).unwrap();
        let assignment = radix_assign(4, 2, None).unwrap();
        let target = EmbeddingMatrix::<f32>::zeros(3, 2);
        assert!(distill(&target, &assignment, &config, &TrainConfig::default()).is_err());
        assert!(closed_form_distill(&target, &assignment, &config).is_err());
    }
}
