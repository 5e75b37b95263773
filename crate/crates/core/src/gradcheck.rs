//! Central finite-difference check of [`backward`](crate::layer::backward)
//! on the loss `1/2 * ||forward(batch)||^2`. The numerical side only ever
//! calls `forward`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codebook::{AssignmentAlgorithm, CodeAssignment, Codebook, Provenance, SubspaceTables};
use crate::config::SubspaceConfig;
use crate::error::Result;
use crate::layer::{backward, forward};
use crate::radix::digits;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

fn half_sq_norm(codebook: &Codebook<f64>, batch: &[usize]) -> Result<f64> {
    Ok(0.5
        * forward(codebook, batch)?
            .as_slice()
            .iter()
            .map(|v| v * v)
            .sum::<f64>())
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares every analytic table gradient against central differences.
pub fn check_codebook(
    codebook: &Codebook<f64>,
    batch: &[usize],
    step: f64,
) -> Result<GradCheckReport> {
    let output = forward(codebook, batch)?;
    let analytic = backward(codebook, batch, &output)?;

    let mut probe = codebook.clone();
    let mut report = GradCheckReport {
        entries: 0,
        max_abs_error: 0.0,
        max_rel_error: 0.0,
    };
    for k in 0..codebook.tables().len() {
        for idx in 0..codebook.tables().table(k).as_slice().len() {
            let original = probe.tables().table(k).as_slice()[idx];
            probe.tables_mut().table_mut(k).as_mut_slice()[idx] = original + step;
            let plus = half_sq_norm(&probe, batch)?;
            probe.tables_mut().table_mut(k).as_mut_slice()[idx] = original - step;
            let minus = half_sq_norm(&probe, batch)?;
            probe.tables_mut().table_mut(k).as_mut_slice()[idx] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.table(k).as_slice()[idx];
            report.entries += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
        }
    }
    Ok(report)
}

/// Random instance of the given shape: standard-normal tables, radix codes
/// (wrapping when `table_size^num_subspaces < vocab_size`), and a batch of
/// every token plus a few repeated ones.
pub fn random_instance(
    vocab_size: usize,
    embed_dim: usize,
    num_subspaces: usize,
    table_size: usize,
    seed: u64,
) -> Result<(Codebook<f64>, Vec<usize>)> {
    let config = SubspaceConfig::new_lossy(vocab_size, embed_dim, num_subspaces, table_size)?;
    let mut codes = vec![0u32; vocab_size * num_subspaces];
    for (n, row) in codes.chunks_exact_mut(num_subspaces).enumerate() {
        digits(n, table_size, row);
    }
    let tables = SubspaceTables::random_normal(&config, 1.0, seed)?;
    let codebook = Codebook::new(
        config,
        CodeAssignment::new(num_subspaces, codes)?,
        tables,
        vec![],
        Provenance {
            algorithm: AssignmentAlgorithm::Radix,
            seed,
            init_std: 1.0,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut batch: Vec<usize> = (0..vocab_size).collect();
    batch.extend((0..vocab_size.min(4)).map(|_| rng.random_range(0..vocab_size)));
    Ok((codebook, batch))
}

pub fn gradient_check(
    vocab_size: usize,
    embed_dim: usize,
    num_subspaces: usize,
    table_size: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (codebook, batch) =
        random_instance(vocab_size, embed_dim, num_subspaces, table_size, seed)?;
    check_codebook(&codebook, &batch, DEFAULT_STEP)
}
