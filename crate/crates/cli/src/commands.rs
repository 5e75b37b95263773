use std::fmt::Write as _;
use std::fs;

use subspace_core::cluster::{cluster_codebook, shared_prefix_similarity_report};
use subspace_core::gradcheck::{gradient_check, DEFAULT_TOLERANCE};
use subspace_core::io::{read_codebook, read_matrix_any, write_codebook, write_matrix};
use subspace_core::layer::{distill_codebook, forward, TrainConfig};
use subspace_core::{
    compression_ratio, format_percent, radix_codebook, verify_uniqueness, Codebook, KMeansParams,
    Result, SubspaceConfig,
};

use crate::args::{
    ClusterAssign, CodebookArg, Command, Distill, GradCheck, RadixAssign, Reconstruct, Stats,
};
use crate::{EXIT_USAGE, EXIT_VERIFY_FAILED};

pub fn run(command: Command) -> Result<u8> {
    match command {
        Command::RadixAssign(args) => radix_assign(args),
        Command::ClusterAssign(args) => cluster_assign(args),
        Command::Reconstruct(args) => reconstruct(args),
        Command::Verify(args) => verify(args),
        Command::Stats(args) => stats(args),
        Command::Distill(args) => distill(args),
        Command::GradCheck(args) => grad_check(args),
    }
}

fn summary(config: &SubspaceConfig) -> Result<String> {
    let params = config.param_count();
    let baseline = (config.vocab_size * config.embed_dim) as u64;
    let reduction = compression_ratio(params, baseline)?;
    Ok(format!(
        "Q={}\nparams={params}\nbaseline={baseline}\nreduction={}\n",
        config.table_size,
        format_percent(reduction)
    ))
}

fn radix_assign(args: RadixAssign) -> Result<u8> {
    let c = &args.common;
    let codebook = radix_codebook(
        args.vocab_size,
        c.dim,
        args.subspaces,
        args.table_size,
        &c.reserved,
        c.seed,
        c.init_std,
    )?;
    write_codebook(&args.out, &codebook)?;
    print!("{}", summary(codebook.config())?);
    Ok(0)
}

fn cluster_assign(args: ClusterAssign) -> Result<u8> {
    let c = &args.common;
    let pretrained = read_matrix_any(&args.pretrained)?;
    let config = SubspaceConfig::new(pretrained.rows(), c.dim, args.subspaces, args.table_size)?;
    let params = KMeansParams {
        k: args.table_size,
        max_iters: args.max_iters,
        tol: args.tol,
        seed: c.seed,
        balanced: args.balanced,
    };
    let (codebook, detail) =
        cluster_codebook(&pretrained, &config, &params, &c.reserved, c.init_std)?;
    write_codebook(&args.out, &codebook)?;

    let mut out = summary(&config)?;
    for (level, sizes) in detail.level_group_sizes.iter().enumerate() {
        let mut histogram = std::collections::BTreeMap::new();
        for &s in sizes {
            *histogram.entry(s).or_insert(0usize) += 1;
        }
        let cells: Vec<String> = histogram
            .iter()
            .map(|(size, n)| format!("{size}x{n}"))
            .collect();
        writeln!(
            out,
            "level {}: {} groups, size x count: {}",
            level + 1,
            sizes.len(),
            cells.join(" ")
        )
        .expect("string write");
    }
    let report = shared_prefix_similarity_report(
        &pretrained,
        codebook.assignment(),
        args.max_pairs,
        c.seed,
    )?;
    out.push_str(&report.to_string());
    print!("{out}");
    Ok(0)
}

fn reconstruct(args: Reconstruct) -> Result<u8> {
    let codebook = read_codebook(&args.codebook)?;
    let matrix = match &args.tokens {
        Some(tokens) => forward(&codebook, tokens)?,
        None => codebook.reconstruct_all(),
    };
    write_matrix(&args.out, &matrix)?;
    println!("rows={}\ndim={}", matrix.rows(), matrix.dim());
    Ok(0)
}

fn verify(args: CodebookArg) -> Result<u8> {
    let codebook = read_codebook(&args.codebook)?;
    let config = codebook.config();
    let mut failures = Vec::new();
    let u = verify_uniqueness(codebook.assignment());
    if let Some((i, j)) = u.first_collision {
        failures.push(format!("collision={i},{j}"));
    }
    if !config.has_capacity() {
        failures.push(format!(
            "capacity: {}^{} < {}",
            config.table_size, config.num_subspaces, config.vocab_size
        ));
    }
    println!("unique={}", u.unique);
    println!("capacity={}", config.has_capacity());
    if failures.is_empty() {
        println!("ok");
        Ok(0)
    } else {
        for f in &failures {
            println!("{f}");
        }
        Ok(EXIT_VERIFY_FAILED)
    }
}

/// Human-readable table followed by a `key=value` block.
pub fn render_stats(codebook: &Codebook, baseline: Option<u64>) -> Result<String> {
    let config = codebook.config();
    let params = codebook.param_count();
    let baseline = baseline.unwrap_or((config.vocab_size * config.embed_dim) as u64);
    let reduction = format_percent(compression_ratio(params, baseline)?);
    let dims: Vec<String> = config.subspace_dims.iter().map(usize::to_string).collect();
    let dims = dims.join(",");
    let unique = verify_uniqueness(codebook.assignment()).unique;
    let algorithm = codebook.provenance().algorithm;

    let rows: [(&str, String); 11] = [
        ("algorithm", algorithm.to_string()),
        ("vocab_size", config.vocab_size.to_string()),
        ("embed_dim", config.embed_dim.to_string()),
        ("subspaces", config.num_subspaces.to_string()),
        ("table_size", config.table_size.to_string()),
        ("subspace_dims", dims),
        ("params", params.to_string()),
        ("baseline", baseline.to_string()),
        ("reduction", reduction),
        ("unique", unique.to_string()),
        ("seed", codebook.provenance().seed.to_string()),
    ];
    let mut out = String::new();
    writeln!(
        out,
        "{params} parameters vs {baseline} flat ({}% smaller)",
        rows[8].1
    )
    .expect("string write");
    for (key, value) in &rows {
        writeln!(out, "  {key:<14} {value}").expect("string write");
    }
    out.push('\n');
    for (key, value) in &rows {
        writeln!(out, "{key}={value}").expect("string write");
    }
    Ok(out)
}

fn stats(args: Stats) -> Result<u8> {
    let codebook = read_codebook(&args.codebook)?;
    print!("{}", render_stats(&codebook, args.baseline_params)?);
    Ok(0)
}

fn distill(args: Distill) -> Result<u8> {
    let codebook = read_codebook(&args.codebook)?;
    let target = read_matrix_any(&args.target)?;
    let train = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        steps: args.steps,
        seed: args.seed,
        init_std: codebook.provenance().init_std,
    };
    let result = distill_codebook(codebook, &target, &train)?;
    write_codebook(&args.out, &result.codebook)?;
    let mut csv = String::from("step,mse\n");
    for (step, mse) in result.mse_history.iter().enumerate() {
        writeln!(csv, "{step},{mse:.9e}").expect("string write");
    }
    fs::write(&args.history, csv)?;
    let first = result.mse_history.first().copied().unwrap_or(f64::NAN);
    let last = result.mse_history.last().copied().unwrap_or(f64::NAN);
    println!("initial_mse={first:.9e}\nfinal_mse={last:.9e}");
    Ok(0)
}

fn grad_check(args: GradCheck) -> Result<u8> {
    let [vocab, dim, f, q] = args.dims[..] else {
        eprintln!("error: --dims takes exactly four values D,d,f,Q");
        return Ok(EXIT_USAGE);
    };
    let report = gradient_check(vocab, dim, f, q, args.seed)?;
    println!(
        "entries={}\nmax_abs_error={:.3e}\nmax_rel_error={:.3e}",
        report.entries, report.max_abs_error, report.max_rel_error
    );
    if report.passes(DEFAULT_TOLERANCE) {
        println!("ok");
        Ok(0)
    } else {
        println!("failed: tolerance {DEFAULT_TOLERANCE:e}");
        Ok(EXIT_VERIFY_FAILED)
    }
}
