use std::fs;
use std::path::Path;

use missnet::synth::{NoiseScale, RNG_ALGORITHM};
use missnet::{
    fit, generate_dataset, inject_missing, regime_accuracy, rmse, scaling_table, zscore, BenchConfig, Hyperparams,
    PartialSeries, Pattern, RegimePath, SynthSpec,
};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::io::{read_regimes, read_table, write_json, write_matrix, write_regimes, write_text};
use crate::network::{export, to_dot};
use crate::{BenchArgs, EvalArgs, GlobalArgs, ImputeArgs, NoiseScaleArg, PatternArg, SynthArgs};

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn impute(global: &GlobalArgs, args: &ImputeArgs) -> Result<()> {
    let table = read_table(&args.input)?;
    let series = table.to_series()?;
    let hyper = Hyperparams {
        latent_dim: args.latent_dim,
        num_regimes: args.num_regimes,
        alpha: args.alpha,
        lambda: args.lambda,
        max_iter: global.max_iter,
        tol: global.tol,
        seed: global.seed,
        restarts: global.restarts,
        ..Hyperparams::default()
    };
    hyper.validate()?;
    if args.edge_threshold.is_nan() || args.edge_threshold < 0.0 {
        return Err(CliError::Input("--edge-threshold must be nonnegative".into()));
    }
    out_dir(&args.out_dir)?;

    log::info!(
        "fitting {} features x {} timesteps, {:.1}% missing",
        series.num_features(),
        series.len(),
        100.0 * series.missing_fraction()
    );
    let (imputed, result) = if args.raw {
        let result = fit(&series, &hyper)?;
        (result.imputed.clone(), result)
    } else {
        let (scaled, z) = zscore(&series)?;
        let result = fit(&scaled, &hyper)?;
        (z.invert(&result.imputed), result)
    };
    for w in &result.report.warnings {
        log::warn!("{w}");
    }

    let dir = &args.out_dir;
    // Observed cells are copied from the input so they survive unchanged.
    write_matrix(
        &dir.join("imputed.csv"),
        &table.names,
        |i, t| Some(table.cells[i][t].unwrap_or(imputed[(i, t)])),
        table.len(),
    )?;
    write_regimes(&dir.join("regimes.csv"), &result.latents.path)?;
    let networks = export(&table.names, &result.params.networks, args.edge_threshold, !args.raw)?;
    write_json(&dir.join("networks.json"), &networks)?;
    if args.dot {
        write_text(&dir.join("networks.dot"), &to_dot(&networks))?;
    }
    write_json(&dir.join("report.json"), &result.report)?;
    log::info!(
        "{} iterations, converged: {}",
        result.report.iterations,
        result.report.converged
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SynthMetadata {
    pattern: &'static str,
    spec: SynthSpec,
    missing_rate: f64,
    max_block_frac: f64,
    seed: u64,
    mask_seed: u64,
    rng: &'static str,
    achieved_missing_rate: f64,
}

pub fn synth(global: &GlobalArgs, args: &SynthArgs) -> Result<()> {
    let pattern = match args.pattern {
        PatternArg::A => Pattern::A,
        PatternArg::B => Pattern::B,
    };
    let spec = SynthSpec {
        len: args.len,
        num_features: args.num_features,
        latent_dim: args.latent_dim,
        switch_period: args.switch_period,
        noise_level: args.noise_level,
        noise_scale: match args.noise_scale {
            NoiseScaleArg::Variance => NoiseScale::Variance,
            NoiseScaleArg::Std => NoiseScale::StdDev,
        },
        trend: !args.no_trend,
        ..SynthSpec::for_pattern(pattern, global.seed)
    };
    spec.validate()?;
    if !(0.0..1.0).contains(&args.missing_rate) {
        return Err(CliError::Input("--missing-rate must lie in [0, 1)".into()));
    }
    let data = generate_dataset::<f64>(&spec, pattern)?;
    let mask_seed = global.seed.wrapping_add(1);
    let observed = if args.missing_rate > 0.0 {
        inject_missing(&data.clean, args.missing_rate, args.max_block_frac, mask_seed)?
    } else {
        PartialSeries::fully_observed(data.clean.clone())?
    };

    out_dir(&args.out_dir)?;
    let dir = &args.out_dir;
    let names: Vec<String> = (0..spec.num_features).map(|i| format!("x{i}")).collect();
    let len = spec.len;
    write_matrix(&dir.join("clean.csv"), &names, |i, t| Some(data.clean[(i, t)]), len)?;
    write_matrix(
        &dir.join("observed.csv"),
        &names,
        |i, t| observed.is_observed(i, t).then(|| data.clean[(i, t)]),
        len,
    )?;
    write_matrix(
        &dir.join("mask.csv"),
        &names,
        |i, t| Some(if observed.is_observed(i, t) { 1.0 } else { 0.0 }),
        len,
    )?;
    write_regimes(&dir.join("truth_regimes.csv"), &data.true_path)?;
    let meta = SynthMetadata {
        pattern: match pattern {
            Pattern::A => "A",
            Pattern::B => "B",
        },
        spec,
        missing_rate: args.missing_rate,
        max_block_frac: args.max_block_frac,
        seed: global.seed,
        mask_seed,
        rng: RNG_ALGORITHM,
        achieved_missing_rate: observed.missing_fraction(),
    };
    write_json(&dir.join("metadata.json"), &meta)
}

fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(CliError::Input(format!(
            "{what} has {} features x {} timesteps, truth has {} x {}",
            got.0, got.1, want.0, want.1
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    regime_accuracy: Option<f64>,
}

fn regime_path(labels: Vec<usize>, num_regimes: usize) -> Result<RegimePath> {
    Ok(RegimePath::new(labels, num_regimes)?)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let truth_table = read_table(&args.truth)?;
    let shape = truth_table.shape();
    let truth = truth_table.to_dense("truth")?;
    let imputed_table = read_table(&args.imputed)?;
    check_shape("imputed", imputed_table.shape(), shape)?;
    let imputed = imputed_table.to_dense("imputed")?;

    let scored: DMatrix<bool> = if let Some(path) = &args.eval_mask {
        let t = read_table(path)?;
        check_shape("eval mask", t.shape(), shape)?;
        t.to_mask("eval mask")?
    } else if let Some(path) = &args.mask {
        let t = read_table(path)?;
        check_shape("mask", t.shape(), shape)?;
        t.to_mask("mask")?.map(|observed| !observed)
    } else {
        DMatrix::from_element(shape.0, shape.1, true)
    };

    let regime_accuracy = match (&args.truth_regimes, &args.regimes) {
        (Some(tp), Some(ep)) => {
            let (truth_labels, est_labels) = (read_regimes(tp)?, read_regimes(ep)?);
            if truth_labels.len() != est_labels.len() {
                return Err(CliError::Input(format!(
                    "regime files have {} and {} timesteps",
                    truth_labels.len(),
                    est_labels.len()
                )));
            }
            let k = truth_labels.iter().chain(&est_labels).max().map_or(1, |m| m + 1);
            Some(regime_accuracy(&regime_path(truth_labels, k)?, &regime_path(est_labels, k)?, k)?)
        }
        _ => None,
    };

    let report = EvalReport {
        rmse: rmse(&truth, &imputed, &scored)?,
        regime_accuracy,
    };
    let text = serde_json::to_string(&report).map_err(|e| CliError::Input(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub fn bench(global: &GlobalArgs, args: &BenchArgs) -> Result<()> {
    if args.lens.is_empty() {
        return Err(CliError::Input("--lens needs at least one length".into()));
    }
    let mut lens = args.lens.clone();
    lens.sort_unstable();
    lens.dedup();
    let cfg = BenchConfig {
        num_features: args.num_features,
        latent_dim: args.latent_dim,
        missing_rate: args.missing_rate,
        warmup: args.warmup,
        repeats: args.repeats,
        seed: global.seed,
    };
    let rows = scaling_table::<f64>(&lens, &cfg)?;
    if args.json {
        let text = serde_json::to_string_pretty(&rows).map_err(|e| CliError::Input(e.to_string()))?;
        println!("{text}");
        return Ok(());
    }
    let base = rows[0].seconds;
    println!("{:>8}  {:>14}  {:>8}", "len", "sec_per_iter", "ratio");
    for r in &rows {
        println!("{:>8}  {:>14.6}  {:>8.3}", r.len, r.seconds, r.seconds / base);
    }
    Ok(())
}
