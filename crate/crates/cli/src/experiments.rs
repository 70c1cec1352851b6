//! The `convergence` and `compare` studies.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Result};
use krigreg::correlation::kappa_for;
use krigreg::testlab::{error_report, evaluate_grid, sample_lattice, sample_random};
use krigreg::{regularize, GridField, KernelParams, KrigingModel, TestFunction, TrainingSet};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Layout};
use crate::output::{base_metadata, extend, points_hash, sidecar_path, write_atomic, write_json};

/// One (function, count) cell of a batch.
#[derive(Debug, Clone, Copy)]
struct Run {
    function: TestFunction,
    count: usize,
}

impl Run {
    fn label(self, layout: Layout) -> String {
        format!("{} {} n={}", self.function, layout.name(), self.count)
    }

    fn stem(self, layout: Layout) -> String {
        match layout {
            Layout::Random => format!("{}_n{}", self.function, self.count),
            Layout::Lattice => format!("{}_lattice_n{}", self.function, self.count),
        }
    }
}

fn runs(config: &ExperimentConfig) -> Vec<Run> {
    config
        .functions
        .iter()
        .flat_map(|&function| config.counts.iter().map(move |&count| Run { function, count }))
        .collect()
}

pub fn sample(config: &ExperimentConfig, function: TestFunction, count: usize) -> Result<TrainingSet> {
    let training = match config.layout {
        Layout::Random => sample_random(function, count, config.rng_seed)?,
        Layout::Lattice => {
            let m = (count as f64).sqrt().round() as usize;
            if m * m != count {
                bail!("lattice layout needs a square count, got {count}");
            }
            sample_lattice(function, m)?
        }
    };
    Ok(match config.constant {
        Some(c) => training.with_values(DVector::from_element(training.len(), c))?,
        None => training,
    })
}

fn run_metadata(config: &ExperimentConfig, command: &str, run: Run, points: &str) -> Value {
    extend(
        base_metadata(config),
        json!({
            "command": command,
            "function": run.function.name(),
            "count": run.count,
            "layout": config.layout.name(),
            "points_hash": points,
        }),
    )
}

/// Runs every cell, in parallel, and reports results in batch order.
/// Returns the number of failed cells.
fn execute<T: Send>(
    config: &ExperimentConfig,
    header: &str,
    body: impl Fn(Run) -> Result<T> + Sync,
    print: impl Fn(&T),
) -> usize {
    let runs = runs(config);
    let results: Vec<Result<T>> = runs.par_iter().map(|&run| body(run)).collect();
    println!("{header}");
    let mut failed = 0;
    for (run, result) in runs.iter().zip(results) {
        match result {
            Ok(v) => print(&v),
            Err(e) => {
                failed += 1;
                eprintln!("error: {}: {e:#}", run.label(config.layout));
            }
        }
    }
    failed
}

struct ConvergenceSummary {
    run: Run,
    kappa0: f64,
    kappa_final: f64,
    ratio: f64,
    iterations: usize,
}

pub fn convergence(config: &ExperimentConfig) -> usize {
    let layout = config.layout;
    execute(
        config,
        "function,layout,count,kappa0,kappa_final,kappa_ratio,iterations",
        |run| {
            let training = sample(config, run.function, run.count)?;
            let (_, trace) = regularize(&training, &config.regularizer)?;
            let path = config.out_dir.join(format!("{}_trace.csv", run.stem(layout)));
            write_atomic(&path, trace.to_csv().as_bytes())?;
            let seeding = trace.seeding.as_ref();
            let meta = extend(
                run_metadata(config, "convergence", run, &points_hash(&training)),
                json!({
                    "max_iters": trace.max_iters,
                    "kappa0": trace.kappa0,
                    "kappa_final": trace.final_kappa(),
                    "kappa_ratio": trace.improvement(),
                    "theta_start": trace.entries[0].theta,
                    "theta_final": trace.final_theta(),
                    "theta0": seeding.map(|s| s.theta0.clone()),
                    "kappa_theta0": seeding.map(|s| s.kappa_theta0),
                }),
            );
            write_json(&sidecar_path(&path), &meta)?;
            Ok(ConvergenceSummary {
                run,
                kappa0: trace.kappa0,
                kappa_final: trace.final_kappa(),
                ratio: trace.improvement(),
                iterations: trace.entries.len() - 1,
            })
        },
        |s| {
            println!(
                "{},{},{},{:e},{:e},{:e},{}",
                s.run.function,
                layout.name(),
                s.run.count,
                s.kappa0,
                s.kappa_final,
                s.ratio,
                s.iterations
            )
        },
    )
}

#[derive(Debug, Serialize)]
struct VariantReport {
    metadata: Value,
    variant: &'static str,
    theta: Vec<f64>,
    kappa: f64,
    rmse: f64,
    max_abs: f64,
    roughness: f64,
    kappa_before: f64,
    kappa_after: f64,
    theta_before: Vec<f64>,
    theta_after: Vec<f64>,
    points_hash: String,
}

struct CompareSummary {
    run: Run,
    rows: Vec<(&'static str, f64, f64, f64, f64)>,
}

fn write_field(path: PathBuf, field: &GridField, meta: Value) -> Result<()> {
    write_atomic(&path, field.to_csv().as_bytes())?;
    write_json(&sidecar_path(&path), &field.sidecar(meta))
}

pub fn compare(config: &ExperimentConfig) -> usize {
    let layout = config.layout;
    let res = (config.grid, config.grid);
    execute(
        config,
        "function,layout,count,variant,rmse,max_abs,roughness,kappa",
        |run| {
            // Both variants are fitted to this one training set.
            let training = sample(config, run.function, run.count)?;
            let hash = points_hash(&training);
            let truth = match config.constant {
                Some(c) => GridField::from_fn(run.function.domain(), res, |_| Ok(c))?,
                None => evaluate_grid(&run.function, res)?,
            };
            let theta_before = config.regularizer.resolve_theta0(training.dim())?;
            let kappa_before = kappa_for(training.normalized(), &KernelParams::new(theta_before.clone())?)?;
            let (reg_params, trace) = regularize(&training, &config.regularizer)?;
            let theta_after = reg_params.theta().to_vec();
            let kappa_after = trace.final_kappa();

            let mut rows = Vec::new();
            for (variant, theta) in [("baseline", &theta_before), ("regularized", &theta_after)] {
                let model = KrigingModel::fit(training.clone(), KernelParams::new(theta.clone())?)
                    .map_err(|e| anyhow!("{variant} fit: {e}"))?;
                let surface = evaluate_grid(&model, res)?;
                let report = error_report(&truth, &surface)?;
                let meta = extend(
                    run_metadata(config, "compare", run, &hash),
                    json!({ "variant": variant, "theta": theta }),
                );
                let stem = format!("{}_{variant}", run.stem(layout));
                write_field(config.out_dir.join(format!("{stem}_surface.csv")), &surface, meta.clone())?;
                write_field(config.out_dir.join(format!("{stem}_error.csv")), &report.field, meta.clone())?;
                let doc = VariantReport {
                    metadata: meta,
                    variant,
                    theta: theta.clone(),
                    kappa: model.kappa(),
                    rmse: report.rmse,
                    max_abs: report.max_abs,
                    roughness: report.roughness,
                    kappa_before,
                    kappa_after,
                    theta_before: theta_before.clone(),
                    theta_after: theta_after.clone(),
                    points_hash: hash.clone(),
                };
                write_json(&config.out_dir.join(format!("{stem}_report.json")), &doc)?;
                rows.push((variant, report.rmse, report.max_abs, report.roughness, model.kappa()));
            }
            Ok(CompareSummary { run, rows })
        },
        |s| {
            for (variant, rmse, max_abs, rough, kappa) in &s.rows {
                println!(
                    "{},{},{},{variant},{rmse:e},{max_abs:e},{rough:e},{kappa:e}",
                    s.run.function,
                    layout.name(),
                    s.run.count
                );
            }
        },
    )
}
