//! `cokv convergence-report`: recompute the two-run MAE from saved tables.

use std::path::PathBuf;

use serde::Serialize;

use crate::cli::config::{ensure_out_dir, write_json, write_manifest, Manifest, RunConfig};
use crate::cli::CliError;
use crate::estimator::{finalize_estimate, load_table, mae};

#[derive(Serialize)]
struct ConvergenceReport {
    n: usize,
    slice_sizes: Vec<usize>,
    samples_a: u64,
    samples_b: u64,
    mae: f64,
    threshold: f64,
    converged: bool,
}

pub fn run(cfg: RunConfig, table_a: PathBuf, table_b: PathBuf) -> Result<(), CliError> {
    let out = ensure_out_dir(&cfg)?;
    let a = load_table(&table_a)?;
    let b = load_table(&table_b)?;
    let est_a = finalize_estimate(&a, 0)?;
    let est_b = finalize_estimate(&b, 0)?;
    let err = mae(&est_a, &est_b)?;
    let n = a.player_count();
    let threshold = 1.0 / n as f64;
    let report = ConvergenceReport {
        n,
        slice_sizes: a.slice_sizes().to_vec(),
        samples_a: a.samples_drawn(),
        samples_b: b.samples_drawn(),
        mae: err,
        threshold,
        converged: err < threshold,
    };
    println!(
        "samples_a={} samples_b={} mae={:.6} threshold={:.6} converged={}",
        report.samples_a, report.samples_b, report.mae, report.threshold, report.converged
    );
    write_json(&out.join("convergence_report.json"), &report)?;
    write_manifest(
        &out,
        &Manifest {
            command: "convergence-report",
            config: serde_json::json!({
                "table_a": table_a.display().to_string(),
                "table_b": table_b.display().to_string(),
            }),
            outputs: vec!["convergence_report.json".into(), "manifest.json".into()],
        },
    )
}
