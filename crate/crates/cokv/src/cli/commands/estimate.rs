//! `cokv estimate`: two independent sampling runs with periodic MAE checks.
//!
//! Both runs advance in lockstep checkpoint by checkpoint; after each chunk
//! the tables are saved (so a killed run resumes exactly) and, once both
//! runs have full coverage, the mean absolute difference between their
//! estimates is compared against 1/n. On convergence the two value vectors
//! are averaged into the final importance scores.

use std::path::PathBuf;

use serde::Serialize;

use crate::cli::config::{
    derive_seed, ensure_out_dir, load_oracle, write_json, write_manifest, write_text, Manifest,
    RunConfig,
};
use crate::cli::CliError;
use crate::estimator::{
    extend_table, finalize_estimate, load_table_expecting, mae, save_table, ContributionTable,
    EstimateConfig, SliceSchedule, SsvEstimate,
};
use crate::game::PlayerSet;

pub struct Flags {
    pub game: Option<PathBuf>,
    pub slices: Option<String>,
    pub samples: Option<u64>,
    pub schedule: Option<String>,
    pub mirror_credit: bool,
    pub resume: bool,
    pub checkpoint: Option<u64>,
}

#[derive(Serialize)]
struct ResolvedConfig {
    n: usize,
    slice_set: Vec<usize>,
    sample_cap: u64,
    seed: u64,
    seed_run_a: u64,
    seed_run_b: u64,
    workers: usize,
    schedule: SliceSchedule,
    mirror_credit: bool,
    checkpoint_samples: u64,
    converged: bool,
    final_samples_per_run: u64,
    final_mae: Option<f64>,
    mae_threshold: f64,
}

struct Run {
    cfg: EstimateConfig,
    table: ContributionTable,
    evals: u64,
}

pub fn run(cfg: RunConfig, flags: Flags) -> Result<(), CliError> {
    let out = ensure_out_dir(&cfg)?;
    let (oracle, players) = load_oracle(&cfg, flags.game.as_deref())?;
    let n = oracle.player_count();
    let slices = cfg.resolve_slices(flags.slices.as_deref(), n)?;
    let cap = flags.samples.or(cfg.samples).unwrap_or(50_000);
    let schedule = match flags.schedule.as_deref() {
        Some("round-robin") => SliceSchedule::RoundRobin,
        Some("iid") => SliceSchedule::Iid,
        Some(other) => {
            return Err(CliError::config(format!(
                "unknown schedule {other:?}; use round-robin or iid"
            )))
        }
        None => cfg.schedule.unwrap_or_default(),
    };
    let mirror = flags.mirror_credit || cfg.mirror_credit.unwrap_or(false);
    let seed = cfg.seed();
    let workers = cfg.workers();
    let checkpoint = flags
        .checkpoint
        .or(cfg.checkpoint_samples)
        .unwrap_or_else(|| (cap / 50).max(100));
    if checkpoint == 0 {
        return Err(CliError::config("checkpoint interval must be at least 1"));
    }

    let table_a_path = out.join("table_a.bin");
    let table_b_path = out.join("table_b.bin");
    let make_run = |salt: u64, path: &std::path::Path| -> Result<Run, CliError> {
        let run_seed = derive_seed(seed, salt);
        let est_cfg = EstimateConfig::new(slices.clone(), cap, run_seed)
            .with_workers(workers)
            .with_schedule(schedule)
            .with_mirror_credit(mirror);
        est_cfg.validate(n)?;
        let table = if flags.resume && path.exists() {
            load_table_expecting(path, n, slices.sizes())?
        } else {
            ContributionTable::new(n, &slices, run_seed)
        };
        Ok(Run { cfg: est_cfg, table, evals: 0 })
    };
    let mut run_a = make_run(1, &table_a_path)?;
    let mut run_b = make_run(2, &table_b_path)?;

    let threshold = 1.0 / n as f64;
    let mut log_lines = vec!["samples,mae,threshold,converged".to_string()];
    let mut converged_now = false;
    let mut final_mae = None;

    while run_a.table.samples_drawn() < cap {
        let chunk = checkpoint.min(cap - run_a.table.samples_drawn());
        for run in [&mut run_a, &mut run_b] {
            let before = oracle.evaluations();
            extend_table(oracle.as_ref(), &run.cfg, &mut run.table, chunk)?;
            run.evals += oracle.evaluations() - before;
        }
        save_table(&run_a.table, &table_a_path)?;
        save_table(&run_b.table, &table_b_path)?;

        let drawn = run_a.table.samples_drawn();
        let estimates = (
            finalize_estimate(&run_a.table, run_a.evals),
            finalize_estimate(&run_b.table, run_b.evals),
        );
        match estimates {
            (Ok(a), Ok(b)) => {
                let err = mae(&a, &b)?;
                final_mae = Some(err);
                converged_now = err < threshold;
                log_lines.push(format!("{drawn},{err},{threshold},{converged_now}"));
                println!("samples={drawn} mae={err:.6} threshold={threshold:.6}");
                if converged_now {
                    break;
                }
            }
            _ => {
                log_lines.push(format!("{drawn},,{threshold},false"));
                println!("samples={drawn} mae=n/a (coverage incomplete)");
            }
        }
    }

    let mut outputs = vec!["table_a.bin".to_string(), "table_b.bin".to_string()];
    let est_a = finalize_estimate(&run_a.table, run_a.evals);
    let est_b = finalize_estimate(&run_b.table, run_b.evals);
    if let (Ok(a), Ok(b)) = (&est_a, &est_b) {
        write_estimate(&out, "estimate_a", a, &players, &mut outputs)?;
        write_estimate(&out, "estimate_b", b, &players, &mut outputs)?;
        let averaged = average_estimates(a, b, seed);
        write_estimate(&out, "estimate_avg", &averaged, &players, &mut outputs)?;
    }
    write_text(&out.join("convergence.csv"), &(log_lines.join("\n") + "\n"))?;
    outputs.push("convergence.csv".to_string());
    outputs.push("manifest.json".to_string());
    outputs.sort();

    let resolved = ResolvedConfig {
        n,
        slice_set: slices.sizes().to_vec(),
        sample_cap: cap,
        seed,
        seed_run_a: run_a.cfg.seed,
        seed_run_b: run_b.cfg.seed,
        workers,
        schedule,
        mirror_credit: mirror,
        checkpoint_samples: checkpoint,
        converged: converged_now,
        final_samples_per_run: run_a.table.samples_drawn(),
        final_mae,
        mae_threshold: threshold,
    };
    write_manifest(&out, &Manifest { command: "estimate", config: resolved, outputs })?;

    if !converged_now {
        if est_a.is_err() || est_b.is_err() {
            return Err(CliError::convergence(format!(
                "sample cap {cap} reached with incomplete coverage; partial tables saved under {}",
                out.display()
            )));
        }
        return Err(CliError::convergence(format!(
            "sample cap {cap} reached with MAE {:.6} >= 1/{n}; artifacts saved under {}",
            final_mae.unwrap_or(f64::NAN),
            out.display()
        )));
    }
    println!("converged: estimates written under {}", out.display());
    Ok(())
}

fn write_estimate(
    out: &std::path::Path,
    stem: &str,
    estimate: &SsvEstimate,
    players: &PlayerSet,
    outputs: &mut Vec<String>,
) -> Result<(), CliError> {
    write_json(&out.join(format!("{stem}.json")), estimate)?;
    let mut csv_bytes = Vec::new();
    estimate
        .write_csv(players, &mut csv_bytes)
        .map_err(|e| CliError::other(e.to_string()))?;
    write_text(
        &out.join(format!("{stem}.csv")),
        std::str::from_utf8(&csv_bytes).expect("csv is utf-8"),
    )?;
    outputs.push(format!("{stem}.json"));
    outputs.push(format!("{stem}.csv"));
    Ok(())
}

/// The final scores are the mean of the two runs' values (and per-slice
/// means), with sample and evaluation counts accumulated.
fn average_estimates(a: &SsvEstimate, b: &SsvEstimate, seed: u64) -> SsvEstimate {
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x + y) / 2.0)
        .collect();
    let per_slice_means = a
        .per_slice_means
        .iter()
        .zip(&b.per_slice_means)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x + y) / 2.0).collect())
        .collect();
    SsvEstimate {
        values,
        per_slice_means,
        slice_sizes: a.slice_sizes.clone(),
        total_samples: a.total_samples + b.total_samples,
        oracle_evaluations: a.oracle_evaluations + b.oracle_evaluations,
        seed,
    }
}
