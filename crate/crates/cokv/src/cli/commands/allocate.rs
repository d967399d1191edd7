//! `cokv allocate`: scores in, per-head cache plans out, one per alpha.

use std::path::{Path, PathBuf};

use crate::allocator::{allocate, normalize_scores, AllocationConfig, AllocationPlan};
use crate::cli::config::{
    ensure_out_dir, parse_usize_list, read_scores_csv, write_json, write_manifest, write_text,
    Manifest, RunConfig,
};
use crate::cli::CliError;
use crate::game::PlayerSet;

const DEFAULT_ALPHA_SWEEP: [usize; 7] = [1, 5, 10, 15, 20, 30, 40];

pub fn run(
    cfg: RunConfig,
    scores_path: PathBuf,
    alpha: Option<usize>,
    alpha_sweep: Option<String>,
    budget: Option<u64>,
    window: Option<u64>,
) -> Result<(), CliError> {
    let out = ensure_out_dir(&cfg)?;
    let (players, scores) = read_scores_csv(&scores_path)?;
    let n = scores.len();

    let budget = budget
        .or(cfg.budget)
        .ok_or_else(|| CliError::config("no budget given: pass --budget or set it in the config"))?;
    let window = window.or(cfg.window).unwrap_or(8);

    let alphas: Vec<usize> = if let Some(text) = alpha_sweep {
        parse_usize_list(&text)?
    } else if let Some(a) = alpha.or(cfg.alpha) {
        vec![a]
    } else {
        DEFAULT_ALPHA_SWEEP.iter().copied().filter(|&a| a < n).collect()
    };
    if alphas.is_empty() {
        return Err(CliError::config(format!(
            "no usable alpha for {n} heads; pass --alpha or --alpha-sweep"
        )));
    }

    let mut outputs = vec!["manifest.json".to_string()];
    for &a in &alphas {
        let nsv = normalize_scores(&scores, a).map_err(|e| CliError::config(e.to_string()))?;
        let plan = allocate(&nsv, &AllocationConfig { budget, window, alpha: a })
            .map_err(|e| CliError::config(e.to_string()))?;
        if plan.uniform_fallback {
            eprintln!("warning: alpha {a} zeroed every head; budget split uniformly");
        }
        write_plan(&out, a, &plan, &players, &mut outputs)?;
    }
    outputs.sort();
    write_manifest(
        &out,
        &Manifest {
            command: "allocate",
            config: serde_json::json!({
                "scores": scores_path.display().to_string(),
                "n": n,
                "budget": budget,
                "window": window,
                "alphas": alphas,
            }),
            outputs,
        },
    )
}

fn write_plan(
    out: &Path,
    alpha: usize,
    plan: &AllocationPlan,
    players: &PlayerSet,
    outputs: &mut Vec<String>,
) -> Result<(), CliError> {
    let json_name = format!("plan_alpha{alpha}.json");
    let csv_name = format!("plan_alpha{alpha}.csv");
    write_json(&out.join(&json_name), plan)?;
    let mut csv_bytes = Vec::new();
    plan.write_csv(players, &mut csv_bytes)
        .map_err(|e| CliError::other(e.to_string()))?;
    write_text(
        &out.join(&csv_name),
        std::str::from_utf8(&csv_bytes).expect("csv is utf-8"),
    )?;
    outputs.push(json_name);
    outputs.push(csv_name);
    Ok(())
}
