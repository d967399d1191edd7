//! `cokv evict`: apply an allocation plan to head tensor files and report
//! retained indices plus attention-mass diagnostics.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::allocator::AllocationPlan;
use crate::cli::config::{
    ensure_out_dir, write_json, write_manifest, write_text, Manifest, RunConfig,
};
use crate::cli::CliError;
use crate::evictor::{
    evict, pooled_scores, read_tensor_file, retained_attention_mass, PoolingConfig,
};

#[derive(Serialize)]
struct HeadReport {
    head: usize,
    tensor: String,
    budget: u64,
    window: usize,
    seq_len: usize,
    retained_rows: usize,
    retained_prefix_indices: Vec<usize>,
    prefix_scores: Vec<f64>,
    retained_mass_per_query: Vec<f64>,
    retained_mass_mean: f64,
}

pub fn run(
    cfg: RunConfig,
    plan_path: PathBuf,
    tensors: Vec<PathBuf>,
    head: Option<usize>,
    kernel: Option<usize>,
) -> Result<(), CliError> {
    let out = ensure_out_dir(&cfg)?;
    let plan: AllocationPlan = serde_json::from_str(
        &std::fs::read_to_string(&plan_path)
            .map_err(|e| CliError::config(format!("reading {}: {e}", plan_path.display())))?,
    )
    .map_err(|e| CliError::config(format!("parsing {}: {e}", plan_path.display())))?;

    let kernel = kernel.or(cfg.pooling_kernel).unwrap_or(7);
    let pooling = PoolingConfig::new(kernel).map_err(|e| CliError::config(e.to_string()))?;

    let assignments: Vec<(usize, &Path)> = match head {
        Some(index) => {
            if tensors.len() != 1 {
                return Err(CliError::config(format!(
                    "--head pins a single tensor to one plan entry; got {} tensor files",
                    tensors.len()
                )));
            }
            vec![(index, tensors[0].as_path())]
        }
        None => tensors.iter().enumerate().map(|(i, p)| (i, p.as_path())).collect(),
    };
    for &(index, _) in &assignments {
        if index >= plan.head_count() {
            return Err(CliError::config(format!(
                "head {index} outside the plan's {} heads",
                plan.head_count()
            )));
        }
    }

    let mut outputs = vec!["manifest.json".to_string(), "eviction_summary.csv".to_string()];
    let mut summary = vec!["head,tensor,budget,retained_rows,retained_mass_mean".to_string()];
    for (index, path) in assignments {
        let bundle = read_tensor_file(path)?;
        if bundle.window_len() as u64 != plan.window {
            return Err(CliError::config(format!(
                "{}: window length {} does not match the plan's window {}",
                path.display(),
                bundle.window_len(),
                plan.window
            )));
        }
        let budget = plan.cache_sizes[index];
        let result = evict(&bundle, budget, &pooling)?;
        let prefix_scores = pooled_scores(&bundle.q_win, &bundle.k_out, &pooling)?;
        let mut masses = Vec::with_capacity(bundle.window_len());
        for q in 0..bundle.window_len() {
            let probe: Vec<f32> = bundle.q_win.row(q).to_vec();
            masses.push(retained_attention_mass(&bundle, &result, &probe)?);
        }
        let mass_mean = masses.iter().sum::<f64>() / masses.len().max(1) as f64;

        let report = HeadReport {
            head: index,
            tensor: path.display().to_string(),
            budget,
            window: bundle.window_len(),
            seq_len: bundle.seq_len(),
            retained_rows: result.retained_rows(),
            retained_prefix_indices: result.retained_prefix_indices.clone(),
            prefix_scores,
            retained_mass_per_query: masses,
            retained_mass_mean: mass_mean,
        };
        let name = format!("evict_head{index}.json");
        write_json(&out.join(&name), &report)?;
        outputs.push(name);
        summary.push(format!(
            "{index},{},{budget},{},{mass_mean}",
            path.display(),
            result.retained_rows()
        ));
    }
    write_text(&out.join("eviction_summary.csv"), &(summary.join("\n") + "\n"))?;
    outputs.sort();
    write_manifest(
        &out,
        &Manifest {
            command: "evict",
            config: serde_json::json!({
                "plan": plan_path.display().to_string(),
                "kernel": kernel,
                "window": plan.window,
                "budget": plan.budget,
            }),
            outputs,
        },
    )
}
