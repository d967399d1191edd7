//! `cokv mask-experiment`: score-ranked masking probes.
//!
//! For each k, masks the k top-ranked and the k low-ranked players (by the
//! given scores) and records the resulting utility next to the unmasked
//! baseline. A ranking is good when masking its top set hurts and masking
//! its low set is harmless or better than baseline.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cli::config::{
    ensure_out_dir, load_oracle, parse_usize_list, read_scores_csv, write_json, write_manifest,
    write_text, Manifest, RunConfig,
};
use crate::cli::CliError;
use crate::game::CoalitionMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRow {
    pub k: usize,
    pub policy: String,
    pub masked_players: Vec<usize>,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskExperimentReport {
    pub n: usize,
    pub baseline_utility: f64,
    pub rows: Vec<MaskRow>,
}

impl MaskExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut lines = vec!["k,policy,masked_players,utility".to_string()];
        for row in &self.rows {
            let masked: Vec<String> = row.masked_players.iter().map(|p| p.to_string()).collect();
            lines.push(format!(
                "{},{},{},{}",
                row.k,
                row.policy,
                masked.join(";"),
                row.utility
            ));
        }
        lines.join("\n") + "\n"
    }
}

pub fn run(
    cfg: RunConfig,
    game: Option<PathBuf>,
    scores_path: PathBuf,
    ks: Option<String>,
) -> Result<(), CliError> {
    let out = ensure_out_dir(&cfg)?;
    let (oracle, _players) = load_oracle(&cfg, game.as_deref())?;
    let n = oracle.player_count();
    let (_score_players, scores) = read_scores_csv(&scores_path)?;
    if scores.len() != n {
        return Err(CliError::config(format!(
            "scores cover {} players but the game has {n}",
            scores.len()
        )));
    }

    let mut ks: Vec<usize> = if let Some(text) = ks {
        parse_usize_list(&text)?
    } else if let Some(ks) = &cfg.ks {
        ks.clone()
    } else {
        return Err(CliError::config("no k values given: pass --ks or set \"ks\" in the config"));
    };
    ks.sort_unstable();
    ks.dedup();
    for &k in &ks {
        if k >= n {
            return Err(CliError::config(format!("k = {k} must be smaller than n = {n}")));
        }
    }

    let mut by_score_desc: Vec<usize> = (0..n).collect();
    by_score_desc.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut by_score_asc: Vec<usize> = (0..n).collect();
    by_score_asc.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    let baseline = oracle
        .evaluate(&CoalitionMask::full(n))
        .map_err(CliError::from)?;

    let mut rows = Vec::with_capacity(ks.len() * 2);
    for &k in &ks {
        for (policy, ranking) in [("top", &by_score_desc), ("low", &by_score_asc)] {
            let mut masked: Vec<usize> = ranking[..k].to_vec();
            masked.sort_unstable();
            let mut coalition = CoalitionMask::full(n);
            for &p in &masked {
                coalition.remove(p);
            }
            let utility = oracle.evaluate(&coalition).map_err(CliError::from)?;
            rows.push(MaskRow { k, policy: policy.to_string(), masked_players: masked, utility });
        }
    }

    let report = MaskExperimentReport { n, baseline_utility: baseline, rows };
    write_json(&out.join("mask_experiment.json"), &report)?;
    write_text(&out.join("mask_experiment.csv"), &report.to_csv())?;
    for row in &report.rows {
        println!(
            "k={} policy={} utility={} (baseline {})",
            row.k, row.policy, row.utility, report.baseline_utility
        );
    }
    write_manifest(
        &out,
        &Manifest {
            command: "mask-experiment",
            config: serde_json::json!({
                "scores": scores_path.display().to_string(),
                "n": n,
                "ks": ks,
            }),
            outputs: vec![
                "manifest.json".into(),
                "mask_experiment.csv".into(),
                "mask_experiment.json".into(),
            ],
        },
    )
}
