//! Run configuration file, flag precedence, and shared command helpers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::bridge::ExternalOracle;
use crate::estimator::SliceSchedule;
use crate::game::{Game, GameSpec, PlayerSet, SliceSet, UtilityOracle};

/// One JSON document holding the knobs every subcommand draws from.
/// Explicit CLI flags override these values; unset fields fall back to the
/// built-in defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Inline game spec.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<GameSpec>,
    /// Or a path to a game spec JSON file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_set: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<SliceSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror_credit: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling_kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<usize>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("parsing {}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("cokv-run"))
    }

    pub fn window(&self) -> u64 {
        self.window.unwrap_or(8)
    }

    pub fn pooling_kernel(&self) -> usize {
        self.pooling_kernel.unwrap_or(7)
    }

    /// Default slice set, overridable per run: sizes {32, 64, 96, 128}
    /// clipped to the player count when no explicit set is given.
    pub fn resolve_slices(
        &self,
        flag: Option<&str>,
        n: usize,
    ) -> Result<SliceSet, CliError> {
        let sizes: Vec<usize> = if let Some(text) = flag {
            parse_usize_list(text)?
        } else if let Some(sizes) = &self.slice_set {
            sizes.clone()
        } else {
            let defaults: Vec<usize> =
                [32, 64, 96, 128].into_iter().filter(|&j| j <= n).collect();
            if defaults.is_empty() {
                (1..=n).collect()
            } else {
                defaults
            }
        };
        SliceSet::new(sizes, n).map_err(|e| CliError::config(e.to_string()))
    }
}

pub fn parse_usize_list(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|e| CliError::config(format!("invalid integer {part:?}: {e}")))
        })
        .collect()
}

/// Load the game spec named by flag or config and build its oracle; family
/// "external" wires up the bridge.
pub fn load_oracle(
    cfg: &RunConfig,
    game_flag: Option<&Path>,
) -> Result<(Box<dyn UtilityOracle>, PlayerSet), CliError> {
    let spec: GameSpec = if let Some(path) = game_flag {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("reading {}: {e}", path.display())))?;
        GameSpec::from_json(&text)?
    } else if let Some(spec) = &cfg.game {
        spec.clone()
    } else if let Some(path) = &cfg.game_file {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("reading {}: {e}", path.display())))?;
        GameSpec::from_json(&text)?
    } else {
        return Err(CliError::config(
            "no game given: pass --game <file> or set \"game\" in the config",
        ));
    };

    if spec.is_external() {
        let oracle = ExternalOracle::from_game_spec(&spec)?;
        let players = oracle.players().clone();
        Ok((Box::new(oracle), players))
    } else {
        let game = Game::from_spec(&spec)?;
        let players = game.players().clone();
        Ok((Box::new(game), players))
    }
}

/// Scores CSV rows as written by the estimate/exact exports:
/// `player_index,label,ssv`.
pub fn read_scores_csv(path: &Path) -> Result<(PlayerSet, Vec<f64>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::config(format!("opening {}: {e}", path.display())))?;
    let mut rows: Vec<(usize, String, f64)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() < 3 {
            return Err(CliError::config(format!(
                "{}: expected 3 columns (player_index,label,score), got {}",
                path.display(),
                record.len()
            )));
        }
        let index: usize = record[0]
            .trim()
            .parse()
            .map_err(|e| CliError::config(format!("{}: bad player_index: {e}", path.display())))?;
        let score: f64 = record[2]
            .trim()
            .parse()
            .map_err(|e| CliError::config(format!("{}: bad score: {e}", path.display())))?;
        rows.push((index, record[1].to_string(), score));
    }
    rows.sort_by_key(|r| r.0);
    if rows.is_empty() {
        return Err(CliError::config(format!("{}: no score rows", path.display())));
    }
    for (expected, row) in rows.iter().enumerate() {
        if row.0 != expected {
            return Err(CliError::config(format!(
                "{}: player indices must be dense from 0; missing or duplicate index near {expected}",
                path.display()
            )));
        }
    }
    let labels = rows
        .iter()
        .map(|r| crate::game::PlayerLabel::Name(r.1.clone()))
        .collect();
    let players = PlayerSet::new(labels).map_err(|e| CliError::config(e.to_string()))?;
    Ok((players, rows.into_iter().map(|r| r.2).collect()))
}

/// splitmix64: a throwaway mixer for deriving independent run seeds from the
/// base seed.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Every command drops one of these next to its artifacts. No timestamps:
/// reruns with the same seed must produce identical bytes.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub config: C,
    pub outputs: Vec<String>,
}

pub fn write_manifest<C: Serialize>(
    out_dir: &Path,
    manifest: &Manifest<'_, C>,
) -> Result<(), CliError> {
    let path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text)
        .map_err(|e| CliError::other(format!("writing {}: {e}", path.display())))
}

pub fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::other(format!("creating {}: {e}", dir.display())))?;
    Ok(dir)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::other(format!("writing {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}
