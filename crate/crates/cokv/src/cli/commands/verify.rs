//! `cokv verify`: brute-force self-checks on seeded random games.
//!
//! Runs both exact Shapley enumerations on a batch of random games and
//! checks that they agree, that efficiency holds, that per-size slice values
//! average back to the Shapley value, that symmetric players get identical
//! values, and that a zero-weight player gets exactly zero.

use serde::Serialize;

use crate::cli::config::{ensure_out_dir, write_json, write_manifest, Manifest, RunConfig};
use crate::cli::CliError;
use crate::game::{
    exact_shapley, exact_shapley_cc, exact_slice_value, CoalitionMask, Game, UtilityOracle,
};

const VERIFY_PLAYER_LIMIT: usize = 10;
const EXACT_TOLERANCE: f64 = 1e-9;

#[derive(Serialize)]
struct Check {
    name: &'static str,
    max_deviation: f64,
    threshold: f64,
    pass: bool,
}

#[derive(Serialize)]
struct Report {
    n: usize,
    games: usize,
    seed: u64,
    checks: Vec<Check>,
    pass: bool,
}

pub fn run(cfg: RunConfig, n: Option<usize>, games: Option<usize>) -> Result<(), CliError> {
    let out = ensure_out_dir(&cfg)?;
    let n = n.unwrap_or(6);
    let games = games.unwrap_or(50);
    let seed = cfg.seed();
    if n == 0 {
        return Err(CliError::config("verification needs at least 1 player"));
    }
    if n > VERIFY_PLAYER_LIMIT {
        return Err(CliError::config(format!(
            "verification enumerates slice values exhaustively and supports at most \
             {VERIFY_PLAYER_LIMIT} players, got {n}"
        )));
    }

    let mut equivalence_dev: f64 = 0.0;
    let mut efficiency_dev: f64 = 0.0;
    let mut slice_dev: f64 = 0.0;
    for g in 0..games {
        let game = Game::random_mixed(n, seed.wrapping_add(g as u64))?;
        let sv = exact_shapley(&game)?;
        let cc = exact_shapley_cc(&game)?;
        for (a, b) in sv.iter().zip(&cc) {
            equivalence_dev = equivalence_dev.max((a - b).abs());
        }

        let grand = game.evaluate(&CoalitionMask::full(n))?;
        let empty = game.evaluate(&CoalitionMask::empty(n))?;
        let total: f64 = sv.iter().sum();
        efficiency_dev = efficiency_dev.max((total - (grand - empty)).abs());

        for (player, &value) in cc.iter().enumerate() {
            let mut acc = 0.0;
            for slice in 1..=n {
                acc += exact_slice_value(&game, player, slice)?;
            }
            slice_dev = slice_dev.max((acc / n as f64 - value).abs());
        }
    }

    // Symmetry: dyadic weights make every float sum exact, so players with
    // equal weights must come out bit-identical.
    let mut symmetry_dev: f64 = 0.0;
    if n >= 2 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x73796d);
        let mut weights: Vec<f64> =
            (0..n).map(|_| rng.random_range(0..1024) as f64 / 1024.0).collect();
        weights[n - 1] = weights[0];
        let sv = exact_shapley(&Game::additive(weights))?;
        if sv[0].to_bits() != sv[n - 1].to_bits() {
            symmetry_dev = (sv[0] - sv[n - 1]).abs().max(f64::MIN_POSITIVE);
        }
    }

    // Null player: zero weight, exactly zero value.
    let mut null_dev: f64 = 0.0;
    if n >= 2 {
        let mut weights = vec![0.25; n];
        weights[0] = 0.0;
        let sv = exact_shapley(&Game::additive(weights))?;
        null_dev = sv[0].abs();
    }

    let checks = vec![
        Check {
            name: "marginal-vs-complementary equivalence",
            max_deviation: equivalence_dev,
            threshold: EXACT_TOLERANCE,
            pass: equivalence_dev <= EXACT_TOLERANCE,
        },
        Check {
            name: "efficiency",
            max_deviation: efficiency_dev,
            threshold: EXACT_TOLERANCE,
            pass: efficiency_dev <= EXACT_TOLERANCE,
        },
        Check {
            name: "slice consistency",
            max_deviation: slice_dev,
            threshold: EXACT_TOLERANCE,
            pass: slice_dev <= EXACT_TOLERANCE,
        },
        Check {
            name: "symmetry (bit-identical)",
            max_deviation: symmetry_dev,
            threshold: 0.0,
            pass: symmetry_dev == 0.0,
        },
        Check {
            name: "null player (exact zero)",
            max_deviation: null_dev,
            threshold: 0.0,
            pass: null_dev == 0.0,
        },
    ];
    let pass = checks.iter().all(|c| c.pass);
    for check in &checks {
        println!(
            "{}: {} (max deviation {:e}, threshold {:e})",
            check.name,
            if check.pass { "pass" } else { "FAIL" },
            check.max_deviation,
            check.threshold
        );
    }

    let report = Report { n, games, seed, checks, pass };
    write_json(&out.join("verify_report.json"), &report)?;
    write_manifest(
        &out,
        &Manifest {
            command: "verify",
            config: serde_json::json!({"n": n, "games": games, "seed": seed}),
            outputs: vec!["manifest.json".into(), "verify_report.json".into()],
        },
    )?;

    if pass {
        Ok(())
    } else {
        Err(CliError::verification(format!(
            "brute-force checks failed; see {}",
            out.join("verify_report.json").display()
        )))
    }
}
