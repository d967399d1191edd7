//! Black-box tests of the `cokv` binary: exit codes, file outputs, and
//! determinism under a fixed seed.

use std::path::Path;
use std::process::{Command, Output};

fn cokv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cokv"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_additive_game(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("game.json");
    std::fs::write(
        &path,
        r#"{"family":"additive","n":4,"params":{"weights":[1.0,2.0,3.0,4.0]}}"#,
    )
    .unwrap();
    path
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

#[test]
fn estimate_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let game = write_additive_game(dir.path());
    let game = game.to_str().unwrap();

    let run = |out: &str, samples: &str, resume: bool| {
        let mut args = vec![
            "estimate", "--game", game, "--slices", "1,2,3,4", "--samples", samples, "--seed",
            "21", "--workers", "1", "--out", out,
        ];
        if resume {
            args.push("--resume");
        }
        cokv(&args, dir.path())
    };

    let full = run("full", "6000", false);
    assert!(full.status.success(), "{}", String::from_utf8_lossy(&full.stderr));
    let again = run("again", "6000", false);
    assert!(again.status.success());
    for name in ["table_a.bin", "table_b.bin", "estimate_avg.csv", "estimate_avg.json"] {
        assert_eq!(
            read(&dir.path().join("full"), name),
            read(&dir.path().join("again"), name),
            "{name} differs between identical runs"
        );
    }

    // The convergence log has the documented columns.
    let log = String::from_utf8(read(&dir.path().join("full"), "convergence.csv")).unwrap();
    assert!(log.starts_with("samples,mae,threshold,converged"));

    // And the saved tables feed the report command.
    let report = cokv(
        &[
            "convergence-report",
            "--table-a",
            "full/table_a.bin",
            "--table-b",
            "full/table_b.bin",
            "--out",
            "report",
        ],
        dir.path(),
    );
    assert!(report.status.success());
    let report_json: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("report"), "convergence_report.json"))
            .unwrap();
    assert_eq!(report_json["n"], 4);
    assert_eq!(report_json["converged"], true);
}

#[test]
fn interrupted_estimate_resumes_to_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    // Wide additive game: the MAE stays far above 1/16 at this budget, so
    // both paths run to the full cap (exit code 3) and must agree bitwise.
    std::fs::write(
        dir.path().join("wide.json"),
        r#"{"family":"additive","n":16,"params":{"weights":[1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16]}}"#,
    )
    .unwrap();
    let run = |out: &str, samples: &str, resume: bool| {
        let mut args = vec![
            "estimate", "--game", "wide.json", "--samples", samples, "--seed", "4", "--out", out,
        ];
        if resume {
            args.push("--resume");
        }
        cokv(&args, dir.path())
    };

    let full = run("full", "3000", false);
    assert_eq!(full.status.code(), Some(3), "{}", String::from_utf8_lossy(&full.stderr));

    let partial = run("resumed", "1000", false);
    assert_eq!(partial.status.code(), Some(3));
    let resumed = run("resumed", "3000", true);
    assert_eq!(resumed.status.code(), Some(3));

    for name in ["table_a.bin", "table_b.bin"] {
        assert_eq!(
            read(&dir.path().join("full"), name),
            read(&dir.path().join("resumed"), name),
            "{name} diverged after resume"
        );
    }
    // The estimates agree on every statistic; only the per-process oracle
    // evaluation counter differs (the resumed process did less work).
    let full_avg: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("full"), "estimate_avg.json")).unwrap();
    let resumed_avg: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("resumed"), "estimate_avg.json")).unwrap();
    for field in ["values", "per_slice_means", "total_samples", "slice_sizes"] {
        assert_eq!(full_avg[field], resumed_avg[field], "{field} diverged after resume");
    }
}

#[test]
fn allocate_reproduces_the_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("scores.csv"),
        "player_index,label,ssv\n0,h0,0.5\n1,h1,0.3\n2,h2,0.1\n3,h3,-0.2\n",
    )
    .unwrap();
    let out = cokv(
        &[
            "allocate", "--scores", "scores.csv", "--alpha", "1", "--budget", "100", "--window",
            "8", "--out", "plans",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(read(&dir.path().join("plans"), "plan_alpha1.csv")).unwrap();
    let caches: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(caches, vec!["55", "41", "28", "8"]);

    let plan: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("plans"), "plan_alpha1.json")).unwrap();
    assert_eq!(plan["cache_sizes"], serde_json::json!([55, 41, 28, 8]));
}

#[test]
fn evict_processes_tensor_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    // Three heads with window 4, lengths long enough for real eviction.
    for (head, (seq_len, seed)) in [(28usize, 1u64), (40, 2), (24, 3)].iter().enumerate() {
        let bundle = cokv::evictor::seeded_bundle(4, *seq_len, 8, *seed);
        cokv::evictor::write_tensor_file(
            &bundle,
            &dir.path().join(format!("head{head}.cokvtensor")),
        )
        .unwrap();
    }
    std::fs::write(
        dir.path().join("scores.csv"),
        "player_index,label,ssv\n0,h0,0.9\n1,h1,0.4\n2,h2,-0.1\n",
    )
    .unwrap();
    let alloc = cokv(
        &[
            "allocate", "--scores", "scores.csv", "--alpha", "1", "--budget", "30", "--window",
            "4", "--out", "plans",
        ],
        dir.path(),
    );
    assert!(alloc.status.success(), "{}", String::from_utf8_lossy(&alloc.stderr));

    let evict_args = [
        "evict",
        "--plan",
        "plans/plan_alpha1.json",
        "--tensor",
        "head0.cokvtensor",
        "--tensor",
        "head1.cokvtensor",
        "--tensor",
        "head2.cokvtensor",
        "--kernel",
        "7",
    ];
    let run1 = cokv(&[&evict_args[..], &["--out", "ev1"]].concat(), dir.path());
    assert!(run1.status.success(), "{}", String::from_utf8_lossy(&run1.stderr));
    let run2 = cokv(&[&evict_args[..], &["--out", "ev2"]].concat(), dir.path());
    assert!(run2.status.success());
    for name in [
        "evict_head0.json",
        "evict_head1.json",
        "evict_head2.json",
        "eviction_summary.csv",
    ] {
        assert_eq!(
            read(&dir.path().join("ev1"), name),
            read(&dir.path().join("ev2"), name),
            "{name} not reproducible"
        );
    }

    // The zeroed head keeps only its window.
    let head2: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("ev1"), "evict_head2.json")).unwrap();
    assert_eq!(head2["budget"], 4);
    assert_eq!(head2["retained_prefix_indices"].as_array().unwrap().len(), 0);
    assert_eq!(head2["retained_rows"], 4);

    // Budgets beyond the window retain exactly budget rows.
    let head0: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("ev1"), "evict_head0.json")).unwrap();
    let budget = head0["budget"].as_u64().unwrap();
    assert_eq!(head0["retained_rows"].as_u64().unwrap(), budget);
}

#[test]
fn mask_experiment_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("sab.json"),
        r#"{"family":"saboteur","n":6,"params":{"base":0.5,"helpful":{"0":0.05,"1":0.05,"2":0.05,"3":0.05},"harmful":{"4":-0.1,"5":-0.2}}}"#,
    )
    .unwrap();
    std::fs::write(
        dir.path().join("scores.csv"),
        "player_index,label,ssv\n0,p0,0.05\n1,p1,0.05\n2,p2,0.04\n3,p3,0.05\n4,p4,-0.1\n5,p5,-0.2\n",
    )
    .unwrap();
    let out = cokv(
        &[
            "mask-experiment", "--game", "sab.json", "--scores", "scores.csv", "--ks", "1,2",
            "--out", "mask",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let json = read(&dir.path().join("mask"), "mask_experiment.json");
    let report: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert_eq!(report["baseline_utility"], 0.4);
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    // Masking the two harmful players beats baseline; masking the two best
    // helpful players is the worst outcome at that k.
    let find = |k: u64, policy: &str| {
        rows.iter()
            .find(|r| r["k"] == k && r["policy"] == policy)
            .unwrap()["utility"]
            .as_f64()
            .unwrap()
    };
    assert!(find(2, "low") > 0.4);
    assert!(find(2, "top") < find(2, "low"));
    assert_eq!(rows[1]["masked_players"], serde_json::json!([5]));

    // Round trip: re-reading the JSON and re-rendering the CSV reproduces
    // the emitted file byte for byte.
    let typed: cokv::cli::MaskExperimentReport = serde_json::from_slice(&json).unwrap();
    let rerendered = typed.to_csv();
    assert_eq!(
        rerendered.as_bytes(),
        read(&dir.path().join("mask"), "mask_experiment.csv"),
        "re-rendered CSV differs from the emitted one"
    );
}

#[test]
fn large_game_mae_crosses_its_threshold() {
    // 256 players with utilities in [0, 1]: the stopping rule needs the MAE
    // between two runs to drop below 1/256.
    let dir = tempfile::tempdir().unwrap();
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(256);
    let weights: Vec<f64> = (0..256).map(|_| rng.random::<f64>() / 128.0).collect();
    let spec = serde_json::json!({
        "family": "additive",
        "n": 256,
        "params": {"weights": weights},
    });
    std::fs::write(dir.path().join("big.json"), spec.to_string()).unwrap();

    // Slice sizes default to {32, 64, 96, 128} for a game this large.
    let out = cokv(
        &[
            "estimate", "--game", "big.json", "--samples", "6000", "--seed", "12", "--checkpoint",
            "500", "--out", "big",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let log = String::from_utf8(read(&dir.path().join("big"), "convergence.csv")).unwrap();
    let last = log.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    let mae: f64 = fields[1].parse().unwrap();
    let threshold: f64 = fields[2].parse().unwrap();
    assert_eq!(threshold, 1.0 / 256.0);
    assert!(mae < threshold, "final MAE {mae} never crossed {threshold}");
    assert_eq!(fields[3], "true");

    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("big"), "manifest.json")).unwrap();
    assert_eq!(manifest["config"]["slice_set"], serde_json::json!([32, 64, 96, 128]));
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = tempfile::tempdir().unwrap();

    // Unknown family: configuration error, code 2.
    std::fs::write(dir.path().join("bad.json"), r#"{"family":"bogus","n":2,"params":{}}"#)
        .unwrap();
    let out = cokv(
        &["estimate", "--game", "bad.json", "--samples", "10", "--out", "x1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // k >= n: configuration error.
    std::fs::write(
        dir.path().join("scores.csv"),
        "player_index,label,ssv\n0,a,0.1\n1,b,0.2\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("tiny.json"),
        r#"{"family":"additive","n":2,"params":{"weights":[1.0,2.0]}}"#,
    )
    .unwrap();
    let out = cokv(
        &[
            "mask-experiment", "--game", "tiny.json", "--scores", "scores.csv", "--ks", "2",
            "--out", "x2",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));

    // A sample budget too small for coverage: convergence failure, code 3,
    // with partial artifacts still written.
    std::fs::write(
        dir.path().join("wide.json"),
        r#"{"family":"additive","n":16,"params":{"weights":[1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1]}}"#,
    )
    .unwrap();
    let out = cokv(
        &[
            "estimate", "--game", "wide.json", "--slices", "1", "--samples", "1", "--seed", "3",
            "--out", "x3",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("x3/table_a.bin").exists());

    // A dead oracle process: oracle failure, code 4.
    std::fs::write(
        dir.path().join("dead.json"),
        r#"{"family":"external","n":2,"params":{"transport":"subprocess","command":["false"],"timeout_secs":2}}"#,
    )
    .unwrap();
    let out = cokv(
        &["estimate", "--game", "dead.json", "--samples", "4", "--out", "x4"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    // Verification is clean on healthy games: code 0.
    let out = cokv(&["verify", "--n", "5", "--games", "10", "--seed", "2", "--out", "v"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    // Verification guard: n too large is a configuration error.
    let out = cokv(&["verify", "--n", "11", "--out", "v2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    write_additive_game(dir.path());
    std::fs::write(
        dir.path().join("run.json"),
        r#"{
            "game_file": "game.json",
            "slice_set": [1, 2, 3, 4],
            "samples": 4000,
            "seed": 5,
            "out_dir": "from-config"
        }"#,
    )
    .unwrap();

    // Config alone.
    let out = cokv(&["estimate", "--config", "run.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("from-config/estimate_avg.csv").exists());

    // Flag overrides the config's output directory and seed.
    let out = cokv(
        &["estimate", "--config", "run.json", "--seed", "6", "--out", "flagged"],
        dir.path(),
    );
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("flagged"), "manifest.json")).unwrap();
    assert_eq!(manifest["config"]["seed"], 6);
    assert_ne!(
        read(&dir.path().join("from-config"), "estimate_avg.csv"),
        read(&dir.path().join("flagged"), "estimate_avg.csv"),
        "different seeds must give different estimates"
    );
}
