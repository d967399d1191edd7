//! Monte-Carlo estimation of the sliced Shapley value.
//!
//! Each sample draws a random permutation of the players and a coalition size
//! from the slice set, takes the permutation prefix S of that size, evaluates
//! the complementary contribution U(S) − U(N∖S), and credits it to every
//! member of S at that size. Per-player per-size running sums live in a
//! [`ContributionTable`] that can be saved, merged, and resumed.
//!
//! Reproducibility: sample k draws from a counter-mode generator on stream k
//! of the run seed, so a run is a pure function of (seed, sample range). A
//! table extended by M′ samples is bit-identical to an uninterrupted run of
//! samples_drawn + M′ with the same seed, and worker partitions merge into
//! the same statistics regardless of interleaving.

mod table;

pub use table::{load_table, load_table_expecting, save_table};

use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{CoalitionMask, GameError, PlayerSet, SliceSet, UtilityOracle};

/// Stream namespace for per-epoch slice permutations, disjoint from the
/// per-sample streams which use the sample index directly.
const EPOCH_STREAM_BASE: u64 = 1 << 63;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "{} (player, slice) cell(s) still unsampled after {samples} samples \
         (first: player {}, slice {}); increase the sample budget or resume the saved table",
        uncovered.len(), uncovered[0].0, uncovered[0].1
    )]
    Coverage {
        uncovered: Vec<(usize, usize)>,
        samples: u64,
    },

    #[error("mismatched tables: {0}")]
    TableMismatch(String),

    #[error("mismatched estimates: {0}")]
    EstimateMismatch(String),

    #[error("table file {path}: {message}")]
    Format { path: std::path::PathBuf, message: String },

    #[error("table file {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Game(#[from] GameError),
}

/// How the coalition size is chosen per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceSchedule {
    /// Cycle through a fresh permutation of H every |H| samples. Uniform
    /// per-slice frequency with guaranteed slice coverage; the default.
    #[default]
    RoundRobin,
    /// Draw the size independently and uniformly from H each sample, matching
    /// the sampling analysis exactly.
    Iid,
}

/// Per-player per-size running sums and counts of complementary contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionTable {
    n: usize,
    slice_sizes: Vec<usize>,
    /// Row-major n × n; entry (i, j−1) accumulates contributions credited to
    /// player i at coalition size j.
    sums: Vec<f64>,
    counts: Vec<u64>,
    seed: u64,
    samples_drawn: u64,
}

impl ContributionTable {
    pub fn new(n: usize, slices: &SliceSet, seed: u64) -> Self {
        Self {
            n,
            slice_sizes: slices.sizes().to_vec(),
            sums: vec![0.0; n * n],
            counts: vec![0; n * n],
            seed,
            samples_drawn: 0,
        }
    }

    pub fn player_count(&self) -> usize {
        self.n
    }

    pub fn slice_sizes(&self) -> &[usize] {
        &self.slice_sizes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn samples_drawn(&self) -> u64 {
        self.samples_drawn
    }

    pub fn sum(&self, player: usize, slice: usize) -> f64 {
        self.sums[self.cell(player, slice)]
    }

    pub fn count(&self, player: usize, slice: usize) -> u64 {
        self.counts[self.cell(player, slice)]
    }

    fn cell(&self, player: usize, slice: usize) -> usize {
        assert!(player < self.n, "player {player} out of range");
        assert!(slice >= 1 && slice <= self.n, "slice {slice} out of range");
        player * self.n + (slice - 1)
    }

    fn credit(&mut self, members: &[usize], slice: usize, u: f64) {
        for &p in members {
            let cell = self.cell(p, slice);
            self.sums[cell] += u;
            self.counts[cell] += 1;
        }
    }
}

/// Entrywise sum of two tables covering the same game and slice set.
/// Associative and commutative on the counts; the metadata keeps the left
/// operand's seed.
pub fn merge_tables(
    a: &ContributionTable,
    b: &ContributionTable,
) -> Result<ContributionTable, EstimateError> {
    if a.n != b.n {
        return Err(EstimateError::TableMismatch(format!(
            "player counts {} vs {}",
            a.n, b.n
        )));
    }
    if a.slice_sizes != b.slice_sizes {
        return Err(EstimateError::TableMismatch(format!(
            "slice sets {:?} vs {:?}",
            a.slice_sizes, b.slice_sizes
        )));
    }
    let mut merged = a.clone();
    for (dst, src) in merged.sums.iter_mut().zip(&b.sums) {
        *dst += src;
    }
    for (dst, src) in merged.counts.iter_mut().zip(&b.counts) {
        *dst += src;
    }
    merged.samples_drawn += b.samples_drawn;
    Ok(merged)
}

/// Estimated sliced Shapley values plus the sampling metadata that produced
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsvEstimate {
    pub values: Vec<f64>,
    /// Row per player, column per slice size in slice-set order.
    pub per_slice_means: Vec<Vec<f64>>,
    pub slice_sizes: Vec<usize>,
    pub total_samples: u64,
    pub oracle_evaluations: u64,
    pub seed: u64,
}

impl SsvEstimate {
    pub fn player_count(&self) -> usize {
        self.values.len()
    }

    /// CSV rows `player_index,label,ssv`.
    pub fn write_csv<W: std::io::Write>(
        &self,
        players: &PlayerSet,
        writer: W,
    ) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["player_index", "label", "ssv"])?;
        for (i, value) in self.values.iter().enumerate() {
            out.write_record(&[i.to_string(), players.label(i).to_string(), format!("{value}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Sampling run parameters.
#[derive(Debug, Clone)]
pub struct EstimateConfig {
    pub slices: SliceSet,
    pub samples: u64,
    pub seed: u64,
    pub workers: usize,
    pub schedule: SliceSchedule,
    /// Also credit −u to the complement N∖S at size n−|S| when that size is
    /// in the slice set. Halves the sample cost of symmetric slice pairs; off
    /// by default to match the plain sampling loop.
    pub mirror_credit: bool,
}

impl EstimateConfig {
    pub fn new(slices: SliceSet, samples: u64, seed: u64) -> Self {
        Self {
            slices,
            samples,
            seed,
            workers: 1,
            schedule: SliceSchedule::RoundRobin,
            mirror_credit: false,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_schedule(mut self, schedule: SliceSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_mirror_credit(mut self, on: bool) -> Self {
        self.mirror_credit = on;
        self
    }

    pub fn validate(&self, n: usize) -> Result<(), EstimateError> {
        if self.samples == 0 {
            return Err(EstimateError::Config("sample count must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(EstimateError::Config("worker count must be at least 1".into()));
        }
        if (self.samples as u128) < self.slices.len() as u128 {
            return Err(EstimateError::Config(format!(
                "{} samples cannot cover {} slice sizes",
                self.samples,
                self.slices.len()
            )));
        }
        if let Some(&max) = self.slices.sizes().last() {
            if max > n {
                return Err(EstimateError::Config(format!(
                    "slice size {max} exceeds player count {n}"
                )));
            }
        }
        Ok(())
    }
}

/// One literal sampling step against a caller-supplied random source: full
/// random permutation, size drawn uniformly from H, contribution credited to
/// the prefix. On oracle failure the table is left untouched.
pub fn sample_once(
    oracle: &dyn UtilityOracle,
    slices: &SliceSet,
    rng: &mut impl Rng,
    table: &mut ContributionTable,
) -> Result<(), EstimateError> {
    let n = oracle.player_count();
    if table.n != n {
        return Err(EstimateError::TableMismatch(format!(
            "table covers {} players, oracle {}",
            table.n, n
        )));
    }
    if table.slice_sizes != slices.sizes() {
        return Err(EstimateError::TableMismatch(format!(
            "table slice set {:?} vs requested {:?}",
            table.slice_sizes,
            slices.sizes()
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let slice = slices.sizes()[rng.random_range(0..slices.len())];
    draw_contribution(oracle, &perm, slice, table, false)?;
    Ok(())
}

/// Evaluate the prefix coalition of `perm` at `slice` and credit the result.
/// All oracle work happens before any table mutation.
fn draw_contribution(
    oracle: &dyn UtilityOracle,
    perm: &[usize],
    slice: usize,
    table: &mut ContributionTable,
    mirror: bool,
) -> Result<(), EstimateError> {
    let n = perm.len();
    let members = &perm[..slice];
    let coalition = CoalitionMask::from_members(n, members);
    let with = oracle.evaluate(&coalition)?;
    let without = oracle.evaluate(&coalition.complement())?;
    let u = with - without;

    table.credit(members, slice, u);
    if mirror {
        let mirror_size = n - slice;
        if mirror_size >= 1 && table.slice_sizes.binary_search(&mirror_size).is_ok() {
            table.credit(&perm[slice..], mirror_size, -u);
        }
    }
    table.samples_drawn += 1;
    Ok(())
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Slice size for global sample index k under the schedule.
fn slice_for_sample(
    cfg: &EstimateConfig,
    k: u64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let sizes = cfg.slices.sizes();
    match cfg.schedule {
        SliceSchedule::Iid => sizes[rng.random_range(0..sizes.len())],
        SliceSchedule::RoundRobin => {
            let h = sizes.len() as u64;
            let epoch = k / h;
            let pos = (k % h) as usize;
            let mut order: Vec<usize> = sizes.to_vec();
            let mut epoch_rng = sample_rng(cfg.seed, EPOCH_STREAM_BASE | epoch);
            order.shuffle(&mut epoch_rng);
            order[pos]
        }
    }
}

/// Run samples with global indices [start, end) into `table`, sequentially.
fn run_span(
    oracle: &dyn UtilityOracle,
    cfg: &EstimateConfig,
    table: &mut ContributionTable,
    start: u64,
    end: u64,
) -> Result<(), EstimateError> {
    let n = oracle.player_count();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in start..end {
        let mut rng = sample_rng(cfg.seed, k);
        let slice = slice_for_sample(cfg, k, &mut rng);
        // Partial Fisher-Yates: after `slice` steps the prefix is a uniform
        // slice-sized prefix of a uniform permutation.
        for (i, p) in perm.iter_mut().enumerate() {
            *p = i;
        }
        for t in 0..slice {
            let pick = rng.random_range(t..n);
            perm.swap(t, pick);
        }
        draw_contribution(oracle, &perm, slice, table, cfg.mirror_credit)?;
    }
    Ok(())
}

/// Extend `table` by `additional` samples, continuing the seed schedule from
/// `samples_drawn`. Single-threaded continuation of a single-threaded run is
/// bit-identical to one uninterrupted run of the combined length.
pub fn extend_table(
    oracle: &dyn UtilityOracle,
    cfg: &EstimateConfig,
    table: &mut ContributionTable,
    additional: u64,
) -> Result<(), EstimateError> {
    if table.n != oracle.player_count() {
        return Err(EstimateError::TableMismatch(format!(
            "table covers {} players, oracle {}",
            table.n,
            oracle.player_count()
        )));
    }
    if table.slice_sizes != cfg.slices.sizes() {
        return Err(EstimateError::TableMismatch(format!(
            "table slice set {:?} vs configured {:?}",
            table.slice_sizes,
            cfg.slices.sizes()
        )));
    }
    if table.seed != cfg.seed {
        return Err(EstimateError::TableMismatch(format!(
            "table seed {} vs configured {}",
            table.seed, cfg.seed
        )));
    }
    let start = table.samples_drawn;
    let end = start + additional;
    if cfg.workers <= 1 || additional < 2 * cfg.workers as u64 {
        return run_span(oracle, cfg, table, start, end);
    }

    let workers = cfg.workers as u64;
    let base = additional / workers;
    let extra = additional % workers;
    let mut spans = Vec::with_capacity(cfg.workers);
    let mut cursor = start;
    for w in 0..workers {
        let len = base + u64::from(w < extra);
        spans.push((cursor, cursor + len));
        cursor += len;
    }

    let n = table.n;
    let failed = AtomicBool::new(false);
    let results: Vec<Result<ContributionTable, EstimateError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = spans
            .iter()
            .map(|&(lo, hi)| {
                let failed = &failed;
                scope.spawn(move || {
                    let mut local = ContributionTable::new(n, &cfg.slices, cfg.seed);
                    let mut k = lo;
                    while k < hi && !failed.load(Ordering::Relaxed) {
                        run_span(oracle, cfg, &mut local, k, k + 1).inspect_err(|_| {
                            failed.store(true, Ordering::Relaxed);
                        })?;
                        k += 1;
                    }
                    if failed.load(Ordering::Relaxed) && k < hi {
                        return Err(EstimateError::Config("worker aborted".into()));
                    }
                    Ok(local)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });

    let mut merged: Option<ContributionTable> = None;
    for result in results {
        let local = result?;
        merged = Some(match merged {
            None => local,
            Some(acc) => merge_tables(&acc, &local)?,
        });
    }
    let merged = merged.expect("at least one worker");
    for (dst, src) in table.sums.iter_mut().zip(&merged.sums) {
        *dst += src;
    }
    for (dst, src) in table.counts.iter_mut().zip(&merged.counts) {
        *dst += src;
    }
    table.samples_drawn += merged.samples_drawn;
    Ok(())
}

/// Read the estimate out of a table. Errors if any (player, slice) cell in
/// the slice set has no samples: a zero count is missing information, never
/// a zero mean.
pub fn finalize_estimate(
    table: &ContributionTable,
    oracle_evaluations: u64,
) -> Result<SsvEstimate, EstimateError> {
    let mut uncovered = Vec::new();
    for player in 0..table.n {
        for &slice in &table.slice_sizes {
            if table.count(player, slice) == 0 {
                uncovered.push((player, slice));
            }
        }
    }
    if !uncovered.is_empty() {
        return Err(EstimateError::Coverage { uncovered, samples: table.samples_drawn });
    }

    let h = table.slice_sizes.len() as f64;
    let mut values = Vec::with_capacity(table.n);
    let mut per_slice_means = Vec::with_capacity(table.n);
    for player in 0..table.n {
        let means: Vec<f64> = table
            .slice_sizes
            .iter()
            .map(|&slice| table.sum(player, slice) / table.count(player, slice) as f64)
            .collect();
        values.push(means.iter().sum::<f64>() / h);
        per_slice_means.push(means);
    }
    Ok(SsvEstimate {
        values,
        per_slice_means,
        slice_sizes: table.slice_sizes.clone(),
        total_samples: table.samples_drawn,
        oracle_evaluations,
        seed: table.seed,
    })
}

/// Run a full estimation: `cfg.samples` samples partitioned over
/// `cfg.workers`, finalized into an estimate.
pub fn estimate_ssv(
    oracle: &dyn UtilityOracle,
    cfg: &EstimateConfig,
) -> Result<SsvEstimate, EstimateError> {
    let n = oracle.player_count();
    cfg.validate(n)?;
    let evals_before = oracle.evaluations();
    let mut table = ContributionTable::new(n, &cfg.slices, cfg.seed);
    extend_table(oracle, cfg, &mut table, cfg.samples)?;
    finalize_estimate(&table, oracle.evaluations() - evals_before)
}

/// Mean absolute difference between two estimates of the same configuration.
pub fn mae(a: &SsvEstimate, b: &SsvEstimate) -> Result<f64, EstimateError> {
    if a.values.len() != b.values.len() {
        return Err(EstimateError::EstimateMismatch(format!(
            "player counts {} vs {}",
            a.values.len(),
            b.values.len()
        )));
    }
    if a.slice_sizes != b.slice_sizes {
        return Err(EstimateError::EstimateMismatch(format!(
            "slice sets {:?} vs {:?}",
            a.slice_sizes, b.slice_sizes
        )));
    }
    let n = a.values.len() as f64;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n)
}

/// Two-run stopping rule: sampling is considered stable once the mean
/// absolute difference between independent runs drops strictly below 1/n.
pub fn converged(a: &SsvEstimate, b: &SsvEstimate, n: usize) -> Result<bool, EstimateError> {
    if n == 0 || a.values.len() != n {
        return Err(EstimateError::EstimateMismatch(format!(
            "estimate covers {} players, rule invoked with n = {n}",
            a.values.len()
        )));
    }
    Ok(mae(a, b)? < 1.0 / n as f64)
}

/// Hoeffding-style sample budget for an (ε, δ)-approximation of every
/// player's sliced value: contributions span 2·range, and the confidence is
/// union-bounded over n players × |H| slices, giving
/// M = ⌈2 |H| range² ln(2 |H| n / δ) / ε²⌉.
pub fn required_samples(
    epsilon: f64,
    delta: f64,
    h_size: usize,
    n: usize,
    utility_range: f64,
) -> Result<u64, EstimateError> {
    if !(epsilon > 0.0) {
        return Err(EstimateError::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(EstimateError::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    if h_size == 0 {
        return Err(EstimateError::Config("slice set size must be at least 1".into()));
    }
    if n == 0 {
        return Err(EstimateError::Config("player count must be at least 1".into()));
    }
    if !(utility_range > 0.0) {
        return Err(EstimateError::Config(format!(
            "utility range must be positive, got {utility_range}"
        )));
    }
    let h = h_size as f64;
    let m = 2.0 * h * utility_range * utility_range * (2.0 * h * n as f64 / delta).ln()
        / (epsilon * epsilon);
    Ok(m.ceil() as u64)
}
