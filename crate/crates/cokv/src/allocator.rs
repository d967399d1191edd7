//! Per-head cache budgets from importance scores.
//!
//! Scores pass through α-truncated min-max normalization (the α lowest heads
//! are forced to zero), then the shared budget B is split proportionally to
//! the normalized scores and rounded with largest-remainder apportionment so
//! Σ(c_i − s) = B holds exactly. Every head keeps at least its local window s.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::PlayerSet;

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("normalization needs at least 2 heads, got {0}")]
    TooFewHeads(usize),

    #[error("alpha {alpha} must be smaller than the head count {n}")]
    AlphaOutOfRange { alpha: usize, n: usize },

    #[error("normalized score {value} at head {head} outside [0, 1]")]
    ScoreOutOfRange { head: usize, value: f64 },

    #[error("capacity vector covers {got} heads, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },

    #[error("capacity {capacity} of head {head} is below the window size {window}")]
    CapacityBelowWindow { head: usize, capacity: u64, window: u64 },

    #[error("score {value} at head {head} is not finite")]
    NonFiniteScore { head: usize, value: f64 },
}

/// Shared-budget parameters: B cache entries to distribute on top of a local
/// window of s entries that every head always keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationConfig {
    pub budget: u64,
    pub window: u64,
    pub alpha: usize,
}

/// Integer cache sizes per head; `cache_sizes[i]` includes the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub cache_sizes: Vec<u64>,
    pub normalized: Vec<f64>,
    pub budget: u64,
    pub window: u64,
    /// Budget that could not be placed because every head hit its capacity;
    /// zero in the ordinary uncapped path.
    pub shortfall: u64,
    /// Set when all normalized scores were zero and the budget fell back to a
    /// uniform split.
    pub uniform_fallback: bool,
}

impl AllocationPlan {
    pub fn head_count(&self) -> usize {
        self.cache_sizes.len()
    }

    /// CSV rows `player_index,label,nsv,c`.
    pub fn write_csv<W: std::io::Write>(
        &self,
        players: &PlayerSet,
        writer: W,
    ) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["player_index", "label", "nsv", "c"])?;
        for i in 0..self.cache_sizes.len() {
            out.write_record(&[
                i.to_string(),
                players.label(i).to_string(),
                format!("{}", self.normalized[i]),
                self.cache_sizes[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// α-truncated min-max normalization.
///
/// The α lowest-scored heads (ties broken by ascending index) are pinned to
/// exactly 0. The rest are mapped through (score − minᵅ)/(max − minᵅ) where
/// minᵅ is the α-th smallest score, clamped into [0, 1]. A degenerate range
/// (max = minᵅ) gives every surviving head 1.
pub fn normalize_scores(scores: &[f64], alpha: usize) -> Result<Vec<f64>, AllocError> {
    let n = scores.len();
    if n < 2 {
        return Err(AllocError::TooFewHeads(n));
    }
    if alpha >= n {
        return Err(AllocError::AlphaOutOfRange { alpha, n });
    }
    for (head, &value) in scores.iter().enumerate() {
        if !value.is_finite() {
            return Err(AllocError::NonFiniteScore { head, value });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));

    // minᵅ is the α-th smallest (1-indexed); with α = 0 it degrades to the
    // plain minimum and nothing is zeroed.
    let floor = scores[order[alpha.saturating_sub(1)]];
    let ceiling = scores[order[n - 1]];
    let span = ceiling - floor;

    let mut normalized = vec![0.0; n];
    for &head in &order[alpha..] {
        normalized[head] = if span > 0.0 {
            ((scores[head] - floor) / span).clamp(0.0, 1.0)
        } else {
            1.0
        };
    }
    Ok(normalized)
}

/// Distribute `total` proportionally to `weights` in whole units, exactly.
///
/// Hamilton rounding: floor every real share, then hand the leftover units to
/// the largest fractional parts, ties to the lower index.
fn largest_remainder(weights: &[f64], total: u64) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    let n = weights.len();
    if total == 0 || n == 0 {
        return vec![0; n];
    }
    let shares: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut granted: Vec<u64> = shares.iter().map(|s| s.floor().max(0.0) as u64).collect();
    let mut placed: u64 = granted.iter().sum();

    let mut by_fraction: Vec<usize> = (0..n).collect();
    by_fraction.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut cursor = 0;
    while placed < total {
        granted[by_fraction[cursor % n]] += 1;
        placed += 1;
        cursor += 1;
    }
    // Float drift can only overshoot at integer boundaries; trim from the
    // smallest fractional parts.
    let mut cursor = n;
    while placed > total {
        cursor = if cursor == 0 { n - 1 } else { cursor - 1 };
        let head = by_fraction[cursor];
        if granted[head] > 0 {
            granted[head] -= 1;
            placed -= 1;
        }
    }
    granted
}

/// Split the shared budget over heads proportionally to normalized scores.
///
/// If every score is zero the budget falls back to a uniform split and the
/// plan is flagged. Conservation Σ(c_i − s) = B holds in both paths.
pub fn allocate(normalized: &[f64], config: &AllocationConfig) -> Result<AllocationPlan, AllocError> {
    let n = normalized.len();
    if n == 0 {
        return Err(AllocError::TooFewHeads(0));
    }
    for (head, &value) in normalized.iter().enumerate() {
        if !value.is_finite() {
            return Err(AllocError::NonFiniteScore { head, value });
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(AllocError::ScoreOutOfRange { head, value });
        }
    }

    let total: f64 = normalized.iter().sum();
    let (extra, uniform_fallback) = if total > 0.0 {
        (largest_remainder(normalized, config.budget), false)
    } else {
        (largest_remainder(&vec![1.0; n], config.budget), true)
    };
    let cache_sizes: Vec<u64> = extra.iter().map(|e| e + config.window).collect();
    Ok(AllocationPlan {
        cache_sizes,
        normalized: normalized.to_vec(),
        budget: config.budget,
        window: config.window,
        shortfall: 0,
        uniform_fallback,
    })
}

/// Clamp each head to its capacity (it cannot retain more KV pairs than its
/// sequence holds) and push the trimmed excess back onto the uncapped heads
/// proportionally, repeating until stable. If the total capacity cannot hold
/// B + n·s, every head saturates and the unplaced budget is reported as
/// `shortfall`.
pub fn cap_and_redistribute(
    plan: &AllocationPlan,
    capacity: &[u64],
) -> Result<AllocationPlan, AllocError> {
    let n = plan.cache_sizes.len();
    if capacity.len() != n {
        return Err(AllocError::LengthMismatch { got: capacity.len(), expected: n });
    }
    for (head, &cap) in capacity.iter().enumerate() {
        if cap < plan.window {
            return Err(AllocError::CapacityBelowWindow {
                head,
                capacity: cap,
                window: plan.window,
            });
        }
    }

    let prefix_cap: Vec<u64> = capacity.iter().map(|c| c - plan.window).collect();
    let mut fixed: Vec<Option<u64>> = vec![None; n];
    let mut remaining_budget = plan.budget;

    loop {
        let active: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
        if active.is_empty() {
            break;
        }
        let weights: Vec<f64> = active.iter().map(|&i| plan.normalized[i]).collect();
        let weight_sum: f64 = weights.iter().sum();
        let shares = if weight_sum > 0.0 {
            largest_remainder(&weights, remaining_budget)
        } else {
            largest_remainder(&vec![1.0; active.len()], remaining_budget)
        };
        let mut overflowed = false;
        for (&head, &share) in active.iter().zip(&shares) {
            if share > prefix_cap[head] {
                fixed[head] = Some(prefix_cap[head]);
                remaining_budget -= prefix_cap[head];
                overflowed = true;
            }
        }
        if !overflowed {
            for (&head, &share) in active.iter().zip(&shares) {
                fixed[head] = Some(share);
            }
            break;
        }
    }

    let granted: Vec<u64> = fixed.into_iter().map(|g| g.unwrap_or(0)).collect();
    let placed: u64 = granted.iter().sum();
    Ok(AllocationPlan {
        cache_sizes: granted.iter().map(|g| g + plan.window).collect(),
        normalized: plan.normalized.clone(),
        budget: plan.budget,
        window: plan.window,
        shortfall: plan.budget - placed,
        uniform_fallback: plan.uniform_fallback,
    })
}
