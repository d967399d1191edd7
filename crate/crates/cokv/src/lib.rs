//! Cooperative-game scoring of attention-head groups and the KV-cache
//! machinery that consumes the scores.
//!
//! The pipeline has three stages:
//!
//! 1. [`game`] / [`estimator`] — treat each head group as a player in a
//!    cooperative game and score it with the sliced Shapley value, either
//!    exactly (brute force, small n) or by seeded Monte-Carlo sampling of
//!    complementary contributions.
//! 2. [`allocator`] — turn scores into integer per-head cache budgets via
//!    α-truncated min-max normalization and largest-remainder apportionment.
//! 3. [`evictor`] — apply a budget to one head's KV tensors: window-query
//!    attention scoring, 1-D max pooling, top-k retention.
//!
//! [`bridge`] connects the estimator to out-of-process evaluators (a real
//!    model harness) over line-delimited JSON, with a persistent evaluation
//!    cache. [`cli`] wires everything into the `cokv` binary.

pub mod allocator;
pub mod bridge;
pub mod cli;
pub mod estimator;
pub mod evictor;
pub mod game;

pub use allocator::{
    allocate, cap_and_redistribute, normalize_scores, AllocError, AllocationConfig, AllocationPlan,
};
pub use bridge::{
    load_cache, persist_cache, BatchOutcome, CachedOracle, EvalCache, ExternalOracle, OracleError,
    OracleRequest, OracleResponse,
};
pub use estimator::{
    converged, estimate_ssv, extend_table, finalize_estimate, load_table, load_table_expecting,
    mae, merge_tables, required_samples, sample_once, save_table, ContributionTable,
    EstimateConfig, EstimateError, SliceSchedule, SsvEstimate,
};
pub use evictor::{
    top_scored_indices,
    attention_readout, evict, pooled_scores, read_tensor_file, retained_attention_mass,
    write_tensor_file, EvictError, EvictionResult, HeadTensorBundle, Matrix, PoolingConfig,
};
pub use game::{
    complementary_contribution, exact_shapley, exact_shapley_cc, exact_slice_value, exact_ssv,
    write_values_csv, CoalitionMask, Game, GameError, GameSpec, PlayerLabel, PlayerSet, SliceSet,
    UtilityOracle,
};
