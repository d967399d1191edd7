//! C ABI for the cokv toolkit: opaque game handles, status codes, and flat
//! buffers, so any language with a C FFI can score heads, size budgets, and
//! rank tokens.
//!
//! Conventions:
//! - Every fallible function returns [`CokvStatus`]; `Ok` is zero.
//! - On failure, [`cokv_last_error`] returns a thread-local message valid
//!   until the next failing call on the same thread.
//! - Output buffers are caller-allocated; their required lengths are stated
//!   per function and never implicit.
//! - Handles from `cokv_game_*` constructors are freed exactly once with
//!   [`cokv_game_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use cokv::estimator::{estimate_ssv, required_samples, EstimateConfig};
use cokv::evictor::{pooled_scores, top_scored_indices, Matrix, PoolingConfig};
use cokv::game::{
    exact_shapley, exact_ssv, CoalitionMask, Game, GameError, GameSpec, SliceSet, UtilityOracle,
};

/// Result of every fallible call in this ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CokvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    GameError = 3,
    EstimateError = 4,
    AllocationError = 5,
    EvictionError = 6,
    CallbackError = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: CokvStatus, message: impl Into<String>) -> CokvStatus {
    let message = message.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message).ok();
    });
    status
}

fn guard(body: impl FnOnce() -> CokvStatus) -> CokvStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(CokvStatus::Panic, "internal panic"),
    }
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cokv_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |s| s.as_ptr())
    })
}

/// Opaque handle to a utility oracle.
pub struct CokvGame {
    oracle: Box<dyn UtilityOracle>,
}

/// Utility callback: receives the member indices of the coalition S and
/// writes U(S) to `out_utility`, returning 0 on success. Must be pure in the
/// coalition and safe to call from multiple threads when estimating with
/// more than one worker.
pub type CokvUtilityCallback = unsafe extern "C" fn(
    ctx: *mut c_void,
    members: *const usize,
    member_count: usize,
    out_utility: *mut f64,
) -> i32;

struct CallbackOracle {
    n: usize,
    range: (f64, f64),
    callback: CokvUtilityCallback,
    ctx: *mut c_void,
    evals: std::sync::atomic::AtomicU64,
}

// The contract on `CokvUtilityCallback` requires thread safety from the
// callback and its context.
unsafe impl Send for CallbackOracle {}
unsafe impl Sync for CallbackOracle {}

impl UtilityOracle for CallbackOracle {
    fn player_count(&self) -> usize {
        self.n
    }

    fn utility_range(&self) -> (f64, f64) {
        self.range
    }

    fn evaluate(&self, coalition: &CoalitionMask) -> Result<f64, GameError> {
        self.check_dimensions(coalition)?;
        let members: Vec<usize> = coalition.members().collect();
        let mut utility = 0.0f64;
        let code = unsafe {
            (self.callback)(self.ctx, members.as_ptr(), members.len(), &mut utility)
        };
        if code != 0 {
            return Err(GameError::Evaluation {
                coalition: coalition.hex_key(),
                source: format!("callback returned status {code}").into(),
            });
        }
        self.evals.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        Ok(utility)
    }

    fn evaluations(&self) -> u64 {
        self.evals.load(std::sync::atomic::Ordering::Relaxed)
    }

    fn fingerprint(&self) -> String {
        format!("callback-{:p}-{}", self.callback as *const (), self.n)
    }
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn slice_arg_mut<'a, T>(ptr: *mut T, len: usize) -> Option<&'a mut [T]> {
    if len == 0 {
        Some(&mut [])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(ptr, len))
    }
}

/// Build a game from a spec JSON document
/// `{"family": "...", "n": ..., "params": {...}}` (built-in families only).
///
/// # Safety
/// `spec_json` must be a NUL-terminated UTF-8 string; `out_game` must be a
/// valid pointer. On `Ok` the handle must be freed with [`cokv_game_free`].
#[no_mangle]
pub unsafe extern "C" fn cokv_game_from_json(
    spec_json: *const c_char,
    out_game: *mut *mut CokvGame,
) -> CokvStatus {
    guard(|| {
        if spec_json.is_null() || out_game.is_null() {
            return fail(CokvStatus::NullPointer, "null argument");
        }
        let text = match std::ffi::CStr::from_ptr(spec_json).to_str() {
            Ok(t) => t,
            Err(e) => return fail(CokvStatus::InvalidArgument, format!("spec not UTF-8: {e}")),
        };
        let spec = match GameSpec::from_json(text) {
            Ok(s) => s,
            Err(e) => return fail(CokvStatus::InvalidArgument, e.to_string()),
        };
        match Game::from_spec(&spec) {
            Ok(game) => {
                *out_game = Box::into_raw(Box::new(CokvGame { oracle: Box::new(game) }));
                CokvStatus::Ok
            }
            Err(e) => fail(CokvStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Build a game whose utilities come from a caller-supplied callback.
///
/// # Safety
/// `callback` and `ctx` must satisfy the [`CokvUtilityCallback`] contract
/// for the lifetime of the handle; `out_game` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cokv_game_from_callback(
    n: usize,
    u_min: f64,
    u_max: f64,
    callback: CokvUtilityCallback,
    ctx: *mut c_void,
    out_game: *mut *mut CokvGame,
) -> CokvStatus {
    guard(|| {
        if out_game.is_null() {
            return fail(CokvStatus::NullPointer, "null out_game");
        }
        if n == 0 {
            return fail(CokvStatus::InvalidArgument, "n must be at least 1");
        }
        if !(u_min < u_max) {
            return fail(
                CokvStatus::InvalidArgument,
                format!("utility range [{u_min}, {u_max}] is empty"),
            );
        }
        let oracle = CallbackOracle {
            n,
            range: (u_min, u_max),
            callback,
            ctx,
            evals: std::sync::atomic::AtomicU64::new(0),
        };
        *out_game = Box::into_raw(Box::new(CokvGame { oracle: Box::new(oracle) }));
        CokvStatus::Ok
    })
}

/// Free a game handle. Null is a no-op.
///
/// # Safety
/// `game` must be a handle from a `cokv_game_*` constructor, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cokv_game_free(game: *mut CokvGame) {
    if !game.is_null() {
        drop(Box::from_raw(game));
    }
}

/// Number of players in the game; 0 if `game` is null.
///
/// # Safety
/// `game` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cokv_game_player_count(game: *const CokvGame) -> usize {
    if game.is_null() {
        return 0;
    }
    (*game).oracle.player_count()
}

/// U(S) for the coalition listing `member_count` player indices.
///
/// # Safety
/// `members` must point to `member_count` indices; `out_utility` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn cokv_game_utility(
    game: *const CokvGame,
    members: *const usize,
    member_count: usize,
    out_utility: *mut f64,
) -> CokvStatus {
    guard(|| {
        if game.is_null() || out_utility.is_null() {
            return fail(CokvStatus::NullPointer, "null argument");
        }
        let Some(members) = slice_arg(members, member_count) else {
            return fail(CokvStatus::NullPointer, "null members with nonzero count");
        };
        let oracle = &(*game).oracle;
        let n = oracle.player_count();
        if members.iter().any(|&p| p >= n) {
            return fail(CokvStatus::InvalidArgument, format!("member index out of 0..{n}"));
        }
        let mask = CoalitionMask::from_members(n, members);
        match oracle.evaluate(&mask) {
            Ok(value) => {
                *out_utility = value;
                CokvStatus::Ok
            }
            Err(e) => fail(CokvStatus::GameError, e.to_string()),
        }
    })
}

/// Exact Shapley values by full enumeration (n ≤ 20). `out_values` must hold
/// `n` doubles.
///
/// # Safety
/// `game` must be live; `out_values` must hold `player_count` doubles.
#[no_mangle]
pub unsafe extern "C" fn cokv_exact_shapley(
    game: *const CokvGame,
    out_values: *mut f64,
) -> CokvStatus {
    guard(|| {
        if game.is_null() || out_values.is_null() {
            return fail(CokvStatus::NullPointer, "null argument");
        }
        let oracle = &(*game).oracle;
        let Some(out) = slice_arg_mut(out_values, oracle.player_count()) else {
            return fail(CokvStatus::NullPointer, "null out_values");
        };
        match exact_shapley(oracle.as_ref()) {
            Ok(values) => {
                out.copy_from_slice(&values);
                CokvStatus::Ok
            }
            Err(e) => fail(CokvStatus::GameError, e.to_string()),
        }
    })
}

/// Exact sliced Shapley values over the given coalition sizes (n ≤ 20).
/// `out_values` must hold `n` doubles.
///
/// # Safety
/// As [`cokv_exact_shapley`], plus `slices` must hold `slice_count` sizes.
#[no_mangle]
pub unsafe extern "C" fn cokv_exact_ssv(
    game: *const CokvGame,
    slices: *const usize,
    slice_count: usize,
    out_values: *mut f64,
) -> CokvStatus {
    guard(|| {
        if game.is_null() || out_values.is_null() {
            return fail(CokvStatus::NullPointer, "null argument");
        }
        let Some(sizes) = slice_arg(slices, slice_count) else {
            return fail(CokvStatus::NullPointer, "null slices with nonzero count");
        };
        let oracle = &(*game).oracle;
        let n = oracle.player_count();
        let slice_set = match SliceSet::new(sizes.to_vec(), n) {
            Ok(s) => s,
            Err(e) => return fail(CokvStatus::InvalidArgument, e.to_string()),
        };
        let Some(out) = slice_arg_mut(out_values, n) else {
            return fail(CokvStatus::NullPointer, "null out_values");
        };
        match exact_ssv(oracle.as_ref(), &slice_set) {
            Ok(values) => {
                out.copy_from_slice(&values);
                CokvStatus::Ok
            }
            Err(e) => fail(CokvStatus::GameError, e.to_string()),
        }
    })
}

/// Monte-Carlo sliced Shapley estimate: `samples` draws with round-robin
/// slice scheduling, seeded, split over `workers` threads. `out_values`
/// must hold `n` doubles; `out_evaluations` (optional) receives the oracle
/// evaluation count.
///
/// # Safety
/// As [`cokv_exact_ssv`]; with `workers > 1` a callback-backed game must be
/// thread-safe.
#[no_mangle]
pub unsafe extern "C" fn cokv_estimate_ssv(
    game: *const CokvGame,
    slices: *const usize,
    slice_count: usize,
    samples: u64,
    seed: u64,
    workers: usize,
    out_values: *mut f64,
    out_evaluations: *mut u64,
) -> CokvStatus {
    guard(|| {
        if game.is_null() || out_values.is_null() {
            return fail(CokvStatus::NullPointer, "null argument");
        }
        let Some(sizes) = slice_arg(slices, slice_count) else {
            return fail(CokvStatus::NullPointer, "null slices with nonzero count");
        };
        let oracle = &(*game).oracle;
        let n = oracle.player_count();
        let slice_set = match SliceSet::new(sizes.to_vec(), n) {
            Ok(s) => s,
            Err(e) => return fail(CokvStatus::InvalidArgument, e.to_string()),
        };
        let Some(out) = slice_arg_mut(out_values, n) else {
            return fail(CokvStatus::NullPointer, "null out_values");
        };
        let cfg = EstimateConfig::new(slice_set, samples, seed).with_workers(workers.max(1));
        match estimate_ssv(oracle.as_ref(), &cfg) {
            Ok(estimate) => {
                out.copy_from_slice(&estimate.values);
                if !out_evaluations.is_null() {
                    *out_evaluations = estimate.oracle_evaluations;
                }
                CokvStatus::Ok
            }
            Err(e) => fail(CokvStatus::EstimateError, e.to_string()),
        }
    })
}

/// Hoeffding-style sample budget for an (ε, δ)-approximation of every
/// player's sliced value over `h_size` slices with the given utility range.
///
/// # Safety
/// `out_samples` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cokv_required_samples(
    epsilon: f64,
    delta: f64,
    h_size: usize,
    n: usize,
    utility_range: f64,
    out_samples: *mut u64,
) -> CokvStatus {
    guard(|| {
        if out_samples.is_null() {
            return fail(CokvStatus::NullPointer, "null out_samples");
        }
        match required_samples(epsilon, delta, h_size, n, utility_range) {
            Ok(m) => {
                *out_samples = m;
                CokvStatus::Ok
            }
            Err(e) => fail(CokvStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// α-truncated min-max normalization of `n` scores into `out_normalized`
/// (also `n` doubles).
///
/// # Safety
/// `scores` and `out_normalized` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn cokv_normalize_scores(
    scores: *const f64,
    n: usize,
    alpha: usize,
    out_normalized: *mut f64,
) -> CokvStatus {
    guard(|| {
        let (Some(scores), Some(out)) = (slice_arg(scores, n), slice_arg_mut(out_normalized, n))
        else {
            return fail(CokvStatus::NullPointer, "null scores or out_normalized");
        };
        match cokv::allocator::normalize_scores(scores, alpha) {
            Ok(values) => {
                out.copy_from_slice(&values);
                CokvStatus::Ok
            }
            Err(e) => fail(CokvStatus::AllocationError, e.to_string()),
        }
    })
}

/// Largest-remainder budget split: `out_cache_sizes[i]` = window + share of
/// `budget`, conserving the budget exactly.
///
/// # Safety
/// `normalized` and `out_cache_sizes` must each hold `n` entries.
#[no_mangle]
pub unsafe extern "C" fn cokv_allocate(
    normalized: *const f64,
    n: usize,
    budget: u64,
    window: u64,
    out_cache_sizes: *mut u64,
) -> CokvStatus {
    guard(|| {
        let (Some(normalized), Some(out)) =
            (slice_arg(normalized, n), slice_arg_mut(out_cache_sizes, n))
        else {
            return fail(CokvStatus::NullPointer, "null normalized or out_cache_sizes");
        };
        let cfg = cokv::allocator::AllocationConfig { budget, window, alpha: 0 };
        match cokv::allocator::allocate(normalized, &cfg) {
            Ok(plan) => {
                out.copy_from_slice(&plan.cache_sizes);
                CokvStatus::Ok
            }
            Err(e) => fail(CokvStatus::AllocationError, e.to_string()),
        }
    })
}

/// Pooled attention scores of the window queries against the prefix keys:
/// row-softmax(q·kᵀ/√d), per-row max-pool (odd `kernel`, length-preserving),
/// mean over rows. `q_win` is `window_len × head_dim` row-major, `k_out` is
/// `prefix_len × head_dim`, `out_scores` holds `prefix_len` doubles.
///
/// # Safety
/// The buffers must match the stated shapes.
#[no_mangle]
pub unsafe extern "C" fn cokv_pooled_scores(
    q_win: *const f32,
    window_len: usize,
    k_out: *const f32,
    prefix_len: usize,
    head_dim: usize,
    kernel: usize,
    out_scores: *mut f64,
) -> CokvStatus {
    guard(|| {
        let (Some(q), Some(k), Some(out)) = (
            slice_arg(q_win, window_len * head_dim),
            slice_arg(k_out, prefix_len * head_dim),
            slice_arg_mut(out_scores, prefix_len),
        ) else {
            return fail(CokvStatus::NullPointer, "null tensor or output buffer");
        };
        let pooling = match PoolingConfig::new(kernel) {
            Ok(p) => p,
            Err(e) => return fail(CokvStatus::InvalidArgument, e.to_string()),
        };
        let q = match Matrix::new(window_len, head_dim, q.to_vec()) {
            Ok(m) => m,
            Err(e) => return fail(CokvStatus::InvalidArgument, e.to_string()),
        };
        let k = match Matrix::new(prefix_len, head_dim, k.to_vec()) {
            Ok(m) => m,
            Err(e) => return fail(CokvStatus::InvalidArgument, e.to_string()),
        };
        match pooled_scores(&q, &k, &pooling) {
            Ok(scores) => {
                out.copy_from_slice(&scores);
                CokvStatus::Ok
            }
            Err(e) => fail(CokvStatus::EvictionError, e.to_string()),
        }
    })
}

/// Prefix positions retained under a total cache budget (window included):
/// the top `budget − window_len` positions by pooled score, ties to the
/// lower index, written ascending to `out_indices` (capacity `prefix_len`);
/// `out_count` receives how many were written.
///
/// # Safety
/// As [`cokv_pooled_scores`]; `out_indices` must hold `prefix_len` entries.
#[no_mangle]
pub unsafe extern "C" fn cokv_evict_indices(
    q_win: *const f32,
    window_len: usize,
    k_out: *const f32,
    prefix_len: usize,
    head_dim: usize,
    kernel: usize,
    budget: u64,
    out_indices: *mut usize,
    out_count: *mut usize,
) -> CokvStatus {
    guard(|| {
        if out_count.is_null() {
            return fail(CokvStatus::NullPointer, "null out_count");
        }
        if budget < window_len as u64 {
            return fail(
                CokvStatus::EvictionError,
                format!("budget {budget} is below the window size {window_len}"),
            );
        }
        let keep = usize::try_from(budget - window_len as u64)
            .unwrap_or(prefix_len)
            .min(prefix_len);
        let Some(out) = slice_arg_mut(out_indices, prefix_len) else {
            return fail(CokvStatus::NullPointer, "null out_indices");
        };
        if keep == prefix_len {
            for (i, slot) in out.iter_mut().enumerate() {
                *slot = i;
            }
            *out_count = prefix_len;
            return CokvStatus::Ok;
        }
        if keep == 0 {
            *out_count = 0;
            return CokvStatus::Ok;
        }
        let mut scores = vec![0.0f64; prefix_len];
        let status = cokv_pooled_scores(
            q_win,
            window_len,
            k_out,
            prefix_len,
            head_dim,
            kernel,
            scores.as_mut_ptr(),
        );
        if status != CokvStatus::Ok {
            return status;
        }
        let indices = top_scored_indices(&scores, keep);
        out[..indices.len()].copy_from_slice(&indices);
        *out_count = indices.len();
        CokvStatus::Ok
    })
}
