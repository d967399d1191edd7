//! Per-head token eviction: window-query attention scoring, 1-D max pooling,
//! top-k retention.
//!
//! The local window's queries attend to the prefix keys; each softmax row is
//! max-pooled along the key axis (stride 1, length-preserving) and the rows
//! are averaged into one score per prefix position. The head keeps its top
//! c − s prefix positions plus the full window, preserving sequence order.

mod tensor;

pub use tensor::{
    read_tensor_file, write_tensor_file, HeadTensorBundle, Matrix, TENSOR_MAGIC, TENSOR_VERSION,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvictError {
    #[error("inconsistent tensor shapes: {0}")]
    Shape(String),

    #[error("prefix is empty; nothing to score or evict")]
    EmptyPrefix,

    #[error("no local-window queries (s = 0); scores are undefined, fall back to a positional policy upstream")]
    NoGuideWindow,

    #[error("cache budget {budget} is below the window size {window}")]
    BudgetBelowWindow { budget: u64, window: usize },

    #[error("pooling kernel must be an odd positive integer, got {0}")]
    InvalidKernel(usize),

    #[error("cache is empty")]
    EmptyCache,

    #[error("tensor file {path} at byte {offset}: {message}")]
    Format {
        path: std::path::PathBuf,
        offset: u64,
        message: String,
    },

    #[error("tensor file {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// 1-D max-pooling parameters: odd kernel, stride 1, length-preserving
/// windows clipped at the edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub kernel: usize,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self { kernel: 7 }
    }
}

impl PoolingConfig {
    pub fn new(kernel: usize) -> Result<Self, EvictError> {
        if kernel == 0 || kernel % 2 == 0 {
            return Err(EvictError::InvalidKernel(kernel));
        }
        Ok(Self { kernel })
    }
}

/// Retained cache for one head: which prefix rows survived, plus the stacked
/// K/V matrices (retained prefix rows first, then the window, both in
/// original sequence order).
#[derive(Debug, Clone, PartialEq)]
pub struct EvictionResult {
    pub retained_prefix_indices: Vec<usize>,
    pub k_hat: Matrix,
    pub v_hat: Matrix,
}

impl EvictionResult {
    pub fn retained_rows(&self) -> usize {
        self.k_hat.rows()
    }
}

/// Scaled dot-product logits row-softmaxed in f64: softmax(q · kᵀ / √d).
/// Rows are the queries, columns the key positions.
fn softmax_rows(queries: &Matrix, keys: &Matrix) -> Vec<Vec<f64>> {
    let d = queries.cols();
    let scale = 1.0 / (d as f64).sqrt();
    let mut rows = Vec::with_capacity(queries.rows());
    for r in 0..queries.rows() {
        let q = queries.row(r);
        let mut logits: Vec<f64> = (0..keys.rows())
            .map(|c| {
                let k = keys.row(c);
                let dot: f64 = q.iter().zip(k).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                dot * scale
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for logit in logits.iter_mut() {
            *logit = (*logit - max).exp();
            total += *logit;
        }
        for logit in logits.iter_mut() {
            *logit /= total;
        }
        rows.push(logits);
    }
    rows
}

/// Length-preserving sliding max with the window clipped at both edges.
fn max_pool_same(row: &[f64], kernel: usize) -> Vec<f64> {
    let half = kernel / 2;
    let len = row.len();
    (0..len)
        .map(|c| {
            let lo = c.saturating_sub(half);
            let hi = (c + half + 1).min(len);
            row[lo..hi].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Per-prefix-position importance scores in (0, 1]: row-softmax of the
/// window queries against the prefix keys, max-pooled per row along the key
/// axis, then averaged over the query rows.
pub fn pooled_scores(
    q_win: &Matrix,
    k_out: &Matrix,
    pooling: &PoolingConfig,
) -> Result<Vec<f64>, EvictError> {
    if pooling.kernel == 0 || pooling.kernel % 2 == 0 {
        return Err(EvictError::InvalidKernel(pooling.kernel));
    }
    if q_win.rows() == 0 {
        return Err(EvictError::NoGuideWindow);
    }
    if k_out.rows() == 0 {
        return Err(EvictError::EmptyPrefix);
    }
    if q_win.cols() != k_out.cols() {
        return Err(EvictError::Shape(format!(
            "queries have dimension {}, keys {}",
            q_win.cols(),
            k_out.cols()
        )));
    }

    let attention = softmax_rows(q_win, k_out);
    let len = k_out.rows();
    let mut scores = vec![0.0f64; len];
    for row in &attention {
        let pooled = max_pool_same(row, pooling.kernel);
        for (acc, v) in scores.iter_mut().zip(&pooled) {
            *acc += v;
        }
    }
    let s = q_win.rows() as f64;
    for v in scores.iter_mut() {
        *v /= s;
    }
    Ok(scores)
}

/// Prefix positions ranked by score, ties to the lower index; the k winners
/// returned in ascending sequence order.
pub fn top_scored_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order.into_iter().take(k).collect();
    kept.sort_unstable();
    kept
}

/// Apply a cache budget to one head: keep the top (budget − s) prefix
/// positions by pooled score and the whole window. A budget of s keeps the
/// window only; a budget of m or more keeps everything.
pub fn evict(
    bundle: &HeadTensorBundle,
    budget: u64,
    pooling: &PoolingConfig,
) -> Result<EvictionResult, EvictError> {
    bundle.validate()?;
    let window = bundle.window_len();
    if budget < window as u64 {
        return Err(EvictError::BudgetBelowWindow { budget, window });
    }

    let prefix_len = bundle.prefix_len();
    let keep = usize::try_from(budget - window as u64)
        .unwrap_or(prefix_len)
        .min(prefix_len);
    let retained_prefix_indices = if keep == prefix_len {
        (0..prefix_len).collect()
    } else if keep == 0 {
        Vec::new()
    } else {
        let scores = pooled_scores(&bundle.q_win, &bundle.k_out, pooling)?;
        top_scored_indices(&scores, keep)
    };

    let k_hat = bundle.k_out.gather_rows(&retained_prefix_indices).stack(&bundle.k_win)?;
    let v_hat = bundle.v_out.gather_rows(&retained_prefix_indices).stack(&bundle.v_win)?;
    Ok(EvictionResult { retained_prefix_indices, k_hat, v_hat })
}

/// Single-query attention over a retained cache: softmax(q · k̂ᵀ / √d) · v̂.
pub fn attention_readout(
    query: &[f32],
    k_hat: &Matrix,
    v_hat: &Matrix,
) -> Result<Vec<f64>, EvictError> {
    if k_hat.rows() == 0 {
        return Err(EvictError::EmptyCache);
    }
    if k_hat.rows() != v_hat.rows() {
        return Err(EvictError::Shape(format!(
            "k_hat has {} rows, v_hat {}",
            k_hat.rows(),
            v_hat.rows()
        )));
    }
    if query.len() != k_hat.cols() {
        return Err(EvictError::Shape(format!(
            "query has dimension {}, keys {}",
            query.len(),
            k_hat.cols()
        )));
    }
    let q = Matrix::new(1, query.len(), query.to_vec())?;
    let weights = &softmax_rows(&q, k_hat)[0];
    let mut out = vec![0.0f64; v_hat.cols()];
    for (row, w) in weights.iter().enumerate() {
        for (acc, v) in out.iter_mut().zip(v_hat.row(row)) {
            *acc += w * f64::from(*v);
        }
    }
    Ok(out)
}

/// Fraction of the probe query's full-cache attention mass that lands on
/// retained positions. 1.0 for lossless retention.
pub fn retained_attention_mass(
    bundle: &HeadTensorBundle,
    result: &EvictionResult,
    probe_query: &[f32],
) -> Result<f64, EvictError> {
    bundle.validate()?;
    if probe_query.len() != bundle.head_dim() {
        return Err(EvictError::Shape(format!(
            "probe query has dimension {}, head {}",
            probe_query.len(),
            bundle.head_dim()
        )));
    }
    let all_keys = bundle.k_out.stack(&bundle.k_win)?;
    let q = Matrix::new(1, probe_query.len(), probe_query.to_vec())?;
    let weights = &softmax_rows(&q, &all_keys)[0];

    let prefix_len = bundle.prefix_len();
    let mut mass: f64 = result
        .retained_prefix_indices
        .iter()
        .map(|&i| weights[i])
        .sum();
    mass += weights[prefix_len..].iter().sum::<f64>();
    Ok(mass.min(1.0))
}

/// Deterministic random bundle for tests and fixtures: standard-normal
/// entries from a seeded generator.
pub fn seeded_bundle(window: usize, seq_len: usize, head_dim: usize, seed: u64) -> HeadTensorBundle {
    use rand::{Rng, SeedableRng};
    assert!(seq_len > window, "need at least one prefix position");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |rows: usize, cols: usize| -> Matrix {
        let data: Vec<f32> = (0..rows * cols)
            .map(|_| {
                let u: f64 = rng.random::<f64>();
                let v: f64 = rng.random::<f64>();
                (((-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()) * 0.5) as f32
            })
            .collect();
        Matrix::new(rows, cols, data).expect("sized data")
    };
    let prefix = seq_len - window;
    HeadTensorBundle {
        q_win: fill(window, head_dim),
        k_out: fill(prefix, head_dim),
        v_out: fill(prefix, head_dim),
        k_win: fill(window, head_dim),
        v_win: fill(window, head_dim),
    }
}
