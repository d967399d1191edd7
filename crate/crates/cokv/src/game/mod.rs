//! Players, coalitions, utility oracles, and exact ground-truth computations.
//!
//! A cooperative game is a player set together with a utility function over
//! coalitions. In the KV-cache setting the players are attention-head groups
//! and the utility is task accuracy with the non-members masked; here a set
//! of closed-form families stands in so that exact values stay enumerable at
//! desk scale. External evaluators plug in through the oracle bridge.

mod exact;
mod mask;

pub use exact::{
    complementary_contribution, exact_shapley, exact_shapley_cc, exact_slice_value, exact_ssv,
    EXACT_PLAYER_LIMIT,
};
pub use mask::CoalitionMask;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Errors from game construction and utility evaluation.
#[derive(Debug, Error)]
pub enum GameError {
    #[error("coalition mask covers {mask_n} players, oracle expects {oracle_n}")]
    DimensionMismatch { mask_n: usize, oracle_n: usize },

    #[error("exact enumeration supports at most {limit} players, got {n}")]
    TooManyPlayers { n: usize, limit: usize },

    #[error("slice size {slice} outside 1..={n}")]
    InvalidSliceSize { slice: usize, n: usize },

    #[error("slice set must be nonempty")]
    EmptySliceSet,

    #[error("slice sizes must be strictly increasing, got {sizes:?}")]
    UnsortedSliceSet { sizes: Vec<usize> },

    #[error("player index {player} outside 0..{n}")]
    InvalidPlayer { player: usize, n: usize },

    #[error("invalid game spec: {0}")]
    InvalidSpec(String),

    #[error("utility {value} outside declared range [{min}, {max}] for coalition {coalition}")]
    RangeViolation {
        value: f64,
        min: f64,
        max: f64,
        coalition: String,
    },

    #[error("evaluation failed for coalition {coalition}: {source}")]
    Evaluation {
        coalition: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

/// Identifier for one player.
///
/// Head groups are addressed as (layer, group); synthetic games may use
/// free-form names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlayerLabel {
    LayerGroup(u32, u32),
    Name(String),
}

impl fmt::Display for PlayerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LayerGroup(layer, group) => write!(f, "L{layer}.G{group}"),
            Self::Name(name) => f.write_str(name),
        }
    }
}

/// The player set: a count plus one unique label per player.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlayerSet {
    labels: Vec<PlayerLabel>,
}

impl PlayerSet {
    pub fn new(labels: Vec<PlayerLabel>) -> Result<Self, GameError> {
        if labels.is_empty() {
            return Err(GameError::InvalidSpec("player set must be nonempty".into()));
        }
        for (i, a) in labels.iter().enumerate() {
            for b in labels.iter().skip(i + 1) {
                if a == b {
                    return Err(GameError::InvalidSpec(format!("duplicate player label {a:?}")));
                }
            }
        }
        Ok(Self { labels })
    }

    /// `n` players labeled `p0..p{n-1}`.
    pub fn numbered(n: usize) -> Result<Self, GameError> {
        Self::new((0..n).map(|i| PlayerLabel::Name(format!("p{i}"))).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[PlayerLabel] {
        &self.labels
    }

    pub fn label(&self, player: usize) -> &PlayerLabel {
        &self.labels[player]
    }
}

/// A deterministic coalition-utility evaluator with a declared range.
///
/// Implementations must be pure in the coalition (same mask, same value) and
/// safe to call from multiple threads; the evaluation counter is the number
/// of true evaluations performed, monotonically nondecreasing.
pub trait UtilityOracle: Send + Sync {
    fn player_count(&self) -> usize;

    /// Declared inclusive bounds [u_min, u_max] every utility lies in.
    fn utility_range(&self) -> (f64, f64);

    fn evaluate(&self, coalition: &CoalitionMask) -> Result<f64, GameError>;

    fn evaluations(&self) -> u64;

    /// Stable identity hash of the game; cache keys embed it so evaluations
    /// from different games can never be confused.
    fn fingerprint(&self) -> String;

    fn check_dimensions(&self, coalition: &CoalitionMask) -> Result<(), GameError> {
        if coalition.len() != self.player_count() {
            return Err(GameError::DimensionMismatch {
                mask_n: coalition.len(),
                oracle_n: self.player_count(),
            });
        }
        Ok(())
    }
}

/// A nonempty strictly increasing set of coalition sizes H ⊆ {1..n}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SliceSet {
    sizes: Vec<usize>,
}

impl SliceSet {
    pub fn new(sizes: Vec<usize>, n: usize) -> Result<Self, GameError> {
        if sizes.is_empty() {
            return Err(GameError::EmptySliceSet);
        }
        if !sizes.windows(2).all(|w| w[0] < w[1]) {
            return Err(GameError::UnsortedSliceSet { sizes });
        }
        for &j in &sizes {
            if j < 1 || j > n {
                return Err(GameError::InvalidSliceSize { slice: j, n });
            }
        }
        Ok(Self { sizes })
    }

    /// The full slice set {1..n}, under which the sliced value equals the
    /// Shapley value.
    pub fn full(n: usize) -> Self {
        Self { sizes: (1..=n).collect() }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.sizes.binary_search(&j).is_ok()
    }
}

/// JSON-loadable game description: `{"family": "...", "n": int, "params": {...}}`.
///
/// Families `additive`, `symmetric`, `weighted-voting`, and `saboteur` build
/// in-process games via [`Game::from_spec`]; family `external` carries the
/// oracle-bridge endpoint configuration and is wired up by the caller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameSpec {
    pub family: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<PlayerLabel>>,
    pub params: serde_json::Value,
}

impl GameSpec {
    pub fn from_json(text: &str) -> Result<Self, GameError> {
        serde_json::from_str(text).map_err(|e| GameError::InvalidSpec(e.to_string()))
    }

    pub fn is_external(&self) -> bool {
        self.family == "external"
    }
}

#[derive(Debug, Clone, Deserialize)]
struct AdditiveParams {
    weights: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct SymmetricParams {
    table: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct WeightedVotingParams {
    weights: Vec<f64>,
    quota: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct SaboteurParams {
    base: f64,
    #[serde(default)]
    helpful: std::collections::BTreeMap<usize, f64>,
    #[serde(default)]
    harmful: std::collections::BTreeMap<usize, f64>,
}

#[derive(Debug, Clone)]
enum Family {
    /// U(S) = Σ_{i∈S} w_i.
    Additive { weights: Vec<f64> },
    /// U(S) = table[|S|]; all players interchangeable.
    Symmetric { table: Vec<f64> },
    /// U(S) = 1 if Σ_{i∈S} w_i ≥ quota else 0.
    WeightedVoting { weights: Vec<f64>, quota: f64 },
    /// U(S) = base + Σ_{i∈S} delta_i with helpful deltas ≥ 0 and harmful ≤ 0.
    Saboteur { base: f64, deltas: Vec<f64> },
    /// Explicit utility per coalition, indexed by mask bits; n ≤ 20.
    Tabular { values: Vec<f64> },
}

/// A built-in closed-form game implementing [`UtilityOracle`].
pub struct Game {
    players: PlayerSet,
    family: Family,
    range: (f64, f64),
    fingerprint: String,
    evals: AtomicU64,
}

impl Game {
    /// Build a game from a parsed [`GameSpec`]. Family `external` is not
    /// constructible here; wire it through the oracle bridge instead.
    pub fn from_spec(spec: &GameSpec) -> Result<Self, GameError> {
        let n = spec.n;
        if n == 0 {
            return Err(GameError::InvalidSpec("n must be at least 1".into()));
        }
        let players = match &spec.labels {
            Some(labels) => {
                if labels.len() != n {
                    return Err(GameError::InvalidSpec(format!(
                        "{} labels for n = {n}",
                        labels.len()
                    )));
                }
                PlayerSet::new(labels.clone())?
            }
            None => PlayerSet::numbered(n)?,
        };
        let family = match spec.family.as_str() {
            "additive" => {
                let p: AdditiveParams = parse_params(&spec.params)?;
                if p.weights.len() != n {
                    return Err(GameError::InvalidSpec(format!(
                        "additive family needs {n} weights, got {}",
                        p.weights.len()
                    )));
                }
                Family::Additive { weights: p.weights }
            }
            "symmetric" => {
                let p: SymmetricParams = parse_params(&spec.params)?;
                if p.table.len() != n + 1 {
                    return Err(GameError::InvalidSpec(format!(
                        "symmetric family needs a table of {} values (sizes 0..={n}), got {}",
                        n + 1,
                        p.table.len()
                    )));
                }
                Family::Symmetric { table: p.table }
            }
            "weighted-voting" => {
                let p: WeightedVotingParams = parse_params(&spec.params)?;
                if p.weights.len() != n {
                    return Err(GameError::InvalidSpec(format!(
                        "weighted-voting family needs {n} weights, got {}",
                        p.weights.len()
                    )));
                }
                if p.weights.iter().any(|w| *w < 0.0) {
                    return Err(GameError::InvalidSpec("voting weights must be nonnegative".into()));
                }
                Family::WeightedVoting { weights: p.weights, quota: p.quota }
            }
            "saboteur" => {
                let p: SaboteurParams = parse_params(&spec.params)?;
                let mut deltas = vec![0.0; n];
                for (&i, &gain) in &p.helpful {
                    if i >= n {
                        return Err(GameError::InvalidPlayer { player: i, n });
                    }
                    if gain < 0.0 {
                        return Err(GameError::InvalidSpec(format!(
                            "helpful gain for player {i} must be nonnegative, got {gain}"
                        )));
                    }
                    deltas[i] = gain;
                }
                for (&i, &penalty) in &p.harmful {
                    if i >= n {
                        return Err(GameError::InvalidPlayer { player: i, n });
                    }
                    if penalty > 0.0 {
                        return Err(GameError::InvalidSpec(format!(
                            "harmful penalty for player {i} must be nonpositive, got {penalty}"
                        )));
                    }
                    if p.helpful.contains_key(&i) {
                        return Err(GameError::InvalidSpec(format!(
                            "player {i} listed as both helpful and harmful"
                        )));
                    }
                    deltas[i] = penalty;
                }
                Family::Saboteur { base: p.base, deltas }
            }
            "external" => {
                return Err(GameError::InvalidSpec(
                    "family \"external\" is an oracle-bridge endpoint, not a built-in game".into(),
                ));
            }
            other => {
                return Err(GameError::InvalidSpec(format!("unknown family {other:?}")));
            }
        };
        Ok(Self::from_family(players, family, fingerprint_of(spec)))
    }

    /// Additive game with the given per-player weights.
    pub fn additive(weights: Vec<f64>) -> Self {
        let spec = serde_json::json!({"family": "additive", "n": weights.len(), "params": {"weights": weights}});
        let players = PlayerSet::numbered(weights.len()).expect("nonempty weights");
        Self::from_family(
            players,
            Family::Additive { weights },
            fingerprint_of(&serde_json::from_value(spec).expect("well-formed spec")),
        )
    }

    /// Symmetric game given the value-by-size table (length n+1).
    pub fn symmetric(n: usize, table: Vec<f64>) -> Result<Self, GameError> {
        let spec = GameSpec {
            family: "symmetric".into(),
            n,
            labels: None,
            params: serde_json::json!({"table": table}),
        };
        Self::from_spec(&spec)
    }

    /// Saboteur game: `base` plus signed per-player deltas (positive = helpful,
    /// negative = harmful, zero = neutral).
    pub fn saboteur(base: f64, deltas: Vec<f64>) -> Self {
        let n = deltas.len();
        let helpful: std::collections::BTreeMap<usize, f64> = deltas
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > 0.0)
            .map(|(i, d)| (i, *d))
            .collect();
        let harmful: std::collections::BTreeMap<usize, f64> = deltas
            .iter()
            .enumerate()
            .filter(|(_, d)| **d < 0.0)
            .map(|(i, d)| (i, *d))
            .collect();
        let spec = GameSpec {
            family: "saboteur".into(),
            n,
            labels: None,
            params: serde_json::json!({"base": base, "helpful": helpful, "harmful": harmful}),
        };
        let players = PlayerSet::numbered(n).expect("nonempty deltas");
        Self::from_family(players, Family::Saboteur { base, deltas }, fingerprint_of(&spec))
    }

    /// A seeded random game rotating through the families: tabular, additive,
    /// symmetric, saboteur. Utilities stay within [−1, 1]-ish ranges so
    /// exact-path tolerances hold uniformly. Requires n ≤ 20 (tabular case).
    pub fn random_mixed(n: usize, seed: u64) -> Result<Self, GameError> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x636f6b76);
        match seed % 4 {
            0 => Self::tabular_random(n, rng.random()),
            1 => {
                let weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.25).collect();
                Ok(Self::additive(weights))
            }
            2 => {
                let table: Vec<f64> = (0..=n).map(|_| rng.random::<f64>()).collect();
                Self::symmetric(n, table)
            }
            _ => {
                let deltas: Vec<f64> = (0..n)
                    .map(|_| match rng.random_range(0..3u8) {
                        0 => 0.0,
                        1 => rng.random::<f64>() * 0.2,
                        _ => -(rng.random::<f64>() * 0.2),
                    })
                    .collect();
                Ok(Self::saboteur(0.5, deltas))
            }
        }
    }

    /// A game with one independently drawn utility per coalition, uniform in
    /// [0, 1]. The strongest stress case for estimator/oracle cross-checks
    /// since it has no family structure at all. Requires n ≤ 20.
    pub fn tabular_random(n: usize, seed: u64) -> Result<Self, GameError> {
        if n > EXACT_PLAYER_LIMIT {
            return Err(GameError::TooManyPlayers { n, limit: EXACT_PLAYER_LIMIT });
        }
        if n == 0 {
            return Err(GameError::InvalidSpec("n must be at least 1".into()));
        }
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..1usize << n).map(|_| rng.random::<f64>()).collect();
        let players = PlayerSet::numbered(n)?;
        let fingerprint = hex_digest(format!("tabular:{n}:{seed}").as_bytes());
        Ok(Self::from_family(players, Family::Tabular { values }, fingerprint))
    }

    fn from_family(players: PlayerSet, family: Family, fingerprint: String) -> Self {
        let range = family_range(&family);
        Self { players, family, range, fingerprint, evals: AtomicU64::new(0) }
    }

    pub fn players(&self) -> &PlayerSet {
        &self.players
    }
}

/// CSV rows `player_index,label,value` for exact per-player results.
pub fn write_values_csv<W: std::io::Write>(
    players: &PlayerSet,
    values: &[f64],
    writer: W,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["player_index", "label", "value"])?;
    for (i, value) in values.iter().enumerate() {
        out.write_record(&[i.to_string(), players.label(i).to_string(), format!("{value}")])?;
    }
    out.flush()?;
    Ok(())
}

fn parse_params<T: serde::de::DeserializeOwned>(params: &serde_json::Value) -> Result<T, GameError> {
    serde_json::from_value(params.clone()).map_err(|e| GameError::InvalidSpec(e.to_string()))
}

fn family_range(family: &Family) -> (f64, f64) {
    match family {
        Family::Additive { weights } => (
            weights.iter().map(|w| w.min(0.0)).sum(),
            weights.iter().map(|w| w.max(0.0)).sum(),
        ),
        Family::Symmetric { table } => (
            table.iter().copied().fold(f64::INFINITY, f64::min),
            table.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
        Family::WeightedVoting { .. } => (0.0, 1.0),
        Family::Saboteur { base, deltas } => (
            base + deltas.iter().map(|d| d.min(0.0)).sum::<f64>(),
            base + deltas.iter().map(|d| d.max(0.0)).sum::<f64>(),
        ),
        Family::Tabular { values } => (
            values.iter().copied().fold(f64::INFINITY, f64::min),
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
    }
}

fn fingerprint_of(spec: &GameSpec) -> String {
    let canonical = serde_json::to_string(spec).expect("game spec serializes");
    hex_digest(canonical.as_bytes())
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl UtilityOracle for Game {
    fn player_count(&self) -> usize {
        self.players.len()
    }

    fn utility_range(&self) -> (f64, f64) {
        self.range
    }

    fn evaluate(&self, coalition: &CoalitionMask) -> Result<f64, GameError> {
        self.check_dimensions(coalition)?;
        self.evals.fetch_add(1, Ordering::Relaxed);
        let value = match &self.family {
            Family::Additive { weights } => coalition.members().map(|i| weights[i]).sum(),
            Family::Symmetric { table } => table[coalition.count()],
            Family::WeightedVoting { weights, quota } => {
                let total: f64 = coalition.members().map(|i| weights[i]).sum();
                if total >= *quota {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Saboteur { base, deltas } => {
                base + coalition.members().map(|i| deltas[i]).sum::<f64>()
            }
            Family::Tabular { values } => values[coalition.to_bits() as usize],
        };
        Ok(value)
    }

    fn evaluations(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_utility_sums_member_weights() {
        let game = Game::additive(vec![1.0, 2.0, 3.0, 4.0]);
        let s = CoalitionMask::from_members(4, &[0, 2]);
        assert_eq!(game.evaluate(&s).unwrap(), 4.0);
        assert_eq!(game.evaluate(&CoalitionMask::empty(4)).unwrap(), 0.0);
        assert_eq!(game.evaluations(), 2);
    }

    #[test]
    fn saboteur_full_coalition_includes_penalty() {
        let game = Game::saboteur(1.0, vec![0.0, -0.3, 0.0]);
        let full = CoalitionMask::full(3);
        assert!((game.evaluate(&full).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn spec_round_trip_builds_equivalent_game() {
        let text = r#"{"family":"saboteur","n":3,"params":{"base":1.0,"harmful":{"1":-0.3}}}"#;
        let spec = GameSpec::from_json(text).unwrap();
        let game = Game::from_spec(&spec).unwrap();
        let full = CoalitionMask::full(3);
        assert!((game.evaluate(&full).unwrap() - 0.7).abs() < 1e-15);
        let (lo, hi) = game.utility_range();
        assert!((lo - 0.7).abs() < 1e-15 && (hi - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_voting_is_binary() {
        let spec = GameSpec {
            family: "weighted-voting".into(),
            n: 3,
            labels: None,
            params: serde_json::json!({"weights": [2.0, 1.0, 1.0], "quota": 3.0}),
        };
        let game = Game::from_spec(&spec).unwrap();
        assert_eq!(game.evaluate(&CoalitionMask::from_members(3, &[0, 1])).unwrap(), 1.0);
        assert_eq!(game.evaluate(&CoalitionMask::from_members(3, &[1, 2])).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let game = Game::additive(vec![1.0, 2.0]);
        let err = game.evaluate(&CoalitionMask::empty(3)).unwrap_err();
        assert!(matches!(err, GameError::DimensionMismatch { mask_n: 3, oracle_n: 2 }));
    }

    #[test]
    fn mismatched_labels_are_rejected() {
        let spec = GameSpec {
            family: "additive".into(),
            n: 2,
            labels: Some(vec![PlayerLabel::Name("a".into())]),
            params: serde_json::json!({"weights": [1.0, 2.0]}),
        };
        assert!(matches!(Game::from_spec(&spec), Err(GameError::InvalidSpec(_))));
    }

    #[test]
    fn fingerprints_separate_games() {
        let a = Game::additive(vec![1.0, 2.0]);
        let b = Game::additive(vec![2.0, 1.0]);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), Game::additive(vec![1.0, 2.0]).fingerprint());
    }

    #[test]
    fn slice_set_validation() {
        assert!(SliceSet::new(vec![], 4).is_err());
        assert!(SliceSet::new(vec![2, 2], 4).is_err());
        assert!(SliceSet::new(vec![3, 2], 4).is_err());
        assert!(SliceSet::new(vec![0, 2], 4).is_err());
        assert!(SliceSet::new(vec![2, 5], 4).is_err());
        let h = SliceSet::new(vec![1, 3], 4).unwrap();
        assert!(h.contains(3) && !h.contains(2));
        assert_eq!(SliceSet::full(3).sizes(), &[1, 2, 3]);
    }

    #[test]
    fn values_csv_quotes_awkward_labels() {
        let players = PlayerSet::new(vec![
            PlayerLabel::LayerGroup(3, 1),
            PlayerLabel::Name("odd,label".into()),
        ])
        .unwrap();
        let mut out = Vec::new();
        write_values_csv(&players, &[0.5, -1.0], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "player_index,label,value\n0,L3.G1,0.5\n1,\"odd,label\",-1\n"
        );
    }

    #[test]
    fn tabular_random_is_seed_deterministic() {
        let a = Game::tabular_random(5, 9).unwrap();
        let b = Game::tabular_random(5, 9).unwrap();
        for bits in 0..1u64 << 5 {
            let mask = CoalitionMask::from_bits(5, bits);
            assert_eq!(a.evaluate(&mask).unwrap(), b.evaluate(&mask).unwrap());
        }
    }
}
