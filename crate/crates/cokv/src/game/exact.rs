//! Brute-force Shapley and sliced-value computations for small player sets.
//!
//! Everything here enumerates coalitions outright, so it is exponential in n
//! and guarded at [`EXACT_PLAYER_LIMIT`] players. These are the reference
//! values the Monte-Carlo estimator is verified against.

use super::{CoalitionMask, GameError, SliceSet, UtilityOracle};

/// Hard ceiling for subset enumeration: 2^20 coalition evaluations.
pub const EXACT_PLAYER_LIMIT: usize = 20;

/// U(S) − U(N∖S): evaluable once, creditable to every member of S.
pub fn complementary_contribution(
    oracle: &dyn UtilityOracle,
    coalition: &CoalitionMask,
) -> Result<f64, GameError> {
    oracle.check_dimensions(coalition)?;
    let with = oracle.evaluate(coalition)?;
    let without = oracle.evaluate(&coalition.complement())?;
    Ok(with - without)
}

/// Exact Shapley value per player by full enumeration of the marginal form
/// SV_i = (1/n) Σ_{S ⊆ N∖{i}} [U(S∪{i}) − U(S)] / C(n−1, |S|).
pub fn exact_shapley(oracle: &dyn UtilityOracle) -> Result<Vec<f64>, GameError> {
    let n = guarded_player_count(oracle)?;
    let utilities = all_utilities(oracle, n)?;
    let binom = binomial_row(n - 1);

    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let bit = 1u64 << i;
        // Bucket marginal contributions by |S| so the per-size weights divide
        // a single compensated sum each.
        let mut buckets = vec![Kahan::default(); n];
        for mask in 0..1u64 << n {
            if mask & bit != 0 {
                continue;
            }
            let size = mask.count_ones() as usize;
            let marginal = utilities[(mask | bit) as usize] - utilities[mask as usize];
            buckets[size].add(marginal);
        }
        let mut total = Kahan::default();
        for (size, bucket) in buckets.iter().enumerate() {
            total.add(bucket.value() / binom[size]);
        }
        values.push(total.value() / n as f64);
    }
    Ok(values)
}

/// Exact Shapley value via complementary contributions:
/// SV_i = (1/n) Σ_{j=1..n} SV_{i,j} with SV_{i,j} averaging U(S) − U(N∖S)
/// over the (i,j)-coalitions. Must agree with [`exact_shapley`].
pub fn exact_shapley_cc(oracle: &dyn UtilityOracle) -> Result<Vec<f64>, GameError> {
    let n = guarded_player_count(oracle)?;
    let slice_values = all_slice_values(oracle, n)?;
    let mut values = Vec::with_capacity(n);
    for row in &slice_values {
        let mut total = Kahan::default();
        for v in row {
            total.add(*v);
        }
        values.push(total.value() / n as f64);
    }
    Ok(values)
}

/// SV_{i,j}: the expected complementary contribution over coalitions of size
/// `slice` containing `player`. Both indices are zero-based except `slice`,
/// which is the coalition size in 1..=n.
pub fn exact_slice_value(
    oracle: &dyn UtilityOracle,
    player: usize,
    slice: usize,
) -> Result<f64, GameError> {
    let n = guarded_player_count(oracle)?;
    if player >= n {
        return Err(GameError::InvalidPlayer { player, n });
    }
    if slice < 1 || slice > n {
        return Err(GameError::InvalidSliceSize { slice, n });
    }

    let bit = 1u64 << player;
    let others: Vec<usize> = (0..n).filter(|&i| i != player).collect();
    let mut sum = Kahan::default();
    for rest in combinations_bits(n - 1, slice - 1) {
        let mut mask = bit;
        for (pos, &p) in others.iter().enumerate() {
            if rest >> pos & 1 == 1 {
                mask |= 1u64 << p;
            }
        }
        let coalition = CoalitionMask::from_bits(n, mask);
        sum.add(complementary_contribution(oracle, &coalition)?);
    }
    Ok(sum.value() / binomial(n - 1, slice - 1))
}

/// Exact sliced Shapley value SSV_i = (1/|H|) Σ_{j∈H} SV_{i,j} for all players.
pub fn exact_ssv(oracle: &dyn UtilityOracle, slices: &SliceSet) -> Result<Vec<f64>, GameError> {
    let n = guarded_player_count(oracle)?;
    for &j in slices.sizes() {
        if j > n {
            return Err(GameError::InvalidSliceSize { slice: j, n });
        }
    }
    let slice_values = all_slice_values(oracle, n)?;
    let mut values = Vec::with_capacity(n);
    for row in &slice_values {
        let mut total = Kahan::default();
        for &j in slices.sizes() {
            total.add(row[j - 1]);
        }
        values.push(total.value() / slices.len() as f64);
    }
    Ok(values)
}

/// SV_{i,j} for every player i and size j, as an n × n table (j−1 column).
fn all_slice_values(oracle: &dyn UtilityOracle, n: usize) -> Result<Vec<Vec<f64>>, GameError> {
    let utilities = all_utilities(oracle, n)?;
    let full = (1u64 << n) - 1;
    let mut buckets = vec![vec![Kahan::default(); n]; n];
    for mask in 1..=full {
        let size = mask.count_ones() as usize;
        let contribution = utilities[mask as usize] - utilities[(full ^ mask) as usize];
        let mut rest = mask;
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            buckets[i][size - 1].add(contribution);
            rest &= rest - 1;
        }
    }
    Ok((0..n)
        .map(|i| {
            (1..=n)
                .map(|j| buckets[i][j - 1].value() / binomial(n - 1, j - 1))
                .collect()
        })
        .collect())
}

fn guarded_player_count(oracle: &dyn UtilityOracle) -> Result<usize, GameError> {
    let n = oracle.player_count();
    if n > EXACT_PLAYER_LIMIT {
        return Err(GameError::TooManyPlayers { n, limit: EXACT_PLAYER_LIMIT });
    }
    Ok(n)
}

/// Evaluate every coalition, indexed by mask bits, in fixed mask order.
fn all_utilities(oracle: &dyn UtilityOracle, n: usize) -> Result<Vec<f64>, GameError> {
    let mut utilities = Vec::with_capacity(1 << n);
    for mask in 0..1u64 << n {
        utilities.push(oracle.evaluate(&CoalitionMask::from_bits(n, mask))?);
    }
    Ok(utilities)
}

/// All k-subsets of `width` bit positions in ascending numeric order
/// (Gosper's hack). Yields the single zero mask when k = 0.
fn combinations_bits(width: usize, k: usize) -> impl Iterator<Item = u64> {
    let limit = 1u64 << width;
    let mut current = if k == 0 { Some(0u64) } else { Some((1u64 << k) - 1) };
    std::iter::from_fn(move || {
        let value = current?;
        if value >= limit {
            current = None;
            return None;
        }
        current = if value == 0 {
            None
        } else {
            let low = value & value.wrapping_neg();
            let ripple = value + low;
            Some(ripple | (((value ^ ripple) >> 2) / low))
        };
        Some(value)
    })
}

/// C(n, k) exactly; n ≤ 20 keeps every intermediate within u64.
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut result: u64 = 1;
    for i in 0..k {
        result = result * (n - i) as u64 / (i + 1) as u64;
    }
    result as f64
}

fn binomial_row(n: usize) -> Vec<f64> {
    (0..=n).map(|k| binomial(n, k)).collect()
}

/// Compensated (Kahan) accumulator; keeps enumeration sums well below the
/// 1e-9 exact-path tolerance regardless of term count.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(self) -> f64 {
        self.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Game;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn additive_game_recovers_weights() {
        let game = Game::additive(vec![1.0, 2.0, 3.0, 4.0]);
        let sv = exact_shapley(&game).unwrap();
        assert!(max_abs_diff(&sv, &[1.0, 2.0, 3.0, 4.0]) <= 1e-9, "got {sv:?}");
        let cc = exact_shapley_cc(&game).unwrap();
        assert!(max_abs_diff(&cc, &[1.0, 2.0, 3.0, 4.0]) <= 1e-9, "got {cc:?}");
    }

    #[test]
    fn single_player_marginal() {
        let game = Game::symmetric(1, vec![0.1, 0.9]).unwrap();
        let sv = exact_shapley(&game).unwrap();
        assert!((sv[0] - 0.8).abs() <= 1e-12);
        let cc = exact_shapley_cc(&game).unwrap();
        assert!((cc[0] - 0.8).abs() <= 1e-12);
    }

    #[test]
    fn symmetric_game_values_are_identical() {
        let game = Game::symmetric(5, vec![0.0, 0.25, 0.4, 0.7, 0.9, 1.0]).unwrap();
        let sv = exact_shapley(&game).unwrap();
        for v in &sv[1..] {
            assert_eq!(*v, sv[0]);
        }
    }

    #[test]
    fn both_enumerations_agree_on_random_games() {
        let game = Game::tabular_random(5, 42).unwrap();
        let sv = exact_shapley(&game).unwrap();
        let cc = exact_shapley_cc(&game).unwrap();
        assert!(max_abs_diff(&sv, &cc) <= 1e-9);
    }

    #[test]
    fn efficiency_holds() {
        let game = Game::tabular_random(6, 7).unwrap();
        let sv = exact_shapley(&game).unwrap();
        let total: f64 = sv.iter().sum();
        let grand = game.evaluate(&CoalitionMask::full(6)).unwrap();
        let empty = game.evaluate(&CoalitionMask::empty(6)).unwrap();
        assert!((total - (grand - empty)).abs() <= 1e-9);
    }

    #[test]
    fn null_player_gets_zero() {
        let game = Game::additive(vec![0.5, 0.0, 0.25]);
        let sv = exact_shapley(&game).unwrap();
        assert_eq!(sv[1], 0.0);
    }

    #[test]
    fn slice_values_match_hand_enumeration() {
        let game = Game::additive(vec![1.0, 2.0, 3.0, 4.0]);
        // Pairs containing p0: {0,1} → −4, {0,2} → −2, {0,3} → 0; mean −2.
        assert_eq!(exact_slice_value(&game, 0, 2).unwrap(), -2.0);
        // Pairs containing p3: 0, +2, +4; mean +2.
        assert_eq!(exact_slice_value(&game, 3, 2).unwrap(), 2.0);
    }

    #[test]
    fn top_slice_is_grand_contribution() {
        let game = Game::tabular_random(4, 3).unwrap();
        let grand = complementary_contribution(&game, &CoalitionMask::full(4)).unwrap();
        for i in 0..4 {
            assert!((exact_slice_value(&game, i, 4).unwrap() - grand).abs() <= 1e-12);
        }
    }

    #[test]
    fn full_slice_set_equals_shapley() {
        let game = Game::additive(vec![1.0, 2.0, 3.0, 4.0]);
        let ssv = exact_ssv(&game, &SliceSet::full(4)).unwrap();
        assert!(max_abs_diff(&ssv, &[1.0, 2.0, 3.0, 4.0]) <= 1e-9);
    }

    #[test]
    fn pair_slice_hand_values() {
        let game = Game::additive(vec![1.0, 2.0, 3.0, 4.0]);
        let h = SliceSet::new(vec![2], 4).unwrap();
        let ssv = exact_ssv(&game, &h).unwrap();
        let expected = [-2.0, -2.0 / 3.0, 2.0 / 3.0, 2.0];
        assert!(max_abs_diff(&ssv, &expected) <= 1e-12, "got {ssv:?}");
    }

    #[test]
    fn slice_consistency_recovers_shapley() {
        let game = Game::tabular_random(6, 11).unwrap();
        let cc = exact_shapley_cc(&game).unwrap();
        for i in 0..6 {
            let mut acc = 0.0;
            for j in 1..=6 {
                acc += exact_slice_value(&game, i, j).unwrap();
            }
            assert!((acc / 6.0 - cc[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn antisymmetry_is_exact() {
        let game = Game::tabular_random(7, 5).unwrap();
        for bits in [0u64, 1, 0b1010101, 0b1111111, 0b0011000] {
            let s = CoalitionMask::from_bits(7, bits);
            let a = complementary_contribution(&game, &s).unwrap();
            let b = complementary_contribution(&game, &s.complement()).unwrap();
            assert_eq!(a, -b);
        }
    }

    #[test]
    fn enumeration_guard_names_limit() {
        struct Big;
        impl UtilityOracle for Big {
            fn player_count(&self) -> usize {
                21
            }
            fn utility_range(&self) -> (f64, f64) {
                (0.0, 1.0)
            }
            fn evaluate(&self, _: &CoalitionMask) -> Result<f64, GameError> {
                Ok(0.0)
            }
            fn evaluations(&self) -> u64 {
                0
            }
            fn fingerprint(&self) -> String {
                "big".into()
            }
        }
        match exact_shapley(&Big) {
            Err(GameError::TooManyPlayers { n: 21, limit: 20 }) => {}
            other => panic!("expected capability error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_slice_rejected() {
        let game = Game::additive(vec![1.0, 2.0]);
        assert!(matches!(
            exact_slice_value(&game, 0, 0),
            Err(GameError::InvalidSliceSize { .. })
        ));
        assert!(matches!(
            exact_slice_value(&game, 0, 3),
            Err(GameError::InvalidSliceSize { .. })
        ));
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(19, 9), 92378.0);
        assert_eq!(binomial(5, 0), 1.0);
        assert_eq!(binomial(3, 5), 0.0);
    }

    #[test]
    fn combinations_cover_exactly_choose() {
        let got: Vec<u64> = combinations_bits(5, 2).collect();
        assert_eq!(got.len(), 10);
        assert!(got.iter().all(|m| m.count_ones() == 2));
        assert!(got.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(combinations_bits(4, 0).collect::<Vec<_>>(), vec![0]);
    }
}
