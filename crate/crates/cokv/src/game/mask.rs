//! Coalition membership bitsets.

use std::fmt;

const BLOCK_BITS: usize = 64;

/// Membership bitset over a player set of fixed size `n`.
///
/// Bit `i` set means player `i` belongs to the coalition. Bits at positions
/// `n..` are always zero, so two masks over the same player set compare equal
/// iff their memberships match.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CoalitionMask {
    n: usize,
    blocks: Vec<u64>,
}

impl CoalitionMask {
    /// The empty coalition over `n` players.
    pub fn empty(n: usize) -> Self {
        assert!(n > 0, "player set must be nonempty");
        let blocks = vec![0u64; n.div_ceil(BLOCK_BITS)];
        Self { n, blocks }
    }

    /// The grand coalition N.
    pub fn full(n: usize) -> Self {
        let mut mask = Self::empty(n);
        for block in &mut mask.blocks {
            *block = u64::MAX;
        }
        mask.clear_tail();
        mask
    }

    /// Coalition containing exactly the given player indices.
    ///
    /// Panics if an index is out of range; duplicate indices are harmless.
    pub fn from_members(n: usize, members: &[usize]) -> Self {
        let mut mask = Self::empty(n);
        for &i in members {
            mask.insert(i);
        }
        mask
    }

    /// Coalition from the low `n` bits of an integer. Only valid for `n <= 64`;
    /// used by the exact enumeration paths.
    pub fn from_bits(n: usize, bits: u64) -> Self {
        assert!(n <= 64, "from_bits supports at most 64 players");
        let mut mask = Self::empty(n);
        mask.blocks[0] = bits;
        mask.clear_tail();
        mask
    }

    /// The low 64 bits of the mask. Only meaningful for `n <= 64`.
    pub fn to_bits(&self) -> u64 {
        self.blocks[0]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    pub fn is_full(&self) -> bool {
        self.count() == self.n
    }

    pub fn contains(&self, player: usize) -> bool {
        assert!(player < self.n, "player index {player} out of range");
        self.blocks[player / BLOCK_BITS] >> (player % BLOCK_BITS) & 1 == 1
    }

    pub fn insert(&mut self, player: usize) {
        assert!(player < self.n, "player index {player} out of range");
        self.blocks[player / BLOCK_BITS] |= 1 << (player % BLOCK_BITS);
    }

    pub fn remove(&mut self, player: usize) {
        assert!(player < self.n, "player index {player} out of range");
        self.blocks[player / BLOCK_BITS] &= !(1 << (player % BLOCK_BITS));
    }

    /// Number of members |S|.
    pub fn count(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// The complement N \ S over the same player set.
    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for block in &mut out.blocks {
            *block = !*block;
        }
        out.clear_tail();
        out
    }

    /// Member indices in ascending order.
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| self.contains(i))
    }

    /// Canonical lowercase-hex key: block 0 first, each block 16 hex digits.
    /// Two masks with identical membership always produce identical keys.
    pub fn hex_key(&self) -> String {
        let mut key = String::with_capacity(self.blocks.len() * 16);
        for block in &self.blocks {
            key.push_str(&format!("{block:016x}"));
        }
        key
    }

    fn clear_tail(&mut self) {
        let used = self.n % BLOCK_BITS;
        if used != 0 {
            let last = self.blocks.len() - 1;
            self.blocks[last] &= (1u64 << used) - 1;
        }
    }
}

impl fmt::Debug for CoalitionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoalitionMask(n={}, {{", self.n)?;
        for (k, i) in self.members().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}})")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_and_empty_are_complements() {
        for n in [1, 3, 64, 65, 200] {
            assert_eq!(CoalitionMask::empty(n).complement(), CoalitionMask::full(n));
            assert_eq!(CoalitionMask::full(n).count(), n);
        }
    }

    #[test]
    fn membership_round_trip() {
        let mask = CoalitionMask::from_members(130, &[0, 63, 64, 129]);
        assert_eq!(mask.count(), 4);
        assert!(mask.contains(64));
        assert!(!mask.contains(65));
        assert_eq!(mask.members().collect::<Vec<_>>(), vec![0, 63, 64, 129]);
    }

    #[test]
    fn hex_key_is_construction_order_independent() {
        let a = CoalitionMask::from_members(70, &[5, 69, 12]);
        let b = CoalitionMask::from_members(70, &[69, 12, 5, 12]);
        assert_eq!(a.hex_key(), b.hex_key());
    }

    proptest! {
        #[test]
        fn complement_is_involutive(n in 1usize..150, picks in proptest::collection::vec(0usize..150, 0..20)) {
            let members: Vec<usize> = picks.into_iter().map(|p| p % n).collect();
            let mask = CoalitionMask::from_members(n, &members);
            prop_assert_eq!(mask.complement().complement(), mask.clone());
            prop_assert_eq!(mask.count() + mask.complement().count(), n);
        }
    }
}
