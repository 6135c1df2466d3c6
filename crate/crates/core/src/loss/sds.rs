//! Support decomposition sampling: every adjacent state pair plus a uniform
//! random subset of the remaining interior pairs.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sampled `(u, v)` index pairs with `u > v` for one stack of `K + 2` states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSet {
    pairs: Vec<(usize, usize)>,
    seed: u64,
    num_states: usize,
}

impl ConstraintSet {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// Every constrained pair of the full loss (lower triangle without the
    /// diagonal and without the visible/infrared corner).
    pub fn full(num_states: usize) -> Self {
        let last = num_states + 1;
        let pairs = (1..=last)
            .flat_map(|u| (0..u).map(move |v| (u, v)))
            .filter(|&(u, v)| !(u == last && v == 0))
            .collect();
        Self {
            pairs,
            seed: 0,
            num_states,
        }
    }
}

/// Adjacent pairs `(i + 1, i)` for `i = 0..=K`.
pub fn adjacent_pairs(num_states: usize) -> Vec<(usize, usize)> {
    (0..=num_states).map(|i| (i + 1, i)).collect()
}

/// Pairs eligible for random sampling: `u > v + 1`, `u != K + 1`, `v != 0`.
/// Enumerated in lexicographic order.
pub fn eligible_pool(num_states: usize) -> Vec<(usize, usize)> {
    let last = num_states + 1;
    (1..last)
        .flat_map(|u| (1..u).map(move |v| (u, v)))
        .filter(|&(u, v)| u > v + 1)
        .collect()
}

/// Draws the constraint set for one layer. Deterministic in `seed`.
///
/// Takes `min(K + 1, pool size)` pool members without replacement, so the
/// set holds `2K + 2` pairs once the pool is large enough (K >= 5).
pub fn sds_sample(seed: u64, num_states: usize) -> ConstraintSet {
    assert!(num_states >= 1, "sds_sample: K must be >= 1");
    let pool = eligible_pool(num_states);
    let take = (num_states + 1).min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = adjacent_pairs(num_states);
    pairs.extend(index::sample(&mut rng, pool.len(), take).into_iter().map(|i| pool[i]));
    ConstraintSet {
        pairs,
        seed,
        num_states,
    }
}
