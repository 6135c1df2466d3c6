//! Distance matrices over a transition-state stack and the decomposition
//! loss built from them.

use std::collections::HashMap;

use super::decay::{DecayKind, SpanConvention};
use super::sds::ConstraintSet;
use super::similarity::{feature_similarity, Similarity};
use crate::autograd::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower clamp of the source similarity `mu`; the upper clamp is `1 - MU_CLAMP`.
pub const MU_CLAMP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Measured,
    Target,
}

/// Symmetric `(K+2) x (K+2)` matrix of state similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    size: usize,
    entries: Vec<T>,
    kind: MatrixKind,
}

impl<T: Scalar> DistanceMatrix<T> {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.size + j]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.size).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Every pairwise similarity of a state stack (diagonal included).
pub fn build_distance_matrix<T: Scalar>(states: &[Tensor<T>], kind: Similarity) -> DistanceMatrix<T> {
    let n = states.len();
    let mut entries = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = feature_similarity(kind, &states[i], &states[j]);
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    DistanceMatrix {
        size: n,
        entries,
        kind: MatrixKind::Measured,
    }
}

/// Target similarities: `Omega(|i - j|, mu, span)`.
pub fn build_target_matrix<T: Scalar>(
    num_states: usize,
    mu: T,
    decay: DecayKind,
    span: SpanConvention,
) -> DistanceMatrix<T> {
    let n = num_states + 2;
    let s = span.span(num_states);
    let mut entries = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            entries[i * n + j] = decay.eval(i.abs_diff(j), mu, s);
        }
    }
    DistanceMatrix {
        size: n,
        entries,
        kind: MatrixKind::Target,
    }
}

/// Measured matrix evaluated on demand: only requested pairs are computed,
/// each at most once.
pub struct LazyDistanceMatrix<'a, T> {
    states: &'a [Tensor<T>],
    kind: Similarity,
    cache: HashMap<(usize, usize), T>,
    evaluations: usize,
}

impl<'a, T: Scalar> LazyDistanceMatrix<'a, T> {
    pub fn new(states: &'a [Tensor<T>], kind: Similarity) -> Self {
        Self {
            states,
            kind,
            cache: HashMap::new(),
            evaluations: 0,
        }
    }

    pub fn get(&mut self, i: usize, j: usize) -> T {
        let key = (i.max(j), i.min(j));
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        self.evaluations += 1;
        let v = feature_similarity(self.kind, &self.states[key.0], &self.states[key.1]);
        self.cache.insert(key, v);
        v
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }
}

/// Clamp a source similarity into the open interval the decay needs.
pub fn clamp_mu<T: Scalar>(mu: T) -> T {
    let lo = T::from_f64_lossy(MU_CLAMP);
    let hi = T::one() - lo;
    mu.max(lo).min(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DecompositionSettings {
    pub decay: DecayKind,
    pub span: SpanConvention,
    pub similarity: Similarity,
}

/// Which pairs a decomposition-loss evaluation constrains.
#[derive(Debug, Clone, Copy)]
pub enum Constraints<'a> {
    /// Every constrained pair (quadratic in K).
    Full,
    /// One sampled set per layer (linear in K).
    Sampled(&'a [ConstraintSet]),
}

#[derive(Debug, Clone)]
pub struct DecompositionTerms<T> {
    pub loss: Var,
    /// Similarity evaluations spent on constrained pairs.
    pub pair_evaluations: usize,
    /// Similarity evaluations spent on the per-layer source similarity.
    pub mu_evaluations: usize,
    /// Clamped source similarity per layer.
    pub mus: Vec<T>,
}

/// Decomposition loss over the per-layer state stacks of one sample.
///
/// `stacks[l]` holds the `K + 2` state nodes of layer `l + 1`. The source
/// similarity `mu` is computed from values only, so no gradient reaches the
/// target matrix.
///
/// Full mode averages over both triangles (`K^2 + 3K` entries per layer);
/// sampled mode averages over the realized constraint-set size.
pub fn decomposition_loss<T: Scalar>(
    g: &mut Graph<T>,
    stacks: &[Vec<Var>],
    constraints: Constraints<'_>,
    settings: DecompositionSettings,
) -> DecompositionTerms<T> {
    assert!(!stacks.is_empty(), "decomposition_loss: no layers");
    let layers = stacks.len();
    let mut terms = Vec::new();
    let mut mus = Vec::with_capacity(layers);
    let mut pair_evaluations = 0;
    for (l, states) in stacks.iter().enumerate() {
        let k = states.len() - 2;
        let mu = feature_similarity(settings.similarity, g.value(states[0]), g.value(states[k + 1]));
        let mu = clamp_mu(mu);
        mus.push(mu);
        let target = build_target_matrix(k, mu, settings.decay, settings.span);
        let (pairs, weight) = match constraints {
            Constraints::Full => {
                let full = ConstraintSet::full(k);
                let w = T::from_f64_lossy(2.0) / T::from_usize_lossy(layers * (k * k + 3 * k));
                (full.pairs().to_vec(), w)
            }
            Constraints::Sampled(sets) => {
                let set = &sets[l];
                assert_eq!(set.num_states(), k, "constraint set built for a different K");
                let w = T::one() / T::from_usize_lossy(layers * set.len());
                (set.pairs().to_vec(), w)
            }
        };
        let mut layer_terms = Vec::with_capacity(pairs.len());
        for (u, v) in pairs {
            let s = g.similarity(states[u], states[v], settings.similarity);
            pair_evaluations += 1;
            let d = g.add_const(s, -target.get(u, v));
            layer_terms.push(g.square(d));
        }
        let layer_sum = g.add_n(&layer_terms);
        terms.push(g.scale(layer_sum, weight));
    }
    let loss = g.add_n(&terms);
    DecompositionTerms {
        loss,
        pair_evaluations,
        mu_evaluations: layers,
        mus,
    }
}

/// Value-only evaluation over plain tensors. Returns the loss and the number
/// of similarity evaluations (pairs, mu).
pub fn decomposition_loss_value<T: Scalar>(
    stacks: &[Vec<Tensor<T>>],
    constraints: Constraints<'_>,
    settings: DecompositionSettings,
) -> (T, usize, usize) {
    let mut g = Graph::new();
    let vars: Vec<Vec<Var>> = stacks
        .iter()
        .map(|s| s.iter().map(|t| g.constant(t.clone())).collect())
        .collect();
    let terms = decomposition_loss(&mut g, &vars, constraints, settings);
    (g.value(terms.loss).item(), terms.pair_evaluations, terms.mu_evaluations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::decay::gaussian_decay;
    use crate::loss::sds::sds_sample;
    use crate::loss::similarity::gamma_distance;

    fn random_stack(k: usize, seed: u64) -> Vec<Tensor<f64>> {
        use rand::Rng;
        let mut rng = crate::rng::stream(&[seed]);
        (0..k + 2)
            .map(|_| Tensor::from_fn(&[1, 2, 4, 4], |_| rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn measured_matrix_matches_brute_force() {
        let stack = random_stack(2, 7);
        let m = build_distance_matrix(&stack, Similarity::Pearson);
        assert!(m.is_symmetric());
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.get(i, j), gamma_distance(&stack[i], &stack[j]));
            }
            assert!((m.get(i, i) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn target_matrix_k4_gaussian() {
        let t = build_target_matrix(4, 0.1f64, DecayKind::Gaussian, SpanConvention::Corner);
        assert_eq!(t.size(), 6);
        assert_eq!(t.kind(), MatrixKind::Target);
        let sigma = -(25.0) / (2.0 * 0.1f64.ln());
        for i in 0..6 {
            for j in 0..6 {
                let p = (i as f64 - j as f64).abs();
                let want = (-p * p / (2.0 * sigma)).exp();
                assert!((t.get(i, j) - want).abs() < 1e-15);
            }
        }
        assert!((t.get(5, 0) - 0.1).abs() < 1e-15);
        assert_eq!(t.get(3, 3), 1.0);
    }

    #[test]
    fn literal_span_reaches_mu_one_step_early() {
        let t = build_target_matrix(4, 0.1f64, DecayKind::Gaussian, SpanConvention::Literal);
        assert!((t.get(4, 0) - 0.1).abs() < 1e-15);
        assert_eq!(t.get(4, 0), gaussian_decay(4, 0.1, 5));
    }

    #[test]
    fn lazy_matrix_evaluates_each_pair_once() {
        let stack = random_stack(3, 1);
        let mut lazy = LazyDistanceMatrix::new(&stack, Similarity::Pearson);
        let a = lazy.get(3, 1);
        let b = lazy.get(1, 3);
        assert_eq!(a, b);
        assert_eq!(lazy.evaluations(), 1);
    }

    fn settings() -> DecompositionSettings {
        DecompositionSettings::default()
    }

    /// Brute-force oracle: both triangles, skipping diagonal and corners.
    fn full_oracle(stacks: &[Vec<Tensor<f64>>]) -> f64 {
        let mut total = 0.0;
        let n = stacks.len() as f64;
        let mut count = 0;
        for states in stacks {
            let k = states.len() - 2;
            let mu = clamp_mu(gamma_distance(&states[0], &states[k + 1]));
            count = 0;
            for i in 0..k + 2 {
                for j in 0..k + 2 {
                    if i == j || (i.min(j) == 0 && i.max(j) == k + 1) {
                        continue;
                    }
                    count += 1;
                    let target = gaussian_decay(i.abs_diff(j), mu, k + 2);
                    total += (gamma_distance(&states[i], &states[j]) - target).powi(2);
                }
            }
            assert_eq!(count, k * k + 3 * k);
        }
        total / (n * count as f64)
    }

    #[test]
    fn full_loss_matches_double_loop_oracle() {
        let stacks = vec![random_stack(1, 3), random_stack(1, 4)];
        let (v, pairs, mus) = decomposition_loss_value(&stacks, Constraints::Full, settings());
        assert!((v - full_oracle(&stacks)).abs() < 1e-12);
        assert_eq!(pairs, 2 * 2);
        assert_eq!(mus, 2);
    }

    #[test]
    fn full_constraint_set_through_sampled_path_matches_full_mode() {
        let stacks = vec![random_stack(3, 9)];
        let sets = vec![ConstraintSet::full(3)];
        let (sampled, ..) = decomposition_loss_value(&stacks, Constraints::Sampled(&sets), settings());
        let (full, ..) = decomposition_loss_value(&stacks, Constraints::Full, settings());
        assert!((sampled - full).abs() < 1e-12);
    }

    #[test]
    fn zero_when_measured_equals_target() {
        // Stack of identical states: every measured entry is 1. With mu
        // clamped to 1 - 1e-4 the targets are all within 1e-4 of 1.
        let s = random_stack(0, 5).remove(0);
        let stacks = vec![vec![s.clone(); 5]];
        let (v, ..) = decomposition_loss_value(&stacks, Constraints::Full, settings());
        assert!(v < 1e-8);
    }

    #[test]
    fn sds_loss_uses_linear_number_of_evaluations() {
        for k in [5usize, 7, 9] {
            let stacks = vec![random_stack(k, 2), random_stack(k, 3)];
            let sets = vec![sds_sample(1, k), sds_sample(2, k)];
            let (_, pairs, mus) = decomposition_loss_value(&stacks, Constraints::Sampled(&sets), settings());
            assert_eq!(pairs, 2 * (2 * k + 2));
            assert_eq!(mus, 2);
        }
    }
}
