//! Decay functions mapping a state-index separation to a target similarity.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayKind {
    #[default]
    Gaussian,
    Linear,
}

impl DecayKind {
    pub fn name(self) -> &'static str {
        match self {
            DecayKind::Gaussian => "gaussian",
            DecayKind::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(DecayKind::Gaussian),
            "linear" => Some(DecayKind::Linear),
            _ => None,
        }
    }

    pub fn eval<T: Scalar>(self, p: usize, mu: T, span: usize) -> T {
        match self {
            DecayKind::Gaussian => gaussian_decay(p, mu, span),
            DecayKind::Linear => linear_decay(p, mu, span),
        }
    }
}

/// Which separation reaches `mu` in a stack of `K + 2` states.
///
/// `Corner` uses span `K + 2`, so the visible/infrared corner (separation
/// `K + 1`) sits exactly at `mu`. `Literal` uses span `K + 1`, reaching `mu`
/// one step earlier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanConvention {
    #[default]
    Corner,
    Literal,
}

impl SpanConvention {
    pub fn span(self, num_states: usize) -> usize {
        match self {
            SpanConvention::Corner => num_states + 2,
            SpanConvention::Literal => num_states + 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpanConvention::Corner => "corner",
            SpanConvention::Literal => "literal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "corner" => Some(SpanConvention::Corner),
            "literal" => Some(SpanConvention::Literal),
            _ => None,
        }
    }
}

fn check_contract<T: Scalar>(mu: T, span: usize) {
    assert!(
        mu > T::zero() && mu < T::one(),
        "decay: mu must lie strictly inside (0, 1), got {mu}"
    );
    assert!(span >= 2, "decay: span must be at least 2, got {span}");
}

/// `exp(-p^2 / (2 sigma))` with `sigma = -(s-1)^2 / (2 ln mu)`.
///
/// Equals 1 at `p = 0` and `mu` at `p = s - 1`.
pub fn gaussian_decay<T: Scalar>(p: usize, mu: T, span: usize) -> T {
    check_contract(mu, span);
    let s1 = T::from_usize_lossy(span - 1);
    let two = T::from_f64_lossy(2.0);
    let sigma = -(s1 * s1) / (two * mu.ln());
    let p = T::from_usize_lossy(p);
    (-(p * p) / (two * sigma)).exp()
}

/// `1 - p (1 - mu) / (s - 1)`: arithmetic decay from 1 to `mu`.
pub fn linear_decay<T: Scalar>(p: usize, mu: T, span: usize) -> T {
    check_contract(mu, span);
    let p = T::from_usize_lossy(p);
    T::one() - p * (T::one() - mu) / T::from_usize_lossy(span - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_endpoints_and_reference_value() {
        assert_eq!(gaussian_decay(0, 0.2f64, 8), 1.0);
        assert!((gaussian_decay(7, 0.2f64, 8) - 0.2).abs() < 1e-15);
        // sigma = 49 / (2 ln 5); value = exp(-16 / (2 sigma)) = exp(-16 ln 5 / 49)
        let sigma = 49.0 / (2.0 * 5f64.ln());
        let want = (-16.0 / (2.0 * sigma)).exp();
        assert!((gaussian_decay(4, 0.2f64, 8) - want).abs() < 1e-15);
        assert!((want - 0.591_2).abs() < 1e-4);
    }

    #[test]
    fn linear_midpoint() {
        assert_eq!(linear_decay(0, 0.3f64, 5), 1.0);
        assert!((linear_decay(4, 0.3f64, 5) - 0.3).abs() < 1e-15);
        assert!((linear_decay(2, 0.3f64, 5) - 0.65).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "strictly inside")]
    fn mu_outside_unit_interval_is_a_contract_violation() {
        gaussian_decay(1, 1.0f64, 4);
    }

    #[test]
    fn span_conventions() {
        assert_eq!(SpanConvention::Corner.span(7), 9);
        assert_eq!(SpanConvention::Literal.span(7), 8);
    }
}
