//! Training objective: decomposition loss over the transition-state stacks
//! plus weighted intensity and gradient terms.

pub mod decay;
pub mod decomposition;
pub mod fusion;
pub mod sds;
pub mod similarity;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use decay::{gaussian_decay, linear_decay, DecayKind, SpanConvention};
pub use decomposition::{
    build_distance_matrix, build_target_matrix, decomposition_loss, decomposition_loss_value, Constraints,
    DecompositionSettings, DecompositionTerms, DistanceMatrix, LazyDistanceMatrix, MatrixKind,
};
pub use fusion::{gradient_loss, intensity_loss};
pub use sds::{sds_sample, ConstraintSet};
pub use similarity::{gamma_distance, pearson_channel, Similarity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub intensity: f64,
    pub gradient: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            intensity: 15.0,
            gradient: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Full,
    #[default]
    Sds,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Full => "full",
            LossMode::Sds => "sds",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(LossMode::Full),
            "sds" => Some(LossMode::Sds),
            _ => None,
        }
    }
}

/// Per-term values of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub decomposition: f64,
    pub intensity: f64,
    pub gradient: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.decomposition.is_finite()
            && self.intensity.is_finite()
            && self.gradient.is_finite()
            && self.total.is_finite()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            decomposition: self.decomposition * s,
            intensity: self.intensity * s,
            gradient: self.gradient * s,
            total: self.total * s,
        }
    }

    pub fn accumulate(&mut self, other: &Self) {
        self.decomposition += other.decomposition;
        self.intensity += other.intensity;
        self.gradient += other.gradient;
        self.total += other.total;
    }
}

pub struct TotalLoss {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    pub pair_evaluations: usize,
    pub mu_evaluations: usize,
}

/// `L_decom + a1 * L_int + a2 * L_grad` for one sample.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    fused: Var,
    ir: &Tensor<T>,
    vis: &Tensor<T>,
    stacks: &[Vec<Var>],
    weights: LossWeights,
    constraints: Constraints<'_>,
    settings: DecompositionSettings,
) -> TotalLoss {
    let decom = decomposition_loss(g, stacks, constraints, settings);
    let int = intensity_loss(g, fused, ir, vis);
    let grad = gradient_loss(g, fused, ir, vis);
    let int_w = g.scale(int, T::from_f64_lossy(weights.intensity));
    let grad_w = g.scale(grad, T::from_f64_lossy(weights.gradient));
    let loss = g.add_n(&[decom.loss, int_w, grad_w]);
    let breakdown = LossBreakdown {
        decomposition: g.value(decom.loss).item().as_f64(),
        intensity: g.value(int).item().as_f64(),
        gradient: g.value(grad).item().as_f64(),
        total: g.value(loss).item().as_f64(),
    };
    TotalLoss {
        loss,
        breakdown,
        pair_evaluations: decom.pair_evaluations,
        mu_evaluations: decom.mu_evaluations,
    }
}
