use rayon::prelude::*;

use super::config::TrainConfig;
use super::optim::{clip_global_norm, AdamW};
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::loss::{sds_sample, total_loss, ConstraintSet, Constraints, LossBreakdown, LossMode};
use crate::model::Model;
use crate::rng::{derive_seed, tag};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One registered training sample, `[1, 1, H, W]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub ir: Tensor<T>,
    pub vis: Tensor<T>,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Batch-mean loss terms.
    pub loss: LossBreakdown,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub lr: f64,
    /// Similarity evaluations spent on the decomposition loss, whole batch.
    pub pair_evaluations: usize,
}

/// Constraint sets of `step`, one per layer, derived from `(seed, step, layer)`.
pub fn step_constraints(seed: u64, step: usize, num_layers: usize, num_states: usize) -> Vec<ConstraintSet> {
    (0..num_layers)
        .map(|l| sds_sample(derive_seed(&[tag::SDS, seed, step as u64, l as u64]), num_states))
        .collect()
}

/// Loss and parameter gradients of a single sample.
pub fn sample_gradients<T: Scalar>(
    model: &Model<T>,
    sample: &Sample<T>,
    cfg: &TrainConfig,
    sets: &[ConstraintSet],
) -> Result<(LossBreakdown, Vec<Tensor<T>>, usize)> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let ir = g.constant(sample.ir.clone());
    let vis = g.constant(sample.vis.clone());
    let out = model.forward(&mut g, &p, ir, vis)?;
    let constraints = match cfg.loss_mode {
        LossMode::Full => Constraints::Full,
        LossMode::Sds => Constraints::Sampled(sets),
    };
    let t = total_loss(
        &mut g,
        out.fused,
        &sample.ir,
        &sample.vis,
        &out.stack_states(),
        cfg.weights(),
        constraints,
        cfg.decomposition(),
    );
    if !t.breakdown.is_finite() {
        return Ok((t.breakdown, Vec::new(), t.pair_evaluations));
    }
    let mut grads = g.backward(t.loss);
    let grads = p
        .iter()
        .zip(model.params().tensors())
        .map(|(&v, w)| grads.take(v).unwrap_or_else(|| Tensor::zeros(w.shape())))
        .collect();
    Ok((t.breakdown, grads, t.pair_evaluations))
}

fn describe(step: usize, terms: &[LossBreakdown]) -> String {
    let mut s = String::from("per-sample loss terms (decomposition, intensity, gradient, total):");
    for (i, b) in terms.iter().enumerate() {
        s.push_str(&format!(
            "\n  sample {i}: {} {} {} {}",
            b.decomposition, b.intensity, b.gradient, b.total
        ));
    }
    log::error!("non-finite loss at step {step}\n{s}");
    s
}

/// Forward, loss, backward, clip and AdamW update on a mini-batch. Samples
/// run in parallel; their gradients are summed in batch order so the result
/// does not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    batch: &[Sample<T>],
    cfg: &TrainConfig,
    step: usize,
    lr: f64,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let mc = model.config();
    let sets = step_constraints(cfg.seed, step, mc.num_layers, mc.num_states);
    let frozen: &Model<T> = model;
    let results: Vec<_> = batch
        .par_iter()
        .map(|s| sample_gradients(frozen, s, cfg, &sets))
        .collect::<Result<_>>()?;
    let terms: Vec<LossBreakdown> = results.iter().map(|r| r.0).collect();
    if terms.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite {
            step,
            detail: describe(step, &terms),
        });
    }
    let inv = 1.0 / batch.len() as f64;
    let mut loss = LossBreakdown::default();
    let mut pair_evaluations = 0;
    let mut grads: Option<Vec<Tensor<T>>> = None;
    for (b, g, n) in results {
        loss.accumulate(&b);
        pair_evaluations += n;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, x)| a.add_assign(x)),
        }
    }
    let mut grads = grads.expect("non-empty batch");
    let s = T::from_f64_lossy(inv);
    grads.iter_mut().for_each(|g| g.scale_in_place(s));
    let grad_norm = clip_global_norm(&mut grads, cfg.clip_max_norm);
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite {
            step,
            detail: format!("gradient norm is {grad_norm}; {}", describe(step, &terms)),
        });
    }
    opt.step(model.params_mut().tensors_mut(), &grads, lr);
    Ok(StepOutcome {
        loss: loss.scaled(inv),
        grad_norm,
        lr,
        pair_evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn setup() -> (Model<f64>, Vec<Sample<f64>>, TrainConfig) {
        let model = Model::new(ModelConfig::with_shape(1, 3, 2, 1), 4).unwrap();
        let batch = (0..2)
            .map(|k| Sample {
                ir: Tensor::from_fn(&[1, 1, 8, 8], |i| ((i * (3 + k)) % 7) as f64 / 7.0),
                vis: Tensor::from_fn(&[1, 1, 8, 8], |i| ((i * 5 + k) % 9) as f64 / 9.0),
            })
            .collect();
        (model, batch, TrainConfig::default())
    }

    #[test]
    fn zero_learning_rate_keeps_the_model() {
        let (mut m, batch, cfg) = setup();
        let before = m.clone();
        let mut opt = AdamW::new(m.params().tensors(), 0.9, 0.999, 1e-8, 0.0);
        let out = train_step(&mut m, &mut opt, &batch, &cfg, 0, 0.0).unwrap();
        assert_eq!(m, before);
        assert!(out.loss.is_finite());
    }

    #[test]
    fn batch_loss_is_the_sample_mean() {
        let (mut m, batch, cfg) = setup();
        let sets = step_constraints(cfg.seed, 0, 1, 3);
        let a = sample_gradients(&m, &batch[0], &cfg, &sets).unwrap().0;
        let b = sample_gradients(&m, &batch[1], &cfg, &sets).unwrap().0;
        let mut opt = AdamW::new(m.params().tensors(), 0.9, 0.999, 1e-8, 0.0);
        let out = train_step(&mut m, &mut opt, &batch, &cfg, 0, 1e-4).unwrap();
        assert!((out.loss.total - (a.total + b.total) / 2.0).abs() < 1e-12);
        assert_eq!(out.pair_evaluations, 2 * 5);
    }

    #[test]
    fn infinite_clip_equals_unclipped_large_clip() {
        let (m, batch, cfg) = setup();
        let run = |clip: f64| {
            let mut m = m.clone();
            let cfg = TrainConfig {
                clip_max_norm: clip,
                ..cfg.clone()
            };
            let mut opt = AdamW::new(m.params().tensors(), 0.9, 0.999, 1e-8, 0.0);
            train_step(&mut m, &mut opt, &batch, &cfg, 0, 1e-3).unwrap();
            m
        };
        assert_eq!(run(f64::INFINITY), run(1e30));
    }

    #[test]
    fn non_finite_input_aborts_with_terms() {
        let (mut m, mut batch, cfg) = setup();
        batch[1].ir.data_mut()[3] = f64::NAN;
        let mut opt = AdamW::new(m.params().tensors(), 0.9, 0.999, 1e-8, 0.0);
        let err = train_step(&mut m, &mut opt, &batch, &cfg, 7, 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 7, .. }));
        assert!(err.to_string().contains("sample 1"));
    }

    #[test]
    fn constraint_sets_vary_by_step_and_layer() {
        let a = step_constraints(1, 0, 3, 7);
        assert_eq!(a, step_constraints(1, 0, 3, 7));
        assert_ne!(a, step_constraints(1, 1, 3, 7));
        assert_ne!(a[0].pairs(), a[1].pairs());
    }
}
