use super::config::TrainConfig;

/// Linear warm-up from `lr_start` to `lr_peak` over
/// `warmup_epochs * steps_per_epoch` steps, then half-cosine down to
/// `lr_final`, reached exactly at the last step of the run.
pub fn lr_schedule(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_epochs * steps_per_epoch;
    let last = (cfg.epochs * steps_per_epoch).saturating_sub(1);
    if step < warm {
        return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * step as f64 / warm as f64;
    }
    if last <= warm {
        return if step >= last && step > warm {
            cfg.lr_final
        } else {
            cfg.lr_peak
        };
    }
    let progress = ((step - warm) as f64 / (last - warm) as f64).min(1.0);
    cfg.lr_final + (cfg.lr_peak - cfg.lr_final) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
