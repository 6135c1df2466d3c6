//! Optimisation: schedule, AdamW, clipping, the per-step update and the
//! epoch loop with checkpoints.

mod config;
mod optim;
mod run;
mod schedule;
mod step;

pub use config::TrainConfig;
pub use optim::{clip_global_norm, global_norm, AdamW};
pub use run::{
    checkpoint_path, latest_checkpoint, steps_per_epoch, train_loop, LoopOptions, StepRecord, TrainResult,
    CHECKPOINT_DIR, LOG_FILE,
};
pub use schedule::lr_schedule;
pub use step::{sample_gradients, step_constraints, train_step, Sample, StepOutcome};
