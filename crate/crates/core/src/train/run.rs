use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::TrainConfig;
use super::optim::AdamW;
use super::schedule::lr_schedule;
use super::step::{train_step, Sample, StepOutcome};
use crate::data::{augment, AugmentationPolicy, ImagePair};
use crate::error::{Error, Result};
use crate::model::checkpoint::{self, Checkpoint};
use crate::model::Model;
use crate::rng::{self, tag};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const LOG_HEADER: [&str; 13] = [
    "step",
    "epoch",
    "lr",
    "loss_total",
    "loss_decomposition",
    "loss_intensity",
    "loss_gradient",
    "grad_norm",
    "pair_evaluations",
    "sec_per_step",
    "mode",
    "k",
    "decay_kind",
];

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub outcome: StepOutcome,
    pub seconds: f64,
}

/// Where a run writes, and whether it continues an earlier one.
#[derive(Debug, Clone, Default)]
pub struct LoopOptions {
    /// Checkpoints and the loss log go here; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Stop after this many steps of the current invocation (for tests and
    /// interrupted runs); the schedule still spans the configured epochs.
    pub max_steps: Option<usize>,
}

pub struct TrainResult<T> {
    pub model: Model<T>,
    pub optimizer: AdamW<T>,
    pub history: Vec<StepRecord>,
    pub checkpoints: Vec<PathBuf>,
    /// Completed epochs, counting those before a resume.
    pub epochs_done: usize,
}

pub fn steps_per_epoch(dataset_len: usize, batch_size: usize) -> usize {
    dataset_len.div_ceil(batch_size)
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:04}.ckpt"))
}

/// Most recent `epoch_NNNN.ckpt` under `out_dir/checkpoints`.
pub fn latest_checkpoint(out_dir: &Path) -> Option<PathBuf> {
    let dir = out_dir.join(CHECKPOINT_DIR);
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("epoch_") && n.ends_with(".ckpt"))
        })
        .collect();
    found.sort();
    found.pop()
}

fn meta_for(cfg: &TrainConfig, epoch: usize, step: usize, opt_t: u64) -> toml::Table {
    let mut meta = toml::Table::new();
    meta.insert("epoch".into(), toml::Value::Integer(epoch as i64));
    meta.insert("step".into(), toml::Value::Integer(step as i64));
    meta.insert("optimizer_t".into(), toml::Value::Integer(opt_t as i64));
    meta.insert(
        "train".into(),
        toml::Value::try_from(cfg).expect("train config serialises"),
    );
    meta
}

fn optimizer_aux<T: Scalar>(opt: &AdamW<T>) -> Vec<(String, Tensor<T>)> {
    let m = opt.m.iter().enumerate().map(|(i, t)| (format!("m.{i}"), t.clone()));
    let v = opt.v.iter().enumerate().map(|(i, t)| (format!("v.{i}"), t.clone()));
    m.chain(v).collect()
}

fn meta_int(ck: &Path, meta: &toml::Table, key: &str) -> Result<usize> {
    meta.get(key)
        .and_then(|v| v.as_integer())
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| Error::Checkpoint {
            path: ck.to_path_buf(),
            reason: format!("metadata lacks `{key}`"),
        })
}

fn restore<T: Scalar>(path: &Path, ck: Checkpoint<T>, cfg: &TrainConfig) -> Result<(Model<T>, AdamW<T>, usize)> {
    let epoch = meta_int(path, &ck.meta, "epoch")?;
    let t = meta_int(path, &ck.meta, "optimizer_t")? as u64;
    let mut opt = AdamW::new(
        ck.model.params().tensors(),
        cfg.beta1,
        cfg.beta2,
        cfg.adam_eps,
        cfg.weight_decay,
    );
    opt.t = t;
    let n = ck.model.params().len();
    for (name, tensor) in ck.aux {
        let (kind, idx) = name.split_once('.').ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("unexpected optimizer tensor {name}"),
        })?;
        let idx: usize = idx.parse().ok().filter(|&i| i < n).ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("unexpected optimizer tensor {name}"),
        })?;
        let slot = match kind {
            "m" => &mut opt.m[idx],
            "v" => &mut opt.v[idx],
            _ => {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: format!("unexpected optimizer tensor {name}"),
                })
            }
        };
        if slot.shape() != tensor.shape() {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("optimizer tensor {name} has shape {:?}", tensor.shape()),
            });
        }
        *slot = tensor;
    }
    Ok((ck.model, opt, epoch))
}

/// Keeps the header and every row logged before `first_step`.
fn open_log(path: &Path, first_step: usize) -> Result<csv::Writer<fs::File>> {
    let mut kept = Vec::new();
    if first_step > 0 && path.exists() {
        let mut r = csv::Reader::from_path(path)?;
        for rec in r.records() {
            let rec = rec?;
            if rec
                .get(0)
                .and_then(|s| s.parse::<usize>().ok())
                .is_some_and(|s| s < first_step)
            {
                kept.push(rec);
            }
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(LOG_HEADER)?;
    for rec in kept {
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(w)
}

fn log_row(w: &mut csv::Writer<fs::File>, r: &StepRecord, cfg: &TrainConfig, k: usize) -> Result<()> {
    let o = &r.outcome;
    w.write_record([
        r.step.to_string(),
        r.epoch.to_string(),
        o.lr.to_string(),
        o.loss.total.to_string(),
        o.loss.decomposition.to_string(),
        o.loss.intensity.to_string(),
        o.loss.gradient.to_string(),
        o.grad_norm.to_string(),
        o.pair_evaluations.to_string(),
        format!("{:.4}", r.seconds),
        cfg.loss_mode.name().to_string(),
        k.to_string(),
        cfg.decay.name().to_string(),
    ])?;
    w.flush().map_err(|e| Error::io(Path::new(LOG_FILE), e))
}

/// Epoch loop with seeded shuffling and augmentation, periodic checkpoints
/// (optimizer state included) and a CSV loss log. Resuming from a
/// checkpoint replays the same seed streams, so the continuation matches an
/// uninterrupted run.
pub fn train_loop<T: Scalar>(
    model: Model<T>,
    pairs: &[ImagePair<T>],
    cfg: &TrainConfig,
    policy: &AugmentationPolicy,
    opts: &LoopOptions,
) -> Result<TrainResult<T>> {
    cfg.validate()?;
    policy.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let spe = steps_per_epoch(pairs.len(), cfg.batch_size);
    let (mut model, mut opt, start_epoch) = match &opts.resume {
        Some(path) => restore(path, checkpoint::load::<T>(path)?, cfg)?,
        None => {
            let opt = AdamW::new(
                model.params().tensors(),
                cfg.beta1,
                cfg.beta2,
                cfg.adam_eps,
                cfg.weight_decay,
            );
            (model, opt, 0)
        }
    };
    let k = model.config().num_states;
    let mut checkpoints = Vec::new();
    let mut save = |model: &Model<T>, opt: &AdamW<T>, epoch: usize| -> Result<()> {
        if let Some(dir) = &opts.out_dir {
            let path = checkpoint_path(dir, epoch);
            checkpoint::save(
                &path,
                model,
                &meta_for(cfg, epoch, epoch * spe, opt.t),
                &optimizer_aux(opt),
            )?;
            log::info!("saved {}", path.display());
            checkpoints.push(path);
        }
        Ok(())
    };
    let mut log = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(open_log(&dir.join(LOG_FILE), start_epoch * spe)?)
        }
        None => None,
    };
    if opts.resume.is_none() {
        save(&model, &opt, 0)?;
    }
    let mut history = Vec::new();
    let mut epochs_done = start_epoch;
    'epochs: for epoch in start_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng::stream(&[tag::SHUFFLE, cfg.seed, epoch as u64]));
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if opts.max_steps.is_some_and(|m| history.len() >= m) {
                break 'epochs;
            }
            let step = epoch * spe + bi;
            let batch: Vec<Sample<T>> = chunk
                .iter()
                .map(|&i| {
                    let mut r = rng::stream(&[tag::AUGMENT, cfg.seed, epoch as u64, i as u64]);
                    let a = augment(&pairs[i], policy, &mut r);
                    Sample { ir: a.ir, vis: a.vis }
                })
                .collect();
            let lr = lr_schedule(step, spe, cfg);
            let started = Instant::now();
            let outcome = train_step(&mut model, &mut opt, &batch, cfg, step, lr)?;
            let record = StepRecord {
                step,
                epoch,
                outcome,
                seconds: started.elapsed().as_secs_f64(),
            };
            log::debug!(
                "step {step} epoch {epoch} lr {lr:.3e} loss {:.5} (decom {:.5} int {:.5} grad {:.5}) |g| {:.3}",
                outcome.loss.total,
                outcome.loss.decomposition,
                outcome.loss.intensity,
                outcome.loss.gradient,
                outcome.grad_norm
            );
            if let Some(w) = log.as_mut() {
                log_row(w, &record, cfg, k)?;
            }
            history.push(record);
        }
        epochs_done = epoch + 1;
        log::info!(
            "epoch {}/{} loss {:.5}",
            epochs_done,
            cfg.epochs,
            history.last().map_or(f64::NAN, |r| r.outcome.loss.total)
        );
        if epochs_done % cfg.checkpoint_every == 0 || epochs_done == cfg.epochs {
            save(&model, &opt, epochs_done)?;
        }
    }
    Ok(TrainResult {
        model,
        optimizer: opt,
        history,
        checkpoints,
        epochs_done,
    })
}
