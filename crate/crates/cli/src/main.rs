use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use contifuse::config::{parse_override, RunConfig};
use contifuse::data::{self, discover_dataset, load_pair, ImagePair, PairRecord};
use contifuse::loss::{decomposition_loss_value, sds_sample, ConstraintSet, Constraints, DecompositionSettings};
use contifuse::metrics::{evaluate_directory, Metric};
use contifuse::model::checkpoint;
use contifuse::rng;
use contifuse::train::{latest_checkpoint, train_loop, LoopOptions};
use contifuse::{DType, Model32, Scalar, Tensor};
use rand::Rng;

/// Exit status for invalid configuration or arguments.
const EXIT_CONFIG: u8 = 2;
/// Exit status when some inputs failed but the command ran.
const EXIT_PARTIAL: u8 = 1;

#[derive(Parser)]
#[command(
    name = "contifuse",
    version,
    about = "Infrared/visible image fusion by continuous decomposition"
)]
struct Cli {
    /// Log filter, e.g. `debug` or `contifuse=trace`.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset root or manifest.
    Train(TrainArgs),
    /// Fuse one pair or every pair of a dataset with a trained checkpoint.
    Fuse(FuseArgs),
    /// Compute fusion metrics for a directory of fused images.
    Eval(EvalArgs),
    /// Write the transition states of one layer as images.
    DumpStates(DumpArgs),
    /// Compare constraint counts and loss time of full and sampled loss.
    BenchSds(BenchArgs),
    /// Write a procedural dataset in the `ir/` + `vi/` layout.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML file of dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `sds` or `full`.
    #[arg(long)]
    loss_mode: Option<String>,
    /// `gaussian` or `linear`.
    #[arg(long)]
    decay: Option<String>,
    /// `f32` or `f64`.
    #[arg(long)]
    dtype: Option<String>,
    /// Any config key, e.g. `--set model.k=5`. Repeatable; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Continue from this checkpoint.
    #[arg(long, conflicts_with = "resume_latest")]
    resume: Option<PathBuf>,
    /// Continue from the newest checkpoint in the output directory.
    #[arg(long)]
    resume_latest: bool,
    /// Stop after this many steps.
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Infrared image (with `--vis`).
    #[arg(long, requires = "vis", conflicts_with = "data")]
    ir: Option<PathBuf>,
    #[arg(long, requires = "ir")]
    vis: Option<PathBuf>,
    /// Dataset root or manifest; every pair is fused.
    #[arg(long, required_unless_present = "ir")]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write the fused luminance only, without visible colour.
    #[arg(long)]
    grayscale: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    fused: PathBuf,
    #[arg(long)]
    ir: PathBuf,
    #[arg(long)]
    vis: PathBuf,
    /// CSV report path.
    #[arg(long)]
    report: PathBuf,
    /// Comma-separated subset of mi,sf,ag,vif,qabf.
    #[arg(long, default_value = "mi,sf,ag,vif,qabf")]
    metrics: String,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    ir: PathBuf,
    #[arg(long)]
    vis: PathBuf,
    /// Layer index, starting at 1.
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated state counts.
    #[arg(long, default_value = "5,7,9,11,13,15", value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    /// Side of the synthetic feature maps.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A command that ran to the end but could not process every input.
#[derive(Debug)]
struct Partial(String);

impl std::fmt::Display for Partial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Partial {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp_secs()
        .init();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::DumpStates(a) => cmd_dump_states(a),
        Command::BenchSds(a) => cmd_bench_sds(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e
                .downcast_ref::<contifuse::Error>()
                .is_some_and(|e| matches!(e, contifuse::Error::Config(_)));
            if config {
                ExitCode::from(EXIT_CONFIG)
            } else if e.is::<Partial>() {
                ExitCode::from(EXIT_PARTIAL)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut raw: Vec<String> = Vec::new();
    let mut push = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            raw.push(format!("{key}={v}"));
        }
    };
    push(
        "paths.data",
        a.data.as_ref().map(|p| format!("{:?}", p.display().to_string())),
    );
    push(
        "paths.out",
        a.out.as_ref().map(|p| format!("{:?}", p.display().to_string())),
    );
    push("train.epochs", a.epochs.map(|v| v.to_string()));
    push("train.batch_size", a.batch_size.map(|v| v.to_string()));
    push("train.seed", a.seed.map(|v| v.to_string()));
    push("train.loss_mode", a.loss_mode.clone());
    push("train.decay", a.decay.clone());
    push("dtype", a.dtype.clone());
    raw.extend(a.sets.iter().cloned());
    let overrides = raw
        .iter()
        .map(|s| parse_override(s))
        .collect::<contifuse::Result<Vec<_>>>()?;
    Ok(RunConfig::resolve(a.config.as_deref(), &overrides)?)
}

fn load_all<T: Scalar>(records: &[PairRecord]) -> Result<Vec<ImagePair<T>>> {
    records
        .iter()
        .map(|r| load_pair(r).with_context(|| format!("loading pair {}", r.id)))
        .collect()
}

fn train_as<T: Scalar>(cfg: &RunConfig, records: &[PairRecord], opts: &LoopOptions) -> Result<()> {
    let pairs = load_all::<T>(records)?;
    let model = contifuse::model::Model::<T>::new(cfg.model.clone(), cfg.train.seed)?;
    log::info!(
        "training {} parameters on {} pairs in {}",
        model.params().tensors().iter().map(|t| t.numel()).sum::<usize>(),
        pairs.len(),
        T::DTYPE.name()
    );
    let result = train_loop(model, &pairs, &cfg.train, &cfg.augment, opts)?;
    if let (Some(first), Some(last)) = (result.history.first(), result.history.last()) {
        println!(
            "steps {}..={}  loss {:.6} -> {:.6}  checkpoints {}",
            first.step,
            last.step,
            first.outcome.loss.total,
            last.outcome.loss.total,
            result.checkpoints.len()
        );
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = run_config(&a)?;
    let records = discover_dataset(&cfg.paths.data)?;
    let out = cfg.paths.out.clone();
    let echoed = cfg.write_effective(&out)?;
    log::info!("effective configuration written to {}", echoed.display());
    let resume = match (a.resume, a.resume_latest) {
        (Some(p), _) => Some(p),
        (None, true) => Some(latest_checkpoint(&out).with_context(|| format!("no checkpoint in {}", out.display()))?),
        (None, false) => None,
    };
    let opts = LoopOptions {
        out_dir: Some(out),
        resume,
        max_steps: a.max_steps,
    };
    match cfg.dtype {
        DType::F32 => train_as::<f32>(&cfg, &records, &opts),
        DType::F64 => train_as::<f64>(&cfg, &records, &opts),
    }
}

fn fuse_one(model: &Model32, record: &PairRecord, out: &Path, grayscale: bool) -> Result<PathBuf> {
    let pair = load_pair::<f32>(record)?;
    let fusion = model.fuse(&pair.ir, &pair.vis)?;
    let path = out.join(format!("{}.png", record.id));
    match (&pair.chroma, grayscale) {
        (Some(c), false) => data::save_rgb(&path, &fusion.fused, c)?,
        _ => data::save_gray(&path, &fusion.fused)?,
    }
    Ok(path)
}

fn pair_from_files(ir: &Path, vis: &Path) -> Result<PairRecord> {
    let id = ir
        .file_stem()
        .and_then(|s| s.to_str())
        .context("infrared path has no file name")?
        .to_string();
    let (w, h) = image_size(ir)?;
    Ok(PairRecord {
        id,
        ir_path: ir.to_path_buf(),
        vis_path: vis.to_path_buf(),
        size: (h, w),
    })
}

fn image_size(p: &Path) -> Result<(usize, usize)> {
    let t = data::load_gray::<f32>(p)?;
    let (_, _, h, w) = t.dims4();
    Ok((w, h))
}

fn cmd_fuse(a: FuseArgs) -> Result<()> {
    let model = checkpoint::load::<f32>(&a.checkpoint)?.model;
    let records = match (&a.ir, &a.vis, &a.data) {
        (Some(ir), Some(vis), _) => vec![pair_from_files(ir, vis)?],
        (_, _, Some(root)) => discover_dataset(root)?,
        _ => bail!("give --ir and --vis, or --data"),
    };
    let mut failed = Vec::new();
    for r in &records {
        let start = Instant::now();
        match fuse_one(&model, r, &a.out, a.grayscale) {
            Ok(p) => log::info!("{} ({:.2}s)", p.display(), start.elapsed().as_secs_f64()),
            Err(e) => {
                log::error!("{}: {e:#}", r.id);
                failed.push(r.id.clone());
            }
        }
    }
    if !failed.is_empty() {
        return Err(Partial(format!(
            "{} of {} pairs failed: {}",
            failed.len(),
            records.len(),
            failed.join(", ")
        ))
        .into());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let metrics = Metric::parse_list(&a.metrics).map_err(contifuse::Error::config)?;
    let report = evaluate_directory(&a.fused, &a.ir, &a.vis, &metrics)?;
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&a.report, report.to_csv()?).with_context(|| format!("writing {}", a.report.display()))?;
    print!("{}", report.to_table());
    if !report.skipped.is_empty() {
        return Err(Partial(format!("{} image(s) skipped", report.skipped.len())).into());
    }
    Ok(())
}

/// Channel mean of one `[C, H, W]` state, min-max stretched to `[0, 1]`.
fn state_image(state: &[f32], channels: usize, h: usize, w: usize) -> Tensor<f32> {
    let mut mean = vec![0.0f32; h * w];
    for c in state.chunks(h * w).take(channels) {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v / channels as f32;
        }
    }
    let lo = mean.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = mean.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    Tensor::from_fn(
        &[1, 1, h, w],
        |i| if range > 0.0 { (mean[i] - lo) / range } else { 0.0 },
    )
}

fn cmd_dump_states(a: DumpArgs) -> Result<()> {
    let model = checkpoint::load::<f32>(&a.checkpoint)?.model;
    let n = model.config().num_layers;
    if a.layer == 0 || a.layer > n {
        return Err(contifuse::Error::config(format!("--layer must lie in 1..={n}, got {}", a.layer)).into());
    }
    let record = pair_from_files(&a.ir, &a.vis)?;
    let pair = load_pair::<f32>(&record)?;
    let fusion = model.fuse(&pair.ir, &pair.vis)?;
    let stack = &fusion.stacks[a.layer - 1];
    let [count, c, h, w] = [0, 1, 2, 3].map(|i| stack.shape()[i]);
    for s in 0..count {
        let path = a.out.join(format!("layer{}_state{s:02}.png", a.layer));
        data::save_gray(&path, &state_image(stack.outer(s), c, h, w))?;
    }
    println!("wrote {count} states of layer {} to {}", a.layer, a.out.display());
    Ok(())
}

fn random_stacks(layers: usize, k: usize, channels: usize, size: usize, seed: u64) -> Vec<Vec<Tensor<f64>>> {
    let mut r = rng::stream(&[seed, k as u64]);
    (0..layers)
        .map(|_| {
            (0..k + 2)
                .map(|_| Tensor::from_fn(&[1, channels, size, size], |_| r.gen_range(-1.0..1.0)))
                .collect()
        })
        .collect()
}

fn cmd_bench_sds(a: BenchArgs) -> Result<()> {
    if a.k.is_empty() || a.k.contains(&0) || a.trials == 0 || a.layers == 0 {
        return Err(contifuse::Error::config("--k entries, --trials and --layers must be >= 1").into());
    }
    let settings = DecompositionSettings::default();
    println!(
        "{:>4} {:>12} {:>12} {:>12} {:>12} {:>8}",
        "K", "full_pairs", "sds_pairs", "full_ms", "sds_ms", "speedup"
    );
    for &k in &a.k {
        let stacks = random_stacks(a.layers, k, a.channels, a.size, a.seed);
        let (mut t_full, mut t_sds) = (0.0, 0.0);
        let (mut n_full, mut n_sds) = (0, 0);
        for trial in 0..a.trials {
            let start = Instant::now();
            let (_, pairs, _) = decomposition_loss_value(&stacks, Constraints::Full, settings);
            t_full += start.elapsed().as_secs_f64();
            n_full = pairs;
            let sets: Vec<ConstraintSet> = (0..a.layers)
                .map(|l| sds_sample(rng::derive_seed(&[a.seed, trial as u64, l as u64]), k))
                .collect();
            let start = Instant::now();
            let (_, pairs, _) = decomposition_loss_value(&stacks, Constraints::Sampled(&sets), settings);
            t_sds += start.elapsed().as_secs_f64();
            n_sds = pairs;
        }
        let trials = a.trials as f64;
        println!(
            "{k:>4} {n_full:>12} {n_sds:>12} {:>12.3} {:>12.3} {:>8.2}",
            1e3 * t_full / trials,
            1e3 * t_sds / trials,
            t_full / t_sds
        );
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let records = data::synthetic::write_synthetic_dataset(&a.out, a.count, a.height, a.width, a.seed)?;
    println!("wrote {} pairs to {}", records.len(), a.out.display());
    Ok(())
}
