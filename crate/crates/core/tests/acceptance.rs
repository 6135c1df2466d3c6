//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr outside the test harness capture, then asserts.

use std::io::Write;
use std::time::Instant;

use contifuse::autograd::Graph;
use contifuse::data::synthetic::write_synthetic_dataset;
use contifuse::data::{load_pair, AugmentationPolicy, ImagePair};
use contifuse::loss::decomposition::{build_distance_matrix, build_target_matrix, clamp_mu, decomposition_loss};
use contifuse::loss::sds::{adjacent_pairs, eligible_pool};
use contifuse::loss::{
    decomposition_loss_value, gamma_distance, gaussian_decay, linear_decay, pearson_channel, sds_sample, total_loss,
    ConstraintSet, Constraints, DecompositionSettings, LossWeights, Similarity,
};
use contifuse::metrics::{ag, histogram_entropy, mi, mutual_information, qabf, self_preservation_bound, sf};
use contifuse::model::{Model, ModelConfig};
use contifuse::rng;
use contifuse::train::{checkpoint_path, lr_schedule, train_loop, LoopOptions, StepRecord, TrainConfig};
use contifuse::Tensor;
use rand::Rng;

fn report(name: &str, ok: bool, detail: impl AsRef<str>) {
    let status = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{status} {name}: {}", detail.as_ref());
    assert!(ok, "{name}: {}", detail.as_ref());
}

fn random_tensor(r: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

#[test]
fn decay_endpoints() {
    let start = Instant::now();
    let mut r = rng::stream(&[101]);
    let mut worst = 0.0f64;
    let mut monotone = true;
    for _ in 0..100 {
        let mu: f64 = r.gen_range(1e-3..0.9);
        let s: usize = r.gen_range(2..20);
        for f in [gaussian_decay::<f64>, linear_decay::<f64>] {
            worst = worst.max((f(0, mu, s) - 1.0).abs()).max((f(s - 1, mu, s) - mu).abs());
        }
        monotone &= (1..s).all(|p| gaussian_decay(p, mu, s) < gaussian_decay(p - 1, mu, s));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "decay endpoints",
        worst <= 1e-9 && monotone && secs < 1.0,
        format!("max endpoint error {worst:.2e}, gaussian strictly decreasing {monotone}, {secs:.3}s"),
    );
}

#[test]
fn distance_properties() {
    let start = Instant::now();
    let mut r = rng::stream(&[102]);
    let (mut asym, mut self_err, mut range_err, mut affine_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let c = r.gen_range(1..5);
        let (h, w) = (r.gen_range(2..9), r.gen_range(2..9));
        let x = random_tensor(&mut r, &[1, c, h, w]);
        let y = random_tensor(&mut r, &[1, c, h, w]);
        let d = gamma_distance(&x, &y);
        asym = asym.max((d - gamma_distance(&y, &x)).abs());
        self_err = self_err.max((gamma_distance(&x, &x) - 1.0).abs());
        range_err = range_err.max(d.abs() - 1.0);
        let scales: Vec<(f64, f64)> = (0..c)
            .map(|_| (r.gen_range(0.1..10.0), r.gen_range(-5.0..5.0)))
            .collect();
        let mut x2 = x.clone();
        for (ch, plane) in x2.data_mut().chunks_mut(h * w).enumerate() {
            plane.iter_mut().for_each(|v| *v = scales[ch].0 * *v + scales[ch].1);
        }
        affine_err = affine_err.max((gamma_distance(&x2, &y) - d).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = asym == 0.0 && self_err <= 1e-7 && range_err <= 1e-9 && affine_err <= 1e-7 && secs < 5.0;
    report(
        "distance properties",
        ok,
        format!("asymmetry {asym:.1e}, self {self_err:.1e}, range excess {range_err:.1e}, affine {affine_err:.1e}, {secs:.3}s"),
    );
}

#[test]
fn distance_matrix_oracle() {
    let mut r = rng::stream(&[103]);
    let (mut exact, mut sym, mut diag) = (true, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let stack: Vec<Tensor<f64>> = (0..6).map(|_| random_tensor(&mut r, &[1, 3, 5, 5])).collect();
        let m = build_distance_matrix(&stack, Similarity::Pearson);
        for i in 0..6 {
            for j in 0..6 {
                exact &= m.get(i, j) == gamma_distance(&stack[i], &stack[j]);
                sym = sym.max((m.get(i, j) - m.get(j, i)).abs());
            }
            diag = diag.max((m.get(i, i) - 1.0).abs());
        }
    }
    report(
        "distance matrix oracle",
        exact && sym <= 1e-6 && diag <= 1e-6,
        format!("bitwise match {exact}, asymmetry {sym:.1e}, diagonal error {diag:.1e}"),
    );
}

#[test]
fn constraint_counting() {
    let start = Instant::now();
    let mut problems = Vec::new();
    for k in [3usize, 4, 5, 7, 9, 11, 15] {
        if 2 * ConstraintSet::full(k).len() != k * k + 3 * k {
            problems.push(format!("full K={k}"));
        }
        let want = if k >= 5 {
            2 * k + 2
        } else {
            k + 1 + eligible_pool(k).len()
        };
        if k == 3 && want != 5 {
            problems.push("K=3 cap".into());
        }
        for seed in 0..50 {
            let set = sds_sample(seed, k);
            let pairs = set.pairs();
            if pairs.len() != want {
                problems.push(format!("size K={k} seed={seed}: {}", pairs.len()));
            }
            let mut sorted = pairs.to_vec();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != pairs.len() {
                problems.push(format!("duplicate K={k} seed={seed}"));
            }
            if !adjacent_pairs(k).iter().all(|p| pairs.contains(p)) {
                problems.push(format!("adjacent missing K={k} seed={seed}"));
            }
            if pairs[k + 1..].iter().any(|&(u, v)| u == k + 1 || v == 0) {
                problems.push(format!("endpoint pick K={k} seed={seed}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "constraint counting",
        problems.is_empty() && secs < 1.0,
        format!(
            "{} problems {:?}, {secs:.3}s",
            problems.len(),
            problems.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn sampled_loss_is_unbiased() {
    let start = Instant::now();
    let k = 7;
    let mut r = rng::stream(&[104]);
    let stack: Vec<Tensor<f64>> = (0..k + 2).map(|_| random_tensor(&mut r, &[1, 4, 6, 6])).collect();
    let settings = DecompositionSettings::default();
    let measured = build_distance_matrix(&stack, settings.similarity);
    let mu = clamp_mu(measured.get(0, k + 1));
    let target = build_target_matrix(k, mu, settings.decay, settings.span);
    let err = |(u, v): (usize, usize)| (measured.get(u, v) - target.get(u, v)).powi(2);
    let pool = eligible_pool(k);
    let adjacent: f64 = adjacent_pairs(k).into_iter().map(err).sum();
    let pooled: f64 = pool.iter().copied().map(err).sum();
    let picks = (k + 1).min(pool.len()) as f64;
    let expected = (adjacent + picks / pool.len() as f64 * pooled) / (2 * k + 2) as f64;

    let stacks = vec![stack];
    let trials = 2000;
    let mean: f64 = (0..trials)
        .map(|seed| {
            let sets = [sds_sample(seed, k)];
            decomposition_loss_value(&stacks, Constraints::Sampled(&sets), settings).0
        })
        .sum::<f64>()
        / trials as f64;
    let rel = (mean - expected).abs() / expected;
    let secs = start.elapsed().as_secs_f64();
    report(
        "sampled loss unbiased",
        rel <= 0.02 && secs < 30.0,
        format!("mean {mean:.6} vs expected {expected:.6} (relative {rel:.4}), {secs:.2}s"),
    );
}

fn best_time(f: impl Fn()) -> f64 {
    (0..5)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn cost_scaling() {
    let layers = 3;
    let settings = DecompositionSettings::default();
    let mut r = rng::stream(&[105]);
    let mut exact = true;
    let mut times = Vec::new();
    for k in 5..=15 {
        let stacks: Vec<Vec<Tensor<f64>>> = (0..layers)
            .map(|_| (0..k + 2).map(|_| random_tensor(&mut r, &[1, 8, 24, 24])).collect())
            .collect();
        let sets: Vec<ConstraintSet> = (0..layers).map(|l| sds_sample(l as u64, k)).collect();
        let (_, full, _) = decomposition_loss_value(&stacks, Constraints::Full, settings);
        let (_, sampled, _) = decomposition_loss_value(&stacks, Constraints::Sampled(&sets), settings);
        exact &= full == layers * (k * k + 3 * k) / 2 && sampled == layers * (2 * k + 2);
        if k == 5 || k == 15 {
            let tf = best_time(|| {
                decomposition_loss_value(&stacks, Constraints::Full, settings);
            });
            let ts = best_time(|| {
                decomposition_loss_value(&stacks, Constraints::Sampled(&sets), settings);
            });
            times.push((tf, ts));
        }
    }
    let full_ratio = times[1].0 / times[0].0;
    let sds_ratio = times[1].1 / times[0].1;
    // K triples, so quadratic growth would be 9x
    let ok = exact && sds_ratio < 0.5 * 9.0 && sds_ratio < full_ratio;
    report(
        "cost scaling",
        ok,
        format!("counts exact {exact}; time ratio K=15/K=5 full {full_ratio:.2}x, sampled {sds_ratio:.2}x"),
    );
}

/// Relative agreement within 1e-3. Gradients below 1e-5 are compared on an
/// absolute 1e-8 floor, the round-off level of a central difference at h = 1e-5.
fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-3 * analytic.abs().max(numeric.abs()).max(1e-5)
}

#[test]
fn gradient_check() {
    let start = Instant::now();
    let h = 1e-6;
    let k = 3;
    let settings = DecompositionSettings::default();
    let mut r = rng::stream(&[106]);
    let mut failures = Vec::new();

    // Sampled decomposition loss against interior state entries; the
    // endpoints fix the target and are held constant by design.
    let stack: Vec<Tensor<f64>> = (0..k + 2).map(|_| random_tensor(&mut r, &[1, 3, 8, 8])).collect();
    let sets = [sds_sample(7, k)];
    let mut g = Graph::new();
    let vars: Vec<_> = stack.iter().map(|t| g.param(t.clone())).collect();
    let loss = decomposition_loss(&mut g, &[vars.clone()], Constraints::Sampled(&sets), settings).loss;
    let grads = g.backward(loss);
    for _ in 0..25 {
        let s = r.gen_range(1..=k);
        let i = r.gen_range(0..stack[s].numel());
        let eval = |delta: f64| {
            let mut st = stack.clone();
            st[s].data_mut()[i] += delta;
            decomposition_loss_value(&[st], Constraints::Sampled(&sets), settings).0
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = grads.get(vars[s]).unwrap().data()[i];
        if !close(analytic, numeric) {
            failures.push(format!("state {s}[{i}]: {analytic:.6e} vs {numeric:.6e}"));
        }
    }

    // Total loss of a toy network against weights behind the encoders.
    let cfg = ModelConfig::with_shape(1, k, 4, 2);
    let model = Model::<f64>::new(cfg.clone(), 3).unwrap();
    let ir = Tensor::from_fn(&[1, 1, 16, 16], |_| r.gen_range(0.0..1.0));
    let vis = Tensor::from_fn(&[1, 1, 16, 16], |_| r.gen_range(0.0..1.0));
    let weights = LossWeights::default();
    let loss_of = |m: &Model<f64>| {
        let mut g = Graph::new();
        let p = m.params().bind(&mut g);
        let (a, b) = (g.constant(ir.clone()), g.constant(vis.clone()));
        let out = m.forward(&mut g, &p, a, b).unwrap();
        let t = total_loss(
            &mut g,
            out.fused,
            &ir,
            &vis,
            &out.stack_states(),
            weights,
            Constraints::Sampled(&sets),
            settings,
        );
        (g, p, t.loss)
    };
    let (g, p, loss) = loss_of(&model);
    let grads = g.backward(loss);
    let names = model.params().names().to_vec();
    let eligible: Vec<usize> = (0..names.len())
        .filter(|&j| !(names[j].starts_with("input") || names[j].starts_with("enc")))
        .collect();
    for _ in 0..25 {
        let j = eligible[r.gen_range(0..eligible.len())];
        let i = r.gen_range(0..model.params().tensors()[j].numel());
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.params_mut().tensors_mut()[j].data_mut()[i] += delta;
            let (g, _, l) = loss_of(&m);
            g.value(l).item()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = grads.get(p[j]).map_or(0.0, |t| t.data()[i]);
        if !close(analytic, numeric) {
            failures.push(format!("{}[{i}]: {analytic:.6e} vs {numeric:.6e}", names[j]));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "gradient check",
        failures.is_empty() && secs < 60.0,
        format!(
            "50 entries, {} mismatches {:?}, {secs:.2}s",
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn forward_contract() {
    let cfg = ModelConfig::default();
    let model = Model::<f32>::new(cfg.clone(), 0).unwrap();
    let mut r = rng::stream(&[107]);
    let ir = Tensor::from_fn(&[1, 1, 192, 192], |_| r.gen_range(0.0..1.0f32));
    let vis = Tensor::from_fn(&[1, 1, 192, 192], |_| r.gen_range(0.0..1.0f32));
    let mut g = Graph::new();
    let p = model.params().bind_frozen(&mut g);
    let (a, b) = (g.constant(ir), g.constant(vis));
    let out = model.forward(&mut g, &p, a, b).unwrap();
    let mut problems = Vec::new();
    if g.shape(out.fused) != [1, 1, 192, 192] {
        problems.push(format!("fused {:?}", g.shape(out.fused)));
    }
    let mut worst_row = 0.0f32;
    for (l, stack) in out.stacks.iter().enumerate() {
        let layer = l + 1;
        let side = 192 >> layer;
        let want = [1, cfg.channels(layer), side, side];
        if stack.states.len() != cfg.num_states + 2 || stack.states.iter().any(|&s| g.shape(s) != want) {
            problems.push(format!("layer {layer} states"));
        }
        let attn = g.attention_weights(stack.attention).expect("attention node");
        let n = *attn.shape().last().unwrap();
        for row in attn.data().chunks(n) {
            worst_row = worst_row.max((row.iter().sum::<f32>() - 1.0).abs());
        }
        let (first, last) = (stack.states[0], stack.states[cfg.num_states + 1]);
        if g.value(first) != g.value(out.vis_features[l]) || g.value(last) != g.value(out.ir_features[l]) {
            problems.push(format!("layer {layer} endpoints"));
        }
    }
    report(
        "forward contract",
        problems.is_empty() && worst_row <= 1e-5,
        format!("problems {problems:?}, worst attention row error {worst_row:.1e}"),
    );
}

fn synthetic_pairs(dir: &std::path::Path, count: usize, side: usize, seed: u64) -> Vec<ImagePair<f64>> {
    write_synthetic_dataset(dir, count, side, side, seed)
        .unwrap()
        .iter()
        .map(|r| load_pair(r).unwrap())
        .collect()
}

#[test]
fn desk_scale_overfit() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let pairs: Vec<ImagePair<f32>> = write_synthetic_dataset(dir.path(), 8, 96, 96, 11)
        .unwrap()
        .iter()
        .map(|r| load_pair(r).unwrap())
        .collect();
    // one step per epoch, so 300 epochs give 300 steps
    let cfg = TrainConfig {
        epochs: 300,
        checkpoint_every: usize::MAX,
        ..Default::default()
    };
    let policy = AugmentationPolicy {
        crop_size: 96,
        ..Default::default()
    };
    let model = Model::<f32>::new(ModelConfig::default(), 0).unwrap();
    let run = train_loop(model, &pairs, &cfg, &policy, &LoopOptions::default()).unwrap();
    let first = run.history.first().unwrap().outcome.loss.total;
    let last = run.history.last().unwrap().outcome.loss.total;
    let drop = 1.0 - last / first;
    let corr: Vec<f64> = pairs
        .iter()
        .map(|p| {
            let fused = run.model.fuse(&p.ir, &p.vis).unwrap().fused;
            let f: Vec<f64> = fused.data().iter().map(|&v| v as f64).collect();
            let m: Vec<f64> =
                p.ir.data()
                    .iter()
                    .zip(p.vis.data())
                    .map(|(a, b)| a.max(*b) as f64)
                    .collect();
            pearson_channel(&f, &m)
        })
        .collect();
    let mean_corr = corr.iter().sum::<f64>() / corr.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    report(
        "desk-scale overfit",
        run.history.len() == 300 && drop >= 0.5 && mean_corr >= 0.9 && secs < 900.0,
        format!(
            "{} steps, loss {first:.4} -> {last:.4} (drop {:.1}%), fused/max Pearson mean {mean_corr:.4} min {:.4}, {secs:.0}s",
            run.history.len(),
            100.0 * drop,
            corr.iter().copied().fold(f64::INFINITY, f64::min)
        ),
    );
}

fn toy_entropy(img: &[f64]) -> f64 {
    let mut counts = std::collections::HashMap::new();
    for &v in img {
        *counts.entry(v as u64).or_insert(0usize) += 1;
    }
    let n = img.len() as f64;
    counts.values().map(|&c| -(c as f64 / n) * (c as f64 / n).ln()).sum()
}

fn toy_mi(a: &[f64], b: &[f64]) -> f64 {
    let mut joint = std::collections::HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x as u64, y as u64)).or_insert(0usize) += 1;
    }
    let n = a.len() as f64;
    let joint_h: f64 = joint.values().map(|&c| -(c as f64 / n) * (c as f64 / n).ln()).sum();
    toy_entropy(a) + toy_entropy(b) - joint_h
}

fn toy_sf(img: &[f64], h: usize, w: usize) -> f64 {
    let (mut rf, mut cf) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if x > 0 {
                rf += (img[y * w + x] - img[y * w + x - 1]).powi(2);
            }
            if y > 0 {
                cf += (img[y * w + x] - img[(y - 1) * w + x]).powi(2);
            }
        }
    }
    let n = (h * w) as f64;
    (rf / n + cf / n).sqrt()
}

fn toy_ag(img: &[f64], h: usize, w: usize) -> f64 {
    let mut s = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let dx = img[y * w + x + 1] - img[y * w + x];
            let dy = img[(y + 1) * w + x] - img[y * w + x];
            s += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    s / ((h - 1) * (w - 1)) as f64
}

fn toy_image(r: &mut impl Rng) -> Vec<f64> {
    (0..16).map(|_| r.gen_range(0..6) as f64 * 40.0).collect()
}

#[test]
fn metric_oracles() {
    let mut r = rng::stream(&[108]);
    let mut problems = Vec::new();
    let flat = vec![77.0; 16 * 16];
    if sf(&flat, 16, 16) != 0.0 || ag(&flat, 16, 16) != 0.0 {
        problems.push("constant SF/AG".to_string());
    }
    let textured: Vec<f64> = (0..48 * 48)
        .map(|i| {
            let (y, x) = ((i / 48) as f64, (i % 48) as f64);
            (128.0 + 70.0 * (0.5 * x).sin() * (0.3 * y).cos() + r.gen_range(-20.0..20.0))
                .round()
                .clamp(0.0, 255.0)
        })
        .collect();
    let self_mi = mi(&textured, &textured, &textured);
    let two_h = 2.0 * histogram_entropy(&textured);
    if (self_mi - two_h).abs() > 1e-9 {
        problems.push(format!("self MI {self_mi} vs {two_h}"));
    }
    if (mutual_information(&textured, &textured) - histogram_entropy(&textured)).abs() > 1e-9 {
        problems.push("MI(X, X) != H(X)".into());
    }
    let other: Vec<f64> = textured.iter().map(|v| 255.0 - v).collect();
    if qabf(&vec![90.0; 48 * 48], &textured, &other, 48, 48) != 0.0 {
        problems.push("constant fused Qabf".into());
    }
    let q = qabf(&textured, &textured, &textured, 48, 48);
    let bound = self_preservation_bound();
    if q < 0.99 * bound {
        problems.push(format!("self Qabf {q} < 0.99 * {bound}"));
    }
    let mut toy_worst = 0.0f64;
    for _ in 0..50 {
        let (a, b, f) = (toy_image(&mut r), toy_image(&mut r), toy_image(&mut r));
        toy_worst = toy_worst
            .max((sf(&f, 4, 4) - toy_sf(&f, 4, 4)).abs())
            .max((ag(&f, 4, 4) - toy_ag(&f, 4, 4)).abs())
            .max((mi(&f, &a, &b) - toy_mi(&f, &a) - toy_mi(&f, &b)).abs());
    }
    if toy_worst > 1e-9 {
        problems.push(format!("4x4 oracle error {toy_worst:.2e}"));
    }
    report(
        "metric oracles",
        problems.is_empty(),
        format!("problems {problems:?}, self Qabf {q:.4} (bound {bound:.4}), 4x4 worst error {toy_worst:.1e}"),
    );
}

#[test]
fn schedule_endpoints() {
    let cfg = TrainConfig::default();
    let spe = 7;
    let at = |s| lr_schedule(s, spe, &cfg);
    let errs = [
        (at(0) - 1e-5).abs(),
        (at(cfg.warmup_epochs * spe) - 6e-5).abs(),
        (at(cfg.epochs * spe - 1) - 5e-6).abs(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    report(
        "schedule endpoints",
        worst <= 1e-9,
        format!(
            "start {:.3e}, peak {:.3e}, final {:.3e}",
            at(0),
            at(cfg.warmup_epochs * spe),
            at(cfg.epochs * spe - 1)
        ),
    );
}

fn losses(history: &[StepRecord]) -> Vec<(usize, [u64; 5])> {
    history
        .iter()
        .map(|h| {
            let l = &h.outcome.loss;
            let bits = [l.total, l.decomposition, l.intensity, l.gradient, h.outcome.grad_norm].map(f64::to_bits);
            (h.step, bits)
        })
        .collect()
}

#[test]
fn reproducible_training_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = synthetic_pairs(&dir.path().join("data"), 3, 24, 5);
    let cfg = TrainConfig {
        epochs: 4,
        warmup_epochs: 1,
        batch_size: 2,
        checkpoint_every: 1,
        seed: 42,
        ..Default::default()
    };
    let policy = AugmentationPolicy {
        crop_size: 16,
        hflip_prob: 0.5,
        vflip_prob: 0.5,
    };
    let model_cfg = ModelConfig::with_shape(2, 3, 4, 2);
    let fresh = || Model::<f64>::new(model_cfg.clone(), cfg.seed).unwrap();
    let out = |name: &str| LoopOptions {
        out_dir: Some(dir.path().join(name)),
        ..Default::default()
    };
    let a = train_loop(fresh(), &pairs, &cfg, &policy, &out("a")).unwrap();
    let b = train_loop(fresh(), &pairs, &cfg, &policy, &out("b")).unwrap();
    let same_runs = losses(&a.history) == losses(&b.history) && a.model == b.model;

    let resumed = train_loop(
        fresh(),
        &pairs,
        &cfg,
        &policy,
        &LoopOptions {
            out_dir: Some(dir.path().join("c")),
            resume: Some(checkpoint_path(&dir.path().join("a"), 2)),
            max_steps: None,
        },
    )
    .unwrap();
    let tail = losses(&a.history)[a.history.len() - resumed.history.len()..].to_vec();
    let same_tail = !resumed.history.is_empty() && losses(&resumed.history) == tail && resumed.model == a.model;
    report(
        "reproducibility",
        same_runs && same_tail,
        format!(
            "{} steps bit-identical across runs: {same_runs}; resume from epoch 2 replays {} steps exactly: {same_tail}",
            a.history.len(),
            resumed.history.len()
        ),
    );
}
