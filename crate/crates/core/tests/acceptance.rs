//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs everything; pass criterion numbers
//! after `--` to run a subset (`cargo test --test acceptance -- 1 4 11`).
//! The process exits 0 whatever the outcome so that the remaining test
//! targets still run; the summary line counts the failures.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use diffdepth::data::{sparsify, synth_split, Sample, SparsityPattern};
use diffdepth::depth_network::{evaluate_predictions, predict_samples, DepthTrainOptions, DepthTrainer, Evaluation, FeatureMode, StructureSource, TrainItem};
use diffdepth::diffusion::{q_sample_f64, NoiseSchedule, ScheduleConfig};
use diffdepth::feature_viz::feature_cluster_maps;
use diffdepth::harness::commands::{build_train_items, depth_config, load_structure_source};
use diffdepth::harness::{RunConfig, SparsifyConfig};
use diffdepth::losses::*;
use diffdepth::masks::{ObjectMask, ObjectMaskSet};
use diffdepth::metrics::{aligned_prediction, compute_metrics, AlignmentMode};
use diffdepth::noise_predictor::{smoothed_endpoints, FeatureScale, FeatureTap, NoisePredictorConfig, NoiseTrainOptions, NoiseTrainer};
use diffdepth::rng::{derive_rng, derive_seed, tags};
use diffdepth::DepthMap;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: [u64; 3] = [0, 1, 2];
const TRAIN_IMAGES: usize = 500;
const TEST_IMAGES: usize = 50;
const SIZE: usize = 64;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed.as_secs_f64() < limit_secs as f64
}

// 1

fn metric_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = derive_rng(101, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p: Vec<f64> = (0..64).map(|_| rng.random_range(0.05..50.0)).collect();
        let g: Vec<f64> = (0..64).map(|_| rng.random_range(0.1..40.0)).collect();
        let pred = DepthMap::dense(8, 8, p.clone()).unwrap();
        let gt = DepthMap::dense(8, 8, g.clone()).unwrap();
        let r = compute_metrics(&pred, &gt, AlignmentMode::None, None).unwrap();
        let got = [r.abs_rel, r.sq_rel, r.rmse, r.delta1, r.delta2, r.delta3];
        let want = brute_metrics(&p, &g);
        for k in 0..6 {
            worst = worst.max((got[k] - want[k]).abs() / (1.0 + want[k].abs()));
        }
        // Aligned mode equals the oracle on the explicitly aligned prediction.
        let ra = compute_metrics(&pred, &gt, AlignmentMode::MedianScaleShift, None).unwrap();
        let al = aligned_prediction(&pred, &gt).unwrap();
        let wa = brute_metrics(&al.values, &g);
        for (k, x) in [ra.abs_rel, ra.sq_rel, ra.rmse, ra.delta1, ra.delta2, ra.delta3].iter().enumerate() {
            worst = worst.max((x - wa[k]).abs() / (1.0 + wa[k].abs()));
        }
    }
    let el = t0.elapsed();
    outcome(
        worst <= 1e-9 && within(el, 10),
        format!("100 random 8x8 pairs, max rel diff {worst:.2e} (tol 1e-9), {:.2}s (limit 10s)", el.as_secs_f64()),
    )
}

// 2

fn affine_invariance() -> Outcome {
    let t0 = Instant::now();
    let cfg = LossConfig::default();
    let mut rng = derive_rng(102, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = 16;
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..30.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..30.0)).collect();
        let mut valid: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        valid[0] = true;
        valid[1] = true;
        let a = 10f64.powf(rng.random_range(-2.0..2.0));
        let b = rng.random_range(-100.0..100.0);
        let gt = DepthMap::new(4, 4, g, valid).unwrap();
        let pred = DepthMap::dense(4, 4, p.clone()).unwrap();
        let moved = DepthMap::dense(4, 4, p.iter().map(|x| a * x + b).collect()).unwrap();
        let l0 = affinity_loss(&pred, &gt, &cfg).unwrap();
        let l1 = affinity_loss(&moved, &gt, &cfg).unwrap();
        worst = worst.max((l0 - l1).abs());
    }
    let el = t0.elapsed();
    outcome(
        worst < 1e-6 && within(el, 30),
        format!("1000 trials, max |L(a*p+b) - L(p)| {worst:.2e} (tol 1e-6), {:.2}s (limit 30s)", el.as_secs_f64()),
    )
}

// 3

fn gradient_checks() -> Outcome {
    const H: f64 = 1e-5;
    let t0 = Instant::now();
    let cfg = LossConfig::default();
    let mut rng = derive_rng(103, &[]);
    let (mut af, mut obj) = (0.0f64, 0.0f64);
    let mut checked = 0;
    while checked < 20 {
        let inst = random_instance(&mut rng, 5, 5, 0.5);
        if !affinity_smooth(&inst, &cfg, 100.0 * H) {
            continue;
        }
        let (_, analytic) = affinity_loss_grad(&inst.pred, &inst.gt, &cfg).unwrap();
        let numeric = numeric_grad(&inst.pred.values, H, |v| {
            affinity_loss(&DepthMap::dense(5, 5, v.to_vec()).unwrap(), &inst.gt, &cfg).unwrap()
        });
        af = af.max(max_rel_err(&analytic, &numeric));
        checked += 1;
    }
    checked = 0;
    while checked < 20 {
        let inst = random_instance(&mut rng, 6, 6, 0.3);
        if !integrality_smooth(&inst, &cfg, 100.0 * H) {
            continue;
        }
        let (_, plan) = plan_for(&inst, &cfg);
        let stats = &inst.gt.valid;
        let analytic = frozen_integrality_grad(&inst.pred.values, stats, &cfg, &plan);
        let numeric = numeric_grad(&inst.pred.values, H, |v| frozen_integrality(v, stats, &cfg, &plan));
        obj = obj.max(max_rel_err(&analytic, &numeric));
        checked += 1;
    }
    let el = t0.elapsed();
    outcome(
        af < 1e-3 && obj < 1e-3 && within(el, 120),
        format!(
            "20+20 instances, h=1e-5, max rel err affinity {af:.2e}, integrality {obj:.2e} (tol 1e-3), {:.2}s (limit 120s)",
            el.as_secs_f64()
        ),
    )
}

// 4

fn worked_examples() -> Outcome {
    let cfg = LossConfig::default();
    let mut errs = Vec::new();
    let a = align_values(&[1.0, 2.0, 3.0], &[true; 3], 1e-6).unwrap();
    errs.extend(a.values.iter().zip([-1.5, 0.0, 1.5]).map(|(x, y)| (x - y).abs()));
    let l_af = affinity_loss(
        &DepthMap::dense(1, 3, vec![1.0, 2.0, 4.0]).unwrap(),
        &DepthMap::dense(1, 3, vec![1.0, 2.0, 3.0]).unwrap(),
        &cfg,
    )
    .unwrap();
    errs.push((l_af - 1.0 / 6.0).abs());
    let b = object_bounds(&[1.0, 1.0, 5.0], &[1.0, 1.2], 0.1).unwrap();
    errs.push((b.upper - 1.32).abs());
    errs.push((b.lower - 0.9).abs());

    let pred = AlignedDepth {
        values: vec![1.0, 1.0, 5.0, 0.0, 0.0, 0.0],
        shift: 0.0,
        scale: 1.0,
        divisor: 1.0,
        source_validity: vec![true; 6],
        guarded: false,
    };
    let gt = AlignedDepth {
        values: vec![1.0, 1.2, 0.0, 0.0, 0.0, 0.0],
        source_validity: vec![true, true, false, false, false, false],
        ..pred.clone()
    };
    let obj = |label, pixels: Vec<usize>| ObjectMask { label, occluded: vec![false; pixels.len()], pixels };
    let mut set = ObjectMaskSet::empty(2, 3);
    set.objects.push(obj(1, vec![0, 1, 2]));
    let l_obj = integrality_loss(&pred, &set, &gt, &cfg).unwrap();
    errs.push((l_obj - 3.68).abs());
    set.objects.push(obj(2, vec![3, 4, 5]));
    errs.push((integrality_loss(&pred, &set, &gt, &cfg).unwrap() - 1.84).abs());
    let total = l_af + cfg.lambda * l_obj;
    errs.push((total - (1.0 / 6.0 + 0.368)).abs());
    // The quoted total 0.53467 is rounded to five decimals.
    let rounded = (total - 0.53467).abs() <= 5e-6;

    let worst = errs.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst < 1e-6 && rounded,
        format!("alignment, L_af, bounds, L_obj (1 and 2 objects), total {total:.6}; max err {worst:.2e} (tol 1e-6)"),
    )
}

// 5

fn forward_noise_std() -> Outcome {
    let t0 = Instant::now();
    let sched = ScheduleConfig::default().build().unwrap();
    let mut rng = derive_rng(105, &[]);
    let n = 10_000;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for t in [50usize, 100, 150, 999] {
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let xt = q_sample_f64(&x0, t, &eps, &sched).unwrap();
        let ab = sched.alpha_bar(t);
        let r: Vec<f64> = xt.iter().zip(&x0).map(|(x, x0)| x - ab.sqrt() * x0).collect();
        let mean = r.iter().sum::<f64>() / n as f64;
        let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let rel = (sd / (1.0 - ab).sqrt() - 1.0).abs();
        worst = worst.max(rel);
        parts.push(format!("t={t} {rel:.4}"));
    }
    let el = t0.elapsed();
    outcome(
        worst < 0.01 && within(el, 60),
        format!("10k draws, relative std error {} (tol 0.01), {:.2}s (limit 60s)", parts.join(", "), el.as_secs_f64()),
    )
}

// Shared state for the trained criteria.

struct Bench {
    _dir: tempfile::TempDir,
    stage1_outcome: Option<Outcome>,
    train: Vec<Sample>,
    test: Vec<Sample>,
    source: StructureSource,
    sched: NoiseSchedule,
}

fn train_stage1() -> Bench {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let train = synth_split(0, "train", TRAIN_IMAGES, SIZE);
    let test = synth_split(0, "test", TEST_IMAGES, SIZE);
    let images: Vec<_> = train.iter().map(|s| s.image.clone()).collect();
    let sched = ScheduleConfig::default().build().unwrap();
    let opts = NoiseTrainOptions::desk();
    let steps = opts.steps;
    let mut trainer = NoiseTrainer::new(NoisePredictorConfig::desk(), opts).unwrap();
    trainer.run(&images, &sched, |_, _| {}).unwrap();
    let (first, last) = smoothed_endpoints(&trainer.loss_curve, 100).unwrap();
    let stage1 = dir.path().join("noise.ckpt");
    trainer.checkpoint().save(&stage1).unwrap();
    let el = t0.elapsed();
    let ratio = last / first;
    let o = outcome(
        ratio <= 0.5 && within(el, 30 * 60),
        format!(
            "{TRAIN_IMAGES} scenes, {steps} steps, smoothed loss {first:.4} -> {last:.4}, ratio {ratio:.3} (max 0.5), {:.0}s (limit 1800s)",
            el.as_secs_f64()
        ),
    );
    let cfg = RunConfig::default();
    let (source, _) = load_structure_source(&stage1, &cfg.taps, &cfg.schedule).unwrap();
    Bench { _dir: dir, stage1_outcome: Some(o), train, test, source, sched }
}

struct RunResult {
    delta1: f64,
    rmse: f64,
    abnormal: usize,
}

impl From<Evaluation> for RunResult {
    fn from(e: Evaluation) -> Self {
        Self { delta1: e.metrics.delta1, rmse: e.metrics.rmse, abnormal: e.abnormal_pixels }
    }
}

fn run_config(fusion: bool, lambda: f64, seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = seed;
    c.fusion_enabled = fusion;
    c.loss.lambda = lambda;
    c.depth.feature_mode = FeatureMode::Cached;
    c
}

fn train_and_eval(bench: &Bench, cfg: &RunConfig, items: &[TrainItem]) -> RunResult {
    let src = cfg.fusion_enabled.then_some(&bench.source);
    let mut opts = DepthTrainOptions::desk();
    opts.seed = cfg.seed;
    opts.loss = cfg.loss;
    opts.feature_mode = cfg.depth.feature_mode;
    let mut trainer = DepthTrainer::new(depth_config(cfg, src), opts).unwrap();
    trainer.run(items, src, |_, _| {}).unwrap();
    let preds = predict_samples(&trainer.net, &trainer.store, src, &bench.test, cfg.seed).unwrap();
    evaluate_predictions(&preds, &bench.test, AlignmentMode::MedianScaleShift, None, &cfg.loss, cfg.seed).unwrap().into()
}

fn uniform_run(bench: &Bench, fusion: bool, lambda: f64, seed: u64) -> RunResult {
    let mut cfg = run_config(fusion, lambda, seed);
    cfg.sparsify = Some(SparsifyConfig { density: 0.01, pattern: SparsityPattern::Uniform });
    let items = build_train_items(&bench.train, &cfg).unwrap();
    let r = train_and_eval(bench, &cfg, &items);
    eprintln!(
        "  fusion={fusion} lambda={lambda} seed={seed}: delta1 {:.4} rmse {:.4} abnormal {}",
        r.delta1, r.rmse, r.abnormal
    );
    r
}

// 7

fn fusion_helps(bench: &Bench, fused: &[RunResult]) -> Outcome {
    let base: Vec<RunResult> = SEEDS.iter().map(|&s| uniform_run(bench, false, 0.0, s)).collect();
    let med = |r: &[RunResult], f: fn(&RunResult) -> f64| median(r.iter().map(f).collect());
    let (fd, fr) = (med(fused, |r| r.delta1), med(fused, |r| r.rmse));
    let (bd, br) = (med(&base, |r| r.delta1), med(&base, |r| r.rmse));
    outcome(
        fd > bd && fr < br,
        format!("1% uniform, 3 seeds, median delta1 fused {fd:.4} vs baseline {bd:.4}, RMSE {fr:.4} vs {br:.4}"),
    )
}

// 8

fn integrality_helps(bench: &Bench, without: &[RunResult]) -> Outcome {
    let with: Vec<RunResult> = SEEDS.iter().map(|&s| uniform_run(bench, true, 0.1, s)).collect();
    let a0 = median(without.iter().map(|r| r.abnormal as f64).collect());
    let a1 = median(with.iter().map(|r| r.abnormal as f64).collect());
    let d0 = median(without.iter().map(|r| r.delta1).collect());
    let d1 = median(with.iter().map(|r| r.delta1).collect());
    let reduction = if a0 > 0.0 { 1.0 - a1 / a0 } else { 0.0 };
    let drop = d0 - d1;
    outcome(
        reduction >= 0.2 && drop <= 0.005,
        format!(
            "median abnormal pixels {a0:.0} -> {a1:.0} (reduction {:.1}%, min 20%), delta1 {d0:.4} -> {d1:.4} (drop {drop:.4}, max 0.005)",
            100.0 * reduction
        ),
    )
}

// 9

fn density_sweep(bench: &Bench) -> Outcome {
    const BASE: f64 = 0.0185;
    let fractions = [1.0, 0.5, 0.25, 0.1];
    let mut degradation = [0.0; 2];
    let mut lines = Vec::new();
    for (m, fusion) in [true, false].into_iter().enumerate() {
        let mut per_seed = Vec::new();
        for &seed in &SEEDS {
            let cfg = run_config(fusion, 0.0, seed);
            let mut d1 = Vec::new();
            for &f in &fractions {
                let items: Vec<TrainItem> = bench
                    .train
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let base = sparsify(&s.depth, BASE, SparsityPattern::Uniform, derive_seed(seed, &[tags::SPARSIFY, i as u64])).unwrap();
                        let gt = if f < 1.0 {
                            sparsify(&base, f * BASE, SparsityPattern::Uniform, derive_seed(seed, &[tags::SPARSIFY, i as u64, 1])).unwrap()
                        } else {
                            base
                        };
                        TrainItem::new(s, gt, &cfg.loss, derive_seed(seed, &[tags::KMEANS, i as u64])).unwrap()
                    })
                    .collect();
                let r = train_and_eval(bench, &cfg, &items);
                eprintln!("  fusion={fusion} seed={seed} fraction={f}: delta1 {:.4}", r.delta1);
                d1.push(r.delta1);
            }
            per_seed.push(d1);
        }
        let at = |k: usize| median(per_seed.iter().map(|d| d[k]).collect());
        degradation[m] = at(0) - at(3);
        lines.push(format!(
            "{} {}",
            if fusion { "fused" } else { "baseline" },
            (0..4).map(|k| format!("{:.4}", at(k))).collect::<Vec<_>>().join("/")
        ));
    }
    outcome(
        degradation[0] < degradation[1],
        format!(
            "median delta1 at 100/50/25/10% of 1.85%: {}; degradation fused {:.4} vs baseline {:.4}",
            lines.join(", "),
            degradation[0],
            degradation[1]
        ),
    )
}

// 10

fn feature_coherence(bench: &Bench) -> Outcome {
    let t0 = Instant::now();
    let taps = RunConfig::default().taps;
    let noisy: Vec<FeatureTap> = taps.iter().filter(|t| t.step == 150).copied().collect();
    let clean: Vec<FeatureTap> = noisy.iter().map(|t| FeatureTap { step: 0, ..*t }).collect();
    let src = &bench.source;
    let mean_area = |taps: &[FeatureTap], img, seed| {
        let maps = feature_cluster_maps(&src.net, &src.store, &bench.sched, img, taps, 5, seed).unwrap();
        maps.iter().map(|m| m.stats.mean_area).sum::<f64>() / maps.len() as f64
    };
    let mut wins = 0;
    for (i, s) in bench.test.iter().enumerate() {
        if mean_area(&noisy, &s.image, i as u64) > mean_area(&clean, &s.image, i as u64) {
            wins += 1;
        }
    }
    let el = t0.elapsed();
    let blocks: Vec<String> = noisy.iter().map(|t| t.block.to_string()).collect();
    let need = (0.7 * bench.test.len() as f64).ceil() as usize;
    outcome(
        wins >= need && within(el, 300) && !noisy.is_empty() && noisy.iter().all(|t| t.target_scale == FeatureScale::Eighth),
        format!(
            "k=5, blocks {} at 1/8: larger mean component at t=150 than t=0 on {wins}/{} images (need {need}), {:.0}s (limit 300s)",
            blocks.join(","),
            bench.test.len(),
            el.as_secs_f64()
        ),
    )
}

// 11

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_diffdepth")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn cli_run(root: &Path, tag: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let dir = root.join(tag);
    let data = dir.join("data");
    cli(&["synth-data", "--out", &s(&data), "--train", "4", "--test", "2", "--size", "32", "--seed", "3"])?;
    let thin = dir.join("thin");
    cli(&["sparsify", "--dataset", &s(&data), "--density", "0.02", "--pattern", "uniform", "--seed", "3", "--out", &s(&thin)])?;
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "dataset": thin,
            "noise": {"steps": 4, "batch_size": 2},
            "depth": {"steps": 3, "batch_size": 2},
        })
        .to_string(),
    )
    .map_err(|e| e.to_string())?;
    let noise = dir.join("noise");
    cli(&["train-noise", "--config", &s(&config), "--out", &s(&noise), "--seed", "5"])?;
    let stage1 = noise.join("noise.ckpt");
    let depth = dir.join("depth");
    cli(&["train-depth", "--config", &s(&config), "--out", &s(&depth), "--stage1", &s(&stage1), "--seed", "5"])?;
    let eval = dir.join("eval");
    cli(&["eval", "--checkpoint", &s(&depth.join("depth.ckpt")), "--dataset", &s(&thin), "--out", &s(&eval)])?;
    let viz = dir.join("viz");
    cli(&["viz-features", "--checkpoint", &s(&stage1), "--dataset", &s(&data), "--count", "1", "--out", &s(&viz)])?;
    let files = [
        ("synth-data", data.join("manifest.json")),
        ("sparsify", thin.join("manifest.json")),
        ("train-noise", noise.join("summary.json")),
        ("train-noise log", noise.join("log.jsonl")),
        ("train-depth", depth.join("summary.json")),
        ("train-depth log", depth.join("log.jsonl")),
        ("eval", eval.join("metrics.json")),
        ("viz-features", viz.join("components.json")),
    ];
    files
        .into_iter()
        .map(|(name, p)| std::fs::read(&p).map(|b| (name.to_string(), b)).map_err(|e| format!("{}: {e}", p.display())))
        .collect()
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let runs = cli_run(dir.path(), "a").and_then(|a| cli_run(dir.path(), "b").map(|b| (a, b)));
    match runs {
        Err(e) => outcome(false, e),
        Ok((a, b)) => {
            let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
            let names: Vec<&str> = a.iter().map(|x| x.0.as_str()).collect();
            outcome(
                differing.is_empty(),
                if differing.is_empty() {
                    format!("two runs, byte-identical JSON for {}", names.join(", "))
                } else {
                    format!("outputs differ: {}", differing.join(", "))
                },
            )
        }
    }
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("[{}] {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };

    if wanted(1) {
        report(1, "metrics match brute-force oracle", metric_oracle());
    }
    if wanted(2) {
        report(2, "affinity loss is affine invariant", affine_invariance());
    }
    if wanted(3) {
        report(3, "analytic gradients match finite differences", gradient_checks());
    }
    if wanted(4) {
        report(4, "loss worked examples", worked_examples());
    }
    if wanted(5) {
        report(5, "forward noising std", forward_noise_std());
    }
    if (6..=10).any(wanted) {
        let mut bench = train_stage1();
        let o = bench.stage1_outcome.take().unwrap();
        if wanted(6) {
            report(6, "noise predictor training halves the loss", o);
        }
        let needs_fused = wanted(7) || wanted(8);
        let fused: Vec<RunResult> = if needs_fused { SEEDS.iter().map(|&s| uniform_run(&bench, true, 0.0, s)).collect() } else { Vec::new() };
        if wanted(7) {
            report(7, "fusion beats baseline at 1% density", fusion_helps(&bench, &fused));
        }
        if wanted(8) {
            report(8, "integrality loss cuts abnormal pixels", integrality_helps(&bench, &fused));
        }
        if wanted(9) {
            report(9, "fusion degrades less as density falls", density_sweep(&bench));
        }
        if wanted(10) {
            report(10, "noisy-step features form larger components", feature_coherence(&bench));
        }
    }
    if wanted(11) {
        report(11, "CLI verbs are deterministic", cli_determinism());
    }

    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        let ids: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
        println!("failed: {}", ids.join(", "));
    }
}
