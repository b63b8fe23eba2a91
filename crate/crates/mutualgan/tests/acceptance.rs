//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion, then asserts it.
//!
//! The toy-convergence and ablation criteria train ten full-size models;
//! expect the whole target to take most of an hour on one core.

mod common;

use std::collections::BTreeSet;
use std::fmt::Display;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mutualgan::checkpoint::{self, CheckpointError};
use mutualgan::config::TrainConfig;
use mutualgan::dataset::synth_dataset;
use mutualgan::eval::{content_preservation_eval, fit_classifier};
use mutualgan::pnm::{self, Image, PnmError};
use mutualgan::train::{checkpoint_path, train_loop};

use mutualgan::core::gradcheck::{self, Kernel};
use mutualgan::core::losses::{
    adv_loss_discriminator, cycle_loss, dis_loss, mi_loss, total_objective, LossComponents, LossWeights,
};
use mutualgan::core::metrics::miou;
use mutualgan::core::networks::{ModelArch, Role};
use mutualgan::core::synth::synth_scene;
use mutualgan::core::training::{
    critic_phase, generator_phase, train_step, StepConfig, TrainState, CRITIC_GROUP, GENERATOR_GROUP,
};
use mutualgan::core::{Graph, Scalar, Tensor};

/// Written straight to the process stderr so the line shows up without
/// `--nocapture`.
fn verdict(id: u32, name: &str, pass: bool, detail: impl Display) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {id} [{tag}] {name}: {detail}");
}

// ---------------------------------------------------------------- 1

#[test]
fn c1_gradient_oracle() {
    let t = Instant::now();
    let results = gradcheck::check_all(20, 20_240_601).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let kernels: BTreeSet<&str> = results.iter().map(|r| r.kernel.name()).collect();
    let pass = failed.is_empty() && kernels.len() == Kernel::ALL.len() && secs < 60.0;
    verdict(
        1,
        "gradient oracle",
        pass,
        format_args!(
            "{} kernels x 20 cases in f64, worst rel err {worst:.2e} (tol {:.0e}), {} failed, {secs:.1}s",
            kernels.len(),
            gradcheck::TOLERANCE,
            failed.len()
        ),
    );
    assert!(pass, "{failed:#?}");
}

// ---------------------------------------------------------------- 2

fn random_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-1.0..1.0)))
}

fn fixed_points<T: Scalar + Into<f64>>(seed: u64) -> Vec<(&'static str, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = [2, 3, 8, 8];
    let mut g = Graph::<T>::new();
    let x_a = g.constant(random_tensor(&mut rng, &img));
    let x_b = g.constant(random_tensor(&mut rng, &img));
    let t = g.constant(random_tensor(&mut rng, &img));
    let s = g.constant(random_tensor(&mut rng, &img));
    let z = g.constant(random_tensor(&mut rng, &[2, 32, 2, 2]));
    let ones = g.constant(Tensor::full(&[2, 1, 4, 4], T::lit(1.0)));
    let zeros = g.constant(Tensor::full(&[2, 1, 4, 4], T::lit(0.0)));
    let half = g.constant(Tensor::full(&[2, 1, 4, 4], T::lit(0.5)));

    let cyc = cycle_loss(&mut g, x_a, x_a, x_b, x_b).unwrap();
    let dis = dis_loss(&mut g, t, t, s, s).unwrap();
    let mi = mi_loss(&mut g, z, z).unwrap();
    let d_exact = adv_loss_discriminator(&mut g, ones, zeros).unwrap();
    let d_half = adv_loss_discriminator(&mut g, half, half).unwrap();
    let val = |v| g.value(v).item().unwrap().into();
    vec![
        ("cycle_loss(x, x)", val(cyc), 0.0),
        ("dis_loss(t, t, s, s)", val(dis), 0.0),
        ("mi_loss(z, z)", val(mi), 0.0),
        ("adv_disc(1, 0)", val(d_exact), 0.0),
        ("adv_disc(0.5, 0.5)", val(d_half), 0.5),
    ]
}

#[test]
fn c2_loss_fixed_points() {
    let mut checks = Vec::new();
    for seed in 0..5 {
        checks.extend(fixed_points::<f32>(seed));
        checks.extend(fixed_points::<f64>(seed));
    }
    let bad: Vec<_> = checks.iter().filter(|(_, got, want)| got != want).collect();
    verdict(2, "loss fixed points", bad.is_empty(), format_args!("{} exact checks, mismatches {bad:?}", checks.len()));
    assert!(bad.is_empty());
}

// ---------------------------------------------------------------- 3

#[test]
fn c3_objective_composition() {
    const DELTA: f64 = 0.125;
    let w = LossWeights::default();
    let coef = [1.0, 1.0, w.alpha, w.w_dis, w.w_dis, w.w_mi, w.w_mi];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for _ in 0..50 {
        let mut base = [0.0f64; 7];
        base.iter_mut().for_each(|v| *v = rng.random_range(0.0..3.0));
        let before = total_objective(&components(base), &w).unwrap().total;
        for (i, c) in coef.iter().enumerate() {
            let mut p = base;
            p[i] += DELTA;
            let after = total_objective(&components(p), &w).unwrap().total;
            worst = worst.max((after - before - c * DELTA).abs());
            checks += 1;
        }
    }
    let pass = worst <= 1e-6;
    verdict(3, "objective composition", pass, format_args!("{checks} perturbations by {DELTA}, worst error {worst:.2e}"));
    assert!(pass);
}

fn components(v: [f64; 7]) -> LossComponents {
    LossComponents { adv_a: v[0], adv_b: v[1], cyc: v[2], dis_ab: v[3], dis_ba: v[4], mi_ab: v[5], mi_ba: v[6] }
}

// ---------------------------------------------------------------- 4

fn scene_batch(seeds: impl Iterator<Item = u64>, domain_b: bool, size: usize) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    for seed in seeds {
        let s = synth_scene(seed, size, size);
        let img = if domain_b { &s.image_b } else { &s.image_a };
        for c in 0..3 {
            data.extend(img.chunks(3).map(|px| px[c] * 2.0 - 1.0));
        }
        n += 1;
    }
    Tensor::new(&[n, 3, size, size], data).unwrap()
}

fn snapshot(state: &TrainState, group: &[Role]) -> Vec<Tensor> {
    group.iter().flat_map(|&r| state.nets.get(r).entries().iter().map(|(_, t)| t.clone())).collect()
}

/// Largest absolute change between two snapshots.
fn drift(a: &[Tensor], b: &[Tensor]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x.max_abs_diff(y).unwrap()).fold(0.0, f32::max)
}

#[test]
fn c4_phase_isolation() {
    let mut state = TrainState::new(ModelArch::default(), 4).unwrap();
    let cfg = StepConfig::default();
    let (mut frozen_drift, mut moved) = (0.0f32, 0usize);
    for step in 0..100u64 {
        let a = scene_batch((0..2).map(|i| 4 * step + i), false, 16);
        let b = scene_batch((2..4).map(|i| 4 * step + i), true, 16);
        let gen0 = snapshot(&state, &GENERATOR_GROUP);
        let critic0 = snapshot(&state, &CRITIC_GROUP);
        let (_, fakes) = generator_phase(&mut state, &a, &b, &cfg).unwrap();
        let gen1 = snapshot(&state, &GENERATOR_GROUP);
        frozen_drift = frozen_drift.max(drift(&critic0, &snapshot(&state, &CRITIC_GROUP)));
        critic_phase(&mut state, &a, &b, &fakes, &cfg).unwrap();
        let critic1 = snapshot(&state, &CRITIC_GROUP);
        frozen_drift = frozen_drift.max(drift(&gen1, &snapshot(&state, &GENERATOR_GROUP)));
        state.step += 1;
        if drift(&gen0, &gen1) > 0.0 && drift(&critic0, &critic1) > 0.0 {
            moved += 1;
        }
    }
    let pass = frozen_drift == 0.0 && moved == 100;
    verdict(
        4,
        "phase isolation",
        pass,
        format_args!("100 steps, max frozen-group drift {frozen_drift:e}, trained group moved in {moved}/100"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

#[test]
fn c5_determinism_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    // 40 scenes -> 32 train images -> 8 steps per epoch at batch 4
    synth_dataset(40, 5, &dir.path().join("data"), 16, 16).unwrap();
    let cfg = |out: &str| TrainConfig {
        dataset: Some(dir.path().join("data/train.txt")),
        epochs: 25,
        seed: 5,
        checkpoint_interval: 100,
        flip: true,
        out_dir: dir.path().join(out),
        ..Default::default()
    };
    let run = |c: &TrainConfig, resume: Option<&Path>| {
        let mut reports = Vec::new();
        let s = train_loop(c, resume, |_, r| reports.push(r.values().map(f64::to_bits))).unwrap();
        (s, reports)
    };
    let (first, rep_first) = run(&cfg("first"), None);
    let (second, rep_second) = run(&cfg("second"), None);
    let log = |p: &Path| std::fs::read_to_string(p).unwrap();
    let same_logs = first.last_step == 200 && log(&first.metrics) == log(&second.metrics) && rep_first == rep_second;

    let (resumed, rep_resumed) = run(&cfg("resumed"), Some(&checkpoint_path(&cfg("first").out_dir, 100)));
    let first_log = log(&first.metrics);
    let resumed_log = log(&resumed.metrics);
    let same_resume = resumed.first_step == 100
        && resumed_log.lines().eq(first_log.lines().skip(100))
        && rep_resumed[..] == rep_first[100..]
        && std::fs::read(&resumed.final_checkpoint).unwrap() == std::fs::read(&first.final_checkpoint).unwrap();
    let pass = same_logs && same_resume;
    verdict(
        5,
        "determinism and resume",
        pass,
        format_args!("two 200-step runs identical: {same_logs}; resume at 100 identical to uninterrupted: {same_resume}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6, 7

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const SCENES: usize = 128;
const SIZE: usize = 32;
// 102 train images / batch 4 = 25 steps per epoch -> 2000 steps
const EPOCHS: u64 = 80;

#[derive(Debug, Clone)]
struct ToyRun {
    seed: u64,
    steps: u64,
    l1: f64,
    l1_baseline: f64,
    miou: f64,
    miou_baseline: f64,
    totals: Vec<f64>,
    secs: f64,
}

fn toy_run(seed: u64, w_mi: f64) -> ToyRun {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(SCENES, seed, &dir.path().join("data"), SIZE, SIZE).unwrap();
    let mut cfg = TrainConfig {
        dataset: Some(dir.path().join("data/train.txt")),
        epochs: EPOCHS,
        seed,
        out_dir: dir.path().join("run"),
        ..Default::default()
    };
    cfg.weights.w_mi = w_mi;
    let t = Instant::now();
    let mut totals = Vec::new();
    let summary = train_loop(&cfg, None, |_, r| totals.push(r.total)).unwrap();
    let state = checkpoint::load(&summary.final_checkpoint).unwrap();
    let classifier = fit_classifier(&data.train).unwrap();
    let report = content_preservation_eval(&state.nets, &data.val, &classifier).unwrap();
    let run = ToyRun {
        seed,
        steps: summary.last_step,
        l1: report.translated.l1,
        l1_baseline: report.baseline.l1,
        miou: report.translated.miou,
        miou_baseline: report.baseline.miou,
        totals,
        secs: t.elapsed().as_secs_f64(),
    };
    let _ = writeln!(
        std::io::stderr(),
        "  seed {seed} w_mi {w_mi}: {} steps, L1 {:.4} (baseline {:.4}), mIoU {:.4} (baseline {:.4}), {:.0}s",
        run.steps,
        run.l1,
        run.l1_baseline,
        run.miou,
        run.miou_baseline,
        run.secs
    );
    run
}

fn full_runs() -> &'static [ToyRun] {
    static RUNS: OnceLock<Vec<ToyRun>> = OnceLock::new();
    RUNS.get_or_init(|| SEEDS.iter().map(|&s| toy_run(s, LossWeights::default().w_mi)).collect())
}

#[test]
fn c6_toy_convergence() {
    let runs = full_runs();
    let good = runs
        .iter()
        .filter(|r| r.l1 <= 0.5 * r.l1_baseline && r.miou >= r.miou_baseline + 0.15)
        .count();
    let slowest = runs.iter().map(|r| r.secs).fold(0.0, f64::max);
    let pass = good >= 4;
    verdict(
        6,
        "toy convergence",
        pass,
        format_args!(
            "{good}/5 seeds with L1 <= 0.5x baseline and mIoU >= baseline + 0.15; L1 ratios {:?}; mIoU gains {:?}; slowest run {slowest:.0}s",
            runs.iter().map(|r| round3(r.l1 / r.l1_baseline)).collect::<Vec<_>>(),
            runs.iter().map(|r| round3(r.miou - r.miou_baseline)).collect::<Vec<_>>(),
        ),
    );
    assert!(pass);
}

#[test]
fn toy_runs_descend() {
    let trailing = |t: &[f64], end: usize| t[end - 20..end].iter().sum::<f64>() / 20.0;
    let ok = full_runs().iter().all(|r| r.steps == 2000 && trailing(&r.totals, 2000) < trailing(&r.totals, 50));
    assert!(ok, "{:?}", full_runs().iter().map(|r| (r.seed, trailing(&r.totals, 50), trailing(&r.totals, 2000))).collect::<Vec<_>>());
}

#[test]
fn c7_ablation_direction() {
    let full = full_runs();
    let ablated: Vec<ToyRun> = SEEDS.iter().map(|&s| toy_run(s, 0.0)).collect();
    let worse = full
        .iter()
        .zip(&ablated)
        .filter(|(f, a)| a.l1 > f.l1 && a.miou < f.miou)
        .count();
    let pass = worse >= 4;
    let per_seed: Vec<String> = full
        .iter()
        .zip(&ablated)
        .map(|(f, a)| format!("seed {}: dL1 {:+.4} dmIoU {:+.4}", f.seed, a.l1 - f.l1, a.miou - f.miou))
        .collect();
    verdict(
        7,
        "ablation direction",
        pass,
        format_args!("w_mi = 0 strictly worse in both metrics in {worse}/5 seeds ({})", per_seed.join("; ")),
    );
    assert!(pass);
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

// ---------------------------------------------------------------- 8

/// Per-image mIoU by explicit pixel-index sets.
fn brute_force_miou(pred: &[u8], gt: &[u8], classes: usize) -> (Vec<Option<f64>>, f64) {
    let set = |m: &[u8], c: usize| -> BTreeSet<usize> { (0..m.len()).filter(|&i| m[i] as usize == c).collect() };
    let per: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let (p, g) = (set(pred, c), set(gt, c));
            let union = p.union(&g).count();
            (union > 0).then(|| p.intersection(&g).count() as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    (per, present.iter().sum::<f64>() / present.len() as f64)
}

#[test]
fn c8_miou_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for _ in 0..100 {
        let classes = rng.random_range(1..=4);
        let n = rng.random_range(1..=8) * rng.random_range(1..=8);
        let pred: Vec<u8> = (0..n).map(|_| rng.random_range(0..classes) as u8).collect();
        let gt: Vec<u8> = (0..n).map(|_| rng.random_range(0..classes) as u8).collect();
        let got = miou(&pred, &gt, classes).unwrap();
        let (per, mean) = brute_force_miou(&pred, &gt, classes);
        if got.per_class != per || got.mean != mean {
            mismatches += 1;
        }
    }
    verdict(8, "mIoU oracle", mismatches == 0, format_args!("100 random mask pairs, {mismatches} mismatches"));
    assert_eq!(mismatches, 0);
}

// ---------------------------------------------------------------- 9

fn trained_state() -> TrainState {
    let mut state = TrainState::new(common::tiny_arch(), 9).unwrap();
    let cfg = StepConfig::default();
    for step in 0..3 {
        let a = scene_batch((0..2).map(|i| 10 * step + i), false, 8);
        let b = scene_batch((5..7).map(|i| 10 * step + i), true, 8);
        train_step(&mut state, &a, &b, &cfg).unwrap();
    }
    state.epoch = 2;
    state.rng.set_stream(3);
    for _ in 0..7 {
        state.rng.next_u32();
    }
    state
}

fn format_checks() -> Vec<(&'static str, bool)> {
    let dir = tempfile::tempdir().unwrap();
    let mut checks = Vec::new();

    let state = trained_state();
    let bytes = checkpoint::encode(&state);
    let decoded = checkpoint::decode(&bytes).unwrap();
    let mut rng_a = state.rng.clone();
    let mut rng_b = decoded.rng.clone();
    checks.push(("checkpoint decode is bit-exact", decoded.bit_eq(&state)));
    checks.push(("checkpoint re-encode is byte-identical", checkpoint::encode(&decoded) == bytes));
    checks.push(("prng continues identically", (0..16).all(|_| rng_a.next_u64() == rng_b.next_u64())));
    let path = dir.path().join("s.ckpt");
    checkpoint::save(&path, &state).unwrap();
    checks.push(("checkpoint file round trip", checkpoint::load(&path).unwrap().bit_eq(&state)));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    checks.push(("bad checkpoint magic", matches!(checkpoint::decode(&bad), Err(CheckpointError::BadMagic(_)))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    checks.push(("bad checkpoint version", matches!(checkpoint::decode(&bad), Err(CheckpointError::Version { .. }))));
    checks.push(("truncated checkpoint header", matches!(checkpoint::decode(&bytes[..6]), Err(CheckpointError::Truncated(_)))));
    checks.push((
        "truncated checkpoint body",
        matches!(checkpoint::decode(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated(_))),
    ));
    std::fs::write(&path, &bytes[..3]).unwrap();
    checks.push(("corrupt checkpoint file", matches!(checkpoint::load(&path), Err(CheckpointError::Truncated(_) | CheckpointError::BadMagic(_)))));

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut images_ok = true;
    for channels in [1, 3] {
        for _ in 0..10 {
            let (w, h) = (rng.random_range(1..=17), rng.random_range(1..=17));
            let img = Image::new(w, h, channels, (0..w * h * channels).map(|_| rng.random()).collect());
            images_ok &= pnm::decode(&pnm::encode(&img).unwrap()).unwrap() == img;
            let p = dir.path().join(if channels == 3 { "i.ppm" } else { "i.pgm" });
            pnm::write(&p, &img).unwrap();
            images_ok &= pnm::read(&p).unwrap() == img;
        }
    }
    checks.push(("ppm/pgm round trip", images_ok));
    checks.push(("bad image magic", matches!(pnm::decode(b"P3\n1 1\n255\n0 0 0"), Err(PnmError::BadMagic(_)))));
    checks.push(("bad image header", matches!(pnm::decode(b"P6\nx 1\n255\n\0\0\0"), Err(PnmError::BadHeader(_)))));
    checks.push(("bad image maxval", matches!(pnm::decode(b"P5\n1 1\n65535\n\0\0"), Err(PnmError::Maxval(_)))));
    checks.push((
        "truncated image",
        matches!(pnm::decode(b"P6\n2 2\n255\n\0\0\0"), Err(PnmError::Truncated { expected: 12, found: 3 })),
    ));
    checks
}

#[test]
fn c9_formats() {
    let checks = format_checks();
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    verdict(9, "formats", failed.is_empty(), format_args!("{} checks, failed {failed:?}", checks.len()));
    assert!(failed.is_empty());
}
