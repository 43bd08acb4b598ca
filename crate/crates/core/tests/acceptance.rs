//! End-to-end acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line
//! and then asserts. Run with
//! `cargo test --release -p geoskill-core --test acceptance -- --nocapture --test-threads 1`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geoskill::linalg::Matrix;
use geoskill::metrics::{autocorr, evaluate};
use geoskill::neural::{backward, forward, KernelGraph, NetParams};
use geoskill::scene_sim::{apply_perturbation, gen_demo, GenConfig, PerturbationKind, PerturbationSetting, SimWorld};
use geoskill::servo::{broyden_update, closed_loop, LinearPlant, ScenePlant, ServoConfig, ServoMode, Trajectory};
use geoskill::trainer::{loss, train, CandidateSet, TrainConfig, TrainedKernel};
use geoskill::{DemoSequence64, KernelKind};

const PERMUTATION_GRAPHS: usize = 1000;
const PERMUTATION_SPREAD: f64 = 1e-6;
const PERMUTATION_SECS: f64 = 10.0;

const GRADIENT_SEEDS: u64 = 5;
const GRADIENT_REL_TOL: f64 = 1e-4;
const GRADIENT_STEP: f64 = 1e-5;
/// Denominator floor so parameters with vanishing gradient are judged on
/// absolute error.
const GRADIENT_FLOOR: f64 = 1e-5;
const GRADIENT_SECS: f64 = 60.0;

const HELD_OUT_SEEDS: u64 = 5;
const HELD_OUT_MIN_PASSING: usize = 4;
const HELD_OUT_MIN_ACC: f64 = 90.0;
const HELD_OUT_MIN_CON_ACC: f64 = 0.8;
const HELD_OUT_FRAMES: usize = 20;
const HELD_OUT_SECS: f64 = 300.0;
/// Training budget used by every suite that trains a kernel.
const ACCEPTANCE_EPOCHS: usize = 100;

const ABLATION_SEEDS: u64 = 5;
const ABLATION_NOISE_PX: f64 = 3.0;
const ABLATION_GCR: f64 = 0.1;

const PERTURBATION_MIN_ACC: f64 = 80.0;
const FOV_RECOVERY_FRAMES: usize = 2;
const ILLUMINATION_NOISE: f64 = 0.1;

const IBVS_GAIN: f64 = 0.1;
const IBVS_MAX_STEPS: usize = 200;
const IBVS_FINAL_PX: f64 = 1.0;
const SECANT_TOL: f64 = 1e-12;
const UVS_TOL: f64 = 1e-6;
const UVS_MAX_STEPS: usize = 100;

const ORACLE_DEMOS: u64 = 50;

const METRIC_TOL: f64 = 1e-12;
const METRIC_SERIES: usize = 1000;

fn report(name: &str, pass: bool, detail: String) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn groups(kind: KernelKind) -> Vec<usize> {
    match kind {
        KernelKind::P2p => vec![0, 1],
        KernelKind::P2l => vec![0, 1, 1],
        KernelKind::L2l => vec![0, 0, 1, 1],
        KernelKind::P2c => vec![0, 1, 1, 1, 1, 1],
    }
}

fn random_graph(rng: &mut ChaCha8Rng, kind: KernelKind, dim: usize) -> KernelGraph<f64> {
    let grouping = groups(kind);
    let nodes = grouping.iter().map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    KernelGraph::fully_connected(kind, nodes, grouping).unwrap()
}

const KINDS: [KernelKind; 4] = [KernelKind::P2p, KernelKind::P2l, KernelKind::L2l, KernelKind::P2c];

#[test]
fn permutation_invariance() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dim = 18;
    let mut worst = 0.0f64;
    let mut params = NetParams::<f64>::random_dense(dim, 32, 0, 0.3);
    for i in 0..PERMUTATION_GRAPHS {
        if i % 100 == 0 {
            params = NetParams::random_dense(dim, 32, i as u64, 0.3);
        }
        let g = random_graph(&mut rng, KINDS[i % 4], dim);
        let base = forward(&g, &params, 3).unwrap();
        let mut order: Vec<usize> = (0..g.n_nodes()).collect();
        order.shuffle(&mut rng);
        let permuted = forward(&g.permuted(&order), &params, 3).unwrap();
        worst = worst.max((permuted - base).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < PERMUTATION_SPREAD && secs < PERMUTATION_SECS;
    report("permutation invariance", pass, format!("{PERMUTATION_GRAPHS} graphs, max spread {worst:.2e}, {secs:.2}s"));
    assert!(pass);
}

fn rel_err(numeric: f64, exact: f64) -> f64 {
    (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(GRADIENT_FLOOR)
}

/// Largest relative error between `grads` and central differences of `f`.
fn fd_worst(params: &NetParams<f64>, grads: &NetParams<f64>, f: impl Fn(&NetParams<f64>) -> f64) -> f64 {
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for b in 0..params.blocks().len() {
        for k in 0..params.blocks()[b].len() {
            let orig = params.blocks()[b][k];
            probe.blocks_mut()[b][k] = orig + GRADIENT_STEP;
            let up = f(&probe);
            probe.blocks_mut()[b][k] = orig - GRADIENT_STEP;
            let down = f(&probe);
            probe.blocks_mut()[b][k] = orig;
            worst = worst.max(rel_err((up - down) / (2.0 * GRADIENT_STEP), grads.blocks()[b][k]));
        }
    }
    worst
}

#[test]
fn gradient_check() {
    let start = Instant::now();
    let (dim, hidden, layers) = (18, 8, 3);
    let mut readout_worst = 0.0f64;
    let mut loss_worst = 0.0f64;
    for seed in 0..GRADIENT_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let params = NetParams::<f64>::random_dense(dim, hidden, seed, 0.5);
        let g = random_graph(&mut rng, KINDS[seed as usize % 4], dim);
        let grads = backward(&g, &params, layers, 1.0).unwrap();
        readout_worst = readout_worst.max(fd_worst(&params, &grads, |p| forward(&g, p, layers).unwrap()));

        let demo = gen_demo::<f64>(&GenConfig { seed, n_frames: 6, n_distractors: 3, ..GenConfig::default() }).unwrap();
        let set = CandidateSet::from_frames(&demo.frames, KernelKind::P2p, 1.0, 1.0).unwrap();
        let cfg = TrainConfig { alpha_gcr: 0.1, alpha_rsw: 0.1, hidden, layers, ..TrainConfig::default() };
        let mut grads = params.zeros_like();
        loss(&set, &params, &cfg, Some(&mut grads)).unwrap();
        loss_worst = loss_worst.max(fd_worst(&params, &grads, |p| loss(&set, p, &cfg, None).unwrap().loss));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = readout_worst < GRADIENT_REL_TOL && loss_worst < GRADIENT_REL_TOL && secs < GRADIENT_SECS;
    report(
        "gradient check",
        pass,
        format!("{GRADIENT_SEEDS} seeds, readout max rel {readout_worst:.2e}, full loss max rel {loss_worst:.2e}, {secs:.1}s"),
    );
    assert!(pass);
}

fn train_p2p(demo: &DemoSequence64, seed: u64, alpha_gcr: f64) -> TrainedKernel<f64> {
    let cfg = TrainConfig { seed, epochs: ACCEPTANCE_EPOCHS, alpha_gcr, ..TrainConfig::default() };
    train(demo, KernelKind::P2p, &cfg).unwrap()
}

/// Fresh distractor layout and object path, target moved.
fn held_out_demo(seed: u64, n_frames: usize, noise_px: f64) -> DemoSequence64 {
    let cfg = GenConfig { seed, layout_seed: Some(seed + 1000), n_frames, noise_px, ..GenConfig::default() };
    let demo = gen_demo::<f64>(&cfg).unwrap();
    apply_perturbation(&demo, PerturbationSetting::with_default_magnitude(PerturbationKind::RandomTarget), seed)
        .unwrap()
}

#[test]
fn held_out_generalization() {
    let start = Instant::now();
    let mut passing = 0;
    let mut details = Vec::new();
    for seed in 0..HELD_OUT_SEEDS {
        let demo = gen_demo::<f64>(&GenConfig { seed, ..GenConfig::default() }).unwrap();
        let kernel = train_p2p(&demo, seed, ABLATION_GCR);
        let report = evaluate(&held_out_demo(seed, HELD_OUT_FRAMES, 0.5), &kernel).unwrap();
        let con_acc = report.con_acc.unwrap_or(f64::NAN);
        let ok = report.acc >= HELD_OUT_MIN_ACC
            && con_acc >= HELD_OUT_MIN_CON_ACC
            && kernel.final_loss() < kernel.initial_loss();
        passing += usize::from(ok);
        details.push(format!("seed {seed} acc {:.1} conAcc {con_acc:.3}", report.acc));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = passing >= HELD_OUT_MIN_PASSING && secs < HELD_OUT_SECS;
    report(
        "held-out generalization",
        pass,
        format!("{passing}/{HELD_OUT_SEEDS} seeds pass ({}), {secs:.0}s", details.join("; ")),
    );
    assert!(pass);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_sq_jump(norms: &[f64]) -> f64 {
    norms.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (norms.len() - 1) as f64
}

#[test]
fn gcr_ablation() {
    let (mut con_with, mut con_without) = (Vec::new(), Vec::new());
    let (mut jump_with, mut jump_without) = (0.0, 0.0);
    for seed in 0..ABLATION_SEEDS {
        let demo = gen_demo::<f64>(&GenConfig { seed, noise_px: ABLATION_NOISE_PX, ..GenConfig::default() }).unwrap();
        let eval = held_out_demo(seed, GenConfig::default().n_frames, ABLATION_NOISE_PX);
        for (alpha, con, jump) in
            [(ABLATION_GCR, &mut con_with, &mut jump_with), (0.0, &mut con_without, &mut jump_without)]
        {
            let r = evaluate(&eval, &train_p2p(&demo, seed, alpha)).unwrap();
            con.push(r.con_acc.unwrap_or(f64::NAN));
            *jump += mean_sq_jump(&r.error_norms()) / ABLATION_SEEDS as f64;
        }
    }
    let (med_with, med_without) = (median(con_with), median(con_without));
    let pass = med_with >= med_without && jump_with < jump_without;
    report(
        "gcr ablation",
        pass,
        format!(
            "median conAcc {med_with:.4} with vs {med_without:.4} without; mean sq jump {jump_with:.4} vs {jump_without:.4} px^2"
        ),
    );
    assert!(pass);
}

#[test]
fn perturbation_battery() {
    let seed = 0;
    let demo = gen_demo::<f64>(&GenConfig { seed, ..GenConfig::default() }).unwrap();
    let kernel = train_p2p(&demo, seed, ABLATION_GCR);
    let base = gen_demo::<f64>(&GenConfig { seed, layout_seed: Some(seed + 1000), ..GenConfig::default() }).unwrap();
    let mut pass = true;
    let mut details = Vec::new();
    for kind in [PerturbationKind::RandomTarget, PerturbationKind::ChangeCamera, PerturbationKind::Occlusion] {
        let demo = apply_perturbation(&base, PerturbationSetting::with_default_magnitude(kind), seed).unwrap();
        let acc = evaluate(&demo, &kernel).unwrap().acc_visible.unwrap_or(0.0);
        pass &= acc >= PERTURBATION_MIN_ACC;
        details.push(format!("{kind} {acc:.1}%"));
    }

    let fov =
        apply_perturbation(&base, PerturbationSetting::with_default_magnitude(PerturbationKind::OutsideFov), seed)
            .unwrap();
    let r = evaluate(&fov, &kernel).unwrap();
    let reappear: Vec<usize> =
        (1..r.frames.len()).filter(|&t| r.frames[t].task_visible && !r.frames[t - 1].task_visible).collect();
    let recovered = reappear
        .iter()
        .all(|&t| r.frames[t..(t + FOV_RECOVERY_FRAMES + 1).min(r.frames.len())].iter().any(|f| f.correct));
    pass &= !reappear.is_empty() && recovered;
    details.push(format!("outside_fov {} reappearance(s) recovered {recovered}", reappear.len()));

    let lit = apply_perturbation(
        &base,
        PerturbationSetting::new(PerturbationKind::ChangeIllumination, ILLUMINATION_NOISE),
        seed,
    )
    .unwrap();
    details.push(format!("change_illumination {:.1}% (reported only)", evaluate(&lit, &kernel).unwrap().acc));

    report("perturbation battery", pass, details.join(", "));
    assert!(pass);
}

/// Replays the Broyden updates `closed_loop` applied and returns the worst
/// secant residual `|J' dq - de|` relative to `max(1, |de|)`.
fn secant_worst(traj: &Trajectory<f64>, initial_error: &[f64], mut j: Matrix<f64>) -> (f64, usize) {
    let mut q = traj.initial_q.clone();
    let mut e = initial_error.to_vec();
    let (mut worst, mut updates) = (0.0f64, 0);
    for s in &traj.steps {
        let dq: Vec<f64> = s.q.iter().zip(&q).map(|(a, b)| a - b).collect();
        let de: Vec<f64> = s.error.iter().zip(&e).map(|(a, b)| a - b).collect();
        if dq.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-12 {
            j = broyden_update(&j, &dq, &de).unwrap();
            let jdq = j.mul_vec(&dq).unwrap();
            let resid = jdq.iter().zip(&de).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = de.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            worst = worst.max(resid / scale);
            updates += 1;
        }
        q = s.q.clone();
        e = s.error.clone();
    }
    (worst, updates)
}

#[test]
fn servo_convergence() {
    let world = SimWorld::<f64>::from_config(&GenConfig { noise_px: 0.0, ..GenConfig::default() }).unwrap();
    let mut plant = ScenePlant::ground_truth(world);
    let cfg = ServoConfig {
        gain: IBVS_GAIN,
        max_steps: IBVS_MAX_STEPS,
        tol: IBVS_FINAL_PX,
        mode: ServoMode::Ibvs,
        ..ServoConfig::default()
    };
    let t = closed_loop(&mut plant, &[0.0; 3], &cfg, None).unwrap();
    let norms = t.error_norms();
    let monotone = norms.windows(2).all(|w| w[1] < w[0]);
    let ibvs_ok = monotone && t.final_error_norm() < IBVS_FINAL_PX && t.steps.len() <= IBVS_MAX_STEPS;

    let uvs = ServoConfig {
        mode: ServoMode::Uvs,
        gain: 1.0,
        tol: UVS_TOL,
        max_steps: UVS_MAX_STEPS,
        damping: 0.0,
        min_update: 0.0,
        ..ServoConfig::default()
    };
    let mut linear =
        LinearPlant { a: Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap(), c: vec![2.0, 2.0] };
    let lt = closed_loop(&mut linear, &[0.0, 0.0], &uvs, Some(Matrix::identity(2))).unwrap();
    let uvs_ok = lt.converged && lt.final_error_norm() < UVS_TOL && lt.steps.len() <= UVS_MAX_STEPS;
    let (mut secant, mut updates) = secant_worst(&lt, &[-2.0, -2.0], Matrix::identity(2));

    // A coupled plant needs several updates before the estimate settles.
    let a = Matrix::from_rows(&[vec![1.5, 0.4, -0.2], vec![-0.3, 0.8, 0.5], vec![0.2, -0.6, 1.2]]).unwrap();
    let c = vec![0.7, -1.1, 0.4];
    let mut coupled = LinearPlant { a, c: c.clone() };
    let slow = ServoConfig { gain: 0.5, ..uvs.clone() };
    let ct = closed_loop(&mut coupled, &[0.0; 3], &slow, Some(Matrix::identity(3))).unwrap();
    let e0: Vec<f64> = c.iter().map(|x| -x).collect();
    let (s2, u2) = secant_worst(&ct, &e0, Matrix::identity(3));
    secant = secant.max(s2);
    updates += u2;
    let secant_ok = secant <= SECANT_TOL && updates > 0;

    let pass = ibvs_ok && uvs_ok && secant_ok;
    report(
        "servo convergence",
        pass,
        format!(
            "IBVS {:.1} -> {:.3} px in {} steps (monotone {monotone}); UVS linear {:.1e} in {} steps; secant residual {secant:.1e} over {updates} updates",
            t.initial_error_norm,
            t.final_error_norm(),
            t.steps.len(),
            lt.final_error_norm(),
            lt.steps.len(),
        ),
    );
    assert!(pass);
}

#[test]
fn observational_expert_oracle() {
    let mut hits = 0;
    for seed in 0..ORACLE_DEMOS {
        let demo = gen_demo::<f64>(&GenConfig { seed: 5000 + seed, noise_px: 0.0, ..GenConfig::default() }).unwrap();
        let set = CandidateSet::from_frames(&demo.frames, KernelKind::P2p, 1.0, 1.0).unwrap();
        let best = set.trainable().max_by(|a, b| a.quality.unwrap().total_cmp(&b.quality.unwrap())).unwrap();
        hits += usize::from(best.association.id_set() == demo.ground_truth.id_set());
    }
    let pass = hits == ORACLE_DEMOS as usize;
    report("observational expert oracle", pass, format!("{hits}/{ORACLE_DEMOS} demos"));
    assert!(pass);
}

#[test]
fn metrics_oracle() {
    let example: f64 = autocorr(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2).unwrap().unwrap();
    let example_err = (example - 1.0 / 17.5).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..METRIC_SERIES {
        let n = rng.random_range(4..60);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let lag = rng.random_range(1..4);
        let Some(r) = autocorr(&x, lag).unwrap() else { continue };
        let shift = rng.random_range(-1e3..1e3);
        let scale = rng.random_range(0.01..100.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * scale).collect();
        worst = worst.max((autocorr(&shifted, lag).unwrap().unwrap() - r).abs());
        worst = worst.max((autocorr(&scaled, lag).unwrap().unwrap() - r).abs());
    }
    let pass = example_err < METRIC_TOL && worst < METRIC_TOL;
    report(
        "metrics oracle",
        pass,
        format!("lag-2 example error {example_err:.1e}; {METRIC_SERIES} series, worst invariance gap {worst:.1e}"),
    );
    assert!(pass);
}
