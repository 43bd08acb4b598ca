use geoskill::metrics::evaluate;
use geoskill::scene_sim::{apply_perturbation, gen_demo, GenConfig, PerturbationKind, PerturbationSetting, SimWorld};
use geoskill::servo::{closed_loop, ScenePlant, Selector, ServoConfig, ServoMode};
use geoskill::trainer::{train, TrainConfig};
use geoskill::{KernelKind, TrainedKernel32, TrainedKernel64};

fn small(seed: u64) -> GenConfig {
    GenConfig { seed, n_frames: 20, n_distractors: 4, ..GenConfig::default() }
}

#[test]
fn learned_kernel_selects_and_servoes_the_demonstrated_task() {
    let demo = gen_demo::<f64>(&small(2)).unwrap();
    let kernel = train(&demo, KernelKind::P2p, &TrainConfig { epochs: 60, seed: 2, ..TrainConfig::default() }).unwrap();
    assert!(kernel.final_loss() < kernel.initial_loss());

    let held = gen_demo::<f64>(&GenConfig { layout_seed: Some(77), ..small(2) }).unwrap();
    let held =
        apply_perturbation(&held, PerturbationSetting::with_default_magnitude(PerturbationKind::RandomTarget), 5)
            .unwrap();
    let report = evaluate(&held, &kernel).unwrap();
    assert_eq!(report.acc, 100.0);
    assert!(report.con_acc.is_some());

    for mode in [ServoMode::Ibvs, ServoMode::Uvs] {
        let world =
            SimWorld::<f64>::from_config(&GenConfig { layout_seed: Some(78), noise_px: 0.0, ..small(2) }).unwrap();
        let mut plant = ScenePlant::new(world, Selector::Kernel(&kernel));
        let t = closed_loop(&mut plant, &[0.0; 3], &ServoConfig { mode, ..ServoConfig::default() }, None).unwrap();
        assert!(t.converged, "{mode}: {}", t.final_error_norm());
        assert_eq!(plant.last_winner.as_ref().unwrap().id_set(), demo.ground_truth.id_set());
    }
}

#[test]
fn trained_kernel_round_trips_through_json() {
    let demo = gen_demo::<f64>(&small(1)).unwrap();
    let kernel = train(&demo, KernelKind::P2p, &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap();
    let text = serde_json::to_string(&kernel).unwrap();
    let back: TrainedKernel64 = serde_json::from_str(&text).unwrap();
    assert_eq!(back, kernel);
}

#[test]
fn single_precision_pipeline_runs() {
    let demo = gen_demo::<f32>(&small(3)).unwrap();
    let kernel: TrainedKernel32 =
        train(&demo, KernelKind::P2p, &TrainConfig { epochs: 40, seed: 3, ..TrainConfig::default() }).unwrap();
    assert!(kernel.final_loss() < kernel.initial_loss());
    let report = evaluate(&demo, &kernel).unwrap();
    assert!(report.acc >= 90.0, "{}", report.acc);
}
