//! `geoskill` command line: generate demonstrations, train kernels, evaluate them
//! and run closed-loop servoing in the simulated scene.

mod artifacts;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use geoskill::metrics::evaluate;
use geoskill::scene_sim::{apply_perturbation, gen_demo, sub_seed, PerturbationKind, SimWorld};
use geoskill::servo::{closed_loop, ScenePlant, Selector, ServoMode};
use geoskill::trainer::{build_candidates, train};
use geoskill::KernelKind;

use artifacts::{
    check_output, read_demo, read_kernel, sibling, write_atomic, write_json, DemoFile, KernelFile, ReportFile,
    ServoFile,
};
use config::{PerturbSection, RunConfig};

/// Seed tag for perturbations derived from a command's `--seed`.
const PERTURB_TAG: u64 = 0x7E27;

#[derive(Parser)]
#[command(name = "geoskill", version, about = "Learn geometric task kernels from one demonstration and servo on them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with [gen], [perturb], [train] and [servo] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic demonstration.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Demo JSON to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        kernel: Option<KernelKind>,
        #[arg(long)]
        perturb: Option<PerturbationKind>,
        #[arg(long, requires = "perturb")]
        magnitude: Option<f64>,
    },
    /// Train a kernel on a demo; writes kernel JSON and a `.loss.csv` beside it.
    Train {
        demo: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Kernel kind; defaults to the demo's own.
        #[arg(long)]
        kernel: Option<KernelKind>,
        #[arg(long)]
        alpha_gcr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a trained kernel on one or more demos.
    Eval {
        #[arg(required = true)]
        demos: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Trained kernel JSON.
        #[arg(long)]
        model: PathBuf,
        /// Directory for `<demo>[.<perturbation>].report.json` and `.frames.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Also score each demo under these perturbations.
        #[arg(long, value_delimiter = ',')]
        perturb: Vec<PerturbationKind>,
    },
    /// Closed-loop servoing in a fresh scene; writes a trajectory CSV and a
    /// `.json` summary beside it.
    Servo {
        #[command(flatten)]
        common: Common,
        /// Trained kernel JSON; without it the simulator's ground truth is servoed.
        /// The scene reuses the training demo's generator settings, and
        /// `--seed` only re-draws the layout.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Kernel kind when servoing the ground truth.
        #[arg(long, conflicts_with = "model")]
        kernel: Option<KernelKind>,
        #[arg(long)]
        mode: Option<ServoMode>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, out, kernel, perturb, magnitude } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                cfg.gen.seed = seed;
            }
            if let Some(kind) = kernel {
                cfg.gen.kernel_kind = kind;
            }
            if let Some(kind) = perturb {
                cfg.perturb = Some(PerturbSection { kind, magnitude });
            }
            cfg.validate()?;
            check_output(&out)?;
            cmd_gen(cfg, &out)
        }
        Command::Train { demo, common, out, kernel, alpha_gcr, epochs } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                cfg.train.seed = seed;
            }
            if let Some(a) = alpha_gcr {
                cfg.train.alpha_gcr = a;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            check_output(&out)?;
            cmd_train(cfg, &demo, kernel, &out)
        }
        Command::Eval { demos, common, model, out, perturb } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if let Some(seed) = common.seed {
                cfg.gen.seed = seed;
            }
            cfg.validate()?;
            if !out.is_dir() {
                bail!("output directory {} does not exist", out.display());
            }
            cmd_eval(cfg, &demos, &model, &out, &perturb)
        }
        Command::Servo { common, model, kernel, mode, max_steps, out } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if let Some(m) = mode {
                cfg.servo.mode = m;
            }
            if let Some(n) = max_steps {
                cfg.servo.max_steps = n;
            }
            if let Some(kind) = kernel {
                cfg.gen.kernel_kind = kind;
            }
            cfg.validate()?;
            check_output(&out)?;
            cmd_servo(cfg, model.as_deref(), common.seed, &out)
        }
    }
}

fn cmd_gen(cfg: RunConfig, out: &Path) -> Result<()> {
    let mut demo = gen_demo::<f64>(&cfg.gen)?;
    if let Some(p) = &cfg.perturb {
        demo = apply_perturbation(&demo, p.setting(), sub_seed(cfg.gen.seed, PERTURB_TAG))?;
    }
    let n_candidates = build_candidates(&demo.frames, cfg.gen.kernel_kind)?.len();
    let n_features = demo.frames.first().map_or(0, Vec::len);
    let n_frames = demo.n_frames();
    write_json(out, &DemoFile { config: cfg, demo })?;
    println!("wrote {}: {n_frames} frames, {n_features} features, {n_candidates} candidates", out.display());
    Ok(())
}

fn cmd_train(cfg: RunConfig, demo_path: &Path, kernel: Option<KernelKind>, out: &Path) -> Result<()> {
    let demo = read_demo(demo_path)?;
    let kind = kernel.unwrap_or(demo.ground_truth.kind);
    let trained = train(&demo, kind, &cfg.train)?;
    let mut csv = Vec::new();
    trained.write_loss_csv(&mut csv)?;
    let loss_path = sibling(out, ".loss.csv");
    write_atomic(&loss_path, &csv)?;
    println!(
        "trained {kind} kernel over {} epochs: loss {:.4} -> {:.4}",
        cfg.train.epochs,
        trained.initial_loss(),
        trained.final_loss()
    );
    let file =
        KernelFile { config: cfg, demo: demo_path.to_path_buf(), demo_gen: demo.config.clone(), kernel: trained };
    write_json(out, &file)?;
    println!("wrote {} and {}", out.display(), loss_path.display());
    Ok(())
}

fn cmd_eval(cfg: RunConfig, demos: &[PathBuf], model: &Path, out: &Path, perturb: &[PerturbationKind]) -> Result<()> {
    let (kernel, _) = read_kernel(model)?;
    let loaded: Vec<_> = demos.iter().map(|p| read_demo(p).map(|d| (p, d))).collect::<Result<_>>()?;
    for (path, demo) in loaded {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "demo".into());
        let mut variants = vec![(None, demo.clone())];
        for &kind in perturb {
            let setting = geoskill::scene_sim::PerturbationSetting::with_default_magnitude(kind);
            let seed = sub_seed(cfg.gen.seed, PERTURB_TAG);
            let perturbed =
                apply_perturbation(&demo, setting, seed).with_context(|| format!("perturbing {}", path.display()))?;
            variants.push((Some(kind), perturbed));
        }
        for (kind, demo) in variants {
            let report = evaluate(&demo, &kernel)?;
            let name = match kind {
                Some(k) => format!("{stem}.{k}"),
                None => stem.clone(),
            };
            let mut csv = Vec::new();
            report.write_csv(&mut csv)?;
            write_atomic(&out.join(format!("{name}.frames.csv")), &csv)?;
            let con = report.con_acc.map_or("n/a".to_string(), |c| format!("{c:.4}"));
            let visible = report.acc_visible.map_or("n/a".to_string(), |a| format!("{a:.1}"));
            println!("{name}: acc {:.1}% (visible {visible}%), conAcc {con}, {} frames", report.acc, report.n_frames);
            let file = ReportFile {
                config: cfg.clone(),
                demo: path.clone(),
                model: model.to_path_buf(),
                perturbation: kind.map(|k| k.to_string()),
                report,
            };
            write_json(&out.join(format!("{name}.report.json")), &file)?;
        }
    }
    Ok(())
}

fn cmd_servo(mut cfg: RunConfig, model: Option<&Path>, layout_seed: Option<u64>, out: &Path) -> Result<()> {
    let loaded = model.map(read_kernel).transpose()?;
    let kernel = match loaded {
        Some((k, demo_gen)) => {
            if let Some(g) = demo_gen {
                cfg.gen = g;
            }
            cfg.gen.kernel_kind = k.kernel_kind;
            Some(k)
        }
        None => None,
    };
    if layout_seed.is_some() {
        cfg.gen.layout_seed = layout_seed;
    }
    let world = SimWorld::<f64>::from_config(&cfg.gen)?;
    let q0 = vec![0.0; world.dof()];
    let mut plant = match &kernel {
        Some(k) => ScenePlant::new(world, Selector::Kernel(k)),
        None => ScenePlant::ground_truth(world),
    };
    let trajectory = closed_loop(&mut plant, &q0, &cfg.servo, None)?;
    let mut csv = Vec::new();
    trajectory.write_csv(&mut csv)?;
    write_atomic(out, &csv)?;
    println!(
        "{} servo: |e| {:.3} -> {:.3} in {} steps, converged {}",
        cfg.servo.mode,
        trajectory.initial_error_norm,
        trajectory.final_error_norm(),
        trajectory.steps.len(),
        trajectory.converged
    );
    let summary = sibling(out, ".json");
    write_json(&summary, &ServoFile { config: cfg, model: model.map(Path::to_path_buf), trajectory })?;
    println!("wrote {} and {}", out.display(), summary.display());
    Ok(())
}
