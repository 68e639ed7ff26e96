use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use objnav::harness::{
    emit_grid, emit_report, generate_episodes, read_episodes, run_ablation_grid, run_benchmark, scene_seeds,
    trace_episode, worker_count, write_episodes, EvalWorld, RunConfig,
};
use objnav::mapping::NUM_CHANNELS;
use objnav::predictor::checkpoint::{load_model, save_model};
use objnav::predictor::data::{DataParams, SnapshotDataset, Split};
use objnav::predictor::metrics::{compare, evaluate, write_csv};
use objnav::predictor::train::{train, TrainParams};
use objnav::predictor::{FeatureSpec, InputMode, PooledPredictor, PredictorModel, TargetPredictor};
use objnav::world::{EpisodeSpec, NUM_TARGETS};
use objnav::Error;

#[derive(Parser)]
#[command(name = "objnav", version, about = "Object-goal navigation with predicted target maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Global,
    Egocrop,
}

#[derive(Subcommand)]
enum Command {
    /// Collect exploration snapshots for predictor training.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        scenes: usize,
        #[arg(long, default_value_t = 20)]
        spawns: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Fit a predictor on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1500)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::Global)]
        mode: Mode,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score a global and an egocentric-crop predictor on validation snapshots.
    EvalPred {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        egocrop: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Evaluate at most this many snapshots (0 = all).
        #[arg(long, default_value_t = 0)]
        limit: usize,
    },
    /// Run the configured agent on the evaluation episodes.
    EvalNav {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Reuse stored episodes instead of generating them.
        #[arg(long)]
        episodes: Option<PathBuf>,
        /// Also write pose/goal traces for the first N episodes.
        #[arg(long, default_value_t = 0)]
        trace: usize,
    },
    /// Run every ablation row on the same episodes.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        episodes: Option<PathBuf>,
    },
    /// Print the configuration as JSON, defaults filled in.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Config problems exit with 2, everything else with 3.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_)) => Failure::Config(e),
            _ => Failure::Runtime(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_global(cfg: &RunConfig) -> Result<Option<PredictorModel>, Failure> {
    if !cfg.flags.use_prediction {
        return Ok(None);
    }
    let Some(path) = &cfg.checkpoint else {
        return Err(Error::Config("use_prediction needs a checkpoint".into()).into());
    };
    let model = load_model(path).with_context(|| format!("loading {}", path.display()))?;
    if model.spec.mode != InputMode::Global || model.channels != NUM_CHANNELS {
        return Err(Error::Config(format!("{} is not a global-context checkpoint", path.display())).into());
    }
    Ok(Some(model))
}

fn episodes_for(cfg: &RunConfig, stored: Option<&Path>, out: &Path) -> Result<(EvalWorld, Vec<EpisodeSpec>), Failure> {
    std::fs::create_dir_all(out)?;
    let (world, specs) = match stored {
        Some(p) => {
            let specs = read_episodes(p).with_context(|| format!("reading {}", p.display()))?;
            let seeds: Vec<u64> = specs.iter().map(|s| s.scene_seed).collect();
            (EvalWorld::build(cfg, &seeds)?, specs)
        }
        None => {
            let world = EvalWorld::build(cfg, &scene_seeds(cfg))?;
            let specs = generate_episodes(cfg, &world)?;
            (world, specs)
        }
    };
    write_episodes(&specs, &out.join("episodes.jsonl"))?;
    Ok((world, specs))
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenData { out, scenes, spawns, seed } => {
            let params = DataParams {
                scenes,
                spawns_per_scene: spawns,
                seed,
                ..DataParams::default()
            };
            let data = SnapshotDataset::generate(&params)?;
            data.save(&out)?;
            println!(
                "{} trajectories, {} train / {} val snapshots -> {}",
                data.trajectories.len(),
                data.items(Split::Train).len(),
                data.items(Split::Val).len(),
                out.display()
            );
        }
        Command::Train { data, out, iters, seed, mode, lr } => {
            let dataset = SnapshotDataset::load(&data)?;
            let mode = match mode {
                Mode::Global => InputMode::Global,
                Mode::Egocrop => InputMode::Egocrop,
            };
            let mut params = TrainParams {
                iterations: iters,
                seed,
                ..TrainParams::default()
            };
            if let Some(lr) = lr {
                params.lr = lr;
            }
            let (model, report) = train(
                FeatureSpec::new(mode),
                NUM_CHANNELS,
                NUM_TARGETS,
                &dataset.view(Split::Train, mode),
                &dataset.view(Split::Val, mode),
                &params,
            )?;
            save_model(&model, &out)?;
            let summary = out.with_extension("train.json");
            std::fs::write(&summary, serde_json::to_string_pretty(&report)? + "\n")?;
            println!(
                "best validation BCE {:.5} at iteration {} -> {}",
                report.best_val_loss,
                report.best_iteration,
                out.display()
            );
        }
        Command::EvalPred { model, egocrop, data, report, limit } => {
            let global = load_model(&model)?;
            let ego = load_model(&egocrop)?;
            let dataset = SnapshotDataset::load(&data)?;
            let items = evaluate(&dataset, &global, &ego, limit)?;
            write_csv(&items, std::fs::File::create(&report)?)?;
            let cmp = compare(&items, 2000, 0);
            std::fs::write(report.with_extension("json"), serde_json::to_string_pretty(&cmp)? + "\n")?;
            println!(
                "{} items: DTO global {:.3} m / egocrop {:.3} m, NLL global {:.4} / egocrop {:.4}",
                cmp.items, cmp.dto_global, cmp.dto_egocrop, cmp.nll_global, cmp.nll_egocrop
            );
        }
        Command::EvalNav { config, out, episodes, trace } => {
            let cfg = load_config(config.as_deref())?;
            let model = load_global(&cfg)?;
            let predictor = model.map(PooledPredictor::new);
            let predictor = predictor.as_ref().map(|p| p as &dyn TargetPredictor);
            let (world, specs) = episodes_for(&cfg, episodes.as_deref(), &out)?;
            let report = run_benchmark("eval", &cfg, &world, &specs, predictor, worker_count())?;
            emit_report(&report, &out)?;
            if trace > 0 {
                let dir = out.join("traces");
                std::fs::create_dir_all(&dir)?;
                for spec in specs.iter().take(trace) {
                    let (_, t) = trace_episode(&cfg, &world, spec, predictor)?;
                    std::fs::write(dir.join(format!("{}.json", spec.episode_id)), serde_json::to_string(&t)?)?;
                }
            }
            println!(
                "{} episodes: success {:.3}, SPL {:.3} -> {}",
                report.count,
                report.success,
                report.spl,
                out.display()
            );
        }
        Command::Ablate { config, out, episodes } => {
            let cfg = load_config(config.as_deref())?;
            let with_prediction = RunConfig {
                flags: objnav::harness::AblationFlags::default(),
                ..cfg.clone()
            };
            let Some(model) = load_global(&with_prediction)? else {
                return Err(Error::Config("ablation needs a checkpoint".into()).into());
            };
            let (world, specs) = episodes_for(&cfg, episodes.as_deref(), &out)?;
            let make = || Box::new(PooledPredictor::new(model.clone())) as Box<dyn TargetPredictor>;
            let reports = run_ablation_grid(&cfg, &world, &specs, &make, worker_count())?;
            emit_grid(&reports, &out)?;
            for r in &reports {
                println!("{:<14} success {:.3}  SPL {:.3}  predictor calls {}", r.name, r.success, r.spl, r.predictor_calls);
            }
        }
        Command::PrintConfig { config } => {
            let cfg = load_config(config.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
    }
    Ok(())
}
