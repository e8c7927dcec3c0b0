//! `pnode` command-line interface: dataset generation, training, evaluation
//! and the mode comparison matrix.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pnode_core::config::ExperimentConfig;
use pnode_core::dataset::{self, generate_dataset_with, Dataset};
use pnode_core::experiment::{
    compare, compare_csv, default_modes, evaluate, EvalReport, ModeRun, TrajectoryTable,
    SWEEP_GAMMAS,
};
use pnode_core::model::{Architecture, Checkpoint, MlpDynamics};
use pnode_core::systems::make_system;
use pnode_core::training::{loss_history_csv, train, TrainingMode};
use pnode_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "pnode",
    version,
    about = "Neural ODEs with manifold projection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the true dynamics from sampled initial conditions.
    Generate(GenerateArgs),
    /// Fit a model; writes checkpoint.json, loss.csv and config.toml.
    Train(TrainArgs),
    /// Roll a checkpoint out on fresh initial conditions; writes
    /// report.json and trajectories.csv.
    Evaluate(EvaluateArgs),
    /// Train and evaluate every mode of the comparison matrix; writes
    /// compare.csv.
    Compare(CompareArgs),
    /// Train and evaluate the stabilized model for each sweep gamma; writes
    /// sweep_gamma.csv.
    SweepGamma(CompareArgs),
}

#[derive(Args)]
struct Shared {
    /// Experiment config file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads (all cores if unset).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    shared: Shared,
    /// Number of trajectories.
    #[arg(long)]
    n: Option<usize>,
    /// Final time; defaults to the system's training horizon.
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Number of training trajectories when generating data.
    #[arg(long)]
    n: Option<usize>,
    /// Integrator step size.
    #[arg(long)]
    h: Option<f64>,
    /// Train on this dataset file instead of generating one.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lbfgs_iterations: Option<usize>,
    /// Write zero wall times so outputs depend only on the inputs.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Inference mode; defaults to the checkpoint's training mode.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Number of evaluation trajectories.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Skip the timed inference pass; the report's timing field is null.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    shared: Shared,
    /// Number of training trajectories.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_eval: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lbfgs_iterations: Option<usize>,
    /// Comma-separated modes, e.g. `node,snode:0.5,pnode_fast`.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    #[arg(long)]
    no_timing: bool,
}

fn load_config(shared: &Shared) -> Result<ExperimentConfig> {
    let mut cfg = match &shared.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &shared.system {
        cfg.system = s.clone();
    }
    if let Some(seed) = shared.seed {
        cfg.seed = seed;
    }
    if shared.threads.is_some() {
        cfg.threads = shared.threads;
    }
    Ok(cfg)
}

fn setup(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(out_dir)?;
    Ok(())
}

fn training_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let system = cfg.system()?;
    generate_dataset_with(
        &system,
        cfg.n_trajectories,
        cfg.seed,
        system.train_end,
        dataset::H_REF,
        dataset::SAVE_EVERY,
    )
}

fn write(path: PathBuf, contents: &str) -> Result<()> {
    std::fs::write(&path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_generate(args: GenerateArgs) -> Result<()> {
    let mut cfg = load_config(&args.shared)?;
    if let Some(n) = args.n {
        cfg.n_trajectories = n;
    }
    cfg.validate()?;
    setup(&cfg, &args.shared.out_dir)?;
    let system = cfg.system()?;
    let t_end = args.horizon.unwrap_or(system.train_end);
    let data = generate_dataset_with(
        &system,
        cfg.n_trajectories,
        cfg.seed,
        t_end,
        dataset::H_REF,
        dataset::SAVE_EVERY,
    )?;
    write(
        args.shared.out_dir.join("dataset.csv"),
        &dataset::to_text(&data),
    )
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.shared)?;
    if let Some(m) = &args.mode {
        cfg.mode = m.clone();
        cfg.gamma = None;
    }
    if args.gamma.is_some() {
        cfg.gamma = args.gamma;
    }
    if let Some(n) = args.n {
        cfg.n_trajectories = n;
    }
    if let Some(h) = args.h {
        cfg.train.step_size = h;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(i) = args.lbfgs_iterations {
        cfg.train.lbfgs.max_iterations = i;
    }
    let data = match &args.dataset {
        Some(path) => {
            let data = dataset::load(path)?;
            if args
                .shared
                .system
                .as_deref()
                .is_some_and(|s| s != data.system.name())
            {
                return Err(Error::InvalidArgument(format!(
                    "--system disagrees with dataset system {}",
                    data.system
                )));
            }
            cfg.system = data.system.name().to_string();
            cfg.params = data.params;
            cfg.n_trajectories = data.trajectories.len();
            cfg.seed = data.seed;
            data
        }
        None => training_data(&cfg)?,
    };
    cfg.validate()?;
    setup(&cfg, &args.shared.out_dir)?;
    let system = cfg.system()?;
    let mode = cfg.training_mode()?;
    let arch = Architecture::for_system(&system, &cfg.hidden)?;
    let init = MlpDynamics::init(arch, cfg.model_seed);
    let out = train(&init, &data, &cfg.train_config()?)?;
    let dir = &args.shared.out_dir;
    let ck = Checkpoint::new(system.name(), mode.name(), mode.gamma(), out.model);
    write(dir.join("checkpoint.json"), &(ck.to_json() + "\n"))?;
    write(
        dir.join("loss.csv"),
        &loss_history_csv(&out.history, !args.no_timing),
    )?;
    write(dir.join("config.toml"), &cfg.to_toml())?;
    if let Some(last) = out.history.last() {
        println!("final loss {:e} ({} records)", last.loss, out.history.len());
    }
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg = load_config(&args.shared)?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    if args
        .shared
        .system
        .as_deref()
        .is_some_and(|s| s != ck.system)
    {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint was trained on {}",
            ck.system
        )));
    }
    cfg.system = ck.system.clone();
    let mode = match &args.mode {
        Some(m) => TrainingMode::parse(m, args.gamma)?,
        None => TrainingMode::parse(&ck.mode, args.gamma.or(ck.gamma))?,
    };
    if let Some(seed) = args.shared.seed {
        cfg.eval.seed = seed;
    }
    if let Some(n) = args.n {
        cfg.eval.n_eval = n;
    }
    if let Some(h) = args.h {
        cfg.eval.step_size = h;
    }
    if args.horizon.is_some() {
        cfg.eval.horizon = args.horizon;
    }
    if args.no_timing {
        cfg.eval.timing = false;
    }
    setup(&cfg, &args.shared.out_dir)?;
    let system = make_system(&cfg.system, cfg.params)?;
    let expected = Architecture::for_system(
        &system,
        &ck.model.arch.widths[1..ck.model.arch.widths.len() - 1],
    )?;
    if expected != ck.model.arch {
        return Err(Error::CheckpointMismatch(format!(
            "architecture does not fit system {}",
            system.name()
        )));
    }
    let eval = evaluate(&ck.model, &system, mode, &cfg.eval)?;
    let dir = &args.shared.out_dir;
    write(dir.join("report.json"), &eval.report.to_json())?;
    write(
        dir.join("trajectories.csv"),
        &TrajectoryTable::from_evaluation(&eval).to_csv(),
    )?;
    print_summary(&eval.report);
    Ok(())
}

fn print_summary(r: &EvalReport) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3e}"));
    println!(
        "{} {}: rel_err {} constraint_err {} diverged {}",
        r.system,
        r.mode,
        fmt(r.mean_rel_state_error),
        fmt(r.mean_sq_constraint_error),
        r.diverged
    );
}

fn run_matrix(args: CompareArgs, sweep: bool) -> Result<()> {
    let mut cfg = load_config(&args.shared)?;
    if let Some(n) = args.n {
        cfg.n_trajectories = n;
    }
    if let Some(n) = args.n_eval {
        cfg.eval.n_eval = n;
    }
    if let Some(h) = args.h {
        cfg.train.step_size = h;
        cfg.eval.step_size = h;
    }
    if args.horizon.is_some() {
        cfg.eval.horizon = args.horizon;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(i) = args.lbfgs_iterations {
        cfg.train.lbfgs.max_iterations = i;
    }
    if args.no_timing {
        cfg.eval.timing = false;
    }
    cfg.validate()?;
    setup(&cfg, &args.shared.out_dir)?;
    let modes = if sweep {
        SWEEP_GAMMAS
            .iter()
            .map(|g| TrainingMode::Snode { gamma: *g })
            .collect()
    } else {
        match &args.modes {
            Some(list) => list
                .iter()
                .map(|m| m.parse())
                .collect::<Result<Vec<TrainingMode>>>()?,
            None => default_modes(),
        }
    };
    let data = training_data(&cfg)?;
    let runs = compare(&cfg.plan()?, &data, &modes)?;
    let dir = &args.shared.out_dir;
    for run in &runs {
        if let Some(model) = &run.model {
            let ck = Checkpoint::new(
                &cfg.system,
                run.mode.name(),
                run.mode.gamma(),
                model.clone(),
            );
            write(
                dir.join(format!("checkpoint_{}.json", label(run))),
                &(ck.to_json() + "\n"),
            )?;
        }
    }
    let rows: Vec<_> = runs.iter().map(|r| r.row.clone()).collect();
    let name = if sweep {
        "sweep_gamma.csv"
    } else {
        "compare.csv"
    };
    write(dir.join(name), &compare_csv(&rows))
}

fn label(run: &ModeRun) -> String {
    match run.mode.gamma() {
        Some(g) => format!("{}_{g}", run.mode.name()),
        None => run.mode.name().to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Compare(a) => run_matrix(a, false),
        Command::SweepGamma(a) => run_matrix(a, true),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
