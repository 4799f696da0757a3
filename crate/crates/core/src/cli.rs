//! Command-line front end.
//!
//! Every invocation writes into a fresh run folder under the configured
//! output directory (or `$RKMPC_OUTPUT_ROOT`), together with a `run.json`
//! describing the invocation. Relative `--out` paths land in that folder.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::controllers::ControllerKind;
use crate::error::{Error, Result};
use crate::harness::{
    collect_training_log, compute_metrics, make_controller, run_closed_loop, run_comparison, ModelPair, RunLog,
};
use crate::koopman::{build_dataset, train_lifting, DriveLog, InputKind, KoopmanModel, ResidualDataset};

pub const OUTPUT_ROOT_ENV: &str = "RKMPC_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "rkmpc", version, about = "Residual Koopman MPC for vehicle path tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliController {
    Lmpc,
    Kmpc,
    Rkmpc,
}

impl From<CliController> for ControllerKind {
    fn from(c: CliController) -> Self {
        match c {
            CliController::Lmpc => ControllerKind::Lmpc,
            CliController::Kmpc => ControllerKind::Kmpc,
            CliController::Rkmpc => ControllerKind::Rkmpc,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Residual,
    Absolute,
}

impl From<Mode> for InputKind {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Residual => InputKind::Residual,
            Mode::Absolute => InputKind::Absolute,
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_enum)]
    controller: CliController,
    #[arg(long, default_value_t = 1)]
    laps: usize,
    /// Plant noise seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Track name from the config; the first track by default.
    #[arg(long)]
    track: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one controller in closed loop.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Koopman model; taken from the config or trained on the fly when absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Drive LMPC on the plant and save the log.
    Collect {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        laps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Turn a drive log into a training dataset.
    Preprocess {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Residual)]
        mode: Mode,
    },
    /// Train a lifted linear model on a dataset.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Must agree with the dataset; inferred from it by default.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a saved model in closed loop.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Paired comparison of all configured controllers plus the data sweep.
    Compare {
        #[command(flatten)]
        config: ConfigArg,
        /// Replaces the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Collect { .. } => "collect",
            Command::Preprocess { .. } => "preprocess",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Compare { .. } => "compare",
        }
    }

    fn config(&self) -> &Path {
        match self {
            Command::Simulate { run, .. } | Command::Eval { run, .. } => &run.config.config,
            Command::Collect { config, .. }
            | Command::Preprocess { config, .. }
            | Command::Train { config, .. }
            | Command::Compare { config, .. } => &config.config,
        }
    }
}

#[derive(Debug, Serialize)]
struct RunInfo {
    command: String,
    argv: Vec<String>,
    config: PathBuf,
    version: &'static str,
    started_unix: u64,
    seeds: Vec<u64>,
    outputs: Vec<PathBuf>,
}

struct RunDir {
    dir: PathBuf,
    info: RunInfo,
}

impl RunDir {
    fn create(root: &Path, command: &str, info: RunInfo) -> Result<Self> {
        let stamp = info.started_unix;
        let mut n = 0;
        let dir = loop {
            let d = root.join(format!("{command}-{stamp}-{n:03}"));
            if !d.exists() {
                break d;
            }
            n += 1;
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir, info })
    }

    fn path(&mut self, p: &Path) -> PathBuf {
        let full = if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        };
        if let Some(parent) = full.parent() {
            let _ = std::fs::create_dir_all(parent);
        }
        self.info.outputs.push(full.clone());
        full
    }

    fn finish(&mut self) -> Result<()> {
        let p = self.dir.join("run.json");
        let text = serde_json::to_string_pretty(&self.info).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&p, text).map_err(|e| Error::io(p, e))
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
/// Returns 0 on success, 1 on usage errors and 2 on runtime errors
/// including a diverged single run.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            eprintln!("\n{}", Cli::command().render_long_help());
            return 1;
        }
    };
    let argv = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command, argv: Vec<String>) -> Result<()> {
    let cfg = ExperimentConfig::load(cmd.config())?;
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| cfg.output_dir.clone(), PathBuf::from);
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let info = RunInfo {
        command: cmd.name().into(),
        argv,
        config: cmd.config().to_path_buf(),
        version: env!("CARGO_PKG_VERSION"),
        started_unix,
        seeds: Vec::new(),
        outputs: Vec::new(),
    };
    let mut run = RunDir::create(&root, cmd.name(), info)?;
    let result = execute(cmd, &cfg, &mut run);
    run.finish()?;
    println!("outputs in {}", run.dir.display());
    result
}

fn execute(cmd: Command, cfg: &ExperimentConfig, run: &mut RunDir) -> Result<()> {
    match cmd {
        Command::Simulate { run: args, model } => {
            let model = match model.or_else(|| model_from_config(cfg, args.controller.into())) {
                Some(p) => Some(KoopmanModel::load(p)?),
                None => None,
            };
            single_run(cfg, &args, model, run)
        }
        Command::Eval { run: args, model } => {
            let model = KoopmanModel::load(model)?;
            single_run(cfg, &args, Some(model), run)
        }
        Command::Collect { laps, out, seed, .. } => {
            let seed = seed.unwrap_or(cfg.collection.seed);
            run.info.seeds.push(seed);
            let sc = cfg.scenario(cfg.collection_track())?;
            let log = collect_training_log(&sc, &cfg.controllers.lmpc, laps, seed)?;
            let path = run.path(&out);
            log.save(&path)?;
            println!("{} records from {} laps written to {}", log.len(), laps, path.display());
            Ok(())
        }
        Command::Preprocess { log, out, mode, .. } => {
            let log = DriveLog::load(log)?;
            let ds = build_dataset(&log, &cfg.vehicle, &cfg.preprocess, mode.into())?;
            let path = run.path(&out);
            ds.save(&path)?;
            let s = ds.stats;
            println!(
                "{} samples from {} origins ({} window skips, {} inversion failures) written to {}",
                s.samples,
                s.origins,
                s.window_skips,
                s.inversion_failures,
                path.display()
            );
            Ok(())
        }
        Command::Train {
            dataset,
            out,
            mode,
            seed,
            ..
        } => {
            let ds = ResidualDataset::load(dataset)?;
            if let Some(m) = mode {
                let want: InputKind = m.into();
                if want != ds.kind {
                    return Err(Error::Config(format!(
                        "--mode {want:?} does not match the {:?} dataset",
                        ds.kind
                    )));
                }
            }
            let mut tc = cfg.train;
            if let Some(s) = seed {
                tc.seed = s;
            }
            run.info.seeds.push(tc.seed);
            let model = train_lifting(&ds, &tc)?;
            let path = run.path(&out);
            model.save(&path)?;
            let md = &model.metadata;
            println!(
                "trained on {} samples: loss {:.4e} -> {:.4e}, one-step rmse {:.4e}; written to {}",
                md.samples,
                md.initial_loss,
                md.final_loss,
                md.one_step_rmse,
                path.display()
            );
            Ok(())
        }
        Command::Compare { seed, .. } => {
            let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
            run.info.seeds = seeds.clone();
            let cmp = run_comparison(cfg, &seeds)?;
            cmp.write(&run.dir)?;
            for name in ["report.csv", "report.txt", "sweep.csv", "training_log.csv"] {
                run.info.outputs.push(run.dir.join(name));
            }
            print!("{}", cmp.report.to_table());
            for p in &cmp.sweep {
                let f = |k| {
                    p.metrics(k)
                        .map_or("-".to_string(), |m| format!("{:.4}", m.lateral_error))
                };
                println!(
                    "sweep {:>6}: kmpc {}  rkmpc {}",
                    p.size,
                    f(ControllerKind::Kmpc),
                    f(ControllerKind::Rkmpc)
                );
            }
            Ok(())
        }
    }
}

fn model_from_config(cfg: &ExperimentConfig, kind: ControllerKind) -> Option<PathBuf> {
    match kind {
        ControllerKind::Lmpc => None,
        ControllerKind::Kmpc => cfg.models.absolute.clone(),
        ControllerKind::Rkmpc => cfg.models.residual.clone(),
    }
}

fn required_input(kind: ControllerKind) -> Option<InputKind> {
    match kind {
        ControllerKind::Lmpc => None,
        ControllerKind::Kmpc => Some(InputKind::Absolute),
        ControllerKind::Rkmpc => Some(InputKind::Residual),
    }
}

/// Collects, preprocesses and trains the model a Koopman controller needs.
fn train_on_the_fly(cfg: &ExperimentConfig, kind: InputKind, run: &mut RunDir) -> Result<KoopmanModel> {
    let sc = cfg.scenario(cfg.collection_track())?;
    let log = collect_training_log(&sc, &cfg.controllers.lmpc, cfg.collection.laps, cfg.collection.seed)?;
    let ds = build_dataset(&log, &cfg.vehicle, &cfg.preprocess, kind)?;
    let model = train_lifting(&ds, &cfg.train)?;
    let name = match kind {
        InputKind::Residual => "model_residual.json",
        InputKind::Absolute => "model_absolute.json",
    };
    model.save(run.path(Path::new(name)))?;
    Ok(model)
}

fn single_run(cfg: &ExperimentConfig, args: &RunArgs, model: Option<KoopmanModel>, run: &mut RunDir) -> Result<()> {
    let kind: ControllerKind = args.controller.into();
    let seed = args.seed.unwrap_or(cfg.seeds[0]);
    run.info.seeds.push(seed);
    let spec = match &args.track {
        Some(name) => cfg.track(name)?,
        None => &cfg.tracks[0],
    };
    let models = match required_input(kind) {
        None => None,
        Some(need) => {
            let m = match model {
                Some(m) => m,
                None => train_on_the_fly(cfg, need, run)?,
            };
            if m.kind != need {
                return Err(Error::Model(format!("{kind} needs a {need:?} model, got {:?}", m.kind)));
            }
            Some(ModelPair {
                residual: m.clone(),
                absolute: m,
            })
        }
    };
    let sc = cfg.scenario(spec)?;
    let mpc = *cfg.controllers.get(kind);
    let mut controller = make_controller(kind, mpc, cfg.vehicle, models.as_ref())?;
    let log = run_closed_loop(&sc, controller.as_mut(), args.laps, seed, mpc.horizon)?;
    let path = run.path(Path::new(&format!("{}_{}_s{}.csv", spec.name, kind, seed)));
    log.save(&path)?;
    report_run(&log)?;
    match log.divergence() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn report_run(log: &RunLog) -> Result<()> {
    let m = compute_metrics(log)?;
    println!(
        "{} on {} (seed {}): {:?}, {}/{} laps, {} steps",
        log.meta.controller.map_or("-", |k| k.name()),
        log.meta.track,
        log.meta.seed,
        log.termination,
        log.meta.laps_completed,
        log.meta.laps_requested,
        m.steps
    );
    println!("  lateral error   {:.6} m", m.lateral_error);
    println!("  heading error   {:.6} rad", m.heading_error);
    println!("  steer rate      {:.6} rad/s", m.steer_rate);
    println!(
        "  solve time      {:.3} ms mean, {:.3} ms max",
        m.solve_mean_ms, m.solve_max_ms
    );
    Ok(())
}
