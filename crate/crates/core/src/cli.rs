//! Command-line front end.
//!
//! Every subcommand reads a JSON config, writes its outputs under `--out`,
//! and records a `manifest.json` holding the effective config, seed, planner
//! and crate version. Passing a manifest back as `--config` reruns the same
//! job. Failures print one line `error: category=<name> message=<text>` to
//! stderr and exit with the category's code.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bench::{
    evaluate, generate_scenario, generate_scenarios, render_svg, run_scenario, summary_markdown,
    write_metrics_csv, write_outcomes_jsonl, BenchError, EvalOptions,
};
use crate::domain::{Scenario, WorldConfig};
use crate::env::{read_trajectory, write_trajectory, TrajectoryHeader};
use crate::fmp::FmpConfig;
use crate::hybrid::HybridConfig;
use crate::planner::{Planner, PlannerError};
use crate::policy::{PolicyError, PolicyModel};
use crate::trainer::{train_curriculum_with, write_curves, TrainConfig, TrainError};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "densenav", version, about = "Multi-agent navigation: train, simulate, benchmark, render")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy through the configured curriculum.
    Train(CommonArgs),
    /// Run one scenario and write its trajectory log.
    Simulate(CommonArgs),
    /// Evaluate a planner over random scenarios at several densities.
    Bench(CommonArgs),
    /// Draw a trajectory log as SVG.
    Render(CommonArgs),
    /// Write random scenarios to a file.
    GenScenarios(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run on a single thread.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, value_enum)]
    pub planner: Option<PlannerKind>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Fmp,
    Policy,
    Hybrid,
    Straight,
}

/// Error category and its exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Capacity,
    Model,
    Io,
    Runtime,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Capacity => "capacity",
            Category::Model => "model",
            Category::Io => "io",
            Category::Runtime => "runtime",
        }
    }

    /// Exit 2 is left to argument parsing.
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 3,
            Category::Capacity => 4,
            Category::Model => 5,
            Category::Io => 6,
            Category::Runtime => 7,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    fn new(category: Category, message: impl Into<String>) -> Self {
        CliError { category, message: message.into() }
    }

    /// `error: category=<name> message=<json string>`.
    pub fn line(&self) -> String {
        format!(
            "error: category={} message={}",
            self.category.name(),
            serde_json::to_string(&self.message).expect("strings serialize")
        )
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new(Category::Io, format!("{}: {e}", path.display()))
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        let cat = match e {
            PolicyError::Io(_) => Category::Io,
            _ => Category::Model,
        };
        CliError::new(cat, e.to_string())
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        let cat = match &e {
            BenchError::Capacity { .. } => Category::Capacity,
            BenchError::Model(_) | BenchError::Planner(PlannerError::Policy(_)) => Category::Model,
            BenchError::Invalid(_) | BenchError::Domain(_) => Category::Config,
            _ => Category::Runtime,
        };
        CliError::new(cat, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let cat = match &e {
            TrainError::Config(_) | TrainError::Reward(_) => Category::Config,
            TrainError::Scenario(BenchError::Capacity { .. }) => Category::Capacity,
            TrainError::Policy(_) => Category::Model,
            _ => Category::Runtime,
        };
        CliError::new(cat, e.to_string())
    }
}

/// Snapshot written beside every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub code_version: String,
    pub seed: Option<u64>,
    pub planner: Option<PlannerKind>,
    pub model: Option<PathBuf>,
    pub config: Value,
    pub created_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub world: WorldConfig,
    pub agent_counts: Vec<usize>,
    pub cases: usize,
    pub seed: u64,
    pub fmp: FmpConfig,
    pub hybrid: HybridConfig,
    pub safety_assertions: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            world: WorldConfig::planar(),
            agent_counts: vec![2, 4, 6, 8, 10],
            cases: 50,
            seed: 0,
            fmp: FmpConfig::default(),
            hybrid: HybridConfig::default(),
            safety_assertions: true,
        }
    }
}

/// Either an explicit scenario or a random one drawn from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub scenario: Option<Scenario>,
    pub world: WorldConfig,
    pub agent_count: usize,
    pub seed: u64,
    pub fmp: FmpConfig,
    pub hybrid: HybridConfig,
    pub safety_assertions: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            scenario: None,
            world: WorldConfig::planar(),
            agent_count: 4,
            seed: 0,
            fmp: FmpConfig::default(),
            hybrid: HybridConfig::default(),
            safety_assertions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    /// Trajectory log; relative paths resolve against the config file.
    pub trajectory: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub world: WorldConfig,
    pub agent_count: usize,
    pub cases: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { world: WorldConfig::planar(), agent_count: 4, cases: 50, seed: 0 }
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.category.exit_code()
        }
    }
}

pub fn main_entry() -> i32 {
    run(std::env::args_os())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let (name, args) = match &cli.command {
        Command::Train(a) => ("train", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Bench(a) => ("bench", a),
        Command::Render(a) => ("render", a),
        Command::GenScenarios(a) => ("gen-scenarios", a),
    };
    let threads = if args.deterministic { 1 } else { args.workers.unwrap_or(0) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::new(Category::Runtime, e.to_string()))?;
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    pool.install(|| match &cli.command {
        Command::Train(a) => cmd_train(name, a),
        Command::Simulate(a) => cmd_simulate(name, a),
        Command::Bench(a) => cmd_bench(name, a),
        Command::Render(a) => cmd_render(name, a),
        Command::GenScenarios(a) => cmd_gen(name, a),
    })
}

struct Loaded<C> {
    config: C,
    planner: Option<PlannerKind>,
    model: Option<PathBuf>,
}

/// Reads a config file or a manifest written by the same command. Flags
/// override the manifest's seed, planner and model.
fn load_config<C: DeserializeOwned>(command: &str, args: &CommonArgs) -> Result<Loaded<C>, CliError> {
    let text = fs::read_to_string(&args.config).map_err(|e| io_err(&args.config, e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::new(Category::Config, format!("{}: {e}", args.config.display())))?;
    let (config_value, planner, model) = if value.get("manifest_version").is_some() {
        let m: Manifest = serde_json::from_value(value)
            .map_err(|e| CliError::new(Category::Config, format!("manifest: {e}")))?;
        if m.command != command {
            return Err(CliError::new(
                Category::Config,
                format!("manifest is for `{}`, not `{command}`", m.command),
            ));
        }
        (m.config, m.planner, m.model)
    } else {
        (value, None, None)
    };
    let config: C = serde_json::from_value(config_value)
        .map_err(|e| CliError::new(Category::Config, format!("{}: {e}", args.config.display())))?;
    Ok(Loaded {
        config,
        planner: args.planner.or(planner),
        model: args.model.clone().or(model),
    })
}

fn write_manifest<C: Serialize>(
    command: &str,
    args: &CommonArgs,
    config: &C,
    seed: Option<u64>,
    planner: Option<PlannerKind>,
    model: Option<PathBuf>,
) -> Result<(), CliError> {
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        command: command.to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        planner,
        model,
        config: serde_json::to_value(config).expect("configs serialize"),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    let path = args.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn build_planner(
    kind: PlannerKind,
    model: Option<&Path>,
    fmp: &FmpConfig,
    hybrid: &HybridConfig,
) -> Result<Planner, CliError> {
    let load = || -> Result<PolicyModel, CliError> {
        let path = model.ok_or_else(|| CliError::new(Category::Config, "this planner needs --model"))?;
        Ok(PolicyModel::load(path)?)
    };
    fmp.validate().map_err(|e| CliError::new(Category::Config, e.to_string()))?;
    hybrid.validate().map_err(|e| CliError::new(Category::Config, e.to_string()))?;
    Ok(match kind {
        PlannerKind::Fmp => Planner::Fmp(fmp.clone()),
        PlannerKind::Straight => Planner::StraightLine,
        PlannerKind::Policy => Planner::policy(load()?),
        PlannerKind::Hybrid => {
            let mut cfg = hybrid.clone();
            cfg.fmp = fmp.clone();
            Planner::hybrid(load()?, cfg)
        }
    })
}

fn cmd_train(name: &str, args: &CommonArgs) -> Result<(), CliError> {
    let Loaded { mut config, .. } = load_config::<TrainConfig>(name, args)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    write_manifest(name, args, &config, Some(config.seed), None, None)?;
    let out = &args.out;
    let result = train_curriculum_with(&config, |stage| {
        let path = out.join(format!("checkpoint-stage{}.json", stage.curve.stage));
        stage.model.save(&path)?;
        Ok(())
    });
    let result = match result {
        Ok(r) => r,
        Err(TrainError::Diverged { stage, update, reason, last_good }) => {
            let path = out.join("last_good.json");
            last_good.save(&path)?;
            return Err(CliError::new(
                Category::Runtime,
                format!("training diverged at stage {stage} update {update}: {reason}; last good model at {}", path.display()),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    result.model.save(&out.join("model.json"))?;
    let curves: Vec<_> = result.stages.iter().map(|s| &s.curve).collect();
    let path = out.join("curve.csv");
    write_curves(create(&path)?, &curves).map_err(|e| io_err(&path, e))?;
    Ok(())
}

fn cmd_simulate(name: &str, args: &CommonArgs) -> Result<(), CliError> {
    let Loaded { mut config, planner, model } = load_config::<SimulateConfig>(name, args)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let kind = planner.unwrap_or(PlannerKind::Fmp);
    let scenario = match &config.scenario {
        Some(s) => {
            s.validate().map_err(|e| CliError::new(Category::Config, e.to_string()))?;
            s.clone()
        }
        None => {
            config.world.validate().map_err(|e| CliError::new(Category::Config, e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            generate_scenario(&mut rng, config.agent_count, &config.world, config.seed, "simulate")?
        }
    };
    let planner = build_planner(kind, model.as_deref(), &config.fmp, &config.hybrid)?;
    planner.check_compatible(scenario.world.dimension)?;
    write_manifest(name, args, &config, Some(config.seed), Some(kind), model)?;

    let opts = EvalOptions { record: true, safety_assertions: config.safety_assertions, mode_trace: false };
    let (outcome, records) = run_scenario(&planner, &scenario, 0, opts)?;
    let path = args.out.join("trajectory.jsonl");
    let header = TrajectoryHeader::new(planner.name(), &scenario);
    write_trajectory(create(&path)?, &header, &records).map_err(|e| io_err(&path, e))?;
    let path = args.out.join("outcome.jsonl");
    write_outcomes_jsonl(create(&path)?, &[outcome]).map_err(|e| io_err(&path, e))?;
    Ok(())
}

fn cmd_bench(name: &str, args: &CommonArgs) -> Result<(), CliError> {
    let Loaded { mut config, planner, model } = load_config::<BenchConfig>(name, args)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if config.agent_counts.is_empty() || config.cases == 0 {
        return Err(CliError::new(Category::Config, "agent_counts and cases must be non-empty"));
    }
    config.world.validate().map_err(|e| CliError::new(Category::Config, e.to_string()))?;
    let kind = planner.unwrap_or(PlannerKind::Fmp);
    let planner = build_planner(kind, model.as_deref(), &config.fmp, &config.hybrid)?;
    planner.check_compatible(config.world.dimension)?;
    write_manifest(name, args, &config, Some(config.seed), Some(kind), model)?;

    let opts = EvalOptions { record: false, safety_assertions: config.safety_assertions, mode_trace: true };
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for &n in &config.agent_counts {
        let scenarios = generate_scenarios(config.cases, n, &config.world, config.seed.wrapping_add(n as u64))?;
        let eval = evaluate(&planner, &scenarios, opts)?;
        rows.push(eval.row);
        outcomes.extend(eval.outcomes);
    }
    let path = args.out.join("metrics.csv");
    write_metrics_csv(create(&path)?, &rows).map_err(|e| io_err(&path, e))?;
    let path = args.out.join("outcomes.jsonl");
    write_outcomes_jsonl(create(&path)?, &outcomes).map_err(|e| io_err(&path, e))?;
    let path = args.out.join("summary.md");
    fs::write(&path, summary_markdown(&rows)).map_err(|e| io_err(&path, e))?;
    Ok(())
}

fn cmd_render(name: &str, args: &CommonArgs) -> Result<(), CliError> {
    let Loaded { config, .. } = load_config::<RenderConfig>(name, args)?;
    let path = if config.trajectory.is_relative() {
        args.config.parent().unwrap_or(Path::new(".")).join(&config.trajectory)
    } else {
        config.trajectory.clone()
    };
    let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
    let (header, records) = read_trajectory(BufReader::new(file)).map_err(|e| {
        let cat = if e.kind() == std::io::ErrorKind::InvalidData { Category::Config } else { Category::Io };
        CliError::new(cat, format!("{}: {e}", path.display()))
    })?;
    write_manifest(name, args, &config, None, None, None)?;
    let svg = render_svg(&header.scenario, &records)?;
    let out = args.out.join("trajectory.svg");
    fs::write(&out, svg).map_err(|e| io_err(&out, e))
}

fn cmd_gen(name: &str, args: &CommonArgs) -> Result<(), CliError> {
    let Loaded { mut config, .. } = load_config::<GenConfig>(name, args)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    write_manifest(name, args, &config, Some(config.seed), None, None)?;
    let scenarios = generate_scenarios(config.cases, config.agent_count, &config.world, config.seed)?;
    let path = args.out.join("scenarios.jsonl");
    let mut w = create(&path)?;
    for s in &scenarios {
        serde_json::to_writer(&mut w, s).map_err(|e| io_err(&path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))
}
