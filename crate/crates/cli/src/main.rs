//! Experiment runner: dataset generation, stream splitting, per-task
//! condensation, continual-run grids, and report aggregation, driven by a
//! JSON config. Exit codes: 0 success, 2 config error, 3 runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cgl_core::condense::{save_condensed, CondenseConfig, LabelAlloc};
use cgl_core::graph::Graph;
use cgl_core::io;
use cgl_core::memory::{self, BudgetSpec, MemoryBank, ReplayEntry};
use cgl_core::metrics::{self, PerformanceMatrix, ReportFile, RunRecord};
use cgl_core::nn::ModelParams;
use cgl_core::stream::{generate_sbm, save_stream, split_stream, SbmConfig, StreamConfig, TaskStream};
use cgl_core::trainer::{BankStrategy, ContinualRun, EvalMode, RunSpec, TrainConfig};
use cgl_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "cgl", about = "Continual graph learning experiment runner", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured SBM graph and write it to a graph file.
    Gen(GenArgs),
    /// Split a graph into a class-incremental stream manifest.
    Split(SplitArgs),
    /// Condense one task into a single bank entry file.
    Condense(CondenseArgs),
    /// Run the (bank x seed x mode x ablation) grid of continual runs.
    Run(RunArgs),
    /// Aggregate completed runs into comparison tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    config: PathBuf,
    /// Graph file to split; defaults to the config's dataset.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CondenseArgs {
    #[arg(long)]
    config: PathBuf,
    /// Task index to condense.
    #[arg(long)]
    task: usize,
    /// Existing bank archive to condition the pseudo-label classifier on.
    #[arg(long)]
    bank_dir: Option<PathBuf>,
    #[arg(long)]
    bank: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Restrict to one bank strategy.
    #[arg(long)]
    bank: Option<String>,
    /// Restrict to one seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one eval mode (class-il or task-il).
    #[arg(long)]
    mode: Option<String>,
    /// Override the budget with a global ratio.
    #[arg(long)]
    budget_ratio: Option<f64>,
    /// Output directory; defaults to the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Redo completed cells instead of skipping them.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding run cell directories.
    #[arg(long)]
    runs: PathBuf,
    /// Where to write the aggregate report; defaults to `<runs>/report`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exactly one dataset source.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DatasetSource {
    Sbm(SbmConfig),
    Path(PathBuf),
}

/// Grid axes matching the built-in ablations. Every listed value of every
/// present axis is crossed with banks, modes and seeds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AblationGrid {
    tim: Vec<bool>,
    retrain: Vec<bool>,
    pseudo_labels: Vec<bool>,
    activation: Vec<bool>,
    encoder_dim: Vec<usize>,
    budget_ratio: Vec<f64>,
    label_alloc: Vec<LabelAlloc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    dataset: DatasetSource,
    #[serde(default)]
    stream: StreamConfig,
    banks: Vec<BankStrategy>,
    modes: Vec<EvalMode>,
    seeds: Vec<u64>,
    budget: BudgetSpec,
    #[serde(default)]
    condense: CondenseConfig,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default = "default_edge_keep_ratio")]
    edge_keep_ratio: f64,
    #[serde(default)]
    grid: AblationGrid,
    out_dir: PathBuf,
}

fn default_edge_keep_ratio() -> f64 {
    0.5
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Format(_) | CoreError::Validation(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Split(args) => cmd_split(args),
        Command::Condense(args) => cmd_condense(args),
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{e}")))?;
    if config.seeds.is_empty() {
        return Err(CliError::Config("at least one seed required".into()));
    }
    if config.banks.is_empty() {
        return Err(CliError::Config("at least one bank strategy required".into()));
    }
    if config.modes.is_empty() {
        return Err(CliError::Config("at least one eval mode required".into()));
    }
    Ok(config)
}

fn load_dataset(config: &ExperimentConfig, graph_override: Option<&Path>) -> CliResult<Graph> {
    if let Some(path) = graph_override {
        return Ok(Graph::load(path)?);
    }
    match &config.dataset {
        DatasetSource::Sbm(sbm) => Ok(generate_sbm(sbm)?),
        DatasetSource::Path(path) => Ok(Graph::load(path)?),
    }
}

fn cmd_gen(args: GenArgs) -> CliResult<()> {
    let config = load_config(&args.config)?;
    let DatasetSource::Sbm(sbm) = &config.dataset else {
        return Err(CliError::Config("gen needs an sbm dataset source".into()));
    };
    let graph = generate_sbm(sbm)?;
    graph.save(&args.out)?;
    println!("wrote {} ({} nodes)", args.out.display(), graph.num_nodes());
    Ok(())
}

fn cmd_split(args: SplitArgs) -> CliResult<()> {
    let config = load_config(&args.config)?;
    let graph = load_dataset(&config, args.graph.as_deref())?;
    let stream = split_stream(&graph, &config.stream)?;
    save_stream(&stream, &args.out)?;
    println!("wrote {} ({} tasks)", args.out.display(), stream.num_tasks());
    Ok(())
}

fn parse_bank(s: &str) -> CliResult<BankStrategy> {
    s.parse::<BankStrategy>().map_err(CliError::from)
}

fn cmd_condense(args: CondenseArgs) -> CliResult<()> {
    let config = load_config(&args.config)?;
    let graph = load_dataset(&config, None)?;
    let stream = split_stream(&graph, &config.stream)?;
    if args.task >= stream.num_tasks() {
        return Err(CliError::Config(format!(
            "task {} out of range ({} tasks)",
            args.task,
            stream.num_tasks()
        )));
    }
    let strategy = match &args.bank {
        Some(s) => parse_bank(s)?,
        None => *config.banks.first().unwrap(),
    };
    let mut ccfg = config.condense.clone();
    if let Some(seed) = args.seed {
        ccfg.seed = seed;
    }
    let budgets = memory::plan_budgets(&stream, &config.budget)?;
    let task = &stream.tasks[args.task];
    let budget = budgets[args.task];
    match strategy {
        BankStrategy::Puma | BankStrategy::Cat => {
            ccfg.pseudo_labels =
                matches!(strategy, BankStrategy::Puma) && ccfg.pseudo_labels;
            let bank = match &args.bank_dir {
                Some(dir) => MemoryBank::load(dir)?,
                None => MemoryBank::new(cgl_core::memory::MemoryKind::Condensed),
            };
            let mut train = config.train.clone();
            if let Some(seed) = args.seed {
                train.seed = seed;
            }
            let condensed =
                cgl_core::condense::condense_puma(task, &bank, budget, &ccfg, &train)?;
            save_condensed(&condensed, &ccfg, &args.out)?;
        }
        BankStrategy::Random | BankStrategy::Balanced | BankStrategy::Sparsified => {
            let alloc = cgl_core::condense::allocate_budget(
                &cgl_core::stream::train_class_counts(&task.incoming),
                budget,
                ccfg.label_alloc,
            )?;
            let sampled = match strategy {
                BankStrategy::Random => {
                    memory::sample_random_nodes(task, &alloc, ccfg.hops, ccfg.self_loops, ccfg.seed)?
                }
                BankStrategy::Balanced => {
                    memory::sample_balanced_mean(task, &alloc, ccfg.hops, ccfg.self_loops)?
                }
                _ => memory::sparsify_subgraph(
                    task,
                    &alloc,
                    config.edge_keep_ratio,
                    ccfg.seed,
                )?,
            };
            memory::save_entry(&ReplayEntry::Sampled(sampled), &args.out)?;
        }
        BankStrategy::Finetune | BankStrategy::Joint => {
            return Err(CliError::Config(format!(
                "bank strategy '{}' stores nothing to condense",
                strategy.name()
            )));
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

/// One grid cell: a named RunSpec-to-be plus its budget override.
#[derive(Clone)]
struct Cell {
    name: String,
    bank: BankStrategy,
    mode: EvalMode,
    seed: u64,
    tim: Option<bool>,
    retrain: Option<bool>,
    pseudo_labels: Option<bool>,
    activation: Option<bool>,
    encoder_dim: Option<usize>,
    budget_ratio: Option<f64>,
    label_alloc: Option<LabelAlloc>,
}

impl Cell {
    fn spec(&self, config: &ExperimentConfig) -> RunSpec {
        let mut train = config.train.clone();
        let mut condense = config.condense.clone();
        train.seed = self.seed;
        condense.seed = self.seed;
        if let Some(v) = self.tim {
            train.tim = v;
        }
        if let Some(v) = self.retrain {
            train.retrain = v;
        }
        if let Some(v) = self.pseudo_labels {
            condense.pseudo_labels = v;
        }
        if let Some(v) = self.activation {
            condense.encoder_activation = v;
        }
        if let Some(v) = self.encoder_dim {
            condense.encoder_dim = v;
        }
        if let Some(v) = self.label_alloc {
            condense.label_alloc = v;
        }
        let budget = match self.budget_ratio {
            Some(r) => BudgetSpec::Ratio(r),
            None => config.budget,
        };
        RunSpec {
            strategy: self.bank,
            mode: self.mode,
            train,
            condense,
            budget,
            edge_keep_ratio: config.edge_keep_ratio,
        }
    }
}

fn expand_cells(config: &ExperimentConfig) -> Vec<Cell> {
    // Each absent axis contributes a single "inherit" slot.
    fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
        if values.is_empty() {
            vec![None]
        } else {
            values.iter().copied().map(Some).collect()
        }
    }
    let mut cells = Vec::new();
    for &bank in &config.banks {
        for &mode in &config.modes {
            for &seed in &config.seeds {
                for &tim in &axis(&config.grid.tim) {
                    for &retrain in &axis(&config.grid.retrain) {
                        for &pl in &axis(&config.grid.pseudo_labels) {
                            for &act in &axis(&config.grid.activation) {
                                for &dim in &axis(&config.grid.encoder_dim) {
                                    for &ratio in &axis(&config.grid.budget_ratio) {
                                        for &alloc in &axis(&config.grid.label_alloc) {
                                            let mut name = format!(
                                                "{}_{}_seed{}",
                                                bank.name(),
                                                mode.name(),
                                                seed
                                            );
                                            let onoff = |v: bool| if v { "on" } else { "off" };
                                            if let Some(v) = tim {
                                                name += &format!("_tim-{}", onoff(v));
                                            }
                                            if let Some(v) = retrain {
                                                name += &format!("_retrain-{}", onoff(v));
                                            }
                                            if let Some(v) = pl {
                                                name += &format!("_pl-{}", onoff(v));
                                            }
                                            if let Some(v) = act {
                                                name += &format!("_act-{}", onoff(v));
                                            }
                                            if let Some(v) = dim {
                                                name += &format!("_enc{v}");
                                            }
                                            if let Some(v) = ratio {
                                                name += &format!("_ratio{v}");
                                            }
                                            if let Some(v) = alloc {
                                                let tag = match v {
                                                    LabelAlloc::Proportional => "prop",
                                                    LabelAlloc::Balanced => "bal",
                                                };
                                                name += &format!("_alloc-{tag}");
                                            }
                                            cells.push(Cell {
                                                name,
                                                bank,
                                                mode,
                                                seed,
                                                tim,
                                                retrain,
                                                pseudo_labels: pl,
                                                activation: act,
                                                encoder_dim: dim,
                                                budget_ratio: ratio,
                                                label_alloc: alloc,
                                            });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cells
}

#[derive(Serialize, Deserialize)]
struct CellManifest {
    format_version: u32,
    cell: String,
    bank: String,
    mode: String,
    seed: u64,
    config_digest: String,
    effective: serde_json::Value,
    budgets: Vec<usize>,
}

fn cmd_run(args: RunArgs) -> CliResult<()> {
    let mut config = load_config(&args.config)?;
    if let Some(bank) = &args.bank {
        config.banks = vec![parse_bank(bank)?];
    }
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(mode) = &args.mode {
        config.modes = vec![mode.parse::<EvalMode>().map_err(CliError::from)?];
    }
    if let Some(ratio) = args.budget_ratio {
        config.budget = BudgetSpec::Ratio(ratio);
    }
    let out_dir = args.out.clone().unwrap_or_else(|| config.out_dir.clone());
    let graph = load_dataset(&config, None)?;
    let stream = split_stream(&graph, &config.stream)?;

    for cell in expand_cells(&config) {
        run_cell(&config, &stream, &cell, &out_dir, args.force)?;
    }
    println!("all cells complete under {}", out_dir.display());
    Ok(())
}

fn run_cell(
    config: &ExperimentConfig,
    stream: &TaskStream,
    cell: &Cell,
    out_dir: &Path,
    force: bool,
) -> CliResult<()> {
    let cell_dir = out_dir.join(&cell.name);
    let report_path = cell_dir.join("report.json");
    let spec = cell.spec(config);
    let effective = serde_json::json!({
        "dataset": config.dataset,
        "stream": config.stream,
        "spec": spec,
    });
    let digest = io::digest_json(&effective)?;

    if report_path.exists() {
        if !force {
            println!("cell {} already complete, skipping (use --force to redo)", cell.name);
            return Ok(());
        }
        fs::remove_dir_all(&cell_dir)?;
    }
    fs::create_dir_all(&cell_dir)?;

    let manifest_path = cell_dir.join("manifest.json");
    if manifest_path.exists() {
        let manifest: CellManifest = io::read_json(&manifest_path)?;
        if manifest.config_digest != digest {
            return Err(CliError::Config(format!(
                "cell {} holds a checkpoint for a different config; use --force",
                cell.name
            )));
        }
    } else {
        io::write_json(
            &manifest_path,
            &CellManifest {
                format_version: 1,
                cell: cell.name.clone(),
                bank: cell.bank.name().into(),
                mode: cell.mode.name().into(),
                seed: cell.seed,
                config_digest: digest.clone(),
                effective: effective.clone(),
                budgets: memory::plan_budgets(stream, &spec.budget)?,
            },
        )?;
    }

    let bank_dir = cell_dir.join("bank");
    let ckpt_params = cell_dir.join("checkpoint.json");
    let ckpt_matrix = cell_dir.join("matrix.json");

    let mut run = if ckpt_matrix.exists() {
        let matrix: PerformanceMatrix = io::read_json(&ckpt_matrix)?;
        let bank = if spec.strategy.builds_bank() && bank_dir.exists() {
            MemoryBank::load(&bank_dir)?
        } else {
            MemoryBank::new(cgl_core::memory::MemoryKind::Condensed)
        };
        let params = if ckpt_params.exists() {
            Some(ModelParams::load(&ckpt_params)?.0)
        } else {
            None
        };
        let done = matrix.num_rows();
        let run = ContinualRun::resume(stream, spec, params, bank, matrix)?;
        println!("cell {}: resuming after task {done}", cell.name);
        run
    } else {
        ContinualRun::new(stream, spec)?
    };

    while !run.is_done() {
        run.step().map_err(|e| {
            CliError::Runtime(format!("cell {} failed at task {}: {e}", cell.name, run.next_task()))
        })?;
        if !run.state().bank.is_empty() {
            run.state().bank.save(&bank_dir)?;
        }
        if let Some(params) = &run.state().params {
            params.save(&ckpt_params, None)?;
        }
        io::write_json(&ckpt_matrix, run.matrix())?;
    }

    let (state, matrix) = run.into_parts();
    let record = RunRecord {
        label: format!("{}/{}", cell.bank.name(), cell.mode.name()),
        seed: cell.seed,
        matrix,
        loss_curves: state.loss_curves,
        config_echo: effective,
    };
    io::write_json(&report_path, &ReportFile::from_record(&record)?)?;
    fs::write(cell_dir.join("matrix.csv"), metrics::matrix_csv(&record.matrix))?;
    for (task, curve) in record.loss_curves.iter().enumerate() {
        let mut csv = String::from("epoch,loss\n");
        for (epoch, loss) in curve.iter().enumerate() {
            csv.push_str(&format!("{epoch},{loss}\n"));
        }
        fs::write(cell_dir.join(format!("loss_task{task:03}.csv")), csv)?;
    }
    println!("cell {} complete", cell.name);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CliResult<()> {
    let out = args.out.clone().unwrap_or_else(|| args.runs.join("report"));
    let mut records = Vec::new();
    let entries = fs::read_dir(&args.runs)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", args.runs.display())))?;
    for entry in entries.flatten() {
        let report_path = entry.path().join("report.json");
        if !report_path.is_file() {
            continue;
        }
        let report: ReportFile = io::read_json(&report_path)?;
        records.push(RunRecord {
            label: report.label,
            seed: report.seed,
            matrix: report.matrix,
            loss_curves: Vec::new(),
            config_echo: report.config_echo,
        });
    }
    if records.is_empty() {
        return Err(CliError::Runtime(format!(
            "no completed runs under {}",
            args.runs.display()
        )));
    }
    records.sort_by(|a, b| a.label.cmp(&b.label).then(a.seed.cmp(&b.seed)));
    let count = records.len();
    metrics::render_report(&records, &out)?;
    println!("aggregated {count} runs into {}", out.display());
    Ok(())
}
