use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sexism_core::corpus::load_dataset;
use sexism_core::fusion::read_predictions;
use sexism_core::metrics::{evaluate, render_comparison_table};
use sexism_core::pipeline::{
    precache_translations, render_run_report, run, RunConfig, RunOutcome, Stage, StageStatus, TaskSelection,
};
use sexism_core::synthetic::generate_fixture;
use sexism_core::{DatasetRole, Error, LabelSpace, Result, Source, Task};

const USAGE_EXIT: u8 = 2;
const RUNTIME_EXIT: u8 = 1;

#[derive(Parser)]
#[command(
    name = "sexism",
    version,
    about = "Sexism identification and categorization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// task1, task2 or both.
    #[arg(long, global = true)]
    task: Option<String>,
    /// Comma-separated model ids (M1..M7).
    #[arg(long, global = true)]
    models: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a configuration without running anything.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
    },
    /// Write the synthetic fixture corpus, or fill the translation cache.
    PrepareData {
        #[command(flatten)]
        common: Common,
        /// Write train.tsv, test.tsv and replay.tsv into this directory.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        train_per_language: usize,
        #[arg(long, default_value_t = 40)]
        test_per_language: usize,
    },
    /// Grid search only.
    Search {
        #[command(flatten)]
        common: Common,
    },
    /// Grid search and final training.
    TrainFinal {
        #[command(flatten)]
        common: Common,
    },
    /// Single-model test predictions (trains what is missing).
    Predict {
        #[command(flatten)]
        common: Common,
    },
    /// Single-model and ensemble predictions.
    Ensemble {
        #[command(flatten)]
        common: Common,
    },
    /// Metric table for prediction files against gold labels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Prediction TSV files.
        #[arg(long, required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
        /// Labeled dataset; defaults to the configured test set.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        source: Option<String>,
    },
    /// Every stage through the reports.
    RunAll {
        #[command(flatten)]
        common: Common,
    },
    /// Comparison tables of a finished run, optionally for one source.
    Report {
        #[command(flatten)]
        common: Common,
        /// twitter or gab.
        #[arg(long)]
        source: Option<String>,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(common: &Common) -> std::result::Result<RunConfig, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config <path> is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(t) = &common.task {
        cfg.tasks = t.parse::<TaskSelection>()?;
    }
    if let Some(m) = &common.models {
        cfg.models = sexism_core::pipeline::config::parse_models(m)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output = std::path::absolute(o).map_err(|e| Error::io(o, e))?;
    }
    Ok(cfg)
}

fn print_outcome(out: &RunOutcome) {
    for s in &out.stages {
        let status = match s.status {
            StageStatus::Completed => "done",
            StageStatus::CacheHit => "cached",
            StageStatus::Failed => "failed",
        };
        println!("{status:<7} {}", s.stage);
    }
    println!("run directory: {}", out.dir.root.display());
}

fn run_stage(common: &Common, until: Stage) -> std::result::Result<(), Failure> {
    let cfg = load_config(common)?;
    let out = run(&cfg, until)?;
    print_outcome(&out);
    if until == Stage::Report {
        for task in out.tasks.keys() {
            let table = out.dir.comparison_table(*task);
            if table.exists() {
                println!("\n{task}");
                print!("{}", std::fs::read_to_string(&table).map_err(|e| Error::io(&table, e))?);
            }
        }
    }
    Ok(())
}

fn evaluate_files(task: Task, files: &[PathBuf], gold_path: &Path, source: Option<Source>) -> Result<String> {
    let gold = load_dataset(gold_path, DatasetRole::Test)?;
    let mut rows = Vec::new();
    for f in files {
        let records = read_predictions(f)?;
        let Some(first) = records.first() else {
            return Err(Error::Argument(format!("{} holds no predictions", f.display())));
        };
        let space: LabelSpace = first.scores.label_space.clone();
        // A five-class file is a categorizer: score it on the gold-sexist posts only.
        let categorizer = task == Task::Task2 && space.index_of(sexism_core::labels::NON_SEXIST).is_none();
        let mut g = Vec::new();
        let mut p = Vec::new();
        for r in &records {
            let e = gold
                .get(&r.example_id)
                .ok_or_else(|| Error::Validation(format!("{} is not in {}", r.example_id, gold_path.display())))?;
            if source.is_some_and(|s| e.source != s) {
                continue;
            }
            let label = e
                .label(task)
                .ok_or_else(|| Error::Validation(format!("{} has no {task} label", e.id)))?;
            if categorizer && label == sexism_core::labels::NON_SEXIST {
                continue;
            }
            g.push(label);
            p.push(r.predicted_label.as_str());
        }
        let name = f
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        rows.push((name, evaluate(&g, &p, &space, task)?.summary()));
    }
    render_comparison_table(&rows, task)
}

fn parse_source(s: &Option<String>) -> Result<Option<Source>> {
    s.as_deref().map(str::parse).transpose()
}

fn execute(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::ValidateConfig { common } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            println!(
                "ok: {} {} models={} output={}",
                cfg.backend_kind.as_str(),
                cfg.tasks.as_str(),
                cfg.models.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
                cfg.output.display()
            );
        }
        Command::PrepareData {
            common,
            fixture,
            train_per_language,
            test_per_language,
        } => match fixture {
            Some(dir) => {
                let fx = generate_fixture(common.seed.unwrap_or(0), train_per_language, test_per_language)?;
                fx.write(&dir)?;
                println!(
                    "wrote {} training and {} test examples to {}",
                    fx.train.len(),
                    fx.test.len(),
                    dir.display()
                );
            }
            None => {
                let cfg = load_config(&common)?;
                let n = precache_translations(&cfg)?;
                println!("translation cache holds {n} entries");
            }
        },
        Command::Search { common } => run_stage(&common, Stage::Search)?,
        Command::TrainFinal { common } => run_stage(&common, Stage::TrainFinal)?,
        Command::Predict { common } => run_stage(&common, Stage::Predict)?,
        Command::Ensemble { common } => run_stage(&common, Stage::Ensemble)?,
        Command::RunAll { common } => run_stage(&common, Stage::Report)?,
        Command::Evaluate {
            common,
            predictions,
            gold,
            source,
        } => {
            let task: Task = match common.task.as_deref() {
                None => Task::Task1,
                Some(t) => t.parse()?,
            };
            let gold = match gold {
                Some(g) => g,
                None => load_config(&common)?.test_path,
            };
            print!("{}", evaluate_files(task, &predictions, &gold, parse_source(&source)?)?);
        }
        Command::Report { common, source } => {
            let cfg = load_config(&common)?;
            print!("{}", render_run_report(&cfg, parse_source(&source)?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_EXIT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error[usage] {msg}");
            ExitCode::from(USAGE_EXIT)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error[{}] {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::from(RUNTIME_EXIT)
        }
    }
}
