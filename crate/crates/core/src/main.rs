use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use formula_size::dataset::{load_csv, make_folds, prepare, unscale, EncodedDataset, Schema};
use formula_size::formula::Formula;
use formula_size::fsm::run_fsm;
use formula_size::propspace::{candidate_grid, median_of, Scheme};
use formula_size::report::{
    cross_validate_encoded, exit_code, holdout_accuracy, summarize, CvConfig, Format, FormulaFile,
};
use formula_size::search::Budget;
use formula_size::{Error, Result};

/// Learns short Boolean formula classifiers from tabular data.
#[derive(Parser)]
#[command(name = "fsm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One run of the formula-size method on the complement of fold 0.
    Run(RunArgs),
    /// k-fold cross-validation.
    Cv(CvArgs),
    /// Accuracy of a saved formula on a CSV file.
    Eval(EvalArgs),
    /// Summary of a dataset under its schema.
    Inspect(DataArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value = "pivot")]
    scheme: Scheme,
    #[arg(long, env = "FSM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.7)]
    split_ratio: f64,
    #[arg(long, default_value_t = 20)]
    length_cap: usize,
    /// Wall-clock seconds per length bound.
    #[arg(long, env = "FSM_TIME_PER_BOUND")]
    time_per_bound: Option<f64>,
    /// Node limit per length bound.
    #[arg(long, env = "FSM_NODES_PER_BOUND")]
    nodes_per_bound: Option<u64>,
    /// Wall-clock seconds for the whole length loop of a fold.
    #[arg(long, env = "FSM_TIME_TOTAL")]
    time_total: Option<f64>,
    /// Node limit for the whole length loop of a fold.
    #[arg(long, env = "FSM_NODES_TOTAL")]
    nodes_total: Option<u64>,
    #[arg(long, env = "FSM_WORKERS", default_value_t = 1)]
    workers: usize,
    /// human, csv or json
    #[arg(long, default_value = "human")]
    format: Format,
    /// Leave elapsed times out of the report.
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Write the final formula, with the schema embedded, to this file.
    #[arg(long)]
    save_formula: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Run folds concurrently.
    #[arg(long)]
    parallel_folds: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    formula: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Schema of the data; defaults to the one embedded in the formula file.
    #[arg(long)]
    schema: Option<PathBuf>,
}

fn seconds(s: Option<f64>) -> Result<Option<Duration>> {
    s.map(|s| {
        Duration::try_from_secs_f64(s)
            .ok()
            .filter(|d| !d.is_zero())
            .ok_or_else(|| Error::Usage(format!("invalid time budget {s}")))
    })
    .transpose()
}

impl SearchArgs {
    fn config(&self) -> Result<CvConfig> {
        let cfg = CvConfig {
            scheme: self.scheme,
            seed: self.seed,
            k: self.k,
            split_ratio: self.split_ratio,
            per_bound: Budget {
                time: seconds(self.time_per_bound)?,
                nodes: self.nodes_per_bound,
            },
            total: Budget {
                time: seconds(self.time_total)?,
                nodes: self.nodes_total,
            },
            length_cap: self.length_cap,
            workers: self.workers,
            parallel_folds: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn existing(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!(
            "{what} file `{}` not found",
            path.display()
        )))
    }
}

fn load(args: &DataArgs) -> Result<(Schema, EncodedDataset)> {
    existing(&args.schema, "schema")?;
    existing(&args.data, "data")?;
    let schema = Schema::load(&args.schema)?;
    let table = load_csv(&args.data, &schema)?;
    let ds = prepare(&table, &schema)?;
    Ok((schema, ds))
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = args.search.config()?;
    let (schema, ds) = load(&args.data)?;
    let plan = make_folds(&ds, cfg.k, cfg.seed)?;
    let (train, hold) = (plan.training(&ds, 0), plan.holdout(&ds, 0));
    let result = run_fsm(&train, &cfg.fsm(0))?;
    let vocab = ds.vocabulary();
    let hold_acc = holdout_accuracy(&result.final_formula, &hold);
    let timings = !args.search.no_timings;
    match args.search.format {
        Format::Json => {
            let mut v = result.trace_json(&vocab, timings);
            v["holdout_accuracy"] = serde_json::to_value(hold_acc)?;
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Format::Csv => {
            println!("length,train_accuracy,validation_accuracy,proved_optimal,formula");
            for e in result.trace.entries() {
                println!(
                    "{},{:.3},{:.3},{},\"{}\"",
                    e.length,
                    e.train_accuracy.value(),
                    e.validation_accuracy.value(),
                    e.proved_optimal,
                    e.formula.render(&vocab)
                );
            }
        }
        Format::Human => {
            for e in result.trace.entries() {
                println!(
                    "ℓ={:<2} train {:.3}  validation {:.3}{}  {}",
                    e.length,
                    e.train_accuracy.value(),
                    e.validation_accuracy.value(),
                    if e.proved_optimal { "" } else { " (budget)" },
                    e.formula.render(&vocab)
                );
            }
            println!(
                "stop: {}  L = {}  final: {}  train {:.3}  holdout {:.3}",
                result.stop_reason.as_str(),
                result.chosen_length,
                result.final_formula.render(&vocab),
                result.full_data_accuracy.value(),
                hold_acc.value()
            );
        }
    }
    if let Some(path) = args.save_formula {
        let file = FormulaFile {
            schema: Some(schema),
            rpn: result.final_formula.to_serialized(&vocab),
        };
        std::fs::write(&path, serde_json::to_string_pretty(&file)? + "\n")
            .map_err(|source| Error::Io { path, source })?;
    }
    Ok(())
}

fn cv(args: CvArgs) -> Result<()> {
    let mut cfg = args.search.config()?;
    cfg.parallel_folds = args.parallel_folds;
    let (_, ds) = load(&args.data)?;
    let report = cross_validate_encoded(&ds, &cfg)?;
    print!(
        "{}",
        summarize(&report, args.search.format, !args.search.no_timings)?
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    existing(&args.formula, "formula")?;
    existing(&args.data, "data")?;
    let text = std::fs::read_to_string(&args.formula).map_err(|source| Error::Io {
        path: args.formula.clone(),
        source,
    })?;
    let file = FormulaFile::from_json_str(&text)?;
    let schema = match (&args.schema, file.schema) {
        (Some(path), _) => {
            existing(path, "schema")?;
            Schema::load(path)?
        }
        (None, Some(s)) => s,
        (None, None) => {
            return Err(Error::Usage(
                "formula file has no schema; pass --schema".into(),
            ))
        }
    };
    let ds = prepare(&load_csv(&args.data, &schema)?, &schema)?;
    let f = Formula::from_serialized(&file.rpn, &ds.vocabulary())?;
    let acc = holdout_accuracy(&f, &ds);
    println!(
        "{}  accuracy {} = {:.4}",
        f.render(&ds.vocabulary()),
        acc,
        acc.value()
    );
    Ok(())
}

fn inspect(args: DataArgs) -> Result<()> {
    let (_, ds) = load(&args)?;
    let grid = candidate_grid(&ds);
    println!(
        "{} points, {} positive, {} attributes",
        ds.len(),
        ds.positives(),
        ds.num_attributes()
    );
    for (i, a) in ds.attributes().iter().enumerate() {
        if let Some(d) = a.decimals() {
            let show = |v: i64| unscale(v, d);
            println!(
                "  {:<28} numeric  {:>4} distinct  min {}  max {}  median {}",
                a.name,
                grid.values(i).len(),
                show(grid.min(i).unwrap_or_default()),
                show(grid.max(i).unwrap_or_default()),
                show(median_of(&ds, i))
            );
        } else {
            println!("  {:<28} boolean", a.name);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Cv(a) => cv(a),
        Command::Eval(a) => eval(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fsm: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
