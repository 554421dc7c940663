//! Cross-validation harness, holdout evaluation and report rendering.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{make_folds, prepare, DataTable, EncodedDataset, FoldPlan, PointId, Schema};
use crate::formula::{Accuracy, Formula, SerializedFormula};
use crate::fsm::{run_fsm_probed, FsmConfig, FsmResult, NoProbe, Probe, Stage, StopReason};
use crate::propspace::Scheme;
use crate::search::Budget;
use crate::{Error, Result};

/// Settings of a cross-validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub scheme: Scheme,
    pub seed: u64,
    pub k: usize,
    pub split_ratio: f64,
    pub per_bound: Budget,
    /// Budget of each fold's length loop.
    pub total: Budget,
    pub length_cap: usize,
    pub workers: usize,
    /// Run folds concurrently instead of one after another.
    pub parallel_folds: bool,
}

impl CvConfig {
    pub fn new(scheme: Scheme) -> Self {
        CvConfig {
            scheme,
            seed: 0,
            k: 10,
            split_ratio: 0.7,
            per_bound: Budget::unlimited(),
            total: Budget::unlimited(),
            length_cap: 20,
            workers: 1,
            parallel_folds: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Usage(format!("k = {} must be at least 2", self.k)));
        }
        self.fsm(0).validate()
    }

    /// FSM settings of fold `fold`.
    pub fn fsm(&self, fold: usize) -> FsmConfig {
        FsmConfig {
            scheme: self.scheme,
            split_ratio: self.split_ratio,
            seed: fold_seed(self.seed, fold),
            per_bound: self.per_bound,
            total: self.total,
            length_cap: self.length_cap,
            workers: self.workers,
        }
    }
}

/// Seed of fold `fold`, derived from the master seed by SplitMix64.
pub fn fold_seed(master: u64, fold: usize) -> u64 {
    let mut z = master.wrapping_add((fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub formula: String,
    pub serialized: SerializedFormula,
    pub size: usize,
    pub chosen_length: usize,
    pub holdout_accuracy: Accuracy,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldRecord {
    pub fold: usize,
    pub holdout_size: usize,
    /// `Err` holds the message of the error that aborted the fold.
    pub outcome: std::result::Result<FoldOutcome, String>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregates {
    pub mean_accuracy: f64,
    /// Sample standard deviation (divisor k − 1) of the fold accuracies.
    pub std_accuracy: f64,
    pub mean_size: f64,
    pub mean_length: f64,
    /// Folds that produced a formula.
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub scheme: Scheme,
    pub seed: u64,
    pub folds: Vec<FoldRecord>,
}

impl CvReport {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// False if any fold failed.
    pub fn is_complete(&self) -> bool {
        self.folds.iter().all(|f| f.outcome.is_ok())
    }

    /// Statistics over the folds that produced a formula.
    pub fn aggregates(&self) -> Aggregates {
        let ok: Vec<&FoldOutcome> = self
            .folds
            .iter()
            .filter_map(|f| f.outcome.as_ref().ok())
            .collect();
        let accs: Vec<f64> = ok.iter().map(|o| o.holdout_accuracy.value()).collect();
        let mean = |xs: &[f64]| {
            if xs.is_empty() {
                f64::NAN
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        let m = mean(&accs);
        let std = if accs.len() < 2 {
            0.0
        } else {
            (accs.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (accs.len() - 1) as f64).sqrt()
        };
        let sizes: Vec<f64> = ok.iter().map(|o| o.size as f64).collect();
        let lengths: Vec<f64> = ok.iter().map(|o| o.chosen_length as f64).collect();
        Aggregates {
            mean_accuracy: m,
            std_accuracy: std,
            mean_size: mean(&sizes),
            mean_length: mean(&lengths),
            folds: ok.len(),
        }
    }

    pub fn total_elapsed(&self) -> Duration {
        self.folds.iter().map(|f| f.elapsed).sum()
    }
}

/// Accuracy of a fixed formula on held-out points.
pub fn holdout_accuracy(f: &Formula, hold: &EncodedDataset) -> Accuracy {
    f.accuracy(hold)
}

/// Observer of the points each stage sees, per fold.
pub trait CvProbe {
    fn observe(&mut self, fold: usize, stage: Stage, ids: &[PointId]);
}

struct FoldProbe<'a> {
    fold: usize,
    inner: &'a mut dyn CvProbe,
}

impl Probe for FoldProbe<'_> {
    fn observe(&mut self, stage: Stage, ids: &[PointId]) {
        self.inner.observe(self.fold, stage, ids);
    }
}

/// Prepares `table` with `schema` and cross-validates the result.
pub fn cross_validate(table: &DataTable, schema: &Schema, cfg: &CvConfig) -> Result<CvReport> {
    let ds = prepare(table, schema)?;
    cross_validate_encoded(&ds, cfg)
}

pub fn cross_validate_encoded(ds: &EncodedDataset, cfg: &CvConfig) -> Result<CvReport> {
    cfg.validate()?;
    let plan = make_folds(ds, cfg.k, cfg.seed)?;
    let folds = if cfg.parallel_folds {
        (0..plan.k())
            .into_par_iter()
            .map(|i| run_fold(ds, &plan, i, cfg, &mut NoProbe))
            .collect()
    } else {
        (0..plan.k())
            .map(|i| run_fold(ds, &plan, i, cfg, &mut NoProbe))
            .collect()
    };
    Ok(CvReport {
        scheme: cfg.scheme,
        seed: cfg.seed,
        folds,
    })
}

/// Sequential cross-validation reporting every stage's points to `probe`.
/// Returns the fold plan with the report.
pub fn cross_validate_probed(
    ds: &EncodedDataset,
    cfg: &CvConfig,
    probe: &mut dyn CvProbe,
) -> Result<(CvReport, FoldPlan)> {
    cfg.validate()?;
    let plan = make_folds(ds, cfg.k, cfg.seed)?;
    let folds = (0..plan.k())
        .map(|fold| {
            let mut p = FoldProbe {
                fold,
                inner: &mut *probe,
            };
            run_fold(ds, &plan, fold, cfg, &mut p)
        })
        .collect();
    Ok((
        CvReport {
            scheme: cfg.scheme,
            seed: cfg.seed,
            folds,
        },
        plan,
    ))
}

fn run_fold(
    ds: &EncodedDataset,
    plan: &FoldPlan,
    fold: usize,
    cfg: &CvConfig,
    probe: &mut dyn Probe,
) -> FoldRecord {
    let started = Instant::now();
    let hold = plan.holdout(ds, fold);
    let train = plan.training(ds, fold);
    let outcome = run_fsm_probed(&train, &cfg.fsm(fold), probe)
        .map(|r| fold_outcome(&r, &hold))
        .map_err(|e| {
            log::warn!("fold {fold} failed: {e}");
            e.to_string()
        });
    if let Ok(o) = &outcome {
        log::info!("fold {fold}: {} holdout {}", o.formula, o.holdout_accuracy);
    }
    FoldRecord {
        fold,
        holdout_size: hold.len(),
        outcome,
        elapsed: started.elapsed(),
    }
}

fn fold_outcome(r: &FsmResult, hold: &EncodedDataset) -> FoldOutcome {
    let vocab = hold.vocabulary();
    FoldOutcome {
        formula: r.final_formula.render(&vocab),
        serialized: r.final_formula.to_serialized(&vocab),
        size: r.final_formula.size(),
        chosen_length: r.chosen_length,
        holdout_accuracy: holdout_accuracy(&r.final_formula, hold),
        stop_reason: r.stop_reason,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Human,
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "human" | "text" => Ok(Format::Human),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Usage(format!("unknown format `{other}`"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Human => "human",
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

/// Renders `r`. Elapsed times are included only with `timings`; leave them
/// out to get byte-identical output from identical runs.
pub fn summarize(r: &CvReport, fmt: Format, timings: bool) -> Result<String> {
    match fmt {
        Format::Human => Ok(human(r, timings)),
        Format::Csv => csv_report(r, timings),
        Format::Json => Ok(serde_json::to_string_pretty(&json_report(r, timings))? + "\n"),
    }
}

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

fn human(r: &CvReport, timings: bool) -> String {
    let a = r.aggregates();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}-fold cross-validation, scheme {}, seed {} (std is the sample standard deviation)",
        r.k(),
        r.scheme,
        r.seed
    );
    if !r.is_complete() {
        let _ = writeln!(out, "INCOMPLETE: some folds failed");
    }
    for f in &r.folds {
        let time = if timings {
            format!("  {:.1}s", f.elapsed.as_secs_f64())
        } else {
            String::new()
        };
        match &f.outcome {
            Ok(o) => {
                let _ = writeln!(
                    out,
                    "fold {:>2}  acc {}  size {:>2}  L {:>2}  {:<10}{}  {}",
                    f.fold,
                    f3(o.holdout_accuracy.value()),
                    o.size,
                    o.chosen_length,
                    o.stop_reason.as_str(),
                    time,
                    o.formula
                );
            }
            Err(e) => {
                let _ = writeln!(out, "fold {:>2}  failed: {e}", f.fold);
            }
        }
    }
    let _ = writeln!(
        out,
        "mean accuracy {} ± {}  mean size {:.1}  mean L {:.1}",
        f3(a.mean_accuracy),
        f3(a.std_accuracy),
        a.mean_size,
        a.mean_length
    );
    out
}

fn csv_report(r: &CvReport, timings: bool) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "fold",
        "accuracy",
        "length",
        "L",
        "stop_reason",
        "elapsed_s",
        "formula",
    ])?;
    let secs = |d: Duration| {
        if timings {
            format!("{:.3}", d.as_secs_f64())
        } else {
            String::new()
        }
    };
    for f in &r.folds {
        match &f.outcome {
            Ok(o) => w.write_record([
                f.fold.to_string(),
                f3(o.holdout_accuracy.value()),
                o.size.to_string(),
                o.chosen_length.to_string(),
                o.stop_reason.as_str().to_string(),
                secs(f.elapsed),
                o.formula.clone(),
            ])?,
            Err(e) => w.write_record([
                f.fold.to_string(),
                String::new(),
                String::new(),
                String::new(),
                "failed".to_string(),
                secs(f.elapsed),
                e.clone(),
            ])?,
        }
    }
    let a = r.aggregates();
    w.write_record([
        "mean".to_string(),
        f3(a.mean_accuracy),
        format!("{:.1}", a.mean_size),
        format!("{:.1}", a.mean_length),
        if r.is_complete() {
            "complete"
        } else {
            "incomplete"
        }
        .to_string(),
        secs(r.total_elapsed()),
        format!("sample std {}", f3(a.std_accuracy)),
    ])?;
    let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn json_report(r: &CvReport, timings: bool) -> serde_json::Value {
    let folds: Vec<serde_json::Value> = r
        .folds
        .iter()
        .map(|f| {
            let mut v = match &f.outcome {
                Ok(o) => json!({
                    "fold": f.fold,
                    "holdout_size": f.holdout_size,
                    "accuracy": o.holdout_accuracy,
                    "accuracy_value": o.holdout_accuracy.value(),
                    "size": o.size,
                    "chosen_length": o.chosen_length,
                    "stop_reason": o.stop_reason,
                    "formula": o.formula,
                    "rpn": o.serialized,
                }),
                Err(e) => json!({
                    "fold": f.fold,
                    "holdout_size": f.holdout_size,
                    "error": e,
                }),
            };
            if timings {
                v["elapsed_s"] = json!(f.elapsed.as_secs_f64());
            }
            v
        })
        .collect();
    let a = r.aggregates();
    json!({
        "scheme": r.scheme,
        "seed": r.seed,
        "k": r.k(),
        "complete": r.is_complete(),
        "std_kind": "sample",
        "folds": folds,
        "aggregate": {
            "mean_accuracy": a.mean_accuracy,
            "std_accuracy": a.std_accuracy,
            "mean_size": a.mean_size,
            "mean_length": a.mean_length,
        },
    })
}

/// Contents of a formula file: the RPN tokens plus, optionally, the schema
/// needed to read data for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulaFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
    pub rpn: SerializedFormula,
}

impl FormulaFile {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => 2,
        Error::NoIncumbent => 4,
        Error::Schema(_)
        | Error::Target(_)
        | Error::EmptyDataset
        | Error::Scaling { .. }
        | Error::Split(_)
        | Error::Fold(_)
        | Error::Malformed(_)
        | Error::Parse(_)
        | Error::Io { .. }
        | Error::Csv(_)
        | Error::Json(_) => 3,
    }
}
