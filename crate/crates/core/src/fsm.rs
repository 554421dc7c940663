//! The formula-size method: grow the length bound while validation accuracy
//! improves, back off to the shortest length that reached the best
//! validation accuracy, and refit on all the data at that length.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{split_train_validation, EncodedDataset, PointId, Vocabulary};
use crate::formula::{Accuracy, Formula};
use crate::propspace::Scheme;
use crate::search::{best_formula_from, Budget, SearchConfig, SearchOutcome};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FsmConfig {
    pub scheme: Scheme,
    /// Fraction of the points used for training; the rest validates.
    pub split_ratio: f64,
    pub seed: u64,
    /// Budget of each length bound, including the final refit.
    pub per_bound: Budget,
    /// Budget of the whole length loop.
    pub total: Budget,
    pub length_cap: usize,
    pub workers: usize,
}

impl FsmConfig {
    pub fn new(scheme: Scheme) -> Self {
        FsmConfig {
            scheme,
            split_ratio: 0.7,
            seed: 0,
            per_bound: Budget::unlimited(),
            total: Budget::unlimited(),
            length_cap: 20,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Usage(format!(
                "split ratio {} must lie strictly between 0 and 1",
                self.split_ratio
            )));
        }
        if self.length_cap == 0 {
            return Err(Error::Usage("length cap must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Usage("worker count must be positive".into()));
        }
        Ok(())
    }

    fn search(&self, length_bound: usize, budget: Budget) -> SearchConfig {
        SearchConfig {
            length_bound,
            scheme: self.scheme,
            budget,
            workers: self.workers,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub length: usize,
    /// Best formula found on the training part at this bound.
    pub formula: Formula,
    pub train_accuracy: Accuracy,
    pub validation_accuracy: Accuracy,
    pub proved_optimal: bool,
    pub nodes: u64,
    pub elapsed: Duration,
}

/// Per-length record of the loop with the running best validation
/// accuracy Δ.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LengthTrace {
    entries: Vec<TraceEntry>,
    best: Option<(Accuracy, usize)>,
}

impl LengthTrace {
    pub fn new() -> Self {
        LengthTrace::default()
    }

    /// Appends the entry for the next length.
    ///
    /// Panics if `entry.length` is not one more than the last length.
    pub fn push(&mut self, entry: TraceEntry) {
        assert_eq!(
            entry.length,
            self.entries.len() + 1,
            "trace lengths must be 1, 2, …"
        );
        if self.best.is_none_or(|(d, _)| entry.validation_accuracy > d) {
            self.best = Some((entry.validation_accuracy, entry.length));
        }
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Best validation accuracy so far; unset on an empty trace.
    pub fn delta(&self) -> Option<Accuracy> {
        self.best.map(|(d, _)| d)
    }

    /// Length that first reached Δ.
    pub fn delta_length(&self) -> Option<usize> {
        self.best.map(|(_, l)| l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    Timeout,
    LengthCap,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::EarlyStop => "early_stop",
            StopReason::Timeout => "timeout",
            StopReason::LengthCap => "length_cap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsmResult {
    pub final_formula: Formula,
    pub chosen_length: usize,
    pub trace: LengthTrace,
    pub stop_reason: StopReason,
    /// Training accuracy of the final formula on all of W.
    pub full_data_accuracy: Accuracy,
    pub final_proved_optimal: bool,
    pub elapsed: Duration,
}

impl FsmResult {
    /// Machine-readable run log. Timings are left out unless asked for so
    /// that logs of identical runs compare equal.
    pub fn trace_json(&self, vocab: &Vocabulary, timings: bool) -> serde_json::Value {
        let entries: Vec<serde_json::Value> = self
            .trace
            .entries()
            .iter()
            .map(|e| {
                let mut v = json!({
                    "length": e.length,
                    "formula": e.formula.render(vocab),
                    "train_accuracy": e.train_accuracy,
                    "validation_accuracy": e.validation_accuracy,
                    "proved_optimal": e.proved_optimal,
                    "nodes": e.nodes,
                });
                if timings {
                    v["elapsed_s"] = json!(e.elapsed.as_secs_f64());
                }
                v
            })
            .collect();
        json!({
            "entries": entries,
            "delta": self.trace.delta(),
            "delta_length": self.trace.delta_length(),
            "chosen_length": self.chosen_length,
            "stop_reason": self.stop_reason,
            "final": self.final_formula.render(vocab),
            "final_rpn": self.final_formula.to_serialized(vocab),
            "full_data_accuracy": self.full_data_accuracy,
            "final_proved_optimal": self.final_proved_optimal,
        })
    }
}

/// Pipeline stages at which point identifiers can be observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Points entering the train/validation split.
    Split,
    /// Points from which candidate grids and medians are computed.
    Grid,
    /// Points handed to the formula search.
    Search,
}

/// Observer of the points each stage sees.
pub trait Probe {
    fn observe(&mut self, stage: Stage, ids: &[PointId]);
}

/// Probe that ignores everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoProbe;

impl Probe for NoProbe {
    fn observe(&mut self, _: Stage, _: &[PointId]) {}
}

/// True iff the last two validation accuracies are both below Δ.
pub fn early_stop_check(trace: &LengthTrace) -> bool {
    let (Some(delta), [.., a, b]) = (trace.delta(), trace.entries()) else {
        return false;
    };
    a.validation_accuracy < delta && b.validation_accuracy < delta
}

/// Smallest traced length whose validation accuracy equals Δ.
///
/// Panics on an empty trace.
pub fn select_length(trace: &LengthTrace) -> usize {
    let delta = trace.delta().expect("select_length on an empty trace");
    trace
        .entries()
        .iter()
        .find(|e| e.validation_accuracy == delta)
        .map(|e| e.length)
        .expect("Δ is attained by some entry")
}

fn probed_search(
    ds: &EncodedDataset,
    cfg: &SearchConfig,
    warm: Option<&SearchOutcome>,
    probe: &mut dyn Probe,
) -> Result<SearchOutcome> {
    probe.observe(Stage::Grid, ds.ids());
    probe.observe(Stage::Search, ds.ids());
    best_formula_from(ds, cfg, warm)
}

/// Refits on all of `w` at bound `length`, with grids and medians computed
/// from `w`.
pub fn finalize(w: &EncodedDataset, length: usize, cfg: &FsmConfig) -> Result<SearchOutcome> {
    finalize_probed(w, length, cfg, &mut NoProbe)
}

fn finalize_probed(
    w: &EncodedDataset,
    length: usize,
    cfg: &FsmConfig,
    probe: &mut dyn Probe,
) -> Result<SearchOutcome> {
    probed_search(w, &cfg.search(length, cfg.per_bound), None, probe)
}

pub fn run_fsm(w: &EncodedDataset, cfg: &FsmConfig) -> Result<FsmResult> {
    run_fsm_probed(w, cfg, &mut NoProbe)
}

/// [`run_fsm`] reporting the points seen by every stage to `probe`.
pub fn run_fsm_probed(
    w: &EncodedDataset,
    cfg: &FsmConfig,
    probe: &mut dyn Probe,
) -> Result<FsmResult> {
    cfg.validate()?;
    if w.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let started = Instant::now();
    probe.observe(Stage::Split, w.ids());
    let (train, valid) = split_train_validation(w, cfg.split_ratio, cfg.seed)?;

    let mut trace = LengthTrace::new();
    let mut warm: Option<SearchOutcome> = None;
    let mut nodes_used = 0u64;
    let mut stop = StopReason::LengthCap;
    for length in 1..=cfg.length_cap {
        let remaining = Budget {
            time: cfg.total.time.map(|t| t.saturating_sub(started.elapsed())),
            nodes: cfg.total.nodes.map(|n| n.saturating_sub(nodes_used)),
        };
        if remaining.time.is_some_and(|t| t.is_zero()) || remaining.nodes == Some(0) {
            stop = StopReason::Timeout;
            break;
        }
        let scfg = cfg.search(length, cfg.per_bound.min(remaining));
        let outcome = match probed_search(&train, &scfg, warm.as_ref(), probe) {
            Ok(o) => o,
            Err(Error::NoIncumbent) => {
                stop = StopReason::Timeout;
                break;
            }
            Err(e) => return Err(e),
        };
        nodes_used += outcome.nodes_explored;
        trace.push(TraceEntry {
            length,
            formula: outcome.best.clone(),
            train_accuracy: outcome.train_accuracy,
            validation_accuracy: outcome.best.accuracy(&valid),
            proved_optimal: outcome.proved_optimal,
            nodes: outcome.nodes_explored,
            elapsed: outcome.elapsed,
        });
        log::info!(
            "length {length}: train {} validation {} ({} nodes{})",
            outcome.train_accuracy,
            trace.entries()[length - 1].validation_accuracy,
            outcome.nodes_explored,
            if outcome.proved_optimal {
                ""
            } else {
                ", budget exhausted"
            }
        );
        if !outcome.proved_optimal {
            stop = StopReason::Timeout;
            break;
        }
        if early_stop_check(&trace) {
            stop = StopReason::EarlyStop;
            break;
        }
        warm = Some(outcome);
    }
    if trace.is_empty() {
        return Err(Error::NoIncumbent);
    }

    let chosen = select_length(&trace);
    let refit = finalize_probed(w, chosen, cfg, probe)?;
    Ok(FsmResult {
        final_formula: refit.best,
        chosen_length: chosen,
        trace,
        stop_reason: stop,
        full_data_accuracy: refit.train_accuracy,
        final_proved_optimal: refit.proved_optimal,
        elapsed: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propspace::Proposition;

    fn trace_of(accs: &[u64]) -> LengthTrace {
        let mut t = LengthTrace::new();
        for (i, &a) in accs.iter().enumerate() {
            t.push(TraceEntry {
                length: i + 1,
                formula: Formula::leaf(Proposition::Bool { attr: 0 }),
                train_accuracy: Accuracy::new(a, 100),
                validation_accuracy: Accuracy::new(a, 100),
                proved_optimal: true,
                nodes: 0,
                elapsed: Duration::ZERO,
            });
        }
        t
    }

    #[test]
    fn two_strikes() {
        assert!(early_stop_check(&trace_of(&[90, 80, 80])));
        for k in 1..=3 {
            assert!(!early_stop_check(&trace_of(&[90, 80, 90][..k])));
        }
        assert!(!early_stop_check(&trace_of(&[60])));
    }

    #[test]
    fn worked_trace() {
        let accs = [80, 85, 83, 84];
        for k in 1..accs.len() {
            assert!(!early_stop_check(&trace_of(&accs[..k])));
        }
        let t = trace_of(&accs);
        assert!(early_stop_check(&t));
        assert_eq!(t.delta(), Some(Accuracy::new(85, 100)));
        assert_eq!(select_length(&t), 2);
    }

    #[test]
    fn back_off() {
        assert_eq!(select_length(&trace_of(&[70, 85, 85, 80, 80])), 2);
        assert_eq!(select_length(&trace_of(&[50, 50, 50])), 1);
        assert_eq!(select_length(&trace_of(&[60])), 1);
    }

    #[test]
    fn delta_starts_unset() {
        let t = LengthTrace::new();
        assert_eq!(t.delta(), None);
        assert_eq!(trace_of(&[10]).delta(), Some(Accuracy::new(10, 100)));
    }

    #[test]
    fn config_checks() {
        let mut cfg = FsmConfig::new(Scheme::Pivot);
        assert!(cfg.validate().is_ok());
        cfg.split_ratio = 1.0;
        assert!(cfg.validate().is_err());
        cfg.split_ratio = 0.7;
        cfg.length_cap = 0;
        assert!(cfg.validate().is_err());
    }
}
