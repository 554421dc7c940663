mod common;

use std::collections::HashSet;

use formula_size::dataset::{make_folds, parse_csv, prepare, EncodedDataset, Schema};
use formula_size::formula::Accuracy;
use formula_size::fsm::{run_fsm, FsmConfig, StopReason};
use formula_size::propspace::Scheme;
use formula_size::report::{
    cross_validate, cross_validate_encoded, holdout_accuracy, summarize, CvConfig, Format,
};
use formula_size::search::Budget;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// x takes each value in 0..10 ten times and decides the class at 5; y is
// noise. Every fold's training part still contains the boundary value.
fn threshold_data() -> EncodedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<i64> = (0..100).map(|i| i % 10).collect();
    let y: Vec<i64> = (0..100).map(|_| rng.gen_range(0..5)).collect();
    let target = x.iter().map(|&v| v >= 5).collect();
    EncodedDataset::from_columns(vec![], vec![("x", x), ("y", y)], target).unwrap()
}

#[test]
fn separable_threshold_is_recovered_in_every_fold() {
    let ds = threshold_data();
    for scheme in Scheme::ALL {
        if scheme == Scheme::Median {
            continue;
        }
        let report = cross_validate_encoded(&ds, &CvConfig::new(scheme)).unwrap();
        assert!(report.is_complete());
        let agg = report.aggregates();
        assert_eq!(agg.mean_accuracy, 1.0, "{scheme}");
        assert_eq!(agg.std_accuracy, 0.0, "{scheme}");
        assert_eq!(agg.mean_size, 1.0, "{scheme}");
        for f in &report.folds {
            let out = f.outcome.as_ref().unwrap();
            assert_eq!(out.chosen_length, 1);
            // Validation stays perfect, so no length falls below Δ.
            assert_eq!(out.stop_reason, StopReason::LengthCap);
        }
    }
}

#[test]
fn median_split_matches_a_balanced_threshold() {
    // The lower median of x is 4, one step below the class boundary, so
    // no median proposition separates the classes.
    let ds = threshold_data();
    let mut cfg = CvConfig::new(Scheme::Median);
    cfg.length_cap = 8;
    let report = cross_validate_encoded(&ds, &cfg).unwrap();
    let agg = report.aggregates();
    assert!(
        agg.mean_accuracy > 0.85 && agg.mean_accuracy < 1.0,
        "{}",
        agg.mean_accuracy
    );
}

#[test]
fn folds_partition_uneven_data() {
    let x: Vec<i64> = (0..23).map(|i| i % 2).collect();
    let ds = EncodedDataset::from_columns(vec![], vec![("x", x)], vec![true; 23]).unwrap();
    let plan = make_folds(&ds, 10, 4).unwrap();
    let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
    assert_eq!(sizes, [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
    let all: HashSet<_> = plan.folds.iter().flatten().collect();
    assert_eq!(all.len(), 23);
    assert_eq!(make_folds(&ds, 10, 4).unwrap().folds, plan.folds);
    assert_ne!(make_folds(&ds, 10, 5).unwrap().folds, plan.folds);
    for f in 0..10 {
        assert_eq!(plan.training(&ds, f).len() + plan.holdout(&ds, f).len(), 23);
    }
    let report = cross_validate_encoded(&ds, &CvConfig::new(Scheme::Pivot)).unwrap();
    assert_eq!(report.k(), 10);
    assert_eq!(report.aggregates().mean_accuracy, 1.0);
}

#[test]
fn fsm_result_is_consistent_with_its_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 60 {
        let ds = common::random_small(&mut rng);
        if ds.len() < 4 {
            continue;
        }
        checked += 1;
        for scheme in Scheme::ALL {
            let mut cfg = FsmConfig::new(scheme);
            cfg.seed = rng.gen();
            cfg.length_cap = 6;
            let r = run_fsm(&ds, &cfg).unwrap();
            let entries = r.trace.entries();
            assert!(!entries.is_empty());
            for (i, e) in entries.iter().enumerate() {
                assert_eq!(e.length, i + 1);
                assert!(e.formula.size() <= e.length);
                if i > 0 {
                    assert!(e.train_accuracy >= entries[i - 1].train_accuracy);
                }
            }
            let best = entries.iter().map(|e| e.validation_accuracy).max().unwrap();
            let first = entries
                .iter()
                .find(|e| e.validation_accuracy == best)
                .unwrap();
            assert_eq!(r.chosen_length, first.length);
            assert!(r.final_formula.size() <= r.chosen_length);
            assert_eq!(r.full_data_accuracy, r.final_formula.accuracy(&ds));
            assert!(r.final_proved_optimal);
            let expect = if r.stop_reason == StopReason::LengthCap {
                6
            } else {
                entries.len()
            };
            assert_eq!(entries.len(), expect);
        }
    }
}

#[test]
fn node_budget_ends_the_length_loop() {
    let ds = threshold_data();
    let mut cfg = FsmConfig::new(Scheme::Interval);
    cfg.total = Budget::with_nodes(1);
    // The first unit of ℓ = 1 already uses the whole budget.
    let r = run_fsm(&ds, &cfg).unwrap();
    assert_eq!(
        (r.stop_reason, r.trace.len(), r.chosen_length),
        (StopReason::Timeout, 1, 1)
    );
    cfg.total = Budget::with_nodes(50_000);
    cfg.split_ratio = 0.5;
    let noisy = {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<i64> = (0..60).map(|_| rng.gen_range(0..30)).collect();
        let z: Vec<i64> = (0..60).map(|_| rng.gen_range(0..30)).collect();
        let t = (0..60).map(|_| rng.gen_bool(0.5)).collect();
        EncodedDataset::from_columns(vec![], vec![("x", x), ("z", z)], t).unwrap()
    };
    if let Ok(r) = run_fsm(&noisy, &cfg) {
        if r.stop_reason == StopReason::Timeout {
            assert!(!r.trace.entries().last().unwrap().proved_optimal);
        }
    }
}

#[test]
fn holdout_accuracy_scores_the_formula() {
    let ds = threshold_data();
    let plan = make_folds(&ds, 10, 0).unwrap();
    let (train, hold) = (plan.training(&ds, 0), plan.holdout(&ds, 0));
    let r = run_fsm(&train, &FsmConfig::new(Scheme::Pivot)).unwrap();
    assert_eq!(
        holdout_accuracy(&r.final_formula, &hold),
        Accuracy::new(10, 10)
    );
    let negated = r.final_formula.negated();
    assert_eq!(holdout_accuracy(&negated, &hold), Accuracy::new(0, 10));
}

const CSV: &str = "\
id,age,smoker,colour,label
1,30.5,yes,red,1
2,41.0,no,blue,0
3,,yes,red,1
4,52.25,no,green,0
5,29.0,yes,blue,1
6,61.5,no,red,0
7,33.0,yes,green,1
8,47.5,no,blue,0
9,38.0,yes,red,1
10,55.0,no,green,0
11,36.5,no,red,1
12,58.0,yes,blue,0
";

const SCHEMA: &str = r#"{
  "target": "label",
  "drop": ["id"],
  "columns": [
    {"name": "id", "kind": "numeric"},
    {"name": "age", "kind": "numeric", "decimals": 2},
    {"name": "smoker", "kind": "boolean"},
    {"name": "colour", "kind": "categorical"},
    {"name": "label", "kind": "boolean"}
  ]
}"#;

#[test]
fn csv_to_report() {
    let schema = Schema::from_json_str(SCHEMA).unwrap();
    let table = parse_csv(CSV.as_bytes(), &schema).unwrap();
    let ds = prepare(&table, &schema).unwrap();
    assert_eq!(ds.len(), 11, "the row with a missing age is dropped");
    let mut cfg = CvConfig::new(Scheme::Pivot);
    cfg.k = 3;
    cfg.seed = 9;
    let report = cross_validate(&table, &schema, &cfg).unwrap();
    assert_eq!(report.k(), 3);
    let csv = summarize(&report, Format::Csv, false).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "fold,accuracy,length,L,stop_reason,elapsed_s,formula"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("mean,"));
    let json: serde_json::Value =
        serde_json::from_str(&summarize(&report, Format::Json, false).unwrap()).unwrap();
    assert!(json.to_string().find("elapsed").is_none());
    let again = cross_validate(&table, &schema, &cfg).unwrap();
    assert_eq!(
        summarize(&again, Format::Json, false).unwrap(),
        summarize(&report, Format::Json, false).unwrap()
    );
}
