mod common;

use std::collections::BTreeMap;

use common::*;
use dmv::ablation::{self, AblationError, AblationSpec};
use dmv::experiment::{ExperimentError, Method, Protocol};
use dmv::forest::ForestConfig;
use dmv::ingest::RawTable;
use dmv::matrix::GroupTag;
use dmv::preprocess::PrepConfig;
use dmv::synth::{self, SynthConfig};
use rand::Rng;

fn forest() -> ForestConfig {
    ForestConfig {
        n_estimators: 30,
        ..ForestConfig::default()
    }
}

fn table(rows: usize) -> RawTable {
    synth::generate(&SynthConfig {
        rows,
        ..SynthConfig::default()
    })
}

/// Replaces every target with a function of the question and stratum plus
/// noise, so the coordinates carry nothing.
fn without_geo_signal(mut t: RawTable) -> RawTable {
    let q = t.schema.index_of("question").unwrap();
    let s = t.schema.index_of("stratification1").unwrap();
    let y = t.schema.index_of("data_value").unwrap();
    let mut rng = seeded(77);
    for row in &mut t.rows {
        let noise: f64 = rng.gen_range(-2.0..2.0);
        if row[y].is_some() {
            let base = row[q].as_deref().map_or(0, str::len) % 11;
            let strat = row[s].as_deref().map_or(0, str::len) % 5;
            row[y] = Some(format!("{:.1}", 20.0 + 3.0 * base as f64 + 2.0 * strat as f64 + noise));
        }
    }
    t
}

fn run(t: &RawTable, groups: BTreeMap<String, Vec<GroupTag>>, protocols: Vec<Protocol>) -> Result<ablation::AblationResult, AblationError> {
    let spec = AblationSpec {
        groups,
        methods: vec![Method::baseline()],
        protocols,
    };
    ablation::run_ablation(t, &spec, &PrepConfig::default(), &forest(), 0.2, 42)
}

#[test]
fn planted_latitude_signal_is_detected() {
    let t = table(600);
    let spec = AblationSpec::geolocation(vec![Method::baseline()], vec![Protocol::Holdout, Protocol::KFold(5)]);
    let r = ablation::run_ablation(&t, &spec, &PrepConfig::default(), &forest(), 0.2, 42).unwrap();
    assert_eq!(r.cells.len(), 2);
    for c in &r.cells {
        assert!(c.metrics_without.mse > c.metrics_with.mse, "{c:?}");
        assert!(c.change_pct["mse"].unwrap() > 0.0);
    }
}

#[test]
fn null_signal_changes_little() {
    let t = without_geo_signal(table(600));
    let groups = BTreeMap::from([("geolocation".to_string(), vec![GroupTag::Geolocation])]);
    let r = run(&t, groups, vec![Protocol::Holdout, Protocol::KFold(5)]).unwrap();
    for c in &r.cells {
        let change = c.change_pct["mse"].unwrap();
        assert!(change.abs() < 10.0, "{} {}: {change}", c.method, c.protocol);
    }
}

#[test]
fn empty_group_changes_nothing() {
    let t = table(300);
    let groups = BTreeMap::from([("nothing".to_string(), Vec::new())]);
    let r = run(&t, groups, vec![Protocol::Holdout]).unwrap();
    let c = &r.cells[0];
    assert_eq!(c.metrics_with, c.metrics_without);
    assert!(c.change_pct.values().all(|v| *v == Some(0.0)));
}

#[test]
fn unknown_group_is_an_error() {
    let t = table(300);
    let groups = BTreeMap::from([("ghost".to_string(), vec![GroupTag::OneHot("no_such_column".into())])]);
    let err = run(&t, groups, vec![Protocol::Holdout]).unwrap_err();
    assert!(
        matches!(err, AblationError::Experiment(ExperimentError::UnknownGroup { ref tag, .. }) if tag == "onehot:no_such_column"),
        "{err}"
    );

    let embedding = BTreeMap::from([("embedding".to_string(), vec![GroupTag::Embedding])]);
    assert!(run(&t, embedding, vec![Protocol::Holdout]).is_err());
}

#[test]
fn onehot_and_numeric_groups_can_be_ablated() {
    let t = table(300);
    let groups = BTreeMap::from([
        ("state".to_string(), vec![GroupTag::OneHot("locationabbr".into())]),
        ("numeric".to_string(), vec![GroupTag::Numeric]),
    ]);
    let r = run(&t, groups, vec![Protocol::Holdout]).unwrap();
    assert_eq!(r.cells.len(), 2);
    assert!(r.cell("baseline", "state", "holdout").is_some());
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
}
