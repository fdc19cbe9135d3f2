//! Paired feature-group ablations and their percent-change deltas.
//!
//! Each cell trains twice on the same folds with the same per-tree random
//! streams, once with every column and once with a group's columns removed,
//! so the ablated columns are the only difference between the two fits.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::Metrics;
use crate::experiment::{Experiment, ExperimentError, Method, Protocol};
use crate::forest::ForestConfig;
use crate::ingest::RawTable;
use crate::matrix::GroupTag;
use crate::preprocess::PrepConfig;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("percent change relative to zero")]
    DivisionByZero,
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

/// Change of `without_value` relative to `with_value`, in percent.
///
/// Positive when the metric is larger without the group, so a higher error
/// after removing geolocation reads as `+`.
pub fn percent_change(with_value: f64, without_value: f64) -> Result<f64, AblationError> {
    if with_value == 0.0 {
        return Err(AblationError::DivisionByZero);
    }
    Ok(100.0 * (without_value - with_value) / with_value)
}

/// Two-decimal rounding used when reporting changes.
pub fn round2(v: f64) -> f64 {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone)]
pub struct AblationSpec {
    /// Named sets of group tags removed together.
    pub groups: BTreeMap<String, Vec<GroupTag>>,
    pub methods: Vec<Method>,
    pub protocols: Vec<Protocol>,
}

impl AblationSpec {
    /// The geolocation ablation for `methods` under `protocols`.
    pub fn geolocation(methods: Vec<Method>, protocols: Vec<Protocol>) -> Self {
        Self {
            groups: BTreeMap::from([("geolocation".to_string(), vec![GroupTag::Geolocation])]),
            methods,
            protocols,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub method: String,
    pub group: String,
    pub protocol: String,
    pub metrics_with: Metrics,
    pub metrics_without: Metrics,
    /// Raw percent change per metric name; `None` when the with-value is 0.
    pub change_pct: BTreeMap<String, Option<f64>>,
    /// `change_pct` rounded to two decimals.
    pub change_pct_rounded: BTreeMap<String, Option<f64>>,
}

impl AblationCell {
    pub fn new(
        method: &str,
        group: &str,
        protocol: &str,
        metrics_with: Metrics,
        metrics_without: Metrics,
    ) -> Self {
        let mut change_pct = BTreeMap::new();
        for name in Metrics::NAMES {
            let (w, wo) = (metrics_with.get(name).unwrap(), metrics_without.get(name).unwrap());
            change_pct.insert(name.to_string(), percent_change(w, wo).ok());
        }
        let change_pct_rounded = change_pct
            .iter()
            .map(|(k, v)| (k.clone(), v.map(round2)))
            .collect();
        Self {
            method: method.to_string(),
            group: group.to_string(),
            protocol: protocol.to_string(),
            metrics_with,
            metrics_without,
            change_pct,
            change_pct_rounded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub cells: Vec<AblationCell>,
}

impl AblationResult {
    pub fn cell(&self, method: &str, group: &str, protocol: &str) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.group == group && c.protocol == protocol)
    }

    /// CSV flattening: one row per cell and metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,group,protocol,metric,with,without,change_pct\n");
        for c in &self.cells {
            for name in Metrics::NAMES {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    c.method,
                    c.group,
                    c.protocol,
                    name,
                    c.metrics_with.get(name).unwrap(),
                    c.metrics_without.get(name).unwrap(),
                    c.change_pct[name].map(|v| v.to_string()).unwrap_or_default()
                ));
            }
        }
        out
    }
}

impl Experiment<'_> {
    /// Runs every (method, group, protocol) cell of `spec`.
    pub fn ablate(&self, spec: &AblationSpec) -> Result<AblationResult, AblationError> {
        let jobs: Vec<(&Method, Protocol, &String, &Vec<GroupTag>)> = spec
            .methods
            .iter()
            .flat_map(|m| {
                spec.protocols
                    .iter()
                    .flat_map(move |p| spec.groups.iter().map(move |(g, t)| (m, *p, g, t)))
            })
            .collect();
        let cells = jobs
            .into_par_iter()
            .map(|(method, protocol, group, tags)| {
                let with = self.evaluate(method, protocol, &[])?.summary();
                let without = self.evaluate(method, protocol, tags)?.summary();
                Ok(AblationCell::new(
                    &method.name,
                    group,
                    &protocol.to_string(),
                    with,
                    without,
                ))
            })
            .collect::<Result<Vec<_>, AblationError>>()?;
        Ok(AblationResult { cells })
    }
}

/// Standalone ablation over `table`.
pub fn run_ablation(
    table: &RawTable,
    spec: &AblationSpec,
    prep_config: &PrepConfig,
    forest_config: &ForestConfig,
    holdout_fraction: f64,
    seed: u64,
) -> Result<AblationResult, AblationError> {
    Experiment::new(table, prep_config.clone(), forest_config.clone(), holdout_fraction, seed)
        .ablate(spec)
}
