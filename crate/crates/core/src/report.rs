//! The JSON run report and the plots derived from it.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ablation::AblationResult;
use crate::config::RunConfig;
use crate::eval::{self, CvResult, Metrics, ResidualRecord};
use crate::plots::{self, Chart};
use crate::preprocess::{ImputationPolicy, Scaling};

pub const REPORT_FORMAT: &str = "dmv-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub labelled_rows: usize,
    pub columns: usize,
    /// Fraction of blank cells per column, in schema order.
    pub missing_rate: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessingSummary {
    pub imputation: ImputationPolicy,
    pub scaling: Scaling,
    /// Raw columns selected on the hold-out training rows.
    pub selected_features: Vec<String>,
    /// `(dropped, kept)` redundancy pairs.
    pub redundant_dropped: Vec<(String, String)>,
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
    /// Encoded feature count per method with every group included.
    pub encoded_width: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSummary {
    pub test_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub include_geo: bool,
    pub metrics: BTreeMap<String, Metrics>,
    /// Residual CSV per method, relative to the output directory.
    pub residual_files: BTreeMap<String, String>,
}

/// Timing data; the only part of the report that changes between identical runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Wallclock {
    pub generated_unix_secs: u64,
    pub stage_seconds: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub config: RunConfig,
    pub primary_method: String,
    pub dataset: DatasetSummary,
    pub preprocessing: PreprocessingSummary,
    pub holdout: HoldoutSummary,
    /// Per method, per `cv<k>` label.
    pub cross_validation: BTreeMap<String, BTreeMap<String, CvResult>>,
    pub ablation: Option<AblationResult>,
    /// Files under the output directory, sorted.
    pub artifacts: Vec<String>,
    pub wallclock: Wallclock,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// The report with the timing field cleared, for byte comparisons.
    pub fn without_wallclock(&self) -> Self {
        Self {
            wallclock: Wallclock::default(),
            ..self.clone()
        }
    }
}

/// Data the plots need beyond the report itself.
#[derive(Debug, Clone, Default)]
pub struct PlotInputs {
    /// `(latitude, longitude)` of every record with a geolocation.
    pub geolocations: Vec<(f64, f64)>,
    /// Hold-out residuals per method.
    pub residuals: BTreeMap<String, Vec<ResidualRecord>>,
}

fn write_chart(dir: &Path, stem: &str, chart: &Chart, files: &mut Vec<String>) -> io::Result<()> {
    for (ext, body) in [("svg", &chart.svg), ("csv", &chart.csv)] {
        let name = format!("{stem}.{ext}");
        crate::pipeline::write_atomic(&dir.join(&name), body.as_bytes())?;
        files.push(format!("plots/{name}"));
    }
    Ok(())
}

fn with_without_charts(ablation: &AblationResult) -> Vec<(String, Chart)> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for c in &ablation.cells {
        let k = (c.group.clone(), c.protocol.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut charts = Vec::new();
    for (group, protocol) in keys {
        let cells: Vec<_> = ablation
            .cells
            .iter()
            .filter(|c| c.group == group && c.protocol == protocol)
            .collect();
        for metric in Metrics::NAMES {
            let series = vec![format!("with {group}"), format!("without {group}")];
            let groups: Vec<(String, Vec<f64>)> = cells
                .iter()
                .map(|c| {
                    (
                        c.method.clone(),
                        vec![c.metrics_with.get(metric).unwrap(), c.metrics_without.get(metric).unwrap()],
                    )
                })
                .collect();
            let title = format!("{} with/without {group} ({protocol})", metric.to_uppercase());
            charts.push((
                format!("ablation_{group}_{protocol}_{metric}"),
                plots::grouped_bars(&title, metric, &series, &groups),
            ));
        }
    }
    charts
}

/// Writes every chart the report supports into `dir`; returns paths
/// relative to the output directory (`plots/<file>`).
pub fn emit_plots(report: &RunReport, inputs: &PlotInputs, dir: &Path) -> io::Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    if !inputs.geolocations.is_empty() {
        let pts: Vec<(f64, f64)> = inputs.geolocations.iter().map(|&(lat, lon)| (lon, lat)).collect();
        let chart = plots::scatter("Record geolocations", "longitude", "latitude", &pts, false);
        write_chart(dir, "geolocation", &chart, &mut files)?;
    }

    for (method, records) in &inputs.residuals {
        let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.y_hat, r.residual)).collect();
        let mut chart = plots::scatter(
            &format!("Hold-out residuals: {method}"),
            "predicted",
            "residual",
            &pts,
            true,
        );
        let mut buf = Vec::new();
        eval::write_residuals(records, &mut buf).map_err(io::Error::other)?;
        chart.csv = String::from_utf8(buf).expect("csv is utf-8");
        write_chart(dir, &format!("residuals_{method}"), &chart, &mut files)?;
    }

    if !report.holdout.metrics.is_empty() {
        for metric in Metrics::NAMES {
            let mut series = vec!["holdout".to_string()];
            let mut ks: Vec<&String> = report
                .cross_validation
                .values()
                .flat_map(|m| m.keys())
                .collect();
            ks.sort_by_key(|k| k.trim_start_matches("cv").parse::<usize>().unwrap_or(0));
            ks.dedup();
            series.extend(ks.iter().map(|k| k.to_string()));
            let groups: Vec<(String, Vec<f64>)> = report
                .holdout
                .metrics
                .iter()
                .map(|(method, m)| {
                    let mut v = vec![m.get(metric).unwrap()];
                    for k in &ks {
                        let cv = report.cross_validation.get(method).and_then(|c| c.get(*k));
                        v.push(cv.map(|c| c.mean.get(metric).unwrap()).unwrap_or(f64::NAN));
                    }
                    (method.clone(), v)
                })
                .collect();
            let chart = plots::grouped_bars(
                &format!("Model performance: {}", metric.to_uppercase()),
                metric,
                &series,
                &groups,
            );
            write_chart(dir, &format!("performance_{metric}"), &chart, &mut files)?;
        }
    }

    if let Some(ablation) = &report.ablation {
        for (stem, chart) in with_without_charts(ablation) {
            write_chart(dir, &stem, &chart, &mut files)?;
        }
        crate::pipeline::write_atomic(&dir.join("ablation.csv"), ablation.to_csv().as_bytes())?;
        files.push("plots/ablation.csv".into());
    }
    files.sort();
    Ok(files)
}
