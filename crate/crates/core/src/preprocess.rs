//! Imputation, feature selection, encoding, scaling and matrix assembly.
//!
//! Everything that is learned from data lives in [`PrepState`], fitted on a
//! set of training rows and then applied unchanged to any other rows. During
//! cross-validation a fresh state is fitted per training fold.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decoder, Encoder};
use crate::forest::{self, ForestConfig, ForestError};
use crate::ingest::{self, IngestError, RawTable};
pub use crate::matrix::{FeatureMatrix, GroupTag};

pub const PREP_MAGIC: &[u8; 5] = b"DMVP1";
pub const PREP_VERSION: u32 = 1;
pub const UNKNOWN_CATEGORY: &str = "Unknown";
pub const LATITUDE: &str = "latitude";
pub const LONGITUDE: &str = "longitude";

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("column `{0}` has no observed values")]
    AllMissing(String),
    #[error("zero variance")]
    ZeroVariance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("expected {expected} embedding rows, got {found}")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("column `{column}`: `{value}` is not a number")]
    BadNumber { column: String, value: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("not a preprocessing state file (bad magic)")]
    BadMagic,
    #[error("unsupported preprocessing state version {0}")]
    VersionUnsupported(u32),
    #[error("corrupt preprocessing state: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericImpute {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalImpute {
    Mode,
    UnknownCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputationPolicy {
    pub numeric: NumericImpute,
    pub categorical: CategoricalImpute,
}

impl Default for ImputationPolicy {
    fn default() -> Self {
        Self {
            numeric: NumericImpute::Mean,
            categorical: CategoricalImpute::UnknownCategory,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    MinMax,
    ZScore,
}

// --- imputation -----------------------------------------------------------

/// Mean or median of the observed values.
pub fn numeric_fill_value(column: &[Option<f64>], policy: NumericImpute) -> Option<f64> {
    let mut observed: Vec<f64> = column.iter().flatten().copied().collect();
    if observed.is_empty() {
        return None;
    }
    Some(match policy {
        NumericImpute::Mean => observed.iter().sum::<f64>() / observed.len() as f64,
        NumericImpute::Median => {
            observed.sort_by(f64::total_cmp);
            let n = observed.len();
            if n % 2 == 1 {
                observed[n / 2]
            } else {
                (observed[n / 2 - 1] + observed[n / 2]) / 2.0
            }
        }
    })
}

pub fn impute_numeric(column: &[Option<f64>], policy: NumericImpute) -> Result<Vec<f64>, PrepError> {
    let fill = numeric_fill_value(column, policy)
        .ok_or_else(|| PrepError::AllMissing(String::new()))?;
    Ok(column.iter().map(|v| v.unwrap_or(fill)).collect())
}

/// Most frequent observed value, ties to the lexicographically smallest.
pub fn mode<'a, I: IntoIterator<Item = &'a str>>(values: I) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let max = counts.values().copied().max()?;
    counts
        .into_iter()
        .find(|(_, c)| *c == max)
        .map(|(v, _)| v.to_string())
}

pub fn categorical_fill_value(column: &[Option<&str>], policy: CategoricalImpute) -> Option<String> {
    match policy {
        CategoricalImpute::UnknownCategory => Some(UNKNOWN_CATEGORY.to_string()),
        CategoricalImpute::Mode => mode(column.iter().flatten().copied()),
    }
}

pub fn impute_categorical(
    column: &[Option<&str>],
    policy: CategoricalImpute,
) -> Result<Vec<String>, PrepError> {
    let fill = categorical_fill_value(column, policy)
        .ok_or_else(|| PrepError::AllMissing(String::new()))?;
    Ok(column
        .iter()
        .map(|v| v.map_or_else(|| fill.clone(), str::to_string))
        .collect())
}

// --- scoring --------------------------------------------------------------

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, PrepError> {
    if x.len() != y.len() {
        return Err(PrepError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(PrepError::ZeroVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(PrepError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Equal-frequency bin label per value: rank `r` (ties by position) maps to
/// bin `floor(r * bins / n)`.
pub fn equal_frequency_bins(y: &[f64], bins: usize) -> Vec<usize> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut labels = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * bins / n;
    }
    labels
}

/// Plug-in mutual information (nats) between labels `x` and `y` discretized
/// into `bins` equal-frequency bins.
pub fn mutual_information<S: AsRef<str>>(x: &[S], y: &[f64], bins: usize) -> f64 {
    let n = x.len().min(y.len());
    if n == 0 || bins < 2 {
        return 0.0;
    }
    let yb = equal_frequency_bins(&y[..n], bins);
    let mut joint: HashMap<(&str, usize), usize> = HashMap::new();
    let mut px: HashMap<&str, usize> = HashMap::new();
    let mut py = vec![0usize; bins];
    for (a, &b) in x[..n].iter().zip(&yb) {
        *joint.entry((a.as_ref(), b)).or_default() += 1;
        *px.entry(a.as_ref()).or_default() += 1;
        py[b] += 1;
    }
    let nf = n as f64;
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    let mi: f64 = cells
        .into_iter()
        .map(|((a, b), c)| {
            let pab = c as f64 / nf;
            let pa = px[a] as f64 / nf;
            let pb = py[b] as f64 / nf;
            pab * (pab / (pa * pb)).ln()
        })
        .sum();
    mi.max(0.0)
}

// --- redundancy -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redundancy {
    pub kept: BTreeSet<String>,
    /// `(dropped, kept_partner)` in the order the drops were made.
    pub dropped: Vec<(String, String)>,
}

fn is_bijective(a: &[&str], b: &[&str]) -> bool {
    let mut fwd: HashMap<&str, &str> = HashMap::new();
    let mut back: HashMap<&str, &str> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        if *fwd.entry(x).or_insert(y) != *y || *back.entry(y).or_insert(x) != *x {
            return false;
        }
    }
    true
}

fn has_id(name: &str) -> bool {
    name.to_ascii_lowercase().contains("id")
}

/// Drops one column of every pair of `columns` whose values map one-to-one
/// over `rows`. Names containing "id" go first; otherwise the
/// lexicographically later name is dropped.
pub fn drop_redundant(table: &RawTable, columns: &BTreeSet<String>, rows: &[usize]) -> Redundancy {
    const MISSING: &str = "\u{0}missing";
    let values: BTreeMap<&str, Vec<&str>> = columns
        .iter()
        .filter_map(|c| {
            let col = table.column(c)?;
            Some((
                c.as_str(),
                rows.iter().map(|&i| col[i].unwrap_or(MISSING)).collect(),
            ))
        })
        .collect();
    let names: Vec<&str> = values.keys().copied().collect();
    let mut pairs = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            if is_bijective(&values[a], &values[b]) {
                let (loser, keeper) = match (has_id(a), has_id(b)) {
                    (true, false) => (*a, *b),
                    (false, true) => (*b, *a),
                    _ => (*b, *a),
                };
                let id_rule = has_id(loser) != has_id(keeper);
                pairs.push((!id_rule, loser, keeper));
            }
        }
    }
    pairs.sort();
    let mut kept: BTreeSet<String> = names.iter().map(|s| s.to_string()).collect();
    let mut dropped = Vec::new();
    for (_, loser, keeper) in pairs {
        if kept.contains(loser) && kept.contains(keeper) {
            kept.remove(loser);
            dropped.push((loser.to_string(), keeper.to_string()));
        }
    }
    Redundancy { kept, dropped }
}

// --- selection ------------------------------------------------------------

/// Union over scoring methods of each method's top-`k` names by `|score|`,
/// ties broken by name. Geolocation and embedding columns never enter this
/// function; they are always part of the assembled matrix.
pub fn select_features(scores: &BTreeMap<String, BTreeMap<String, f64>>, k: usize) -> BTreeSet<String> {
    let mut selected = BTreeSet::new();
    for per_method in scores.values() {
        let mut ranked: Vec<(&String, f64)> = per_method.iter().map(|(n, s)| (n, s.abs())).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        selected.extend(ranked.into_iter().take(k).map(|(n, _)| n.clone()));
    }
    selected
}

// --- encoding and scaling -------------------------------------------------

/// Sorted vocabulary of one categorical column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneHotState {
    pub vocabulary: Vec<String>,
}

pub fn fit_one_hot<S: AsRef<str>>(column: &[S], include_unknown: bool) -> OneHotState {
    let mut vocab: BTreeSet<String> = column.iter().map(|s| s.as_ref().to_string()).collect();
    if include_unknown {
        vocab.insert(UNKNOWN_CATEGORY.to_string());
    }
    OneHotState {
        vocabulary: vocab.into_iter().collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneHotBlock {
    pub width: usize,
    /// Row-major `n × width` indicators.
    pub values: Vec<f64>,
    /// Rows whose value was not in the vocabulary and had no `Unknown` column.
    pub unmapped_rows: Vec<usize>,
}

impl OneHotState {
    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.vocabulary
            .binary_search_by(|v| v.as_str().cmp(value))
            .ok()
    }

    pub fn apply<S: AsRef<str>>(&self, column: &[S]) -> OneHotBlock {
        let width = self.vocabulary.len();
        let unknown = self.index_of(UNKNOWN_CATEGORY);
        let mut values = vec![0.0; column.len() * width];
        let mut unmapped_rows = Vec::new();
        for (i, v) in column.iter().enumerate() {
            match self.index_of(v.as_ref()).or(unknown) {
                Some(j) => values[i * width + j] = 1.0,
                None => unmapped_rows.push(i),
            }
        }
        OneHotBlock {
            width,
            values,
            unmapped_rows,
        }
    }
}

pub fn apply_one_hot<S: AsRef<str>>(state: &OneHotState, column: &[S]) -> OneHotBlock {
    state.apply(column)
}

/// Per-column bounds (min-max) or moments (z-score) seen at fit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn fit_scaler(column: &[f64]) -> ScalerState {
    if column.is_empty() {
        return ScalerState {
            min: 0.0,
            max: 0.0,
            mean: 0.0,
            std: 0.0,
        };
    }
    let n = column.len() as f64;
    let min = column.iter().copied().fold(f64::INFINITY, f64::min);
    let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = column.iter().sum::<f64>() / n;
    let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    ScalerState {
        min,
        max,
        mean,
        std: var.sqrt(),
    }
}

impl ScalerState {
    pub fn scale(&self, v: f64, mode: Scaling) -> f64 {
        match mode {
            Scaling::MinMax => {
                if self.max > self.min {
                    ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            }
            Scaling::ZScore => {
                if self.std > 0.0 {
                    (v - self.mean) / self.std
                } else {
                    0.0
                }
            }
        }
    }
}

/// Min-max scaling with clipping to `[0, 1]`; constant columns map to zero.
pub fn apply_scaler(state: &ScalerState, column: &[f64]) -> Vec<f64> {
    column.iter().map(|&v| state.scale(v, Scaling::MinMax)).collect()
}

// --- fitted pipeline state -----------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub imputation: ImputationPolicy,
    pub scaling: Scaling,
    /// Top-k per scoring method.
    pub selection_k: usize,
    pub mi_bins: usize,
    /// Trees in the preliminary forest used for importance scores.
    pub importance_trees: usize,
    pub seed: u64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            imputation: ImputationPolicy::default(),
            scaling: Scaling::MinMax,
            selection_k: 10,
            mi_bins: 10,
            importance_trees: 25,
            seed: 42,
        }
    }
}

/// Everything learned from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepState {
    pub policy: ImputationPolicy,
    pub scaling: Scaling,
    pub target: String,
    pub geolocation: String,
    /// Categorical fill value per selected categorical column.
    pub categorical_fill: BTreeMap<String, String>,
    pub encoders: BTreeMap<String, OneHotState>,
    /// Fill value per selected numeric column, plus latitude and longitude.
    pub numeric_fill: BTreeMap<String, f64>,
    pub scalers: BTreeMap<String, ScalerState>,
    pub selected: Vec<String>,
    pub redundant: Vec<(String, String)>,
    /// Selection scores per method, kept for reporting.
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
}

fn parse_numeric(column: &str, cells: &[Option<&str>]) -> Result<Vec<Option<f64>>, PrepError> {
    cells
        .iter()
        .map(|c| match c {
            None => Ok(None),
            Some(s) => s
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| PrepError::BadNumber {
                    column: column.to_string(),
                    value: s.to_string(),
                }),
        })
        .collect()
}

fn pick<T: Copy>(values: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&i| values[i]).collect()
}

/// Latitude and longitude columns, one entry per table row.
pub type Coordinates = (Vec<Option<f64>>, Vec<Option<f64>>);

/// Latitude and longitude per table row; missing cells stay `None`.
pub fn geolocation_columns(table: &RawTable) -> Result<Coordinates, PrepError> {
    let col = table
        .column(table.schema.geolocation())
        .expect("schema has a geolocation column");
    let mut lat = Vec::with_capacity(col.len());
    let mut lon = Vec::with_capacity(col.len());
    for cell in col {
        match cell {
            Some(s) => {
                let g = ingest::parse_geolocation(s)?;
                lat.push(Some(g.latitude));
                lon.push(Some(g.longitude));
            }
            None => {
                lat.push(None);
                lon.push(None);
            }
        }
    }
    Ok((lat, lon))
}

impl PrepState {
    /// Fits imputation, redundancy filtering, selection, encoders and
    /// scalers on `rows` of `table`. Rows without a target are ignored.
    pub fn fit(table: &RawTable, rows: &[usize], config: &PrepConfig) -> Result<Self, PrepError> {
        let targets = table.targets();
        let rows: Vec<usize> = rows.iter().copied().filter(|&i| targets[i].is_some()).collect();
        let y: Vec<f64> = rows.iter().map(|&i| targets[i].unwrap()).collect();
        let partition = ingest::partition_columns(table);
        let policy = config.imputation;

        let redundancy = drop_redundant(table, &partition.categorical, &rows);

        let mut categorical: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut categorical_fill = BTreeMap::new();
        for name in &redundancy.kept {
            let col = table.column(name).unwrap();
            let train: Vec<Option<&str>> = pick(&col, &rows);
            let Some(fill) = categorical_fill_value(&train, policy.categorical) else {
                log::warn!("dropping categorical column `{name}`: no observed values");
                continue;
            };
            let filled = train.iter().map(|v| v.unwrap_or(&fill).to_string()).collect();
            categorical.insert(name.clone(), filled);
            categorical_fill.insert(name.clone(), fill);
        }

        let mut numeric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut numeric_fill = BTreeMap::new();
        for name in &partition.numerical {
            let col = table.column(name).unwrap();
            let parsed = parse_numeric(name, &col)?;
            let train = pick(&parsed, &rows);
            let Some(fill) = numeric_fill_value(&train, policy.numeric) else {
                log::warn!("dropping numeric column `{name}`: no observed values");
                continue;
            };
            numeric.insert(name.clone(), train.iter().map(|v| v.unwrap_or(fill)).collect());
            numeric_fill.insert(name.clone(), fill);
        }

        let (lat, lon) = geolocation_columns(table)?;
        let mut geo: Vec<(&str, Vec<f64>)> = Vec::new();
        for (name, col) in [(LATITUDE, &lat), (LONGITUDE, &lon)] {
            let train = pick(col, &rows);
            let fill = numeric_fill_value(&train, policy.numeric)
                .ok_or_else(|| PrepError::AllMissing(table.schema.geolocation().to_string()))?;
            numeric_fill.insert(name.to_string(), fill);
            geo.push((name, train.iter().map(|v| v.unwrap_or(fill)).collect()));
        }

        let mut scores: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let pearson_scores = numeric
            .iter()
            .map(|(n, v)| (n.clone(), pearson(v, &y).unwrap_or(0.0)))
            .collect();
        scores.insert("pearson".into(), pearson_scores);
        let mi_scores = categorical
            .iter()
            .map(|(n, v)| (n.clone(), mutual_information(v, &y, config.mi_bins)))
            .collect();
        scores.insert("mutual_information".into(), mi_scores);

        let include_unknown = policy.categorical == CategoricalImpute::UnknownCategory;
        let all_encoders: BTreeMap<String, OneHotState> = categorical
            .iter()
            .map(|(n, v)| (n.clone(), fit_one_hot(v, include_unknown)))
            .collect();
        let all_scalers: BTreeMap<String, ScalerState> = numeric
            .iter()
            .map(|(n, v)| (n.clone(), fit_scaler(v)))
            .chain(geo.iter().map(|(n, v)| (n.to_string(), fit_scaler(v))))
            .collect();

        if config.importance_trees > 0 && !rows.is_empty() {
            let prelim = PrepState {
                policy,
                scaling: config.scaling,
                target: partition.target.clone(),
                geolocation: partition.geolocation.clone(),
                categorical_fill: categorical_fill.clone(),
                encoders: all_encoders.clone(),
                numeric_fill: numeric_fill.clone(),
                scalers: all_scalers.clone(),
                selected: categorical.keys().chain(numeric.keys()).cloned().collect(),
                redundant: Vec::new(),
                scores: BTreeMap::new(),
            };
            let m = prelim.transform(table, &rows, None, true)?;
            let forest_config = ForestConfig {
                n_estimators: config.importance_trees,
                random_state: config.seed,
                ..ForestConfig::default()
            };
            let model = forest::fit(&m, &forest_config)?;
            let mut per_column: BTreeMap<String, f64> = categorical
                .keys()
                .chain(numeric.keys())
                .map(|n| (n.clone(), 0.0))
                .collect();
            for (j, imp) in model.importances.iter().enumerate() {
                let source = match &m.groups()[j] {
                    GroupTag::OneHot(c) => c.clone(),
                    GroupTag::Numeric => m.column_names()[j].clone(),
                    _ => continue,
                };
                *per_column.get_mut(&source).unwrap() += imp;
            }
            scores.insert("forest_importance".into(), per_column);
        }

        let selected = select_features(&scores, config.selection_k);
        let encoders = all_encoders
            .into_iter()
            .filter(|(n, _)| selected.contains(n))
            .collect();
        let scalers = all_scalers
            .into_iter()
            .filter(|(n, _)| selected.contains(n) || n == LATITUDE || n == LONGITUDE)
            .collect();
        let categorical_fill = categorical_fill
            .into_iter()
            .filter(|(n, _)| selected.contains(n))
            .collect();
        let numeric_fill = numeric_fill
            .into_iter()
            .filter(|(n, _)| selected.contains(n) || n == LATITUDE || n == LONGITUDE)
            .collect();

        Ok(PrepState {
            policy,
            scaling: config.scaling,
            target: partition.target,
            geolocation: partition.geolocation,
            categorical_fill,
            encoders,
            numeric_fill,
            scalers,
            selected: selected.into_iter().collect(),
            redundant: redundancy.dropped,
            scores,
        })
    }

    pub fn selected_categorical(&self) -> impl Iterator<Item = &String> {
        self.encoders.keys()
    }

    pub fn selected_numeric(&self) -> impl Iterator<Item = &String> {
        self.scalers
            .keys()
            .filter(|n| n.as_str() != LATITUDE && n.as_str() != LONGITUDE)
    }

    /// Assembles the feature matrix for `rows`, dropping rows without a
    /// target. `embeddings`, when given, is indexed by table row.
    ///
    /// Column order: one-hot blocks by column name, scaled numerics by name,
    /// `latitude`/`longitude` when `include_geo`, then `e0..e{D-1}`.
    pub fn transform(
        &self,
        table: &RawTable,
        rows: &[usize],
        embeddings: Option<&[Vec<f64>]>,
        include_geo: bool,
    ) -> Result<FeatureMatrix, PrepError> {
        if let Some(e) = embeddings {
            if e.len() != table.n_rows() {
                return Err(PrepError::RowCountMismatch {
                    expected: table.n_rows(),
                    found: e.len(),
                });
            }
        }
        let targets = table.targets();
        let rows: Vec<usize> = rows.iter().copied().filter(|&i| targets[i].is_some()).collect();
        let n = rows.len();

        let mut names: Vec<String> = Vec::new();
        let mut groups: Vec<GroupTag> = Vec::new();
        // column-major blocks, interleaved into rows at the end
        let mut blocks: Vec<Vec<f64>> = Vec::new();

        for (name, enc) in &self.encoders {
            let col = table
                .column(name)
                .ok_or_else(|| PrepError::UnknownColumn(name.clone()))?;
            let fill = &self.categorical_fill[name];
            let values: Vec<&str> = rows.iter().map(|&i| col[i].unwrap_or(fill)).collect();
            let block = enc.apply(&values);
            if !block.unmapped_rows.is_empty() {
                log::warn!(
                    "column `{name}`: {} rows with unseen categories encoded as all zeros",
                    block.unmapped_rows.len()
                );
            }
            for (j, category) in enc.vocabulary.iter().enumerate() {
                names.push(format!("{name}={category}"));
                groups.push(GroupTag::OneHot(name.clone()));
                blocks.push((0..n).map(|i| block.values[i * block.width + j]).collect());
            }
        }

        for name in self.selected_numeric() {
            let col = table
                .column(name)
                .ok_or_else(|| PrepError::UnknownColumn(name.clone()))?;
            let parsed = parse_numeric(name, &col)?;
            let fill = self.numeric_fill[name];
            let scaler = &self.scalers[name];
            names.push(name.clone());
            groups.push(GroupTag::Numeric);
            blocks.push(
                rows.iter()
                    .map(|&i| scaler.scale(parsed[i].unwrap_or(fill), self.scaling))
                    .collect(),
            );
        }

        if include_geo {
            let (lat, lon) = geolocation_columns(table)?;
            for (name, col) in [(LATITUDE, lat), (LONGITUDE, lon)] {
                let fill = self.numeric_fill[name];
                let scaler = &self.scalers[name];
                names.push(name.to_string());
                groups.push(GroupTag::Geolocation);
                blocks.push(
                    rows.iter()
                        .map(|&i| scaler.scale(col[i].unwrap_or(fill), self.scaling))
                        .collect(),
                );
            }
        }

        if let Some(emb) = embeddings {
            let dim = emb.first().map_or(0, Vec::len);
            #[allow(clippy::needless_range_loop)]
            for k in 0..dim {
                names.push(format!("e{k}"));
                groups.push(GroupTag::Embedding);
                blocks.push(rows.iter().map(|&i| emb[i][k]).collect());
            }
        }

        let d = names.len();
        let mut values = vec![0.0; n * d];
        for (j, block) in blocks.iter().enumerate() {
            for (i, v) in block.iter().enumerate() {
                values[i * d + j] = *v;
            }
        }
        let target = rows.iter().map(|&i| targets[i].unwrap()).collect();
        Ok(FeatureMatrix::new(names, groups, values, target))
    }

    // --- DMVP1 persistence ---

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new(Vec::new());
        self.encode(&mut enc).expect("writing to a Vec cannot fail");
        enc.finish()
    }

    fn encode<W: Write>(&self, enc: &mut Encoder<W>) -> io::Result<()> {
        enc.bytes(PREP_MAGIC)?;
        enc.u32(PREP_VERSION)?;
        enc.u8(match self.policy.numeric {
            NumericImpute::Mean => 0,
            NumericImpute::Median => 1,
        })?;
        enc.u8(match self.policy.categorical {
            CategoricalImpute::Mode => 0,
            CategoricalImpute::UnknownCategory => 1,
        })?;
        enc.u8(match self.scaling {
            Scaling::MinMax => 0,
            Scaling::ZScore => 1,
        })?;
        enc.str(&self.target)?;
        enc.str(&self.geolocation)?;
        enc.u32(self.encoders.len() as u32)?;
        for (name, state) in &self.encoders {
            enc.str(name)?;
            enc.str(&self.categorical_fill[name])?;
            enc.strs(&state.vocabulary)?;
        }
        enc.u32(self.scalers.len() as u32)?;
        for (name, s) in &self.scalers {
            enc.str(name)?;
            enc.f64(self.numeric_fill[name])?;
            for v in [s.min, s.max, s.mean, s.std] {
                enc.f64(v)?;
            }
        }
        enc.strs(&self.selected)?;
        enc.u32(self.redundant.len() as u32)?;
        for (d, k) in &self.redundant {
            enc.str(d)?;
            enc.str(k)?;
        }
        enc.u32(self.scores.len() as u32)?;
        for (method, per) in &self.scores {
            enc.str(method)?;
            enc.u32(per.len() as u32)?;
            for (name, v) in per {
                enc.str(name)?;
                enc.f64(*v)?;
            }
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, PrepError> {
        let mut dec = Decoder::new(reader);
        let magic: [u8; 5] = dec.array().map_err(|_| PrepError::BadMagic)?;
        if &magic != PREP_MAGIC {
            return Err(PrepError::BadMagic);
        }
        let version = dec.u32().map_err(|_| PrepError::VersionUnsupported(0))?;
        if version != PREP_VERSION {
            return Err(PrepError::VersionUnsupported(version));
        }
        Self::decode_body(&mut dec).map_err(|e| match e {
            PrepError::Io(io) => PrepError::Corrupt(io.to_string()),
            other => other,
        })
    }

    fn decode_body<R: Read>(dec: &mut Decoder<R>) -> Result<Self, PrepError> {
        let corrupt = |what: &str| PrepError::Corrupt(what.to_string());
        let numeric = match dec.u8()? {
            0 => NumericImpute::Mean,
            1 => NumericImpute::Median,
            _ => return Err(corrupt("numeric policy")),
        };
        let categorical = match dec.u8()? {
            0 => CategoricalImpute::Mode,
            1 => CategoricalImpute::UnknownCategory,
            _ => return Err(corrupt("categorical policy")),
        };
        let scaling = match dec.u8()? {
            0 => Scaling::MinMax,
            1 => Scaling::ZScore,
            _ => return Err(corrupt("scaling")),
        };
        let target = dec.str()?;
        let geolocation = dec.str()?;
        let mut encoders = BTreeMap::new();
        let mut categorical_fill = BTreeMap::new();
        for _ in 0..dec.u32()? {
            let name = dec.str()?;
            categorical_fill.insert(name.clone(), dec.str()?);
            encoders.insert(
                name,
                OneHotState {
                    vocabulary: dec.strs()?,
                },
            );
        }
        let mut scalers = BTreeMap::new();
        let mut numeric_fill = BTreeMap::new();
        for _ in 0..dec.u32()? {
            let name = dec.str()?;
            numeric_fill.insert(name.clone(), dec.f64()?);
            let s = ScalerState {
                min: dec.f64()?,
                max: dec.f64()?,
                mean: dec.f64()?,
                std: dec.f64()?,
            };
            scalers.insert(name, s);
        }
        let selected = dec.strs()?;
        let mut redundant = Vec::new();
        for _ in 0..dec.u32()? {
            redundant.push((dec.str()?, dec.str()?));
        }
        let mut scores = BTreeMap::new();
        for _ in 0..dec.u32()? {
            let method = dec.str()?;
            let mut per = BTreeMap::new();
            for _ in 0..dec.u32()? {
                per.insert(dec.str()?, dec.f64()?);
            }
            scores.insert(method, per);
        }
        if !dec.at_end()? {
            return Err(corrupt("trailing bytes"));
        }
        Ok(PrepState {
            policy: ImputationPolicy {
                numeric,
                categorical,
            },
            scaling,
            target,
            geolocation,
            categorical_fill,
            encoders,
            numeric_fill,
            scalers,
            selected,
            redundant,
            scores,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PrepError> {
        Self::from_reader(BufReader::new(fs::File::open(path)?))
    }
}

/// Assembles the feature matrix for `rows` from a fitted state.
pub fn assemble_matrix(
    table: &RawTable,
    rows: &[usize],
    state: &PrepState,
    embeddings: Option<&[Vec<f64>]>,
    include_geo: bool,
) -> Result<FeatureMatrix, PrepError> {
    state.transform(table, rows, embeddings, include_geo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ColumnSchema;
    use proptest::prelude::*;

    #[test]
    fn numeric_imputation() {
        assert_eq!(
            impute_numeric(&[Some(1.0), None, Some(3.0)], NumericImpute::Mean).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(
            impute_numeric(&[Some(1.0), None, Some(3.0), Some(100.0)], NumericImpute::Median).unwrap(),
            vec![1.0, 3.0, 3.0, 100.0]
        );
        assert_eq!(
            impute_numeric(&[Some(5.0), Some(5.0)], NumericImpute::Median).unwrap(),
            vec![5.0, 5.0]
        );
        assert!(matches!(
            impute_numeric(&[None, None], NumericImpute::Mean),
            Err(PrepError::AllMissing(_))
        ));
    }

    #[test]
    fn categorical_imputation() {
        assert_eq!(
            impute_categorical(&[Some("A"), Some("A"), None], CategoricalImpute::Mode).unwrap(),
            vec!["A", "A", "A"]
        );
        assert_eq!(
            impute_categorical(&[Some("A"), Some("B"), None], CategoricalImpute::UnknownCategory)
                .unwrap(),
            vec!["A", "B", "Unknown"]
        );
        assert_eq!(
            impute_categorical(&[Some("B"), Some("A"), None], CategoricalImpute::Mode).unwrap(),
            vec!["B", "A", "A"]
        );
        assert!(impute_categorical(&[None], CategoricalImpute::Mode).is_err());
        assert_eq!(
            impute_categorical(&[None], CategoricalImpute::UnknownCategory).unwrap(),
            vec!["Unknown"]
        );
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1., 2., 3.], &[2., 4., 6.]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1., 2., 3.], &[6., 4., 2.]).unwrap() + 1.0).abs() < 1e-15);
        // Σdx·dy = 4, Σdx² = Σdy² = 5
        assert!((pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(pearson(&[1., 1.], &[1., 2.]), Err(PrepError::ZeroVariance)));
    }

    #[test]
    fn mi_examples() {
        let y: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let x: Vec<String> = y.iter().map(|v| if *v < 50.0 { "lo" } else { "hi" }.to_string()).collect();
        assert!((mutual_information(&x, &y, 2) - 2f64.ln()).abs() < 1e-12);
        let c = vec!["k"; 100];
        assert_eq!(mutual_information(&c, &y, 10), 0.0);
    }

    #[test]
    fn mi_of_independent_labels_is_small() {
        let mut rng = crate::rng::SplitMix64::new(3);
        let n = 10_000;
        let x: Vec<String> = (0..n).map(|_| format!("c{}", rng.below(5))).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        assert!(mutual_information(&x, &y, 10) <= 0.05);
    }

    fn toy_table(cols: &[(&str, &[&str])]) -> RawTable {
        let mut schema_text = String::new();
        for (n, _) in cols {
            schema_text.push_str(&format!("{n} = categorical\n"));
        }
        schema_text.push_str("geolocation = geolocation\ndata_value = target\n");
        let schema = ColumnSchema::parse(&schema_text).unwrap();
        let n = cols[0].1.len();
        let rows = (0..n)
            .map(|i| {
                let mut r: Vec<Option<String>> =
                    cols.iter().map(|(_, v)| Some(v[i].to_string())).collect();
                r.push(Some("POINT (0 0)".into()));
                r.push(Some(i.to_string()));
                r
            })
            .collect();
        RawTable::new(schema, rows).unwrap()
    }

    #[test]
    fn redundant_id_column_dropped() {
        let t = toy_table(&[
            ("question", &["q1", "q2", "q1", "q3"]),
            ("questionid", &["Q01", "Q02", "Q01", "Q03"]),
        ]);
        let names = ["question", "questionid"].iter().map(|s| s.to_string()).collect();
        let r = drop_redundant(&t, &names, &[0, 1, 2, 3]);
        assert_eq!(r.dropped, vec![("questionid".to_string(), "question".to_string())]);
        assert_eq!(r.kept.into_iter().collect::<Vec<_>>(), vec!["question"]);
    }

    #[test]
    fn independent_columns_kept() {
        let t = toy_table(&[("a", &["x", "x", "y", "y"]), ("b", &["u", "v", "u", "v"])]);
        let names = ["a", "b"].iter().map(|s| s.to_string()).collect();
        assert!(drop_redundant(&t, &names, &[0, 1, 2, 3]).dropped.is_empty());
    }

    #[test]
    fn three_way_bijection_keeps_one() {
        // Pairs enumerated by hand on 5 rows: (a,b), (a,c_id), (b,c_id) all 1:1.
        let t = toy_table(&[
            ("a", &["1", "2", "3", "1", "2"]),
            ("b", &["x", "y", "z", "x", "y"]),
            ("c_id", &["p", "q", "r", "p", "q"]),
        ]);
        let names = ["a", "b", "c_id"].iter().map(|s| s.to_string()).collect();
        let r = drop_redundant(&t, &names, &[0, 1, 2, 3, 4]);
        assert_eq!(r.kept.len(), 1);
        assert_eq!(r.dropped[0].0, "c_id");
        assert_eq!(r.dropped[1], ("b".to_string(), "a".to_string()));
    }

    fn scores(methods: &[&[(&str, f64)]]) -> BTreeMap<String, BTreeMap<String, f64>> {
        methods
            .iter()
            .enumerate()
            .map(|(i, m)| {
                (
                    format!("m{i}"),
                    m.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn selection_rules() {
        let one = select_features(&scores(&[&[("a", 0.9), ("b", 0.1)]]), 1);
        assert_eq!(one.into_iter().collect::<Vec<_>>(), vec!["a"]);
        let two = select_features(&scores(&[&[("a", 0.9), ("b", 0.1)], &[("a", 0.1), ("b", -0.8)]]), 1);
        assert_eq!(two.into_iter().collect::<Vec<_>>(), vec!["a", "b"]);
        let tie = select_features(&scores(&[&[("b", 0.5), ("a", -0.5)]]), 1);
        assert_eq!(tie.into_iter().collect::<Vec<_>>(), vec!["a"]);
    }

    #[test]
    fn one_hot_rules() {
        let with_unknown = fit_one_hot(&["B", "A"], true);
        assert_eq!(with_unknown.vocabulary, vec!["A", "B", "Unknown"]);
        assert_eq!(with_unknown.apply(&["B"]).values, vec![0., 1., 0.]);
        assert_eq!(with_unknown.apply(&["C"]).values, vec![0., 0., 1.]);
        let plain = fit_one_hot(&["A", "B", "A"], false);
        let block = apply_one_hot(&plain, &["C"]);
        assert_eq!(block.values, vec![0., 0.]);
        assert_eq!(block.unmapped_rows, vec![0]);
    }

    #[test]
    fn scaler_rules() {
        let s = fit_scaler(&[0., 5., 10.]);
        assert_eq!(apply_scaler(&s, &[0., 5., 10.]), vec![0., 0.5, 1.]);
        assert_eq!(apply_scaler(&fit_scaler(&[3., 3.]), &[3., 3.]), vec![0., 0.]);
        assert_eq!(apply_scaler(&fit_scaler(&[0., 10.]), &[12.]), vec![1.0]);
        assert_eq!(apply_scaler(&fit_scaler(&[0., 10.]), &[-1.]), vec![0.0]);
        let z = fit_scaler(&[1., 3.]);
        assert_eq!(z.scale(3.0, Scaling::ZScore), 1.0);
    }

    fn layout_table() -> RawTable {
        let schema = ColumnSchema::parse(
            "c1 = categorical\nc2 = categorical\nnum = numerical\ngeolocation = geolocation\ndata_value = target\n",
        )
        .unwrap();
        let c1 = ["a", "b", "c", "a", "b", "c"];
        let c2 = ["x", "y", "y", "x", "x", "y"];
        let rows = (0..6)
            .map(|i| {
                vec![
                    Some(c1[i].to_string()),
                    Some(c2[i].to_string()),
                    Some((i * 3).to_string()),
                    Some(format!("POINT (-12{i} 4{i})")),
                    Some((i as f64 * 1.5).to_string()),
                ]
            })
            .collect();
        RawTable::new(schema, rows).unwrap()
    }

    #[test]
    fn assembled_layout() {
        let t = layout_table();
        let config = PrepConfig {
            imputation: ImputationPolicy {
                numeric: NumericImpute::Mean,
                categorical: CategoricalImpute::Mode,
            },
            ..Default::default()
        };
        let rows: Vec<usize> = (0..6).collect();
        let state = PrepState::fit(&t, &rows, &config).unwrap();
        let emb: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64; 8]).collect();
        let m = assemble_matrix(&t, &rows, &state, Some(&emb), true).unwrap();
        // 3 + 2 one-hot, 1 numeric, 2 geo, 8 embedding
        assert_eq!(m.n_cols(), 16);
        assert_eq!(&m.column_names()[..6], &["c1=a", "c1=b", "c1=c", "c2=x", "c2=y", "num"]);
        assert_eq!(&m.column_names()[6..8], &["latitude", "longitude"]);
        assert_eq!(m.column_names()[8], "e0");
        for i in 0..6 {
            let r = m.row(i);
            assert_eq!(r[0] + r[1] + r[2], 1.0);
            assert_eq!(r[3] + r[4], 1.0);
        }
        let no_geo = assemble_matrix(&t, &rows, &state, Some(&emb), false).unwrap();
        assert_eq!(no_geo.n_cols(), 14);
        assert_eq!(no_geo, m.without_groups(&[GroupTag::Geolocation]));

        let empty = assemble_matrix(&t, &[], &state, Some(&emb), true).unwrap();
        assert_eq!(empty.n_rows(), 0);
        assert_eq!(empty.column_names(), m.column_names());

        assert!(matches!(
            assemble_matrix(&t, &rows, &state, Some(&emb[..3]), true),
            Err(PrepError::RowCountMismatch { .. })
        ));
    }

    #[test]
    fn state_file_round_trip() {
        let t = layout_table();
        let state = PrepState::fit(&t, &[0, 1, 2, 3, 4], &PrepConfig::default()).unwrap();
        let bytes = state.to_bytes();
        assert_eq!(&bytes[..5], b"DMVP1");
        assert_eq!(PrepState::from_reader(bytes.as_slice()).unwrap(), state);
        assert!(matches!(PrepState::from_reader(&b"XXXXX"[..]), Err(PrepError::BadMagic)));
        assert!(matches!(
            PrepState::from_reader(&bytes[..bytes.len() - 3]),
            Err(PrepError::Corrupt(_))
        ));
    }

    proptest! {
        #[test]
        fn imputation_preserves_observed(col in proptest::collection::vec(proptest::option::of(-1e6f64..1e6), 1..40)) {
            prop_assume!(col.iter().any(Option::is_some));
            for policy in [NumericImpute::Mean, NumericImpute::Median] {
                let out = impute_numeric(&col, policy).unwrap();
                for (a, b) in col.iter().zip(&out) {
                    if let Some(v) = a { prop_assert_eq!(v, b); }
                    prop_assert!(b.is_finite());
                }
            }
        }

        #[test]
        fn pearson_properties(
            pts in proptest::collection::vec((-100f64..100.0, -100f64..100.0), 3..40),
            a in 0.1f64..10.0,
            b in -50f64..50.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&x, &y) {
                prop_assert!(r.abs() <= 1.0);
                prop_assert!((r - pearson(&y, &x).unwrap()).abs() <= 1e-12);
                let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                prop_assert!((r - pearson(&ax, &y).unwrap()).abs() <= 1e-12);
            }
        }

        #[test]
        fn mi_nonnegative_and_matches_bin_entropy(
            y in proptest::collection::vec(-1e3f64..1e3, 2..200),
            bins in 2usize..12,
            labels in proptest::collection::vec(0u8..4, 200),
        ) {
            let x: Vec<String> = labels[..y.len()].iter().map(|l| l.to_string()).collect();
            prop_assert!(mutual_information(&x, &y, bins) >= 0.0);
            let own: Vec<String> = equal_frequency_bins(&y, bins).iter().map(|b| b.to_string()).collect();
            let mut counts = vec![0usize; bins];
            for b in equal_frequency_bins(&y, bins) { counts[b] += 1; }
            let n = y.len() as f64;
            let h: f64 = counts.iter().filter(|&&c| c > 0).map(|&c| { let p = c as f64 / n; -p * p.ln() }).sum();
            prop_assert!((mutual_information(&own, &y, bins) - h).abs() < 1e-12);
        }

        #[test]
        fn scaled_training_columns_span_unit_interval(col in proptest::collection::vec(-1e6f64..1e6, 2..50)) {
            let s = fit_scaler(&col);
            let out = apply_scaler(&s, &col);
            prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
            if s.max > s.min {
                prop_assert!(out.contains(&0.0) && out.contains(&1.0));
            }
        }
    }
}
