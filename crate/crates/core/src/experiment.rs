//! Evaluation protocols over a raw table.
//!
//! An [`Experiment`] owns the split layout (one seeded hold-out split and
//! seeded k-fold assignments over the labelled rows) and fits a fresh
//! [`PrepState`] on every training side, so no statistic leaks from held-out
//! rows. Fitted states and fold predictions are memoized, which lets the
//! evaluation and ablation stages share work inside one process.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, CvResult, EvalError, FoldPredictions, Metrics};
use crate::forest::{self, ForestConfig, ForestError, ForestModel};
use crate::ingest::RawTable;
use crate::matrix::{FeatureMatrix, GroupTag};
use crate::preprocess::{PrepConfig, PrepError, PrepState};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("group tag `{tag}` does not occur in the `{method}` feature matrix")]
    UnknownGroup { method: String, tag: String },
}

/// `(train rows, test rows)` of one fold.
pub type Split = (Vec<usize>, Vec<usize>);

/// How a pipeline variant gets its features: the shared tabular block plus
/// optional per-row embeddings (indexed by table row).
#[derive(Debug, Clone)]
pub struct Method {
    pub name: String,
    pub embeddings: Option<Arc<Vec<Vec<f64>>>>,
}

impl Method {
    pub fn baseline() -> Self {
        Self {
            name: "baseline".into(),
            embeddings: None,
        }
    }

    pub fn with_embeddings(name: impl Into<String>, embeddings: Vec<Vec<f64>>) -> Self {
        Self {
            name: name.into(),
            embeddings: Some(Arc::new(embeddings)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    Holdout,
    KFold(usize),
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Holdout => f.write_str("holdout"),
            Protocol::KFold(k) => write!(f, "cv{k}"),
        }
    }
}

/// Predictions and metrics of one method under one protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub folds: Vec<FoldPredictions>,
    pub per_fold: Vec<Metrics>,
}

impl Outcome {
    /// Hold-out metrics, or the fold mean for k-fold.
    pub fn summary(&self) -> Metrics {
        if self.per_fold.len() == 1 {
            self.per_fold[0]
        } else {
            self.cv().mean
        }
    }

    pub fn cv(&self) -> CvResult {
        CvResult::from_folds(self.per_fold.clone())
    }
}

type PredictionKey = (String, Vec<GroupTag>, Protocol, usize);

pub struct Experiment<'a> {
    table: &'a RawTable,
    labelled: Vec<usize>,
    prep_config: PrepConfig,
    forest_config: ForestConfig,
    holdout_fraction: f64,
    seed: u64,
    prep_cache: Mutex<HashMap<(Protocol, usize), Arc<PrepState>>>,
    predictions: Mutex<HashMap<PredictionKey, FoldPredictions>>,
}

impl<'a> Experiment<'a> {
    pub fn new(
        table: &'a RawTable,
        prep_config: PrepConfig,
        forest_config: ForestConfig,
        holdout_fraction: f64,
        seed: u64,
    ) -> Self {
        Self {
            labelled: table.labelled_rows(),
            table,
            prep_config,
            forest_config,
            holdout_fraction,
            seed,
            prep_cache: Mutex::new(HashMap::new()),
            predictions: Mutex::new(HashMap::new()),
        }
    }

    pub fn table(&self) -> &RawTable {
        self.table
    }

    pub fn labelled_rows(&self) -> &[usize] {
        &self.labelled
    }

    pub fn forest_config(&self) -> &ForestConfig {
        &self.forest_config
    }

    /// `(train, test)` table-row indices for every fold of `protocol`.
    pub fn splits(&self, protocol: Protocol) -> Result<Vec<Split>, ExperimentError> {
        let to_rows = |idx: &[usize]| idx.iter().map(|&i| self.labelled[i]).collect::<Vec<_>>();
        let n = self.labelled.len();
        Ok(match protocol {
            Protocol::Holdout => {
                let (train, test) = eval::holdout_split(n, self.holdout_fraction, self.seed)?;
                vec![(to_rows(&train), to_rows(&test))]
            }
            Protocol::KFold(k) => {
                let folds = eval::kfold_indices(n, k, self.seed)?;
                (0..k)
                    .map(|f| (to_rows(&folds.train_indices(f)), to_rows(&folds.test_indices(f))))
                    .collect()
            }
        })
    }

    /// Preprocessing state fitted on the training side of `fold`.
    pub fn prep_state(&self, protocol: Protocol, fold: usize) -> Result<Arc<PrepState>, ExperimentError> {
        if let Some(s) = self.prep_cache.lock().unwrap().get(&(protocol, fold)) {
            return Ok(s.clone());
        }
        let (train, _) = self.splits(protocol)?.swap_remove(fold);
        let state = Arc::new(PrepState::fit(self.table, &train, &self.prep_config)?);
        self.prep_cache
            .lock()
            .unwrap()
            .insert((protocol, fold), state.clone());
        Ok(state)
    }

    /// Installs an already-fitted state (e.g. loaded from disk) for `fold`.
    pub fn seed_prep_state(&self, protocol: Protocol, fold: usize, state: PrepState) {
        self.prep_cache
            .lock()
            .unwrap()
            .insert((protocol, fold), Arc::new(state));
    }

    /// Train and test matrices of `fold`, with `dropped` groups removed.
    pub fn matrices(
        &self,
        method: &Method,
        protocol: Protocol,
        fold: usize,
        dropped: &[GroupTag],
    ) -> Result<(FeatureMatrix, FeatureMatrix), ExperimentError> {
        let state = self.prep_state(protocol, fold)?;
        let (train, test) = self.splits(protocol)?.swap_remove(fold);
        let emb = method.embeddings.as_deref().map(Vec::as_slice);
        let full_train = state.transform(self.table, &train, emb, true)?;
        for tag in dropped {
            if full_train.group_width(std::slice::from_ref(tag)) == 0 {
                return Err(ExperimentError::UnknownGroup {
                    method: method.name.clone(),
                    tag: tag.to_string(),
                });
            }
        }
        let full_test = state.transform(self.table, &test, emb, true)?;
        Ok((full_train.without_groups(dropped), full_test.without_groups(dropped)))
    }

    /// Fits the forest on the training side of `fold`.
    pub fn fit_fold(
        &self,
        method: &Method,
        protocol: Protocol,
        fold: usize,
        dropped: &[GroupTag],
    ) -> Result<(ForestModel, FeatureMatrix), ExperimentError> {
        let (train, test) = self.matrices(method, protocol, fold, dropped)?;
        Ok((forest::fit(&train, &self.forest_config)?, test))
    }

    /// Records externally computed predictions (e.g. from a persisted model).
    pub fn seed_predictions(
        &self,
        method: &Method,
        protocol: Protocol,
        fold: usize,
        dropped: &[GroupTag],
        preds: FoldPredictions,
    ) {
        let key = (method.name.clone(), canonical(dropped), protocol, fold);
        self.predictions.lock().unwrap().insert(key, preds);
    }

    fn fold_predictions(
        &self,
        method: &Method,
        protocol: Protocol,
        fold: usize,
        dropped: &[GroupTag],
    ) -> Result<FoldPredictions, ExperimentError> {
        let key = (method.name.clone(), canonical(dropped), protocol, fold);
        if let Some(p) = self.predictions.lock().unwrap().get(&key) {
            return Ok(p.clone());
        }
        let (model, test) = self.fit_fold(method, protocol, fold, dropped)?;
        let (_, rows) = self.splits(protocol)?.swap_remove(fold);
        let preds = FoldPredictions {
            rows,
            y: test.target().to_vec(),
            y_hat: model.predict_matrix(&test)?,
        };
        self.predictions.lock().unwrap().insert(key, preds.clone());
        Ok(preds)
    }

    /// Evaluates `method` under `protocol` with `dropped` groups removed.
    pub fn evaluate(
        &self,
        method: &Method,
        protocol: Protocol,
        dropped: &[GroupTag],
    ) -> Result<Outcome, ExperimentError> {
        let n_folds = match protocol {
            Protocol::Holdout => 1,
            Protocol::KFold(k) => k,
        };
        let folds = (0..n_folds)
            .map(|f| self.fold_predictions(method, protocol, f, dropped))
            .collect::<Result<Vec<_>, _>>()?;
        let per_fold = folds
            .iter()
            .map(|p| Metrics::compute(&p.y, &p.y_hat))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Outcome { folds, per_fold })
    }
}

fn canonical(tags: &[GroupTag]) -> Vec<GroupTag> {
    let mut v = tags.to_vec();
    v.sort();
    v.dedup();
    v
}
