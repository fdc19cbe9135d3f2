//! Stage orchestration: ingest, preprocess, embed, train, evaluate, ablate.
//!
//! Each stage reads the artifacts of earlier stages from the output
//! directory and writes its own atomically (temp file, then rename).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::ablation::{AblationError, AblationSpec};
use crate::config::{ConfigError, RunConfig, BASELINE};
use crate::embed::{self, EmbedError, EmbeddingCache, HttpTransport, Transport};
use crate::eval::{self, EvalError, FoldPredictions, ResidualRecord};
use crate::experiment::{Experiment, ExperimentError, Method, Protocol};
use crate::forest::{ForestError, ForestModel};
use crate::ingest::{self, ColumnSchema, IngestError, RawTable};
use crate::matrix::GroupTag;
use crate::preprocess::{self, PrepError, PrepState};
use crate::report::{
    self, DatasetSummary, HoldoutSummary, PlotInputs, PreprocessingSummary, RunReport, Wallclock,
    REPORT_FORMAT,
};

pub const TABLE_FILE: &str = "table.dmv";
pub const PREP_FILE: &str = "prep.dmvp";
pub const CACHE_FILE: &str = "embeddings.cache";
pub const MODEL_FILE: &str = "model.dmvf";
pub const REPORT_FILE: &str = "report.json";
pub const PLOTS_DIR: &str = "plots";

const TABLE_MAGIC: &str = "DMVT1";
const TABLE_SEPARATOR: &str = "---\n";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing artifact `{artifact}`: run `dmv {stage}` first")]
    MissingArtifact { artifact: String, stage: &'static str },
    #[error("artifact `{artifact}` is unusable: {reason}")]
    BadArtifact { artifact: String, reason: String },
    #[error("invalid input data: {0}")]
    Data(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Ablation(#[from] AblationError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl PipelineError {
    /// 1 for invalid configuration, input data or missing artifacts; 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::MissingArtifact { .. }
            | PipelineError::Data(_)
            | PipelineError::Ingest(_) => 1,
            PipelineError::Embed(EmbedError::AuthMissing(_) | EmbedError::InvalidConfig(_)) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Writes `bytes` to `path` via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Serializes a table as a magic line, its schema, a separator and CSV.
pub fn table_to_bytes(table: &RawTable) -> Vec<u8> {
    let mut out = format!("{TABLE_MAGIC}\n{}{TABLE_SEPARATOR}", table.schema.to_schema_text()).into_bytes();
    table.write_csv(&mut out).expect("writing to memory");
    out
}

pub fn table_from_bytes(bytes: &[u8]) -> std::result::Result<RawTable, String> {
    let text = std::str::from_utf8(bytes).map_err(|e| e.to_string())?;
    let rest = text
        .strip_prefix(TABLE_MAGIC)
        .and_then(|r| r.strip_prefix('\n'))
        .ok_or("bad magic")?;
    let split = rest
        .find(&format!("\n{TABLE_SEPARATOR}"))
        .ok_or("missing schema separator")?;
    let schema = ColumnSchema::parse(&rest[..split + 1]).map_err(|e| e.to_string())?;
    let csv = &rest[split + 1 + TABLE_SEPARATOR.len()..];
    ingest::read_csv(csv.as_bytes(), &schema).map_err(|e| e.to_string())
}

pub struct Pipeline {
    config: RunConfig,
    out: PathBuf,
    transport: Box<dyn Transport + Send>,
    timings: Mutex<BTreeMap<String, f64>>,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            out: config.out_dir(),
            config,
            transport: Box::new(HttpTransport),
            timings: Mutex::new(BTreeMap::new()),
        })
    }

    /// Replaces the HTTP transport used by the remote provider.
    pub fn with_transport(mut self, transport: Box<dyn Transport + Send>) -> Self {
        self.transport = transport;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, name: &str, stage: &'static str) -> Result<PathBuf> {
        let p = self.artifact(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(PipelineError::MissingArtifact {
                artifact: name.to_string(),
                stage,
            })
        }
    }

    fn timed<T>(&self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let r = f();
        log::info!("{stage}: {:.2}s", start.elapsed().as_secs_f64());
        *self
            .timings
            .lock()
            .unwrap()
            .entry(stage.to_string())
            .or_default() += start.elapsed().as_secs_f64();
        r
    }

    fn dropped(&self) -> Vec<GroupTag> {
        if self.config.include_geo {
            Vec::new()
        } else {
            vec![GroupTag::Geolocation]
        }
    }

    fn experiment<'t>(&self, table: &'t RawTable) -> Experiment<'t> {
        Experiment::new(
            table,
            self.config.preprocess.clone(),
            self.config.forest.clone(),
            self.config.holdout_fraction,
            self.config.seed,
        )
    }

    // --- ingest -------------------------------------------------------------

    /// Loads the input CSV and writes `table.dmv`.
    pub fn ingest(&self) -> Result<RawTable> {
        self.timed("ingest", || {
            let schema = match self.config.schema_file() {
                Some(p) => ColumnSchema::from_file(&p)?,
                None => ColumnSchema::cdc_default(),
            };
            let table = ingest::load_csv(&self.config.data_file(), &schema)?;
            if table.labelled_rows().len() < 2 {
                return Err(PipelineError::Data("fewer than two rows have a target value".into()));
            }
            write_atomic(&self.artifact(TABLE_FILE), &table_to_bytes(&table))?;
            Ok(table)
        })
    }

    pub fn load_table(&self) -> Result<RawTable> {
        let path = self.require(TABLE_FILE, "ingest")?;
        table_from_bytes(&fs::read(path)?).map_err(|reason| PipelineError::BadArtifact {
            artifact: TABLE_FILE.into(),
            reason,
        })
    }

    // --- preprocess ---------------------------------------------------------

    /// Fits the preprocessing state on the hold-out training rows and writes `prep.dmvp`.
    pub fn preprocess(&self) -> Result<PrepState> {
        let table = self.load_table()?;
        let exp = self.experiment(&table);
        self.preprocess_with(&exp)
    }

    fn preprocess_with(&self, exp: &Experiment) -> Result<PrepState> {
        self.timed("preprocess", || {
            let state = exp.prep_state(Protocol::Holdout, 0)?;
            write_atomic(&self.artifact(PREP_FILE), &state.to_bytes())?;
            Ok((*state).clone())
        })
    }

    fn load_prep(&self) -> Result<PrepState> {
        let path = self.require(PREP_FILE, "preprocess")?;
        Ok(PrepState::load(&path)?)
    }

    // --- embed --------------------------------------------------------------

    /// Embeds every record for each configured embedding method into `embeddings.cache`.
    pub fn embed(&self) -> Result<usize> {
        let table = self.load_table()?;
        self.embed_with(&table)
    }

    fn texts(&self, table: &RawTable) -> Result<Vec<String>> {
        for c in &self.config.text_columns {
            if table.schema.index_of(c).is_none() {
                return Err(ConfigError::Invalid(format!("text column `{c}` is not in the schema")).into());
            }
        }
        Ok((0..table.n_rows())
            .map(|r| embed::build_text(table, r, &self.config.text_columns))
            .collect())
    }

    fn embed_with(&self, table: &RawTable) -> Result<usize> {
        self.timed("embed", || {
            let texts = self.texts(table)?;
            let path = self.artifact(CACHE_FILE);
            let tmp = tmp_path(&path);
            fs::create_dir_all(&self.out)?;
            if path.is_file() {
                fs::copy(&path, &tmp)?;
            } else {
                fs::File::create(&tmp)?;
            }
            let mut cache = EmbeddingCache::open(&tmp)?;
            for m in &self.config.methods {
                if let Some(provider) = self.config.provider_for(m) {
                    embed::embed_texts(&texts, &provider, &mut cache, self.transport.as_ref())?;
                }
            }
            fs::File::open(&tmp)?.sync_all()?;
            fs::rename(&tmp, &path)?;
            Ok(cache.len())
        })
    }

    /// Builds the configured methods, reading embeddings from the cache.
    pub fn methods(&self, table: &RawTable) -> Result<Vec<Method>> {
        let needs_cache = self.config.methods.iter().any(|m| m != BASELINE);
        let cache = if needs_cache {
            EmbeddingCache::open(&self.require(CACHE_FILE, "embed")?)?
        } else {
            EmbeddingCache::in_memory()
        };
        let texts = if needs_cache { self.texts(table)? } else { Vec::new() };
        self.config
            .methods
            .iter()
            .map(|name| {
                let Some(provider) = self.config.provider_for(name) else {
                    return Ok(Method::baseline());
                };
                let model = provider.effective_model_id();
                let vectors = texts
                    .iter()
                    .map(|t| cache.get(provider.provider_id(), &model, t).map(<[f64]>::to_vec))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| PipelineError::MissingArtifact {
                        artifact: format!("{CACHE_FILE} entries for `{name}`"),
                        stage: "embed",
                    })?;
                Ok(Method::with_embeddings(name.clone(), vectors))
            })
            .collect()
    }

    // --- train --------------------------------------------------------------

    /// Trains the primary method on the hold-out training rows and writes `model.dmvf`.
    pub fn train(&self) -> Result<ForestModel> {
        let table = self.load_table()?;
        let prep = self.load_prep()?;
        let exp = self.experiment(&table);
        exp.seed_prep_state(Protocol::Holdout, 0, prep);
        let methods = self.methods(&table)?;
        self.train_with(&exp, &methods)
    }

    fn primary<'m>(&self, methods: &'m [Method]) -> &'m Method {
        let name = self.config.primary_method();
        methods.iter().find(|m| m.name == name).unwrap_or(&methods[0])
    }

    fn train_with(&self, exp: &Experiment, methods: &[Method]) -> Result<ForestModel> {
        self.timed("train", || {
            let (model, _) = exp.fit_fold(self.primary(methods), Protocol::Holdout, 0, &self.dropped())?;
            write_atomic(&self.artifact(MODEL_FILE), &model.to_bytes())?;
            Ok(model)
        })
    }

    // --- evaluate -----------------------------------------------------------

    /// Hold-out and cross-validated metrics for every method; writes
    /// `report.json`, residual exports and plots.
    pub fn evaluate(&self) -> Result<RunReport> {
        let table = self.load_table()?;
        let prep = self.load_prep()?;
        let model_path = self.require(MODEL_FILE, "train")?;
        let exp = self.experiment(&table);
        exp.seed_prep_state(Protocol::Holdout, 0, prep);
        let methods = self.methods(&table)?;
        let model = crate::forest::load_model(&model_path)?;
        let report = self.evaluate_with(&exp, &methods, &model)?;
        self.write_report(&report, &table, &exp, &methods)?;
        Ok(report)
    }

    fn evaluate_with(&self, exp: &Experiment, methods: &[Method], model: &ForestModel) -> Result<RunReport> {
        self.timed("evaluate", || {
            let dropped = self.dropped();
            let primary = self.primary(methods);
            let (_, test) = exp.matrices(primary, Protocol::Holdout, 0, &dropped)?;
            if model.feature_names != test.column_names() {
                return Err(PipelineError::BadArtifact {
                    artifact: MODEL_FILE.into(),
                    reason: format!("features do not match `{PREP_FILE}`; rerun `dmv train`"),
                });
            }
            let (_, rows) = exp.splits(Protocol::Holdout)?.swap_remove(0);
            exp.seed_predictions(
                primary,
                Protocol::Holdout,
                0,
                &dropped,
                FoldPredictions {
                    rows,
                    y: test.target().to_vec(),
                    y_hat: model.predict_matrix(&test)?,
                },
            );

            let table = exp.table();
            let state = exp.prep_state(Protocol::Holdout, 0)?;
            let (train_rows, test_rows) = exp.splits(Protocol::Holdout)?.swap_remove(0);
            let mut holdout = HoldoutSummary {
                test_fraction: self.config.holdout_fraction,
                n_train: train_rows.len(),
                n_test: test_rows.len(),
                include_geo: self.config.include_geo,
                metrics: BTreeMap::new(),
                residual_files: BTreeMap::new(),
            };
            let mut encoded_width = BTreeMap::new();
            let mut cross_validation = BTreeMap::new();
            for m in methods {
                let outcome = exp.evaluate(m, Protocol::Holdout, &dropped)?;
                holdout.metrics.insert(m.name.clone(), outcome.summary());
                holdout
                    .residual_files
                    .insert(m.name.clone(), format!("{PLOTS_DIR}/residuals_{}.csv", m.name));
                encoded_width.insert(m.name.clone(), exp.matrices(m, Protocol::Holdout, 0, &[])?.0.n_cols());
                let mut per_k = BTreeMap::new();
                for &k in &self.config.cv_folds {
                    per_k.insert(format!("cv{k}"), exp.evaluate(m, Protocol::KFold(k), &dropped)?.cv());
                }
                cross_validation.insert(m.name.clone(), per_k);
            }
            Ok(RunReport {
                format: REPORT_FORMAT.into(),
                config: self.config.clone(),
                primary_method: primary.name.clone(),
                dataset: DatasetSummary {
                    rows: table.n_rows(),
                    labelled_rows: exp.labelled_rows().len(),
                    columns: table.schema.len(),
                    missing_rate: table.missing_rates(),
                },
                preprocessing: PreprocessingSummary {
                    imputation: state.policy,
                    scaling: state.scaling,
                    selected_features: state.selected.clone(),
                    redundant_dropped: state.redundant.clone(),
                    scores: state.scores.clone(),
                    encoded_width,
                },
                holdout,
                cross_validation,
                ablation: None,
                artifacts: Vec::new(),
                wallclock: Wallclock::default(),
            })
        })
    }

    fn holdout_residuals(&self, exp: &Experiment, methods: &[Method]) -> Result<BTreeMap<String, Vec<ResidualRecord>>> {
        let mut out = BTreeMap::new();
        for m in methods {
            let outcome = exp.evaluate(m, Protocol::Holdout, &self.dropped())?;
            let fold = &outcome.folds[0];
            let mut records = eval::residuals(&fold.y, &fold.y_hat)?;
            for (r, &row) in records.iter_mut().zip(&fold.rows) {
                r.index = row;
            }
            out.insert(m.name.clone(), records);
        }
        Ok(out)
    }

    fn plot_inputs(&self, table: &RawTable, exp: &Experiment, methods: &[Method]) -> Result<PlotInputs> {
        let (lat, lon) = preprocess::geolocation_columns(table)?;
        Ok(PlotInputs {
            geolocations: lat
                .iter()
                .zip(&lon)
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .collect(),
            residuals: self.holdout_residuals(exp, methods)?,
        })
    }

    fn write_report(&self, report: &RunReport, table: &RawTable, exp: &Experiment, methods: &[Method]) -> Result<RunReport> {
        let inputs = self.plot_inputs(table, exp, methods)?;
        let mut report = report.clone();
        let plots = report::emit_plots(&report, &inputs, &self.artifact(PLOTS_DIR))?;
        let mut artifacts: Vec<String> = [TABLE_FILE, PREP_FILE, CACHE_FILE, MODEL_FILE]
            .iter()
            .filter(|f| self.artifact(f).is_file())
            .map(|f| f.to_string())
            .chain([REPORT_FILE.to_string()])
            .chain(report.artifacts.iter().cloned())
            .chain(plots)
            .collect();
        artifacts.sort();
        artifacts.dedup();
        report.artifacts = artifacts;
        report.wallclock = Wallclock {
            generated_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            stage_seconds: self.timings.lock().unwrap().clone(),
        };
        write_atomic(&self.artifact(REPORT_FILE), report.to_json().as_bytes())?;
        Ok(report)
    }

    pub fn load_report(&self) -> Result<RunReport> {
        let path = self.require(REPORT_FILE, "evaluate")?;
        RunReport::from_json(&fs::read_to_string(path)?).map_err(|e| PipelineError::BadArtifact {
            artifact: REPORT_FILE.into(),
            reason: e.to_string(),
        })
    }

    // --- ablate -------------------------------------------------------------

    fn ablation_spec(&self, methods: &[Method]) -> Result<AblationSpec> {
        Ok(AblationSpec {
            groups: self.config.ablation_groups()?,
            methods: methods.to_vec(),
            protocols: self.config.protocols()?,
        })
    }

    /// Runs the configured ablations and merges them into `report.json`.
    pub fn ablate(&self) -> Result<RunReport> {
        let mut report = self.load_report()?;
        let table = self.load_table()?;
        let prep = self.load_prep()?;
        let exp = self.experiment(&table);
        exp.seed_prep_state(Protocol::Holdout, 0, prep);
        let methods = self.methods(&table)?;
        report.ablation = Some(self.timed("ablate", || Ok(exp.ablate(&self.ablation_spec(&methods)?)?))?);
        self.write_report(&report, &table, &exp, &methods)
    }

    // --- everything ---------------------------------------------------------

    /// Every stage in one process, sharing fitted states and predictions.
    pub fn run(&self) -> Result<RunReport> {
        self.ingest()?;
        let table = self.load_table()?;
        let exp = self.experiment(&table);
        self.preprocess_with(&exp)?;
        self.embed_with(&table)?;
        let methods = self.methods(&table)?;
        self.train_with(&exp, &methods)?;
        let model = crate::forest::load_model(&self.artifact(MODEL_FILE))?;
        let mut report = self.evaluate_with(&exp, &methods, &model)?;
        report.ablation = Some(self.timed("ablate", || Ok(exp.ablate(&self.ablation_spec(&methods)?)?))?);
        self.write_report(&report, &table, &exp, &methods)
    }
}
