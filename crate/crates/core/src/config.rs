//! Run configuration: a sectioned TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{ProviderConfig, ProviderKind, DEFAULT_TEXT_COLUMNS};
use crate::experiment::Protocol;
use crate::forest::ForestConfig;
use crate::matrix::GroupTag;
use crate::preprocess::PrepConfig;

pub const BASELINE: &str = "baseline";
pub const LOCAL_EMBED: &str = "local-embed";
pub const REMOTE_EMBED: &str = "remote-embed";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Group name to group tags (`geolocation`, `numeric`, `embedding`,
    /// `onehot:<column>`).
    pub groups: BTreeMap<String, Vec<String>>,
    /// `holdout` and/or `cv<k>`; empty means hold-out plus every `cv_folds` k.
    pub protocols: Vec<String>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            groups: BTreeMap::from([("geolocation".into(), vec!["geolocation".into()])]),
            protocols: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Input CSV, relative to the config file.
    pub data_path: PathBuf,
    /// Optional `name = role` schema file; the built-in survey schema otherwise.
    pub schema_path: Option<PathBuf>,
    /// Relative to the config file unless overridden on the command line.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    /// Feeds every stochastic component: splits, folds, forests, embedder.
    pub seed: u64,
    pub include_geo: bool,
    pub holdout_fraction: f64,
    pub cv_folds: Vec<usize>,
    /// Any of `baseline`, `local-embed`, `remote-embed`.
    pub methods: Vec<String>,
    pub text_columns: Vec<String>,
    pub preprocess: PrepConfig,
    pub embed: ProviderConfig,
    pub forest: ForestConfig,
    pub ablation: AblationConfig,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: PathBuf::new(),
            schema_path: None,
            output_dir: PathBuf::from("out"),
            seed: 42,
            include_geo: true,
            holdout_fraction: 0.2,
            cv_folds: vec![5, 10],
            methods: vec![BASELINE.into(), LOCAL_EMBED.into()],
            text_columns: DEFAULT_TEXT_COLUMNS.iter().map(|s| s.to_string()).collect(),
            preprocess: PrepConfig::default(),
            embed: ProviderConfig::default(),
            forest: ForestConfig::default(),
            ablation: AblationConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub provider: Option<ProviderKind>,
    pub no_geo: bool,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: RunConfig = toml::from_str(text)?;
        config.base_dir = base_dir.to_path_buf();
        config.propagate_seed();
        Ok(config)
    }

    /// Reads and parses `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// In-memory configuration rooted at `base_dir`.
    pub fn with_base_dir(mut self, base_dir: &Path) -> Self {
        self.base_dir = base_dir.to_path_buf();
        self.propagate_seed();
        self
    }

    fn propagate_seed(&mut self) {
        self.preprocess.seed = self.seed;
        self.forest.random_state = self.seed;
        self.embed.seed = self.seed;
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            // command-line paths are relative to the working directory
            self.output_dir = std::path::absolute(out).unwrap_or_else(|_| out.clone());
        }
        if let Some(kind) = o.provider {
            self.embed.kind = kind;
            let name = embed_method_name(kind);
            for m in &mut self.methods {
                if m == LOCAL_EMBED || m == REMOTE_EMBED {
                    *m = name.to_string();
                }
            }
            self.methods.dedup();
        }
        if o.no_geo {
            self.include_geo = false;
        }
        self.propagate_seed();
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_file(&self) -> PathBuf {
        self.resolve(&self.data_path)
    }

    pub fn schema_file(&self) -> Option<PathBuf> {
        self.schema_path.as_deref().map(|p| self.resolve(p))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// The method whose hold-out model is persisted by the train stage.
    pub fn primary_method(&self) -> &str {
        let name = embed_method_name(self.embed.kind);
        if self.methods.iter().any(|m| m == name) {
            name
        } else {
            BASELINE
        }
    }

    pub fn protocols(&self) -> Result<Vec<Protocol>, ConfigError> {
        if self.ablation.protocols.is_empty() {
            let mut v = vec![Protocol::Holdout];
            v.extend(self.cv_folds.iter().map(|&k| Protocol::KFold(k)));
            return Ok(v);
        }
        self.ablation.protocols.iter().map(|p| parse_protocol(p)).collect()
    }

    pub fn ablation_groups(&self) -> Result<BTreeMap<String, Vec<GroupTag>>, ConfigError> {
        self.ablation
            .groups
            .iter()
            .map(|(name, tags)| {
                let parsed = tags
                    .iter()
                    .map(|t| {
                        GroupTag::parse(t)
                            .ok_or_else(|| ConfigError::Invalid(format!("unknown group tag `{t}` in `{name}`")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((name.clone(), parsed))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.data_path.as_os_str().is_empty() {
            return invalid("`data_path` is required".into());
        }
        let data = self.data_file();
        if !data.is_file() {
            return invalid(format!("data file `{}` does not exist", data.display()));
        }
        if let Some(schema) = self.schema_file() {
            if !schema.is_file() {
                return invalid(format!("schema file `{}` does not exist", schema.display()));
            }
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return invalid(format!("holdout_fraction must be in (0, 1), got {}", self.holdout_fraction));
        }
        if let Some(k) = self.cv_folds.iter().find(|&&k| k < 2) {
            return invalid(format!("cv_folds entries must be >= 2, got {k}"));
        }
        if self.methods.is_empty() {
            return invalid("`methods` must name at least one method".into());
        }
        for m in &self.methods {
            if ![BASELINE, LOCAL_EMBED, REMOTE_EMBED].contains(&m.as_str()) {
                return invalid(format!("unknown method `{m}`"));
            }
        }
        if self.methods.iter().any(|m| m != BASELINE) && self.text_columns.is_empty() {
            return invalid("embedding methods need at least one text column".into());
        }
        if self.preprocess.selection_k < 1 || self.preprocess.mi_bins < 1 {
            return invalid("selection_k and mi_bins must be >= 1".into());
        }
        self.forest
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.embed
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.protocols()?;
        self.ablation_groups()?;
        Ok(())
    }

    /// Provider settings for one embedding method.
    pub fn provider_for(&self, method: &str) -> Option<ProviderConfig> {
        let kind = match method {
            LOCAL_EMBED => ProviderKind::Local,
            REMOTE_EMBED => ProviderKind::Remote,
            _ => return None,
        };
        Some(ProviderConfig {
            kind,
            ..self.embed.clone()
        })
    }

    /// TOML text of the echoed configuration (without the output directory).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn embed_method_name(kind: ProviderKind) -> &'static str {
    match kind {
        ProviderKind::Local => LOCAL_EMBED,
        ProviderKind::Remote => REMOTE_EMBED,
    }
}

pub fn parse_protocol(s: &str) -> Result<Protocol, ConfigError> {
    if s == "holdout" {
        return Ok(Protocol::Holdout);
    }
    s.strip_prefix("cv")
        .and_then(|k| k.parse::<usize>().ok())
        .filter(|&k| k >= 2)
        .map(Protocol::KFold)
        .ok_or_else(|| ConfigError::Invalid(format!("unknown protocol `{s}` (use `holdout` or `cv<k>`)")))
}
