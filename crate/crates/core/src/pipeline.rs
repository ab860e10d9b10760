//! Stage orchestration over a workspace directory:
//! generate → featurize → label → train → evaluate → importance → rank.
//!
//! Every stage records a key (hash of its config section and input file
//! hashes) and its output hashes in `manifest.json`; a stage whose key and
//! outputs are unchanged is skipped. Concurrent runs on one workspace are
//! refused through a lock file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datagen::{self, DatagenError, GeneratorConfig};
use crate::eval::{self, EvalError, EvalReport, ModelScores, RankedList, Scores, DEFAULT_KS, FREQUENCY_BASELINE};
use crate::events::{parse_event_log, sessionize, EventError, ParseMode};
use crate::features::{
    attribute_events, features_from_attribution, group_features, read_feature_csv, write_feature_csv,
    AttributionPolicy, FeatureError, FeatureGroup, QueryFeatureVector, FEATURE_NAMES,
};
use crate::labels::{
    assemble_dataset, labels_from_attribution, read_dataset_csv, split_dataset, write_dataset_csv, Dataset, LabelError,
    Split, DEFAULT_FRACTIONS,
};
use crate::linear::{fit_linear, LinearError, Penalty, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::model::{feature_columns, GridPoint, ModelError, Predictor, SavedModel, FORMAT_VERSION};
use crate::seed::substream_seed;
use crate::trees::{fit_gbdt, fit_random_forest, ForestConfig, GbdtConfig, TreeError};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".eqr.lock";

/// Regularization strengths tried by default for penalized linear models.
pub const LAMBDA_GRID: [f64; 6] = [1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("workspace is locked by another run ({0}); remove the file if no run is active")]
    Locked(PathBuf),
    #[error("missing artifact {0}; run the producing stage first")]
    MissingArtifact(PathBuf),
    #[error("no model named {0:?} in the config")]
    UnknownModel(String),
    #[error("every grid point of model {name:?} failed; last error: {last}")]
    GridFailed { name: String, last: String },
    #[error(transparent)]
    Events(#[from] EventError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Labels(#[from] LabelError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Io { .. } => "io",
            PipelineError::Locked(_) => "locked",
            PipelineError::MissingArtifact(_) => "missing_artifact",
            PipelineError::UnknownModel(_) => "unknown_model",
            PipelineError::GridFailed { .. } => "grid_failed",
            PipelineError::Events(_) => "events",
            PipelineError::Datagen(_) => "datagen",
            PipelineError::Features(_) => "features",
            PipelineError::Labels(_) => "labels",
            PipelineError::Tree(_) => "trees",
            PipelineError::Linear(_) => "linear",
            PipelineError::Eval(_) => "eval",
            PipelineError::Model(_) => "model",
            PipelineError::Json(_) => "json",
        }
    }

    /// `{"error": kind, "message": text}` for machine consumers.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Artifact locations relative to the workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub log: PathBuf,
    pub ground_truth: PathBuf,
    pub features: PathBuf,
    pub dataset: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            log: "data/events.jsonl".into(),
            ground_truth: "data/ground_truth.csv".into(),
            features: "data/features.csv".into(),
            dataset: "data/dataset.csv".into(),
            models: "models".into(),
            reports: "reports".into(),
        }
    }
}

/// `"all"`, a group name (`"behavioral"`, `"financial"`, `"catalog"`) or an
/// explicit list of feature names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureSelection {
    Named(String),
    List(Vec<String>),
}

impl Default for FeatureSelection {
    fn default() -> Self {
        FeatureSelection::Named("all".into())
    }
}

impl FeatureSelection {
    pub fn resolve(&self) -> Result<Vec<String>, PipelineError> {
        let names: Vec<String> = match self {
            FeatureSelection::Named(n) if n == "all" => FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            FeatureSelection::Named(n) => {
                let group: FeatureGroup = n.parse().map_err(PipelineError::Config)?;
                group_features(group).iter().map(|f| f.name().to_string()).collect()
            }
            FeatureSelection::List(list) => list.clone(),
        };
        if names.is_empty() {
            return Err(PipelineError::Config("empty feature selection".into()));
        }
        feature_columns(&names)?;
        Ok(names)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gbdt,
    Forest,
    Linear,
}

/// Hyperparameter values to try; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub min_leaf: Vec<u64>,
    pub max_features: Vec<usize>,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    #[serde(default)]
    pub features: FeatureSelection,
    #[serde(default)]
    pub gbdt: GbdtConfig,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub grid: Grid,
}

impl ModelSpec {
    fn base(name: &str, kind: ModelKind) -> Self {
        ModelSpec {
            name: name.into(),
            kind,
            features: FeatureSelection::default(),
            gbdt: GbdtConfig {
                subsample: 0.8,
                ..GbdtConfig::default()
            },
            forest: ForestConfig::default(),
            grid: Grid::default(),
        }
    }

    pub fn gbdt(name: &str, features: FeatureSelection) -> Self {
        ModelSpec {
            features,
            grid: Grid {
                learning_rate: vec![0.05, 0.1],
                max_depth: vec![3, 4, 6],
                min_leaf: vec![50],
                ..Grid::default()
            },
            ..Self::base(name, ModelKind::Gbdt)
        }
    }

    pub fn forest(name: &str) -> Self {
        ModelSpec {
            grid: Grid {
                max_features: vec![4, 8],
                min_leaf: vec![5, 20],
                ..Grid::default()
            },
            ..Self::base(name, ModelKind::Forest)
        }
    }

    pub fn linear(name: &str, lambdas: Vec<f64>, alpha: f64) -> Self {
        ModelSpec {
            grid: Grid {
                lambda: lambdas,
                alpha: vec![alpha],
                ..Grid::default()
            },
            ..Self::base(name, ModelKind::Linear)
        }
    }

    /// The configurations the grid expands to, in a fixed order.
    pub fn candidates(&self, seed: u64) -> Vec<Candidate> {
        let g = &self.grid;
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        match self.kind {
            ModelKind::Gbdt => {
                let depths = if g.max_depth.is_empty() { vec![self.gbdt.max_depth] } else { g.max_depth.clone() };
                let leaves = if g.min_leaf.is_empty() { vec![self.gbdt.min_leaf] } else { g.min_leaf.clone() };
                let mut out = Vec::new();
                for eta in or(&g.learning_rate, self.gbdt.learning_rate) {
                    for &depth in &depths {
                        for &leaf in &leaves {
                            out.push(Candidate::Gbdt(GbdtConfig {
                                learning_rate: eta,
                                max_depth: depth,
                                min_leaf: leaf,
                                seed,
                                ..self.gbdt.clone()
                            }));
                        }
                    }
                }
                out
            }
            ModelKind::Forest => {
                let feats: Vec<Option<usize>> = if g.max_features.is_empty() {
                    vec![self.forest.max_features]
                } else {
                    g.max_features.iter().map(|&k| Some(k)).collect()
                };
                let leaves = if g.min_leaf.is_empty() { vec![self.forest.min_leaf] } else { g.min_leaf.clone() };
                let mut out = Vec::new();
                for &mf in &feats {
                    for &leaf in &leaves {
                        out.push(Candidate::Forest(ForestConfig {
                            max_features: mf,
                            min_leaf: leaf,
                            seed,
                            ..self.forest.clone()
                        }));
                    }
                }
                out
            }
            ModelKind::Linear => {
                let mut out = Vec::new();
                for alpha in or(&g.alpha, 0.5) {
                    for lambda in or(&g.lambda, 0.0) {
                        out.push(Candidate::Linear(Penalty::elastic_net(lambda, alpha)));
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Gbdt(GbdtConfig),
    Forest(ForestConfig),
    Linear(Penalty),
}

impl Candidate {
    pub fn params(&self) -> serde_json::Value {
        match self {
            Candidate::Gbdt(c) => serde_json::json!({
                "learning_rate": c.learning_rate, "max_depth": c.max_depth, "min_leaf": c.min_leaf,
            }),
            Candidate::Forest(c) => serde_json::json!({
                "max_features": c.max_features, "min_leaf": c.min_leaf,
            }),
            Candidate::Linear(p) => serde_json::json!({ "lambda": p.lambda, "alpha": p.alpha }),
        }
    }
}

/// The default comparison: GBDT on all features and per group, a random
/// forest and the four linear baselines.
pub fn default_models() -> Vec<ModelSpec> {
    let named = |s: &str| FeatureSelection::Named(s.into());
    vec![
        ModelSpec::gbdt("gbdt", named("all")),
        ModelSpec::gbdt("gbdt_behavioral", named("behavioral")),
        ModelSpec::gbdt("gbdt_financial", named("financial")),
        ModelSpec::gbdt("gbdt_catalog", named("catalog")),
        ModelSpec::forest("random_forest"),
        ModelSpec::linear("linear_regression", vec![0.0], 0.0),
        ModelSpec::linear("ridge", LAMBDA_GRID.to_vec(), 0.0),
        ModelSpec::linear("lasso", LAMBDA_GRID.to_vec(), 1.0),
        ModelSpec::linear("elastic_net", LAMBDA_GRID.to_vec(), 0.5),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    /// Its `seed` field is replaced by the `datagen` substream of `seed`.
    pub generator: GeneratorConfig,
    pub attribution: AttributionPolicy,
    /// Train, valid and test fractions.
    pub split: [f64; 3],
    pub ks: Vec<usize>,
    pub strict_parsing: bool,
    pub models: Vec<ModelSpec>,
    /// Queries listed by `rank`.
    pub rank_top: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            paths: Paths::default(),
            generator: GeneratorConfig::default(),
            attribution: AttributionPolicy::default(),
            split: DEFAULT_FRACTIONS,
            ks: DEFAULT_KS.to_vec(),
            strict_parsing: true,
            models: default_models(),
            rank_top: 100,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let p = &self.paths;
        let all = [&p.log, &p.ground_truth, &p.features, &p.dataset, &p.models, &p.reports];
        if all.iter().collect::<BTreeSet<_>>().len() != all.len() {
            return Err(PipelineError::Config("artifact paths must be distinct".into()));
        }
        self.generated().validate()?;
        self.attribution.validate()?;
        if self.ks.iter().any(|&k| k == 0) {
            return Err(PipelineError::Config("hit@k cut-offs must be >= 1".into()));
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            if m.name.is_empty() || m.name.contains(['/', '\\']) || m.name == FREQUENCY_BASELINE {
                return Err(PipelineError::Config(format!("invalid model name {:?}", m.name)));
            }
            if !names.insert(&m.name) {
                return Err(PipelineError::Config(format!("duplicate model name {:?}", m.name)));
            }
            m.features.resolve()?;
        }
        Ok(())
    }

    /// Generator config with its seed derived from the run seed.
    pub fn generated(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: substream_seed(self.seed, "datagen"),
            ..self.generator.clone()
        }
    }

    pub fn model_seed(&self, name: &str) -> u64 {
        substream_seed(self.seed, &format!("model/{name}"))
    }

    pub fn model(&self, name: &str) -> Result<&ModelSpec, PipelineError> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| PipelineError::UnknownModel(name.into()))
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable"))
}

pub fn hash_file(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

/// What a stage did.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: String,
    pub cached: bool,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

/// Removes the lock file when dropped.
#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A workspace directory plus the config that drives it.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub workspace: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, workspace: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        config.validate()?;
        let workspace = workspace.into();
        fs::create_dir_all(&workspace).map_err(io_err(&workspace))?;
        Ok(Pipeline { config, workspace })
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.workspace.join(rel)
    }

    pub fn model_path(&self, name: &str) -> PathBuf {
        self.path(&self.config.paths.models).join(format!("{name}.json"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.path(&self.config.paths.reports)
    }

    /// Takes the workspace lock; fails if another run holds it.
    pub fn lock(&self) -> Result<WorkspaceLock, PipelineError> {
        let path = self.workspace.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WorkspaceLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn manifest(&self) -> Result<RunManifest, PipelineError> {
        let path = self.workspace.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(RunManifest::default());
        }
        Ok(serde_json::from_str(&fs::read_to_string(&path).map_err(io_err(&path))?)?)
    }

    fn save_manifest(&self, manifest: &RunManifest) -> Result<(), PipelineError> {
        let path = self.workspace.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.workspace).unwrap_or(path).display().to_string()
    }

    fn require(&self, path: &Path) -> Result<(), PipelineError> {
        if path.exists() {
            Ok(())
        } else {
            Err(PipelineError::MissingArtifact(path.to_path_buf()))
        }
    }

    /// Runs `body` unless the manifest shows the same key and intact outputs.
    /// `body` returns the files it wrote.
    fn stage<P: Serialize>(
        &self,
        name: &str,
        params: &P,
        inputs: &[PathBuf],
        body: impl FnOnce() -> Result<Vec<PathBuf>, PipelineError>,
    ) -> Result<StageOutcome, PipelineError> {
        let mut input_hashes = BTreeMap::new();
        for p in inputs {
            self.require(p)?;
            input_hashes.insert(self.rel(p), hash_file(p)?);
        }
        let key = hash_json(&(name, params, &input_hashes));
        let mut manifest = self.manifest()?;
        if let Some(rec) = manifest.stages.get(name) {
            if rec.key == key && self.outputs_intact(&rec.outputs)? {
                return Ok(StageOutcome {
                    stage: name.into(),
                    cached: true,
                    outputs: rec.outputs.clone(),
                    seconds: 0.0,
                });
            }
        }
        let start = Instant::now();
        let written = body()?;
        let seconds = start.elapsed().as_secs_f64();
        let mut outputs = BTreeMap::new();
        for p in &written {
            outputs.insert(self.rel(p), hash_file(p)?);
        }
        manifest.tool_version = TOOL_VERSION.into();
        manifest.config_hash = self.config.hash();
        manifest.stages.insert(
            name.into(),
            StageRecord {
                key,
                inputs: input_hashes,
                outputs: outputs.clone(),
                seconds,
            },
        );
        self.save_manifest(&manifest)?;
        Ok(StageOutcome {
            stage: name.into(),
            cached: false,
            outputs,
            seconds,
        })
    }

    fn outputs_intact(&self, outputs: &BTreeMap<String, String>) -> Result<bool, PipelineError> {
        for (rel, hash) in outputs {
            let p = self.workspace.join(rel);
            if !p.exists() || &hash_file(&p)? != hash {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn ensure_parent(path: &Path) -> Result<(), PipelineError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        Ok(())
    }

    /// Simulates the event log and writes the ground-truth sidecar for the
    /// queries that occur in it.
    pub fn generate(&self) -> Result<StageOutcome, PipelineError> {
        let cfg = self.config.generated();
        let log = self.path(&self.config.paths.log);
        let truth = self.path(&self.config.paths.ground_truth);
        self.stage("generate", &cfg, &[], || {
            Self::ensure_parent(&log)?;
            Self::ensure_parent(&truth)?;
            let archetypes = datagen::generate_queries(&cfg)?;
            let sessions = datagen::simulate_sessions(&archetypes, &cfg)?;
            datagen::emit_log(&sessions, &log)?;
            let seen: BTreeSet<&str> = sessions.iter().flat_map(|s| s.events.iter().map(|e| e.query.as_str())).collect();
            let observed: Vec<_> = archetypes.iter().filter(|a| seen.contains(a.query.as_str())).cloned().collect();
            datagen::write_ground_truth(&observed, &cfg, &truth)?;
            Ok(vec![log.clone(), truth.clone()])
        })
    }

    fn attribution_of(&self, log: &Path) -> Result<crate::features::Attribution, PipelineError> {
        let parsed = parse_event_log(log, ParseMode::from_strict(self.config.strict_parsing))?;
        let sessions = sessionize(parsed.events);
        Ok(attribute_events(&sessions, &self.config.attribution)?)
    }

    pub fn featurize(&self) -> Result<StageOutcome, PipelineError> {
        let log = self.path(&self.config.paths.log);
        let out = self.path(&self.config.paths.features);
        let params = (&self.config.attribution, self.config.strict_parsing);
        self.stage("featurize", &params, &[log.clone()], || {
            let attribution = self.attribution_of(&log)?;
            let vectors = features_from_attribution(&attribution, &self.config.attribution);
            Self::ensure_parent(&out)?;
            let file = File::create(&out).map_err(io_err(&out))?;
            write_feature_csv(&vectors, BufWriter::new(file))?;
            Ok(vec![out.clone()])
        })
    }

    pub fn label(&self) -> Result<StageOutcome, PipelineError> {
        let log = self.path(&self.config.paths.log);
        let features = self.path(&self.config.paths.features);
        let out = self.path(&self.config.paths.dataset);
        let params = (
            &self.config.attribution,
            self.config.strict_parsing,
            self.config.seed,
            self.config.split,
        );
        self.stage("label", &params, &[log.clone(), features.clone()], || {
            let attribution = self.attribution_of(&log)?;
            let labels = labels_from_attribution(&attribution)?;
            let vectors = read_feature_csv(File::open(&features).map_err(io_err(&features))?)?;
            let dataset = if labels.is_empty() && vectors.is_empty() {
                Dataset::default()
            } else {
                let assembled = assemble_dataset(&vectors, &labels)?;
                split_dataset(&assembled.dataset, self.config.seed, self.config.split)?
            };
            Self::ensure_parent(&out)?;
            let file = File::create(&out).map_err(io_err(&out))?;
            write_dataset_csv(&dataset, BufWriter::new(file))?;
            Ok(vec![out.clone()])
        })
    }

    pub fn load_dataset(&self) -> Result<Dataset, PipelineError> {
        let path = self.path(&self.config.paths.dataset);
        self.require(&path)?;
        Ok(read_dataset_csv(File::open(&path).map_err(io_err(&path))?)?)
    }

    /// Grid-searches and saves every configured model.
    pub fn train_all(&self) -> Result<Vec<StageOutcome>, PipelineError> {
        let names: Vec<String> = self.config.models.iter().map(|m| m.name.clone()).collect();
        names.iter().map(|n| self.train(n)).collect()
    }

    pub fn train(&self, name: &str) -> Result<StageOutcome, PipelineError> {
        let spec = self.config.model(name)?.clone();
        let dataset_path = self.path(&self.config.paths.dataset);
        let out = self.model_path(name);
        let seed = self.config.model_seed(name);
        self.stage(&format!("train/{name}"), &(&spec, seed), &[dataset_path], || {
            let dataset = self.load_dataset()?;
            let model = train_model(&spec, &dataset, seed)?;
            Self::ensure_parent(&out)?;
            model.save(&out)?;
            Ok(vec![out.clone()])
        })
    }

    pub fn load_model(&self, name: &str) -> Result<SavedModel, PipelineError> {
        let path = self.model_path(name);
        self.require(&path)?;
        Ok(SavedModel::load(&path)?)
    }

    /// Scores the test split with every trained model. Reports against the
    /// engagement labels always, and against the generator's ground truth
    /// when the sidecar exists.
    pub fn evaluate(&self) -> Result<StageOutcome, PipelineError> {
        let mut inputs = vec![self.path(&self.config.paths.dataset)];
        inputs.extend(self.config.models.iter().map(|m| self.model_path(&m.name)));
        let truth_path = self.path(&self.config.paths.ground_truth);
        if truth_path.exists() {
            inputs.push(truth_path.clone());
        }
        self.stage("evaluate", &self.config.ks, &inputs, || {
            let dataset = self.load_dataset()?;
            let test: Vec<_> = dataset.split(Split::Test).collect();
            let labels: Scores = test.iter().map(|r| (r.query().to_string(), r.label.e)).collect();
            let freq: Scores = test.iter().map(|r| (r.query().to_string(), r.label.freq as f64)).collect();
            let models = self
                .config
                .models
                .par_iter()
                .map(|spec| {
                    let model = self.load_model(&spec.name)?;
                    let scores: Scores = model
                        .score_all(&test.iter().map(|r| r.features.clone()).collect::<Vec<_>>())?
                        .into_iter()
                        .collect();
                    Ok(ModelScores {
                        name: spec.name.clone(),
                        scores,
                        regression: true,
                    })
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;

            let dir = self.reports_dir();
            let scores_dir = dir.join("scores");
            fs::create_dir_all(&scores_dir).map_err(io_err(&scores_dir))?;
            let mut written = Vec::new();
            let reports = eval::evaluate_all(&models, &labels, &freq, &self.config.ks)?;
            written.extend(write_reports(&dir, "evaluation", &reports)?);
            if truth_path.exists() {
                let all: BTreeMap<String, f64> = datagen::read_ground_truth(&truth_path)?
                    .into_iter()
                    .map(|r| (r.query, r.e_star))
                    .collect();
                let truth = labels
                    .keys()
                    .map(|q| {
                        all.get(q).map(|e| (q.clone(), *e)).ok_or_else(|| {
                            PipelineError::Eval(EvalError::KeyMismatch(format!("{q:?} missing from ground truth")))
                        })
                    })
                    .collect::<Result<Scores, _>>()?;
                let reports = eval::evaluate_all(&models, &truth, &freq, &self.config.ks)?;
                written.extend(write_reports(&dir, "evaluation_ground_truth", &reports)?);
            }
            for m in models.iter().chain(std::iter::once(&ModelScores {
                name: FREQUENCY_BASELINE.into(),
                scores: freq.clone(),
                regression: false,
            })) {
                let path = scores_dir.join(format!("{}.csv", m.name));
                let file = File::create(&path).map_err(io_err(&path))?;
                eval::write_score_dump(&m.scores, &labels, BufWriter::new(file))?;
                written.push(path);
            }
            Ok(written)
        })
    }

    /// Per-feature gain, weight and cover for every tree model.
    pub fn importance(&self) -> Result<StageOutcome, PipelineError> {
        let trees: Vec<&ModelSpec> = self.config.models.iter().filter(|m| m.kind != ModelKind::Linear).collect();
        let inputs: Vec<PathBuf> = trees.iter().map(|m| self.model_path(&m.name)).collect();
        self.stage("importance", &(), &inputs, || {
            let dir = self.reports_dir();
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let mut written = Vec::new();
            for spec in &trees {
                let report = self.load_model(&spec.name)?.importance()?;
                let path = dir.join(format!("importance_{}.csv", spec.name));
                let file = File::create(&path).map_err(io_err(&path))?;
                report.write_csv(BufWriter::new(file)).map_err(io_err(&path))?;
                written.push(path);
            }
            Ok(written)
        })
    }

    /// Featurizes `log` (default: the workspace log), scores it with model
    /// `name` and returns the `top` highest-scoring queries.
    pub fn rank(&self, name: &str, log: Option<&Path>, top: usize) -> Result<RankedList, PipelineError> {
        self.config.model(name)?;
        let model = self.load_model(name)?;
        let log = log.map(Path::to_path_buf).unwrap_or_else(|| self.path(&self.config.paths.log));
        self.require(&log)?;
        let attribution = self.attribution_of(&log)?;
        let vectors = features_from_attribution(&attribution, &self.config.attribution);
        rank_vectors(&model, &vectors, top)
    }

    /// [`Pipeline::rank`] and writes `rank,query,score` to `out`
    /// (default `reports/ranked_<name>.csv`).
    pub fn rank_to_file(
        &self,
        name: &str,
        log: Option<&Path>,
        top: usize,
        out: Option<&Path>,
    ) -> Result<(RankedList, PathBuf), PipelineError> {
        let ranked = self.rank(name, log, top)?;
        let path = out
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.reports_dir().join(format!("ranked_{name}.csv")));
        Self::ensure_parent(&path)?;
        let file = File::create(&path).map_err(io_err(&path))?;
        write_ranked_csv(&ranked, BufWriter::new(file)).map_err(io_err(&path))?;
        Ok((ranked, path))
    }

    /// generate, featurize, label, train, evaluate, importance, then rank
    /// the workspace log with the first model.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>, PipelineError> {
        let mut out = vec![self.generate()?, self.featurize()?, self.label()?];
        out.extend(self.train_all()?);
        out.push(self.evaluate()?);
        out.push(self.importance()?);
        if let Some(first) = self.config.models.first() {
            self.rank_to_file(&first.name, None, self.config.rank_top, None)?;
        }
        Ok(out)
    }
}

fn write_reports(dir: &Path, stem: &str, reports: &[EvalReport]) -> Result<Vec<PathBuf>, PipelineError> {
    let txt = dir.join(format!("{stem}.txt"));
    fs::write(&txt, eval::render_table(reports)).map_err(io_err(&txt))?;
    let csv = dir.join(format!("{stem}.csv"));
    eval::write_report_csv(reports, BufWriter::new(File::create(&csv).map_err(io_err(&csv))?))?;
    let json = dir.join(format!("{stem}.json"));
    eval::write_report_json(reports, BufWriter::new(File::create(&json).map_err(io_err(&json))?))?;
    Ok(vec![txt, csv, json])
}

pub fn rank_vectors(model: &SavedModel, vectors: &[QueryFeatureVector], top: usize) -> Result<RankedList, PipelineError> {
    let ranked = eval::rank_queries(model.score_all(vectors)?)?;
    Ok(eval::rank_queries(ranked.top(top).iter().cloned())?)
}

pub fn write_ranked_csv<W: Write>(ranked: &RankedList, mut out: W) -> std::io::Result<()> {
    writeln!(out, "rank,query,score")?;
    for (i, (q, s)) in ranked.entries().iter().enumerate() {
        writeln!(out, "{},{},{}", i + 1, q, s)?;
    }
    out.flush()
}

type Matrix = Vec<Vec<Option<f64>>>;

fn split_xy(dataset: &Dataset, split: Split, columns: &[usize]) -> (Matrix, Vec<f64>) {
    dataset
        .split(split)
        .map(|r| (r.features.project(columns), r.label.e))
        .unzip()
}

/// Fits every grid candidate on the train split and keeps the one with the
/// lowest validation MSE. Ties go to fewer boosting rounds, then to the
/// larger penalty, then to the earlier grid entry.
pub fn train_model(spec: &ModelSpec, dataset: &Dataset, seed: u64) -> Result<SavedModel, PipelineError> {
    let feature_names = spec.features.resolve()?;
    let columns = feature_columns(&feature_names)?;
    let (xt, yt) = split_xy(dataset, Split::Train, &columns);
    let (xv, yv) = split_xy(dataset, Split::Valid, &columns);
    if xt.is_empty() || xv.is_empty() {
        return Err(PipelineError::Config("train and valid splits must be nonempty".into()));
    }
    let candidates = spec.candidates(seed);
    if candidates.is_empty() {
        return Err(PipelineError::Config(format!("model {:?} has an empty grid", spec.name)));
    }
    let fitted: Vec<Result<(Predictor, f64), PipelineError>> = candidates
        .par_iter()
        .map(|c| {
            let predictor = match c {
                Candidate::Gbdt(cfg) => Predictor::Gbdt(fit_gbdt(&xt, &yt, Some((&xv, &yv)), cfg)?),
                Candidate::Forest(cfg) => Predictor::Forest(fit_random_forest(&xt, &yt, cfg)?),
                Candidate::Linear(p) => Predictor::Linear(fit_linear(&xt, &yt, *p, DEFAULT_TOL, DEFAULT_MAX_ITERS)?),
            };
            let mse = xv
                .iter()
                .zip(&yv)
                .map(|(x, y)| predictor.predict(x).map(|p| (p - y) * (p - y)))
                .sum::<Result<f64, _>>()?
                / yv.len() as f64;
            Ok((predictor, mse))
        })
        .collect();

    let mut grid = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, &Predictor, f64)> = None;
    let mut last_error = None;
    for (i, (c, result)) in candidates.iter().zip(&fitted).enumerate() {
        match result {
            Ok((predictor, mse)) => {
                grid.push(GridPoint {
                    params: c.params(),
                    valid_mse: Some(*mse),
                    error: None,
                });
                let better = match best {
                    None => true,
                    Some((j, bp, bm)) => *mse < bm || (*mse == bm && tie_preferred(predictor, bp, &candidates[i], &candidates[j])),
                };
                if better {
                    best = Some((i, predictor, *mse));
                }
            }
            Err(e) => {
                grid.push(GridPoint {
                    params: c.params(),
                    valid_mse: None,
                    error: Some(e.to_string()),
                });
                last_error = Some(e.to_string());
            }
        }
    }
    let (i, predictor, _) = best.ok_or_else(|| PipelineError::GridFailed {
        name: spec.name.clone(),
        last: last_error.unwrap_or_default(),
    })?;
    Ok(SavedModel {
        format_version: FORMAT_VERSION,
        name: spec.name.clone(),
        feature_names,
        seed,
        params: candidates[i].params(),
        grid,
        predictor: predictor.clone(),
    })
}

fn tie_preferred(a: &Predictor, b: &Predictor, ca: &Candidate, cb: &Candidate) -> bool {
    match (a, b, ca, cb) {
        (Predictor::Gbdt(ma), Predictor::Gbdt(mb), _, _) => ma.rounds() < mb.rounds(),
        (_, _, Candidate::Linear(pa), Candidate::Linear(pb)) => pa.lambda > pb.lambda,
        _ => false,
    }
}
