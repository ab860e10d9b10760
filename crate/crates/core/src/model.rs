//! Versioned JSON container for fitted rankers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Feature, QueryFeatureVector};
use crate::linear::{LinearError, LinearModel};
use crate::trees::{importance, ForestModel, GbdtModel, ImportanceReport, RegressionTree, TreeError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("unsupported model format version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("{kind} models have no tree importance")]
    NoImportance { kind: &'static str },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error("model file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "snake_case")]
pub enum Predictor {
    Gbdt(GbdtModel),
    Forest(ForestModel),
    Linear(LinearModel),
}

impl Predictor {
    pub fn kind(&self) -> &'static str {
        match self {
            Predictor::Gbdt(_) => "gbdt",
            Predictor::Forest(_) => "forest",
            Predictor::Linear(_) => "linear",
        }
    }

    pub fn predict(&self, x: &[Option<f64>]) -> Result<f64, ModelError> {
        Ok(match self {
            Predictor::Gbdt(m) => m.predict(x)?,
            Predictor::Forest(m) => m.predict(x)?,
            Predictor::Linear(m) => m.predict(x)?,
        })
    }

    pub fn trees(&self) -> Option<&[RegressionTree]> {
        match self {
            Predictor::Gbdt(m) => Some(&m.trees),
            Predictor::Forest(m) => Some(&m.trees),
            Predictor::Linear(_) => None,
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: serde_json::Value,
    pub valid_mse: Option<f64>,
    /// Why the point could not be fitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    pub name: String,
    /// Input columns, in model order.
    pub feature_names: Vec<String>,
    pub seed: u64,
    /// Chosen hyperparameters.
    pub params: serde_json::Value,
    pub grid: Vec<GridPoint>,
    #[serde(flatten)]
    pub predictor: Predictor,
}

/// Column indices of `names` in the full feature vector.
pub fn feature_columns(names: &[String]) -> Result<Vec<usize>, ModelError> {
    names
        .iter()
        .map(|n| Feature::from_name(n).map(Feature::index).ok_or_else(|| ModelError::UnknownFeature(n.clone())))
        .collect()
}

impl SavedModel {
    pub fn columns(&self) -> Result<Vec<usize>, ModelError> {
        feature_columns(&self.feature_names)
    }

    pub fn score(&self, fv: &QueryFeatureVector) -> Result<f64, ModelError> {
        let cols = self.columns()?;
        self.predictor.predict(&fv.project(&cols))
    }

    /// Scores every vector, keyed by query.
    pub fn score_all(&self, vectors: &[QueryFeatureVector]) -> Result<Vec<(String, f64)>, ModelError> {
        let cols = self.columns()?;
        vectors
            .iter()
            .map(|fv| Ok((fv.query.clone(), self.predictor.predict(&fv.project(&cols))?)))
            .collect()
    }

    pub fn importance(&self) -> Result<ImportanceReport, ModelError> {
        let trees = self.predictor.trees().ok_or(ModelError::NoImportance {
            kind: self.predictor.kind(),
        })?;
        Ok(importance(trees, &self.feature_names))
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        let found = probe.get("format_version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
        if found != FORMAT_VERSION {
            return Err(ModelError::Version { found });
        }
        Ok(serde_json::from_value(probe)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_json()?).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
