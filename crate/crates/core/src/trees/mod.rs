//! Regression trees, gradient boosting on squared error, random forests and
//! split-based feature importance.

mod forest;
mod gbdt;
mod importance;
mod tree;

use thiserror::Error;

pub use forest::{fit_random_forest, ForestConfig, ForestModel};
pub use gbdt::{fit_gbdt, GbdtConfig, GbdtModel, RoundStats};
pub use importance::{importance, FeatureImportance, ImportanceReport};
pub use tree::{
    fit_tree, fit_tree_presorted, root_split, Presorted, RegressionTree, SplitCandidate, SplitMode, TreeConfig,
    TreeNode,
};

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("no training rows or no features")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Row-major feature rows; `None` is a missing value.
pub type Rows = [Vec<Option<f64>>];

/// Returns the common row width after checking shape and finiteness.
pub(crate) fn check_rows(rows: &Rows) -> Result<usize, TreeError> {
    let width = rows.first().map(Vec::len).ok_or(TreeError::EmptyInput)?;
    if width == 0 {
        return Err(TreeError::EmptyInput);
    }
    for row in rows {
        if row.len() != width {
            return Err(TreeError::DimensionMismatch {
                expected: width,
                found: row.len(),
            });
        }
        if let Some(v) = row.iter().flatten().find(|v| !v.is_finite()) {
            return Err(TreeError::InvalidInput(format!("non-finite feature value {v}")));
        }
    }
    Ok(width)
}

pub(crate) fn mean_squared_error(pred: &[f64], y: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}
