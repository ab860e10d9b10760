use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree_presorted, Presorted, RegressionTree, SplitMode, TreeConfig};
use super::{check_rows, Rows, TreeError};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows full-depth trees.
    pub max_depth: Option<usize>,
    pub min_leaf: u64,
    /// Features drawn per split; `None` uses all of them.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub split_mode: SplitMode,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_leaf: 5,
            max_features: Some(4),
            bootstrap: true,
            split_mode: SplitMode::Exact,
            seed: 0,
        }
    }
}

/// Bagged regression trees; the prediction is the mean tree output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
    pub config: ForestConfig,
}

impl ForestModel {
    pub fn predict(&self, x: &[Option<f64>]) -> Result<f64, TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }
}

/// Tree `t` draws its bootstrap sample and split features from its own
/// stream, so the forest is the same whatever the thread count.
pub fn fit_random_forest(rows: &Rows, y: &[f64], cfg: &ForestConfig) -> Result<ForestModel, TreeError> {
    let n_features = check_rows(rows)?;
    if y.len() != rows.len() {
        return Err(TreeError::DimensionMismatch {
            expected: rows.len(),
            found: y.len(),
        });
    }
    if cfg.n_trees == 0 {
        return Err(TreeError::InvalidConfig("n_trees must be >= 1".into()));
    }
    let tree_cfg = TreeConfig {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        min_gain: 0.0,
        max_features: cfg.max_features,
        split_mode: cfg.split_mode,
    };
    tree_cfg.validate()?;
    let data = Presorted::new(rows, cfg.split_mode)?;
    let n = rows.len();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::stream(cfg.seed, "forest", t as u64);
            let weights = if cfg.bootstrap {
                let mut w = vec![0u32; n];
                for _ in 0..n {
                    w[rng.random_range(0..n)] += 1;
                }
                w
            } else {
                vec![1u32; n]
            };
            fit_tree_presorted(&data, y, &weights, &tree_cfg, Some(&mut rng))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ForestModel {
        n_features,
        trees,
        config: cfg.clone(),
    })
}
