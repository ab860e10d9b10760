use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree_presorted, Presorted, RegressionTree, SplitMode, TreeConfig};
use super::{check_rows, mean_squared_error, Rows, TreeError};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: u64,
    pub min_gain: f64,
    /// Stop after this many rounds without a new best validation MSE.
    pub early_stopping_rounds: Option<usize>,
    /// Fraction of training rows drawn (without replacement) per round.
    pub subsample: f64,
    /// Fraction of features considered at each split.
    pub colsample_bynode: f64,
    pub split_mode: SplitMode,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_rounds: 300,
            max_depth: 6,
            learning_rate: 0.1,
            min_leaf: 10,
            min_gain: 1e-7,
            early_stopping_rounds: Some(30),
            subsample: 1.0,
            colsample_bynode: 1.0,
            split_mode: SplitMode::Exact,
            seed: 0,
        }
    }
}

impl GbdtConfig {
    fn validate(&self) -> Result<(), TreeError> {
        let bad = |m: &str| Err(TreeError::InvalidConfig(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.colsample_bynode > 0.0 && self.colsample_bynode <= 1.0) {
            return bad("colsample_bynode must lie in (0, 1]");
        }
        if self.early_stopping_rounds == Some(0) {
            return bad("early_stopping_rounds must be >= 1");
        }
        Ok(())
    }

    fn tree_config(&self, n_features: usize) -> TreeConfig {
        let max_features = (self.colsample_bynode < 1.0)
            .then(|| ((self.colsample_bynode * n_features as f64).ceil() as usize).max(1));
        TreeConfig {
            max_depth: Some(self.max_depth),
            min_leaf: self.min_leaf,
            min_gain: self.min_gain,
            max_features,
            split_mode: self.split_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    /// Number of trees in the ensemble after this round.
    pub round: usize,
    pub train_mse: f64,
    pub valid_mse: Option<f64>,
}

/// `predict(x) = base + learning_rate * sum(tree(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
    pub config: GbdtConfig,
    pub history: Vec<RoundStats>,
}

impl GbdtModel {
    pub fn predict(&self, x: &[Option<f64>]) -> Result<f64, TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[Option<f64>]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Number of boosting rounds kept.
    pub fn rounds(&self) -> usize {
        self.trees.len()
    }
}

/// Least-squares gradient boosting. Each round fits a tree to the residuals
/// `y - f(x)`, which is the negative gradient of `0.5 * sum((f(x) - y)^2)`.
///
/// With a validation set and `early_stopping_rounds`, training stops once the
/// validation MSE has not improved for that many rounds and the ensemble is
/// cut back to its best round. Boosting also stops when a round can no longer
/// split the root.
pub fn fit_gbdt(
    train: &Rows,
    train_y: &[f64],
    valid: Option<(&Rows, &[f64])>,
    cfg: &GbdtConfig,
) -> Result<GbdtModel, TreeError> {
    cfg.validate()?;
    let n_features = check_rows(train)?;
    if train_y.len() != train.len() {
        return Err(TreeError::DimensionMismatch {
            expected: train.len(),
            found: train_y.len(),
        });
    }
    if let Some((rows, y)) = valid {
        if !rows.is_empty() && check_rows(rows)? != n_features {
            return Err(TreeError::DimensionMismatch {
                expected: n_features,
                found: rows[0].len(),
            });
        }
        if rows.len() != y.len() {
            return Err(TreeError::DimensionMismatch {
                expected: rows.len(),
                found: y.len(),
            });
        }
    }
    let valid = valid.filter(|(rows, _)| !rows.is_empty());
    let tree_cfg = cfg.tree_config(n_features);
    let data = Presorted::new(train, cfg.split_mode)?;

    let n = train.len();
    let base = train_y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mut valid_pred = valid.map(|(rows, _)| vec![base; rows.len()]);
    let valid_mse = |vp: &Option<Vec<f64>>| vp.as_ref().zip(valid).map(|(p, (_, y))| mean_squared_error(p, y));

    let mut history = vec![RoundStats {
        round: 0,
        train_mse: mean_squared_error(&pred, train_y),
        valid_mse: valid_mse(&valid_pred),
    }];
    let mut best = (history[0].valid_mse.unwrap_or(f64::INFINITY), 0usize);
    let mut trees = Vec::new();
    let mut residual = vec![0.0; n];
    let n_sampled = ((cfg.subsample * n as f64).round() as usize).clamp(1, n);

    for round in 1..=cfg.n_rounds {
        for ((r, y), p) in residual.iter_mut().zip(train_y).zip(&pred) {
            *r = y - p;
        }
        let mut rng = seed::stream(cfg.seed, "gbdt", round as u64);
        let weights: Vec<u32> = if n_sampled < n {
            let mut w = vec![0u32; n];
            for i in sample(&mut rng, n, n_sampled) {
                w[i] = 1;
            }
            w
        } else {
            vec![1; n]
        };
        let tree = fit_tree_presorted(&data, &residual, &weights, &tree_cfg, Some(&mut rng))?;
        if tree.is_leaf() && n_sampled == n {
            break;
        }
        for (p, row) in pred.iter_mut().zip(train) {
            *p += cfg.learning_rate * tree.predict(row);
        }
        if let (Some(vp), Some((rows, _))) = (valid_pred.as_mut(), valid) {
            for (p, row) in vp.iter_mut().zip(rows) {
                *p += cfg.learning_rate * tree.predict(row);
            }
        }
        trees.push(tree);
        let stats = RoundStats {
            round,
            train_mse: mean_squared_error(&pred, train_y),
            valid_mse: valid_mse(&valid_pred),
        };
        if let Some(v) = stats.valid_mse {
            if v < best.0 {
                best = (v, round);
            }
        }
        history.push(stats);
        if let (Some(patience), Some(_)) = (cfg.early_stopping_rounds, valid) {
            if round - best.1 >= patience {
                break;
            }
        }
    }
    if valid.is_some() && cfg.early_stopping_rounds.is_some() {
        trees.truncate(best.1);
    }

    Ok(GbdtModel {
        base,
        learning_rate: cfg.learning_rate,
        n_features,
        trees,
        config: cfg.clone(),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(xs: &[f64]) -> Vec<Vec<Option<f64>>> {
        xs.iter().map(|&x| vec![Some(x)]).collect()
    }

    #[test]
    fn zero_rounds_is_the_label_mean() {
        let cfg = GbdtConfig {
            n_rounds: 0,
            ..GbdtConfig::default()
        };
        let m = fit_gbdt(&rows(&[1.0, 2.0, 3.0]), &[0.1, 0.2, 0.6], None, &cfg).unwrap();
        assert!(m.trees.is_empty());
        assert!((m.predict(&[Some(9.0)]).unwrap() - 0.3).abs() < 1e-15);
        assert!((m.predict(&[None]).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn two_points_fit_exactly_in_one_round() {
        let cfg = GbdtConfig {
            n_rounds: 1,
            max_depth: 1,
            learning_rate: 1.0,
            min_leaf: 1,
            ..GbdtConfig::default()
        };
        let m = fit_gbdt(&rows(&[0.0, 1.0]), &[0.0, 1.0], None, &cfg).unwrap();
        assert_eq!(m.history.last().unwrap().train_mse, 0.0);
        assert_eq!(m.predict(&[Some(0.0)]).unwrap(), 0.0);
        assert_eq!(m.predict(&[Some(1.0)]).unwrap(), 1.0);
    }

    #[test]
    fn dimension_checks() {
        let m = fit_gbdt(&rows(&[0.0, 1.0]), &[0.0, 1.0], None, &GbdtConfig::default()).unwrap();
        assert!(matches!(
            m.predict(&[Some(1.0), None]),
            Err(TreeError::DimensionMismatch { expected: 1, found: 2 })
        ));
        assert!(matches!(
            fit_gbdt(&[], &[], None, &GbdtConfig::default()),
            Err(TreeError::EmptyInput)
        ));
        let bad = GbdtConfig {
            learning_rate: 0.0,
            ..GbdtConfig::default()
        };
        assert!(matches!(
            fit_gbdt(&rows(&[0.0]), &[0.0], None, &bad),
            Err(TreeError::InvalidConfig(_))
        ));
    }

    #[test]
    fn early_stopping_truncates_to_best_round() {
        // validation labels are unrelated to training labels, so the best
        // validation round is early
        let xs: Vec<f64> = (0..60).map(f64::from).collect();
        let y: Vec<f64> = xs.iter().map(|x| ((x * 1.7).sin() + 1.0) / 2.0).collect();
        let vy: Vec<f64> = xs.iter().map(|x| ((x * 0.3).cos() + 1.0) / 2.0).collect();
        let cfg = GbdtConfig {
            n_rounds: 200,
            min_leaf: 1,
            early_stopping_rounds: Some(5),
            ..GbdtConfig::default()
        };
        let train = rows(&xs);
        let m = fit_gbdt(&train, &y, Some((&train, &vy)), &cfg).unwrap();
        let best = m
            .history
            .iter()
            .min_by(|a, b| a.valid_mse.unwrap().total_cmp(&b.valid_mse.unwrap()))
            .unwrap();
        assert_eq!(m.rounds(), best.round);
        assert!(m.history.len() - 1 < 200);
        assert_eq!(m.history.len() - 1, best.round + 5);
    }

    #[test]
    fn subsampling_is_seeded() {
        let xs: Vec<f64> = (0..80).map(|i| f64::from(i) * 0.1).collect();
        let y: Vec<f64> = xs.iter().map(|x| (x * 0.5).sin().abs()).collect();
        let cfg = GbdtConfig {
            n_rounds: 20,
            subsample: 0.5,
            colsample_bynode: 0.5,
            min_leaf: 2,
            seed: 11,
            ..GbdtConfig::default()
        };
        let a = fit_gbdt(&rows(&xs), &y, None, &cfg).unwrap();
        let b = fit_gbdt(&rows(&xs), &y, None, &cfg).unwrap();
        assert_eq!(a, b);
        let c = fit_gbdt(&rows(&xs), &y, None, &GbdtConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.trees, c.trees);
    }
}
