//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use eqr::linear::{fit_linear, LinearModel, Penalty};
use eqr::trees::{fit_tree, RegressionTree, TreeConfig, TreeNode};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Pair-enumeration Kendall counts: (n0, ties_x, ties_y, ties_xy, concordant - discordant).
pub fn tau_pairs(x: &[f64], y: &[f64]) -> (i64, i64, i64, i64, i64) {
    let n = x.len();
    let (mut n0, mut tx, mut ty, mut txy, mut s) = (0i64, 0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            n0 += 1;
            let dx = x[i].partial_cmp(&x[j]).unwrap() as i64;
            let dy = y[i].partial_cmp(&y[j]).unwrap() as i64;
            if dx == 0 {
                tx += 1;
            }
            if dy == 0 {
                ty += 1;
            }
            if dx == 0 && dy == 0 {
                txy += 1;
            }
            s += dx * dy;
        }
    }
    (n0, tx, ty, txy, s)
}

pub fn tau_a_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let (n0, _, _, _, s) = tau_pairs(x, y);
    (n0 > 0).then(|| s as f64 / n0 as f64)
}

pub fn tau_b_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let (n0, tx, ty, _, s) = tau_pairs(x, y);
    let (dx, dy) = (n0 - tx, n0 - ty);
    (dx > 0 && dy > 0).then(|| s as f64 / ((dx as f64) * (dy as f64)).sqrt())
}

/// Top-k query set: score descending, then query ascending, by full sort.
pub fn top_k_set(scores: &[(String, f64)], k: usize) -> BTreeSet<String> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(q, _)| q).collect()
}

pub fn hit_oracle(pred: &[(String, f64)], truth: &[(String, f64)], k: usize) -> f64 {
    let p = top_k_set(pred, k);
    let t = top_k_set(truth, k);
    p.intersection(&t).count() as f64 / k as f64
}

#[derive(Debug, Clone, Copy)]
pub struct OracleSplit {
    pub feature: usize,
    pub threshold: f64,
    pub default_left: bool,
    pub gain: f64,
}

fn sse(ys: &[f64]) -> f64 {
    let m = ys.iter().sum::<f64>() / ys.len() as f64;
    ys.iter().map(|y| (y - m) * (y - m)).sum()
}

/// Every admissible root split with its gain recomputed from scratch as the
/// drop in squared error. Thresholds are midpoints of consecutive distinct
/// values; when the feature has no missing rows only one direction is listed,
/// left when the left side holds at least as many rows.
pub fn all_root_splits(rows: &[Vec<Option<f64>>], y: &[f64], min_leaf: usize) -> Vec<OracleSplit> {
    let parent = sse(y);
    let d = rows[0].len();
    let mut out = Vec::new();
    for f in 0..d {
        let mut vals: Vec<f64> = rows.iter().filter_map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        let any_missing = rows.iter().any(|r| r[f].is_none());
        for w in vals.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mut t = a + (b - a) / 2.0;
            if t <= a {
                t = b;
            }
            let n_left_present = rows.iter().filter(|r| r[f].is_some_and(|v| v < t)).count();
            let n_right_present = rows.iter().filter(|r| r[f].is_some_and(|v| v >= t)).count();
            let dirs: Vec<bool> = if any_missing {
                vec![true, false]
            } else {
                vec![n_left_present >= n_right_present]
            };
            for dl in dirs {
                let goes_left = |r: &Vec<Option<f64>>| r[f].map_or(dl, |v| v < t);
                let left: Vec<f64> = rows.iter().zip(y).filter(|(r, _)| goes_left(r)).map(|(_, v)| *v).collect();
                let right: Vec<f64> = rows.iter().zip(y).filter(|(r, _)| !goes_left(r)).map(|(_, v)| *v).collect();
                if left.len() < min_leaf.max(1) || right.len() < min_leaf.max(1) {
                    continue;
                }
                out.push(OracleSplit {
                    feature: f,
                    threshold: t,
                    default_left: dl,
                    gain: parent - sse(&left) - sse(&right),
                });
            }
        }
    }
    out
}

/// Closed-form least squares with intercept via QR; `None` when rank deficient.
pub fn ols_oracle(x: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = x.len();
    let d = x[0].len();
    let a = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    if sv.min() < 1e-8 * sv.max() {
        return None;
    }
    let beta = svd.solve(&b, 1e-12).ok()?;
    Some((beta.iter().skip(1).copied().collect(), beta[0]))
}

/// (total_gain, weight, total_cover) per feature by walking every node.
pub fn importance_walk(trees: &[RegressionTree], d: usize) -> Vec<(f64, u64, u64)> {
    let mut out = vec![(0.0, 0u64, 0u64); d];
    for t in trees {
        for node in &t.nodes {
            if let TreeNode::Split { feature, gain, .. } = node {
                out[*feature].0 += gain;
                out[*feature].1 += 1;
            }
        }
        // cover recomputed from children, not read from the split node
        for node in &t.nodes {
            if let TreeNode::Split { feature, left, right, .. } = node {
                out[*feature].2 += t.nodes[*left].cover() + t.nodes[*right].cover();
            }
        }
    }
    out
}

/// A pipeline config that runs end to end in a few seconds.
pub fn small_config(seed: u64) -> eqr::pipeline::PipelineConfig {
    use eqr::pipeline::{FeatureSelection, ModelSpec, PipelineConfig};
    let mut gbdt = ModelSpec::gbdt("gbdt", FeatureSelection::Named("all".into()));
    gbdt.gbdt.n_rounds = 60;
    gbdt.grid.learning_rate = vec![0.1, 0.3];
    gbdt.grid.max_depth = vec![2, 3];
    gbdt.grid.min_leaf = vec![20];
    let mut forest = ModelSpec::forest("random_forest");
    forest.forest.n_trees = 20;
    forest.grid.max_features = vec![4];
    forest.grid.min_leaf = vec![10];
    let mut cfg = PipelineConfig {
        seed,
        ks: vec![5, 20],
        rank_top: 25,
        models: vec![gbdt, forest, ModelSpec::linear("ridge", vec![1e-2, 1e-1], 0.0)],
        ..PipelineConfig::default()
    };
    cfg.generator.n_queries = 400;
    cfg.generator.n_sessions = 30_000;
    cfg
}

fn near(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + scale)
}

/// Checks the fitted root against the exhaustive candidate list.
pub fn check_root(rows: &[Vec<Option<f64>>], y: &[f64], min_leaf: usize) -> Result<(), String> {
    let cfg = TreeConfig {
        max_depth: Some(1),
        min_leaf: min_leaf as u64,
        ..TreeConfig::default()
    };
    let tree = fit_tree(rows, y, &cfg).map_err(|e| e.to_string())?;
    let cands = all_root_splits(rows, y, min_leaf);
    let sum_sq: f64 = y.iter().map(|v| v * v).sum();
    let best = cands.iter().map(|c| c.gain).fold(f64::NEG_INFINITY, f64::max);
    match tree.nodes[0] {
        TreeNode::Leaf { .. } => {
            if !cands.is_empty() && best > 1e-9 * (1.0 + sum_sq) {
                return Err(format!("leaf but best oracle gain {best}"));
            }
        }
        TreeNode::Split {
            feature,
            threshold,
            default_left,
            gain,
            ..
        } => {
            if !near(gain, best, sum_sq) {
                return Err(format!("gain {gain} vs oracle {best}"));
            }
            let top: Vec<&OracleSplit> = cands.iter().filter(|c| near(c.gain, best, sum_sq)).collect();
            let chosen = top
                .iter()
                .any(|c| c.feature == feature && c.threshold == threshold && c.default_left == default_left);
            if !chosen {
                return Err(format!("split ({feature}, {threshold}, {default_left}) not among {top:?}"));
            }
        }
    }
    Ok(())
}

/// Coefficients and intercept on the raw feature scale.
pub fn raw_coefficients(m: &LinearModel) -> (Vec<f64>, f64) {
    let s = &m.standardizer;
    let mut intercept = m.intercept;
    let mut w = Vec::new();
    for (j, wj) in m.weights.iter().enumerate() {
        if s.scales[j] == 0.0 {
            w.push(0.0);
            continue;
        }
        w.push(wj / s.scales[j]);
        intercept -= wj * s.means[j] / s.scales[j];
    }
    (w, intercept)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_instance(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(50..200);
    let d = rng.random_range(1..9);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|j| normal(&mut rng) * (1.0 + j as f64) + j as f64).collect::<Vec<f64>>())
        .collect();
    let beta: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = x
        .iter()
        .map(|r| 0.5 + r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + 0.3 * normal(&mut rng))
        .collect();
    (x, y)
}

pub fn wrap(x: &[Vec<f64>]) -> Vec<Vec<Option<f64>>> {
    x.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect()
}

/// Largest coefficient-wise gap to closed-form least squares.
pub fn ols_gap(seed: u64) -> Option<f64> {
    let (x, y) = random_instance(seed);
    let (beta, b0) = ols_oracle(&x, &y)?;
    let m = fit_linear(&wrap(&x), &y, Penalty::ols(), 1e-12, 100_000).unwrap();
    let (w, c) = raw_coefficients(&m);
    Some(w.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold((c - b0).abs(), f64::max))
}
