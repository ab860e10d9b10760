use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_rows, TreeError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    /// Every midpoint between consecutive distinct values is a candidate.
    Exact,
    /// Candidates are restricted to boundaries between quantile bins.
    Binned { max_bins: usize },
}

impl Default for SplitMode {
    fn default() -> Self {
        SplitMode::Exact
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    /// `None` grows until another stopping rule applies.
    pub max_depth: Option<usize>,
    /// Minimum sample count (with multiplicity) in each child.
    pub min_leaf: u64,
    /// Splits with smaller variance reduction are not taken.
    pub min_gain: f64,
    /// Features drawn per split; `None` considers all.
    pub max_features: Option<usize>,
    pub split_mode: SplitMode,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: Some(6),
            min_leaf: 1,
            min_gain: 0.0,
            max_features: None,
            split_mode: SplitMode::Exact,
        }
    }
}

impl TreeConfig {
    pub(crate) fn validate(&self) -> Result<(), TreeError> {
        if !(self.min_gain.is_finite() && self.min_gain >= 0.0) {
            return Err(TreeError::InvalidConfig("min_gain must be finite and >= 0".into()));
        }
        if self.min_leaf == 0 {
            return Err(TreeError::InvalidConfig("min_leaf must be >= 1".into()));
        }
        if self.max_features == Some(0) {
            return Err(TreeError::InvalidConfig("max_features must be >= 1".into()));
        }
        if let SplitMode::Binned { max_bins } = self.split_mode {
            if max_bins < 2 {
                return Err(TreeError::InvalidConfig("max_bins must be >= 2".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        /// Where rows with a missing value go.
        default_left: bool,
        left: usize,
        right: usize,
        gain: f64,
        cover: u64,
    },
    Leaf {
        value: f64,
        cover: u64,
    },
}

impl TreeNode {
    pub fn cover(&self) -> u64 {
        match *self {
            TreeNode::Split { cover, .. } | TreeNode::Leaf { cover, .. } => cover,
        }
    }
}

/// Binary regression tree stored as an arena; node 0 is the root. Rows go
/// left when `value < threshold`, and follow `default_left` when missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn leaf(value: f64, cover: u64) -> Self {
        RegressionTree {
            nodes: vec![TreeNode::Leaf { value, cover }],
        }
    }

    pub fn predict(&self, x: &[Option<f64>]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value, .. } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let go_left = match x[feature] {
                        Some(v) => v < threshold,
                        None => default_left,
                    };
                    i = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.nodes[0], TreeNode::Leaf { .. })
    }

    pub fn split_nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Split { .. }))
    }
}

/// Column-major copy of the feature matrix with per-feature row orderings,
/// computed once and reused by every tree fit on the same rows.
#[derive(Debug, Clone)]
pub struct Presorted {
    n_rows: usize,
    n_features: usize,
    /// `values[f * n_rows + r]`
    values: Vec<Option<f64>>,
    /// Rows with a present value, ascending by (value, row).
    sorted: Vec<Vec<u32>>,
    /// Quantile bin per `values` slot, when binning is on.
    bins: Option<Vec<u16>>,
}

impl Presorted {
    pub fn new(rows: &[Vec<Option<f64>>], mode: SplitMode) -> Result<Self, TreeError> {
        let n_features = check_rows(rows)?;
        let n_rows = rows.len();
        if n_rows > u32::MAX as usize {
            return Err(TreeError::InvalidInput("too many rows".into()));
        }
        let mut values = Vec::with_capacity(n_rows * n_features);
        for f in 0..n_features {
            values.extend(rows.iter().map(|r| r[f]));
        }
        let mut sorted = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let col = &values[f * n_rows..(f + 1) * n_rows];
            let mut idx: Vec<u32> = (0..n_rows as u32).filter(|&r| col[r as usize].is_some()).collect();
            idx.sort_by(|&a, &b| {
                let (va, vb) = (col[a as usize].unwrap(), col[b as usize].unwrap());
                va.total_cmp(&vb).then(a.cmp(&b))
            });
            sorted.push(idx);
        }
        let bins = match mode {
            SplitMode::Exact => None,
            SplitMode::Binned { max_bins } => {
                let max_bins = max_bins.min(u16::MAX as usize + 1);
                let mut bins = vec![0u16; n_rows * n_features];
                for f in 0..n_features {
                    let col = &values[f * n_rows..(f + 1) * n_rows];
                    let order = &sorted[f];
                    let n_present = order.len();
                    let mut distinct = 0usize;
                    let mut prev: Option<f64> = None;
                    for &r in order {
                        let v = col[r as usize].unwrap();
                        if prev != Some(v) {
                            distinct += 1;
                            prev = Some(v);
                        }
                    }
                    let mut prev: Option<f64> = None;
                    let mut distinct_rank = 0usize;
                    let mut bin = 0usize;
                    for (pos, &r) in order.iter().enumerate() {
                        let v = col[r as usize].unwrap();
                        if prev != Some(v) {
                            bin = if distinct <= max_bins {
                                distinct_rank
                            } else {
                                pos * max_bins / n_present
                            };
                            distinct_rank += 1;
                            prev = Some(v);
                        }
                        bins[f * n_rows + r as usize] = bin as u16;
                    }
                }
                Some(bins)
            }
        };
        Ok(Presorted {
            n_rows,
            n_features,
            values,
            sorted,
            bins,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn value(&self, feature: usize, row: u32) -> Option<f64> {
        self.values[feature * self.n_rows + row as usize]
    }

    fn bin(&self, feature: usize, row: u32) -> u16 {
        match &self.bins {
            Some(b) => b[feature * self.n_rows + row as usize],
            None => 0,
        }
    }
}

/// Best split found for one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub default_left: bool,
    pub gain: f64,
}

struct NodeRows {
    /// Per feature, node rows with a present value in sorted order.
    per_feature: Vec<Vec<u32>>,
    rows: Vec<u32>,
    weight: u64,
    sum: f64,
    /// Weighted sum of squared targets; bounds any achievable gain.
    sum_sq: f64,
}

/// Gains below this fraction of the node's sum of squares are rounding noise.
const GAIN_NOISE: f64 = 1e-12;

fn score(sum: f64, weight: u64) -> f64 {
    sum * sum / weight as f64
}

/// Exact greedy search over `features` (ascending order) for the split with
/// the largest variance reduction. Ties keep the earlier feature and the
/// smaller threshold; with missing rows present, missing-left wins ties.
fn best_split(
    data: &Presorted,
    y: &[f64],
    w: &[u32],
    node: &NodeRows,
    features: &[usize],
    min_leaf: u64,
) -> Option<SplitCandidate> {
    let parent = score(node.sum, node.weight);
    let mut best: Option<SplitCandidate> = None;
    let binned = data.bins.is_some();
    for &f in features {
        let order = &node.per_feature[f];
        if order.len() < 2 {
            continue;
        }
        let (mut pw, mut ps) = (0u64, 0.0f64);
        for &r in order {
            pw += w[r as usize] as u64;
            ps += w[r as usize] as f64 * y[r as usize];
        }
        let (mw, ms) = (node.weight - pw, node.sum - ps);

        let (mut lw, mut ls) = (0u64, 0.0f64);
        for i in 0..order.len() - 1 {
            let r = order[i];
            lw += w[r as usize] as u64;
            ls += w[r as usize] as f64 * y[r as usize];
            let next = order[i + 1];
            let (a, b) = (data.value(f, r).unwrap(), data.value(f, next).unwrap());
            if a == b || (binned && data.bin(f, r) == data.bin(f, next)) {
                continue;
            }
            let (rw, rs) = (pw - lw, ps - ls);
            let mut threshold = a + (b - a) / 2.0;
            if threshold <= a {
                threshold = b;
            }
            let options: &[bool] = if mw == 0 {
                if lw >= rw {
                    &[true]
                } else {
                    &[false]
                }
            } else {
                &[true, false]
            };
            for &default_left in options {
                let (l_w, l_s, r_w, r_s) = if default_left {
                    (lw + mw, ls + ms, rw, rs)
                } else {
                    (lw, ls, rw + mw, rs + ms)
                };
                if l_w < min_leaf || r_w < min_leaf || l_w == 0 || r_w == 0 {
                    continue;
                }
                let gain = score(l_s, l_w) + score(r_s, r_w) - parent;
                if best.is_none_or(|b| gain > b.gain) {
                    best = Some(SplitCandidate {
                        feature: f,
                        threshold,
                        default_left,
                        gain,
                    });
                }
            }
        }
    }
    best
}

pub(crate) struct Grower<'a, R> {
    pub data: &'a Presorted,
    pub y: &'a [f64],
    pub weights: &'a [u32],
    pub cfg: &'a TreeConfig,
    pub rng: Option<&'a mut R>,
}

impl<R: Rng> Grower<'_, R> {
    fn features_for_split(&mut self) -> Vec<usize> {
        let d = self.data.n_features;
        match (self.cfg.max_features, self.rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < d => {
                let mut picked = sample(rng, d, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..d).collect(),
        }
    }

    pub fn grow(mut self) -> RegressionTree {
        let d = self.data.n_features;
        let rows: Vec<u32> = (0..self.data.n_rows as u32).filter(|&r| self.weights[r as usize] > 0).collect();
        let per_feature = (0..d)
            .map(|f| {
                self.data.sorted[f]
                    .iter()
                    .copied()
                    .filter(|&r| self.weights[r as usize] > 0)
                    .collect()
            })
            .collect();
        let (weight, sum, sum_sq) = rows.iter().fold((0u64, 0.0f64, 0.0f64), |(tw, ts, tq), &r| {
            let (wr, yr) = (self.weights[r as usize] as f64, self.y[r as usize]);
            (tw + wr as u64, ts + wr * yr, tq + wr * yr * yr)
        });
        let mut nodes = Vec::new();
        let mut go_left = vec![false; self.data.n_rows];
        self.build(
            NodeRows {
                per_feature,
                rows,
                weight,
                sum,
                sum_sq,
            },
            0,
            &mut nodes,
            &mut go_left,
        );
        RegressionTree { nodes }
    }

    fn build(&mut self, node: NodeRows, depth: usize, nodes: &mut Vec<TreeNode>, go_left: &mut [bool]) -> usize {
        let id = nodes.len();
        let leaf_value = if node.weight > 0 {
            node.sum / node.weight as f64
        } else {
            0.0
        };
        nodes.push(TreeNode::Leaf {
            value: leaf_value,
            cover: node.weight,
        });
        if self.cfg.max_depth.is_some_and(|m| depth >= m) || node.weight < 2 * self.cfg.min_leaf {
            return id;
        }
        let features = self.features_for_split();
        let Some(split) = best_split(self.data, self.y, self.weights, &node, &features, self.cfg.min_leaf) else {
            return id;
        };
        if split.gain < self.cfg.min_gain || split.gain <= GAIN_NOISE * node.sum_sq {
            return id;
        }

        let data = self.data;
        for &r in &node.rows {
            go_left[r as usize] = match data.value(split.feature, r) {
                Some(v) => v < split.threshold,
                None => split.default_left,
            };
        }
        let (mut left, mut right) = (empty_like(&node), empty_like(&node));
        for &r in &node.rows {
            let wr = self.weights[r as usize];
            let side = if go_left[r as usize] { &mut left } else { &mut right };
            side.rows.push(r);
            side.weight += wr as u64;
            let yr = self.y[r as usize];
            side.sum += wr as f64 * yr;
            side.sum_sq += wr as f64 * yr * yr;
        }
        for (f, order) in node.per_feature.iter().enumerate() {
            for &r in order {
                if go_left[r as usize] {
                    left.per_feature[f].push(r);
                } else {
                    right.per_feature[f].push(r);
                }
            }
        }
        let cover = node.weight;
        drop(node);
        let l = self.build(left, depth + 1, nodes, go_left);
        let r = self.build(right, depth + 1, nodes, go_left);
        nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            default_left: split.default_left,
            left: l,
            right: r,
            gain: split.gain,
            cover,
        };
        id
    }
}

fn empty_like(node: &NodeRows) -> NodeRows {
    NodeRows {
        per_feature: vec![Vec::new(); node.per_feature.len()],
        rows: Vec::new(),
        weight: 0,
        sum: 0.0,
        sum_sq: 0.0,
    }
}

/// Root split the grower would choose on unit-weight rows, considering all
/// features. Exposed for auditing split search.
pub fn root_split(data: &Presorted, y: &[f64], min_leaf: u64) -> Option<SplitCandidate> {
    let weights = vec![1u32; data.n_rows];
    let per_feature = data.sorted.clone();
    let rows: Vec<u32> = (0..data.n_rows as u32).collect();
    let node = NodeRows {
        per_feature,
        rows,
        weight: data.n_rows as u64,
        sum: y.iter().sum(),
        sum_sq: y.iter().map(|v| v * v).sum(),
    };
    let features: Vec<usize> = (0..data.n_features).collect();
    best_split(data, y, &weights, &node, &features, min_leaf)
}

/// Fits one regression tree to `targets` (for boosting, the residuals).
/// Leaves hold the mean target of their rows.
pub fn fit_tree(rows: &[Vec<Option<f64>>], targets: &[f64], cfg: &TreeConfig) -> Result<RegressionTree, TreeError> {
    cfg.validate()?;
    let data = Presorted::new(rows, cfg.split_mode)?;
    fit_tree_presorted(&data, targets, &vec![1; rows.len()], cfg, None::<&mut rand_chacha::ChaCha8Rng>)
}

/// Fits on presorted data with per-row multiplicities; rows with weight 0
/// are left out. `rng` drives per-split feature sampling.
pub fn fit_tree_presorted<R: Rng>(
    data: &Presorted,
    targets: &[f64],
    weights: &[u32],
    cfg: &TreeConfig,
    rng: Option<&mut R>,
) -> Result<RegressionTree, TreeError> {
    cfg.validate()?;
    if targets.len() != data.n_rows || weights.len() != data.n_rows {
        return Err(TreeError::DimensionMismatch {
            expected: data.n_rows,
            found: targets.len().min(weights.len()),
        });
    }
    if let Some(bad) = targets.iter().find(|t| !t.is_finite()) {
        return Err(TreeError::InvalidInput(format!("non-finite target {bad}")));
    }
    if weights.iter().all(|&w| w == 0) {
        return Err(TreeError::EmptyInput);
    }
    Ok(Grower {
        data,
        y: targets,
        weights,
        cfg,
        rng,
    }
    .grow())
}
