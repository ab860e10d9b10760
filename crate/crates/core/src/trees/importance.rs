use std::io::Write;

use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, TreeNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    /// Summed variance reduction of every split on the feature.
    pub total_gain: f64,
    /// Number of splits on the feature.
    pub weight: u64,
    /// Summed training-sample count of those splits.
    pub total_cover: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub features: Vec<FeatureImportance>,
}

/// Accumulates gain, split count and cover per feature over all split nodes.
pub fn importance(trees: &[RegressionTree], feature_names: &[String]) -> ImportanceReport {
    let mut features: Vec<FeatureImportance> = feature_names
        .iter()
        .map(|name| FeatureImportance {
            feature: name.clone(),
            total_gain: 0.0,
            weight: 0,
            total_cover: 0,
        })
        .collect();
    for tree in trees {
        for node in &tree.nodes {
            if let TreeNode::Split {
                feature, gain, cover, ..
            } = *node
            {
                let slot = &mut features[feature];
                slot.total_gain += gain;
                slot.weight += 1;
                slot.total_cover += cover;
            }
        }
    }
    ImportanceReport { features }
}

impl ImportanceReport {
    pub fn get(&self, feature: &str) -> Option<&FeatureImportance> {
        self.features.iter().find(|f| f.feature == feature)
    }

    /// Feature names by descending total gain, ties by name.
    pub fn ranked_by_gain(&self) -> Vec<&str> {
        let mut v: Vec<&FeatureImportance> = self.features.iter().collect();
        v.sort_by(|a, b| b.total_gain.total_cmp(&a.total_gain).then_with(|| a.feature.cmp(&b.feature)));
        v.into_iter().map(|f| f.feature.as_str()).collect()
    }

    /// `feature,total_gain,weight,total_cover`
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "feature,total_gain,weight,total_cover")?;
        for f in &self.features {
            writeln!(out, "{},{},{},{}", f.feature, f.total_gain, f.weight, f.total_cover)?;
        }
        out.flush()
    }
}
