//! Small simulated benchmark shared by the examples.

#![allow(dead_code)]

use eqr::datagen::{generate_queries, simulate_sessions, true_engagement, GeneratorConfig};
use eqr::eval::Scores;
use eqr::features::{attribute_events, features_from_attribution, AttributionPolicy, FEATURE_NAMES};
use eqr::labels::{assemble_dataset, labels_from_attribution, split_dataset, Dataset, Split, DEFAULT_FRACTIONS};

pub type Error = Box<dyn std::error::Error>;

pub struct Bench {
    pub dataset: Dataset,
    /// True engagement of every generated query.
    pub truth: Scores,
}

pub fn small_generator(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        seed,
        n_queries: 1_500,
        n_sessions: 80_000,
        ..GeneratorConfig::default()
    }
}

pub fn bench(seed: u64) -> Result<Bench, Error> {
    let cfg = small_generator(seed);
    let archetypes = generate_queries(&cfg)?;
    let sessions = simulate_sessions(&archetypes, &cfg)?;
    let policy = AttributionPolicy::default();
    let attribution = attribute_events(&sessions, &policy)?;
    let features = features_from_attribution(&attribution, &policy);
    let labels = labels_from_attribution(&attribution)?;
    let dataset = split_dataset(&assemble_dataset(&features, &labels)?.dataset, seed, DEFAULT_FRACTIONS)?;
    let truth = archetypes.iter().map(|a| (a.query.clone(), true_engagement(a, &cfg))).collect();
    Ok(Bench { dataset, truth })
}

pub fn all_columns() -> Vec<usize> {
    (0..FEATURE_NAMES.len()).collect()
}

pub fn all_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Projected rows and labels of one split.
pub fn xy(ds: &Dataset, split: Split, cols: &[usize]) -> (Vec<Vec<Option<f64>>>, Vec<f64>) {
    ds.split(split).map(|r| (r.features.project(cols), r.label.e)).unzip()
}

/// Truth restricted to the queries of one split.
pub fn split_truth(b: &Bench, split: Split) -> Scores {
    b.dataset
        .split(split)
        .map(|r| (r.query().to_string(), b.truth[r.query()]))
        .collect()
}
