//! Engagement labels, the query-keyed dataset and its train/valid/test split.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventKind, Session};
use crate::features::{
    attribute_events, format_cell, parse_cell, AttributionPolicy, Attribution, FeatureError, QueryFeatureVector,
    FEATURE_NAMES, NUM_FEATURES,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("query `{query}` has widget clicks but no searches")]
    ZeroFrequency { query: String },
    #[error("features and labels share no query")]
    EmptyJoin,
    #[error("invalid split fractions {0:?}: must be nonnegative and sum to 1")]
    InvalidFractions([f64; 3]),
    #[error("cannot split an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("dataset csv: {0}")]
    Csv(String),
}

/// Per-query engagement rate: searches followed by a widget click over searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementLabel {
    pub query: String,
    pub freq: u64,
    pub freq_c: u64,
    pub e: f64,
}

impl EngagementLabel {
    pub fn new(query: impl Into<String>, freq: u64, freq_c: u64) -> Self {
        assert!(freq >= 1, "engagement label needs at least one search");
        EngagementLabel {
            query: query.into(),
            freq,
            freq_c,
            e: freq_c as f64 / freq as f64,
        }
    }
}

/// `freq` counts searches; `freq_c` counts searches with at least one
/// widget click inside the attribution window, so `e` never exceeds 1.
pub fn compute_engagement(sessions: &[Session], policy: &AttributionPolicy) -> Result<Vec<EngagementLabel>, LabelError> {
    let attribution = attribute_events(sessions, policy)?;
    labels_from_attribution(&attribution)
}

pub fn labels_from_attribution(attribution: &Attribution) -> Result<Vec<EngagementLabel>, LabelError> {
    let mut labels = Vec::with_capacity(attribution.groups.len());
    for (query, group) in &attribution.groups {
        if group.searches.is_empty() {
            if group.orphan_widget_clicks > 0 {
                return Err(LabelError::ZeroFrequency { query: query.clone() });
            }
            continue;
        }
        let clicked = group
            .searches
            .iter()
            .filter(|s| s.events.iter().any(|e| e.kind == EventKind::WidgetClick && e.in_window))
            .count();
        labels.push(EngagementLabel::new(query.clone(), group.searches.len() as u64, clicked as u64));
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub features: QueryFeatureVector,
    pub label: EngagementLabel,
    pub split: Split,
}

impl DatasetRow {
    pub fn query(&self) -> &str {
        &self.features.query
    }
}

/// Rows keyed by unique query, sorted by query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.split(s).count();
        (count(Split::Train), count(Split::Valid), count(Split::Test))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub dataset: Dataset,
    /// Queries with features but no label.
    pub unlabeled: Vec<String>,
    /// Queries with a label but no features.
    pub featureless: Vec<String>,
}

impl Assembled {
    pub fn dropped(&self) -> usize {
        self.unlabeled.len() + self.featureless.len()
    }
}

/// Inner join on query. Every row starts in [`Split::Train`].
pub fn assemble_dataset(features: &[QueryFeatureVector], labels: &[EngagementLabel]) -> Result<Assembled, LabelError> {
    let by_query: BTreeMap<&str, &EngagementLabel> = labels.iter().map(|l| (l.query.as_str(), l)).collect();
    let feature_keys: BTreeMap<&str, &QueryFeatureVector> = features.iter().map(|f| (f.query.as_str(), f)).collect();
    let mut rows = Vec::new();
    let mut unlabeled = Vec::new();
    for (query, fv) in &feature_keys {
        match by_query.get(query) {
            Some(label) => rows.push(DatasetRow {
                features: (*fv).clone(),
                label: (*label).clone(),
                split: Split::Train,
            }),
            None => unlabeled.push(query.to_string()),
        }
    }
    let featureless = by_query
        .keys()
        .filter(|q| !feature_keys.contains_key(*q))
        .map(|q| q.to_string())
        .collect();
    if rows.is_empty() {
        return Err(LabelError::EmptyJoin);
    }
    Ok(Assembled {
        dataset: Dataset { rows },
        unlabeled,
        featureless,
    })
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

/// Random split by query. Valid and test get `floor(n * f)` rows each and
/// train keeps the remainder.
pub fn split_dataset(ds: &Dataset, seed: u64, fractions: [f64; 3]) -> Result<Dataset, LabelError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(LabelError::InvalidFractions(fractions));
    }
    if ds.is_empty() {
        return Err(LabelError::EmptyDataset);
    }
    let n = ds.len();
    let n_valid = (n as f64 * fractions[1]).floor() as usize;
    let n_test = (n as f64 * fractions[2]).floor() as usize;

    let mut rows = ds.rows.clone();
    rows.sort_by(|a, b| a.query().cmp(b.query()));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(seed, "split", 0));
    for (rank, &i) in order.iter().enumerate() {
        rows[i].split = if rank < n_valid {
            Split::Valid
        } else if rank < n_valid + n_test {
            Split::Test
        } else {
            Split::Train
        };
    }
    Ok(Dataset { rows })
}

pub fn dataset_csv_header() -> Vec<String> {
    let mut header: Vec<String> = ["query", "split", "e", "freq", "freq_c"].iter().map(|s| s.to_string()).collect();
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    header
}

/// Writes `query,split,e,freq,freq_c,b1..c3`.
pub fn write_dataset_csv<W: Write>(ds: &Dataset, out: W) -> Result<(), LabelError> {
    let err = |e: csv::Error| LabelError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset_csv_header()).map_err(err)?;
    for row in &ds.rows {
        let mut record = vec![
            row.query().to_owned(),
            row.split.to_string(),
            row.label.e.to_string(),
            row.label.freq.to_string(),
            row.label.freq_c.to_string(),
        ];
        record.extend(row.features.values.iter().map(|v| format_cell(*v)));
        w.write_record(&record).map_err(err)?;
    }
    w.flush().map_err(|e| LabelError::Csv(e.to_string()))
}

/// Reads a dataset file. The file does not carry `n_days`, so it comes back as 0.
pub fn read_dataset_csv<R: Read>(input: R) -> Result<Dataset, LabelError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| LabelError::Csv(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != dataset_csv_header() {
        return Err(LabelError::Csv(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let line = i + 2;
        let bad = |msg: String| LabelError::Csv(format!("line {line}: {msg}"));
        let record = record.map_err(|e| bad(e.to_string()))?;
        let query = record[0].to_owned();
        let split: Split = record[1].parse().map_err(bad)?;
        let freq: u64 = record[3].parse().map_err(|e| bad(format!("{e}")))?;
        let freq_c: u64 = record[4].parse().map_err(|e| bad(format!("{e}")))?;
        if freq == 0 {
            return Err(bad("freq must be >= 1".into()));
        }
        let mut values = [None; NUM_FEATURES];
        for (c, slot) in values.iter_mut().enumerate() {
            *slot = parse_cell(&record[5 + c]).map_err(bad)?;
        }
        rows.push(DatasetRow {
            features: QueryFeatureVector {
                query: query.clone(),
                values,
                n_searches: freq as usize,
                n_days: 0,
            },
            label: EngagementLabel::new(query, freq, freq_c),
            split,
        });
    }
    Ok(Dataset { rows })
}
