//! Query-level features computed from sessionized clickstream events.
//!
//! Sixteen features in three groups: behavioral (`b1`..`b8`), financial
//! (`f1`..`f5`) and catalog (`c1`..`c3`). Non-search events are attributed
//! to the most recent preceding search of the same query in the same session;
//! windowed features only count events within [`AttributionPolicy::window_ms`]
//! of that search.
//!
//! Averaging basis: `b2` and `f1` are per-day rates over the horizon, `f2` is
//! a per-session mean, everything else is a per-search mean.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventKind, Session};

pub const NUM_FEATURES: usize = 16;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid attribution policy: {0}")]
    InvalidPolicy(String),
    #[error("feature csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Behavioral,
    Financial,
    Catalog,
}

impl FromStr for FeatureGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "behavioral" => Ok(FeatureGroup::Behavioral),
            "financial" => Ok(FeatureGroup::Financial),
            "catalog" => Ok(FeatureGroup::Catalog),
            other => Err(format!("unknown feature group `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
    B8,
    F1,
    F2,
    F3,
    F4,
    F5,
    C1,
    C2,
    C3,
}

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::B1,
        Feature::B2,
        Feature::B3,
        Feature::B4,
        Feature::B5,
        Feature::B6,
        Feature::B7,
        Feature::B8,
        Feature::F1,
        Feature::F2,
        Feature::F3,
        Feature::F4,
        Feature::F5,
        Feature::C1,
        Feature::C2,
        Feature::C3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        FEATURE_NAMES[self.index()]
    }

    pub fn group(self) -> FeatureGroup {
        match self.index() {
            0..=7 => FeatureGroup::Behavioral,
            8..=12 => FeatureGroup::Financial,
            _ => FeatureGroup::Catalog,
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| Feature::ALL[i])
    }

    pub fn describe(self) -> &'static str {
        match self {
            Feature::B1 => "add-to-carts attributed to the query, per search",
            Feature::B2 => "searches per day over the horizon",
            Feature::B3 => "add-to-carts within the window, per search",
            Feature::B4 => "result clicks within the window, per search",
            Feature::B5 => "position of the first clicked result",
            Feature::B6 => "add-to-cart events of the query over the horizon, per search",
            Feature::B7 => "milliseconds from search to first windowed add-to-cart",
            Feature::B8 => "results displayed (viewed-product proxy), per search",
            Feature::F1 => "purchase value of the query per day",
            Feature::F2 => "purchase value within the window after the first search, per session",
            Feature::F3 => "same-day purchase value, per search",
            Feature::F4 => "attributed purchase value, per search",
            Feature::F5 => "attributed sponsored purchase value, per search",
            Feature::C1 => "results found, per search",
            Feature::C2 => "results displayed, per search",
            Feature::C3 => "sponsored results displayed, per search",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "b1", "b2", "b3", "b4", "b5", "b6", "b7", "b8", "f1", "f2", "f3", "f4", "f5", "c1", "c2", "c3",
];

/// Features of one group, in column order.
pub fn group_features(group: FeatureGroup) -> Vec<Feature> {
    Feature::ALL.into_iter().filter(|f| f.group() == group).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionPolicy {
    /// Attribution window after a search; 100 minutes by default.
    pub window_ms: i64,
    /// Days in the feature horizon, ending at the last day present in the log.
    pub horizon_days: u32,
    /// Restrict `f3` to purchases on the calendar day of the search.
    pub same_day: bool,
}

impl Default for AttributionPolicy {
    fn default() -> Self {
        AttributionPolicy {
            window_ms: 6_000_000,
            horizon_days: 30,
            same_day: true,
        }
    }
}

impl AttributionPolicy {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.window_ms <= 0 {
            return Err(FeatureError::InvalidPolicy("window_ms must be > 0".into()));
        }
        if self.horizon_days == 0 {
            return Err(FeatureError::InvalidPolicy("horizon_days must be >= 1".into()));
        }
        Ok(())
    }
}

/// A non-search event credited to a search.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedEvent {
    pub kind: EventKind,
    pub timestamp: i64,
    /// Milliseconds since the search.
    pub delta_ms: i64,
    pub day: i64,
    pub position: Option<u32>,
    pub price: Option<f64>,
    pub is_sponsored: Option<bool>,
    pub in_window: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributedSearch {
    /// Index into the session list the attribution was built from.
    pub session: usize,
    pub timestamp: i64,
    pub day: i64,
    pub results_found: u32,
    pub results_displayed: u32,
    pub sponsored_displayed: u32,
    /// Earliest search of this query in its session.
    pub first_in_session: bool,
    pub events: Vec<AttributedEvent>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryGroup {
    pub searches: Vec<AttributedSearch>,
    /// Add-to-carts stamped with the query but without a preceding search.
    pub orphan_carts: usize,
    pub orphan_purchase_value: f64,
    pub orphan_widget_clicks: usize,
    pub orphans: usize,
}

impl QueryGroup {
    fn attributed(&self) -> impl Iterator<Item = (&AttributedSearch, &AttributedEvent)> {
        self.searches.iter().flat_map(|s| s.events.iter().map(move |e| (s, e)))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Attribution {
    pub groups: BTreeMap<String, QueryGroup>,
    /// Non-search events with no preceding matching search.
    pub orphan_events: usize,
    pub horizon_days: u32,
}

/// Credits every non-search event to the most recent earlier search of its
/// query in the same session. Searches before the horizon are dropped along
/// with whatever they would have collected.
pub fn attribute_events(sessions: &[Session], policy: &AttributionPolicy) -> Result<Attribution, FeatureError> {
    policy.validate()?;
    let mut out = Attribution {
        horizon_days: policy.horizon_days,
        ..Attribution::default()
    };
    let Some(last_day) = sessions.iter().flat_map(|s| s.events.iter()).map(|e| e.day()).max() else {
        return Ok(out);
    };
    let first_day = last_day - policy.horizon_days as i64 + 1;

    for (session_idx, session) in sessions.iter().enumerate() {
        // query -> (index into groups[query].searches, search timestamp) of the latest search
        let mut latest: BTreeMap<&str, Option<(usize, i64)>> = BTreeMap::new();
        for event in &session.events {
            let query = event.query.as_str();
            if event.kind == EventKind::Search {
                let in_horizon = event.day() >= first_day;
                let seen_before = latest.contains_key(query);
                if !in_horizon {
                    latest.insert(query, None);
                    continue;
                }
                let group = out.groups.entry(event.query.clone()).or_default();
                group.searches.push(AttributedSearch {
                    session: session_idx,
                    timestamp: event.timestamp,
                    day: event.day(),
                    results_found: event.results_found.unwrap_or(0),
                    results_displayed: event.results_displayed.unwrap_or(0),
                    sponsored_displayed: event.sponsored_displayed.unwrap_or(0),
                    first_in_session: !seen_before,
                    events: Vec::new(),
                });
                latest.insert(query, Some((group.searches.len() - 1, event.timestamp)));
                continue;
            }
            match latest.get(query) {
                Some(Some((idx, search_ts))) => {
                    let delta = event.timestamp - search_ts;
                    let group = out.groups.get_mut(query).expect("group exists for attributed search");
                    group.searches[*idx].events.push(AttributedEvent {
                        kind: event.kind,
                        timestamp: event.timestamp,
                        delta_ms: delta,
                        day: event.day(),
                        position: event.position,
                        price: event.price,
                        is_sponsored: event.is_sponsored,
                        in_window: delta <= policy.window_ms,
                    });
                }
                // matched a search outside the horizon
                Some(None) => {}
                None => {
                    out.orphan_events += 1;
                    if event.day() < first_day {
                        continue;
                    }
                    let group = out.groups.entry(event.query.clone()).or_default();
                    group.orphans += 1;
                    match event.kind {
                        EventKind::AddToCart => group.orphan_carts += 1,
                        EventKind::Purchase => group.orphan_purchase_value += event.price.unwrap_or(0.0),
                        EventKind::WidgetClick => group.orphan_widget_clicks += 1,
                        _ => {}
                    }
                }
            }
        }
    }
    Ok(out)
}

fn mean(sum: f64, count: usize) -> Option<f64> {
    // empty float sums are -0.0; adding +0.0 normalizes them
    (count > 0).then(|| sum / count as f64 + 0.0)
}

fn per_search<F: Fn(&AttributedSearch) -> f64>(group: &QueryGroup, f: F) -> Option<f64> {
    mean(group.searches.iter().map(f).sum(), group.searches.len())
}

fn count_kind(s: &AttributedSearch, kind: EventKind, windowed: bool) -> f64 {
    s.events
        .iter()
        .filter(|e| e.kind == kind && (!windowed || e.in_window))
        .count() as f64
}

fn purchase_value<P: Fn(&AttributedEvent) -> bool>(s: &AttributedSearch, keep: P) -> f64 {
    s.events
        .iter()
        .filter(|e| e.kind == EventKind::Purchase && keep(e))
        .map(|e| e.price.unwrap_or(0.0))
        .sum()
}

/// `b1`..`b8`. All missing when the group has no searches.
pub fn compute_behavioral(group: &QueryGroup, policy: &AttributionPolicy) -> [Option<f64>; 8] {
    let n = group.searches.len();
    if n == 0 {
        return [None; 8];
    }
    let b1 = per_search(group, |s| count_kind(s, EventKind::AddToCart, false));
    let b2 = Some(n as f64 / policy.horizon_days as f64);
    let b3 = per_search(group, |s| count_kind(s, EventKind::AddToCart, true));
    let b4 = per_search(group, |s| count_kind(s, EventKind::ResultClick, true));

    let first_positions: Vec<f64> = group
        .searches
        .iter()
        .filter_map(|s| {
            s.events
                .iter()
                .find(|e| e.kind == EventKind::ResultClick)
                .and_then(|e| e.position)
                .map(f64::from)
        })
        .collect();
    let b5 = mean(first_positions.iter().sum(), first_positions.len());

    // Unlike b1 this also counts add-to-carts that no search could claim.
    let carts = group.attributed().filter(|(_, e)| e.kind == EventKind::AddToCart).count() + group.orphan_carts;
    let b6 = Some(carts as f64 / n as f64);

    let first_cart_delays: Vec<f64> = group
        .searches
        .iter()
        .filter_map(|s| {
            s.events
                .iter()
                .find(|e| e.kind == EventKind::AddToCart && e.in_window)
                .map(|e| e.delta_ms as f64)
        })
        .collect();
    let b7 = mean(first_cart_delays.iter().sum(), first_cart_delays.len());

    // "viewed products" is approximated by what the engine displayed
    let b8 = per_search(group, |s| f64::from(s.results_displayed));
    [b1, b2, b3, b4, b5, b6, b7, b8]
}

/// `f1`..`f5`. All missing when the group has no searches.
pub fn compute_financial(group: &QueryGroup, policy: &AttributionPolicy) -> [Option<f64>; 5] {
    if group.searches.is_empty() {
        return [None; 5];
    }
    let total: f64 =
        group.searches.iter().map(|s| purchase_value(s, |_| true)).sum::<f64>() + group.orphan_purchase_value;
    let f1 = Some(total / policy.horizon_days as f64 + 0.0);

    // f2: per session, purchases within the window of the first search of the query
    let mut per_session: BTreeMap<usize, (i64, f64)> = BTreeMap::new();
    for s in group.searches.iter().filter(|s| s.first_in_session) {
        per_session.insert(s.session, (s.timestamp, 0.0));
    }
    for (s, e) in group.attributed() {
        if e.kind != EventKind::Purchase {
            continue;
        }
        if let Some((first_ts, value)) = per_session.get_mut(&s.session) {
            let since_first = e.timestamp - *first_ts;
            if (0..=policy.window_ms).contains(&since_first) {
                *value += e.price.unwrap_or(0.0);
            }
        }
    }
    let f2 = mean(per_session.values().map(|(_, v)| v).sum(), per_session.len());

    let f3 = per_search(group, |s| {
        purchase_value(s, |e| !policy.same_day || e.day == s.day)
    });
    let f4 = per_search(group, |s| purchase_value(s, |_| true));
    let f5 = per_search(group, |s| purchase_value(s, |e| e.is_sponsored == Some(true)));
    [f1, f2, f3, f4, f5]
}

/// `c1`..`c3`.
pub fn compute_catalog(group: &QueryGroup) -> [Option<f64>; 3] {
    [
        per_search(group, |s| f64::from(s.results_found)),
        per_search(group, |s| f64::from(s.results_displayed)),
        per_search(group, |s| f64::from(s.sponsored_displayed)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFeatureVector {
    pub query: String,
    /// Column order follows [`Feature::ALL`]; `None` marks an undefined mean.
    pub values: [Option<f64>; NUM_FEATURES],
    pub n_searches: usize,
    pub n_days: usize,
}

impl QueryFeatureVector {
    pub fn get(&self, feature: Feature) -> Option<f64> {
        self.values[feature.index()]
    }

    /// Values of the selected columns, in the given order.
    pub fn project(&self, columns: &[usize]) -> Vec<Option<f64>> {
        columns.iter().map(|&c| self.values[c]).collect()
    }
}

pub fn feature_vector(query: &str, group: &QueryGroup, policy: &AttributionPolicy) -> QueryFeatureVector {
    let mut values = [None; NUM_FEATURES];
    values[..8].copy_from_slice(&compute_behavioral(group, policy));
    values[8..13].copy_from_slice(&compute_financial(group, policy));
    values[13..].copy_from_slice(&compute_catalog(group));
    let mut days: Vec<i64> = group.searches.iter().map(|s| s.day).collect();
    days.sort_unstable();
    days.dedup();
    QueryFeatureVector {
        query: query.to_owned(),
        values,
        n_searches: group.searches.len(),
        n_days: days.len(),
    }
}

/// One vector per query with at least one search in the horizon, sorted by query.
pub fn build_feature_matrix(
    sessions: &[Session],
    policy: &AttributionPolicy,
) -> Result<Vec<QueryFeatureVector>, FeatureError> {
    let attribution = attribute_events(sessions, policy)?;
    Ok(features_from_attribution(&attribution, policy))
}

pub fn features_from_attribution(attribution: &Attribution, policy: &AttributionPolicy) -> Vec<QueryFeatureVector> {
    attribution
        .groups
        .iter()
        .filter(|(_, g)| !g.searches.is_empty())
        .map(|(q, g)| feature_vector(q, g, policy))
        .collect()
}

pub(crate) fn format_cell(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

pub(crate) fn parse_cell(cell: &str) -> Result<Option<f64>, String> {
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell.parse().map_err(|e| format!("bad number `{cell}`: {e}"))?;
    if v.is_finite() {
        Ok(Some(v))
    } else {
        Err(format!("non-finite number `{cell}`"))
    }
}

pub fn feature_csv_header() -> Vec<String> {
    let mut header = vec!["query".to_owned()];
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    header.push("n_searches".into());
    header.push("n_days".into());
    header
}

/// Writes `query,b1..c3,n_searches,n_days`; missing values are empty cells.
pub fn write_feature_csv<W: Write>(rows: &[QueryFeatureVector], out: W) -> Result<(), FeatureError> {
    let csv_err = |e: csv::Error| FeatureError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_csv_header()).map_err(csv_err)?;
    for row in rows {
        let mut record = vec![row.query.clone()];
        record.extend(row.values.iter().map(|v| format_cell(*v)));
        record.push(row.n_searches.to_string());
        record.push(row.n_days.to_string());
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| FeatureError::Csv(e.to_string()))
}

pub fn read_feature_csv<R: Read>(input: R) -> Result<Vec<QueryFeatureVector>, FeatureError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| FeatureError::Csv(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != feature_csv_header() {
        return Err(FeatureError::Csv(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(|e| FeatureError::Csv(e.to_string()))?;
        let line = i + 2;
        let mut values = [None; NUM_FEATURES];
        for (c, slot) in values.iter_mut().enumerate() {
            *slot = parse_cell(&record[c + 1]).map_err(|e| FeatureError::Csv(format!("line {line}: {e}")))?;
        }
        let count = |c: usize| -> Result<usize, FeatureError> {
            record[c]
                .parse()
                .map_err(|e| FeatureError::Csv(format!("line {line}: {e}")))
        };
        rows.push(QueryFeatureVector {
            query: record[0].to_owned(),
            values,
            n_searches: count(NUM_FEATURES + 1)?,
            n_days: count(NUM_FEATURES + 2)?,
        });
    }
    Ok(rows)
}
