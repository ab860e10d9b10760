//! Ranking and regression metrics: Hit@k, Kendall's tau (a and b), MSE,
//! the frequency baseline and the model comparison report.
//!
//! Every ordering uses the same composite key: score descending, then query
//! ascending.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::EngagementLabel;

/// Hit@k cut-offs reported by default.
pub const DEFAULT_KS: [usize; 4] = [5, 50, 100, 500];

pub const FREQUENCY_BASELINE: &str = "Frequency";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("duplicate query {0:?}")]
    DuplicateQuery(String),
    #[error("non-finite score {score} for query {query:?}")]
    NonFiniteScore { query: String, score: f64 },
    #[error("query sets differ: {0}")]
    KeyMismatch(String),
    #[error("k = {k} outside 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Query scores keyed by query string.
pub type Scores = BTreeMap<String, f64>;

/// Composite key: higher score first, then lexicographically smaller query.
pub fn composite_cmp(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(b.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(q, _)| q.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The first `n` entries (all of them if `n` exceeds the length).
    pub fn top(&self, n: usize) -> &[(String, f64)] {
        &self.entries[..n.min(self.entries.len())]
    }

    pub fn into_entries(self) -> Vec<(String, f64)> {
        self.entries
    }
}

/// Sorts queries by the composite key.
pub fn rank_queries<I, S>(scores: I) -> Result<RankedList, EvalError>
where
    I: IntoIterator<Item = (S, f64)>,
    S: Into<String>,
{
    let mut entries: Vec<(String, f64)> = Vec::new();
    for (q, s) in scores {
        let q = q.into();
        if !s.is_finite() {
            return Err(EvalError::NonFiniteScore { query: q, score: s });
        }
        entries.push((q, s));
    }
    entries.sort_by(|a, b| composite_cmp((&a.0, a.1), (&b.0, b.1)));
    let mut seen = BTreeSet::new();
    for (q, _) in &entries {
        if !seen.insert(q.as_str()) {
            return Err(EvalError::DuplicateQuery(q.clone()));
        }
    }
    Ok(RankedList { entries })
}

fn ranked_from_map(scores: &Scores) -> Result<RankedList, EvalError> {
    rank_queries(scores.iter().map(|(q, s)| (q.clone(), *s)))
}

fn check_same_keys<'a>(
    a: impl Iterator<Item = &'a str>,
    b: impl Iterator<Item = &'a str>,
) -> Result<(), EvalError> {
    let a: BTreeSet<&str> = a.collect();
    let b: BTreeSet<&str> = b.collect();
    if a != b {
        let only_a = a.difference(&b).next();
        let only_b = b.difference(&a).next();
        let msg = match (only_a, only_b) {
            (Some(q), _) => format!("{q:?} present only in predictions"),
            (None, Some(q)) => format!("{q:?} present only in truth"),
            (None, None) => unreachable!(),
        };
        return Err(EvalError::KeyMismatch(msg));
    }
    Ok(())
}

fn check_finite(scores: &Scores) -> Result<(), EvalError> {
    match scores.iter().find(|(_, s)| !s.is_finite()) {
        Some((q, s)) => Err(EvalError::NonFiniteScore { query: q.clone(), score: *s }),
        None => Ok(()),
    }
}

/// Fraction of the true top-k queries that appear in the predicted top-k.
pub fn hit_at_k(predicted: &RankedList, truth: &Scores, k: usize) -> Result<f64, EvalError> {
    Ok(hit_at_ks(predicted, truth, &[k])?[0])
}

/// Hit@k for every cut-off in `ks`, from one ranking of the truth and one
/// pass over both lists.
pub fn hit_at_ks(predicted: &RankedList, truth: &Scores, ks: &[usize]) -> Result<Vec<f64>, EvalError> {
    check_same_keys(predicted.queries(), truth.keys().map(String::as_str))?;
    let n = predicted.len();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(EvalError::InvalidK { k, n });
    }
    let truth_ranked = ranked_from_map(truth)?;
    let pred_pos: HashMap<&str, usize> = predicted.queries().enumerate().map(|(i, q)| (q, i)).collect();
    let truth_pos: HashMap<&str, usize> = truth_ranked.queries().enumerate().map(|(i, q)| (q, i)).collect();
    let max_k = ks.iter().copied().max().unwrap_or(0);
    // overlap[k] = |pred top-k ∩ truth top-k|
    let mut overlap = vec![0usize; max_k + 1];
    for k in 1..=max_k {
        let i = k - 1;
        let mut c = overlap[i];
        if truth_pos[predicted.entries[i].0.as_str()] <= i {
            c += 1;
        }
        if pred_pos[truth_ranked.entries[i].0.as_str()] < i {
            c += 1;
        }
        overlap[k] = c;
    }
    Ok(ks.iter().map(|&k| overlap[k] as f64 / k as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TauVariant {
    A,
    B,
}

/// Integer pair counts over `n` paired observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub n: u64,
    /// All pairs, n(n-1)/2.
    pub n0: u64,
    /// Pairs tied in the first variable.
    pub ties_x: u64,
    /// Pairs tied in the second variable.
    pub ties_y: u64,
    /// Pairs tied in both.
    pub ties_xy: u64,
    /// Concordant minus discordant pairs.
    pub c_minus_d: i64,
}

impl PairCounts {
    pub fn tau_a(&self) -> Result<f64, EvalError> {
        if self.n0 == 0 {
            return Err(EvalError::DegenerateInput("fewer than two observations".into()));
        }
        Ok(self.c_minus_d as f64 / self.n0 as f64)
    }

    pub fn tau_b(&self) -> Result<f64, EvalError> {
        let dx = self.n0 - self.ties_x;
        let dy = self.n0 - self.ties_y;
        if dx == 0 || dy == 0 {
            return Err(EvalError::DegenerateInput("all scores tied; tau-b undefined".into()));
        }
        Ok(self.c_minus_d as f64 / ((dx as f64) * (dy as f64)).sqrt())
    }

    pub fn tau(&self, variant: TauVariant) -> Result<f64, EvalError> {
        match variant {
            TauVariant::A => self.tau_a(),
            TauVariant::B => self.tau_b(),
        }
    }
}

fn tie_pairs(run: u64) -> u64 {
    run * run.saturating_sub(1) / 2
}

fn fcmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("finite scores")
}

/// Knight's O(n log n) pair counting. Inputs must be finite.
pub fn pair_counts(x: &[f64], y: &[f64]) -> PairCounts {
    assert_eq!(x.len(), y.len(), "paired inputs");
    let n = x.len();
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| fcmp(a.0, b.0).then_with(|| fcmp(a.1, b.1)));

    let mut ties_x = 0u64;
    let mut ties_xy = 0u64;
    let mut run_x = 1u64;
    let mut run_xy = 1u64;
    for i in 1..n {
        if pairs[i].0 == pairs[i - 1].0 {
            run_x += 1;
            if pairs[i].1 == pairs[i - 1].1 {
                run_xy += 1;
            } else {
                ties_xy += tie_pairs(run_xy);
                run_xy = 1;
            }
        } else {
            ties_x += tie_pairs(run_x);
            ties_xy += tie_pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    if n > 0 {
        ties_x += tie_pairs(run_x);
        ties_xy += tie_pairs(run_xy);
    }

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut ties_y = 0u64;
    let mut run_y = 1u64;
    for i in 1..n {
        if ys[i] == ys[i - 1] {
            run_y += 1;
        } else {
            ties_y += tie_pairs(run_y);
            run_y = 1;
        }
    }
    if n > 0 {
        ties_y += tie_pairs(run_y);
    }

    let n0 = tie_pairs(n as u64);
    let c_minus_d = n0 as i64 - ties_x as i64 - ties_y as i64 + ties_xy as i64 - 2 * swaps as i64;
    PairCounts {
        n: n as u64,
        n0,
        ties_x,
        ties_y,
        ties_xy,
        c_minus_d,
    }
}

/// Stable bottom-up merge sort returning the number of inversions
/// (pairs `i < j` with `v[i] > v[j]`).
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid && j < end {
                if v[j] < v[i] {
                    buf[k] = v[j];
                    swaps += (mid - i) as u64;
                    j += 1;
                } else {
                    buf[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + (end - j)].copy_from_slice(&v[j..end]);
            start = end;
        }
        v.copy_from_slice(buf);
        width *= 2;
    }
    swaps
}

fn aligned(predicted: &Scores, truth: &Scores) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    check_same_keys(predicted.keys().map(String::as_str), truth.keys().map(String::as_str))?;
    check_finite(predicted)?;
    check_finite(truth)?;
    // both maps iterate in the same key order
    Ok((predicted.values().copied().collect(), truth.values().copied().collect()))
}

pub fn kendall_tau(predicted: &Scores, truth: &Scores, variant: TauVariant) -> Result<f64, EvalError> {
    let (p, t) = aligned(predicted, truth)?;
    if p.len() < 2 {
        return Err(EvalError::DegenerateInput("kendall tau needs at least two queries".into()));
    }
    pair_counts(&p, &t).tau(variant)
}

/// Mean squared difference, without a 1/2 factor.
pub fn mse(predicted: &Scores, truth: &Scores) -> Result<f64, EvalError> {
    let (p, t) = aligned(predicted, truth)?;
    if p.is_empty() {
        return Err(EvalError::DegenerateInput("no queries".into()));
    }
    Ok(p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64)
}

/// Ranks queries by raw search count.
pub fn frequency_baseline(labels: &[EngagementLabel]) -> Result<RankedList, EvalError> {
    rank_queries(labels.iter().map(|l| (l.query.clone(), l.freq as f64)))
}

/// A named set of predictions over the evaluation queries.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScores {
    pub name: String,
    pub scores: Scores,
    /// Whether the scores estimate the truth scale (false for frequency).
    pub regression: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    /// Hit@k per cut-off, in the order requested.
    pub hits: Vec<(usize, f64)>,
    /// `None` when undefined (an all-tied list).
    pub tau_b: Option<f64>,
    pub tau_a: f64,
    /// `None` for rankers that do not predict the label scale.
    pub mse: Option<f64>,
    pub n: usize,
}

impl EvalReport {
    pub fn hit(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|(kk, _)| *kk == k).map(|(_, h)| *h)
    }
}

pub fn evaluate(model: &ModelScores, truth: &Scores, ks: &[usize]) -> Result<EvalReport, EvalError> {
    let (p, t) = aligned(&model.scores, truth)?;
    if p.len() < 2 {
        return Err(EvalError::DegenerateInput("evaluation needs at least two queries".into()));
    }
    let ranked = ranked_from_map(&model.scores)?;
    let hits = ks.iter().copied().zip(hit_at_ks(&ranked, truth, ks)?).collect();
    let counts = pair_counts(&p, &t);
    let tau_b = match counts.tau_b() {
        Ok(v) => Some(v),
        Err(EvalError::DegenerateInput(_)) => None,
        Err(e) => return Err(e),
    };
    let mse = if model.regression { Some(mse(&model.scores, truth)?) } else { None };
    Ok(EvalReport {
        model: model.name.clone(),
        hits,
        tau_b,
        tau_a: counts.tau_a()?,
        mse,
        n: p.len(),
    })
}

/// Evaluates every model plus the frequency baseline built from `freq`,
/// sorted by tau-b descending (undefined last), then by name.
pub fn evaluate_all(
    models: &[ModelScores],
    truth: &Scores,
    freq: &Scores,
    ks: &[usize],
) -> Result<Vec<EvalReport>, EvalError> {
    let baseline = ModelScores {
        name: FREQUENCY_BASELINE.to_string(),
        scores: freq.clone(),
        regression: false,
    };
    let mut reports = models
        .par_iter()
        .chain(rayon::iter::once(&baseline))
        .map(|m| evaluate(m, truth, ks))
        .collect::<Result<Vec<_>, _>>()?;
    reports.sort_by(|a, b| {
        let ka = a.tau_b.unwrap_or(f64::NEG_INFINITY);
        let kb = b.tau_b.unwrap_or(f64::NEG_INFINITY);
        kb.partial_cmp(&ka).unwrap_or(Ordering::Equal).then_with(|| a.model.cmp(&b.model))
    });
    Ok(reports)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

/// Aligned plain-text table.
pub fn render_table(reports: &[EvalReport]) -> String {
    let ks: Vec<usize> = reports.first().map(|r| r.hits.iter().map(|h| h.0).collect()).unwrap_or_default();
    let mut header: Vec<String> = vec!["Model".into()];
    header.extend(ks.iter().map(|k| format!("Hit@{k}")));
    header.extend(["Tau-b".into(), "Tau-a".into(), "MSE".into(), "n".into()]);
    let mut rows: Vec<Vec<String>> = vec![header];
    for r in reports {
        let mut row = vec![r.model.clone()];
        row.extend(r.hits.iter().map(|h| format!("{:.4}", h.1)));
        row.push(fmt_opt(r.tau_b));
        row.push(format!("{:.4}", r.tau_a));
        row.push(r.mse.map_or_else(|| "-".to_string(), |m| format!("{m:.6}")));
        row.push(r.n.to_string());
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}

pub fn write_report_csv<W: Write>(reports: &[EvalReport], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    let ks: Vec<usize> = reports.first().map(|r| r.hits.iter().map(|h| h.0).collect()).unwrap_or_default();
    let mut header = vec!["model".to_string()];
    header.extend(ks.iter().map(|k| format!("hit@{k}")));
    header.extend(["tau_b", "tau_a", "mse", "n"].map(String::from));
    w.write_record(&header)?;
    for r in reports {
        let mut rec = vec![r.model.clone()];
        rec.extend(r.hits.iter().map(|h| h.1.to_string()));
        rec.push(r.tau_b.map(|v| v.to_string()).unwrap_or_default());
        rec.push(r.tau_a.to_string());
        rec.push(r.mse.map(|v| v.to_string()).unwrap_or_default());
        rec.push(r.n.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json<W: Write>(reports: &[EvalReport], mut out: W) -> Result<(), EvalError> {
    serde_json::to_writer_pretty(&mut out, reports)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Per-query `query,predicted,truth` rows in predicted rank order.
pub fn write_score_dump<W: Write>(predicted: &Scores, truth: &Scores, out: W) -> Result<(), EvalError> {
    aligned(predicted, truth)?;
    let ranked = ranked_from_map(predicted)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query", "predicted", "truth"])?;
    for (q, s) in ranked.entries() {
        w.write_record([q.as_str(), &s.to_string(), &truth[q].to_string()])?;
    }
    w.flush()?;
    Ok(())
}
