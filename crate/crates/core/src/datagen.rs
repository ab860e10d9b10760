//! Synthetic clickstream benchmark with a known per-query engagement function.
//!
//! Every query gets a latent consideration level `h` in `[0, 1]`. Three
//! channel levels mix `h` with independent per-query nuisance `u`:
//!
//! ```text
//! level_channel = link_channel * h + (1 - link_channel) * u_channel
//! ```
//!
//! so the behavioral channel (default link 0.85) tracks `h` closely, the
//! financial channel (0.55) less so and the catalog channel (0.3) weakly.
//! Popularity is a Zipf weight over a random permutation of ranks and never
//! looks at `h`.
//!
//! Channel functions (all `m_*` are mean-one lognormal multipliers
//! `exp(s*z - s^2/2)` with `s` the channel noise scale, so a zero scale makes
//! them exactly 1; `hb`, `hf`, `hc` are the channel levels):
//!
//! | quantity | definition |
//! |---|---|
//! | price scale (per query) | `8 * exp(4 hf) * m_f` |
//! | catalog breadth (per query) | `max(1, 3000 * exp(-4 hc) * m_c)` |
//! | sponsored rate (per query) | `0.35 - 0.25 hc` |
//! | results_found | `max(1, round(breadth * m_c))` |
//! | results_displayed | `max(1, min(found, round((6 + 60 hc) * m_c)))` |
//! | display depth `D` | `results_displayed / 36` |
//! | sponsored_displayed | `min(displayed, round(displayed * rate * m_c))` |
//! | result clicks | `min(displayed, round((0.3 + 4.5 hb) * D * m_b))` |
//! | first click position | `1 + round(10 hb^2 * D * m_b)`, later clicks `+ 1 + round(3 hb * m_b)`, capped at displayed |
//! | click gaps | `(15 s + 120 s * hb) * m_b` after the previous click |
//! | add-to-carts | `min(clicks, round((0.15 + 8 hb (1 - hb)) * m_b))` |
//! | first add-to-cart delay | `(2 min + 80 min * hb) * D * m_b`, later ones `+ 4 min * m_b` |
//! | purchases | `min(carts, round(carts * (0.8 - 0.5 hf) * m_f))` |
//! | purchase delay | `(5 min + 120 min * hf) * m_f` after its add-to-cart |
//! | purchase price | `price_scale * m_f` |
//! | widget click | Bernoulli(`e*`), at `(10 s + 90 s * hb) * m_b` |
//!
//! A clicked item is sponsored when its position is within the sponsored
//! slots; the j-th purchase inherits the flag of the j-th click.
//!
//! The engagement target is
//! `e* = clamp(sigmoid(c0 + c1 h + eps), 0, 1) * e_max` with
//! `eps ~ Normal(0, engagement_noise)` drawn from the seed and the query text.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{flatten_sessions, write_events, Event, Session, DAY_MS};
use crate::seed;

const SECOND_MS: f64 = 1_000.0;
const MINUTE_MS: f64 = 60_000.0;

/// 2024-01-01T00:00:00Z.
pub const DEFAULT_START_MS: i64 = 1_704_067_200_000;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseScales {
    pub behavioral: f64,
    pub financial: f64,
    pub catalog: f64,
    /// Standard deviation of the logit-scale engagement noise.
    pub engagement: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        NoiseScales {
            behavioral: 0.5,
            financial: 0.6,
            catalog: 0.4,
            engagement: 0.5,
        }
    }
}

impl NoiseScales {
    pub fn zero() -> Self {
        NoiseScales {
            behavioral: 0.0,
            financial: 0.0,
            catalog: 0.0,
            engagement: 0.0,
        }
    }
}

/// How strongly engagement and each feature channel follow the latent level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngagementLink {
    /// Logit intercept `c0`.
    pub intercept: f64,
    /// Logit slope `c1` on the latent level.
    pub slope: f64,
    /// Ceiling of the engagement rate.
    pub e_max: f64,
    pub behavioral: f64,
    pub financial: f64,
    pub catalog: f64,
}

impl Default for EngagementLink {
    fn default() -> Self {
        EngagementLink {
            intercept: -5.0,
            slope: 8.0,
            e_max: 0.2,
            behavioral: 0.85,
            financial: 0.55,
            catalog: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_queries: usize,
    pub n_days: u32,
    pub n_sessions: usize,
    pub zipf_exponent: f64,
    /// Timestamp of the start of day 0; should sit on a UTC day boundary.
    pub start_ms: i64,
    pub noise: NoiseScales,
    pub link: EngagementLink,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 42,
            n_queries: 10_000,
            n_days: 30,
            n_sessions: 500_000,
            zipf_exponent: 1.1,
            start_ms: DEFAULT_START_MS,
            noise: NoiseScales::default(),
            link: EngagementLink::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |msg: &str| Err(DatagenError::InvalidConfig(msg.to_owned()));
        if self.n_queries == 0 {
            return bad("n_queries must be >= 1");
        }
        if self.n_days == 0 {
            return bad("n_days must be >= 1");
        }
        if self.n_sessions == 0 {
            return bad("n_sessions must be >= 1");
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad("zipf_exponent must be finite and >= 0");
        }
        let n = &self.noise;
        if [n.behavioral, n.financial, n.catalog, n.engagement]
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return bad("noise scales must be finite and >= 0");
        }
        let l = &self.link;
        if !(l.intercept.is_finite() && l.slope.is_finite()) {
            return bad("engagement intercept and slope must be finite");
        }
        if [l.e_max, l.behavioral, l.financial, l.catalog]
            .iter()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return bad("e_max and channel links must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryArchetype {
    pub query: String,
    /// Latent consideration level `h`.
    pub consideration: f64,
    pub behavior_level: f64,
    pub finance_level: f64,
    pub catalog_level: f64,
    /// Median purchase price.
    pub price_scale: f64,
    /// Zipf probability mass; sums to 1 over all archetypes.
    pub popularity: f64,
    /// Expected results_found.
    pub catalog_breadth: f64,
    pub sponsored_rate: f64,
}

/// Mean-one lognormal multiplier.
fn jitter(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (scale * z - 0.5 * scale * scale).exp()
}

fn round_count(x: f64) -> u32 {
    x.round().clamp(0.0, u32::MAX as f64) as u32
}

pub fn query_name(index: usize) -> String {
    format!("q{index:05}")
}

pub fn generate_queries(cfg: &GeneratorConfig) -> Result<Vec<QueryArchetype>, DatagenError> {
    cfg.validate()?;
    let n = cfg.n_queries;

    let mut ranks: Vec<usize> = (1..=n).collect();
    ranks.shuffle(&mut seed::stream(cfg.seed, "popularity", 0));
    let mass: Vec<f64> = ranks
        .iter()
        .map(|&r| (r as f64).powf(-cfg.zipf_exponent))
        .collect();
    let total: f64 = mass.iter().sum();

    let link = &cfg.link;
    let noise = &cfg.noise;
    let archetypes = (0..n)
        .map(|i| {
            let mut rng = seed::stream(cfg.seed, "query", i as u64);
            let h: f64 = rng.random();
            let (ub, uf, uc): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            let hb = link.behavioral * h + (1.0 - link.behavioral) * ub;
            let hf = link.financial * h + (1.0 - link.financial) * uf;
            let hc = link.catalog * h + (1.0 - link.catalog) * uc;
            let price_scale = 8.0 * (4.0 * hf).exp() * jitter(&mut rng, noise.financial);
            let catalog_breadth = (3000.0 * (-4.0 * hc).exp() * jitter(&mut rng, noise.catalog)).max(1.0);
            QueryArchetype {
                query: query_name(i),
                consideration: h,
                behavior_level: hb,
                finance_level: hf,
                catalog_level: hc,
                price_scale,
                popularity: mass[i] / total,
                catalog_breadth,
                sponsored_rate: (0.35 - 0.25 * hc).clamp(0.0, 1.0),
            }
        })
        .collect();
    Ok(archetypes)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Engagement for latent level `h` and logit noise `eps`.
pub fn engagement_from(h: f64, eps: f64, link: &EngagementLink) -> f64 {
    sigmoid(link.intercept + link.slope * h + eps).clamp(0.0, 1.0) * link.e_max
}

/// Logit noise of one query, fixed by the seed and the query text.
pub fn engagement_noise(query: &str, cfg: &GeneratorConfig) -> f64 {
    let mut rng = seed::stream(cfg.seed, &format!("engagement/{query}"), 0);
    let z: f64 = StandardNormal.sample(&mut rng);
    cfg.noise.engagement * z
}

/// Ground-truth engagement `e*` of an archetype.
pub fn true_engagement(a: &QueryArchetype, cfg: &GeneratorConfig) -> f64 {
    engagement_from(a.consideration, engagement_noise(&a.query, cfg), &cfg.link)
}

/// Events of a single search session for archetype `a`, starting at `t0`.
/// `engagement` is the widget-click probability of the search.
pub fn simulate_search(
    a: &QueryArchetype,
    engagement: f64,
    noise: &NoiseScales,
    session_id: &str,
    t0: i64,
    rng: &mut ChaCha8Rng,
) -> Vec<Event> {
    let (hb, hf, hc) = (a.behavior_level, a.finance_level, a.catalog_level);
    let (sb, sf, sc) = (noise.behavioral, noise.financial, noise.catalog);
    let q = a.query.as_str();
    let mut events = Vec::new();
    let mut next_id = {
        let mut j = 0usize;
        move || {
            let id = format!("{session_id}-{j:02}");
            j += 1;
            id
        }
    };
    let at = |offset_ms: f64| t0 + offset_ms.round() as i64;

    let found = round_count(a.catalog_breadth * jitter(rng, sc)).max(1);
    let displayed = round_count((6.0 + 60.0 * hc) * jitter(rng, sc)).min(found).max(1);
    let depth = f64::from(displayed) / 36.0;
    let sponsored = round_count(displayed as f64 * a.sponsored_rate * jitter(rng, sc)).min(displayed);
    events.push(Event::search(next_id(), t0, session_id, q, found, displayed, sponsored));

    let n_clicks = round_count((0.3 + 4.5 * hb) * depth * jitter(rng, sb)).min(displayed);
    let mut click_sponsored = Vec::with_capacity(n_clicks as usize);
    let mut position = 1 + round_count(10.0 * hb * hb * depth * jitter(rng, sb));
    let mut clock = 0.0;
    for c in 0..n_clicks {
        if c > 0 {
            position += 1 + round_count(3.0 * hb * jitter(rng, sb));
        }
        position = position.min(displayed);
        clock += (15.0 * SECOND_MS + 120.0 * SECOND_MS * hb) * jitter(rng, sb);
        let is_sponsored = position <= sponsored;
        click_sponsored.push(is_sponsored);
        events.push(Event::result_click(next_id(), at(clock), session_id, q, position, is_sponsored));
    }

    let n_carts = round_count((0.15 + 8.0 * hb * (1.0 - hb)) * jitter(rng, sb)).min(n_clicks);
    let mut cart_times = Vec::with_capacity(n_carts as usize);
    let mut clock = 0.0;
    for c in 0..n_carts {
        clock += if c == 0 {
            (2.0 * MINUTE_MS + 80.0 * MINUTE_MS * hb) * depth * jitter(rng, sb)
        } else {
            4.0 * MINUTE_MS * jitter(rng, sb)
        };
        cart_times.push(clock);
        events.push(Event::add_to_cart(next_id(), at(clock), session_id, q));
    }

    let n_purchases = round_count(n_carts as f64 * (0.8 - 0.5 * hf) * jitter(rng, sf)).min(n_carts);
    for p in 0..n_purchases as usize {
        let delay = (5.0 * MINUTE_MS + 120.0 * MINUTE_MS * hf) * jitter(rng, sf);
        let price = a.price_scale * jitter(rng, sf);
        events.push(Event::purchase(
            next_id(),
            at(cart_times[p] + delay),
            session_id,
            q,
            price,
            click_sponsored[p],
        ));
    }

    let widget_delay = (10.0 * SECOND_MS + 90.0 * SECOND_MS * hb) * jitter(rng, sb);
    if rng.random::<f64>() < engagement {
        events.push(Event::widget_click(next_id(), at(widget_delay), session_id, q));
    }

    events.sort_by(|x, y| x.timestamp.cmp(&y.timestamp).then_with(|| x.event_id.cmp(&y.event_id)));
    events
}

pub fn session_name(index: usize) -> String {
    format!("s{index:08}")
}

/// Simulates `cfg.n_sessions` single-search sessions. Session `i` uses its own
/// random stream, so the result does not depend on thread scheduling.
pub fn simulate_sessions(
    archetypes: &[QueryArchetype],
    cfg: &GeneratorConfig,
) -> Result<Vec<Session>, DatagenError> {
    cfg.validate()?;
    if archetypes.is_empty() {
        return Err(DatagenError::InvalidConfig("no query archetypes".into()));
    }
    let mut cumulative = Vec::with_capacity(archetypes.len());
    let mut acc = 0.0;
    for a in archetypes {
        if !(a.popularity > 0.0 && a.popularity.is_finite()) {
            return Err(DatagenError::InvalidConfig(format!(
                "query `{}` has non-positive popularity",
                a.query
            )));
        }
        acc += a.popularity;
        cumulative.push(acc);
    }
    let engagement: Vec<f64> = archetypes.iter().map(|a| true_engagement(a, cfg)).collect();
    let horizon_ms = cfg.n_days as i64 * DAY_MS;

    let sessions = (0..cfg.n_sessions)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::stream(cfg.seed, "session", s as u64);
            let u = rng.random::<f64>() * acc;
            let pick = cumulative.partition_point(|&c| c <= u).min(archetypes.len() - 1);
            let t0 = cfg.start_ms + rng.random_range(0..horizon_ms);
            let session_id = session_name(s);
            let events = simulate_search(&archetypes[pick], engagement[pick], &cfg.noise, &session_id, t0, &mut rng);
            Session { session_id, events }
        })
        .collect();
    Ok(sessions)
}

/// Writes all events ordered by `(timestamp, event_id)`.
pub fn emit_log(sessions: &[Session], path: &Path) -> Result<(), DatagenError> {
    let io = |source| DatagenError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    write_events(flatten_sessions(sessions), BufWriter::new(file)).map_err(io)
}

/// Ground-truth sidecar: `query,h,e_star`.
pub fn write_ground_truth(
    archetypes: &[QueryArchetype],
    cfg: &GeneratorConfig,
    path: &Path,
) -> Result<(), DatagenError> {
    let io = |source| DatagenError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "query,h,e_star").map_err(io)?;
    for a in archetypes {
        writeln!(out, "{},{},{}", a.query, a.consideration, true_engagement(a, cfg)).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub query: String,
    pub h: f64,
    pub e_star: f64,
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthRow>, DatagenError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| DatagenError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    reader
        .deserialize()
        .collect::<Result<Vec<GroundTruthRow>, _>>()
        .map_err(|e| DatagenError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })
}
