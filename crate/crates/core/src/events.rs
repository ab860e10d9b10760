//! Clickstream event model, JSONL event-log reading/writing and sessionization.
//!
//! An event log is UTF-8 text with one JSON object per line. Optional fields
//! are omitted rather than written as `null`:
//!
//! ```text
//! {"event_id":"s0000001-00","kind":"search","timestamp":1704067200000,"session_id":"s0000001","query":"air fryer","results_found":812,"results_displayed":48,"sponsored_displayed":6}
//! {"event_id":"s0000001-01","kind":"result_click","timestamp":1704067230000,"session_id":"s0000001","query":"air fryer","position":3,"is_sponsored":false}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Milliseconds in one UTC day.
pub const DAY_MS: i64 = 86_400_000;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("line {line}: malformed JSON: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField {
        line: usize,
        /// `None` when the kind itself could not be read.
        kind: Option<EventKind>,
        field: &'static str,
    },
    #[error("line {line}: field `{field}` is not allowed on `{kind}` events")]
    KindFieldMismatch {
        line: usize,
        kind: EventKind,
        field: &'static str,
    },
    #[error("line {line}: invalid value: {message}")]
    InvalidValue { line: usize, message: String },
    #[error("line {line}: timestamp {timestamp} precedes an earlier event of session `{session_id}`")]
    NonMonotonicTimestampWithinSession {
        line: usize,
        session_id: String,
        timestamp: i64,
    },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EventError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        EventError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Search,
    ResultClick,
    WidgetClick,
    AddToCart,
    Purchase,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::Search => "search",
            EventKind::ResultClick => "result_click",
            EventKind::WidgetClick => "widget_click",
            EventKind::AddToCart => "add_to_cart",
            EventKind::Purchase => "purchase",
        };
        f.write_str(s)
    }
}

/// One clickstream record. Kind-specific fields are `Some` exactly for the
/// kinds that carry them; see [`Event::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub event_id: String,
    pub kind: EventKind,
    pub timestamp: i64,
    pub session_id: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_sponsored: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results_found: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results_displayed: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sponsored_displayed: Option<u32>,
}

impl Event {
    fn bare(event_id: String, kind: EventKind, timestamp: i64, session_id: &str, query: &str) -> Self {
        Event {
            event_id,
            kind,
            timestamp,
            session_id: session_id.to_owned(),
            query: query.to_owned(),
            position: None,
            price: None,
            is_sponsored: None,
            results_found: None,
            results_displayed: None,
            sponsored_displayed: None,
        }
    }

    pub fn search(
        event_id: impl Into<String>,
        timestamp: i64,
        session_id: &str,
        query: &str,
        results_found: u32,
        results_displayed: u32,
        sponsored_displayed: u32,
    ) -> Self {
        Event {
            results_found: Some(results_found),
            results_displayed: Some(results_displayed),
            sponsored_displayed: Some(sponsored_displayed),
            ..Self::bare(event_id.into(), EventKind::Search, timestamp, session_id, query)
        }
    }

    pub fn result_click(
        event_id: impl Into<String>,
        timestamp: i64,
        session_id: &str,
        query: &str,
        position: u32,
        is_sponsored: bool,
    ) -> Self {
        Event {
            position: Some(position),
            is_sponsored: Some(is_sponsored),
            ..Self::bare(event_id.into(), EventKind::ResultClick, timestamp, session_id, query)
        }
    }

    pub fn widget_click(event_id: impl Into<String>, timestamp: i64, session_id: &str, query: &str) -> Self {
        Self::bare(event_id.into(), EventKind::WidgetClick, timestamp, session_id, query)
    }

    pub fn add_to_cart(event_id: impl Into<String>, timestamp: i64, session_id: &str, query: &str) -> Self {
        Self::bare(event_id.into(), EventKind::AddToCart, timestamp, session_id, query)
    }

    pub fn purchase(
        event_id: impl Into<String>,
        timestamp: i64,
        session_id: &str,
        query: &str,
        price: f64,
        is_sponsored: bool,
    ) -> Self {
        Event {
            price: Some(price),
            is_sponsored: Some(is_sponsored),
            ..Self::bare(event_id.into(), EventKind::Purchase, timestamp, session_id, query)
        }
    }

    /// UTC day index of the event.
    pub fn day(&self) -> i64 {
        self.timestamp.div_euclid(DAY_MS)
    }

    /// Checks kind/field consistency and value ranges. `line` is only used
    /// for error reporting.
    pub fn validate(&self, line: usize) -> Result<(), EventError> {
        use EventKind::*;
        let kind = self.kind;
        let fields: [(&'static str, bool, bool); 6] = [
            ("position", self.position.is_some(), kind == ResultClick),
            ("price", self.price.is_some(), kind == Purchase),
            (
                "is_sponsored",
                self.is_sponsored.is_some(),
                matches!(kind, ResultClick | Purchase),
            ),
            ("results_found", self.results_found.is_some(), kind == Search),
            ("results_displayed", self.results_displayed.is_some(), kind == Search),
            ("sponsored_displayed", self.sponsored_displayed.is_some(), kind == Search),
        ];
        for (field, present, required) in fields {
            match (present, required) {
                (false, true) => {
                    return Err(EventError::MissingField {
                        line,
                        kind: Some(kind),
                        field,
                    })
                }
                (true, false) => return Err(EventError::KindFieldMismatch { line, kind, field }),
                _ => {}
            }
        }
        let invalid = |message: String| Err(EventError::InvalidValue { line, message });
        if self.event_id.is_empty() {
            return invalid("empty event_id".into());
        }
        if self.session_id.is_empty() {
            return invalid("empty session_id".into());
        }
        if self.query.is_empty() {
            return invalid("empty query".into());
        }
        if let Some(p) = self.position {
            if p < 1 {
                return invalid(format!("position {p} < 1"));
            }
        }
        if let Some(price) = self.price {
            if !price.is_finite() || price < 0.0 {
                return invalid(format!("price {price} is not a nonnegative finite number"));
            }
        }
        if let (Some(found), Some(shown), Some(sponsored)) =
            (self.results_found, self.results_displayed, self.sponsored_displayed)
        {
            if shown > found {
                return invalid(format!("results_displayed {shown} > results_found {found}"));
            }
            if sponsored > shown {
                return invalid(format!("sponsored_displayed {sponsored} > results_displayed {shown}"));
            }
        }
        Ok(())
    }
}

/// Lowercases, trims and collapses internal whitespace runs to one space.
pub fn normalize_query(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// The first malformed line aborts parsing.
    Strict,
    /// Malformed lines are counted and skipped.
    Lenient,
}

impl ParseMode {
    pub fn from_strict(strict: bool) -> Self {
        if strict {
            ParseMode::Strict
        } else {
            ParseMode::Lenient
        }
    }
}

/// Streaming reader over a JSONL event log.
///
/// In [`ParseMode::Lenient`] the iterator never yields an error for a bad
/// line; it bumps [`EventReader::skipped`] instead. Out-of-order timestamps
/// within a session are an error in strict mode and a warning (event kept)
/// in lenient mode. I/O errors are always yielded.
pub struct EventReader<R> {
    lines: std::io::Lines<R>,
    mode: ParseMode,
    line_no: usize,
    skipped: usize,
    warnings: usize,
    last_seen: HashMap<String, i64>,
    path: PathBuf,
}

impl<R: BufRead> EventReader<R> {
    pub fn new(reader: R, mode: ParseMode) -> Self {
        EventReader {
            lines: reader.lines(),
            mode,
            line_no: 0,
            skipped: 0,
            warnings: 0,
            last_seen: HashMap::new(),
            path: PathBuf::from("<reader>"),
        }
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn warnings(&self) -> usize {
        self.warnings
    }

    fn parse_line(&mut self, text: &str) -> Result<Event, EventError> {
        let line = self.line_no;
        let mut event: Event = serde_json::from_str(text).map_err(|e| classify_json_error(line, e))?;
        event.query = normalize_query(&event.query);
        event.validate(line)?;
        Ok(event)
    }
}

// serde reports a missing field as a data error; surface it as MissingField
// when the field is one of the kind-independent ones.
fn classify_json_error(line: usize, err: serde_json::Error) -> EventError {
    let message = err.to_string();
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(name) = rest.split('`').next() {
            let field = match name {
                "event_id" => Some("event_id"),
                "kind" => Some("kind"),
                "timestamp" => Some("timestamp"),
                "session_id" => Some("session_id"),
                "query" => Some("query"),
                _ => None,
            };
            if let Some(field) = field {
                return EventError::MissingField {
                    line,
                    kind: None,
                    field,
                };
            }
        }
    }
    EventError::Malformed { line, message }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<Event, EventError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(EventError::io(&self.path, e))),
            };
            self.line_no += 1;
            if text.trim().is_empty() {
                continue;
            }
            let event = match self.parse_line(&text) {
                Ok(ev) => ev,
                Err(e) => match self.mode {
                    ParseMode::Strict => return Some(Err(e)),
                    ParseMode::Lenient => {
                        self.skipped += 1;
                        continue;
                    }
                },
            };
            let last = self.last_seen.entry(event.session_id.clone()).or_insert(i64::MIN);
            if event.timestamp < *last {
                if self.mode == ParseMode::Strict {
                    return Some(Err(EventError::NonMonotonicTimestampWithinSession {
                        line: self.line_no,
                        session_id: event.session_id,
                        timestamp: event.timestamp,
                    }));
                }
                self.warnings += 1;
            } else {
                *last = event.timestamp;
            }
            return Some(Ok(event));
        }
    }
}

/// A fully parsed log together with lenient-mode diagnostics.
#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub events: Vec<Event>,
    pub skipped: usize,
    pub warnings: usize,
}

pub fn parse_event_log(path: &Path, mode: ParseMode) -> Result<ParsedLog, EventError> {
    let file = File::open(path).map_err(|e| EventError::io(path, e))?;
    let mut reader = EventReader::new(BufReader::new(file), mode);
    reader.path = path.to_path_buf();
    let events = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(ParsedLog {
        events,
        skipped: reader.skipped(),
        warnings: reader.warnings(),
    })
}

pub fn write_events<'a, W, I>(events: I, mut out: W) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Event>,
{
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_event_log<'a, I>(events: I, path: &Path) -> Result<(), EventError>
where
    I: IntoIterator<Item = &'a Event>,
{
    let file = File::create(path).map_err(|e| EventError::io(path, e))?;
    write_events(events, BufWriter::new(file)).map_err(|e| EventError::io(path, e))
}

/// Events of one session, ordered by `(timestamp, event_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub events: Vec<Event>,
}

impl Session {
    /// Day index of the first event.
    pub fn day(&self) -> i64 {
        self.events.first().map(Event::day).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

fn event_order(a: &Event, b: &Event) -> std::cmp::Ordering {
    a.timestamp
        .cmp(&b.timestamp)
        .then_with(|| a.event_id.cmp(&b.event_id))
}

/// Groups events by `session_id`. Sessions come back ordered by id, so the
/// result does not depend on input order.
pub fn sessionize<I: IntoIterator<Item = Event>>(events: I) -> Vec<Session> {
    let mut groups: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    for event in events {
        groups.entry(event.session_id.clone()).or_default().push(event);
    }
    groups
        .into_iter()
        .map(|(session_id, mut events)| {
            events.sort_by(event_order);
            Session { session_id, events }
        })
        .collect()
}

/// Flattens sessions back into one stream ordered by `(timestamp, event_id)`.
pub fn flatten_sessions(sessions: &[Session]) -> Vec<&Event> {
    let mut all: Vec<&Event> = sessions.iter().flat_map(|s| s.events.iter()).collect();
    all.sort_by(|a, b| event_order(a, b));
    all
}
