//! Reads an event log, prints the per-query feature CSV and the engagement labels.
//!
//! `cargo run --example featurize_log -- [LOG.jsonl]` (defaults to a tiny bundled log)

mod common;

use std::path::PathBuf;

use eqr::events::{parse_event_log, sessionize, ParseMode};
use eqr::features::{build_feature_matrix, write_feature_csv, AttributionPolicy};
use eqr::labels::compute_engagement;

fn main() -> Result<(), common::Error> {
    let path = std::env::args().nth(1).map_or_else(
        || PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/micro_log.jsonl"),
        PathBuf::from,
    );
    let parsed = parse_event_log(&path, ParseMode::Lenient)?;
    if parsed.skipped > 0 {
        eprintln!("skipped {} malformed lines", parsed.skipped);
    }
    let sessions = sessionize(parsed.events);
    let policy = AttributionPolicy::default();

    let features = build_feature_matrix(&sessions, &policy)?;
    write_feature_csv(&features, std::io::stdout().lock())?;

    println!();
    println!("{:<24} {:>6} {:>6} {:>8}", "query", "freq", "freq_c", "e");
    for l in compute_engagement(&sessions, &policy)? {
        println!("{:<24} {:>6} {:>6} {:>8.4}", l.query, l.freq, l.freq_c, l.e);
    }
    Ok(())
}
