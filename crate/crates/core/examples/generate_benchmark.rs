//! Simulates a small event log and its ground-truth sidecar.
//!
//! `cargo run --release --example generate_benchmark -- [OUT_DIR]`

mod common;

use std::path::PathBuf;

use eqr::datagen::{emit_log, generate_queries, simulate_sessions, write_ground_truth};

fn main() -> Result<(), common::Error> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("eqr-benchmark"), PathBuf::from);
    std::fs::create_dir_all(&out)?;
    let cfg = common::small_generator(7);
    let archetypes = generate_queries(&cfg)?;
    let sessions = simulate_sessions(&archetypes, &cfg)?;

    let mut counts = std::collections::BTreeMap::new();
    for e in sessions.iter().flat_map(|s| &s.events) {
        *counts.entry(format!("{:?}", e.kind)).or_insert(0usize) += 1;
    }
    let log = out.join("events.jsonl");
    let truth = out.join("ground_truth.csv");
    emit_log(&sessions, &log)?;
    write_ground_truth(&archetypes, &cfg, &truth)?;

    println!("{} queries, {} sessions", archetypes.len(), sessions.len());
    for (kind, n) in &counts {
        println!("  {kind:<12} {n}");
    }
    let head = archetypes
        .iter()
        .max_by(|a, b| a.popularity.total_cmp(&b.popularity))
        .expect("at least one query");
    println!(
        "most popular query {:?}: h = {:.3}, popularity = {:.4}",
        head.query, head.consideration, head.popularity
    );
    println!("wrote {} and {}", log.display(), truth.display());
    Ok(())
}
