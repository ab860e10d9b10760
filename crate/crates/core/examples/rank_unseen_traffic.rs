//! Trains on one simulated log and ranks the queries of a fresh log that the
//! model has never seen.
//!
//! `cargo run --release --example rank_unseen_traffic`

use eqr::datagen::{emit_log, generate_queries, simulate_sessions, GeneratorConfig};
use eqr::pipeline::{Pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ws = std::env::temp_dir().join("eqr-rank-unseen");
    let generator = GeneratorConfig {
        n_queries: 1_500,
        n_sessions: 80_000,
        ..GeneratorConfig::default()
    };
    let config = PipelineConfig {
        generator: generator.clone(),
        ks: vec![5, 20, 50],
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(config, &ws)?;
    let _lock = pipeline.lock()?;
    pipeline.generate()?;
    pipeline.featurize()?;
    pipeline.label()?;
    pipeline.train("gbdt")?;

    // a different seed gives new archetypes and new traffic
    let fresh = GeneratorConfig { seed: 2024, ..generator };
    let sessions = simulate_sessions(&generate_queries(&fresh)?, &fresh)?;
    let log = ws.join("fresh_events.jsonl");
    emit_log(&sessions, &log)?;

    let ranked = pipeline.rank("gbdt", Some(&log), 15)?;
    println!("{:>4}  {:<12} {:>10}", "rank", "query", "predicted");
    for (i, (q, s)) in ranked.entries().iter().enumerate() {
        println!("{:>4}  {q:<12} {s:>10.5}", i + 1);
    }
    Ok(())
}
