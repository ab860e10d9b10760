//! Runs every stage into a workspace directory, then reruns to show caching.
//!
//! `cargo run --release --example full_pipeline -- [WORKSPACE]`

use std::path::PathBuf;

use eqr::datagen::GeneratorConfig;
use eqr::pipeline::{Pipeline, PipelineConfig, StageOutcome};

fn show(outcomes: &[StageOutcome]) {
    for o in outcomes {
        println!("  {:<24} {:<6} {:>7.2}s", o.stage, if o.cached { "cached" } else { "done" }, o.seconds);
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ws = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("eqr-full-pipeline"), PathBuf::from);
    let config = PipelineConfig {
        generator: GeneratorConfig {
            n_queries: 1_500,
            n_sessions: 80_000,
            ..GeneratorConfig::default()
        },
        ks: vec![5, 20, 50],
        ..PipelineConfig::default()
    };
    println!("config:\n{}", config.to_toml()?);
    let pipeline = Pipeline::new(config, &ws)?;
    let _lock = pipeline.lock()?;

    println!("first run");
    show(&pipeline.run_all()?);
    println!("second run");
    show(&pipeline.run_all()?);

    print!("{}", std::fs::read_to_string(pipeline.reports_dir().join("evaluation.txt"))?);
    println!("artifacts in {}", ws.display());
    Ok(())
}
