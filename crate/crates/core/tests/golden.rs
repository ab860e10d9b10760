//! Hand-computed features and labels for a two-query micro log.

use std::path::PathBuf;

use eqr::events::{parse_event_log, sessionize, ParseMode};
use eqr::features::{build_feature_matrix, write_feature_csv, AttributionPolicy};
use eqr::labels::compute_engagement;
use eqr::pipeline::{Pipeline, PipelineConfig};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn micro_log_features_match_golden_csv_bytes() {
    let parsed = parse_event_log(&data("micro_log.jsonl"), ParseMode::Strict).unwrap();
    let sessions = sessionize(parsed.events);
    let vectors = build_feature_matrix(&sessions, &AttributionPolicy::default()).unwrap();
    let mut out = Vec::new();
    write_feature_csv(&vectors, &mut out).unwrap();
    let golden = std::fs::read_to_string(data("micro_features.csv")).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), golden);
}

#[test]
fn micro_log_labels() {
    let parsed = parse_event_log(&data("micro_log.jsonl"), ParseMode::Strict).unwrap();
    let labels = compute_engagement(&sessionize(parsed.events), &AttributionPolicy::default()).unwrap();
    let got: Vec<_> = labels.iter().map(|l| (l.query.as_str(), l.freq, l.freq_c, l.e)).collect();
    assert_eq!(got, vec![("air fryer", 2, 1, 0.5), ("tent", 2, 1, 0.5)]);
}

#[test]
fn featurize_stage_writes_golden_csv() {
    let ws = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::new(PipelineConfig::default(), ws.path()).unwrap();
    let log = pipeline.path(&pipeline.config.paths.log);
    std::fs::create_dir_all(log.parent().unwrap()).unwrap();
    std::fs::copy(data("micro_log.jsonl"), &log).unwrap();
    pipeline.featurize().unwrap();
    let written = std::fs::read(pipeline.path(&pipeline.config.paths.features)).unwrap();
    assert_eq!(written, std::fs::read(data("micro_features.csv")).unwrap());
}
