//! Compares a tree ensemble, a linear model and search frequency against the
//! true engagement of held-out queries.
//!
//! `cargo run --release --example evaluate_rankers`

mod common;

use eqr::eval::{evaluate_all, render_table, ModelScores, Scores};
use eqr::labels::Split;
use eqr::linear::{fit_linear, Penalty, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use eqr::trees::{fit_gbdt, fit_random_forest, ForestConfig, GbdtConfig};

fn main() -> Result<(), common::Error> {
    let b = common::bench(3)?;
    let cols = common::all_columns();
    let (xt, yt) = common::xy(&b.dataset, Split::Train, &cols);
    let (xv, yv) = common::xy(&b.dataset, Split::Valid, &cols);
    let test: Vec<_> = b.dataset.split(Split::Test).collect();

    let gbdt = fit_gbdt(
        &xt,
        &yt,
        Some((&xv, &yv)),
        &GbdtConfig {
            max_depth: 3,
            min_leaf: 20,
            ..GbdtConfig::default()
        },
    )?;
    let forest = fit_random_forest(
        &xt,
        &yt,
        &ForestConfig {
            n_trees: 50,
            min_leaf: 10,
            ..ForestConfig::default()
        },
    )?;
    let ridge = fit_linear(&xt, &yt, Penalty::ridge(1e-2), DEFAULT_TOL, DEFAULT_MAX_ITERS)?;

    let score = |f: &dyn Fn(&[Option<f64>]) -> f64| -> Scores {
        test.iter().map(|r| (r.query().to_string(), f(&r.features.project(&cols)))).collect()
    };
    let models = vec![
        ModelScores {
            name: "gbdt".into(),
            scores: score(&|x| gbdt.predict(x).expect("feature count matches")),
            regression: true,
        },
        ModelScores {
            name: "random_forest".into(),
            scores: score(&|x| forest.predict(x).expect("feature count matches")),
            regression: true,
        },
        ModelScores {
            name: "ridge".into(),
            scores: score(&|x| ridge.predict(x).expect("feature count matches")),
            regression: true,
        },
    ];
    let freq: Scores = test.iter().map(|r| (r.query().to_string(), r.label.freq as f64)).collect();
    let truth = common::split_truth(&b, Split::Test);
    let reports = evaluate_all(&models, &truth, &freq, &[5, 20, 50])?;
    println!("{} test queries", test.len());
    print!("{}", render_table(&reports));
    Ok(())
}
