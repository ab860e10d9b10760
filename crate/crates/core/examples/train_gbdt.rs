//! Fits gradient-boosted trees on the simulated benchmark with early stopping.
//!
//! `cargo run --release --example train_gbdt`

mod common;

use eqr::eval::{kendall_tau, Scores, TauVariant};
use eqr::labels::Split;
use eqr::trees::{fit_gbdt, GbdtConfig};

fn main() -> Result<(), common::Error> {
    let b = common::bench(11)?;
    let cols = common::all_columns();
    let (xt, yt) = common::xy(&b.dataset, Split::Train, &cols);
    let (xv, yv) = common::xy(&b.dataset, Split::Valid, &cols);
    let cfg = GbdtConfig {
        n_rounds: 300,
        max_depth: 3,
        learning_rate: 0.1,
        min_leaf: 20,
        ..GbdtConfig::default()
    };
    let model = fit_gbdt(&xt, &yt, Some((&xv, &yv)), &cfg)?;

    println!("{:>5} {:>12} {:>12}", "round", "train_mse", "valid_mse");
    for s in model.history.iter().filter(|s| s.round % 25 == 0 || Some(s.round) == model.history.last().map(|l| l.round)) {
        println!("{:>5} {:>12.3e} {:>12.3e}", s.round, s.train_mse, s.valid_mse.unwrap_or(f64::NAN));
    }
    println!("kept {} trees", model.rounds());

    let mut predicted = Scores::new();
    for r in b.dataset.split(Split::Test) {
        predicted.insert(r.query().to_string(), model.predict(&r.features.project(&cols))?);
    }
    let truth = common::split_truth(&b, Split::Test);
    println!("test tau-b against true engagement: {:.4}", kendall_tau(&predicted, &truth, TauVariant::B)?);
    Ok(())
}
