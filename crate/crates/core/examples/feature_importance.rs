//! Gain, split count and cover per feature for a boosted ensemble.
//!
//! `cargo run --release --example feature_importance`

mod common;

use eqr::features::Feature;
use eqr::labels::Split;
use eqr::trees::{fit_gbdt, importance, GbdtConfig};

fn main() -> Result<(), common::Error> {
    let b = common::bench(9)?;
    let cols = common::all_columns();
    let names = common::all_names();
    let (xt, yt) = common::xy(&b.dataset, Split::Train, &cols);
    let (xv, yv) = common::xy(&b.dataset, Split::Valid, &cols);
    let cfg = GbdtConfig {
        max_depth: 3,
        min_leaf: 20,
        ..GbdtConfig::default()
    };
    let model = fit_gbdt(&xt, &yt, Some((&xv, &yv)), &cfg)?;
    let report = importance(&model.trees, &names);

    let total: f64 = report.features.iter().map(|f| f.total_gain).sum();
    println!("{:<4} {:<11} {:>7} {:>7} {:>9}  description", "", "group", "gain %", "splits", "cover");
    for name in report.ranked_by_gain() {
        let f = report.get(name).expect("ranked names come from the report");
        let feature = Feature::from_name(name).expect("model uses known features");
        println!(
            "{name:<4} {:<11} {:>7.2} {:>7} {:>9}  {}",
            format!("{:?}", feature.group()),
            100.0 * f.total_gain / total,
            f.weight,
            f.total_cover,
            feature.describe()
        );
    }
    Ok(())
}
