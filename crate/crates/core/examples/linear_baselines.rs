//! Ridge, lasso and elastic-net paths on the simulated benchmark.
//!
//! `cargo run --release --example linear_baselines`

mod common;

use eqr::eval::{mse, Scores};
use eqr::labels::Split;
use eqr::linear::{fit_linear, Penalty, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use eqr::pipeline::LAMBDA_GRID;

fn main() -> Result<(), common::Error> {
    let b = common::bench(5)?;
    let cols = common::all_columns();
    let (xt, yt) = common::xy(&b.dataset, Split::Train, &cols);
    let (xv, _) = common::xy(&b.dataset, Split::Valid, &cols);
    let observed: Scores = b.dataset.split(Split::Valid).map(|r| (r.query().to_string(), r.label.e)).collect();

    let ols = fit_linear(&xt, &yt, Penalty::ols(), DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    println!("ols: support {}, intercept {:.4}", ols.support(), ols.intercept);

    println!("{:<12} {:>8} {:>8} {:>10} {:>12}", "penalty", "lambda", "support", "l2 norm", "valid mse");
    for (name, alpha) in [("ridge", 0.0), ("elastic_net", 0.5), ("lasso", 1.0)] {
        for &lambda in &LAMBDA_GRID {
            let m = fit_linear(&xt, &yt, Penalty::elastic_net(lambda, alpha), DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
            let predicted: Scores = b
                .dataset
                .split(Split::Valid)
                .zip(&xv)
                .map(|(r, x)| Ok((r.query().to_string(), m.predict(x)?)))
                .collect::<Result<_, common::Error>>()?;
            println!(
                "{name:<12} {lambda:>8.0e} {:>8} {:>10.4} {:>12.4e}",
                m.support(),
                m.l2_norm(),
                mse(&predicted, &observed)?
            );
        }
    }
    Ok(())
}
