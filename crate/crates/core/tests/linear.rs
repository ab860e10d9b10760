mod common;

use common::{ols_gap, random_instance, wrap};
use eqr::linear::{fit_linear, Penalty, DEFAULT_MAX_ITERS};
use proptest::prelude::*;

proptest! {
    #[test]
    fn unpenalized_fit_matches_least_squares(seed in any::<u64>()) {
        if let Some(gap) = ols_gap(seed) {
            prop_assert!(gap < 1e-6, "gap {}", gap);
        }
    }

    #[test]
    fn ridge_norm_shrinks_with_lambda(seed in any::<u64>()) {
        let (x, y) = random_instance(seed);
        let rows = wrap(&x);
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0] {
            let m = fit_linear(&rows, &y, Penalty::ridge(lambda), 1e-12, 100_000).unwrap();
            prop_assert!(m.l2_norm() <= prev + 1e-9);
            prev = m.l2_norm();
        }
    }

    #[test]
    fn feature_rescaling_keeps_predictions(seed in any::<u64>(), c in 0.01f64..100.0, lambda in 0.0f64..1.0) {
        let (x, y) = random_instance(seed);
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
        let p = Penalty::elastic_net(lambda, 0.5);
        let a = fit_linear(&wrap(&x), &y, p, 1e-12, DEFAULT_MAX_ITERS).unwrap();
        let b = fit_linear(&wrap(&scaled), &y, p, 1e-12, DEFAULT_MAX_ITERS).unwrap();
        for (r, s) in wrap(&x).iter().zip(&wrap(&scaled)) {
            let (pa, pb) = (a.predict(r).unwrap(), b.predict(s).unwrap());
            prop_assert!((pa - pb).abs() < 1e-6 * (1.0 + pa.abs()));
        }
    }

    #[test]
    fn lasso_weights_are_zero_beyond_max_correlation(seed in any::<u64>()) {
        let (x, y) = random_instance(seed);
        let m = fit_linear(&wrap(&x), &y, Penalty::lasso(1e6), 1e-12, DEFAULT_MAX_ITERS).unwrap();
        prop_assert_eq!(m.support(), 0);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        prop_assert!((m.intercept - mean).abs() < 1e-9);
    }
}

#[test]
fn missing_values_are_mean_imputed() {
    let (x, y) = random_instance(5);
    let mut rows = wrap(&x);
    rows[3][0] = None;
    let m = fit_linear(&rows, &y, Penalty::ridge(0.1), 1e-12, DEFAULT_MAX_ITERS).unwrap();
    let mut probe = rows[0].clone();
    probe[0] = None;
    let mut imputed = probe.clone();
    imputed[0] = Some(m.standardizer.means[0]);
    assert!((m.predict(&probe).unwrap() - m.predict(&imputed).unwrap()).abs() < 1e-12);
}
