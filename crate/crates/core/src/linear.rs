//! Elastic-net linear regression by cyclic coordinate descent.
//!
//! Minimizes, over standardized features `z`,
//!
//! ```text
//! 1/(2n) * sum_i (y_i - b - w.z_i)^2 + lambda * (alpha * |w|_1 + (1 - alpha)/2 * |w|_2^2)
//! ```
//!
//! `lambda = 0` is ordinary least squares, `alpha = 0` ridge and `alpha = 1`
//! lasso.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinearError {
    #[error("no training rows or no features")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),
    #[error("coordinate descent did not converge after {iterations} sweeps (last max delta {delta:e})")]
    NonConvergence { iterations: usize, delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub lambda: f64,
    /// L1 share of the penalty.
    pub alpha: f64,
}

impl Penalty {
    pub fn ols() -> Self {
        Penalty { lambda: 0.0, alpha: 0.0 }
    }

    pub fn ridge(lambda: f64) -> Self {
        Penalty { lambda, alpha: 0.0 }
    }

    pub fn lasso(lambda: f64) -> Self {
        Penalty { lambda, alpha: 1.0 }
    }

    pub fn elastic_net(lambda: f64, alpha: f64) -> Self {
        Penalty { lambda, alpha }
    }

    fn validate(&self) -> Result<(), LinearError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(LinearError::InvalidPenalty(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(LinearError::InvalidPenalty(format!("alpha {} must lie in [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Training-split column statistics. Missing values are imputed with the
/// mean; columns with zero spread get `scale = 0` and are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<Option<f64>>]) -> Result<Self, LinearError> {
        let d = rows.first().map(Vec::len).ok_or(LinearError::EmptyInput)?;
        let n = rows.len() as f64;
        let mut means = Vec::with_capacity(d);
        let mut scales = Vec::with_capacity(d);
        for j in 0..d {
            let present: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
            let mean = if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            };
            let var = present.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            means.push(mean);
            scales.push(if std > 1e-12 * mean.abs().max(1.0) { std } else { 0.0 });
        }
        Ok(Standardizer { means, scales })
    }

    /// Standardized value of column `j`; 0 for ignored columns.
    pub fn transform(&self, j: usize, value: Option<f64>) -> f64 {
        let scale = self.scales[j];
        if scale == 0.0 {
            return 0.0;
        }
        (value.unwrap_or(self.means[j]) - self.means[j]) / scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Coefficients on the standardized features.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub penalty: Penalty,
    pub standardizer: Standardizer,
    pub iterations: usize,
}

impl LinearModel {
    pub fn predict(&self, x: &[Option<f64>]) -> Result<f64, LinearError> {
        if x.len() != self.weights.len() {
            return Err(LinearError::DimensionMismatch {
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        Ok(self.intercept
            + x.iter()
                .enumerate()
                .map(|(j, v)| self.weights[j] * self.standardizer.transform(j, *v))
                .sum::<f64>())
    }

    /// Number of nonzero coefficients.
    pub fn support(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    pub fn l2_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// Fits by cyclic coordinate descent until the largest coefficient or
/// intercept change in a sweep drops below `tol`.
pub fn fit_linear(
    rows: &[Vec<Option<f64>>],
    y: &[f64],
    penalty: Penalty,
    tol: f64,
    max_iters: usize,
) -> Result<LinearModel, LinearError> {
    penalty.validate()?;
    if !(tol > 0.0) {
        return Err(LinearError::InvalidInput("tol must be > 0".into()));
    }
    let d = rows.first().map(Vec::len).ok_or(LinearError::EmptyInput)?;
    if d == 0 {
        return Err(LinearError::EmptyInput);
    }
    if y.len() != rows.len() {
        return Err(LinearError::DimensionMismatch {
            expected: rows.len(),
            found: y.len(),
        });
    }
    for row in rows {
        if row.len() != d {
            return Err(LinearError::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
        if row.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LinearError::InvalidInput("non-finite feature value".into()));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(LinearError::InvalidInput("non-finite target".into()));
    }

    let n = rows.len();
    let nf = n as f64;
    let standardizer = Standardizer::fit(rows)?;
    // column-major standardized design
    let z: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            if standardizer.scales[j] > 0.0 {
                rows.iter().map(|r| standardizer.transform(j, r[j])).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    let groups = identical_columns(&z, &standardizer.scales);
    let col_sq: Vec<f64> = z.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();

    let l1 = penalty.lambda * penalty.alpha;
    let l2 = penalty.lambda * (1.0 - penalty.alpha);
    // one coefficient per group of identical columns, shared equally by its members
    let mut gw = vec![0.0; groups.len()];
    let mut b = y.iter().sum::<f64>() / nf;
    let mut r: Vec<f64> = y.iter().map(|v| v - b).collect();

    let mut delta = f64::INFINITY;
    for iter in 1..=max_iters {
        delta = 0.0f64;
        for (g, members) in groups.iter().enumerate() {
            let j = members[0];
            let m = members.len() as f64;
            let zj = &z[j];
            let rho = zj.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / nf + gw[g] * col_sq[j];
            let new = soft_threshold(rho, l1) / (col_sq[j] + l2 / m);
            let step = new - gw[g];
            if step != 0.0 {
                for (ri, zi) in r.iter_mut().zip(zj) {
                    *ri -= step * zi;
                }
                gw[g] = new;
            }
            delta = delta.max(step.abs() / m);
        }
        let shift = r.iter().sum::<f64>() / nf;
        if shift != 0.0 {
            b += shift;
            for ri in r.iter_mut() {
                *ri -= shift;
            }
        }
        delta = delta.max(shift.abs());
        if delta < tol {
            let mut weights = vec![0.0; d];
            for (members, w) in groups.iter().zip(&gw) {
                for &j in members {
                    weights[j] = w / members.len() as f64;
                }
            }
            return Ok(LinearModel {
                weights,
                intercept: b,
                penalty,
                standardizer,
                iterations: iter,
            });
        }
    }
    Err(LinearError::NonConvergence {
        iterations: max_iters,
        delta,
    })
}

/// Groups non-constant columns whose standardized values are bitwise equal.
/// For such columns the penalized optimum splits the weight equally, so
/// each group is solved as one coordinate with its L2 term divided by the
/// group size.
fn identical_columns(z: &[Vec<f64>], scales: &[f64]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for j in (0..z.len()).filter(|&j| scales[j] > 0.0) {
        match groups.iter_mut().find(|g| z[g[0]] == z[j]) {
            Some(g) => g.push(j),
            None => groups.push(vec![j]),
        }
    }
    groups
}
