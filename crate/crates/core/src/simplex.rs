//! Probability-simplex helpers: uniform sampling and convex-hull membership.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Uniform draw from the probability simplex of dimension `n` (flat Dirichlet).
pub fn uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = x.iter().sum();
    if total > 0.0 {
        x.iter_mut().for_each(|v| *v /= total);
    } else {
        x = vec![1.0 / n as f64; n];
    }
    x
}

/// Nonnegative least squares `min ‖A x − b‖₂, x ≥ 0` (Lawson–Hanson active set).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let tol = 1e-12 * a.amax().max(1.0) * a.nrows().max(n) as f64;
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    for _ in 0..3 * n.max(1) + 10 {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(&cols);
            let z_sub = sub
                .clone()
                .svd(true, true)
                .solve(b, 1e-14)
                .unwrap_or_else(|_| DVector::zeros(cols.len()));
            if z_sub.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &c) in cols.iter().enumerate() {
                    x[c] = z_sub[k];
                }
                break;
            }
            let mut step = f64::INFINITY;
            for (k, &c) in cols.iter().enumerate() {
                if z_sub[k] <= 0.0 {
                    let denom = x[c] - z_sub[k];
                    if denom > 0.0 {
                        step = step.min(x[c] / denom);
                    }
                }
            }
            if !step.is_finite() {
                step = 0.0;
            }
            for (k, &c) in cols.iter().enumerate() {
                x[c] += step * (z_sub[k] - x[c]);
                if x[c] <= 1e-15 {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
            if cols.iter().all(|&c| !passive[c]) {
                break;
            }
        }
    }
    x
}

/// Distance (ℓ²) from `target` to the convex hull of the columns of `columns`.
///
/// Solved as a nonnegative least-squares problem with a heavily weighted
/// sum-to-one row.
pub fn hull_residual(columns: &DMatrix<f64>, target: &[f64]) -> f64 {
    let (rows, cols) = columns.shape();
    const WEIGHT: f64 = 10.0;
    let mut a = DMatrix::zeros(rows + 1, cols);
    a.view_mut((0, 0), (rows, cols)).copy_from(columns);
    a.row_mut(rows).fill(WEIGHT);
    let mut b = DVector::zeros(rows + 1);
    for (i, t) in target.iter().enumerate() {
        b[i] = *t;
    }
    b[rows] = WEIGHT;
    let weights = nnls(&a, &b);
    let fit = columns * &weights;
    let mass_gap = (weights.sum() - 1.0).abs();
    let gap: f64 = fit
        .iter()
        .zip(target)
        .map(|(f, t)| (f - t).powi(2))
        .sum::<f64>()
        .sqrt();
    gap + mass_gap
}
