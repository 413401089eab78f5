//! Correlation matrices through canonical partial correlations.
//!
//! Each of the d(d−1)/2 unconstrained coordinates maps to a partial
//! correlation `z = tanh(y)`, and the partial correlations fill the rows of
//! the lower Cholesky factor of the correlation matrix.

use nalgebra::DMatrix;

pub fn cpc_len(d: usize) -> usize {
    d * d.saturating_sub(1) / 2
}

/// Lower Cholesky factor of the correlation matrix for unconstrained `y`
/// (row-wise below-diagonal order), with the log Jacobian of `y ↦ L`.
pub fn corr_cholesky(y: &[f64], d: usize) -> (DMatrix<f64>, f64) {
    debug_assert_eq!(y.len(), cpc_len(d));
    let mut l = DMatrix::zeros(d, d);
    let mut log_jac = 0.0;
    if d == 0 {
        return (l, log_jac);
    }
    l[(0, 0)] = 1.0;
    let mut k = 0;
    for i in 1..d {
        let mut sum_sq = 0.0f64;
        for j in 0..i {
            let z = y[k].tanh();
            k += 1;
            log_jac += (1.0 - z * z).ln();
            let remaining = (1.0 - sum_sq).max(0.0);
            log_jac += 0.5 * remaining.ln();
            let w = z * remaining.sqrt();
            l[(i, j)] = w;
            sum_sq += w * w;
        }
        l[(i, i)] = (1.0 - sum_sq).max(0.0).sqrt();
    }
    (l, log_jac)
}

/// LKJ(η) log density (up to a constant) in terms of the Cholesky factor.
pub fn lkj_log_density_cholesky(l: &DMatrix<f64>, eta: f64) -> f64 {
    let d = l.nrows();
    (1..d)
        .map(|i| (d as f64 - i as f64 - 1.0 + 2.0 * eta - 2.0) * l[(i, i)].ln())
        .sum()
}

/// Log density of the unconstrained coordinates under LKJ(η).
pub fn log_density_unconstrained(y: &[f64], d: usize, eta: f64) -> (DMatrix<f64>, f64) {
    let (l, log_jac) = corr_cholesky(y, d);
    let lp = lkj_log_density_cholesky(&l, eta) + log_jac;
    (l, lp)
}

/// Correlation pairs `(a, b)` with `a < b`, in output order.
pub fn corr_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|a| ((a + 1)..d).map(move |b| (a, b))).collect()
}
