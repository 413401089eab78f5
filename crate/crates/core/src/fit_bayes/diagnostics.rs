//! Split R-hat, effective sample size and posterior summaries.

use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn check_not_constant(chains: &[Vec<f64>]) -> Result<()> {
    let first = chains.iter().flat_map(|c| c.first()).next().copied();
    match first {
        Some(f) if chains.iter().flatten().any(|v| *v != f) => Ok(()),
        _ => Err(Error::ZeroVariance),
    }
}

/// Split-chain potential scale reduction.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let n_min = chains.iter().map(Vec::len).min().unwrap_or(0);
    if chains.len() < 2 {
        return Err(Error::TooFewDraws {
            needed: 2,
            got: chains.len(),
        });
    }
    if n_min < 4 {
        return Err(Error::TooFewDraws { needed: 4, got: n_min });
    }
    check_not_constant(chains)?;
    let half = n_min / 2;
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let c = &c[..2 * half];
            [&c[..half], &c[half..]]
        })
        .collect();
    let n = half as f64;
    let w = halves.iter().map(|h| sample_var(h)).sum::<f64>() / halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let b = n * sample_var(&means);
    if w == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((((n - 1.0) / n * w + b / n) / w).sqrt())
}

/// Autocovariance at `lag`, normalized by the chain length.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size with Geyer's initial positive
/// (monotone) sequence truncation of the pooled autocorrelations.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.is_empty() {
        return Err(Error::TooFewDraws { needed: 1, got: 0 });
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::TooFewDraws { needed: 4, got: n });
    }
    check_not_constant(chains)?;
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| sample_var(c)).sum::<f64>() / m;
    let b_over_n = if chains.len() > 1 { sample_var(&means) } else { 0.0 };
    let var_plus = w * (nf - 1.0) / nf + b_over_n;
    if !(var_plus > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let rho = |lag: usize| {
        let mean_acov = chains.iter().zip(&means).map(|(c, mu)| autocov(c, *mu, lag)).sum::<f64>() / m;
        1.0 - (w - mean_acov) / var_plus
    };

    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let total = m * nf;
    Ok(total / tau.max(1.0 / total.log10().max(1.0)))
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    /// NaN when undefined (constant draws or too few chains).
    pub rhat: f64,
    pub ess: f64,
}

/// Mean, sd, equal-tailed interval at `level` and diagnostics for one
/// parameter given its per-chain draws.
pub fn summarize_param(name: &str, chains: &[Vec<f64>], level: f64) -> SummaryRow {
    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    let mean_v = mean(&all);
    let sd = if all.len() > 1 { sample_var(&all).sqrt() } else { 0.0 };
    all.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    SummaryRow {
        name: name.to_string(),
        mean: mean_v,
        sd,
        lower: quantile_sorted(&all, tail),
        upper: quantile_sorted(&all, 1.0 - tail),
        rhat: rhat(chains).unwrap_or(f64::NAN),
        ess: ess(chains).unwrap_or(f64::NAN),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn split_rhat_hand_example() {
        let chains = vec![vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0]];
        // halves {1,2},{3,4},{1,2},{3,4}: W = 0.5, B = 2·Var(1.5, 3.5, 1.5, 3.5) = 8/3
        let want = ((0.5 * 0.5 + (8.0 / 3.0) / 2.0) / 0.5f64).sqrt();
        let got = rhat(&chains).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 1.779513042005763, epsilon = 1e-12);
    }

    #[test]
    fn rhat_of_iid_chains_is_near_one() {
        let chains = vec![normals(1, 10_000), normals(2, 10_000)];
        let r = rhat(&chains).unwrap();
        assert!((0.999..=1.005).contains(&r), "{r}");
    }

    #[test]
    fn constant_draws_are_rejected() {
        let chains = vec![vec![7.0; 10], vec![7.0; 10]];
        assert!(matches!(rhat(&chains), Err(Error::ZeroVariance)));
        assert!(matches!(ess(&chains), Err(Error::ZeroVariance)));
    }

    #[test]
    fn ess_of_iid_chain() {
        let n = 20_000;
        let e = ess(&[normals(5, n)]).unwrap();
        assert!((e - n as f64).abs() < 0.1 * n as f64, "{e}");
    }

    #[test]
    fn ess_of_ar1_chain() {
        let n = 100_000;
        let phi = 0.9;
        let eps = normals(8, n);
        let mut x = Vec::with_capacity(n);
        let mut prev = 0.0;
        for e in eps {
            prev = phi * prev + (1.0 - phi * phi as f64).sqrt() * e;
            x.push(prev);
        }
        let want = n as f64 * (1.0 - phi) / (1.0 + phi);
        let got = ess(&[x]).unwrap();
        assert!((got - want).abs() < 0.15 * want, "{got} vs {want}");
    }

    #[test]
    fn summary_arithmetic() {
        let row = summarize_param("x", &[vec![1.0, 2.0, 3.0]], 0.95);
        assert_eq!(row.mean, 2.0);
        assert_eq!(row.sd, 1.0);
        assert_abs_diff_eq!(row.lower, 1.05, epsilon = 1e-12);
        assert_abs_diff_eq!(row.upper, 2.95, epsilon = 1e-12);
        assert!(row.rhat.is_nan());
    }

    #[test]
    fn symmetric_draws_give_symmetric_interval() {
        let mut x = normals(12, 8000);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        x.extend(neg);
        let row = summarize_param("x", &[x], 0.9);
        assert_abs_diff_eq!(row.lower, -row.upper, epsilon = 1e-12);
    }
}
