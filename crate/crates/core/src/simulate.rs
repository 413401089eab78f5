//! Synthetic dyadic panels drawn from the covariate growth model.
//!
//! Each dyad gets its own random stream, so the first `k` dyads of a larger
//! simulation are identical to a `k`-dyad simulation with the same seed.
//!
//! Covariates entering the outcome are centered the same way the pipeline
//! centers them, except that aggregates are centered at the population mean
//! of the two role means (a known constant) rather than the sample mean,
//! which keeps dyads independent of each other.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{CodingKind, CodingScheme, LongDataset, LongRow, Role, Stage, TimeGrid};
use crate::design::{fixed_row, random_row, ModelKind, RowCovariates, APIM_CFGM_TERMS};
use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, min_eigenvalue, psd_cholesky};
use crate::rng::{self, Domain};

/// True generating values. `fixed` follows the covariate model's term order.
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub fixed: Vec<f64>,
    /// Dyad-level sds for intercept, Time, Role and Time:Role.
    pub re_sd: [f64; 4],
    pub re_corr: DMatrix<f64>,
    pub resid_sd: f64,
    /// Covariate means for (expert, novice).
    pub rapport_mean_by_role: [f64; 2],
    pub rapport_within_sd: f64,
    pub rapport_between_sd: f64,
    pub coding_for_generation: CodingScheme,
}

impl Default for GenParams {
    /// Expert intercept 1.38, Time:Role 2.43 and actor within-person 0.36;
    /// dyad variances near 17/18/35/40 with residual variance 0.95.
    fn default() -> Self {
        let mut corr = DMatrix::<f64>::identity(4, 4);
        corr[(0, 2)] = -0.67;
        corr[(2, 0)] = -0.67;
        corr[(1, 3)] = -0.68;
        corr[(3, 1)] = -0.68;
        GenParams {
            fixed: vec![
                1.38, 0.80, 1.35, 0.36, 0.06, -0.10, -0.21, 2.43, -0.02, -0.32, 0.06, -0.24, -0.18, 0.33,
                0.07, 0.15, 0.03, 0.43, -0.05, 0.28,
            ],
            re_sd: [4.06, 4.28, 5.90, 6.32],
            re_corr: corr,
            resid_sd: 0.975,
            rapport_mean_by_role: [3.0, 2.0],
            rapport_within_sd: 1.5,
            rapport_between_sd: 1.5,
            coding_for_generation: CodingScheme::DUMMY,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.fixed.len() != APIM_CFGM_TERMS.len() {
            return bad("fixed must hold 20 coefficients");
        }
        if self.fixed.iter().any(|v| !v.is_finite()) {
            return bad("fixed coefficients must be finite");
        }
        if self.re_sd.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("re_sd entries must be finite and nonnegative");
        }
        if !(self.resid_sd.is_finite() && self.resid_sd > 0.0) {
            return bad("resid_sd must be positive");
        }
        if !(self.rapport_within_sd >= 0.0 && self.rapport_between_sd >= 0.0) {
            return bad("rapport sds must be nonnegative");
        }
        if self.rapport_mean_by_role.iter().any(|m| !m.is_finite()) {
            return bad("rapport means must be finite");
        }
        let c = &self.re_corr;
        if c.nrows() != 4 || c.ncols() != 4 || !is_symmetric(c, 1e-12) {
            return bad("re_corr must be a symmetric 4x4 matrix");
        }
        if (0..4).any(|i| (c[(i, i)] - 1.0).abs() > 1e-12) {
            return bad("re_corr must have a unit diagonal");
        }
        if c.iter().any(|v| v.abs() > 1.0) || min_eigenvalue(c) < -1e-10 {
            return bad("re_corr must be positive semidefinite");
        }
        Ok(())
    }

    /// Dyad-level covariance implied by `re_sd` and `re_corr`.
    pub fn re_cov(&self) -> DMatrix<f64> {
        let s = DVector::from_column_slice(&self.re_sd);
        DMatrix::from_fn(4, 4, |i, j| s[i] * s[j] * self.re_corr[(i, j)])
    }

    /// `key = value` text, one field per line; lists are comma separated and
    /// `re_corr` is row-major.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "# fixed effects in term order: {}", APIM_CFGM_TERMS.join(" "));
        let _ = writeln!(s, "fixed = {}", list(&self.fixed));
        let _ = writeln!(s, "# dyad-level sds: Intercept, Time, Role, Time:Role");
        let _ = writeln!(s, "re_sd = {}", list(&self.re_sd));
        let _ = writeln!(s, "re_corr = {}", list(self.re_corr.transpose().as_slice()));
        let _ = writeln!(s, "resid_sd = {}", self.resid_sd);
        let _ = writeln!(s, "# expert, novice");
        let _ = writeln!(s, "rapport_mean_by_role = {}", list(&self.rapport_mean_by_role));
        let _ = writeln!(s, "rapport_within_sd = {}", self.rapport_within_sd);
        let _ = writeln!(s, "rapport_between_sd = {}", self.rapport_between_sd);
        let _ = writeln!(s, "coding_for_generation = {}", self.coding_for_generation.kind().as_str());
        s
    }

    /// Parses `key = value` text; keys that are absent keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = GenParams::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidParams(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let list = || -> Result<Vec<f64>> {
                value
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidParams(format!("line {}: bad number `{}`", lineno + 1, t.trim())))
                    })
                    .collect()
            };
            let scalar = || -> Result<f64> {
                match list()?.as_slice() {
                    [v] => Ok(*v),
                    _ => Err(Error::InvalidParams(format!("line {}: `{key}` takes one value", lineno + 1))),
                }
            };
            let fixed_len = |v: Vec<f64>, n: usize| -> Result<Vec<f64>> {
                if v.len() == n {
                    Ok(v)
                } else {
                    Err(Error::InvalidParams(format!("`{key}` needs {n} values, got {}", v.len())))
                }
            };
            match key {
                "fixed" => p.fixed = fixed_len(list()?, 20)?,
                "re_sd" => p.re_sd.copy_from_slice(&fixed_len(list()?, 4)?),
                "re_corr" => p.re_corr = DMatrix::from_row_slice(4, 4, &fixed_len(list()?, 16)?),
                "resid_sd" => p.resid_sd = scalar()?,
                "rapport_mean_by_role" => p.rapport_mean_by_role.copy_from_slice(&fixed_len(list()?, 2)?),
                "rapport_within_sd" => p.rapport_within_sd = scalar()?,
                "rapport_between_sd" => p.rapport_between_sd = scalar()?,
                "coding_for_generation" => {
                    let kind: CodingKind = value.parse().map_err(Error::InvalidParams)?;
                    p.coding_for_generation = CodingScheme::of(kind);
                }
                other => return Err(Error::InvalidParams(format!("unknown key `{other}`"))),
            }
        }
        p.validate()?;
        Ok(p)
    }
}

/// Novice of dyad `k` (1-based) is person `k`; the expert is person `n_dyads + k`.
pub fn simulate(params: &GenParams, n_dyads: usize, seed: u64) -> Result<LongDataset> {
    params.validate()?;
    if n_dyads == 0 {
        return Err(Error::InvalidParams("n_dyads must be at least 1".into()));
    }
    let grid = TimeGrid::default();
    let re_chol = psd_cholesky(&params.re_cov())?;
    let pop_mean = 0.5 * (params.rapport_mean_by_role[0] + params.rapport_mean_by_role[1]);
    let coding = params.coding_for_generation;
    let n_waves = grid.n_waves() as usize;

    let mut rows = Vec::with_capacity(n_dyads * 2 * n_waves);
    for k in 0..n_dyads {
        let mut rng = rng::stream(seed, Domain::Simulate, k as u64);
        let dyad_id = (k + 1) as u32;
        let members = [
            (dyad_id, Role::Novice, params.rapport_mean_by_role[1]),
            (dyad_id + n_dyads as u32, Role::Expert, params.rapport_mean_by_role[0]),
        ];

        let mut raw = [[0.0; 5]; 2];
        for (m, &(_, _, mean)) in members.iter().enumerate() {
            let person_mean = mean + params.rapport_between_sd * rng.sample::<f64, _>(StandardNormal);
            for w in 0..n_waves {
                raw[m][w] = person_mean + params.rapport_within_sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let z = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = &re_chol * z;

        let person_avg = raw.map(|r| r.iter().sum::<f64>() / n_waves as f64);
        for (m, &(person_id, role, _)) in members.iter().enumerate() {
            let other = 1 - m;
            for w in 0..n_waves {
                let time = grid.times()[w];
                let role_code = coding.code(role);
                let cov = RowCovariates {
                    time,
                    role: role_code,
                    actor_within: raw[m][w] - person_avg[m],
                    actor_agg: person_avg[m] - pop_mean,
                    partner_within: raw[other][w] - person_avg[other],
                    partner_agg: person_avg[other] - pop_mean,
                };
                let mean: f64 = fixed_row(ModelKind::ApimCfgm, &cov)
                    .iter()
                    .zip(&params.fixed)
                    .map(|(x, b)| x * b)
                    .sum();
                let re: f64 = random_row(time, role_code).iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                let eps: f64 = rng.sample(StandardNormal);
                let outcome = mean + re + params.resid_sd * eps;
                rows.push(LongRow::raw(dyad_id, person_id, role, (w + 1) as u32, outcome, raw[m][w]));
            }
        }
    }
    LongDataset::new(rows, Stage::Raw, CodingScheme::DUMMY, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_params_are_valid_and_round_trip_as_text() {
        let p = GenParams::default();
        p.validate().unwrap();
        assert_eq!(GenParams::from_text(&p.to_text()).unwrap(), p);
    }

    #[test]
    fn shape_of_simulated_panel() {
        let d = simulate(&GenParams::default(), 50, 1).unwrap();
        assert_eq!(d.len(), 500);
        assert_eq!(d.n_persons(), 100);
        assert_eq!(d.n_dyads(), 50);
        for dyad in d.dyad_ids() {
            let rows: Vec<_> = d.rows().iter().filter(|r| r.dyad_id == dyad).collect();
            assert_eq!(rows.iter().filter(|r| r.role == Role::Expert).count(), 5);
            assert_eq!(rows.iter().filter(|r| r.role == Role::Novice).count(), 5);
        }
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let p = GenParams::default();
        let a = simulate(&p, 6, 3).unwrap();
        assert_eq!(a, simulate(&p, 6, 3).unwrap());
        let small = simulate(&p, 3, 3).unwrap();
        let outcomes = |d: &LongDataset, dyad: u32| -> Vec<f64> {
            d.rows().iter().filter(|r| r.dyad_id == dyad).map(|r| r.outcome).collect()
        };
        for dyad in 1..=3 {
            assert_eq!(outcomes(&a, dyad), outcomes(&small, dyad));
        }
    }

    #[test]
    fn noiseless_expert_traces_are_lines() {
        let mut p = GenParams::default();
        p.fixed = vec![0.0; 20];
        p.fixed[0] = 1.5;
        p.fixed[1] = -0.4;
        p.re_sd = [0.0; 4];
        p.resid_sd = 1e-300;
        let d = simulate(&p, 4, 11).unwrap();
        for r in d.rows().iter().filter(|r| r.role == Role::Expert) {
            assert_abs_diff_eq!(r.outcome, 1.5 - 0.4 * r.time, epsilon = 1e-12);
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = GenParams::default();
        p.resid_sd = 0.0;
        assert!(matches!(simulate(&p, 2, 1), Err(Error::InvalidParams(_))));
        let mut p = GenParams::default();
        p.re_corr[(0, 1)] = 0.9;
        p.re_corr[(1, 0)] = 0.9;
        p.re_corr[(0, 2)] = 0.9;
        p.re_corr[(2, 0)] = 0.9;
        p.re_corr[(1, 2)] = -0.9;
        p.re_corr[(2, 1)] = -0.9;
        assert!(p.validate().is_err());
        assert!(GenParams::from_text("bogus = 1").is_err());
        assert!(simulate(&GenParams::default(), 0, 1).is_err());
    }
}
