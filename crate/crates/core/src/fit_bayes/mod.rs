//! Posterior sampling for the dyadic growth models.
//!
//! Slopes get flat priors, the intercept a Student-t prior, random-effect
//! sds and the residual sd half-t priors, and the random-effect correlation
//! matrix an LKJ prior. Chains are independent and may run in parallel;
//! each has its own random stream, so results do not depend on scheduling.

mod diagnostics;
mod lkj;
mod sampler;
mod slice;

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use diagnostics::{ess, quantile_sorted, rhat, summarize_param, SummaryRow};
pub use lkj::{corr_cholesky, corr_pairs, cpc_len, lkj_log_density_cholesky};
pub use slice::{slice_step, SliceStats};

use crate::design::{DesignMatrices, ModelSpec};
use crate::error::{Error, Result};
use crate::lmm::LmmSystem;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfT {
    pub df: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InterceptPrior {
    StudentT { df: f64, location: f64, scale: f64 },
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualPrior {
    HalfT { df: f64, scale: f64 },
    /// Residual sd held at a known value.
    Fixed { sd: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub intercept: InterceptPrior,
    pub re_sd: HalfT,
    pub lkj_eta: f64,
    pub residual: ResidualPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            intercept: InterceptPrior::StudentT {
                df: 3.0,
                location: 0.0,
                scale: 10.0,
            },
            re_sd: HalfT { df: 3.0, scale: 10.0 },
            lkj_eta: 1.0,
            residual: ResidualPrior::HalfT { df: 3.0, scale: 10.0 },
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let mut ok = pos(self.re_sd.df) && pos(self.re_sd.scale) && pos(self.lkj_eta);
        if let InterceptPrior::StudentT { df, location, scale } = self.intercept {
            ok &= pos(df) && pos(scale) && location.is_finite();
        }
        ok &= match self.residual {
            ResidualPrior::HalfT { df, scale } => pos(df) && pos(scale),
            ResidualPrior::Fixed { sd } => pos(sd),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("prior scales, degrees of freedom and eta must be positive".into()))
        }
    }

    pub fn describe(&self) -> Vec<String> {
        let mut out = vec!["slopes: flat".to_string()];
        out.push(match self.intercept {
            InterceptPrior::StudentT { df, location, scale } => format!("intercept: student_t({df}, {location}, {scale})"),
            InterceptPrior::Flat => "intercept: flat".to_string(),
        });
        out.push(format!("re_sd: half_student_t({}, 0, {})", self.re_sd.df, self.re_sd.scale));
        out.push(format!("re_corr: lkj({})", self.lkj_eta));
        out.push(match self.residual {
            ResidualPrior::HalfT { df, scale } => format!("resid_sd: half_student_t({df}, 0, {scale}) (assumed default)"),
            ResidualPrior::Fixed { sd } => format!("resid_sd: fixed at {sd}"),
        });
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    pub chains: usize,
    pub iters: usize,
    pub warmup: usize,
    pub thin: usize,
    pub seed: u64,
    pub init_range: f64,
    /// Worker threads for chains; `None` uses one per chain.
    pub threads: Option<usize>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            chains: 4,
            iters: 2000,
            warmup: 1000,
            thin: 1,
            seed: 1,
            init_range: 2.0,
            threads: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::InvalidConfig("at least 2 chains are required".into()));
        }
        if self.warmup >= self.iters {
            return Err(Error::InvalidConfig(format!("warmup ({}) must be below iters ({})", self.warmup, self.iters)));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if !(self.init_range.is_finite() && self.init_range > 0.0) {
            return Err(Error::InvalidConfig("init range must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("thread count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.iters - self.warmup) / self.thin
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    /// Column names: `b_<term>`, `sd_<term>`, `cor_<a>__<b>`, `sigma`.
    pub names: Vec<String>,
    pub fixed_names: Vec<String>,
    pub random_names: Vec<String>,
    /// `draws[chain][draw][param]`.
    pub draws: Vec<Vec<Vec<f64>>>,
    pub config: McmcConfig,
    pub priors: PriorSpec,
    pub spec: Option<ModelSpec>,
    pub n_obs: usize,
    pub n_groups: usize,
    pub slice: SliceStats,
    pub warnings: Vec<String>,
}

pub const ESS_WARNING: f64 = 400.0;
pub const RHAT_WARNING: f64 = 1.01;

pub fn parameter_names(fixed: &[String], random: &[String]) -> Vec<String> {
    let mut names: Vec<String> = fixed.iter().map(|t| format!("b_{t}")).collect();
    names.extend(random.iter().map(|t| format!("sd_{t}")));
    names.extend(corr_pairs(random.len()).into_iter().map(|(a, b)| format!("cor_{}__{}", random[a], random[b])));
    names.push("sigma".to_string());
    names
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Per-chain series of one parameter.
    pub fn chains_of(&self, param: usize) -> Vec<Vec<f64>> {
        self.draws.iter().map(|c| c.iter().map(|row| row[param]).collect()).collect()
    }

    pub fn summarize(&self, level: f64) -> Vec<SummaryRow> {
        (0..self.names.len())
            .map(|i| summarize_param(&self.names[i], &self.chains_of(i), level))
            .collect()
    }

    /// Posterior mean of the random-effect covariance.
    pub fn mean_g(&self) -> DMatrix<f64> {
        let p = self.fixed_names.len();
        let q = self.random_names.len();
        let pairs = corr_pairs(q);
        let mut g = DMatrix::zeros(q, q);
        let mut count = 0.0f64;
        for row in self.draws.iter().flatten() {
            let sd = &row[p..p + q];
            for i in 0..q {
                g[(i, i)] += sd[i] * sd[i];
            }
            for (k, &(a, b)) in pairs.iter().enumerate() {
                let v = sd[a] * sd[b] * row[p + q + k];
                g[(a, b)] += v;
                g[(b, a)] += v;
            }
            count += 1.0;
        }
        g / count.max(1.0)
    }

    /// Posterior mean of the residual variance.
    pub fn mean_sigma2(&self) -> f64 {
        let i = self.names.len() - 1;
        let all: Vec<f64> = self.draws.iter().flatten().map(|r| r[i] * r[i]).collect();
        all.iter().sum::<f64>() / all.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (c, chain) in self.draws.iter().enumerate() {
            for (d, row) in chain.iter().enumerate() {
                let mut rec = vec![(c + 1).to_string(), (d + 1).to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn write_summary_csv<W: Write>(&self, out: W, level: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["parameter", "mean", "sd", "lower", "upper", "rhat", "ess"])?;
        for row in self.summarize(level) {
            w.write_record([
                row.name.clone(),
                row.mean.to_string(),
                row.sd.to_string(),
                row.lower.to_string(),
                row.upper.to_string(),
                row.rhat.to_string(),
                row.ess.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a draw archive written by [`PosteriorDraws::write_csv`]: the
/// parameter names and `draws[chain][draw][param]`.
pub fn read_draws_csv<R: Read>(input: R) -> Result<(Vec<String>, Vec<Vec<Vec<f64>>>)> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "chain" || &header[1] != "draw" {
        return Err(Error::Format("draw archive must start with chain,draw columns".into()));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut draws: Vec<Vec<Vec<f64>>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str, col: &str| {
            s.trim().parse::<f64>().map_err(|e| Error::Parse {
                row: i + 2,
                column: col.to_string(),
                detail: e.to_string(),
            })
        };
        let chain = parse(&rec[0], "chain")? as usize;
        if chain == 0 {
            return Err(Error::Format("chain numbers start at 1".into()));
        }
        while draws.len() < chain {
            draws.push(Vec::new());
        }
        let row = rec
            .iter()
            .skip(2)
            .zip(&names)
            .map(|(v, n)| parse(v, n))
            .collect::<Result<Vec<f64>>>()?;
        draws[chain - 1].push(row);
    }
    Ok((names, draws))
}

/// Runs `config.chains` chains and collects post-warmup draws.
pub fn fit_bayes(design: &DesignMatrices, priors: &PriorSpec, config: &McmcConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    priors.validate()?;
    if design.n_obs() == 0 {
        return Err(Error::EmptyInput);
    }
    let system = LmmSystem::new(design);
    let run = |c: usize| {
        let rng = rng::stream(config.seed, Domain::Mcmc, c as u64);
        sampler::run_chain(design, &system, priors, config, c + 1, rng)
    };
    let threads = config.threads.unwrap_or(config.chains).min(config.chains).max(1);
    let outputs: Vec<Result<sampler::ChainOutput>> = if threads == 1 {
        (0..config.chains).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| (0..config.chains).into_par_iter().map(run).collect())
    };
    let mut draws = Vec::with_capacity(config.chains);
    let mut slice = SliceStats::default();
    for out in outputs {
        let out = out?;
        slice.merge(out.slice);
        draws.push(out.draws);
    }

    let names = parameter_names(&design.fixed_names, &design.random_names);
    let mut post = PosteriorDraws {
        names,
        fixed_names: design.fixed_names.clone(),
        random_names: design.random_names.clone(),
        draws,
        config: *config,
        priors: *priors,
        spec: design.spec.clone(),
        n_obs: design.n_obs(),
        n_groups: design.n_groups(),
        slice,
        warnings: Vec::new(),
    };
    post.warnings = diagnostic_warnings(&post);
    Ok(post)
}

fn diagnostic_warnings(post: &PosteriorDraws) -> Vec<String> {
    let mut out = Vec::new();
    let mut low_ess = Vec::new();
    let mut high_rhat = Vec::new();
    for row in post.summarize(0.95) {
        if row.ess.is_finite() && row.ess < ESS_WARNING {
            low_ess.push(row.name.clone());
        }
        if row.rhat.is_finite() && row.rhat > RHAT_WARNING {
            high_rhat.push(row.name);
        }
    }
    if !high_rhat.is_empty() {
        out.push(format!("split R-hat above {RHAT_WARNING}: {}", high_rhat.join(", ")));
    }
    if !low_ess.is_empty() {
        out.push(format!("effective sample size below {ESS_WARNING}: {}", low_ess.join(", ")));
    }
    let s = post.slice;
    if s.updates > 0 && s.capped as f64 > 0.01 * s.updates as f64 {
        out.push(format!(
            "slice sampler hit its step-out limit in {} of {} updates",
            s.capped, s.updates
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn intercept_only(y: &[f64]) -> DesignMatrices {
        let n = y.len();
        DesignMatrices::from_parts(
            DVector::from_column_slice(y),
            DMatrix::from_element(n, 1, 1.0),
            DMatrix::zeros(n, 0),
            &(1..=n as u32).collect::<Vec<_>>(),
            vec!["Intercept".into()],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn names_follow_layout() {
        let names = parameter_names(&["Intercept".into(), "Time".into()], &["Intercept".into(), "Time".into(), "Role".into()]);
        assert_eq!(
            names,
            vec![
                "b_Intercept",
                "b_Time",
                "sd_Intercept",
                "sd_Time",
                "sd_Role",
                "cor_Intercept__Time",
                "cor_Intercept__Role",
                "cor_Time__Role",
                "sigma"
            ]
        );
    }

    #[test]
    fn config_validation() {
        let base = McmcConfig::default();
        assert!(base.validate().is_ok());
        assert_eq!(base.draws_per_chain(), 1000);
        assert!(McmcConfig { chains: 1, ..base }.validate().is_err());
        assert!(McmcConfig { warmup: 2000, ..base }.validate().is_err());
        assert!(McmcConfig { thin: 0, ..base }.validate().is_err());
        assert_eq!(McmcConfig { thin: 3, ..base }.draws_per_chain(), 333);
    }

    #[test]
    fn known_variance_posterior_is_normal() {
        let y: Vec<f64> = (0..40).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3 + 2.0).collect();
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        let priors = PriorSpec {
            intercept: InterceptPrior::Flat,
            residual: ResidualPrior::Fixed { sd: 1.0 },
            ..PriorSpec::default()
        };
        let config = McmcConfig {
            iters: 1500,
            warmup: 500,
            seed: 4,
            ..McmcConfig::default()
        };
        let post = fit_bayes(&intercept_only(&y), &priors, &config).unwrap();
        let s = &post.summarize(0.95)[0];
        let sd = 1.0 / (y.len() as f64).sqrt();
        assert!((s.mean - ybar).abs() < 0.05 * sd, "{} vs {ybar}", s.mean);
        assert!((s.sd / sd - 1.0).abs() < 0.05, "{} vs {sd}", s.sd);
        assert!(post.draws.iter().flatten().all(|r| r[1] == 1.0));
    }

    #[test]
    fn vague_data_leaves_intercept_near_prior_scale() {
        let priors = PriorSpec {
            residual: ResidualPrior::Fixed { sd: 1e3 },
            ..PriorSpec::default()
        };
        let config = McmcConfig {
            iters: 4000,
            warmup: 500,
            seed: 2,
            ..McmcConfig::default()
        };
        let post = fit_bayes(&intercept_only(&[0.4, -0.2]), &priors, &config).unwrap();
        let sd = post.summarize(0.95)[0].sd;
        assert!(sd > 10.0 / 3.0 && sd < 30.0, "{sd}");
    }

    #[test]
    fn draws_are_deterministic_and_round_trip() {
        let y: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let config = McmcConfig {
            iters: 60,
            warmup: 20,
            seed: 9,
            ..McmcConfig::default()
        };
        let a = fit_bayes(&intercept_only(&y), &PriorSpec::default(), &config).unwrap();
        let b = fit_bayes(&intercept_only(&y), &PriorSpec::default(), &McmcConfig { threads: Some(1), ..config }).unwrap();
        assert_eq!(a.draws, b.draws);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let (names, draws) = read_draws_csv(buf.as_slice()).unwrap();
        assert_eq!(names, a.names);
        assert_eq!(draws, a.draws);
    }
}
