//! One chain of the blocked Gibbs sampler.
//!
//! Per iteration: β from its conditional with the dyad effects integrated
//! out, the dyad effects given β, the residual variance (with its half-t
//! auxiliary variable), the random-effect sds and correlations by slice
//! sampling given the dyad effects, and the intercept prior's mixing scale.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::lkj;
use super::slice::{slice_step, SliceStats};
use super::{InterceptPrior, McmcConfig, PriorSpec, ResidualPrior};
use crate::design::DesignMatrices;
use crate::error::{Error, Result};
use crate::lmm::LmmSystem;

const INIT_TRIES: usize = 100;
const SLICE_SWEEPS: usize = 2;

pub(crate) struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub slice: SliceStats,
}

struct Target<'a> {
    design: &'a DesignMatrices,
    system: &'a LmmSystem,
    priors: &'a PriorSpec,
    intercept: Option<usize>,
}

#[derive(Clone)]
struct State {
    beta: DVector<f64>,
    u: Vec<DVector<f64>>,
    log_sd: Vec<f64>,
    cpc: Vec<f64>,
    sigma2: f64,
    sigma_aux: f64,
    intercept_scale: f64,
}

fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("positive gamma parameters");
    1.0 / g.sample(rng)
}

fn std_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Half-Student-t log density (up to a constant) on the positive axis.
fn half_t_logpdf(x: f64, df: f64, scale: f64) -> f64 {
    -(df + 1.0) / 2.0 * (1.0 + (x / scale).powi(2) / df).ln()
}

impl Target<'_> {
    fn q(&self) -> usize {
        self.system.q
    }

    fn covariance(&self, log_sd: &[f64], cpc: &[f64]) -> DMatrix<f64> {
        let q = self.q();
        let (l, _) = lkj::corr_cholesky(cpc, q);
        let r = &l * l.transpose();
        DMatrix::from_fn(q, q, |i, j| r[(i, j)] * log_sd[i].exp() * log_sd[j].exp())
    }

    /// Log density of (log sds, correlation coordinates) given the
    /// scatter `s = Σ uₖuₖᵀ` of `k` dyad effects.
    fn cov_logp(&self, log_sd: &[f64], cpc: &[f64], s: &DMatrix<f64>, k: f64) -> f64 {
        let q = self.q();
        let (l, lkj_lp) = lkj::log_density_unconstrained(cpc, q, self.priors.lkj_eta);
        if !lkj_lp.is_finite() || (0..q).any(|i| !(l[(i, i)] > 0.0)) {
            return f64::NEG_INFINITY;
        }
        let sd: Vec<f64> = log_sd.iter().map(|v| v.exp()).collect();
        if sd.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return f64::NEG_INFINITY;
        }
        let scaled = DMatrix::from_fn(q, q, |i, j| s[(i, j)] / (sd[i] * sd[j]));
        // tr(R⁻¹ S̃) = ‖L⁻¹ S̃ L⁻ᵀ‖ trace
        let Some(a) = l.solve_lower_triangular(&scaled) else {
            return f64::NEG_INFINITY;
        };
        let Some(b) = l.solve_lower_triangular(&a.transpose()) else {
            return f64::NEG_INFINITY;
        };
        let trace = b.trace();
        let log_det_r = 2.0 * (0..q).map(|i| l[(i, i)].ln()).sum::<f64>();
        let log_det_g = log_det_r + 2.0 * log_sd.iter().sum::<f64>();
        let lik = -0.5 * k * log_det_g - 0.5 * trace;
        let prior: f64 = log_sd
            .iter()
            .zip(&sd)
            .map(|(ls, s)| half_t_logpdf(*s, self.priors.re_sd.df, self.priors.re_sd.scale) + ls)
            .sum();
        lik + prior + lkj_lp
    }

    fn draw_beta(&self, rng: &mut ChaCha20Rng, st: &State) -> Result<DVector<f64>> {
        let q = self.q();
        let lambda = if q == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let g = self.covariance(&st.log_sd, &st.cpc);
            let lg = g.cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
            lg / st.sigma2.sqrt()
        };
        let red = self.system.reduce(&lambda)?;
        let mut prec = red.xtwx / st.sigma2;
        let mut rhs = red.xtwy / st.sigma2;
        if let (Some(i), InterceptPrior::StudentT { location, .. }) = (self.intercept, self.priors.intercept) {
            prec[(i, i)] += 1.0 / st.intercept_scale;
            rhs[i] += location / st.intercept_scale;
        }
        let chol = prec.cholesky().ok_or(Error::SingularSystem)?;
        let mean = chol.solve(&rhs);
        let z = std_normal_vec(rng, mean.len());
        let dev = chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .ok_or(Error::SingularSystem)?;
        Ok(mean + dev)
    }

    fn draw_beta_given_u(&self, rng: &mut ChaCha20Rng, st: &State) -> Result<DVector<f64>> {
        let s = self.system;
        let mut rhs = s.xty.clone();
        for (g, u) in s.groups.iter().zip(&st.u) {
            if !u.is_empty() {
                rhs.gemv_tr(-1.0, &g.ztx, u, 1.0);
            }
        }
        let mut prec = &s.xtx / st.sigma2;
        rhs /= st.sigma2;
        if let (Some(i), InterceptPrior::StudentT { location, .. }) = (self.intercept, self.priors.intercept) {
            prec[(i, i)] += 1.0 / st.intercept_scale;
            rhs[i] += location / st.intercept_scale;
        }
        let chol = prec.cholesky().ok_or(Error::SingularSystem)?;
        let mean = chol.solve(&rhs);
        let z = std_normal_vec(rng, mean.len());
        let dev = chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .ok_or(Error::SingularSystem)?;
        Ok(mean + dev)
    }

    fn draw_u(&self, rng: &mut ChaCha20Rng, st: &State) -> Result<Vec<DVector<f64>>> {
        let q = self.q();
        let mut u = vec![DVector::zeros(q); self.system.groups.len()];
        if q == 0 {
            return Ok(u);
        }
        let g = self.covariance(&st.log_sd, &st.cpc);
        let lg = g.cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
        for class in &self.system.classes {
            let mut p = lg.transpose() * &class.ztz * &lg / st.sigma2;
            for i in 0..q {
                p[(i, i)] += 1.0;
            }
            let chol = p.cholesky().ok_or(Error::NotPositiveDefinite)?;
            for &k in &class.members {
                let grp = &self.system.groups[k];
                let r = &grp.zty - &grp.ztx * &st.beta;
                let mean = chol.solve(&(lg.transpose() * r / st.sigma2));
                let z = std_normal_vec(rng, q);
                let dev = chol
                    .l_dirty()
                    .tr_solve_lower_triangular(&z)
                    .ok_or(Error::NotPositiveDefinite)?;
                u[k] = &lg * (mean + dev);
            }
        }
        Ok(u)
    }

    fn rss(&self, st: &State) -> f64 {
        let d = self.design;
        let mut fitted = &d.x * &st.beta;
        for (g, u) in d.groups.iter().zip(&st.u) {
            if u.is_empty() {
                continue;
            }
            let contrib = d.z_rows.rows(g.start, g.len()) * u;
            let mut rows = fitted.rows_mut(g.start, g.len());
            rows += contrib;
        }
        (&d.y - fitted).norm_squared()
    }

    fn scatter(&self, u: &[DVector<f64>]) -> DMatrix<f64> {
        let q = self.q();
        let mut s = DMatrix::zeros(q, q);
        for v in u {
            s.ger(1.0, v, v, 1.0);
        }
        s
    }
}

fn initial_state(target: &Target, rng: &mut ChaCha20Rng, config: &McmcConfig, chain: usize) -> Result<State> {
    let q = target.q();
    let p = target.design.n_fixed();
    let range = config.init_range;
    let uniform = |rng: &mut ChaCha20Rng| rng.random_range(-range..=range);
    for _ in 0..INIT_TRIES {
        let log_sd: Vec<f64> = (0..q).map(|_| uniform(rng)).collect();
        let cpc: Vec<f64> = (0..lkj::cpc_len(q)).map(|_| uniform(rng)).collect();
        let sigma2 = match target.priors.residual {
            ResidualPrior::Fixed { sd } => sd * sd,
            ResidualPrior::HalfT { .. } => (2.0 * uniform(rng)).exp(),
        };
        let (intercept_scale, sigma_aux) = (
            match target.priors.intercept {
                InterceptPrior::StudentT { scale, .. } => scale * scale,
                InterceptPrior::Flat => f64::INFINITY,
            },
            match target.priors.residual {
                ResidualPrior::HalfT { scale, .. } => scale * scale,
                ResidualPrior::Fixed { .. } => 1.0,
            },
        );
        let st = State {
            beta: DVector::zeros(p),
            u: vec![DVector::zeros(q); target.system.groups.len()],
            log_sd,
            cpc,
            sigma2,
            sigma_aux,
            intercept_scale,
        };
        let cov_ok = q == 0 || target.cov_logp(&st.log_sd, &st.cpc, &DMatrix::zeros(q, q), 0.0).is_finite();
        if cov_ok && st.sigma2.is_finite() && st.sigma2 > 0.0 && target.draw_beta(&mut rng.clone(), &st).is_ok() {
            return Ok(st);
        }
    }
    Err(Error::ChainInitFailure {
        chain,
        tries: INIT_TRIES,
    })
}

pub(crate) fn run_chain(
    design: &DesignMatrices,
    system: &LmmSystem,
    priors: &PriorSpec,
    config: &McmcConfig,
    chain: usize,
    mut rng: ChaCha20Rng,
) -> Result<ChainOutput> {
    let target = Target {
        design,
        system,
        priors,
        intercept: design.intercept_column(),
    };
    let q = target.q();
    let n = design.n_obs() as f64;
    let k = system.groups.len() as f64;
    let mut st = initial_state(&target, &mut rng, config, chain)?;
    let mut slice = SliceStats::default();
    let mut draws = Vec::with_capacity(config.draws_per_chain());
    let pairs = lkj::corr_pairs(q);

    for iter in 0..config.iters {
        st.beta = match target.draw_beta(&mut rng, &st) {
            Ok(b) => b,
            // G so large that the marginal information is numerically singular
            Err(Error::SingularSystem) => target.draw_beta_given_u(&mut rng, &st)?,
            Err(e) => return Err(e),
        };
        st.u = target.draw_u(&mut rng, &st)?;

        if let ResidualPrior::HalfT { df, scale } = priors.residual {
            let rss = target.rss(&st);
            st.sigma2 = inv_gamma(&mut rng, (n + df) / 2.0, rss / 2.0 + df / st.sigma_aux);
            st.sigma_aux = inv_gamma(&mut rng, (df + 1.0) / 2.0, df / st.sigma2 + 1.0 / (scale * scale));
        }

        if q > 0 {
            let s = target.scatter(&st.u);
            let mut lp = target.cov_logp(&st.log_sd, &st.cpc, &s, k);
            for _ in 0..SLICE_SWEEPS {
                for j in 0..q {
                    let mut trial = st.log_sd.clone();
                    let (v, l) = slice_step(
                        &mut rng,
                        st.log_sd[j],
                        lp,
                        1.0,
                        |x| {
                            trial[j] = x;
                            target.cov_logp(&trial, &st.cpc, &s, k)
                        },
                        &mut slice,
                    );
                    st.log_sd[j] = v;
                    lp = l;
                }
                for j in 0..st.cpc.len() {
                    let mut trial = st.cpc.clone();
                    let (v, l) = slice_step(
                        &mut rng,
                        st.cpc[j],
                        lp,
                        1.0,
                        |x| {
                            trial[j] = x;
                            target.cov_logp(&st.log_sd, &trial, &s, k)
                        },
                        &mut slice,
                    );
                    st.cpc[j] = v;
                    lp = l;
                }
            }
        }

        if let (Some(i), InterceptPrior::StudentT { df, location, scale }) = (target.intercept, priors.intercept) {
            let dev = st.beta[i] - location;
            st.intercept_scale = inv_gamma(&mut rng, (df + 1.0) / 2.0, (df * scale * scale + dev * dev) / 2.0);
        }

        if iter >= config.warmup && (iter - config.warmup + 1).is_multiple_of(config.thin) {
            let mut row: Vec<f64> = st.beta.iter().copied().collect();
            row.extend(st.log_sd.iter().map(|v| v.exp()));
            if q > 0 {
                let (l, _) = lkj::corr_cholesky(&st.cpc, q);
                let r = &l * l.transpose();
                row.extend(pairs.iter().map(|&(a, b)| r[(a, b)].clamp(-1.0, 1.0)));
            }
            row.push(st.sigma2.sqrt());
            draws.push(row);
        }
    }
    Ok(ChainOutput { draws, slice })
}
