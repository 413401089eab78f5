//! Maximum-likelihood and REML estimation by minimizing the profiled deviance
//! over the relative covariance factor Λ, where `G = σ² Λ Λᵀ`.
//!
//! Λ is lower triangular and packed column by column (`θ`); diagonal entries
//! are bounded below by zero. Given θ, β and σ² have closed forms, so the
//! search runs over q(q+1)/2 parameters only.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use crate::design::{DesignMatrices, ModelKind, ModelSpec};
use crate::error::{Error, Result};
use crate::lmm::LmmSystem;
use crate::optim::{nelder_mead, SimplexOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ml,
    Reml,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ml => "ML",
            Method::Reml => "REML",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ML" => Ok(Method::Ml),
            "REML" => Ok(Method::Reml),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// Number of packed entries of a q×q lower-triangular factor.
pub fn theta_len(q: usize) -> usize {
    q * (q + 1) / 2
}

/// `(row, col)` of each packed entry, column-major.
fn packed_positions(q: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..q).flat_map(move |j| (j..q).map(move |i| (i, j)))
}

pub fn theta_to_lambda(theta: &[f64], q: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(q, q);
    for ((i, j), v) in packed_positions(q).zip(theta) {
        l[(i, j)] = *v;
    }
    l
}

pub fn lambda_to_theta(lambda: &DMatrix<f64>) -> Vec<f64> {
    packed_positions(lambda.nrows()).map(|(i, j)| lambda[(i, j)]).collect()
}

pub fn theta_lower_bounds(q: usize) -> Vec<f64> {
    packed_positions(q)
        .map(|(i, j)| if i == j { 0.0 } else { f64::NEG_INFINITY })
        .collect()
}

fn identity_theta(q: usize) -> Vec<f64> {
    packed_positions(q).map(|(i, j)| if i == j { 1.0 } else { 0.0 }).collect()
}

/// Flips columns of Λ with a negative diagonal; `ΛΛᵀ` is unchanged.
fn canonical_theta(theta: &[f64], q: usize) -> Vec<f64> {
    let mut l = theta_to_lambda(theta, q);
    for j in 0..q {
        if l[(j, j)] < 0.0 {
            for i in j..q {
                l[(i, j)] = -l[(i, j)];
            }
        }
    }
    lambda_to_theta(&l)
}

/// Quantities profiled out at a fixed θ.
#[derive(Debug, Clone)]
pub struct Profile {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub deviance: f64,
    /// `XᵀWX` with `W = σ² V⁻¹`.
    pub xtwx: DMatrix<f64>,
}

/// Caches the per-group cross products of one design.
#[derive(Debug, Clone)]
pub struct Profiler {
    system: LmmSystem,
    method: Method,
}

impl Profiler {
    pub fn new(design: &DesignMatrices, method: Method) -> Self {
        Profiler {
            system: LmmSystem::new(design),
            method,
        }
    }

    pub fn system(&self) -> &LmmSystem {
        &self.system
    }

    pub fn profile(&self, theta: &[f64]) -> Result<Profile> {
        let s = &self.system;
        let red = s.reduce(&theta_to_lambda(theta, s.q))?;
        let chol = red.xtwx.clone().cholesky().ok_or(Error::SingularSystem)?;
        let diag = chol.l_dirty().diagonal();
        let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if s.p > 0 && !(dmin > 1e-10 * dmax) {
            return Err(Error::SingularSystem);
        }
        let beta = chol.solve(&red.xtwy);
        let r2 = (red.ytwy - beta.dot(&red.xtwy)).max(f64::MIN_POSITIVE);
        let two_pi = 2.0 * std::f64::consts::PI;
        let n = s.n as f64;
        let (deviance, sigma2) = match self.method {
            Method::Ml => (red.logdet + n * (1.0 + (two_pi * r2 / n).ln()), r2 / n),
            Method::Reml => {
                let dof = (s.n - s.p) as f64;
                let logdet_x = 2.0 * diag.iter().map(|v| v.ln()).sum::<f64>();
                (red.logdet + logdet_x + dof * (1.0 + (two_pi * r2 / dof).ln()), r2 / dof)
            }
        };
        Ok(Profile {
            beta,
            sigma2,
            deviance,
            xtwx: red.xtwx,
        })
    }

    pub fn deviance(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.profile(theta)?.deviance)
    }

    /// Analytic gradient of the profiled deviance with respect to θ.
    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let s = &self.system;
        let q = s.q;
        let prof = self.profile(theta)?;
        let lambda = theta_to_lambda(theta, q);
        let lt = lambda.transpose();
        let eye = DMatrix::<f64>::identity(q, q);
        let h_inv = match self.method {
            Method::Reml => Some(prof.xtwx.clone().cholesky().ok_or(Error::SingularSystem)?.inverse()),
            Method::Ml => None,
        };
        // r² recomputed from the same quantities the profile used
        let red = s.reduce(&lambda)?;
        let r2 = (red.ytwy - prof.beta.dot(&red.xtwy)).max(f64::MIN_POSITIVE);

        let mut d_logdet = DMatrix::<f64>::zeros(q, q);
        let mut d_r2 = DMatrix::<f64>::zeros(q, q);
        let mut d_logdet_x = DMatrix::<f64>::zeros(q, q);
        for class in &s.classes {
            let f = s.class_factors(class, &lambda)?;
            let c = &class.ztz;
            let p = &lambda * &f.m_inv;
            d_logdet += c * &p * class.count as f64;
            let mut rr = DMatrix::<f64>::zeros(q, q);
            for &k in &class.members {
                let g = &s.groups[k];
                let zt_r = &g.zty - &g.ztx * &prof.beta;
                rr.ger(1.0, &zt_r, &zt_r, 1.0);
            }
            let resid_proj = &eye - c * &f.b;
            d_r2 += resid_proj * rr * &p;
            if let Some(h_inv) = &h_inv {
                let r = &eye - &p * &lt * c;
                d_logdet_x += r.transpose() * class.sandwich_x(h_inv) * &p;
            }
        }
        let n = s.n as f64;
        let weight = match self.method {
            Method::Ml => n,
            Method::Reml => n - s.p as f64,
        };
        let total = d_logdet * 2.0 - d_r2 * (2.0 * weight / r2) - d_logdet_x * 2.0;
        Ok(packed_positions(q).map(|(i, j)| total[(i, j)]).collect())
    }
}

/// Profiled deviance at θ (β and σ² optimized out analytically).
pub fn profiled_deviance(theta: &[f64], design: &DesignMatrices, method: Method) -> Result<f64> {
    if theta.len() != theta_len(design.n_random()) {
        return Err(Error::InvalidDesign(format!(
            "theta has {} entries; expected {}",
            theta.len(),
            theta_len(design.n_random())
        )));
    }
    Profiler::new(design, method).deviance(theta)
}

#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub tol_f: f64,
    pub tol_x: f64,
    pub max_evals: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            tol_f: 1e-8,
            tol_x: 1e-8,
            max_evals: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlFit {
    pub fixed_names: Vec<String>,
    pub random_names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub vcov: DMatrix<f64>,
    /// Dyad-level random-effect covariance.
    pub g: DMatrix<f64>,
    pub sigma2: f64,
    pub loglik: f64,
    pub deviance: f64,
    pub method: Method,
    pub converged: bool,
    /// Deviance evaluations used.
    pub n_iter: usize,
    pub theta: Vec<f64>,
    pub n_obs: usize,
    pub n_groups: usize,
    pub spec: Option<ModelSpec>,
    pub warnings: Vec<String>,
}

impl MlFit {
    pub fn fitted(&self, design: &DesignMatrices) -> DVector<f64> {
        &design.x * DVector::from_column_slice(&self.beta)
    }

    pub fn model(&self) -> Option<ModelKind> {
        self.spec
            .as_ref()
            .map(|s| s.model)
            .or_else(|| ModelKind::for_n_terms(self.beta.len()))
    }

    /// Flat `key = value` record: terms first, then G, σ², log-likelihood,
    /// method and convergence, then bookkeeping.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in wald_tests(self) {
            let _ = writeln!(s, "term.{} = {}, {}, {}, {}", row.term, row.estimate, row.se, row.z, row.p);
        }
        let q = self.g.nrows();
        for i in 0..q {
            for j in 0..q {
                let _ = writeln!(s, "G.{}.{} = {}", i + 1, j + 1, self.g[(i, j)]);
            }
        }
        let _ = writeln!(s, "sigma2 = {}", self.sigma2);
        let _ = writeln!(s, "loglik = {}", self.loglik);
        let _ = writeln!(s, "deviance = {}", self.deviance);
        let _ = writeln!(s, "method = {}", self.method.as_str());
        let _ = writeln!(s, "converged = {}", self.converged);
        let _ = writeln!(s, "n_iter = {}", self.n_iter);
        let theta: Vec<String> = self.theta.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "theta = {}", theta.join(", "));
        let random: Vec<&str> = self.random_names.iter().map(String::as_str).collect();
        let _ = writeln!(s, "random_terms = {}", random.join(", "));
        let _ = writeln!(s, "n_obs = {}", self.n_obs);
        let _ = writeln!(s, "n_groups = {}", self.n_groups);
        if let Some(spec) = &self.spec {
            let _ = writeln!(s, "model = {}", spec.model.number());
            let _ = writeln!(s, "coding = {}", spec.coding.kind().as_str());
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning = {w}");
        }
        s
    }
}

/// Minimizes the profiled deviance. A coarse simplex search runs from an
/// identity-scaled start and from θ = 0 and is restarted from the best
/// point; damped Newton steps on the analytic gradient then refine it.
/// Non-convergence is reported through `converged`, not as an error.
pub fn fit_ml(design: &DesignMatrices, method: Method, opts: &OptimOptions) -> Result<MlFit> {
    let (n, p, q) = (design.n_obs(), design.n_fixed(), design.n_random());
    if n <= p {
        return Err(Error::InvalidDesign(format!("need more observations ({n}) than fixed effects ({p})")));
    }
    let prof = Profiler::new(design, method);
    let k = theta_len(q);
    let zero = vec![0.0; k];
    let at_zero = prof.profile(&zero)?;

    let objective = |t: &[f64]| prof.deviance(t).unwrap_or(f64::INFINITY);
    let mut evals = 1usize;
    let mut best = (zero.clone(), at_zero.deviance);
    let mut converged = true;

    if k > 0 {
        let lower = theta_lower_bounds(q);
        let upper = vec![f64::INFINITY; k];
        let coarse = SimplexOptions {
            tol_f: opts.tol_f.max(1e-3),
            tol_x: opts.tol_x.max(1e-2),
            max_evals: (opts.max_evals / 4).max(2 * k + 2),
            initial_step: 0.25,
        };
        for start in [identity_theta(q), zero.clone(), identity_theta(q)] {
            let start = if start == zero || best.1 == at_zero.deviance { start } else { best.0.clone() };
            let r = nelder_mead(objective, &start, &lower, &upper, &coarse);
            evals += r.evals;
            if r.f < best.1 {
                best = (r.x, r.f);
            }
        }
        let gradient = |t: &[f64]| prof.gradient(t).ok();
        let refined = newton_refine(&objective, &gradient, best.0.clone(), best.1, opts, &mut evals);
        if refined.f <= best.1 {
            best = (canonical_theta(&refined.x, q), refined.f);
        }
        converged = refined.converged && evals <= opts.max_evals;
    }

    let theta = best.0;
    let prof_fit = prof.profile(&theta)?;
    let lambda = theta_to_lambda(&theta, q);
    let g = &lambda * lambda.transpose() * prof_fit.sigma2;
    let xtwx_inv = prof_fit
        .xtwx
        .clone()
        .cholesky()
        .ok_or(Error::SingularSystem)?
        .inverse();
    let vcov = xtwx_inv * prof_fit.sigma2;
    let se = (0..p).map(|i| vcov[(i, i)].sqrt()).collect();

    let mut warnings = Vec::new();
    if !converged {
        warnings.push("optimizer did not meet the convergence tolerances; best point returned".to_string());
    }
    let scale = lambda.diagonal().iter().cloned().fold(0.0, f64::max);
    if (0..q).any(|j| lambda[(j, j)] <= 1e-6 * scale.max(1e-6)) {
        warnings.push("boundary fit: random-effect covariance is singular; standard errors may be unreliable".to_string());
    }

    Ok(MlFit {
        fixed_names: design.fixed_names.clone(),
        random_names: design.random_names.clone(),
        beta: prof_fit.beta.iter().cloned().collect(),
        se,
        vcov,
        g,
        sigma2: prof_fit.sigma2,
        loglik: -0.5 * prof_fit.deviance,
        deviance: prof_fit.deviance,
        method,
        converged,
        n_iter: evals,
        theta,
        n_obs: n,
        n_groups: design.n_groups(),
        spec: design.spec.clone(),
        warnings,
    })
}

struct Refined {
    x: Vec<f64>,
    f: f64,
    converged: bool,
}

/// Levenberg-damped Newton iterations. The Hessian is the symmetrized
/// central difference of the analytic gradient. Runs unconstrained: a
/// negative diagonal entry of Λ describes the same G as its column-flipped
/// counterpart.
fn newton_refine<F, G>(f: &F, grad: &G, mut x: Vec<f64>, mut fx: f64, opts: &OptimOptions, evals: &mut usize) -> Refined
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let gtol = 1e-6;
    let fail = |x, f| Refined { x, f, converged: false };
    let Some(mut g) = grad(&x) else { return fail(x, fx) };
    *evals += 1;
    for _ in 0..100 {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < gtol * 1e-3 {
            return Refined { x, f: fx, converged: true };
        }
        if *evals > opts.max_evals {
            break;
        }
        let mut hess = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let (Some(gp), Some(gm)) = (grad(&xp), grad(&xm)) else { return fail(x, fx) };
            *evals += 2;
            for j in 0..n {
                hess[(j, i)] = (gp[j] - gm[j]) / (2.0 * h);
            }
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let gv = DVector::from_column_slice(&g);
        let scale = (0..n).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-8);
        let mut mu = 0.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut damped = hess.clone();
            for i in 0..n {
                damped[(i, i)] += mu;
            }
            if let Some(chol) = damped.cholesky() {
                let step = -chol.solve(&gv);
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
                let ft = f(&trial);
                *evals += 1;
                let noise = 1e-13 * fx.abs().max(1.0);
                if ft < fx || (ft <= fx + noise && gmax < gtol) {
                    if let Some(gt) = grad(&trial) {
                        *evals += 1;
                        let gtmax = gt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                        if ft < fx - noise || gtmax < gmax {
                            accepted = Some((trial, ft, gt, step.amax()));
                            break;
                        }
                    }
                }
            }
            mu = if mu == 0.0 { 1e-8 * scale } else { mu * 10.0 };
        }
        let Some((xn, fnew, gn, step)) = accepted else {
            // no further descent at machine resolution
            return Refined { x, f: fx, converged: gmax < gtol };
        };
        let gain = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if step < opts.tol_x * 1e-3 || (gain.abs() < opts.tol_f * 1e-3 && gmax < gtol) {
            return Refined { x, f: fx, converged: gmax < gtol };
        }
    }
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Refined { x, f: fx, converged: gmax < gtol }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaldRow {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

/// Two-sided normal-approximation p-value.
pub fn normal_two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

pub fn wald_tests(fit: &MlFit) -> Vec<WaldRow> {
    fit.fixed_names
        .iter()
        .zip(fit.beta.iter().zip(&fit.se))
        .map(|(name, (&b, &se))| {
            let z = b / se;
            WaldRow {
                term: name.clone(),
                estimate: b,
                se,
                z,
                p: if b == 0.0 { 1.0 } else { normal_two_sided_p(z) },
            }
        })
        .collect()
}

/// Exact log density of y under N(Xβ, Z Ḡ Zᵀ + σ² I) by dense Cholesky.
/// Intended as a check on small problems.
pub fn loglik_oracle(design: &DesignMatrices, beta: &[f64], g: &DMatrix<f64>, sigma2: f64) -> Result<f64> {
    let n = design.n_obs();
    let q = design.n_random();
    let mut v = DMatrix::<f64>::identity(n, n) * sigma2;
    if q > 0 {
        let z = design.z_dense();
        let k = design.n_groups();
        let mut gbar = DMatrix::<f64>::zeros(q * k, q * k);
        for b in 0..k {
            gbar.view_mut((b * q, b * q), (q, q)).copy_from(g);
        }
        v += &z * gbar * z.transpose();
    }
    let chol = v.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let r = &design.y - &design.x * DVector::from_column_slice(beta);
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = r.dot(&chol.solve(&r));
    Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad))
}
