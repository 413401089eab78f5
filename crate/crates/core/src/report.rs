//! Coding translation, variance partitioning, interpretation sentences and
//! ML-versus-posterior comparison tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;

use crate::data::{format_sig6, CodingKind};
use crate::design::{role_pairs, ModelKind, RANDOM_TERMS};
use crate::error::{Error, Result};
use crate::fit_bayes::PosteriorDraws;
use crate::fit_ml::{wald_tests, MlFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    DummyToEffect,
    EffectToDummy,
}

impl Direction {
    pub fn between(from: CodingKind, to: CodingKind) -> Option<Direction> {
        match (from, to) {
            (CodingKind::Dummy, CodingKind::Effect) => Some(Direction::DummyToEffect),
            (CodingKind::Effect, CodingKind::Dummy) => Some(Direction::EffectToDummy),
            _ => None,
        }
    }
}

/// Maps fixed effects between role codings. With dummy = (effect + 1) / 2,
/// each base term absorbs half of its role interaction and the interaction
/// itself halves.
pub fn translate_coding(beta: &[f64], direction: Direction) -> Result<Vec<f64>> {
    let model = ModelKind::for_n_terms(beta.len()).ok_or(Error::BadLength(beta.len()))?;
    let mut out = beta.to_vec();
    for (base, role) in role_pairs(model) {
        match direction {
            Direction::DummyToEffect => {
                out[base] = beta[base] + beta[role] / 2.0;
                out[role] = beta[role] / 2.0;
            }
            Direction::EffectToDummy => {
                out[base] = beta[base] - beta[role];
                out[role] = 2.0 * beta[role];
            }
        }
    }
    Ok(out)
}

/// Random-effect coefficients map as `u_effect = A u_dummy`.
fn random_map() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 4, &[1.0, 0.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.5, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5])
}

/// Random-effect covariance under the other coding (`A G Aᵀ`).
pub fn translate_covariance(g: &DMatrix<f64>, direction: Direction) -> Result<DMatrix<f64>> {
    if g.shape() != (4, 4) {
        return Err(Error::InvalidParams(format!("random-effect covariance must be 4×4, got {}×{}", g.nrows(), g.ncols())));
    }
    let a = match direction {
        Direction::DummyToEffect => random_map(),
        Direction::EffectToDummy => random_map().try_inverse().expect("triangular map with nonzero diagonal"),
    };
    Ok(&a * g * a.transpose())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariancePartition {
    pub names: Vec<String>,
    pub components: Vec<f64>,
    pub shares: Vec<f64>,
}

/// Shares of the random-effect variances and the residual variance in
/// their sum. Covariances are left out of the denominator.
pub fn variance_partition(g: &DMatrix<f64>, sigma2: f64) -> Result<VariancePartition> {
    let q = g.nrows();
    let mut components: Vec<f64> = (0..q).map(|i| g[(i, i)]).collect();
    components.push(sigma2);
    if components.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::InvalidParams("variance components must be finite and nonnegative".into()));
    }
    let total: f64 = components.iter().sum();
    if total == 0.0 {
        return Err(Error::AllZero);
    }
    let mut names: Vec<String> = RANDOM_TERMS.iter().take(q).map(|s| s.to_string()).collect();
    for i in names.len()..q {
        names.push(format!("re{}", i + 1));
    }
    names.push("Residual".to_string());
    let shares = components.iter().map(|c| c / total).collect();
    Ok(VariancePartition {
        names,
        components,
        shares,
    })
}

/// Two decimals; a value that rounds to zero prints as `0.00`.
pub fn fmt2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

pub fn fmt_percent(share: f64) -> String {
    format!("{:.0}%", share * 100.0)
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub term: String,
    pub estimate: f64,
    /// ML standard error or posterior sd.
    pub se: f64,
    pub z: Option<f64>,
    pub p: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

/// Fit results in the form reports and comparisons consume, from either
/// estimator.
#[derive(Debug, Clone)]
pub struct EstimateTable {
    pub model: ModelKind,
    pub coding: CodingKind,
    /// `ML`, `REML` or `BAYES`.
    pub method: String,
    pub rows: Vec<EstimateRow>,
    pub random_names: Vec<String>,
    pub g: DMatrix<f64>,
    pub sigma2: f64,
    pub loglik: Option<f64>,
    pub converged: Option<bool>,
    pub level: Option<f64>,
    pub n_obs: usize,
    pub n_groups: usize,
    pub warnings: Vec<String>,
}

impl EstimateTable {
    pub fn is_bayes(&self) -> bool {
        self.method == "BAYES"
    }

    pub fn terms(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.term.as_str()).collect()
    }

    pub fn from_ml(fit: &MlFit) -> Result<Self> {
        let spec = fit
            .spec
            .as_ref()
            .ok_or_else(|| Error::Format("fit carries no model specification".into()))?;
        let rows = wald_tests(fit)
            .into_iter()
            .map(|w| EstimateRow {
                term: w.term,
                estimate: w.estimate,
                se: w.se,
                z: Some(w.z),
                p: Some(w.p),
                lower: None,
                upper: None,
                rhat: None,
                ess: None,
            })
            .collect();
        Ok(EstimateTable {
            model: spec.model,
            coding: spec.coding.kind(),
            method: fit.method.as_str().to_string(),
            rows,
            random_names: fit.random_names.clone(),
            g: fit.g.clone(),
            sigma2: fit.sigma2,
            loglik: Some(fit.loglik),
            converged: Some(fit.converged),
            level: None,
            n_obs: fit.n_obs,
            n_groups: fit.n_groups,
            warnings: fit.warnings.clone(),
        })
    }

    pub fn from_posterior(post: &PosteriorDraws, level: f64) -> Result<Self> {
        let spec = post
            .spec
            .as_ref()
            .ok_or_else(|| Error::Format("posterior carries no model specification".into()))?;
        let summary = post.summarize(level);
        let finite = |v: f64| v.is_finite().then_some(v);
        let rows = post
            .fixed_names
            .iter()
            .zip(&summary)
            .map(|(term, s)| EstimateRow {
                term: term.clone(),
                estimate: s.mean,
                se: s.sd,
                z: None,
                p: None,
                lower: Some(s.lower),
                upper: Some(s.upper),
                rhat: finite(s.rhat),
                ess: finite(s.ess),
            })
            .collect();
        Ok(EstimateTable {
            model: spec.model,
            coding: spec.coding.kind(),
            method: "BAYES".to_string(),
            rows,
            random_names: post.random_names.clone(),
            g: post.mean_g(),
            sigma2: post.mean_sigma2(),
            loglik: None,
            converged: None,
            level: Some(level),
            n_obs: post.n_obs,
            n_groups: post.n_groups,
            warnings: post.warnings.clone(),
        })
    }

    /// Flat `key = value` record, readable by [`EstimateTable::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("NaN".to_string(), |x| x.to_string());
        for r in &self.rows {
            if self.is_bayes() {
                let _ = writeln!(
                    s,
                    "term.{} = {}, {}, {}, {}, {}, {}",
                    r.term,
                    r.estimate,
                    r.se,
                    opt(r.lower),
                    opt(r.upper),
                    opt(r.rhat),
                    opt(r.ess)
                );
            } else {
                let _ = writeln!(s, "term.{} = {}, {}, {}, {}", r.term, r.estimate, r.se, opt(r.z), opt(r.p));
            }
        }
        let q = self.g.nrows();
        for i in 0..q {
            for j in 0..q {
                let _ = writeln!(s, "G.{}.{} = {}", i + 1, j + 1, self.g[(i, j)]);
            }
        }
        let _ = writeln!(s, "sigma2 = {}", self.sigma2);
        if let Some(ll) = self.loglik {
            let _ = writeln!(s, "loglik = {ll}");
        }
        let _ = writeln!(s, "method = {}", self.method);
        if let Some(c) = self.converged {
            let _ = writeln!(s, "converged = {c}");
        }
        if let Some(level) = self.level {
            let _ = writeln!(s, "level = {level}");
        }
        let _ = writeln!(s, "random_terms = {}", self.random_names.join(", "));
        let _ = writeln!(s, "n_obs = {}", self.n_obs);
        let _ = writeln!(s, "n_groups = {}", self.n_groups);
        let _ = writeln!(s, "model = {}", self.model.number());
        let _ = writeln!(s, "coding = {}", self.coding.as_str());
        for w in &self.warnings {
            let _ = writeln!(s, "warning = {w}");
        }
        s
    }

    /// Parses records written by [`EstimateTable::to_text`] or
    /// [`MlFit::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut terms: Vec<(String, Vec<f64>)> = Vec::new();
        let mut kv: HashMap<String, String> = HashMap::new();
        let mut g_entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut warnings = Vec::new();
        let num = |v: &str, key: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("`{key}` has non-numeric value `{v}`")))
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(term) = key.strip_prefix("term.") {
                let vals = value.split(',').map(|v| num(v, key)).collect::<Result<Vec<f64>>>()?;
                terms.push((term.to_string(), vals));
            } else if let Some(idx) = key.strip_prefix("G.") {
                let (i, j) = idx
                    .split_once('.')
                    .and_then(|(i, j)| Some((i.parse::<usize>().ok()?, j.parse::<usize>().ok()?)))
                    .filter(|(i, j)| *i >= 1 && *j >= 1)
                    .ok_or_else(|| Error::Format(format!("bad covariance key `{key}`")))?;
                g_entries.push((i - 1, j - 1, num(value, key)?));
            } else if key == "warning" {
                warnings.push(value.to_string());
            } else {
                kv.insert(key.to_string(), value.to_string());
            }
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Format(format!("missing `{k}`")));
        let method = get("method")?.to_ascii_uppercase();
        let bayes = method == "BAYES";
        let model_num: u8 = get("model")?.parse().map_err(|_| Error::Format("bad `model`".into()))?;
        let model = ModelKind::from_number(model_num).ok_or_else(|| Error::Format(format!("unknown model {model_num}")))?;
        let coding: CodingKind = get("coding")?.parse().map_err(|e: String| Error::Format(e))?;
        let expected = model.terms();
        if terms.len() != expected.len() || terms.iter().zip(expected).any(|((t, _), e)| t != e) {
            return Err(Error::Format(format!("term list does not match model {model_num}")));
        }
        let finite = |v: f64| v.is_finite().then_some(v);
        let rows = terms
            .into_iter()
            .map(|(term, v)| {
                let want = if bayes { 6 } else { 4 };
                if v.len() != want {
                    return Err(Error::Format(format!("term `{term}` needs {want} values")));
                }
                Ok(if bayes {
                    EstimateRow {
                        term,
                        estimate: v[0],
                        se: v[1],
                        z: None,
                        p: None,
                        lower: finite(v[2]),
                        upper: finite(v[3]),
                        rhat: finite(v[4]),
                        ess: finite(v[5]),
                    }
                } else {
                    EstimateRow {
                        term,
                        estimate: v[0],
                        se: v[1],
                        z: finite(v[2]),
                        p: finite(v[3]),
                        lower: None,
                        upper: None,
                        rhat: None,
                        ess: None,
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let random_names: Vec<String> = match kv.get("random_terms") {
            Some(v) if !v.is_empty() => v.split(',').map(|s| s.trim().to_string()).collect(),
            _ => Vec::new(),
        };
        let q = random_names.len();
        let mut g = DMatrix::zeros(q, q);
        for (i, j, v) in g_entries {
            if i >= q || j >= q {
                return Err(Error::Format(format!("covariance entry ({}, {}) outside {q}×{q}", i + 1, j + 1)));
            }
            g[(i, j)] = v;
        }
        let opt_num = |k: &str| kv.get(k).map(|v| num(v, k)).transpose();
        let count = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Format(format!("bad `{k}`"))) };
        Ok(EstimateTable {
            model,
            coding,
            method,
            rows,
            random_names,
            g,
            sigma2: num(get("sigma2")?, "sigma2")?,
            loglik: opt_num("loglik")?,
            converged: kv.get("converged").map(|v| v == "true"),
            level: opt_num("level")?,
            n_obs: count("n_obs")?,
            n_groups: count("n_groups")?,
            warnings,
        })
    }
}

/// Sentence templates keyed by coding and term pattern.
#[derive(Debug, Clone)]
pub struct Templates {
    map: HashMap<String, String>,
}

const BUILTIN_TEMPLATES: &str = include_str!("templates.txt");

const COVARIATES: [&str; 4] = ["ActorWP", "ActorAgg", "PartnerWP", "PartnerAgg"];

impl Templates {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TEMPLATES).expect("built-in templates are well formed")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("template line without ` = `: `{line}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Templates { map })
    }

    /// Sentence for a fixed effect.
    pub fn fixed(&self, coding: CodingKind, term: &str, estimate: f64) -> Result<String> {
        let parts: Vec<&str> = term.split(':').collect();
        let covariate = parts.iter().find(|p| COVARIATES.contains(p)).copied();
        let pattern = parts
            .iter()
            .map(|p| if Some(*p) == covariate { "X" } else { p })
            .collect::<Vec<_>>()
            .join(":");
        let template = self
            .map
            .get(&format!("{}.{pattern}", coding.as_str()))
            .ok_or_else(|| Error::UnknownTerm(term.to_string()))?;
        let mut out = template.replace("{est}", &fmt2(estimate));
        if let Some(c) = covariate {
            let desc = self
                .map
                .get(&format!("covariate.{c}"))
                .ok_or_else(|| Error::UnknownTerm(term.to_string()))?;
            out = out.replace("{covariate}", desc);
        }
        Ok(out)
    }

    /// Sentence for a variance component (a random term or `Residual`).
    pub fn variance(&self, coding: CodingKind, name: &str, value: f64, share: f64) -> Result<String> {
        let template = self
            .map
            .get(&format!("{}.var.{name}", coding.as_str()))
            .ok_or_else(|| Error::UnknownTerm(name.to_string()))?;
        Ok(template.replace("{est}", &fmt2(value)).replace("{share}", &fmt_percent(share)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interpretation {
    pub term: String,
    pub sentence: String,
}

/// One sentence per fixed effect, then one per variance component.
pub fn interpret(table: &EstimateTable, templates: &Templates) -> Result<Vec<Interpretation>> {
    let expected = table.model.terms();
    if table.rows.len() != expected.len() || table.rows.iter().zip(expected).any(|(r, e)| r.term != *e) {
        let bad = table
            .rows
            .iter()
            .find(|r| !expected.contains(&r.term.as_str()))
            .map_or_else(|| "term list".to_string(), |r| r.term.clone());
        return Err(Error::UnknownTerm(bad));
    }
    let mut out = Vec::new();
    for r in &table.rows {
        out.push(Interpretation {
            term: r.term.clone(),
            sentence: templates.fixed(table.coding, &r.term, r.estimate)?,
        });
    }
    if table.g.nrows() > 0 {
        let part = variance_partition(&table.g, table.sigma2)?;
        for ((name, c), s) in part.names.iter().zip(&part.components).zip(&part.shares) {
            out.push(Interpretation {
                term: format!("var_{name}"),
                sentence: templates.variance(table.coding, name, *c, *s)?,
            });
        }
    }
    Ok(out)
}

/// Plain-text report with estimates, variance partition and interpretation.
pub fn render_text(table: &EstimateTable, templates: &Templates) -> Result<String> {
    let sentences = interpret(table, templates)?;
    let mut s = String::new();
    let model_name = match table.model {
        ModelKind::Cfgm => "common-fate growth model",
        ModelKind::ApimCfgm => "actor-partner common-fate growth model",
    };
    let _ = writeln!(
        s,
        "Model {} ({model_name}), {} coding, {} estimation",
        table.model.number(),
        table.coding.as_str(),
        table.method
    );
    let _ = writeln!(s, "{} observations from {} dyads", table.n_obs, table.n_groups);
    if let Some(ll) = table.loglik {
        let _ = writeln!(s, "log-likelihood {ll:.3}");
    }
    let _ = writeln!(s);
    let width = table.rows.iter().map(|r| r.term.len()).max().unwrap_or(4).max(4);
    if table.is_bayes() {
        let pct = table.level.map_or("interval".to_string(), |l| format!("{:.0}% interval", l * 100.0));
        let _ = writeln!(s, "{:width$}  {:>8}  {:>8}  {:>18}  {:>6}  {:>6}", "term", "mean", "sd", pct, "rhat", "ess");
        for r in &table.rows {
            let interval = format!("[{}, {}]", fmt2(r.lower.unwrap_or(f64::NAN)), fmt2(r.upper.unwrap_or(f64::NAN)));
            let _ = writeln!(
                s,
                "{:width$}  {:>8}  {:>8}  {:>18}  {:>6}  {:>6}",
                r.term,
                fmt2(r.estimate),
                fmt2(r.se),
                interval,
                r.rhat.map_or("NA".to_string(), |v| format!("{v:.3}")),
                r.ess.map_or("NA".to_string(), |v| format!("{v:.0}"))
            );
        }
    } else {
        let _ = writeln!(s, "{:width$}  {:>8}  {:>8}  {:>8}  {:>6}", "term", "estimate", "se", "z", "p");
        for r in &table.rows {
            let _ = writeln!(
                s,
                "{:width$}  {:>8}  {:>8}  {:>8}  {:>6}",
                r.term,
                fmt2(r.estimate),
                fmt2(r.se),
                r.z.map_or("NA".to_string(), fmt2),
                r.p.map_or("NA".to_string(), fmt_p)
            );
        }
    }
    if table.g.nrows() > 0 {
        let part = variance_partition(&table.g, table.sigma2)?;
        let _ = writeln!(s, "\nVariance components");
        for ((name, c), sh) in part.names.iter().zip(&part.components).zip(&part.shares) {
            let _ = writeln!(s, "{name:width$}  {:>8}  {:>5}", fmt2(*c), fmt_percent(*sh));
        }
    }
    let _ = writeln!(s, "\nInterpretation");
    for i in &sentences {
        let _ = writeln!(s, "- {}", i.sentence);
    }
    if !table.warnings.is_empty() {
        let _ = writeln!(s, "\nWarnings");
        for w in &table.warnings {
            let _ = writeln!(s, "- {w}");
        }
    }
    Ok(s)
}

/// CSV report: one row per fixed effect and per variance component.
pub fn write_report_csv<W: Write>(table: &EstimateTable, templates: &Templates, out: W) -> Result<()> {
    let sentences = interpret(table, templates)?;
    let mut w = csv::Writer::from_writer(out);
    let spread = if table.is_bayes() { "sd" } else { "se" };
    w.write_record(["term", "estimate", spread, "p", "lower", "upper", "interpretation"])?;
    let opt = |v: Option<f64>| v.map(format_sig6).unwrap_or_default();
    let mut sentences = sentences.into_iter();
    for r in &table.rows {
        let sentence = sentences.next().map(|i| i.sentence).unwrap_or_default();
        w.write_record([
            r.term.clone(),
            format_sig6(r.estimate),
            format_sig6(r.se),
            opt(r.p),
            opt(r.lower),
            opt(r.upper),
            sentence,
        ])?;
    }
    if table.g.nrows() > 0 {
        let part = variance_partition(&table.g, table.sigma2)?;
        for (name, c) in part.names.iter().zip(&part.components) {
            let sentence = sentences.next().map(|i| i.sentence).unwrap_or_default();
            w.write_record([format!("var_{name}"), format_sig6(*c), String::new(), String::new(), String::new(), String::new(), sentence])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub term: String,
    pub ml_estimate: f64,
    pub ml_se: f64,
    pub post_mean: f64,
    pub post_sd: f64,
    /// Posterior sd over ML standard error.
    pub ratio: f64,
    /// Posterior mean minus ML estimate.
    pub gap: f64,
}

pub fn compare(ml: &EstimateTable, bayes: &EstimateTable) -> Result<Vec<CompareRow>> {
    let (a, b) = (ml.terms(), bayes.terms());
    if a != b {
        let (x, y) = a
            .iter()
            .zip(&b)
            .find(|(x, y)| x != y)
            .map(|(x, y)| (x.to_string(), y.to_string()))
            .unwrap_or_else(|| (format!("{} terms", a.len()), format!("{} terms", b.len())));
        return Err(Error::TermMismatch { ml: x, bayes: y });
    }
    Ok(ml
        .rows
        .iter()
        .zip(&bayes.rows)
        .map(|(m, p)| CompareRow {
            term: m.term.clone(),
            ml_estimate: m.estimate,
            ml_se: m.se,
            post_mean: p.estimate,
            post_sd: p.se,
            ratio: p.se / m.se,
            gap: p.estimate - m.estimate,
        })
        .collect())
}

pub fn write_compare_csv<W: Write>(rows: &[CompareRow], ml: &EstimateTable, bayes: &EstimateTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "term",
        "ml_estimate",
        "ml_se",
        "post_mean",
        "post_sd",
        "ratio_sd_se",
        "gap",
        "n_dyads",
        "ml_method",
        "bayes_method",
    ])?;
    for r in rows {
        w.write_record([
            r.term.clone(),
            r.ml_estimate.to_string(),
            r.ml_se.to_string(),
            r.post_mean.to_string(),
            r.post_sd.to_string(),
            r.ratio.to_string(),
            r.gap.to_string(),
            ml.n_groups.to_string(),
            ml.method.clone(),
            bayes.method.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{effect_to_dummy_columns, APIM_CFGM_TERMS, CFGM_TERMS};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn table(model: ModelKind, coding: CodingKind, beta: &[f64]) -> EstimateTable {
        EstimateTable {
            model,
            coding,
            method: "ML".into(),
            rows: model
                .terms()
                .iter()
                .zip(beta)
                .map(|(t, b)| EstimateRow {
                    term: t.to_string(),
                    estimate: *b,
                    se: 0.5,
                    z: Some(b / 0.5),
                    p: Some(0.5),
                    lower: None,
                    upper: None,
                    rhat: None,
                    ess: None,
                })
                .collect(),
            random_names: RANDOM_TERMS.iter().map(|s| s.to_string()).collect(),
            g: DMatrix::from_diagonal(&DVector::from_vec(vec![16.91, 20.81, 38.86, 45.98])),
            sigma2: 0.98,
            loglik: Some(-100.0),
            converged: Some(true),
            level: None,
            n_obs: 500,
            n_groups: 50,
            warnings: vec![],
        }
    }

    #[test]
    fn cfgm_translation_example() {
        let e = translate_coding(&[1.48, 0.75, 1.07, 2.40], Direction::DummyToEffect).unwrap();
        for (got, want) in e.iter().zip([2.015, 1.95, 0.535, 1.20]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        for (got, want) in e.iter().zip([2.01, 1.94, 0.54, 1.20]) {
            assert!((got - want).abs() <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn apim_translation_example() {
        let mut beta = vec![0.0; 20];
        let actor = APIM_CFGM_TERMS.iter().position(|t| *t == "ActorWP").unwrap();
        let role_actor = APIM_CFGM_TERMS.iter().position(|t| *t == "Role:ActorWP").unwrap();
        beta[actor] = 0.36;
        beta[role_actor] = -0.18;
        let e = translate_coding(&beta, Direction::DummyToEffect).unwrap();
        assert_abs_diff_eq!(e[actor], 0.27, epsilon = 1e-12);
        assert_abs_diff_eq!(e[role_actor], -0.09, epsilon = 1e-12);
    }

    #[test]
    fn translation_agrees_with_design_columns() {
        for model in [ModelKind::Cfgm, ModelKind::ApimCfgm] {
            let p = model.terms().len();
            let t = effect_to_dummy_columns(model);
            let beta: Vec<f64> = (0..p).map(|i| (i as f64 * 0.37).sin()).collect();
            let via_t = &t * DVector::from_vec(beta.clone());
            let direct = translate_coding(&beta, Direction::DummyToEffect).unwrap();
            for (a, b) in via_t.iter().zip(direct) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn bad_length_is_rejected() {
        assert!(matches!(translate_coding(&[1.0, 2.0, 3.0], Direction::DummyToEffect), Err(Error::BadLength(3))));
    }

    proptest! {
        #[test]
        fn translation_round_trips(beta in proptest::collection::vec(-50.0f64..50.0, 20)) {
            let there = translate_coding(&beta, Direction::DummyToEffect).unwrap();
            let back = translate_coding(&there, Direction::EffectToDummy).unwrap();
            for (a, b) in beta.iter().zip(back) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn partition_is_permutation_equivariant(c in proptest::collection::vec(0.01f64..100.0, 5), k in 0usize..5) {
            let g = DMatrix::from_diagonal(&DVector::from_vec(c[..4].to_vec()));
            let a = variance_partition(&g, c[4]).unwrap();
            prop_assert!((a.shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut rotated = c.clone();
            rotated.rotate_left(k);
            let g2 = DMatrix::from_diagonal(&DVector::from_vec(rotated[..4].to_vec()));
            let b = variance_partition(&g2, rotated[4]).unwrap();
            for i in 0..5 {
                prop_assert!((b.shares[i] - a.shares[(i + k) % 5]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_translation_matches_variances() {
        let mut g = DMatrix::from_diagonal(&DVector::from_vec(vec![16.91, 20.81, 38.86, 45.98]));
        g[(0, 2)] = -17.25;
        g[(2, 0)] = -17.25;
        let e = translate_covariance(&g, Direction::DummyToEffect).unwrap();
        assert_abs_diff_eq!(e[(2, 2)], 38.86 / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[(3, 3)], 45.98 / 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[(0, 0)], 16.91 + 38.86 / 4.0 - 17.25, epsilon = 1e-12);
        let back = translate_covariance(&e, Direction::EffectToDummy).unwrap();
        assert!((back - g).amax() < 1e-12);
    }

    fn rounded_percents(g: [f64; 4], s2: f64) -> Vec<u32> {
        let g = DMatrix::from_diagonal(&DVector::from_vec(g.to_vec()));
        let p = variance_partition(&g, s2).unwrap();
        p.shares.iter().map(|s| (s * 100.0).round() as u32).collect()
    }

    #[test]
    fn partition_examples() {
        assert_eq!(&rounded_percents([16.91, 20.81, 38.86, 45.98], 0.98)[..4], &[14, 17, 31, 37]);
        assert_eq!(&rounded_percents([9.37, 10.62, 9.71, 11.50], 0.98)[..4], &[22, 25, 23, 27]);
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]));
        let p = variance_partition(&g, 1.0).unwrap();
        assert_eq!(p.shares, vec![0.5, 0.0, 0.0, 0.0, 0.5]);
        assert!(matches!(variance_partition(&DMatrix::zeros(4, 4), 0.0), Err(Error::AllZero)));
    }

    #[test]
    fn covariances_do_not_enter_the_denominator() {
        let mut g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]));
        g[(0, 1)] = 0.7;
        g[(1, 0)] = 0.7;
        let p = variance_partition(&g, 1.0).unwrap();
        assert!(p.shares.iter().all(|s| (*s - 0.2).abs() < 1e-15));
    }

    #[test]
    fn intercept_sentences_by_coding() {
        let t = Templates::builtin();
        let d = t.fixed(CodingKind::Dummy, "Intercept", 1.48).unwrap();
        assert!(d.contains("mean level") && d.contains("for experts") && d.contains("at the midpoint"));
        assert!(d.contains("reference role coded 0") && d.contains("was 1.48"));
        assert!(d.ends_with("1.48."));
        let e = t.fixed(CodingKind::Effect, "Intercept", 2.01).unwrap();
        assert!(e.contains("across both dyad member roles") && e.ends_with("2.01."));
        let e = t.fixed(CodingKind::Effect, "Time", 0.5).unwrap();
        assert!(e.contains("across both roles"));
        let z = t.fixed(CodingKind::Dummy, "Time:Role", 0.0).unwrap();
        assert!(z.contains("0.00"));
        assert_eq!(t.fixed(CodingKind::Dummy, "Time:Role", -0.001).unwrap(), z);
    }

    #[test]
    fn every_term_has_a_sentence() {
        let t = Templates::builtin();
        for coding in [CodingKind::Dummy, CodingKind::Effect] {
            for term in APIM_CFGM_TERMS.iter().chain(CFGM_TERMS.iter()) {
                let s = t.fixed(coding, term, 1.0).unwrap();
                assert!(!s.contains('{'), "{s}");
            }
            for name in RANDOM_TERMS.iter().chain(["Residual"].iter()) {
                let s = t.variance(coding, name, 2.0, 0.25).unwrap();
                assert!(s.contains("25%"), "{s}");
            }
        }
        assert!(matches!(t.fixed(CodingKind::Dummy, "Bogus", 1.0), Err(Error::UnknownTerm(_))));
    }

    #[test]
    fn interpret_and_render() {
        let tab = table(ModelKind::Cfgm, CodingKind::Dummy, &[1.48, 0.75, 1.07, 2.40]);
        let sentences = interpret(&tab, &Templates::builtin()).unwrap();
        assert_eq!(sentences.len(), 4 + 5);
        let text = render_text(&tab, &Templates::builtin()).unwrap();
        assert!(text.contains("14%") && text.contains("37%"));
        let mut buf = Vec::new();
        write_report_csv(&tab, &Templates::builtin(), &mut buf).unwrap();
        let csv_text = String::from_utf8(buf).unwrap();
        assert_eq!(csv_text.lines().count(), 1 + 4 + 5);
        let mut bad = tab.clone();
        bad.rows[1].term = "Bogus".into();
        assert!(matches!(interpret(&bad, &Templates::builtin()), Err(Error::UnknownTerm(_))));
    }

    #[test]
    fn self_comparison_is_neutral() {
        let tab = table(ModelKind::ApimCfgm, CodingKind::Effect, &[0.3; 20]);
        let rows = compare(&tab, &tab).unwrap();
        assert!(rows.iter().all(|r| r.ratio == 1.0 && r.gap == 0.0));
        let other = table(ModelKind::Cfgm, CodingKind::Effect, &[0.3; 4]);
        assert!(matches!(compare(&tab, &other), Err(Error::TermMismatch { .. })));
    }

    #[test]
    fn text_record_round_trips() {
        let tab = table(ModelKind::Cfgm, CodingKind::Effect, &[1.0, -2.5, 0.125, 3.0]);
        let back = EstimateTable::from_text(&tab.to_text()).unwrap();
        assert_eq!(back.rows, tab.rows);
        assert_eq!(back.g, tab.g);
        assert_eq!(back.coding, CodingKind::Effect);
        assert_eq!(back.loglik, tab.loglik);
        assert!(EstimateTable::from_text("method = ML\n").is_err());
    }
}
