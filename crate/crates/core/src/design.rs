//! Response vector, fixed-effect matrix and dyad-blocked random-effect
//! matrix for the two growth models.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{CodingScheme, LongDataset, Stage};
use crate::error::{Error, Result};

/// Fixed-effect terms of the covariate model, in reporting order.
pub const APIM_CFGM_TERMS: [&str; 20] = [
    "Intercept",
    "Time",
    "Role",
    "ActorWP",
    "ActorAgg",
    "PartnerWP",
    "PartnerAgg",
    "Time:Role",
    "Time:ActorWP",
    "Time:ActorAgg",
    "Time:PartnerWP",
    "Time:PartnerAgg",
    "Role:ActorWP",
    "Role:ActorAgg",
    "Role:PartnerWP",
    "Role:PartnerAgg",
    "Time:Role:ActorWP",
    "Time:Role:ActorAgg",
    "Time:Role:PartnerWP",
    "Time:Role:PartnerAgg",
];

pub const CFGM_TERMS: [&str; 4] = ["Intercept", "Time", "Role", "Time:Role"];

/// Dyad-level random terms shared by both models.
pub const RANDOM_TERMS: [&str; 4] = ["Intercept", "Time", "Role", "Time:Role"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Common-fate growth model: time, role and their interaction.
    Cfgm,
    /// Adds actor/partner within-person and aggregate covariates and all
    /// their interactions with time and role.
    ApimCfgm,
}

impl ModelKind {
    pub fn number(self) -> u8 {
        match self {
            ModelKind::Cfgm => 1,
            ModelKind::ApimCfgm => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(ModelKind::Cfgm),
            2 => Some(ModelKind::ApimCfgm),
            _ => None,
        }
    }

    pub fn terms(self) -> &'static [&'static str] {
        match self {
            ModelKind::Cfgm => &CFGM_TERMS,
            ModelKind::ApimCfgm => &APIM_CFGM_TERMS,
        }
    }

    pub fn for_n_terms(p: usize) -> Option<Self> {
        match p {
            4 => Some(ModelKind::Cfgm),
            20 => Some(ModelKind::ApimCfgm),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub model: ModelKind,
    pub coding: CodingScheme,
    pub fixed_term_names: Vec<String>,
    pub random_term_names: Vec<String>,
}

impl ModelSpec {
    pub fn new(model: ModelKind, coding: CodingScheme) -> Self {
        ModelSpec {
            model,
            coding,
            fixed_term_names: model.terms().iter().map(|s| s.to_string()).collect(),
            random_term_names: RANDOM_TERMS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Covariate values of one person-period row entering the fixed part.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RowCovariates {
    pub time: f64,
    pub role: f64,
    pub actor_within: f64,
    pub actor_agg: f64,
    pub partner_within: f64,
    pub partner_agg: f64,
}

/// Fixed-effect row in reporting order. Interactions are plain products of
/// the already centered and coded columns.
pub fn fixed_row(model: ModelKind, c: &RowCovariates) -> Vec<f64> {
    let (t, r) = (c.time, c.role);
    match model {
        ModelKind::Cfgm => vec![1.0, t, r, t * r],
        ModelKind::ApimCfgm => {
            let cov = [c.actor_within, c.actor_agg, c.partner_within, c.partner_agg];
            let mut row = Vec::with_capacity(20);
            row.extend([1.0, t, r]);
            row.extend(cov);
            row.push(t * r);
            row.extend(cov.iter().map(|x| t * x));
            row.extend(cov.iter().map(|x| r * x));
            row.extend(cov.iter().map(|x| t * r * x));
            row
        }
    }
}

pub fn random_row(time: f64, role: f64) -> [f64; 4] {
    [1.0, time, role, time * role]
}

/// For each term index, the index of its role-interaction partner (if any).
/// Terms without "Role" pair with the term that adds "Role" after "Time" or first.
pub fn role_pairs(model: ModelKind) -> Vec<(usize, usize)> {
    let terms = model.terms();
    let with_role = |name: &str| -> String {
        match name {
            "Intercept" => "Role".to_string(),
            _ => {
                let mut parts: Vec<&str> = name.split(':').collect();
                let pos = usize::from(parts.first() == Some(&"Time"));
                parts.insert(pos, "Role");
                parts.join(":")
            }
        }
    };
    terms
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.split(':').any(|p| p == "Role"))
        .map(|(i, n)| {
            let partner = with_role(n);
            let j = terms.iter().position(|t| *t == partner).expect("every base term has a role partner");
            (i, j)
        })
        .collect()
}

/// The p×p matrix T with `X_effect · T = X_dummy` (columns built from the
/// same data under the two codings, using dummy = (effect + 1) / 2).
pub fn effect_to_dummy_columns(model: ModelKind) -> DMatrix<f64> {
    let p = model.terms().len();
    let mut t = DMatrix::<f64>::identity(p, p);
    for (base, role) in role_pairs(model) {
        t[(role, role)] = 0.5;
        t[(base, role)] = 0.5;
    }
    t
}

/// Contiguous rows belonging to one group (dyad).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSpan {
    pub label: u32,
    pub start: usize,
    pub end: usize,
}

impl GroupSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Inputs to both estimators. `Z` is stored compactly: `z_rows` holds each
/// row's q entries, which sit in the column block of that row's group.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z_rows: DMatrix<f64>,
    pub groups: Vec<GroupSpan>,
    pub dyad_index: Vec<usize>,
    pub fixed_names: Vec<String>,
    pub random_names: Vec<String>,
    pub spec: Option<ModelSpec>,
}

impl DesignMatrices {
    /// Generic grouped design. Rows of a group must be contiguous.
    pub fn from_parts(
        y: DVector<f64>,
        x: DMatrix<f64>,
        z_rows: DMatrix<f64>,
        group_labels: &[u32],
        fixed_names: Vec<String>,
        random_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || z_rows.nrows() != n || group_labels.len() != n {
            return Err(Error::InvalidDesign("row counts disagree".into()));
        }
        if fixed_names.len() != x.ncols() || random_names.len() != z_rows.ncols() {
            return Err(Error::InvalidDesign("term names disagree with column counts".into()));
        }
        let mut groups: Vec<GroupSpan> = Vec::new();
        let mut dyad_index = Vec::with_capacity(n);
        for (i, &label) in group_labels.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if g.label == label => g.end = i + 1,
                _ => {
                    if groups.iter().any(|g| g.label == label) {
                        return Err(Error::InvalidDesign(format!("rows of group {label} are not contiguous")));
                    }
                    groups.push(GroupSpan {
                        label,
                        start: i,
                        end: i + 1,
                    });
                }
            }
            dyad_index.push(groups.len() - 1);
        }
        Ok(DesignMatrices {
            y,
            x,
            z_rows,
            groups,
            dyad_index,
            fixed_names,
            random_names,
            spec: None,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_fixed(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_random(&self) -> usize {
        self.z_rows.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn intercept_column(&self) -> Option<usize> {
        self.fixed_names.iter().position(|n| n == "Intercept")
    }

    /// Structural nonzeros of the full N × (q·K) random-effect matrix.
    pub fn z_triplets(&self) -> Vec<(usize, usize, f64)> {
        let q = self.n_random();
        let mut out = Vec::with_capacity(self.n_obs() * q);
        for (i, &g) in self.dyad_index.iter().enumerate() {
            for j in 0..q {
                let v = self.z_rows[(i, j)];
                if v != 0.0 {
                    out.push((i, g * q + j, v));
                }
            }
        }
        out
    }

    pub fn z_dense(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.n_obs(), self.n_random() * self.n_groups());
        for (i, j, v) in self.z_triplets() {
            z[(i, j)] = v;
        }
        z
    }

    /// Numerical rank of X with its singular-value condition number.
    pub fn rank_diagnostic(&self) -> RankDiagnostic {
        let sv = self.x.clone().svd(false, false).singular_values;
        let max = sv.iter().cloned().fold(0.0, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let tol = max * 1e-10 * (self.n_obs().max(self.n_fixed()) as f64);
        RankDiagnostic {
            rank: sv.iter().filter(|&&s| s > tol).count(),
            columns: self.n_fixed(),
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        }
    }

    /// Writes y.csv, X.csv and Z.csv as (row, col, value) triplets.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut y = BufWriter::new(File::create(dir.join("y.csv"))?);
        writeln!(y, "row,col,value")?;
        for (i, v) in self.y.iter().enumerate() {
            writeln!(y, "{i},0,{v}")?;
        }
        let mut x = BufWriter::new(File::create(dir.join("X.csv"))?);
        writeln!(x, "row,col,value")?;
        for i in 0..self.x.nrows() {
            for j in 0..self.x.ncols() {
                writeln!(x, "{i},{j},{}", self.x[(i, j)])?;
            }
        }
        let mut z = BufWriter::new(File::create(dir.join("Z.csv"))?);
        writeln!(z, "row,col,value")?;
        for (i, j, v) in self.z_triplets() {
            writeln!(z, "{i},{j},{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankDiagnostic {
    pub rank: usize,
    pub columns: usize,
    pub condition: f64,
}

impl RankDiagnostic {
    pub fn full_rank(&self) -> bool {
        self.rank == self.columns
    }
}

pub fn build_design(data: &LongDataset, spec: &ModelSpec) -> Result<DesignMatrices> {
    if data.stage() != Stage::Prepared {
        return Err(Error::WrongStage { expected: "prepared" });
    }
    if data.coding().kind() != spec.coding.kind() {
        return Err(Error::CodingMismatch {
            data: data.coding().kind().as_str(),
            model: spec.coding.kind().as_str(),
        });
    }
    let n = data.len();
    let p = spec.fixed_term_names.len();
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut z = DMatrix::<f64>::zeros(n, 4);
    let mut y = DVector::<f64>::zeros(n);
    let mut labels = Vec::with_capacity(n);
    for (i, r) in data.rows().iter().enumerate() {
        let cov = RowCovariates {
            time: r.time,
            role: r.role_code,
            actor_within: r.actor_within,
            actor_agg: r.actor_agg,
            partner_within: r.partner_within,
            partner_agg: r.partner_agg,
        };
        for (j, v) in fixed_row(spec.model, &cov).into_iter().enumerate() {
            x[(i, j)] = v;
        }
        for (j, v) in random_row(r.time, r.role_code).into_iter().enumerate() {
            z[(i, j)] = v;
        }
        y[i] = r.outcome;
        labels.push(r.dyad_id);
    }
    let mut design = DesignMatrices::from_parts(
        y,
        x,
        z,
        &labels,
        spec.fixed_term_names.clone(),
        spec.random_term_names.clone(),
    )?;
    design.spec = Some(spec.clone());
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cfgm_reference_and_unit_rows() {
        let c = RowCovariates::default();
        assert_eq!(fixed_row(ModelKind::Cfgm, &c), vec![1.0, 0.0, 0.0, 0.0]);
        let c = RowCovariates {
            time: 1.0,
            role: 1.0,
            ..Default::default()
        };
        assert_eq!(fixed_row(ModelKind::Cfgm, &c), vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn apim_row_nonzero_pattern() {
        let c = RowCovariates {
            time: 0.0,
            role: 1.0,
            actor_within: 2.0,
            ..Default::default()
        };
        let row = fixed_row(ModelKind::ApimCfgm, &c);
        let nonzero: Vec<(usize, f64)> = row
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i + 1, *v))
            .collect();
        assert_eq!(nonzero, vec![(1, 1.0), (3, 1.0), (4, 2.0), (13, 2.0)]);
    }

    #[test]
    fn row_products_match_term_names() {
        let c = RowCovariates {
            time: 0.5,
            role: -1.0,
            actor_within: 2.0,
            actor_agg: 3.0,
            partner_within: 5.0,
            partner_agg: 7.0,
        };
        let row = fixed_row(ModelKind::ApimCfgm, &c);
        for (name, v) in APIM_CFGM_TERMS.iter().zip(&row) {
            let want: f64 = name
                .split(':')
                .map(|f| match f {
                    "Intercept" => 1.0,
                    "Time" => c.time,
                    "Role" => c.role,
                    "ActorWP" => c.actor_within,
                    "ActorAgg" => c.actor_agg,
                    "PartnerWP" => c.partner_within,
                    "PartnerAgg" => c.partner_agg,
                    _ => unreachable!(),
                })
                .product();
            assert_eq!(*v, want, "{name}");
        }
    }

    #[test]
    fn role_pairs_cover_all_terms() {
        let pairs = role_pairs(ModelKind::ApimCfgm);
        assert_eq!(pairs.len(), 10);
        let mut seen: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        seen.sort();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
        assert_eq!(role_pairs(ModelKind::Cfgm), vec![(0, 2), (1, 3)]);
    }

    #[test]
    fn from_parts_rejects_split_groups() {
        let y = DVector::zeros(3);
        let x = DMatrix::from_element(3, 1, 1.0);
        let z = DMatrix::from_element(3, 1, 1.0);
        let err = DesignMatrices::from_parts(y, x, z, &[1, 2, 1], vec!["Intercept".into()], vec!["Intercept".into()]);
        assert!(err.is_err());
    }
}
