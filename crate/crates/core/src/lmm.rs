//! Per-group reduction of the linear mixed model
//!
//! `y = Xβ + Zu + ε`, `u_k ~ N(0, σ² ΛΛᵀ)`, `ε ~ N(0, σ² I)`.
//!
//! With `W = σ² V⁻¹ = I − Z Λ M⁻¹ Λᵀ Zᵀ` and `M_k = Λᵀ Z_kᵀ Z_k Λ + I`,
//! everything the estimators need reduces to per-group q×q and q×p cross
//! products, so the N×N marginal covariance is never formed.

use nalgebra::{DMatrix, DVector};

use crate::design::DesignMatrices;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GroupCross {
    pub ztz: DMatrix<f64>,
    pub ztx: DMatrix<f64>,
    pub zty: DVector<f64>,
}

/// Groups sharing one `ZₖᵀZₖ` (every complete dyad does), with their
/// cross products summed so each evaluation costs the same for any number
/// of members.
#[derive(Debug, Clone)]
pub struct GroupClass {
    pub ztz: DMatrix<f64>,
    pub count: usize,
    pub members: Vec<usize>,
    /// `Σₖ (Zₖᵀxₖ)[a,:]ᵀ (Zₖᵀxₖ)[b,:]`, indexed `a * q + b`.
    s_xx: Vec<DMatrix<f64>>,
    /// `Σₖ (ZₖᵀXₖ)[a,:]ᵀ (Zₖᵀyₖ)[b]`, indexed `a * q + b`.
    s_xy: Vec<DVector<f64>>,
    /// `Σₖ (Zₖᵀyₖ) (Zₖᵀyₖ)ᵀ`.
    s_yy: DMatrix<f64>,
}

impl GroupClass {
    /// `Σₖ (ZₖᵀXₖ)ᵀ B (ZₖᵀXₖ)` for a q×q `B`.
    pub fn contract_xx(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let q = b.nrows();
        let p = self.s_xx.first().map_or(0, |m| m.nrows());
        let mut out = DMatrix::zeros(p, p);
        for i in 0..q {
            for j in 0..q {
                let w = b[(i, j)];
                out.zip_apply(&self.s_xx[i * q + j], |o, v| *o += w * v);
            }
        }
        out
    }

    fn contract_xy(&self, b: &DMatrix<f64>) -> DVector<f64> {
        let q = b.nrows();
        let p = self.s_xy.first().map_or(0, |v| v.len());
        let mut out = DVector::zeros(p);
        for i in 0..q {
            for j in 0..q {
                out.axpy(b[(i, j)], &self.s_xy[i * q + j], 1.0);
            }
        }
        out
    }

    /// `Σₖ (ZₖᵀXₖ) H (ZₖᵀXₖ)ᵀ` for a p×p `H`.
    pub fn sandwich_x(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let q = self.ztz.nrows();
        DMatrix::from_fn(q, q, |a, b| self.s_xx[a * q + b].tr_mul(h).trace())
    }
}

#[derive(Debug, Clone)]
pub struct LmmSystem {
    pub groups: Vec<GroupCross>,
    pub classes: Vec<GroupClass>,
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

/// `XᵀWX`, `XᵀWy`, `yᵀWy` and `log|V/σ²| = Σ log|M_k|` at one Λ.
#[derive(Debug, Clone)]
pub struct Reduced {
    pub xtwx: DMatrix<f64>,
    pub xtwy: DVector<f64>,
    pub ytwy: f64,
    pub logdet: f64,
}

/// Per-class pieces at one Λ: `M⁻¹` and `B = Λ M⁻¹ Λᵀ`.
#[derive(Debug, Clone)]
pub struct ClassFactors {
    pub m_inv: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub logdet: f64,
}

impl LmmSystem {
    pub fn new(d: &DesignMatrices) -> Self {
        let (n, p, q) = (d.n_obs(), d.n_fixed(), d.n_random());
        let groups: Vec<GroupCross> = d
            .groups
            .iter()
            .map(|g| {
                let z = d.z_rows.rows(g.start, g.len());
                let x = d.x.rows(g.start, g.len());
                let y = d.y.rows(g.start, g.len());
                GroupCross {
                    ztz: z.transpose() * z,
                    ztx: z.transpose() * x,
                    zty: z.transpose() * y,
                }
            })
            .collect();
        let mut classes: Vec<GroupClass> = Vec::new();
        for (k, g) in groups.iter().enumerate() {
            let class = match classes.iter_mut().position(|c| c.ztz == g.ztz) {
                Some(i) => &mut classes[i],
                None => {
                    classes.push(GroupClass {
                        ztz: g.ztz.clone(),
                        count: 0,
                        members: Vec::new(),
                        s_xx: vec![DMatrix::zeros(p, p); q * q],
                        s_xy: vec![DVector::zeros(p); q * q],
                        s_yy: DMatrix::zeros(q, q),
                    });
                    classes.last_mut().expect("just pushed")
                }
            };
            class.count += 1;
            class.members.push(k);
            for a in 0..q {
                let xa = g.ztx.row(a).transpose();
                for b in 0..q {
                    let xb = g.ztx.row(b);
                    class.s_xx[a * q + b].ger(1.0, &xa, &xb.transpose(), 1.0);
                    class.s_xy[a * q + b].axpy(g.zty[b], &xa, 1.0);
                }
            }
            class.s_yy.ger(1.0, &g.zty, &g.zty, 1.0);
        }
        LmmSystem {
            groups,
            classes,
            xtx: d.x.transpose() * &d.x,
            xty: d.x.transpose() * &d.y,
            yty: d.y.dot(&d.y),
            n,
            p,
            q,
        }
    }

    pub fn class_factors(&self, class: &GroupClass, lambda: &DMatrix<f64>) -> Result<ClassFactors> {
        let mut m = lambda.transpose() * (&class.ztz * lambda);
        for i in 0..self.q {
            m[(i, i)] += 1.0;
        }
        let chol = m.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let m_inv = chol.inverse();
        let b = lambda * &m_inv * lambda.transpose();
        Ok(ClassFactors { m_inv, b, logdet })
    }

    pub fn reduce(&self, lambda: &DMatrix<f64>) -> Result<Reduced> {
        let mut xtwx = self.xtx.clone();
        let mut xtwy = self.xty.clone();
        let mut ytwy = self.yty;
        let mut logdet = 0.0;
        if self.q == 0 {
            return Ok(Reduced {
                xtwx,
                xtwy,
                ytwy,
                logdet,
            });
        }
        for class in &self.classes {
            let f = self.class_factors(class, lambda)?;
            logdet += class.count as f64 * f.logdet;
            xtwx -= class.contract_xx(&f.b);
            xtwy -= class.contract_xy(&f.b);
            ytwy -= class.s_yy.component_mul(&f.b).sum();
        }
        Ok(Reduced {
            xtwx,
            xtwy,
            ytwy,
            logdet,
        })
    }

    /// Gaussian log-likelihood at arbitrary (β, G, σ²) through the reduced path.
    pub fn loglik(&self, beta: &DVector<f64>, g: &DMatrix<f64>, sigma2: f64) -> Result<f64> {
        if !(sigma2 > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let lambda = if self.q == 0 {
            DMatrix::zeros(0, 0)
        } else {
            crate::linalg::psd_cholesky(g)? / sigma2.sqrt()
        };
        let red = self.reduce(&lambda)?;
        let quad = red.ytwy - 2.0 * beta.dot(&red.xtwy) + beta.dot(&(&red.xtwx * beta));
        let n = self.n as f64;
        Ok(-0.5 * (n * (2.0 * std::f64::consts::PI * sigma2).ln() + red.logdet + quad / sigma2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_matches_dense_weights() {
        let y = DVector::from_vec(vec![0.3, -1.2, 2.0, 0.7, 1.1, -0.4]);
        let x = DMatrix::from_row_slice(6, 2, &[1.0, 0.1, 1.0, 0.4, 1.0, -0.3, 1.0, 0.9, 1.0, 0.2, 1.0, -0.8]);
        let z = DMatrix::from_row_slice(6, 2, &[1.0, 0.1, 1.0, 0.4, 1.0, -0.3, 1.0, 0.9, 1.0, 0.2, 1.0, -0.8]);
        let d = DesignMatrices::from_parts(
            y.clone(),
            x.clone(),
            z,
            &[1, 1, 1, 2, 2, 2],
            vec!["Intercept".into(), "t".into()],
            vec!["Intercept".into(), "t".into()],
        )
        .unwrap();
        let lambda = DMatrix::from_row_slice(2, 2, &[0.8, 0.0, -0.3, 0.5]);
        let red = LmmSystem::new(&d).reduce(&lambda).unwrap();

        let zf = d.z_dense();
        let big = DMatrix::from_fn(4, 4, |i, j| if i / 2 == j / 2 { (&lambda * lambda.transpose())[(i % 2, j % 2)] } else { 0.0 });
        let v = DMatrix::identity(6, 6) + &zf * big * zf.transpose();
        let w = v.clone().try_inverse().unwrap();
        assert!((&red.xtwx - x.transpose() * &w * &x).abs().max() < 1e-12);
        assert!((&red.xtwy - x.transpose() * &w * &y).abs().max() < 1e-12);
        assert!((red.ytwy - (y.transpose() * &w * &y)[(0, 0)]).abs() < 1e-12);
        assert!((red.logdet - v.determinant().ln()).abs() < 1e-12);
    }
}
