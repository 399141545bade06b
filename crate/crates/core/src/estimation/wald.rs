use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimation::system::SystemFit;

/// A differentiable scalar restriction `R(theta) = 0` on the stacked
/// coefficient vector.
pub trait Restriction: Debug + Send + Sync {
    fn label(&self) -> String;
    /// Indices of the coefficients the restriction depends on.
    fn params(&self) -> Vec<usize>;
    fn value(&self, theta: &[f64]) -> f64;
    /// Sparse gradient as `(index, partial)` pairs.
    fn gradient(&self, theta: &[f64]) -> Vec<(usize, f64)>;
}

/// `sum_i c_i theta_i = rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRestriction {
    pub label: String,
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRestriction {
    pub fn zero(label: impl Into<String>, index: usize) -> Self {
        LinearRestriction {
            label: label.into(),
            terms: vec![(index, 1.0)],
            rhs: 0.0,
        }
    }
}

impl Restriction for LinearRestriction {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn params(&self) -> Vec<usize> {
        self.terms.iter().map(|t| t.0).collect()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * theta[i]).sum::<f64>() - self.rhs
    }

    fn gradient(&self, _theta: &[f64]) -> Vec<(usize, f64)> {
        self.terms.clone()
    }
}

/// `theta[a.0] * theta[a.1] - theta[b.0] * theta[b.1] = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRestriction {
    pub label: String,
    pub a: (usize, usize),
    pub b: (usize, usize),
}

impl Restriction for ProductRestriction {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn params(&self) -> Vec<usize> {
        vec![self.a.0, self.a.1, self.b.0, self.b.1]
    }

    fn value(&self, t: &[f64]) -> f64 {
        t[self.a.0] * t[self.a.1] - t[self.b.0] * t[self.b.1]
    }

    fn gradient(&self, t: &[f64]) -> Vec<(usize, f64)> {
        vec![
            (self.a.0, t[self.a.1]),
            (self.a.1, t[self.a.0]),
            (self.b.0, -t[self.b.1]),
            (self.b.1, -t[self.b.0]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_asymptotic: f64,
    pub p_bootstrap: Option<f64>,
    pub restriction_labels: Vec<String>,
    pub restriction_values: Vec<f64>,
    /// Bootstrap replications behind `p_bootstrap`.
    pub replications: Option<usize>,
    pub redraws: usize,
    /// Bootstrap statistics in replication order. Not serialized.
    #[serde(skip)]
    pub draws: Vec<f64>,
}

/// Sorted, deduplicated coefficient indices touched by a restriction set.
pub fn involved_params(restrictions: &[Box<dyn Restriction>]) -> Vec<usize> {
    let mut idx: Vec<usize> = restrictions.iter().flat_map(|r| r.params()).collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}

pub fn chi2_sf(statistic: f64, df: usize) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).map(|d| d.sf(statistic)).unwrap_or(f64::NAN)
}

/// `W = r' (G V G')^{-1} r` where `r = R(theta) - center`, `G` the Jacobian
/// and `vcov` the covariance of `theta[index]`.
pub fn wald_statistic(
    theta: &[f64],
    vcov: &DMatrix<f64>,
    index: &[usize],
    restrictions: &[Box<dyn Restriction>],
    center: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    let q = restrictions.len();
    if q == 0 {
        return Err(Error::invalid("no restrictions given"));
    }
    let values: Vec<f64> = restrictions.iter().map(|r| r.value(theta)).collect();
    let r = DVector::from_fn(q, |i, _| values[i] - center.map_or(0.0, |c| c[i]));
    let mut g = DMatrix::zeros(q, index.len());
    for (row, rest) in restrictions.iter().enumerate() {
        for (i, d) in rest.gradient(theta) {
            let col = index
                .binary_search(&i)
                .map_err(|_| Error::invalid(format!("coefficient {i} missing from covariance index")))?;
            g[(row, col)] += d;
        }
    }
    if values.iter().chain(g.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite restriction value or gradient".into()));
    }
    let middle = &g * vcov * g.transpose();
    let w = quadratic_inverse(&middle, &r)?;
    Ok((w.max(0.0), values))
}

/// `r' M^{-1} r` for symmetric positive definite `M`, after unit-diagonal scaling.
fn quadratic_inverse(m: &DMatrix<f64>, r: &DVector<f64>) -> Result<f64> {
    let q = m.nrows();
    let d: Vec<f64> = (0..q).map(|i| m[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateRestriction);
    }
    let scaled = DMatrix::from_fn(q, q, |i, j| m[(i, j)] / (d[i] * d[j]).sqrt());
    let chol = scaled.cholesky().ok_or(Error::DegenerateRestriction)?;
    if (0..q).any(|i| chol.l_dirty()[(i, i)].powi(2) < 1e-12) {
        return Err(Error::DegenerateRestriction);
    }
    let rs = DVector::from_fn(q, |i, _| r[i] / d[i].sqrt());
    let z = chol.solve(&rs);
    Ok(rs.dot(&z))
}

pub fn wald_nonlinear(fit: &SystemFit, restrictions: &[Box<dyn Restriction>]) -> Result<WaldResult> {
    let theta = fit.stacked();
    let index = involved_params(restrictions);
    if index.iter().any(|&i| i >= theta.len()) {
        return Err(Error::invalid("restriction refers to a coefficient outside the system"));
    }
    let vcov = fit.vcov_subset(&index);
    let (statistic, values) = wald_statistic(&theta, &vcov, &index, restrictions, None)?;
    Ok(WaldResult {
        statistic,
        df: restrictions.len(),
        p_asymptotic: chi2_sf(statistic, restrictions.len()),
        p_bootstrap: None,
        restriction_labels: restrictions.iter().map(|r| r.label()).collect(),
        restriction_values: values,
        replications: None,
        redraws: 0,
        draws: Vec::new(),
    })
}
