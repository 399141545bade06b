use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::design::DesignMatrix;
use crate::linalg::{gram_least_squares, least_squares, LeastSquares};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Householder QR.
    #[default]
    Qr,
    /// Cholesky of the Gram matrix; faster, coarser rank check.
    Gram,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Scale the cluster-robust covariance by `G / (G - 1)`.
    #[serde(default)]
    pub small_sample_adjustment: bool,
    #[serde(default)]
    pub solver: Solver,
}

pub(crate) fn solve(x: &DesignMatrix, y: &DMatrix<f64>, solver: Solver) -> Result<LeastSquares> {
    match solver {
        Solver::Qr => least_squares(x.data(), y, x.names()),
        Solver::Gram => gram_least_squares(x.data(), y, x.names()),
    }
}

/// Cluster-robust covariance of selected stacked coefficients.
///
/// `index` addresses the stacked vector `eq * p + k`. With bread `B = (X'X)^{-1}`
/// the score of cluster `g` is `u_g = (I (x) B) vec(X_g' E_g)` and the result is
/// `sum_g u_g u_g'` restricted to `index`.
pub fn cluster_vcov(
    x: &DesignMatrix,
    residuals: &DMatrix<f64>,
    bread: &DMatrix<f64>,
    index: &[usize],
    small_sample_adjustment: bool,
) -> DMatrix<f64> {
    let p = x.n_cols();
    let mut ks: Vec<usize> = index.iter().map(|&i| i % p).collect();
    ks.sort_unstable();
    ks.dedup();
    let b_sub = DMatrix::from_fn(ks.len(), p, |r, c| bread[(ks[r], c)]);
    let a = x.data() * b_sub.transpose();
    let slots: Vec<(usize, usize)> = index
        .iter()
        .map(|&i| (i / p, ks.binary_search(&(i % p)).unwrap()))
        .collect();
    let g = x.n_clusters();
    let mut u = DMatrix::zeros(g, index.len());
    for (row, &cl) in x.clusters().iter().enumerate() {
        for (c, &(eq, kpos)) in slots.iter().enumerate() {
            u[(cl, c)] += a[(row, kpos)] * residuals[(row, eq)];
        }
    }
    let mut v = u.tr_mul(&u);
    if small_sample_adjustment && g > 1 {
        v *= g as f64 / (g as f64 - 1.0);
    }
    v
}

/// Equation-by-equation least squares on a common design, with the joint
/// cluster-robust covariance of all coefficients.
#[derive(Debug, Clone)]
pub struct SystemFit {
    pub equations: Vec<String>,
    pub regressors: Vec<String>,
    /// `p x J`.
    pub coefficients: DMatrix<f64>,
    /// `n x J`.
    pub residuals: DMatrix<f64>,
    /// Residual cross-moments divided by `n`.
    pub sigma: DMatrix<f64>,
    /// `Jp x Jp`, stacked by equation.
    pub vcov_cluster: DMatrix<f64>,
    pub bread: DMatrix<f64>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub options: FitOptions,
}

pub fn fit_system(y: &DMatrix<f64>, x: &DesignMatrix, equations: &[String], options: FitOptions) -> Result<SystemFit> {
    if y.ncols() != equations.len() {
        return Err(Error::invalid("one equation name per outcome column required"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite outcome".into()));
    }
    let ls = solve(x, y, options.solver)?;
    let bread = ls.bread();
    let n = x.n_rows();
    let all: Vec<usize> = (0..x.n_cols() * y.ncols()).collect();
    let vcov_cluster = cluster_vcov(x, &ls.residuals, &bread, &all, options.small_sample_adjustment);
    let sigma = ls.residuals.tr_mul(&ls.residuals) / n as f64;
    Ok(SystemFit {
        equations: equations.to_vec(),
        regressors: x.names().to_vec(),
        coefficients: ls.coefficients,
        residuals: ls.residuals,
        sigma,
        vcov_cluster,
        bread,
        n_obs: n,
        n_clusters: x.n_clusters(),
        options,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEntry {
    pub regressor: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationSummary {
    pub equation: String,
    pub coefficients: Vec<CoefficientEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub n_obs: usize,
    pub n_clusters: usize,
    pub equations: Vec<EquationSummary>,
    /// Row-major `J x J`.
    pub sigma: Vec<Vec<f64>>,
}

impl SystemFit {
    pub fn n_regressors(&self) -> usize {
        self.regressors.len()
    }

    pub fn equation_index(&self, eq: &str) -> Option<usize> {
        self.equations.iter().position(|e| e == eq)
    }

    pub fn regressor_index(&self, name: &str) -> Option<usize> {
        self.regressors.iter().position(|r| r == name)
    }

    /// Position in the stacked coefficient vector.
    pub fn param_index(&self, eq: usize, regressor: &str) -> Option<usize> {
        self.regressor_index(regressor).map(|k| eq * self.n_regressors() + k)
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.coefficients.as_slice().to_vec()
    }

    pub fn coef(&self, eq: usize, regressor: &str) -> Option<f64> {
        self.regressor_index(regressor).map(|k| self.coefficients[(k, eq)])
    }

    pub fn se(&self, eq: usize, regressor: &str) -> Option<f64> {
        self.param_index(eq, regressor)
            .map(|i| self.vcov_cluster[(i, i)].max(0.0).sqrt())
    }

    pub fn vcov_subset(&self, index: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(index.len(), index.len(), |r, c| self.vcov_cluster[(index[r], index[c])])
    }

    pub fn summary(&self) -> SystemSummary {
        SystemSummary {
            n_obs: self.n_obs,
            n_clusters: self.n_clusters,
            equations: self
                .equations
                .iter()
                .enumerate()
                .map(|(e, name)| EquationSummary {
                    equation: name.clone(),
                    coefficients: self
                        .regressors
                        .iter()
                        .map(|r| CoefficientEntry {
                            regressor: r.clone(),
                            estimate: self.coef(e, r).unwrap(),
                            se: self.se(e, r).unwrap(),
                        })
                        .collect(),
                })
                .collect(),
            sigma: self.sigma.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}
