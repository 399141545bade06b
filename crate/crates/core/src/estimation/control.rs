use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::estimation::design::DesignMatrix;
use crate::estimation::system::{solve, Solver};

/// Below this first-stage F the instrument is flagged as weak.
pub const WEAK_INSTRUMENT_F: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    pub regressors: Vec<String>,
    pub coefficients: Vec<f64>,
    pub excluded: Vec<String>,
    /// Homoskedastic F on the excluded instruments.
    pub f_statistic: f64,
    pub f_df: (usize, usize),
    pub f_p_value: f64,
}

impl FirstStage {
    pub fn weak(&self) -> bool {
        self.f_statistic < WEAK_INSTRUMENT_F
    }
}

#[derive(Debug, Clone)]
pub struct ControlFunction {
    pub residuals: Vec<f64>,
    pub first_stage: FirstStage,
}

/// Regress `endogenous` on the full instrument set and return its residuals
/// for use as an extra regressor downstream.
pub fn control_function_stage(
    endogenous: &[f64],
    instruments: &DesignMatrix,
    excluded: &[String],
    solver: Solver,
) -> Result<ControlFunction> {
    let n = instruments.n_rows();
    if endogenous.len() != n {
        return Err(Error::invalid("endogenous variable has the wrong length"));
    }
    if excluded.is_empty() {
        return Err(Error::invalid("a control function needs at least one excluded instrument"));
    }
    let mut restricted = instruments.clone();
    for name in excluded {
        restricted = restricted.without_column(name)?;
    }
    let y = DMatrix::from_column_slice(n, 1, endogenous);
    let full = solve(instruments, &y, solver)?;
    let rss_u = full.residuals.norm_squared();
    let df2 = n - instruments.n_cols();
    let q = excluded.len();
    let rss_r = if restricted.n_cols() == 0 {
        endogenous.iter().map(|v| v * v).sum()
    } else {
        solve(&restricted, &y, solver)?.residuals.norm_squared()
    };
    let f_statistic = if rss_u > 0.0 {
        ((rss_r - rss_u).max(0.0) / q as f64) / (rss_u / df2 as f64)
    } else {
        f64::INFINITY
    };
    let f_p_value = if f_statistic.is_finite() {
        FisherSnedecor::new(q as f64, df2 as f64)
            .map(|d| d.sf(f_statistic))
            .unwrap_or(f64::NAN)
    } else {
        0.0
    };
    Ok(ControlFunction {
        residuals: full.residuals.as_slice().to_vec(),
        first_stage: FirstStage {
            regressors: instruments.names().to_vec(),
            coefficients: full.coefficients.as_slice().to_vec(),
            excluded: excluded.to_vec(),
            f_statistic,
            f_df: (q, df2),
            f_p_value,
        },
    })
}
