//! Assembly of the unconditional budget-share system and the system
//! conditional on one good's share.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{control_function_stage, solve, DesignMatrix, FirstStage, FitOptions};
use crate::panel::{derive_vars_with, Education, Good, PooledSample, Sex, ShareDenominator, Trait, Wave, TIME_ENDOWMENT};
use crate::psychometrics::{FactorSet, N_TRAITS};

/// Full income enters the income block as `y / INCOME_SCALE`.
pub const INCOME_SCALE: f64 = 1e3;
/// Minimum number of couples for the potential-income wage regression.
pub const MIN_WAGE_SAMPLE: usize = 50;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSpouse {
    /// Age and education of the husband (the default specification).
    #[default]
    Husband,
    Wife,
}

impl ControlSpouse {
    pub fn sex(self) -> Sex {
        match self {
            ControlSpouse::Husband => Sex::Male,
            ControlSpouse::Wife => Sex::Female,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub controls: ControlSpouse,
    /// Good whose share replaces a distribution factor in the conditional system.
    #[serde(default = "default_conditioning_good")]
    pub conditioning_good: Good,
    /// Factor (0 for z1, 1 for z2) inverted out of the conditional system.
    #[serde(default = "default_inverted_factor")]
    pub inverted_factor: usize,
    #[serde(default)]
    pub share_denominator: ShareDenominator,
    #[serde(default)]
    pub fit: FitOptions,
}

fn default_conditioning_good() -> Good {
    Good::Cm
}

fn default_inverted_factor() -> usize {
    1
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            controls: ControlSpouse::Husband,
            conditioning_good: Good::Cm,
            inverted_factor: 1,
            share_denominator: ShareDenominator::FullIncome,
            fit: FitOptions::default(),
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.inverted_factor > 1 {
            return Err(Error::Config("inverted_factor must be 0 (z1) or 1 (z2)".into()));
        }
        Ok(())
    }

    pub fn retained_factor(&self) -> usize {
        1 - self.inverted_factor
    }

    /// Goods of the conditional system, in [`Good::ALL`] order.
    pub fn conditional_goods(&self) -> Vec<Good> {
        Good::ALL.into_iter().filter(|&g| g != self.conditioning_good).collect()
    }
}

pub fn factor_name(k: usize) -> String {
    format!("ln_z{}", k + 1)
}

/// Everything the systems need from one couple-wave record.
#[derive(Debug, Clone, PartialEq)]
struct DemandRow {
    shares: [f64; 5],
    full_income: f64,
    nonlabor_income: f64,
    wage: [f64; 2],
    age: [f64; 2],
    educ: [Education; 2],
    n_children: f64,
    married: f64,
    ln_z: [f64; 2],
    ln_pc_m: [f64; 2],
    ln_pc_f: [f64; 2],
    ratios_m: [f64; N_TRAITS],
    ratios_f: [f64; N_TRAITS],
    /// Index into `waves`.
    wave: usize,
}

/// Per-record inputs for both demand systems, with a cluster per household.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandData {
    rows: Vec<DemandRow>,
    clusters: Vec<usize>,
    waves: Vec<Wave>,
    spec: ModelSpec,
}

#[derive(Debug, Clone)]
pub struct SystemData {
    pub y: DMatrix<f64>,
    pub x: DesignMatrix,
    pub equations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct UnconditionalSystem {
    pub system: SystemData,
    /// First stages for `y` and `y^2`; only filled when diagnostics are requested.
    pub income_first_stage: Vec<FirstStage>,
}

#[derive(Debug, Clone)]
pub struct ConditionalSystem {
    pub system: SystemData,
    pub first_stage: FirstStage,
}

impl ConditionalSystem {
    pub fn weak_instrument(&self) -> bool {
        self.first_stage.weak()
    }
}

impl DemandData {
    pub fn new(sample: &PooledSample, factors: &[FactorSet], spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        if factors.len() != sample.len() {
            return Err(Error::invalid(format!(
                "{} factor sets for {} observations",
                factors.len(),
                sample.len()
            )));
        }
        let mut rows = Vec::with_capacity(sample.len());
        for (o, f) in sample.observations.iter().zip(factors) {
            let d = derive_vars_with(o, spec.share_denominator)?;
            rows.push(DemandRow {
                shares: d.shares,
                full_income: d.full_income,
                nonlabor_income: o.nonlabor_income,
                wage: [o.wage_m, o.wage_f],
                age: [o.age_m as f64, o.age_f as f64],
                educ: [o.educ_m, o.educ_f],
                n_children: o.n_children as f64,
                married: if o.married { 1.0 } else { 0.0 },
                ln_z: f.log_ratio,
                ln_pc_m: f.pc_m.map(f64::ln),
                ln_pc_f: f.pc_f.map(f64::ln),
                ratios_m: f.ratios_m,
                ratios_f: f.ratios_f,
                wave: sample.waves.iter().position(|&w| w == o.wave).unwrap(),
            });
        }
        let ids: Vec<&str> = sample.observations.iter().map(|o| o.household_id.as_str()).collect();
        Ok(DemandData {
            rows,
            clusters: DesignMatrix::cluster_index(&ids),
            waves: sample.waves.clone(),
            spec,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn clusters(&self) -> &[usize] {
        &self.clusters
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn with_spec(&self, spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(DemandData { spec, ..self.clone() })
    }

    /// Records of the given rows, relabeled with the given clusters.
    pub fn subset(&self, rows: &[usize], clusters: Vec<usize>) -> Self {
        DemandData {
            rows: rows.iter().map(|&r| self.rows[r].clone()).collect(),
            clusters,
            waves: self.waves.clone(),
            spec: self.spec,
        }
    }

    pub fn share(&self, g: Good) -> Vec<f64> {
        self.rows.iter().map(|r| r.shares[g.index()]).collect()
    }

    pub fn ln_z(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.ln_z[k]).collect()
    }

    fn col(&self, f: impl Fn(&DemandRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    /// Covariates common to every specification: wages, taste shifters,
    /// marriage-market ratios and wave dummies.
    fn exogenous_block(&self) -> Vec<(String, Vec<f64>)> {
        let s = self.spec.controls.sex() as usize;
        let suffix = self.spec.controls.sex().suffix();
        let mut cols: Vec<(String, Vec<f64>)> = vec![
            ("ln_w_m".into(), self.col(|r| r.wage[0].ln())),
            ("ln_w_f".into(), self.col(|r| r.wage[1].ln())),
            ("ln_w_m_x_ln_w_f".into(), self.col(|r| r.wage[0].ln() * r.wage[1].ln())),
            ("ln_w_m_sq".into(), self.col(|r| r.wage[0].ln().powi(2))),
        ];
        for k in 0..2 {
            cols.push((format!("ln_pc{}_m", k + 1), self.col(|r| r.ln_pc_m[k])));
        }
        for k in 0..2 {
            cols.push((format!("ln_pc{}_m_sq", k + 1), self.col(|r| r.ln_pc_m[k].powi(2))));
        }
        for k in 0..2 {
            cols.push((format!("ln_pc{}_f_sq", k + 1), self.col(|r| r.ln_pc_f[k].powi(2))));
        }
        cols.push((format!("age_{suffix}"), self.col(|r| r.age[s])));
        cols.push((format!("age_{suffix}_sq"), self.col(|r| r.age[s].powi(2) / 100.0)));
        cols.push((
            format!("educ_middle_{suffix}"),
            self.col(|r| (r.educ[s] == Education::Middle) as u8 as f64),
        ));
        cols.push((
            format!("educ_high_{suffix}"),
            self.col(|r| (r.educ[s] == Education::High) as u8 as f64),
        ));
        cols.push(("n_children".into(), self.col(|r| r.n_children)));
        cols.push(("married".into(), self.col(|r| r.married)));
        for t in Trait::ALL {
            cols.push((format!("ratio_m_{}", t.name()), self.col(|r| r.ratios_m[t.index()])));
        }
        for t in Trait::ALL {
            cols.push((format!("ratio_f_{}", t.name()), self.col(|r| r.ratios_f[t.index()])));
        }
        for (w, wave) in self.waves.iter().enumerate().skip(1) {
            cols.push((format!("wave_{wave}"), self.col(|r| (r.wave == w) as u8 as f64)));
        }
        cols
    }

    fn factor_block(&self, degree: usize) -> Vec<(String, Vec<f64>)> {
        let mut cols = Vec::new();
        for k in 0..2 {
            for d in 1..=degree {
                let name = match d {
                    1 => factor_name(k),
                    2 => format!("{}_sq", factor_name(k)),
                    3 => format!("{}_cu", factor_name(k)),
                    _ => format!("{}_pow{d}", factor_name(k)),
                };
                cols.push((name, self.col(|r| r.ln_z[k].powi(d as i32))));
            }
        }
        cols
    }

    /// Wage regression on pooled husbands and wives, returning predicted wages.
    pub fn predicted_wages(&self) -> Result<Vec<[f64; 2]>> {
        let n = self.rows.len();
        if n < MIN_WAGE_SAMPLE {
            return Err(Error::invalid(format!(
                "wage regression needs at least {MIN_WAGE_SAMPLE} couples, got {n}"
            )));
        }
        let person = |i: usize| (i % n, i / n);
        let mut cols: Vec<(String, Vec<f64>)> = vec![
            ("const".into(), vec![1.0; 2 * n]),
            ("age".into(), (0..2 * n).map(|i| { let (r, s) = person(i); self.rows[r].age[s] }).collect()),
            (
                "age_sq".into(),
                (0..2 * n).map(|i| { let (r, s) = person(i); self.rows[r].age[s].powi(2) / 100.0 }).collect(),
            ),
        ];
        for level in [Education::Middle, Education::High] {
            let v: Vec<f64> = (0..2 * n)
                .map(|i| { let (r, s) = person(i); (self.rows[r].educ[s] == level) as u8 as f64 })
                .collect();
            let first = v[0];
            if v.iter().any(|&x| x != first) {
                cols.push((format!("educ_{}", level.as_str()), v));
            } else {
                log::info!("wage regression: no variation in educ_{}, dummy dropped", level.as_str());
            }
        }
        cols.push(("female".into(), (0..2 * n).map(|i| (i >= n) as u8 as f64).collect()));
        let ln_w = DMatrix::from_fn(2 * n, 1, |i, _| { let (r, s) = person(i); self.rows[r].wage[s].ln() });
        let clusters: Vec<usize> = (0..2 * n).map(|i| self.clusters[i % n]).collect();
        let x = DesignMatrix::from_columns(cols, clusters)?;
        let ls = solve(&x, &ln_w, self.spec.fit.solver)?;
        let fitted = x.data() * &ls.coefficients;
        Ok((0..n).map(|r| [fitted[(r, 0)].exp(), fitted[(n + r, 0)].exp()]).collect())
    }

    /// `(w_m_hat + w_f_hat) T + x`.
    pub fn potential_income(&self) -> Result<Vec<f64>> {
        Ok(self
            .predicted_wages()?
            .iter()
            .zip(&self.rows)
            .map(|(w, r)| (w[0] + w[1]) * TIME_ENDOWMENT + r.nonlabor_income)
            .collect())
    }

    fn income_columns(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.col(|r| r.full_income / INCOME_SCALE),
            self.col(|r| (r.full_income / INCOME_SCALE).powi(2)),
        )
    }

    /// Residuals of `y` and `y^2` on potential income, its square, the factor
    /// block and the exogenous covariates.
    fn income_control(&self, factors: &[(String, Vec<f64>)], diagnostics: bool) -> Result<(Vec<f64>, Vec<f64>, Vec<FirstStage>)> {
        let pi = self.potential_income()?;
        let mut cols = vec![("const".to_string(), vec![1.0; self.len()])];
        cols.extend(factors.iter().cloned());
        cols.push(("pi".into(), pi.iter().map(|p| p / INCOME_SCALE).collect()));
        cols.push(("pi_sq".into(), pi.iter().map(|p| (p / INCOME_SCALE).powi(2)).collect()));
        cols.extend(self.exogenous_block());
        let z = DesignMatrix::from_columns(cols, self.clusters.clone())?;
        let (y, y_sq) = self.income_columns();
        if diagnostics {
            let excluded = ["pi".to_string(), "pi_sq".to_string()];
            let a = control_function_stage(&y, &z, &excluded, self.spec.fit.solver)?;
            let b = control_function_stage(&y_sq, &z, &excluded, self.spec.fit.solver)?;
            Ok((a.residuals, b.residuals, vec![a.first_stage, b.first_stage]))
        } else {
            let n = self.len();
            let mut ys = DMatrix::zeros(n, 2);
            ys.column_mut(0).copy_from_slice(&y);
            ys.column_mut(1).copy_from_slice(&y_sq);
            let ls = solve(&z, &ys, self.spec.fit.solver)?;
            Ok((
                ls.residuals.column(0).iter().copied().collect(),
                ls.residuals.column(1).iter().copied().collect(),
                Vec::new(),
            ))
        }
    }

    fn design(&self, factors: Vec<(String, Vec<f64>)>, diagnostics: bool) -> Result<(DesignMatrix, Vec<FirstStage>)> {
        let (cf_y, cf_y_sq, stages) = self.income_control(&factors, diagnostics)?;
        let (y, y_sq) = self.income_columns();
        let mut cols = vec![("const".to_string(), vec![1.0; self.len()])];
        cols.extend(factors);
        cols.push(("y".into(), y));
        cols.push(("y_sq".into(), y_sq));
        cols.push(("cf_y".into(), cf_y));
        cols.push(("cf_y_sq".into(), cf_y_sq));
        cols.extend(self.exogenous_block());
        Ok((DesignMatrix::from_columns(cols, self.clusters.clone())?, stages))
    }

    fn shares_matrix(&self, goods: &[Good]) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), goods.len(), |i, j| self.rows[i].shares[goods[j].index()])
    }

    /// Five budget shares on log factors, the income control function and
    /// the exogenous covariates.
    pub fn build_unconditional(&self, diagnostics: bool) -> Result<UnconditionalSystem> {
        let (x, income_first_stage) = self.design(self.factor_block(1), diagnostics)?;
        Ok(UnconditionalSystem {
            system: SystemData {
                y: self.shares_matrix(&Good::ALL),
                x,
                equations: Good::ALL.iter().map(|g| g.share_name()).collect(),
            },
            income_first_stage,
        })
    }

    /// Cubic polynomials in both log factors in place of the linear terms.
    pub fn build_polynomial(&self, degree: usize) -> Result<SystemData> {
        if degree == 0 {
            return Err(Error::invalid("polynomial degree must be positive"));
        }
        let (x, _) = self.design(self.factor_block(degree), false)?;
        Ok(SystemData {
            y: self.shares_matrix(&Good::ALL),
            x,
            equations: Good::ALL.iter().map(|g| g.share_name()).collect(),
        })
    }

    /// The remaining four shares conditional on the conditioning good's
    /// share, with the inverted factor removed and the conditioning share's
    /// first-stage residual added.
    ///
    /// `unconditional` must come from [`Self::build_unconditional`] on the same data.
    pub fn build_conditional(&self, unconditional: &UnconditionalSystem) -> Result<ConditionalSystem> {
        let spec = &self.spec;
        let omega = self.share(spec.conditioning_good);
        let inverted = factor_name(spec.inverted_factor);
        let cf = control_function_stage(&omega, &unconditional.system.x, &[inverted], spec.fit.solver)?;
        let system = self.conditional_from(&unconditional.system.x, &omega, &cf.residuals)?;
        Ok(ConditionalSystem {
            system,
            first_stage: cf.first_stage,
        })
    }

    /// Conditional system given the conditioning share's first-stage residual.
    pub fn conditional_from(&self, unconditional_x: &DesignMatrix, omega: &[f64], residual: &[f64]) -> Result<SystemData> {
        let g = self.spec.conditioning_good;
        let x = unconditional_x
            .without_column(&factor_name(self.spec.inverted_factor))?
            .with_column(&g.share_name(), omega)?
            .with_column(&format!("cf_{}", g.share_name()), residual)?;
        let goods = self.spec.conditional_goods();
        Ok(SystemData {
            y: self.shares_matrix(&goods),
            x,
            equations: goods.iter().map(|g| g.share_name()).collect(),
        })
    }
}

/// Number of columns of the unconditional design for `n_waves` waves.
pub fn unconditional_column_count(n_waves: usize) -> usize {
    // const + ln z + income (levels and control function) + wages
    // + PC levels and squares + age, age^2, 2 education dummies, children, married
    // + ratios + wave dummies
    1 + 2 + 4 + 4 + 6 + 6 + 2 * N_TRAITS + n_waves.saturating_sub(1)
}
