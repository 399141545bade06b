//! Proportionality and exclusion tests of the collective model, and the
//! polynomial check of how shares move with the second factor.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::demand::{factor_name, DemandData, SystemData};
use crate::error::{Error, Result};
use crate::estimation::{
    bootstrap_p_value, chi2_sf, cluster_bootstrap, cluster_vcov, fit_system, involved_params, solve, wald_statistic,
    BootstrapConfig, BootstrapDraws, ClusterRows, FirstStage, LinearRestriction, ProductRestriction, Restriction,
    Solver, SystemFit, SystemSummary, WaldResult,
};
use crate::panel::Good;
use crate::stats::median;

/// A ratio whose denominator is within this many standard errors of zero is flagged.
pub const NEAR_ZERO_SE: f64 = 5.0;
/// Significance level behind the stars in coefficient tables.
pub const SIGNIFICANCE_LEVEL: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioDiagnostic {
    pub equation: String,
    pub beta_1: f64,
    pub beta_2: f64,
    pub se_2: f64,
    pub ratio: f64,
    /// `|beta_2| < NEAR_ZERO_SE * se_2`.
    pub near_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionalityTest {
    pub anchor: Good,
    pub wald: WaldResult,
    pub ratios: Vec<RatioDiagnostic>,
    pub near_zero_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationTest {
    pub equation: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    /// Two-sided normal p-value.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionTest {
    /// The factor that must drop out of the conditional system.
    pub factor: String,
    pub wald: WaldResult,
    pub equations: Vec<EquationTest>,
    pub first_stage_f: f64,
    pub weak_instrument: bool,
}

/// Both tests with the fits they were computed from.
#[derive(Debug, Clone)]
pub struct CollectiveTests {
    pub unconditional: SystemFit,
    pub conditional: SystemFit,
    pub first_stage: FirstStage,
    pub income_first_stage: Vec<FirstStage>,
    pub proportionality: ProportionalityTest,
    pub exclusion: ExclusionTest,
    /// Per replication: proportionality and exclusion statistics.
    pub draws: Option<BootstrapDraws>,
}

/// Two-sided standard normal tail probability of `t`.
pub fn normal_two_sided(t: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let n = Normal::new(0.0, 1.0).unwrap();
    2.0 * n.sf(t.abs())
}

fn regressor_column(fit: &SystemFit, name: &str) -> Result<usize> {
    fit.regressor_index(name)
        .ok_or_else(|| Error::invalid(format!("regressor {name} missing from the system")))
}

fn equation_position(equations: &[String], g: Good) -> Result<usize> {
    equations
        .iter()
        .position(|e| *e == g.share_name())
        .ok_or_else(|| Error::invalid(format!("equation {} missing from the system", g.share_name())))
}

/// `beta_a1 beta_s2 - beta_a2 beta_s1 = 0` for every good `s` other than the anchor.
pub fn proportionality_restrictions(
    equations: &[String],
    regressors: &[String],
    anchor: Good,
) -> Result<Vec<Box<dyn Restriction>>> {
    let p = regressors.len();
    let k = |name: &str| {
        regressors
            .iter()
            .position(|r| r == name)
            .ok_or_else(|| Error::invalid(format!("regressor {name} missing from the system")))
    };
    let (k1, k2) = (k(&factor_name(0))?, k(&factor_name(1))?);
    let a = equation_position(equations, anchor)?;
    let mut out: Vec<Box<dyn Restriction>> = Vec::new();
    for (s, eq) in equations.iter().enumerate() {
        if s == a {
            continue;
        }
        out.push(Box::new(ProductRestriction {
            label: format!("{}/{}", anchor.share_name(), eq),
            a: (a * p + k1, s * p + k2),
            b: (a * p + k2, s * p + k1),
        }));
    }
    Ok(out)
}

/// The retained factor's coefficient is zero in every conditional equation.
pub fn exclusion_restrictions(equations: &[String], regressors: &[String], factor: &str) -> Result<Vec<Box<dyn Restriction>>> {
    let p = regressors.len();
    let k = regressors
        .iter()
        .position(|r| r == factor)
        .ok_or_else(|| Error::invalid(format!("regressor {factor} missing from the system")))?;
    Ok(equations
        .iter()
        .enumerate()
        .map(|(j, eq)| Box::new(LinearRestriction::zero(format!("{factor}:{eq}"), j * p + k)) as Box<dyn Restriction>)
        .collect())
}

fn ratio_diagnostics(fit: &SystemFit) -> Result<Vec<RatioDiagnostic>> {
    let (z1, z2) = (factor_name(0), factor_name(1));
    regressor_column(fit, &z1)?;
    regressor_column(fit, &z2)?;
    Ok(fit
        .equations
        .iter()
        .enumerate()
        .map(|(j, eq)| {
            let beta_1 = fit.coef(j, &z1).unwrap();
            let beta_2 = fit.coef(j, &z2).unwrap();
            let se_2 = fit.se(j, &z2).unwrap();
            RatioDiagnostic {
                equation: eq.clone(),
                beta_1,
                beta_2,
                se_2,
                ratio: beta_1 / beta_2,
                near_zero: beta_2.abs() < NEAR_ZERO_SE * se_2,
            }
        })
        .collect())
}

fn wald_result(statistic: f64, values: Vec<f64>, restrictions: &[Box<dyn Restriction>]) -> WaldResult {
    WaldResult {
        statistic,
        df: restrictions.len(),
        p_asymptotic: chi2_sf(statistic, restrictions.len()),
        p_bootstrap: None,
        restriction_labels: restrictions.iter().map(|r| r.label()).collect(),
        restriction_values: values,
        replications: None,
        redraws: 0,
        draws: Vec::new(),
    }
}

fn observed_wald(fit: &SystemFit, restrictions: &[Box<dyn Restriction>]) -> Result<WaldResult> {
    let theta = fit.stacked();
    let index = involved_params(restrictions);
    let (w, values) = wald_statistic(&theta, &fit.vcov_subset(&index), &index, restrictions, None)?;
    Ok(wald_result(w, values, restrictions))
}

fn proportionality_point(fit: &SystemFit, anchor: Good) -> Result<ProportionalityTest> {
    let restrictions = proportionality_restrictions(&fit.equations, &fit.regressors, anchor)?;
    let wald = observed_wald(fit, &restrictions)?;
    let ratios = ratio_diagnostics(fit)?;
    let near_zero_warning = ratios.iter().any(|r| r.near_zero);
    if near_zero_warning {
        log::warn!("proportionality: a ln z2 coefficient is within {NEAR_ZERO_SE} standard errors of zero");
    }
    Ok(ProportionalityTest {
        anchor,
        wald,
        ratios,
        near_zero_warning,
    })
}

fn exclusion_point(fit: &SystemFit, factor: &str, first_stage: &FirstStage) -> Result<ExclusionTest> {
    let restrictions = exclusion_restrictions(&fit.equations, &fit.regressors, factor)?;
    let wald = observed_wald(fit, &restrictions)?;
    let equations = fit
        .equations
        .iter()
        .enumerate()
        .map(|(j, eq)| {
            let estimate = fit.coef(j, factor).unwrap();
            let se = fit.se(j, factor).unwrap();
            let t = estimate / se;
            EquationTest {
                equation: eq.clone(),
                estimate,
                se,
                t,
                p: normal_two_sided(t),
            }
        })
        .collect();
    let weak_instrument = first_stage.weak();
    if weak_instrument {
        log::warn!(
            "exclusion: first-stage F = {:.3} is below the weak-instrument threshold",
            first_stage.f_statistic
        );
    }
    Ok(ExclusionTest {
        factor: factor.to_string(),
        wald,
        equations,
        first_stage_f: first_stage.f_statistic,
        weak_instrument,
    })
}

/// Which statistics a replication recomputes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Which {
    Proportionality,
    Exclusion,
    Both,
}

/// Observed restriction values used to recenter the bootstrap statistics.
struct Centers {
    anchor: Good,
    proportionality: Vec<f64>,
    exclusion: Vec<f64>,
}

/// Coefficients and the cluster covariance of the restricted ones, without
/// the full covariance matrix.
fn replicate_wald(system: &SystemData, restrictions_for: impl Fn(&SystemData) -> Result<Vec<Box<dyn Restriction>>>, center: &[f64], solver: Solver, adjust: bool) -> Result<(f64, DMatrix<f64>)> {
    let ls = solve(&system.x, &system.y, solver)?;
    let restrictions = restrictions_for(system)?;
    let index = involved_params(&restrictions);
    let vcov = cluster_vcov(&system.x, &ls.residuals, &ls.bread(), &index, adjust);
    let (w, _) = wald_statistic(ls.coefficients.as_slice(), &vcov, &index, &restrictions, Some(center))?;
    Ok((w, ls.residuals))
}

/// Re-estimate everything downstream of the fixed factors on one resample.
fn replicate(data: &DemandData, rows: &ClusterRows, draw: &[usize], which: Which, centers: &Centers) -> Result<Vec<f64>> {
    let (idx, labels) = rows.expand(draw);
    let sub = data.subset(&idx, labels);
    let spec = *sub.spec();
    let solver = Solver::Gram;
    let adjust = spec.fit.small_sample_adjustment;
    let unconditional = sub.build_unconditional(false)?;
    let system = &unconditional.system;
    let mut out = Vec::with_capacity(2);
    let ls = solve(&system.x, &system.y, solver)?;
    if which != Which::Exclusion {
        let restrictions = proportionality_restrictions(&system.equations, system.x.names(), centers.anchor)?;
        let index = involved_params(&restrictions);
        let vcov = cluster_vcov(&system.x, &ls.residuals, &ls.bread(), &index, adjust);
        let (w, _) = wald_statistic(
            ls.coefficients.as_slice(),
            &vcov,
            &index,
            &restrictions,
            Some(&centers.proportionality),
        )?;
        out.push(w);
    }
    if which != Which::Proportionality {
        // The conditioning share's first stage uses the unconditional design,
        // so its residual is that equation's residual.
        let g = spec.conditioning_good;
        let residual: Vec<f64> = ls.residuals.column(g.index()).iter().copied().collect();
        let conditional = sub.conditional_from(&system.x, &sub.share(g), &residual)?;
        let factor = factor_name(spec.retained_factor());
        let (w, _) = replicate_wald(
            &conditional,
            |s| exclusion_restrictions(&s.equations, s.x.names(), &factor),
            &centers.exclusion,
            solver,
            adjust,
        )?;
        out.push(w);
    }
    Ok(out)
}

fn run_bootstrap(data: &DemandData, which: Which, centers: &Centers, config: BootstrapConfig) -> Result<BootstrapDraws> {
    let rows = ClusterRows::new(data.clusters());
    cluster_bootstrap(rows.n_clusters(), config, |draw| replicate(data, &rows, draw, which, centers))
}

fn attach(wald: &mut WaldResult, draws: &BootstrapDraws, column: usize) {
    wald.draws = draws.column(column);
    wald.p_bootstrap = Some(bootstrap_p_value(wald.statistic, &wald.draws));
    wald.replications = Some(draws.draws.len());
    wald.redraws = draws.redraws;
}

fn check_unconditional(data: &DemandData, fit: &SystemFit) -> Result<()> {
    let expected: Vec<String> = Good::ALL.iter().map(|g| g.share_name()).collect();
    if fit.equations != expected {
        return Err(Error::invalid("proportionality needs the five-equation unconditional system"));
    }
    if fit.n_obs != data.len() {
        return Err(Error::invalid("fit and data have different numbers of observations"));
    }
    Ok(())
}

/// Wald test of proportional factor effects across the five share
/// equations, with ratio diagnostics and an optional cluster-bootstrap p-value.
pub fn test_proportionality(
    data: &DemandData,
    fit: &SystemFit,
    anchor: Good,
    bootstrap: Option<BootstrapConfig>,
) -> Result<ProportionalityTest> {
    check_unconditional(data, fit)?;
    let mut test = proportionality_point(fit, anchor)?;
    if let Some(config) = bootstrap {
        let centers = Centers {
            anchor,
            proportionality: test.wald.restriction_values.clone(),
            exclusion: Vec::new(),
        };
        let draws = run_bootstrap(data, Which::Proportionality, &centers, config)?;
        attach(&mut test.wald, &draws, 0);
    }
    Ok(test)
}

/// Wald test that the retained factor drops out of the conditional system.
pub fn test_exclusion(
    data: &DemandData,
    fit: &SystemFit,
    first_stage: &FirstStage,
    bootstrap: Option<BootstrapConfig>,
) -> Result<ExclusionTest> {
    if fit.n_obs != data.len() {
        return Err(Error::invalid("fit and data have different numbers of observations"));
    }
    let factor = factor_name(data.spec().retained_factor());
    let mut test = exclusion_point(fit, &factor, first_stage)?;
    if let Some(config) = bootstrap {
        let centers = Centers {
            anchor: Good::Cm,
            proportionality: Vec::new(),
            exclusion: test.wald.restriction_values.clone(),
        };
        let draws = run_bootstrap(data, Which::Exclusion, &centers, config)?;
        attach(&mut test.wald, &draws, 0);
    }
    Ok(test)
}

/// Fit both systems and run both tests, sharing the bootstrap resamples.
pub fn run_collective_tests(data: &DemandData, anchor: Good, bootstrap: Option<BootstrapConfig>) -> Result<CollectiveTests> {
    let spec = *data.spec();
    let unconditional = data.build_unconditional(true)?;
    let u = &unconditional.system;
    let unconditional_fit = fit_system(&u.y, &u.x, &u.equations, spec.fit)?;
    let conditional = data.build_conditional(&unconditional)?;
    let c = &conditional.system;
    let conditional_fit = fit_system(&c.y, &c.x, &c.equations, spec.fit)?;
    let mut proportionality = proportionality_point(&unconditional_fit, anchor)?;
    let factor = factor_name(spec.retained_factor());
    let mut exclusion = exclusion_point(&conditional_fit, &factor, &conditional.first_stage)?;
    let draws = match bootstrap {
        Some(config) => {
            let centers = Centers {
                anchor,
                proportionality: proportionality.wald.restriction_values.clone(),
                exclusion: exclusion.wald.restriction_values.clone(),
            };
            let draws = run_bootstrap(data, Which::Both, &centers, config)?;
            attach(&mut proportionality.wald, &draws, 0);
            attach(&mut exclusion.wald, &draws, 1);
            Some(draws)
        }
        None => None,
    };
    Ok(CollectiveTests {
        unconditional: unconditional_fit,
        conditional: conditional_fit,
        first_stage: conditional.first_stage,
        income_first_stage: unconditional.income_first_stage,
        proportionality,
        exclusion,
        draws,
    })
}

/// Polynomial degree of the monotonicity check.
pub const POLYNOMIAL_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSummary {
    pub equation: String,
    /// Derivative of the fitted cubic in `ln z2` at the sample median.
    pub slope_z2_at_median: f64,
    pub increasing_in_z2: bool,
    /// Joint test of the three `ln z2` terms in this equation.
    pub z2_terms: WaldResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub degree: usize,
    /// Factor terms in row order: `ln_z1, ln_z1_sq, ln_z1_cu, ln_z2, ...`.
    pub terms: Vec<String>,
    pub median_ln_z2: f64,
    /// Polynomial coefficients and clustered standard errors per share.
    pub system: SystemSummary,
    pub shapes: Vec<ShapeSummary>,
    /// Joint test of every `ln z2` term in all five equations.
    pub z2_joint: WaldResult,
}

fn polynomial_terms(k: usize) -> [String; 3] {
    let base = factor_name(k);
    [base.clone(), format!("{base}_sq"), format!("{base}_cu")]
}

/// Cubic polynomials in both log factors for every share, with the sign of
/// the `ln z2` slope at the median.
pub fn check_monotonicity(data: &DemandData) -> Result<MonotonicityReport> {
    let system = data.build_polynomial(POLYNOMIAL_DEGREE)?;
    let fit = fit_system(&system.y, &system.x, &system.equations, data.spec().fit)?;
    if data.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    let m = median(&data.ln_z(1));
    let z2 = polynomial_terms(1);
    let mut shapes = Vec::new();
    let mut all: Vec<Box<dyn Restriction>> = Vec::new();
    for (j, eq) in fit.equations.iter().enumerate() {
        let b: Vec<f64> = z2.iter().map(|t| fit.coef(j, t).unwrap()).collect();
        let slope = b[0] + 2.0 * b[1] * m + 3.0 * b[2] * m * m;
        let rs: Vec<Box<dyn Restriction>> = z2
            .iter()
            .map(|t| {
                let i = fit.param_index(j, t).unwrap();
                Box::new(LinearRestriction::zero(format!("{t}:{eq}"), i)) as Box<dyn Restriction>
            })
            .collect();
        let z2_terms = observed_wald(&fit, &rs)?;
        all.extend(rs);
        shapes.push(ShapeSummary {
            equation: eq.clone(),
            slope_z2_at_median: slope,
            increasing_in_z2: slope > 0.0,
            z2_terms,
        });
    }
    let z2_joint = observed_wald(&fit, &all)?;
    let terms: Vec<String> = polynomial_terms(0).into_iter().chain(z2).collect();
    let mut summary = fit.summary();
    for e in &mut summary.equations {
        e.coefficients.retain(|c| terms.contains(&c.regressor));
    }
    Ok(MonotonicityReport {
        degree: POLYNOMIAL_DEGREE,
        terms,
        median_ln_z2: m,
        system: summary,
        shapes,
        z2_joint,
    })
}
