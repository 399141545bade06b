//! Relative individual costs of equivalent bundles (RICEB), couples grouped
//! by the wife's personality fraction, kernel densities and equal-means tests.

use std::io::Write;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{substream, MIN_REPLICATIONS};
use crate::panel::{derive_vars, DerivedVars, Good, HouseholdObservation, Trait};
use crate::stats::{self, Summary};

/// Fewest couples for which percentile groups are formed.
pub const MIN_GROUPING_SAMPLE: usize = 20;
/// Groups smaller than this get a warning.
pub const MIN_GROUP_SIZE: usize = 2;
pub const KDE_GRID_POINTS: usize = 512;
pub const KDE_MIN_N: usize = 5;
/// Grid padding beyond the data range, in bandwidths.
pub const KDE_PADDING: f64 = 3.0;
/// Percentile cut-offs of the low, middle and high groups.
pub const GROUP_PERCENTILES: [f64; 4] = [0.20, 0.45, 0.55, 0.80];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RicebPair {
    pub riceb_f: f64,
    pub riceb_m: f64,
}

impl RicebPair {
    pub fn inequality(&self) -> f64 {
        self.riceb_f - self.riceb_m
    }
}

/// `(c + w l + C) / y` for one spouse.
pub fn riceb(private: f64, wage: f64, leisure: f64, public: f64, full_income: f64) -> Result<f64> {
    if !(full_income > 0.0) {
        return Err(Error::NonpositiveIncome);
    }
    Ok((private + wage * leisure + public) / full_income)
}

pub fn compute_riceb(obs: &HouseholdObservation, derived: &DerivedVars) -> Result<RicebPair> {
    let y = derived.full_income;
    let public = derived.expenditure(Good::Public);
    Ok(RicebPair {
        riceb_f: riceb(obs.cons_private_f, obs.wage_f, derived.leisure_f, public, y)?,
        riceb_m: riceb(obs.cons_private_m, obs.wage_m, derived.leisure_m, public, y)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionCutoffs {
    pub p20: f64,
    pub p45: f64,
    pub p55: f64,
    pub p80: f64,
}

/// Row indices of couples with a high (`> p80`), middle (`[p45, p55]`) or
/// low (`< p20`) female fraction for one trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionGroups {
    pub trait_: Trait,
    pub cutoffs: FractionCutoffs,
    pub high: Vec<usize>,
    pub mid: Vec<usize>,
    pub low: Vec<usize>,
    pub warnings: Vec<String>,
}

pub fn group_by_fraction(fractions: &[f64], trait_: Trait) -> Result<FractionGroups> {
    let n = fractions.len();
    if n < MIN_GROUPING_SAMPLE {
        return Err(Error::invalid(format!(
            "grouping needs at least {MIN_GROUPING_SAMPLE} couples, got {n}"
        )));
    }
    if fractions.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite female fraction"));
    }
    let sorted = stats::sorted(fractions);
    if sorted[0] == sorted[n - 1] {
        return Err(Error::DegenerateFractions);
    }
    let q = |p: f64| stats::quantile_sorted(&sorted, p);
    let [a, b, c, d] = GROUP_PERCENTILES;
    let cutoffs = FractionCutoffs {
        p20: q(a),
        p45: q(b),
        p55: q(c),
        p80: q(d),
    };
    let pick = |f: &dyn Fn(f64) -> bool| -> Vec<usize> { (0..n).filter(|&i| f(fractions[i])).collect() };
    let high = pick(&|v| v > cutoffs.p80);
    let mid = pick(&|v| v >= cutoffs.p45 && v <= cutoffs.p55);
    let low = pick(&|v| v < cutoffs.p20);
    let mut warnings = Vec::new();
    for (name, g) in [("high", &high), ("mid", &mid), ("low", &low)] {
        if g.len() < MIN_GROUP_SIZE {
            let msg = format!("{}: {name} group has {} couples", trait_.name(), g.len());
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(FractionGroups {
        trait_,
        cutoffs,
        high,
        mid,
        low,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum Bandwidth {
    /// `0.9 min(sd, IQR/1.34) n^(-1/5)`.
    #[default]
    Silverman,
    Fixed(f64),
}

pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    let sd = stats::std_dev(values).ok_or_else(|| Error::invalid("bandwidth needs at least two values"))?;
    if !(sd > 0.0) {
        return Err(Error::Numerical("kernel density of a sample with zero variance".into()));
    }
    let s = stats::sorted(values);
    let iqr = stats::quantile_sorted(&s, 0.75) - stats::quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (values.len() as f64).powf(-0.2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub bandwidth: f64,
    pub n: usize,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl Density {
    /// Trapezoid rule over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, f)| (x[1] - x[0]) * (f[0] + f[1]) / 2.0)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["grid", "density"])?;
        for (x, f) in self.grid.iter().zip(&self.density) {
            w.write_record([format!("{x:.10e}"), format!("{f:.10e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gaussian kernel density on an evenly spaced grid.
pub fn kde(values: &[f64], rule: Bandwidth) -> Result<Density> {
    let n = values.len();
    if n < KDE_MIN_N {
        return Err(Error::invalid(format!("kernel density needs at least {KDE_MIN_N} values, got {n}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in kernel density input"));
    }
    let h = match rule {
        Bandwidth::Silverman => silverman_bandwidth(values)?,
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => {
            if !(stats::variance(values).unwrap_or(0.0) > 0.0) {
                return Err(Error::Numerical("kernel density of a sample with zero variance".into()));
            }
            h
        }
        Bandwidth::Fixed(_) => return Err(Error::invalid("bandwidth must be positive")),
    };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - KDE_PADDING * h;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + KDE_PADDING * h;
    let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID_POINTS).map(|i| lo + step * i as f64).collect();
    let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&x| {
            values
                .iter()
                .map(|&v| {
                    let u = (x - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(Density {
        bandwidth: h,
        n,
        grid,
        density,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTest {
    pub t: f64,
    /// Two-sided bootstrap p-value.
    pub p: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `(mean_a - mean_b) * 100`.
    pub difference_pct: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub replications: usize,
    pub redraws: usize,
    pub method: String,
}

pub const MEAN_TEST_METHOD: &str = "recentered-null resampling of each group";

fn welch(a: &[f64], b: &[f64]) -> Option<f64> {
    let (va, vb) = (stats::variance(a)?, stats::variance(b)?);
    let se2 = va / a.len() as f64 + vb / b.len() as f64;
    if !(se2 > 0.0) {
        return None;
    }
    Some((stats::mean(a) - stats::mean(b)) / se2.sqrt())
}

fn resample<R: Rng>(xs: &[f64], rng: &mut R, out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..xs.len()).map(|_| xs[rng.gen_range(0..xs.len())]));
}

/// Welch t-test of equal means with a bootstrap p-value. Each group is
/// shifted to the pooled mean and resampled with replacement; resamples
/// with zero variance in both groups are redrawn.
pub fn bootstrap_mean_test(a: &[f64], b: &[f64], replications: usize, seed: u64) -> Result<MeanTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("each group needs at least two values"));
    }
    if replications < MIN_REPLICATIONS {
        return Err(Error::invalid(format!(
            "bootstrap needs at least {MIN_REPLICATIONS} replications, got {replications}"
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in mean test input"));
    }
    let t = welch(a, b).ok_or_else(|| Error::Numerical("zero pooled variance in mean test".into()))?;
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    let pooled = (a.iter().sum::<f64>() + b.iter().sum::<f64>()) / (a.len() + b.len()) as f64;
    let a0: Vec<f64> = a.iter().map(|v| v - ma + pooled).collect();
    let b0: Vec<f64> = b.iter().map(|v| v - mb + pooled).collect();
    let max_redraws = replications;
    let draws: Vec<Result<(f64, usize)>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(seed, rep as u64);
            let (mut ra, mut rb) = (Vec::with_capacity(a.len()), Vec::with_capacity(b.len()));
            for redraws in 0..=max_redraws {
                resample(&a0, &mut rng, &mut ra);
                resample(&b0, &mut rng, &mut rb);
                if let Some(t) = welch(&ra, &rb) {
                    return Ok((t, redraws));
                }
            }
            Err(Error::TooManyRedraws {
                redraws: max_redraws,
                replications,
            })
        })
        .collect();
    let mut exceed = 0;
    let mut redraws = 0;
    for d in draws {
        let (ts, r) = d?;
        exceed += (ts.abs() >= t.abs()) as usize;
        redraws += r;
    }
    Ok(MeanTest {
        t,
        p: (1 + exceed) as f64 / (replications + 1) as f64,
        mean_a: ma,
        mean_b: mb,
        difference_pct: (ma - mb) * 100.0,
        n_a: a.len(),
        n_b: b.len(),
        replications,
        redraws,
        method: MEAN_TEST_METHOD.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDensities {
    pub high: Option<Density>,
    pub mid: Option<Density>,
    pub low: Option<Density>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitInequality {
    pub trait_: Trait,
    pub cutoffs: FractionCutoffs,
    pub n_high: usize,
    pub n_mid: usize,
    pub n_low: usize,
    /// High against low female fraction.
    pub test: Option<MeanTest>,
    pub densities: GroupDensities,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub n: usize,
    pub riceb_f: Summary,
    pub riceb_m: Summary,
    pub inequality: Summary,
    /// Female fraction distribution per trait.
    pub fractions: Vec<(Trait, Summary)>,
    pub traits: Vec<TraitInequality>,
}

/// Per-couple RICEB pairs.
pub fn riceb_sample(observations: &[HouseholdObservation]) -> Result<Vec<RicebPair>> {
    observations
        .iter()
        .map(|o| compute_riceb(o, &derive_vars(o)?))
        .collect()
}

fn group_density(values: &[f64], idx: &[usize], label: &str, warnings: &mut Vec<String>) -> Option<Density> {
    let v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    match kde(&v, Bandwidth::Silverman) {
        Ok(d) => Some(d),
        Err(e) => {
            warnings.push(format!("{label}: density skipped ({e})"));
            None
        }
    }
}

/// RICEB summaries, fraction groups, densities and high-versus-low mean
/// tests for every trait. `fractions[i][t]` is couple `i`'s female fraction.
pub fn analyze_inequality(
    observations: &[HouseholdObservation],
    fractions: &[[f64; 7]],
    replications: usize,
    seed: u64,
) -> Result<InequalityReport> {
    if observations.len() != fractions.len() {
        return Err(Error::invalid("one fraction set per couple required"));
    }
    let pairs = riceb_sample(observations)?;
    let f: Vec<f64> = pairs.iter().map(|p| p.riceb_f).collect();
    let m: Vec<f64> = pairs.iter().map(|p| p.riceb_m).collect();
    let ineq: Vec<f64> = pairs.iter().map(RicebPair::inequality).collect();
    let summary = |v: &[f64]| Summary::of(v).ok_or_else(|| Error::invalid("empty sample"));
    let mut traits = Vec::new();
    let mut fraction_summaries = Vec::new();
    let mut seeds = substream(seed, u64::MAX);
    for t in Trait::ALL {
        let r: Vec<f64> = fractions.iter().map(|x| x[t.index()]).collect();
        fraction_summaries.push((t, summary(&r)?));
        let trait_seed = seeds.next_u64();
        let groups = group_by_fraction(&r, t)?;
        let mut warnings = groups.warnings.clone();
        let pick = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| ineq[i]).collect() };
        let test = match bootstrap_mean_test(&pick(&groups.high), &pick(&groups.low), replications, trait_seed) {
            Ok(test) => Some(test),
            Err(e) if e.kind() == crate::error::ErrorKind::Config => return Err(e),
            Err(e) => {
                warnings.push(format!("{}: mean test skipped ({e})", t.name()));
                None
            }
        };
        let densities = GroupDensities {
            high: group_density(&ineq, &groups.high, &format!("{} high", t.name()), &mut warnings),
            mid: group_density(&ineq, &groups.mid, &format!("{} mid", t.name()), &mut warnings),
            low: group_density(&ineq, &groups.low, &format!("{} low", t.name()), &mut warnings),
        };
        traits.push(TraitInequality {
            trait_: t,
            cutoffs: groups.cutoffs,
            n_high: groups.high.len(),
            n_mid: groups.mid.len(),
            n_low: groups.low.len(),
            test,
            densities,
            warnings,
        });
    }
    Ok(InequalityReport {
        n: observations.len(),
        riceb_f: summary(&f)?,
        riceb_m: summary(&m)?,
        inequality: summary(&ineq)?,
        fractions: fraction_summaries,
        traits,
    })
}
