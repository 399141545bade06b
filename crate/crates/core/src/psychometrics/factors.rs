//! Per-couple distribution factors, female personality fractions and
//! marriage-market personality ratios.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Education, HouseholdObservation, Sex, Trait};
use crate::psychometrics::pca::{fit_pca_components, project_and_scale, PcaModel, N_TRAITS};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSet {
    /// `ln(PC_k^f / PC_k^m)` for the two retained components.
    pub log_ratio: [f64; 2],
    /// Scaled component levels in `[1, 100]`.
    pub pc_m: [f64; 2],
    pub pc_f: [f64; 2],
    /// `r_p = p^f / (p^f + p^m)` per trait, in [`Trait::ALL`] order.
    pub fractions: [f64; N_TRAITS],
    /// Marriage-market ratios relative to the husband.
    pub ratios_m: [f64; N_TRAITS],
    /// Marriage-market ratios relative to the wife.
    pub ratios_f: [f64; N_TRAITS],
}

impl FactorSet {
    pub fn z1(&self) -> f64 {
        self.log_ratio[0]
    }

    pub fn z2(&self) -> f64 {
        self.log_ratio[1]
    }

    pub fn fraction(&self, t: Trait) -> f64 {
        self.fractions[t.index()]
    }
}

/// `r_p = f / (f + m)`.
pub fn female_fraction(f: f64, m: f64) -> f64 {
    f / (f + m)
}

pub fn build_factors(
    pc_m: [f64; 2],
    pc_f: [f64; 2],
    traits_m: &[f64; N_TRAITS],
    traits_f: &[f64; N_TRAITS],
    ratios: &[(f64, f64); N_TRAITS],
) -> FactorSet {
    FactorSet {
        log_ratio: [pc_f[0].ln() - pc_m[0].ln(), pc_f[1].ln() - pc_m[1].ln()],
        pc_m,
        pc_f,
        fractions: std::array::from_fn(|t| female_fraction(traits_f[t], traits_m[t])),
        ratios_m: ratios.map(|r| r.0),
        ratios_f: ratios.map(|r| r.1),
    }
}

/// How "comparable" spouses are defined when counting the marriage market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBands {
    /// Ages within this many years of the focal spouse.
    pub age_window: u32,
    /// Number of equal-frequency score bins per trait.
    pub score_bins: usize,
}

impl Default for RatioBands {
    fn default() -> Self {
        RatioBands {
            age_window: 5,
            score_bins: 5,
        }
    }
}

struct Person {
    age: u32,
    educ: Education,
    bins: [usize; N_TRAITS],
}

/// Per record and trait: `(ratio_m, ratio_f)`.
///
/// `ratio_m = (1 + #comparable husbands) / (1 + #comparable wives)`, where a
/// comparable individual shares the husband's score bin and education level
/// and is within the age window of him; `ratio_f` is the same construction
/// around the wife with the roles of the sexes swapped. Records of the focal
/// household itself are not counted.
pub fn personality_ratios(sample: &[HouseholdObservation], bands: RatioBands) -> Result<Vec<[(f64, f64); N_TRAITS]>> {
    if bands.score_bins == 0 {
        return Err(Error::invalid("score_bins must be positive"));
    }
    let mut cutpoints: Vec<Vec<f64>> = Vec::with_capacity(N_TRAITS);
    for t in Trait::ALL {
        let mut all = Vec::with_capacity(2 * sample.len());
        for o in sample {
            for sex in [Sex::Male, Sex::Female] {
                all.push(o.traits(sex).get(t).ok_or_else(|| {
                    Error::invalid(format!("household {}: missing {t} score; impute first", o.household_id))
                })?);
            }
        }
        let sorted = stats::sorted(&all);
        cutpoints.push(
            (1..bands.score_bins)
                .map(|q| stats::quantile_sorted(&sorted, q as f64 / bands.score_bins as f64))
                .collect(),
        );
    }
    let bin = |t: usize, v: f64| cutpoints[t].iter().filter(|&&c| v > c).count();
    let person = |o: &HouseholdObservation, sex: Sex| Person {
        age: o.age(sex),
        educ: o.educ(sex),
        bins: std::array::from_fn(|t| bin(t, o.traits(sex).get(Trait::ALL[t]).unwrap_or(f64::NAN))),
    };
    let husbands: Vec<Person> = sample.iter().map(|o| person(o, Sex::Male)).collect();
    let wives: Vec<Person> = sample.iter().map(|o| person(o, Sex::Female)).collect();

    // (trait, educ, bin) -> sorted ages
    type Index = HashMap<(usize, Education, usize), Vec<u32>>;
    let build_index = |people: &[Person]| {
        let mut idx: Index = HashMap::new();
        for p in people {
            for t in 0..N_TRAITS {
                idx.entry((t, p.educ, p.bins[t])).or_default().push(p.age);
            }
        }
        for ages in idx.values_mut() {
            ages.sort_unstable();
        }
        idx
    };
    let idx_m = build_index(&husbands);
    let idx_f = build_index(&wives);
    let window = bands.age_window;
    let count = |idx: &Index, t: usize, focal: &Person| -> usize {
        idx.get(&(t, focal.educ, focal.bins[t])).map_or(0, |ages| {
            let lo = focal.age.saturating_sub(window);
            let hi = focal.age + window;
            ages.partition_point(|&a| a <= hi) - ages.partition_point(|&a| a < lo)
        })
    };
    let matches = |other: &Person, t: usize, focal: &Person| {
        other.educ == focal.educ && other.bins[t] == focal.bins[t] && other.age.abs_diff(focal.age) <= window
    };

    let mut by_household: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, o) in sample.iter().enumerate() {
        by_household.entry(o.household_id.as_str()).or_default().push(i);
    }

    let mut out = Vec::with_capacity(sample.len());
    for (i, o) in sample.iter().enumerate() {
        let own = &by_household[o.household_id.as_str()];
        let mut row = [(0.0, 0.0); N_TRAITS];
        for (t, cell) in row.iter_mut().enumerate() {
            let own_count = |people: &[Person], focal: &Person| own.iter().filter(|&&j| matches(&people[j], t, focal)).count();
            let h = &husbands[i];
            let hm = count(&idx_m, t, h) - own_count(&husbands, h);
            let hf = count(&idx_f, t, h) - own_count(&wives, h);
            let w = &wives[i];
            let wf = count(&idx_f, t, w) - own_count(&wives, w);
            let wm = count(&idx_m, t, w) - own_count(&husbands, w);
            *cell = ((1 + hm) as f64 / (1 + hf) as f64, (1 + wf) as f64 / (1 + wm) as f64);
        }
        out.push(row);
    }
    Ok(out)
}

/// Trait matrix with one row per person: all husbands first, then all wives.
pub fn pooled_trait_matrix(sample: &[HouseholdObservation]) -> Result<DMatrix<f64>> {
    let n = sample.len();
    let mut m = DMatrix::zeros(2 * n, N_TRAITS);
    for (i, o) in sample.iter().enumerate() {
        for (k, sex) in [Sex::Male, Sex::Female].into_iter().enumerate() {
            for t in Trait::ALL {
                m[(k * n + i, t.index())] = o.traits(sex).get(t).ok_or_else(|| {
                    Error::invalid(format!("household {}: missing {t} score; impute first", o.household_id))
                })?;
            }
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorConstruction {
    pub pca: PcaModel,
    pub factors: Vec<FactorSet>,
}

/// Fit the PCA on the pooled sample and build every couple's factor set.
pub fn construct_factors(sample: &[HouseholdObservation], n_components: usize, bands: RatioBands) -> Result<FactorConstruction> {
    if n_components < 2 {
        return Err(Error::invalid("distribution factors need at least two components"));
    }
    let traits = pooled_trait_matrix(sample)?;
    let pca = fit_pca_components(&traits, n_components)?;
    let scaled = project_and_scale(&pca, &traits)?;
    let ratios = personality_ratios(sample, bands)?;
    let n = sample.len();
    let factors = sample
        .iter()
        .enumerate()
        .map(|(i, o)| {
            build_factors(
                [scaled[(i, 0)], scaled[(i, 1)]],
                [scaled[(n + i, 0)], scaled[(n + i, 1)]],
                &o.traits_m.values(),
                &o.traits_f.values(),
                &ratios[i],
            )
        })
        .collect();
    Ok(FactorConstruction { pca, factors })
}
