//! Scale scoring, internal consistency and imputation across waves.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{HouseholdObservation, Sex, Trait, Wave};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitScore {
    pub trait_: Trait,
    pub value: f64,
    pub imputed: bool,
}

/// Mean of item responses after mapping reverse-coded items `r -> lo + hi - r`.
pub fn score_scale(trait_: Trait, items: &[f64], reverse_coded: &[usize], bounds: (f64, f64)) -> Result<TraitScore> {
    let (lo, hi) = bounds;
    if items.is_empty() {
        return Err(Error::invalid("scale needs at least one item"));
    }
    if let Some(&bad) = reverse_coded.iter().find(|&&i| i >= items.len()) {
        return Err(Error::invalid(format!("reverse-coded index {bad} out of range")));
    }
    let reversed: BTreeSet<usize> = reverse_coded.iter().copied().collect();
    let mut sum = 0.0;
    for (i, &r) in items.iter().enumerate() {
        if !(lo..=hi).contains(&r) {
            return Err(Error::invalid(format!("item {i} response {r} outside {lo}-{hi}")));
        }
        sum += if reversed.contains(&i) { lo + hi - r } else { r };
    }
    Ok(TraitScore {
        trait_,
        value: sum / items.len() as f64,
        imputed: false,
    })
}

/// Cronbach's alpha of an `n x k` response matrix.
pub fn cronbach_alpha(items: &DMatrix<f64>) -> Result<f64> {
    let (n, k) = items.shape();
    if k < 2 || n < 3 {
        return Err(Error::invalid("cronbach alpha needs k >= 2 items and n >= 3 rows"));
    }
    let item_var: f64 = (0..k)
        .map(|j| stats::variance(items.column(j).as_slice()).unwrap_or(0.0))
        .sum();
    let totals: Vec<f64> = (0..n).map(|i| items.row(i).sum()).collect();
    let total_var = stats::variance(&totals).unwrap_or(0.0);
    if total_var <= 0.0 {
        return Err(Error::Numerical("zero variance of scale totals".into()));
    }
    let k = k as f64;
    Ok(k / (k - 1.0) * (1.0 - item_var / total_var))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationMode {
    #[default]
    Mean,
    Median,
}

/// Fill the missing waves of one person's trait history from the observed ones.
pub fn impute_missing(
    trait_: Trait,
    history: &BTreeMap<Wave, Option<f64>>,
    mode: ImputationMode,
) -> Result<BTreeMap<Wave, TraitScore>> {
    let observed: Vec<f64> = history.values().flatten().copied().collect();
    if observed.is_empty() {
        return Err(Error::Input(format!("no observed waves for {trait_}")));
    }
    let fill = match mode {
        ImputationMode::Mean => stats::mean(&observed),
        ImputationMode::Median => stats::median(&observed),
    };
    Ok(history
        .iter()
        .map(|(&w, v)| {
            let score = match v {
                Some(x) => TraitScore { trait_, value: *x, imputed: false },
                None => TraitScore { trait_, value: fill, imputed: true },
            };
            (w, score)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputedSample {
    pub observations: Vec<HouseholdObservation>,
    /// Households dropped because some spouse never answered some scale.
    pub dropped_households: Vec<String>,
    pub imputed_cells: usize,
}

/// Apply [`impute_missing`] to every person-trait history in a pooled sample.
pub fn impute_sample(observations: Vec<HouseholdObservation>, mode: ImputationMode) -> ImputedSample {
    let mut histories: BTreeMap<(String, Sex, Trait), BTreeMap<Wave, Option<f64>>> = BTreeMap::new();
    for o in &observations {
        for sex in [Sex::Male, Sex::Female] {
            for t in Trait::ALL {
                histories
                    .entry((o.household_id.clone(), sex, t))
                    .or_default()
                    .insert(o.wave, o.traits(sex).get(t));
            }
        }
    }
    let mut filled = BTreeMap::new();
    let mut dropped = BTreeSet::new();
    for ((hh, sex, t), history) in &histories {
        match impute_missing(*t, history, mode) {
            Ok(scores) => {
                filled.insert((hh.clone(), *sex, *t), scores);
            }
            Err(_) => {
                log::info!("household {hh}: no observed {t} score for spouse {}, couple excluded", sex.suffix());
                dropped.insert(hh.clone());
            }
        }
    }
    let mut imputed_cells = 0;
    let observations = observations
        .into_iter()
        .filter(|o| !dropped.contains(&o.household_id))
        .map(|mut o| {
            for sex in [Sex::Male, Sex::Female] {
                for t in Trait::ALL {
                    let score = filled[&(o.household_id.clone(), sex, t)][&o.wave];
                    imputed_cells += score.imputed as usize;
                    o.traits_mut(sex).set(t, Some(score.value));
                }
            }
            o
        })
        .collect();
    ImputedSample {
        observations,
        dropped_households: dropped.into_iter().collect(),
        imputed_cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn scale_scores() {
        let t = Trait::Openness;
        assert_eq!(score_scale(t, &[3.0, 3.0, 3.0], &[], (1.0, 5.0)).unwrap().value, 3.0);
        assert_eq!(score_scale(t, &[1.0, 5.0], &[1], (1.0, 5.0)).unwrap().value, 1.0);
        let se = score_scale(Trait::SelfEsteem, &[7.0; 10], &[], (1.0, 7.0)).unwrap();
        assert_eq!(se.value, 7.0);
        assert!(score_scale(t, &[6.0], &[], (1.0, 5.0)).is_err());
    }

    #[test]
    fn alpha_perfectly_correlated_items() {
        let m = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 5.0, 5.0]);
        assert!((cronbach_alpha(&m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_zero_variance_errors() {
        let m = DMatrix::from_element(5, 3, 2.0);
        assert!(cronbach_alpha(&m).is_err());
    }

    #[test]
    fn alpha_independent_items_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let m = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let a: f64 = cronbach_alpha(&m).unwrap();
        assert!(a.abs() < 0.02, "alpha = {a}");
    }

    #[test]
    fn alpha_matches_closed_form_for_equicorrelated_items() {
        // one common factor with loading sqrt(rho) gives inter-item correlation rho
        let (k, rho) = (8usize, 0.45f64);
        let oracle = k as f64 * rho / (1.0 + (k as f64 - 1.0) * rho);
        assert!((oracle - 0.867).abs() < 5e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 50_000;
        let mut m = DMatrix::zeros(n, k);
        for i in 0..n {
            let f: f64 = StandardNormal.sample(&mut rng);
            for j in 0..k {
                let e: f64 = StandardNormal.sample(&mut rng);
                m[(i, j)] = rho.sqrt() * f + (1.0 - rho).sqrt() * e;
            }
        }
        let a = cronbach_alpha(&m).unwrap();
        assert!(a > 0.7);
        assert!((a - oracle).abs() < 0.01, "alpha {a} vs {oracle}");
    }

    #[test]
    fn impute_mean_median_and_single() {
        let t = Trait::Neuroticism;
        let h: BTreeMap<Wave, Option<f64>> = [(2009, Some(3.0)), (2010, None), (2012, Some(4.0))].into();
        let out = impute_missing(t, &h, ImputationMode::Mean).unwrap();
        assert_eq!(out[&2010].value, 3.5);
        assert!(out[&2010].imputed);
        assert!(!out[&2009].imputed);
        assert_eq!(out[&2009].value, 3.0);

        let h: BTreeMap<Wave, Option<f64>> = [(2009, None), (2010, Some(2.8)), (2012, None)].into();
        let out = impute_missing(t, &h, ImputationMode::Mean).unwrap();
        assert!(out.values().all(|s| s.value == 2.8));

        let h: BTreeMap<Wave, Option<f64>> =
            [(1, Some(2.0)), (2, Some(2.0)), (3, Some(5.0)), (4, None)].into();
        assert_eq!(impute_missing(t, &h, ImputationMode::Median).unwrap()[&4].value, 2.0);

        let h: BTreeMap<Wave, Option<f64>> = [(1, None)].into();
        assert!(impute_missing(t, &h, ImputationMode::Mean).is_err());
    }

    #[test]
    fn sample_imputation_drops_unobserved_couples() {
        use crate::panel::tests::sample_obs;
        let a1 = sample_obs("a", 2009);
        let mut a2 = sample_obs("a", 2010);
        a2.traits_m.set(Trait::Openness, None);
        let mut b = sample_obs("b", 2009);
        b.traits_f.set(Trait::SelfEsteem, None);
        let out = impute_sample(vec![a1.clone(), a2, b], ImputationMode::Mean);
        assert_eq!(out.dropped_households, vec!["b".to_string()]);
        assert_eq!(out.observations.len(), 2);
        assert_eq!(out.imputed_cells, 1);
        assert_eq!(out.observations[1].traits_m.get(Trait::Openness), a1.traits_m.get(Trait::Openness));
        // observed values untouched
        assert_eq!(out.observations[0], a1);
    }
}
