use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::substream;
use crate::panel::{full_income, Education, HouseholdObservation, Trait, TraitScores, MIN_HOURS, TIME_ENDOWMENT};
use crate::psychometrics::{construct_factors, FactorConstruction, RatioBands};
use crate::sim::{solve_p1, trait_correlation, Allocation, SimScenario};

/// Covariate draws rejected for corners may not exceed this share of all draws.
pub const MAX_REJECTION_RATE: f64 = 0.2;
/// Draws tried for one couple-wave before the scenario is declared infeasible.
pub const MAX_ATTEMPTS_PER_HOUSEHOLD: usize = 200;
/// Noiseless leisure must stay this many noise sds below the hours floor.
const LEISURE_MARGIN_SDS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimHousehold {
    pub observation: HouseholdObservation,
    /// Noiseless allocation.
    pub allocation: Allocation,
    pub mu: f64,
    pub ln_z: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Wave-major: every household of the first wave, then the next wave.
    pub households: Vec<SimHousehold>,
    pub factors: FactorConstruction,
    pub attempts: usize,
    pub rejected: usize,
    /// Share-noise draws redrawn to keep shares positive and hours above the floor.
    pub truncated: usize,
}

impl SimOutput {
    pub fn observations(&self) -> Vec<HouseholdObservation> {
        self.households.iter().map(|h| h.observation.clone()).collect()
    }
}

struct Person {
    age: u32,
    educ: Education,
    traits: [f64; 7],
}

struct Couple {
    id: String,
    m: Person,
    f: Person,
    n_children: u32,
    married: bool,
}

fn draw_educ(rng: &mut ChaCha8Rng, probs: &[f64; 3]) -> Education {
    let u: f64 = rng.gen();
    if u < probs[0] {
        Education::Low
    } else if u < probs[0] + probs[1] {
        Education::Middle
    } else {
        Education::High
    }
}

/// Standardized log-normal transform of a standard normal draw.
fn skewed(x: f64, s: f64) -> f64 {
    if s == 0.0 {
        return x;
    }
    let m = (s * s / 2.0).exp();
    let sd = ((s * s).exp() - 1.0).sqrt() * m;
    ((s * x).exp() - m) / sd
}

fn draw_couple(i: usize, scenario: &SimScenario, chol: &nalgebra::DMatrix<f64>, rng: &mut ChaCha8Rng) -> Couple {
    let c = &scenario.covariates;
    let span = (scenario.waves.iter().max().unwrap() - scenario.waves.iter().min().unwrap()) as u32;
    let hi = c.age_range[1];
    let age_m = rng.gen_range(c.age_range[0]..=hi);
    let gap: f64 = Normal::new(-2.0, 3.0).unwrap().sample(rng);
    let age_f = ((age_m as f64 + gap).round() as i64).clamp(c.age_range[0] as i64, hi.min(65 - span) as i64) as u32;
    let mut traits = || {
        let e = DVector::from_fn(7, |_, _| StandardNormal.sample(rng));
        let x = (chol * e).map(|v| skewed(v, c.trait_skew));
        std::array::from_fn(|t| {
            let (lo, hi) = Trait::ALL[t].bounds();
            ((lo + hi) / 2.0 + c.trait_sd_fraction * (hi - lo) * x[t]).clamp(lo, hi)
        })
    };
    let (tm, tf) = (traits(), traits());
    Couple {
        id: format!("hh{i:05}"),
        m: Person {
            age: age_m,
            educ: draw_educ(rng, &c.educ_probs),
            traits: tm,
        },
        f: Person {
            age: age_f,
            educ: draw_educ(rng, &c.educ_probs),
            traits: tf,
        },
        n_children: rng.gen_range(0..=c.max_children),
        married: rng.gen_bool(c.married_prob),
    }
}

fn skeleton(c: &Couple, wave: i32, first: i32) -> HouseholdObservation {
    let dt = (wave - first) as u32;
    HouseholdObservation {
        household_id: c.id.clone(),
        wave,
        wage_m: 1.0,
        wage_f: 1.0,
        hours_m: 40.0,
        hours_f: 40.0,
        nonlabor_income: 0.0,
        cons_private_m: 0.0,
        cons_private_f: 0.0,
        cons_public: 0.0,
        household_private_consumption: None,
        age_m: c.m.age + dt,
        age_f: c.f.age + dt,
        educ_m: c.m.educ,
        educ_f: c.f.educ,
        n_children: c.n_children,
        married: c.married,
        traits_m: TraitScores::complete(c.m.traits),
        traits_f: TraitScores::complete(c.f.traits),
    }
}

struct Draw {
    household: SimHousehold,
    attempts: usize,
    truncated: usize,
}

fn ln_wage(scenario: &SimScenario, sex: usize, age: u32, educ: Education, rng: &mut ChaCha8Rng) -> f64 {
    let c = &scenario.covariates;
    let a = age as f64 - 45.0;
    let premium = match educ {
        Education::Low => 0.0,
        Education::Middle => c.educ_premium[0],
        Education::High => c.educ_premium[1],
    };
    let e: f64 = StandardNormal.sample(rng);
    c.ln_wage_base[sex] + premium + c.age_profile[0] * a + c.age_profile[1] * a * a + c.ln_wage_sd * e
}

fn draw_economics(
    scenario: &SimScenario,
    mut obs: HouseholdObservation,
    ln_z: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> Result<Draw> {
    let c = &scenario.covariates;
    let sd = scenario.noise_sd;
    let max_leisure = TIME_ENDOWMENT - MIN_HOURS;
    for attempt in 1..=MAX_ATTEMPTS_PER_HOUSEHOLD {
        let wage_m = ln_wage(scenario, 0, obs.age_m, obs.educ_m, rng).exp();
        let wage_f = ln_wage(scenario, 1, obs.age_f, obs.educ_f, rng).exp();
        let e: f64 = StandardNormal.sample(rng);
        let x = c.nonlabor_mean + c.nonlabor_sd * e;
        let y = full_income(wage_m, wage_f, x);
        if y <= 0.0 {
            continue;
        }
        let Some(mu) = scenario.mu(ln_z, wage_m, wage_f, y) else {
            continue;
        };
        let (pm, pf) = scenario.preferences(ln_z);
        let alloc = solve_p1(&pm, &pf, wage_m, wage_f, y, mu)?;
        let margin = |w: f64| LEISURE_MARGIN_SDS * sd * y / w;
        if alloc.l_m > max_leisure - margin(wage_m) || alloc.l_f > max_leisure - margin(wage_f) {
            continue;
        }
        let exp = alloc.expenditures(wage_m, wage_f);
        let mut shares = [0.0; 5];
        let mut truncated = 0;
        for j in 0..5 {
            let wage = match j {
                2 => Some(wage_m),
                3 => Some(wage_f),
                _ => None,
            };
            let base = exp[j] / y;
            let mut tries = 0;
            shares[j] = loop {
                let eps = if sd > 0.0 { sd * Distribution::<f64>::sample(&StandardNormal, rng) } else { 0.0 };
                let s = base + eps;
                let ok = s > 0.0 && wage.map_or(true, |w| s * y / w <= max_leisure);
                if ok {
                    break s;
                }
                truncated += 1;
                tries += 1;
                if tries > 1000 {
                    return Err(Error::Numerical("share noise truncation does not terminate".into()));
                }
            };
        }
        obs.wage_m = wage_m;
        obs.wage_f = wage_f;
        obs.nonlabor_income = x;
        obs.cons_private_m = shares[0] * y;
        obs.cons_private_f = shares[1] * y;
        obs.hours_m = TIME_ENDOWMENT - shares[2] * y / wage_m;
        obs.hours_f = TIME_ENDOWMENT - shares[3] * y / wage_f;
        obs.cons_public = shares[4] * y;
        return Ok(Draw {
            household: SimHousehold {
                observation: obs,
                allocation: alloc,
                mu,
                ln_z,
            },
            attempts: attempt,
            truncated,
        });
    }
    Err(Error::CornerRejection {
        rejected: MAX_ATTEMPTS_PER_HOUSEHOLD,
        attempts: MAX_ATTEMPTS_PER_HOUSEHOLD,
    })
}

/// Draw `n` couples observed in every wave of the scenario.
///
/// Personality factors are built from the simulated trait scores with the same
/// principal-component and ratio construction the estimation side uses, so
/// the Pareto weight depends on exactly the factors an analysis will see.
pub fn generate(scenario: &SimScenario, n: usize, seed: u64) -> Result<SimOutput> {
    scenario.validate()?;
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let chol = trait_correlation(scenario.covariates.trait_block_corr)
        .cholesky()
        .ok_or_else(|| Error::Config("trait correlation is not positive definite".into()))?
        .l();
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| substream(seed, i as u64)).collect();
    let couples: Vec<Couple> = rngs
        .iter_mut()
        .enumerate()
        .map(|(i, rng)| draw_couple(i, scenario, &chol, rng))
        .collect();
    let mut waves = scenario.waves.clone();
    waves.sort_unstable();
    waves.dedup();
    let first = waves[0];
    let skeletons: Vec<HouseholdObservation> = waves
        .iter()
        .flat_map(|&w| couples.iter().map(move |c| skeleton(c, w, first)))
        .collect();
    let factors = construct_factors(&skeletons, 2, RatioBands::default())?;

    let per_household: Vec<Result<Vec<Draw>>> = rngs
        .into_par_iter()
        .enumerate()
        .map(|(i, mut rng)| {
            (0..waves.len())
                .map(|w| {
                    let r = w * n + i;
                    draw_economics(scenario, skeletons[r].clone(), factors.factors[r].log_ratio, &mut rng)
                })
                .collect()
        })
        .collect();
    let mut by_household = Vec::with_capacity(n);
    for r in per_household {
        by_household.push(r?);
    }
    let (mut attempts, mut truncated) = (0, 0);
    let mut households = Vec::with_capacity(n * waves.len());
    for w in 0..waves.len() {
        for draws in &by_household {
            let d = &draws[w];
            attempts += d.attempts;
            truncated += d.truncated;
            households.push(d.household.clone());
        }
    }
    let rejected = attempts - households.len();
    if rejected as f64 > MAX_REJECTION_RATE * attempts as f64 {
        return Err(Error::CornerRejection { rejected, attempts });
    }
    if rejected > 0 {
        log::info!("simulation: {rejected} of {attempts} covariate draws rejected at corners");
    }
    Ok(SimOutput {
        households,
        factors,
        attempts,
        rejected,
        truncated,
    })
}

/// Noiseless allocations and Pareto weights alongside the generated records.
pub fn write_truth<W: Write>(sink: W, households: &[SimHousehold]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["household_id", "wave", "mu", "ln_z1", "ln_z2", "c_m", "c_f", "l_m", "l_f", "public"])?;
    for h in households {
        let a = &h.allocation;
        w.write_record([
            h.observation.household_id.clone(),
            h.observation.wave.to_string(),
            h.mu.to_string(),
            h.ln_z[0].to_string(),
            h.ln_z[1].to_string(),
            a.c_m.to_string(),
            a.c_f.to_string(),
            a.l_m.to_string(),
            a.l_f.to_string(),
            a.public.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{derive_vars, load_panel, write_panel, ColumnMap};
    use crate::sim::{Link, ParetoWeight};

    #[test]
    fn deterministic_and_valid() {
        let s = SimScenario {
            waves: vec![2009, 2010],
            ..SimScenario::default()
        };
        let a = generate(&s, 150, 11).unwrap();
        let b = generate(&s, 150, 11).unwrap();
        assert_eq!(a.households, b.households);
        let c = generate(&s, 150, 12).unwrap();
        assert_ne!(a.households, c.households);
        assert_eq!(a.households.len(), 300);
        assert!(a.households.iter().all(|h| h.observation.violations().is_empty()));
        assert!((a.rejected as f64) < 0.2 * a.attempts as f64);
        assert_eq!(a.households[0].observation.wave, 2009);
        assert_eq!(a.households[150].observation.wave, 2010);
        assert_eq!(a.households[150].observation.age_m, a.households[0].observation.age_m + 1);
    }

    #[test]
    fn round_trips_through_the_loader() {
        let out = generate(&SimScenario::default(), 100, 3).unwrap();
        let mut buf = Vec::new();
        write_panel(&mut buf, &out.observations()).unwrap();
        let loaded = load_panel(&buf[..], &ColumnMap::default()).unwrap();
        assert!(loaded.rejects.is_empty());
        assert_eq!(loaded.accepted, out.observations());
    }

    #[test]
    fn noiseless_records_carry_the_allocation() {
        let s = SimScenario {
            noise_sd: 0.0,
            ..SimScenario::default()
        };
        let out = generate(&s, 50, 4).unwrap();
        for h in &out.households {
            let o = &h.observation;
            let d = derive_vars(o).unwrap();
            let e = h.allocation.expenditures(o.wage_m, o.wage_f);
            for j in 0..5 {
                assert!((d.expenditures[j] - e[j]).abs() < 1e-9 * d.full_income);
            }
            assert!(d.unassigned.abs() < 1e-9 * d.full_income);
            assert!(h.mu > 0.0 && h.mu < 1.0);
        }
    }

    #[test]
    fn infeasible_linear_link_is_reported() {
        let s = SimScenario {
            pareto_weight: ParetoWeight {
                link: Link::LinearResourceShare,
                eta: [0.95, 0.0, 0.0, 0.0, 0.0, 0.0],
            },
            ..SimScenario::default()
        };
        assert!(matches!(generate(&s, 20, 1), Err(Error::CornerRejection { .. })));
    }

    #[test]
    fn truth_sidecar_has_one_row_per_record() {
        let out = generate(&SimScenario::default(), 30, 5).unwrap();
        let mut buf = Vec::new();
        write_truth(&mut buf, &out.households).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 31);
    }
}
