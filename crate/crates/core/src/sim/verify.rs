use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{solve_p1, SimScenario};

/// Relative agreement required between the per-good ratios.
pub const RATIO_TOLERANCE: f64 = 1e-6;
/// Relative finite-difference step.
const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPoint {
    pub ln_z: [f64; 2],
    pub wage_m: f64,
    pub wage_f: f64,
    pub y: f64,
}

/// Per-good ratios of the marginal effects of `z1` and `z2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioTable {
    /// `(dg_j/dz1) / (dg_j/dz2)` in the order cm, cf, lm, lf, C.
    pub ratios: [f64; 5],
    /// `(dmu/dz1) / (dmu/dz2)`.
    pub mu_ratio: f64,
    /// Largest relative deviation of a good's ratio from `mu_ratio`.
    pub max_deviation: f64,
    pub proportional: bool,
}

/// Expenditures on the five goods at a point.
pub fn demands_at(scenario: &SimScenario, p: &EvaluationPoint) -> Result<[f64; 5]> {
    let mu = scenario
        .mu(p.ln_z, p.wage_m, p.wage_f, p.y)
        .ok_or_else(|| Error::invalid("Pareto weight outside its admissible range at this point"))?;
    let (m, f) = scenario.preferences(p.ln_z);
    Ok(solve_p1(&m, &f, p.wage_m, p.wage_f, p.y, mu)?.expenditures(p.wage_m, p.wage_f))
}

fn shifted(p: &EvaluationPoint, k: usize, z: f64) -> EvaluationPoint {
    let mut q = *p;
    q.ln_z[k] = z.ln();
    q
}

/// Central differences with respect to the level `z_k`.
fn partials<F: Fn(&EvaluationPoint) -> Result<[f64; 5]>>(p: &EvaluationPoint, k: usize, f: F) -> Result<[f64; 5]> {
    let z = p.ln_z[k].exp();
    let h = STEP * z;
    let up = f(&shifted(p, k, z + h))?;
    let down = f(&shifted(p, k, z - h))?;
    Ok(std::array::from_fn(|j| (up[j] - down[j]) / (2.0 * h)))
}

/// Check that every good's ratio of factor effects equals the ratio of the
/// factors' effects on the Pareto weight.
pub fn verify_proportionality_numeric(scenario: &SimScenario, point: &EvaluationPoint) -> Result<RatioTable> {
    let mu_at = |q: &EvaluationPoint| -> Result<[f64; 5]> {
        let mu = scenario
            .mu(q.ln_z, q.wage_m, q.wage_f, q.y)
            .ok_or_else(|| Error::invalid("Pareto weight outside its admissible range at this point"))?;
        Ok([mu; 5])
    };
    let dmu1 = partials(point, 0, mu_at)?[0];
    let dmu2 = partials(point, 1, mu_at)?[0];
    let z2 = point.ln_z[1].exp();
    if (dmu2 * z2).abs() < 1e-10 {
        return Err(Error::UninformativePoint);
    }
    let mu_ratio = dmu1 / dmu2;
    let d1 = partials(point, 0, |q| demands_at(scenario, q))?;
    let d2 = partials(point, 1, |q| demands_at(scenario, q))?;
    let ratios: [f64; 5] = std::array::from_fn(|j| d1[j] / d2[j]);
    let scale = if mu_ratio == 0.0 { 1.0 } else { mu_ratio.abs() };
    let max_deviation = ratios
        .iter()
        .map(|r| (r - mu_ratio).abs() / scale)
        .fold(0.0, f64::max);
    Ok(RatioTable {
        ratios,
        mu_ratio,
        max_deviation,
        proportional: max_deviation <= RATIO_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Link, ParetoWeight, Violation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng) -> EvaluationPoint {
        EvaluationPoint {
            ln_z: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            wage_m: rng.gen_range(8.0..25.0),
            wage_f: rng.gen_range(6.0..20.0),
            y: rng.gen_range(1500.0..5000.0),
        }
    }

    #[test]
    fn null_scenario_ratios_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for link in [Link::Logistic, Link::LinearResourceShare] {
            let s = SimScenario {
                pareto_weight: ParetoWeight {
                    link,
                    eta: [0.3, 0.02, 0.03, 0.01, -0.01, 0.0],
                },
                ..SimScenario::default()
            };
            for _ in 0..50 {
                let t = verify_proportionality_numeric(&s, &random_point(&mut rng)).unwrap();
                assert!(t.proportional, "{t:?}");
            }
        }
    }

    #[test]
    fn preference_shift_breaks_ratios() {
        let s = SimScenario {
            violation: Violation::PreferenceShift {
                factor: 0,
                magnitude: 0.3,
            },
            ..SimScenario::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = verify_proportionality_numeric(&s, &random_point(&mut rng)).unwrap();
        assert!(t.max_deviation > 10.0 * RATIO_TOLERANCE);
    }

    #[test]
    fn irrelevant_first_factor_gives_zero_ratios() {
        let mut s = SimScenario::default();
        s.pareto_weight.eta[1] = 0.0;
        let t = verify_proportionality_numeric(&s, &random_point(&mut ChaCha8Rng::seed_from_u64(3))).unwrap();
        assert_eq!(t.mu_ratio, 0.0);
        assert!(t.ratios.iter().all(|r| r.abs() < 1e-12));
        assert!(t.proportional);
    }

    #[test]
    fn uninformative_point() {
        let mut s = SimScenario::default();
        s.pareto_weight.eta[2] = 0.0;
        let err = verify_proportionality_numeric(&s, &random_point(&mut ChaCha8Rng::seed_from_u64(4))).unwrap_err();
        assert!(matches!(err, Error::UninformativePoint));
    }

    #[test]
    fn male_private_share_falls_with_z2() {
        let s = SimScenario::default();
        let p = random_point(&mut ChaCha8Rng::seed_from_u64(5));
        let d = partials(&p, 1, |q| demands_at(&s, q)).unwrap();
        assert!(d[0] < 0.0);
        assert!(d[1] > 0.0);
    }
}
