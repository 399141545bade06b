//! Synthetic couples from the closed-form solution of the weighted-sum
//! household program under log utilities.

mod generate;
mod verify;

pub use generate::{generate, write_truth, SimHousehold, SimOutput, MAX_ATTEMPTS_PER_HOUSEHOLD, MAX_REJECTION_RATE};
pub use verify::{demands_at, verify_proportionality_numeric, EvaluationPoint, RatioTable};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Trait, Wave};

/// Weights of private consumption, leisure and public consumption in
/// `u = alpha ln c + beta ln l + gamma ln C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preferences {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Preferences {
    pub fn total(&self) -> f64 {
        self.alpha + self.beta + self.gamma
    }

    fn validate(&self, who: &str) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().all(|&v| v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("{who} preference parameters must be positive")))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// `mu = logistic(index)`, clipped to `[MU_MIN, MU_MAX]`.
    #[default]
    Logistic,
    /// The wife's resource share `mu A_f / (A_m + mu A_f)` equals the index,
    /// which makes every budget share exactly linear in the index.
    LinearResourceShare,
}

pub const MU_MIN: f64 = 0.01;
pub const MU_MAX: f64 = 0.99;

/// Pareto weight on the wife's utility as a function of
/// `[1, ln z1, ln z2, ln w_m, ln w_f, ln y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoWeight {
    #[serde(default)]
    pub link: Link,
    pub eta: [f64; 6],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Factors act only through the Pareto weight.
    #[default]
    None,
    /// The wife's leisure weight becomes `beta_f exp(magnitude ln z_k)`.
    PreferenceShift { factor: usize, magnitude: f64 },
    /// Constant Pareto weight (from `eta[0]` alone); `z1` scales both
    /// spouses' public-good weight and `z2` both leisure weights.
    Unitary { magnitude: f64 },
}

/// Covariate distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    /// Intercept of the log wage at age 45 with low education, per spouse.
    pub ln_wage_base: [f64; 2],
    /// Log-wage premia for middle and high education.
    pub educ_premium: [f64; 2],
    /// Linear and quadratic log-wage age profile around 45.
    pub age_profile: [f64; 2],
    pub ln_wage_sd: f64,
    pub nonlabor_mean: f64,
    pub nonlabor_sd: f64,
    /// Probabilities of low, middle and high education.
    pub educ_probs: [f64; 3],
    pub married_prob: f64,
    pub max_children: u32,
    /// Husband's age at the first wave is uniform on this range.
    pub age_range: [u32; 2],
    /// Within-block trait correlations of the two personality clusters.
    pub trait_block_corr: [f64; 2],
    /// Trait score sd as a fraction of the scale width.
    pub trait_sd_fraction: f64,
    /// Log-normal shape of the latent trait draws; 0 keeps them normal.
    #[serde(default = "default_trait_skew")]
    pub trait_skew: f64,
}

impl Default for Covariates {
    fn default() -> Self {
        Covariates {
            ln_wage_base: [2.55, 2.40],
            educ_premium: [0.15, 0.35],
            age_profile: [0.01, -0.0005],
            ln_wage_sd: 0.2,
            nonlabor_mean: 0.0,
            nonlabor_sd: 150.0,
            educ_probs: [0.3, 0.4, 0.3],
            married_prob: 0.8,
            max_children: 3,
            age_range: [25, 60],
            trait_block_corr: [0.6, 0.5],
            trait_sd_fraction: 0.15,
            trait_skew: default_trait_skew(),
        }
    }
}

fn default_trait_skew() -> f64 {
    0.5
}

/// Correlation of the seven measures: extraversion, self-esteem and
/// cognitive engagement form one cluster, conscientiousness and neuroticism
/// another, and the rest are uncorrelated.
pub fn trait_correlation(block_corr: [f64; 2]) -> DMatrix<f64> {
    let block_a = [Trait::Extraversion, Trait::SelfEsteem, Trait::CognitiveEngagement];
    let block_b = [Trait::Conscientiousness, Trait::Neuroticism];
    DMatrix::from_fn(7, 7, |i, j| {
        let (ti, tj) = (Trait::ALL[i], Trait::ALL[j]);
        if i == j {
            1.0
        } else if block_a.contains(&ti) && block_a.contains(&tj) {
            block_corr[0]
        } else if block_b.contains(&ti) && block_b.contains(&tj) {
            block_corr[1]
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub husband: Preferences,
    pub wife: Preferences,
    pub pareto_weight: ParetoWeight,
    #[serde(default)]
    pub covariates: Covariates,
    /// Sd of the additive error on each budget share.
    pub noise_sd: f64,
    #[serde(default)]
    pub violation: Violation,
    pub waves: Vec<Wave>,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            husband: Preferences {
                alpha: 0.40,
                beta: 0.30,
                gamma: 0.30,
            },
            wife: Preferences {
                alpha: 0.40,
                beta: 0.20,
                gamma: 0.40,
            },
            pareto_weight: ParetoWeight {
                link: Link::Logistic,
                eta: [0.3, 1.0, 1.0, 0.0, 0.0, 0.0],
            },
            covariates: Covariates::default(),
            noise_sd: 0.02,
            violation: Violation::None,
            waves: vec![2009],
        }
    }
}

/// Household allocation at given prices and full income.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub c_m: f64,
    pub c_f: f64,
    pub l_m: f64,
    pub l_f: f64,
    pub public: f64,
}

impl Allocation {
    /// Expenditures in the order cm, cf, lm, lf, C.
    pub fn expenditures(&self, wage_m: f64, wage_f: f64) -> [f64; 5] {
        [self.c_m, self.c_f, wage_m * self.l_m, wage_f * self.l_f, self.public]
    }
}

/// Closed-form maximizer of `u_m + mu u_f` subject to
/// `c_m + c_f + C + w_m l_m + w_f l_f = y`.
pub fn solve_p1(m: &Preferences, f: &Preferences, wage_m: f64, wage_f: f64, y: f64, mu: f64) -> Result<Allocation> {
    m.validate("husband")?;
    f.validate("wife")?;
    if !(y > 0.0) {
        return Err(Error::NonpositiveIncome);
    }
    if !(wage_m > 0.0 && wage_f > 0.0) {
        return Err(Error::invalid("wages must be positive"));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid("Pareto weight must be positive"));
    }
    let s = m.total() + mu * f.total();
    let kappa = s / y;
    Ok(Allocation {
        c_m: m.alpha / kappa,
        c_f: mu * f.alpha / kappa,
        l_m: m.beta / (kappa * wage_m),
        l_f: mu * f.beta / (kappa * wage_f),
        public: (m.gamma + mu * f.gamma) / kappa,
    })
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        self.husband.validate("husband")?;
        self.wife.validate("wife")?;
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be nonnegative".into()));
        }
        if self.waves.is_empty() {
            return Err(Error::Config("at least one wave required".into()));
        }
        if let Violation::PreferenceShift { factor, .. } = self.violation {
            if factor > 1 {
                return Err(Error::Config("preference shift factor must be 0 or 1".into()));
            }
        }
        let c = &self.covariates;
        if c.age_range[0] < crate::panel::MIN_AGE
            || c.age_range[1] + (self.waves.iter().max().unwrap() - self.waves.iter().min().unwrap()) as u32
                > crate::panel::MAX_AGE
            || c.age_range[0] > c.age_range[1]
        {
            return Err(Error::Config("age range leaves the 25-65 window over the waves".into()));
        }
        if (c.educ_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 || c.educ_probs.iter().any(|&p| p < 0.0) {
            return Err(Error::Config("education probabilities must sum to one".into()));
        }
        if trait_correlation(c.trait_block_corr).cholesky().is_none() {
            return Err(Error::Config("trait correlation is not positive definite".into()));
        }
        Ok(())
    }

    /// Effective preferences at the given log factors.
    pub fn preferences(&self, ln_z: [f64; 2]) -> (Preferences, Preferences) {
        let (mut m, mut f) = (self.husband, self.wife);
        match self.violation {
            Violation::None => {}
            Violation::PreferenceShift { factor, magnitude } => {
                f.beta *= (magnitude * ln_z[factor]).exp();
            }
            Violation::Unitary { magnitude } => {
                let g = (magnitude * ln_z[0]).exp();
                let b = (magnitude * ln_z[1]).exp();
                m.gamma *= g;
                f.gamma *= g;
                m.beta *= b;
                f.beta *= b;
            }
        }
        (m, f)
    }

    /// Pareto weight at the given covariates; `None` when the linear link
    /// leaves `[MU_MIN, MU_MAX]`.
    pub fn mu(&self, ln_z: [f64; 2], wage_m: f64, wage_f: f64, y: f64) -> Option<f64> {
        let eta = &self.pareto_weight.eta;
        if let Violation::Unitary { .. } = self.violation {
            return Some(logistic(eta[0]).clamp(MU_MIN, MU_MAX));
        }
        let index = eta[0]
            + eta[1] * ln_z[0]
            + eta[2] * ln_z[1]
            + eta[3] * wage_m.ln()
            + eta[4] * wage_f.ln()
            + eta[5] * y.ln();
        match self.pareto_weight.link {
            Link::Logistic => Some(logistic(index).clamp(MU_MIN, MU_MAX)),
            Link::LinearResourceShare => {
                let (m, f) = self.preferences(ln_z);
                let mu = index * m.total() / ((1.0 - index) * f.total());
                (index > 0.0 && index < 1.0 && (MU_MIN..=MU_MAX).contains(&mu)).then_some(mu)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> Preferences {
        Preferences {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }

    #[test]
    fn unit_parameters_split_evenly() {
        let y = 600.0;
        let a = solve_p1(&unit(), &unit(), 1.0, 1.0, y, 1.0).unwrap();
        for v in [a.c_m, a.c_f, a.l_m, a.l_f] {
            assert!((v - y / 6.0).abs() < 1e-12);
        }
        assert!((a.public - y / 3.0).abs() < 1e-12);
        assert!((a.expenditures(1.0, 1.0).iter().sum::<f64>() - y).abs() < 1e-12);
    }

    #[test]
    fn small_weight_starves_wife() {
        let a = solve_p1(&unit(), &unit(), 10.0, 10.0, 1000.0, 1e-9).unwrap();
        assert!(a.c_f < 1e-6 && a.l_f < 1e-7);
    }

    #[test]
    fn budget_identity_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let p = |rng: &mut ChaCha8Rng| Preferences {
                alpha: rng.gen_range(0.01..2.0),
                beta: rng.gen_range(0.01..2.0),
                gamma: rng.gen_range(0.01..2.0),
            };
            let (m, f) = (p(&mut rng), p(&mut rng));
            let (wm, wf) = (rng.gen_range(1.0..50.0), rng.gen_range(1.0..50.0));
            let y = rng.gen_range(100.0..10_000.0);
            let mu = rng.gen_range(0.01..0.99);
            let a = solve_p1(&m, &f, wm, wf, y, mu).unwrap();
            let total: f64 = a.expenditures(wm, wf).iter().sum();
            assert!((total - y).abs() <= 1e-9 * y);
        }
    }

    #[test]
    fn homogeneity() {
        let s = SimScenario::default();
        let a = solve_p1(&s.husband, &s.wife, 12.0, 9.0, 2500.0, 0.6).unwrap();
        let b = solve_p1(&s.husband, &s.wife, 36.0, 27.0, 7500.0, 0.6).unwrap();
        let (ea, eb) = (a.expenditures(12.0, 9.0), b.expenditures(36.0, 27.0));
        for j in 0..5 {
            assert!((eb[j] - 3.0 * ea[j]).abs() < 1e-10 * eb[j]);
            assert!((eb[j] / 7500.0 - ea[j] / 2500.0).abs() < 1e-10);
        }
    }

    #[test]
    fn swapping_roles_mirrors_allocation() {
        let s = SimScenario::default();
        let a = solve_p1(&s.husband, &s.wife, 12.0, 9.0, 2500.0, 0.6).unwrap();
        let b = solve_p1(&s.wife, &s.husband, 9.0, 12.0, 2500.0, 1.0 / 0.6).unwrap();
        assert!((a.c_m - b.c_f).abs() < 1e-10);
        assert!((a.c_f - b.c_m).abs() < 1e-10);
        assert!((a.l_m - b.l_f).abs() < 1e-10);
        assert!((a.l_f - b.l_m).abs() < 1e-10);
        assert!((a.public - b.public).abs() < 1e-10);
    }

    #[test]
    fn invalid_inputs() {
        let bad = Preferences {
            alpha: 0.0,
            ..unit()
        };
        assert!(solve_p1(&bad, &unit(), 1.0, 1.0, 1.0, 0.5).is_err());
        assert!(matches!(
            solve_p1(&unit(), &unit(), 1.0, 1.0, -1.0, 0.5),
            Err(Error::NonpositiveIncome)
        ));
    }

    #[test]
    fn linear_link_gives_requested_resource_share() {
        let mut s = SimScenario::default();
        s.pareto_weight = ParetoWeight {
            link: Link::LinearResourceShare,
            eta: [0.3, 0.02, 0.03, 0.0, 0.0, 0.0],
        };
        let ln_z = [0.5, -0.2];
        let mu = s.mu(ln_z, 10.0, 10.0, 2000.0).unwrap();
        let rho = mu * s.wife.total() / (s.husband.total() + mu * s.wife.total());
        assert!((rho - (0.3 + 0.01 - 0.006)).abs() < 1e-12);
        s.pareto_weight.eta[0] = 0.9;
        assert!(s.mu(ln_z, 10.0, 10.0, 2000.0).is_none());
    }

    #[test]
    fn logistic_weight_is_interior() {
        let s = SimScenario::default();
        for z in [-50.0, 0.0, 50.0] {
            let mu = s.mu([z, z], 10.0, 10.0, 2000.0).unwrap();
            assert!(mu > 0.0 && mu < 1.0);
        }
    }

    #[test]
    fn default_scenario_validates() {
        SimScenario::default().validate().unwrap();
        let mut s = SimScenario::default();
        s.waves = vec![2008, 2020];
        assert!(s.validate().is_err());
    }
}
