use collective::estimation::{bootstrap_p_value, fit_system, DesignMatrix, FitOptions};
use collective::inequality::{kde, riceb, Bandwidth};
use collective::panel::{load_panel, write_panel, ColumnMap};
use collective::psychometrics::{female_fraction, rescale};
use collective::sim::{generate, solve_p1, Preferences, SimScenario};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn prefs() -> impl Strategy<Value = Preferences> {
    (0.05..1.0f64, 0.05..1.0f64, 0.05..1.0f64).prop_map(|(alpha, beta, gamma)| Preferences { alpha, beta, gamma })
}

proptest! {
    #[test]
    fn allocation_exhausts_the_budget(
        m in prefs(),
        f in prefs(),
        wm in 2.0..60.0f64,
        wf in 2.0..60.0f64,
        y in 100.0..10_000.0f64,
        mu in 0.01..0.99f64,
    ) {
        let a = solve_p1(&m, &f, wm, wf, y, mu).unwrap();
        let spent: f64 = a.expenditures(wm, wf).iter().sum();
        prop_assert!((spent - y).abs() <= 1e-9 * y);
        // Weighted marginal utilities of private consumption coincide.
        let (um, uf) = (m.alpha / a.c_m, mu * f.alpha / a.c_f);
        prop_assert!((um - uf).abs() <= 1e-9 * um);
    }

    #[test]
    fn fractions_are_complementary(a in 1.0..100.0f64, b in 1.0..100.0f64) {
        let r = female_fraction(a, b);
        prop_assert!(r > 0.0 && r < 1.0);
        prop_assert!((r + female_fraction(b, a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rescaled_scores_stay_on_the_scale(raw in -50.0..50.0f64, lo in -10.0..0.0f64, width in 0.1..20.0f64) {
        let s = rescale(raw, (lo, lo + width)).unwrap();
        prop_assert!((1.0..=100.0).contains(&s));
    }

    #[test]
    fn bootstrap_p_values_are_proper(observed in 0.0..20.0f64, draws in proptest::collection::vec(0.0..20.0f64, 1..300)) {
        let p = bootstrap_p_value(observed, &draws);
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert!(p >= 1.0 / (draws.len() + 1) as f64);
    }

    #[test]
    fn densities_integrate_to_one(values in proptest::collection::vec(-5.0..5.0f64, 5..200)) {
        prop_assume!(values.iter().any(|v| (v - values[0]).abs() > 1e-3));
        let d = kde(&values, Bandwidth::Silverman).unwrap();
        prop_assert!((d.integral() - 1.0).abs() < 2e-3);
        prop_assert!(d.density.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn riceb_is_linear_in_consumption(
        c in 0.0..1000.0f64,
        w in 1.0..50.0f64,
        l in 0.0..100.0f64,
        public in 0.0..2000.0f64,
        y in 500.0..8000.0f64,
        extra in 0.0..500.0f64,
    ) {
        let base = riceb(c, w, l, public, y).unwrap();
        let more = riceb(c + extra, w, l, public, y).unwrap();
        prop_assert!((more - base - extra / y).abs() < 1e-12);
    }

    #[test]
    fn residuals_are_orthogonal_to_the_design(seed in 0u64..1000, n in 20usize..80) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 3, |_, c| if c == 0 { 1.0 } else { rng.gen_range(-2.0..2.0) });
        let y = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let names = vec!["const".to_string(), "a".to_string(), "b".to_string()];
        let design = DesignMatrix::new(names, x.clone(), (0..n).map(|i| i / 2).collect()).unwrap();
        let fit = fit_system(&y, &design, &["y1".to_string(), "y2".to_string()], FitOptions::default()).unwrap();
        let score = x.transpose() * &fit.residuals;
        prop_assert!(score.amax() < 1e-10);
        prop_assert!(fit.vcov_cluster.clone().symmetric_part().relative_eq(&fit.vcov_cluster, 1e-12, 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn written_panels_read_back_unchanged(seed in 0u64..10_000) {
        let out = generate(&SimScenario::default(), 60, seed).unwrap();
        let obs = out.observations();
        let mut buf = Vec::new();
        write_panel(&mut buf, &obs).unwrap();
        let back = load_panel(buf.as_slice(), &ColumnMap::default()).unwrap();
        prop_assert!(back.rejects.is_empty());
        prop_assert_eq!(back.accepted, obs);
    }
}
