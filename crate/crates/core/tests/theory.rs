use proptest::prelude::*;
use samesum::theory::{discrepancy_experiment, monte_carlo, p_approx, p_exact, p_mixed, BirthdayParams, Params};

/// Direct product, no logs.
fn naive_exact(n: u64, s: u64) -> f64 {
    1.0 - (0..n).map(|i| 1.0 - i as f64 / s as f64).product::<f64>()
}

#[test]
fn twenty_three_people() {
    let exact = p_exact::<f64>(23, 365);
    assert!((exact - 0.507297).abs() < 1e-6);
    assert!((p_approx::<f64>(23, 365) - exact).abs() <= 0.02);
    let mc = monte_carlo::<f64>(23, 365, 100_000, 7).unwrap();
    assert!((mc.estimate - 0.5073).abs() <= 0.01, "{mc:?}");
    assert_eq!(mc, monte_carlo::<f64>(23, 365, 100_000, 7).unwrap());
}

#[test]
fn single_precision_agrees_with_double() {
    let a = p_exact::<f32>(50, 10_000) as f64;
    assert!((a - p_exact::<f64>(50, 10_000)).abs() < 1e-5);
}

#[test]
fn mixed_expression_is_clamped_and_flagged_in_the_stated_regime() {
    let p = Params::new(128, 1 << 16, 256, (1 << 16) - 256, 0.99, 0.01).unwrap();
    let m = p_mixed(&p);
    assert!(m.raw > 1.0);
    assert!(m.out_of_range);
    assert_eq!(m.value, 1.0);
    let d = discrepancy_experiment(&p, 20_000, 3).unwrap();
    assert!(d.clean.estimate >= 0.99);
    assert!(d.collision.estimate <= 0.05);
    assert!((d.collision.estimate - d.mixed.estimate).abs() <= 0.05);
    assert_eq!(d.ordering_holds, Some(true));
}

#[test]
fn parameters_are_checked() {
    assert!(BirthdayParams::<f64>::new(10, 100, 50, 50, 0.5, 0.6).is_err());
    assert!(BirthdayParams::<f64>::new(10, 100, 80, 50, 0.5, 0.5).is_err());
    assert!(monte_carlo::<f64>(10, 100, 0, 0).is_err());
}

proptest! {
    #[test]
    fn exact_matches_the_direct_product(n in 0u64..200, s in 1u64..5000) {
        let want = if n > s { 1.0 } else { naive_exact(n, s) };
        prop_assert!((p_exact::<f64>(n, s) - want).abs() < 1e-9);
    }

    #[test]
    fn probabilities_grow_with_draws(n in 1u64..500, s in 1u64..100_000) {
        for f in [p_exact::<f64>, p_approx::<f64>] {
            let (lo, hi) = (f(n, s), f(n + 1, s));
            prop_assert!((0.0..=1.0).contains(&lo));
            prop_assert!(lo <= hi);
        }
    }
}
