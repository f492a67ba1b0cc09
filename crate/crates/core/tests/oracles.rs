//! Closed-form and exact-arithmetic oracles for the numeric helpers.

use approx::assert_relative_eq;
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};

use parfed::env::{true_gradient, true_value};
use parfed::verify::{exact_abs_rademacher, majority_probability};
use parfed::{EnvSpec, ParamVector, Target};

fn choose(n: u64, k: u64) -> BigUint {
    let mut c = BigUint::one();
    for i in 0..k {
        c = c * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    c
}

/// `P(Binomial(n, a/b) > n/2)` as an exact rational, rounded once at the end.
fn exact_majority(n: u64, a: u64, b: u64) -> f64 {
    let mut num = BigUint::from(0u32);
    for k in n / 2 + 1..=n {
        num += choose(n, k)
            * BigUint::from(a).pow(k as u32)
            * BigUint::from(b - a).pow((n - k) as u32);
    }
    let den = BigUint::from(b).pow(n as u32);
    // 64 fractional bits survive the integer division
    let scaled = (num << 64u32) / den;
    scaled.to_f64().unwrap() / 2f64.powi(64)
}

#[test]
fn fair_panel_tail_at_one_hundred() {
    let exact = exact_majority(100, 1, 2);
    assert!((exact - 0.460_205_381_306_410_6).abs() < 1e-12, "{exact}");
    assert!((majority_probability(100, 0.5) - exact).abs() < 1e-12);
}

#[test]
fn biased_panel_tails() {
    for n in [1u64, 9, 25, 99, 100] {
        let exact = exact_majority(n, 3, 5);
        let got = majority_probability(n as usize, 0.6);
        assert!((got - exact).abs() < 1e-12, "n={n}: {got} vs {exact}");
    }
}

#[test]
fn rademacher_walk_mean_absolute_value() {
    // E|S_n| = n C(n-1, floor((n-1)/2)) / 2^(n-1) for a simple random walk
    for n in 1u64..=12 {
        let c = choose(n - 1, (n - 1) / 2).to_f64().unwrap();
        let expected = n as f64 * c / 2f64.powi(n as i32 - 1);
        let got = exact_abs_rademacher(&vec![1.0; n as usize]);
        assert!((got - expected).abs() < 1e-12, "n={n}: {got} vs {expected}");
    }
    // |±1 ±2 ±3| takes 6, 4, 2, 0 twice each
    assert_eq!(exact_abs_rademacher(&[1.0, 2.0, 3.0]), 3.0);
}

fn analytic(dim: usize) -> EnvSpec {
    EnvSpec::AnalyticQuadratic {
        horizon: 10,
        noise: 0.0,
        dim,
        width: 4.0,
        target: Target::Fill(0.3),
    }
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let env = analytic(6);
    let theta = ParamVector::new(vec![0.1, -0.7, 1.2, 0.4, -0.2, 0.9]).unwrap();
    let g = true_gradient(&env, &theta).unwrap();
    let h = 1e-6;
    for i in 0..6 {
        let mut e = vec![0.0; 6];
        e[i] = 1.0;
        let up = true_value(&env, &theta.add_scaled(h, &e).unwrap()).unwrap();
        let down = true_value(&env, &theta.add_scaled(-h, &e).unwrap()).unwrap();
        assert_relative_eq!(g.as_slice()[i], (up - down) / (2.0 * h), epsilon = 1e-6);
    }
}

#[test]
fn analytic_curvature_within_smoothness_constant() {
    let env = analytic(4);
    let lip = env.smoothness().unwrap();
    assert_eq!(lip, 2.0 * 10.0 / 4.0);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for r in [0.0, 0.5, 1.0, 1.5, 3.0] {
        for j in 0..16 {
            let angle = j as f64 * 0.4;
            let u = [angle.cos(), angle.sin(), 0.0, 0.0];
            let dir = [0.6, 0.0, 0.8, 0.0];
            let theta = ParamVector::new((0..4).map(|i| 0.3 + r * dir[i]).collect()).unwrap();
            let f = |s: f64| true_value(&env, &theta.add_scaled(s, &u).unwrap()).unwrap();
            let second = (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
            worst = worst.max(second.abs());
        }
    }
    assert!(
        worst <= lip * (1.0 + 1e-4),
        "curvature {worst} exceeds {lip}"
    );
    // the bound is attained at the optimum along every direction
    assert!(worst >= 0.99 * lip, "{worst}");
}
