mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use projfilter::gauss_ring::{backward_operator, GaussTerm, RingFunction, Sign};
use projfilter::mixture::MixtureParams;

fn term(n: u32, a: f64, b: f64, c: f64) -> RingFunction {
    RingFunction::from_terms([GaussTerm::new(Sign::Plus, n, a, b, c)])
}

#[test]
fn quartic_moment_of_shifted_gaussian() {
    let f = term(4, -0.5, 0.2, 0.0);
    let oracle = common::adaptive(&|x| common::eval_ring(&f, x), -40.0, 40.0, 1e-15);
    let v = f.integrate().unwrap();
    assert!((v - oracle).abs() <= 1e-9 * oracle.abs());
}

#[test]
fn product_evaluates_as_product_of_evaluations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (f, g) = (term(0, -1.0, 1.0, 0.0), term(0, -1.0, -1.0, 0.0));
    let fg = f.multiply(&g);
    assert!((fg.evaluate(1.0) - f.evaluate(1.0) * g.evaluate(1.0)).abs() < 1e-15);
    for _ in 0..100 {
        let x: f64 = rng.random_range(-3.0..3.0);
        let expected = common::eval_ring(&f, x) * common::eval_ring(&g, x);
        assert!((fg.evaluate(x) - expected).abs() <= 1e-14 * expected.abs().max(1e-300));
    }
}

#[test]
fn derivative_matches_central_difference() {
    let f = term(2, -1.0, 3.0, 0.0);
    let df = f.differentiate();
    let h = 1e-5;
    for &x in &[-2.0, 0.0, 1.5] {
        let fd = (common::eval_ring(&f, x + h) - common::eval_ring(&f, x - h)) / (2.0 * h);
        let exact = df.evaluate(x);
        assert!((fd - exact).abs() <= 1e-7 * exact.abs().max(1.0), "x = {x}");
    }
}

#[test]
fn heat_generator_matches_second_difference() {
    // f = 0, σ² = 1: 𝓛v = ½ v''
    let v = term(2, -1.0, 0.0, 0.0);
    let lv = backward_operator(&RingFunction::zero(), &RingFunction::constant(1.0), &v);
    let h = 1e-4;
    for &x in &[-1.3, -0.2, 0.7, 2.0] {
        let second = (common::eval_ring(&v, x + h) - 2.0 * common::eval_ring(&v, x) + common::eval_ring(&v, x - h)) / (h * h);
        let exact = lv.evaluate(x);
        assert!((0.5 * second - exact).abs() <= 1e-6 * exact.abs().max(1e-2), "x = {x}");
    }
}

#[test]
fn mixture_density_integrates_to_one_by_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let k = rng.random_range(1..=4);
        let xi: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..0.5)).collect();
        let p = MixtureParams::from_parts(&xi, rng.random_range(-1.0..1.0), &y, &s).unwrap();
        let (total, _) = common::ring_integral(&p.density());
        assert!((total - 1.0).abs() < 1e-12);
        assert!((p.density().integrate().unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn tangent_vectors_match_central_differences_at_fine_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = 1e-6;
    for _ in 0..20 {
        let k = rng.random_range(1..=3);
        let xi: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-0.5..0.5)).collect();
        let s: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..0.3)).collect();
        let p = MixtureParams::from_parts(&xi, 0.0, &y, &s).unwrap();
        let xs: Vec<f64> = (0..50).map(|i| -4.0 + 8.0 * i as f64 / 49.0).collect();
        for (i, v) in p.tangent_vectors().iter().enumerate() {
            let at = |d: f64| {
                let mut values = p.as_slice().to_vec();
                values[i] += d;
                MixtureParams::new(k, values).unwrap().derive()
            };
            let (plus, minus) = (at(h), at(-h));
            let scale = xs.iter().fold(0.0_f64, |m, &x| m.max(v.evaluate(x).abs()));
            for &x in &xs {
                let fd = (plus.pdf(x) - minus.pdf(x)) / (2.0 * h);
                assert!((fd - v.evaluate(x)).abs() <= 1e-5 * scale);
            }
        }
    }
}
