mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use projfilter::metrics::{levy_distance, min_epsilon, min_particles, StepCdf};

const PITCH: f64 = 0.01;

fn random_cdf(rng: &mut ChaCha8Rng) -> StepCdf {
    let mut cells: Vec<i64> = (0..rng.random_range(1..=20)).map(|_| rng.random_range(-200..=200)).collect();
    cells.sort_unstable();
    cells.dedup();
    let masses: Vec<f64> = cells.iter().map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = masses.iter().sum();
    let mut acc = 0.0;
    let mut values: Vec<f64> = masses.iter().map(|m| { acc += m / total; acc.min(1.0) }).collect();
    *values.last_mut().unwrap() = 1.0;
    StepCdf::new(cells.iter().map(|&c| c as f64 * PITCH).collect(), values).unwrap()
}

fn grid_cdf(n: usize, lo: f64, hi: f64, cdf: impl Fn(f64) -> f64) -> StepCdf {
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let mut values: Vec<f64> = xs.iter().map(|&x| cdf(x).clamp(0.0, 1.0)).collect();
    *values.last_mut().unwrap() = 1.0;
    StepCdf::new(xs, values).unwrap()
}

#[test]
fn levy_axioms_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (f, g, h) = (random_cdf(&mut rng), random_cdf(&mut rng), random_cdf(&mut rng));
        assert!(levy_distance(&f, &f) <= 2.0 * PITCH);
        assert!((levy_distance(&f, &g) - levy_distance(&g, &f)).abs() <= 2.0 * PITCH);
        assert!(levy_distance(&f, &h) <= levy_distance(&f, &g) + levy_distance(&g, &h) + 2.0 * PITCH);
        assert!(levy_distance(&f, &g) <= f.kolmogorov(&g) + 1e-9);
    }
}

#[test]
fn dirac_distances_match_a_scan() {
    for &a in &[0.5, 2.0, 0.13, 0.9] {
        let (f, g) = (StepCdf::dirac(0.0), StepCdf::dirac(a));
        // smallest ε on a fine scan whose band holds at every probe point
        let holds = |eps: f64| {
            (-12_000..=12_000).map(|i| i as f64 * 2.5e-4).all(|x| {
                f.eval(x - eps) - eps <= g.eval(x) && g.eval(x) <= f.eval(x + eps) + eps
            })
        };
        let scan = (1..=1500).map(|i| i as f64 * 1e-3).find(|&e| holds(e)).unwrap();
        let d = levy_distance(&f, &g);
        assert!((d - scan).abs() <= 1.5e-3, "a = {a}: {d} vs {scan}");
        assert!((d - a.min(1.0)).abs() < 1e-9);
    }
}

#[test]
fn min_particles_is_monotone_in_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let f = random_cdf(&mut rng);
        let mut eps: Vec<f64> = (0..8).map(|_| rng.random_range(0.001..0.7)).collect();
        eps.sort_by(f64::total_cmp);
        let counts: Vec<usize> = eps.iter().map(|&e| min_particles(&f, e)).collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
    }
}

#[test]
fn min_epsilon_is_nonincreasing_and_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let f = random_cdf(&mut rng);
        let eps: Vec<f64> = (1..=8).map(|n| min_epsilon(&f, n)).collect();
        assert!(eps.windows(2).all(|w| w[0] >= w[1]));
        for (n, &e) in (1..=8).zip(&eps) {
            assert!(min_particles(&f, e) <= n);
        }
    }
}

#[test]
fn uniform_cdf_quarter_tolerance() {
    let f = grid_cdf(1001, 0.0, 1.0, |x| x);
    for &eps in &[0.25, 0.2, 0.1, 0.05] {
        assert_eq!(min_particles(&f, eps), common::min_jumps_dp(&f, eps), "eps = {eps}");
    }
    // one jump at x = 1/2 keeps the whole CDF inside the quarter band
    assert_eq!(min_particles(&f, 0.25), 1);
}

#[test]
fn standard_normal_three_particles() {
    let phi = |z: f64| 0.5 + common::adaptive(&|t: f64| (-0.5 * t * t).exp(), 0.0, z, 1e-14) / (2.0 * std::f64::consts::PI).sqrt();
    let f = grid_cdf(121, -6.0, 6.0, phi);
    let pitch = 0.1;
    let eps = min_epsilon(&f, 3);
    assert!((eps - common::min_eps_dp(&f, 3)).abs() <= pitch);
    assert!((eps - 0.1357).abs() < 1e-3, "regression value moved: {eps}");
}
