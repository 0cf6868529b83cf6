mod common;

use std::f64::consts::PI;

use projfilter::harness::{run, FilterKind, RunConfig};
use projfilter::he::{HellingerFilter, PolyExpParams};
use projfilter::l2nm::{metric_matrix, FilterRunState, L2ProjectionFilter, RingModel};
use projfilter::mixture::{MixtureParams, NormalMixtureFamily};
use projfilter::polynomial::Polynomial;
use projfilter::reference::ExactFilter;
use projfilter::scenario::{match_prior_gaussian, prior_on_grid, simulate, Scenario};

const ALPHA: f64 = -0.5;
const BETA: f64 = 1.0;

fn linear_polys() -> (Polynomial, Polynomial, Polynomial) {
    (Polynomial::new(vec![0.0, ALPHA]), Polynomial::constant(1.0), Polynomial::new(vec![0.0, BETA]))
}

fn gaussian_point(mean: f64, variance: f64) -> MixtureParams {
    MixtureParams::from_parts(&[], mean, &[], &[0.5 * variance.ln()]).unwrap()
}

/// Kalman–Bucy mean and variance ODE driven by the noiseless rate `dY/dt = βx`.
fn kalman_ode(m: f64, p: f64, x: f64, t: f64) -> (f64, f64) {
    let rhs = |m: f64, p: f64| (ALPHA * m + p * BETA * (BETA * x - BETA * m), 2.0 * ALPHA * p + 1.0 - BETA * BETA * p * p);
    let n = 1000;
    let h = t / n as f64;
    let (mut m, mut p) = (m, p);
    for _ in 0..n {
        let k1 = rhs(m, p);
        let k2 = rhs(m + 0.5 * h * k1.0, p + 0.5 * h * k1.1);
        let k3 = rhs(m + 0.5 * h * k2.0, p + 0.5 * h * k2.1);
        let k4 = rhs(m + h * k3.0, p + h * k3.1);
        m += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        p += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (m, p)
}

#[test]
fn gaussian_chart_gram_matrix_matches_quadrature() {
    // ∂p/∂μ and ∂p/∂ν for N(μ, ν), integrated independently of the ring
    for &(mu, nu) in &[(0.0, 1.0), (0.4, 0.6), (-1.0, 2.0)] {
        let pdf = |x: f64| (-(x - mu) * (x - mu) / (2.0 * nu)).exp() / (2.0 * PI * nu).sqrt();
        let d_mu = |x: f64| pdf(x) * (x - mu) / nu;
        let d_nu = |x: f64| pdf(x) * ((x - mu) * (x - mu) / (2.0 * nu * nu) - 0.5 / nu);
        let span = 20.0 * nu.sqrt();
        let q = |f: &dyn Fn(f64) -> f64| common::adaptive(&|x| f(x), mu - span, mu + span, 1e-14);
        let mm = q(&|x| d_mu(x) * d_mu(x));
        let nn = q(&|x| d_nu(x) * d_nu(x));
        let mn = q(&|x| d_mu(x) * d_nu(x));

        let h = metric_matrix(&gaussian_point(mu, nu).tangent_vectors()).unwrap();
        // (x1, s) → (μ, ν) with s = ½ ln ν
        let ds = 1.0 / (2.0 * nu);
        assert!((h[(0, 0)] - mm).abs() < 1e-12);
        assert!((h[(1, 1)] * ds * ds - nn).abs() < 1e-12);
        assert!((h[(0, 1)] * ds - mn).abs() < 1e-12);
        assert!((mm - 1.0 / (4.0 * nu * (PI * nu).sqrt())).abs() < 1e-12);
        assert!((nn - 3.0 / (32.0 * nu * nu * (PI * nu).sqrt())).abs() < 1e-12);
    }
}

#[test]
fn l2nm_heun_step_follows_kalman_ode() {
    let (f, sigma, b) = linear_polys();
    let filter = L2ProjectionFilter::new(NormalMixtureFamily { k: 1 }, RingModel::from_polynomials(&f, &sigma, &b));
    let (m0, p0, x) = (0.3, 0.8, 1.0);
    for &dt in &[1e-2, 1e-3] {
        let state = FilterRunState::new(gaussian_point(m0, p0), 0.0);
        let next = filter.heun_step(&state, dt, BETA * x * dt);
        assert!(!next.is_failed());
        let d = next.point.derive();
        let (m, p) = kalman_ode(m0, p0, x, dt);
        assert!((d.mean() - m).abs() < 5.0 * dt * dt, "dt {dt}: mean {} vs {m}", d.mean());
        assert!((d.variance() - p).abs() < 5.0 * dt * dt, "dt {dt}: variance {} vs {p}", d.variance());
    }
}

#[test]
fn l2nm_noiseless_path_tracks_kalman_ode() {
    let (f, sigma, b) = linear_polys();
    let filter = L2ProjectionFilter::new(NormalMixtureFamily { k: 1 }, RingModel::from_polynomials(&f, &sigma, &b));
    let (m0, p0, x, dt, n) = (0.0, 1.0, 1.0, 2e-3, 500);
    let mut state = FilterRunState::new(gaussian_point(m0, p0), 0.0);
    for _ in 0..n {
        state = filter.heun_step(&state, dt, BETA * x * dt);
    }
    let d = state.point.derive();
    let (m, p) = kalman_ode(m0, p0, x, dt * n as f64);
    assert!((d.mean() - m).abs() < 1e-4);
    assert!((d.variance() - p).abs() < 1e-4);
}

#[test]
fn l2nm_and_he_track_kalman_on_simulated_path() {
    let mut scenario = Scenario::builtin("linear").unwrap();
    scenario.horizon = 2.0;
    scenario.n_steps = 1000;
    let dt = scenario.dt();
    let record = simulate(&scenario);
    let kalman = common::kalman_track(ALPHA, 1.0, BETA, 0.0, 1.0, dt, &record.dy);

    let (f, sigma, b) = linear_polys();
    let l2 = L2ProjectionFilter::new(NormalMixtureFamily { k: 1 }, RingModel::from_polynomials(&f, &sigma, &b));
    let he = HellingerFilter::new(&f, &sigma, &b).unwrap();
    let mut l2_state = FilterRunState::new(gaussian_point(0.0, 1.0), 0.0);
    let mut he_params = scenario.prior.clone();
    for (n, &dy) in record.dy.iter().enumerate() {
        l2_state = l2.heun_step(&l2_state, dt, dy);
        he_params = he.he_step(&he_params, dt, dy).unwrap();
        let (km, kp) = kalman[n + 1];
        let d = l2_state.point.derive();
        assert!((d.mean() - km).abs() < 5.0 * dt && (d.variance() - kp).abs() < 5.0 * dt, "l2nm at step {n}");
        let (hm, hv) = (he_params.theta[0], he_params.theta[1]);
        let (mean, var) = (-hm / (2.0 * hv), -0.5 / hv);
        assert!((mean - km).abs() < 5.0 * dt && (var - kp).abs() < 5.0 * dt, "he at step {n}");
    }
}

#[test]
fn exact_filter_tracks_kalman() {
    let scenario = Scenario::builtin("linear").unwrap();
    let record = simulate(&scenario);
    let dt = scenario.dt();
    let kalman = common::kalman_track(ALPHA, 1.0, BETA, 0.0, 1.0, dt, &record.dy);
    let grid = scenario.geometry();
    let filter = ExactFilter::new(&scenario.model(), grid).unwrap();
    let mut g = prior_on_grid(&scenario.prior, grid).unwrap().normalized().unwrap();
    let mut worst: f64 = 0.0;
    for (n, &dy) in record.dy.iter().enumerate() {
        g = filter.exact_step(&g, dt, dy).unwrap();
        let (km, kp) = kalman[n + 1];
        worst = worst.max((g.mean() - km).abs()).max((g.variance() - kp).abs());
    }
    assert!(worst < 1e-3, "worst deviation {worst:e}");
}

#[test]
fn he_beats_ekf_on_cubic_sensor() {
    let mut scenario = Scenario::builtin("cubic").unwrap();
    scenario.horizon = 2.0;
    scenario.n_steps = 10_000;
    let mut config = RunConfig::new(scenario);
    config.filters = vec![FilterKind::He, FilterKind::Exact, FilterKind::Ekf];
    let report = run(&config).unwrap();
    let he = report.filter(FilterKind::He).unwrap();
    let ekf = report.filter(FilterKind::Ekf).unwrap();
    assert!(he.failed_at.is_none(), "{:?}", he.failure);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&he.l2) < mean(&ekf.l2), "he {} ekf {}", mean(&he.l2), mean(&ekf.l2));
}

#[test]
fn quartic_moments_match_trapezoid() {
    let p = PolyExpParams::new(vec![0.0, 0.0, 0.0, -0.25]).unwrap();
    let moments = p.moments(4).unwrap();
    // 10× finer than the 1000-point default grid, over a wider interval
    let n = 20_001;
    let (lo, hi) = (-10.0, 10.0);
    let h = (hi - lo) / (n - 1) as f64;
    let weight = |i: usize| if i == 0 || i == n - 1 { 0.5 * h } else { h };
    let xs = (0..n).map(|i| lo + i as f64 * h);
    let z: f64 = xs.clone().enumerate().map(|(i, x)| weight(i) * p.exponent(x).exp()).sum();
    assert!((moments.log_normalizer - z.ln()).abs() < 1e-7);
    for j in 1..=4 {
        let eta: f64 = xs.clone().enumerate().map(|(i, x)| weight(i) * x.powi(j as i32) * p.exponent(x).exp()).sum::<f64>() / z;
        assert!((moments.eta[j] - eta).abs() < 1e-7, "eta_{j}");
    }
}

#[test]
fn natural_gaussian_fisher_matrix() {
    let g = PolyExpParams::new(vec![0.0, -0.5]).unwrap().fisher_matrix().unwrap();
    let expected = [[1.0, 0.0], [0.0, 2.0]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((g[(i, j)] - expected[i][j]).abs() < 1e-8);
        }
    }
}

#[test]
fn cubic_prior_variance_matches_quadrature() {
    let prior = Scenario::builtin("general_cubic").unwrap().prior;
    let matched = match_prior_gaussian(&prior).unwrap();
    let density = |x: f64| prior.exponent(x).exp();
    let z = common::adaptive(&density, -12.0, 12.0, 1e-15);
    let variance = common::adaptive(&|x| x * x * density(x), -12.0, 12.0, 1e-15) / z;
    assert!(matched.mean.abs() < 1e-12);
    assert!((matched.variance - variance).abs() < 1e-6);
}
