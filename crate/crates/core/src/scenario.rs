//! Filtering problems, simulated sample paths and fitted priors.
//!
//! The signal and observation follow
//!
//! ```text
//! dX = f(X) dt + σ(X) dW,   dY = b(X) dt + dV,   Y_0 = 0
//! ```
//!
//! Paths are drawn with ChaCha8 seeded by `seed_from_u64(seed)`. Each
//! observation interval is split into ten Euler–Maruyama substeps, and every
//! substep draws two standard normals: the signal increment, then the
//! observation noise.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::he::PolyExpParams;
use crate::mixture::{MixtureDerived, MixtureParams};
use crate::numeric::{trapezoid, CompensatedSum};
use crate::polynomial::Polynomial;
use crate::reference::{EkfState, GridDensity, GridGeometry, SystemModel};

pub const SUBSTEPS: usize = 10;
pub const RNG_ALGORITHM: &str = "ChaCha8Rng::seed_from_u64, 10 Euler-Maruyama substeps, normals drawn (dW, dV) per substep";

const MIN_MEAN_GAP: f64 = 1e-3;
const FIT_STARTS: usize = 8;
const FIT_ITERATIONS: usize = 400;
/// Fits worse than this fraction of the prior's L² norm are rejected.
pub const FIT_BOUND_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub f: Polynomial,
    pub sigma: Polynomial,
    pub b: Polynomial,
    pub prior: PolyExpParams,
    pub horizon: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub x0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridGeometry>,
}

impl Scenario {
    pub const BUILTIN: [&'static str; 4] = ["linear", "quadratic", "cubic", "general_cubic"];

    pub fn builtin(name: &str) -> Result<Scenario> {
        let p = |c: &[f64]| Polynomial::new(c.to_vec());
        let (f, b, prior, x0) = match name {
            "linear" => (p(&[0.0, -0.5]), p(&[0.0, 1.0]), vec![0.0, -0.5], 1.0),
            // exp(0.25 - x² + x³ - 0.25x⁴); the constant is absorbed by normalization
            "quadratic" => (p(&[]), p(&[0.0, 0.0, 1.0]), vec![0.0, -1.0, 1.0, -0.25], 0.0),
            "cubic" => (p(&[]), p(&[0.0, 0.0, 0.0, 1.0]), vec![0.0, 0.5, 0.0, -0.25], 0.0),
            "general_cubic" => (p(&[]), p(&[0.0, -1.0, 0.0, 1.0]), vec![0.0, 0.5, 0.0, -0.25], 0.0),
            other => {
                return Err(Error::InvalidScenario(format!(
                    "unknown built-in scenario {other:?}; expected one of {:?}",
                    Scenario::BUILTIN
                )))
            }
        };
        // the cubic sensors are stiff (b² grows like x⁶) and get 5000 steps per unit time
        let n_steps = if name.ends_with("cubic") { 50_000 } else { 5000 };
        Ok(Scenario {
            name: Some(name.to_string()),
            f,
            sigma: Polynomial::constant(1.0),
            b,
            prior: PolyExpParams::new(prior)?,
            horizon: 10.0,
            n_steps,
            seed: 1,
            x0,
            grid: None,
        })
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        Scenario::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidScenario("n_steps must be at least 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidScenario("horizon must be positive".into()));
        }
        if !self.x0.is_finite() {
            return Err(Error::InvalidScenario("x0 must be finite".into()));
        }
        for (name, poly) in [("f", &self.f), ("sigma", &self.sigma), ("b", &self.b)] {
            if poly.coeffs().iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidScenario(format!("{name} has non-finite coefficients")));
            }
        }
        let geometry = self.geometry();
        geometry.validate()?;
        if geometry.xs().iter().any(|&x| !(self.sigma.eval(x) > 0.0)) {
            return Err(Error::InvalidScenario("sigma must be positive on the grid".into()));
        }
        self.prior
            .validate()
            .map_err(|e| Error::InvalidScenario(format!("prior: {e}")))
    }

    pub fn geometry(&self) -> GridGeometry {
        self.grid.unwrap_or_default()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn model(&self) -> SystemModel {
        SystemModel {
            f: self.f.clone(),
            sigma: self.sigma.clone(),
            b: self.b.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub times: Vec<f64>,
    pub dy: Vec<f64>,
    pub x_path: Vec<f64>,
}

impl ObservationRecord {
    pub fn n_steps(&self) -> usize {
        self.dy.len()
    }

    /// `Y_t` at every observation time, starting from `Y_0 = 0`.
    pub fn y_path(&self) -> Vec<f64> {
        let mut acc = CompensatedSum::default();
        let mut out = Vec::with_capacity(self.dy.len() + 1);
        out.push(0.0);
        for &d in &self.dy {
            acc.add(d);
            out.push(acc.value());
        }
        out
    }

    /// The same path observed every `factor` steps.
    pub fn coarsen(&self, factor: usize) -> Result<ObservationRecord> {
        if factor == 0 || !self.dy.len().is_multiple_of(factor) {
            return Err(Error::InvalidParameters(format!(
                "cannot coarsen {} steps by {factor}",
                self.dy.len()
            )));
        }
        let dy = self
            .dy
            .chunks(factor)
            .map(|c| {
                let mut acc = CompensatedSum::default();
                c.iter().for_each(|&d| acc.add(d));
                acc.value()
            })
            .collect();
        Ok(ObservationRecord {
            times: self.times.iter().step_by(factor).copied().collect(),
            dy,
            x_path: self.x_path.iter().step_by(factor).copied().collect(),
        })
    }
}

pub fn simulate(scenario: &Scenario) -> ObservationRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let n = scenario.n_steps;
    let dt = scenario.dt();
    let h = dt / SUBSTEPS as f64;
    let sqrt_h = h.sqrt();
    let mut x = scenario.x0;
    let mut times = Vec::with_capacity(n + 1);
    let mut x_path = Vec::with_capacity(n + 1);
    let mut dy = Vec::with_capacity(n);
    times.push(0.0);
    x_path.push(x);
    for step in 0..n {
        let mut acc = CompensatedSum::default();
        for _ in 0..SUBSTEPS {
            let dw: f64 = StandardNormal.sample(&mut rng);
            let dv: f64 = StandardNormal.sample(&mut rng);
            acc.add(scenario.b.eval(x) * h + dv * sqrt_h);
            x += scenario.f.eval(x) * h + scenario.sigma.eval(x) * dw * sqrt_h;
        }
        dy.push(acc.value());
        times.push((step + 1) as f64 * dt);
        x_path.push(x);
    }
    ObservationRecord { times, dy, x_path }
}

/// The prior as a normalized density on the grid.
pub fn prior_on_grid(prior: &PolyExpParams, geometry: GridGeometry) -> Result<GridDensity> {
    let log_z = prior.quadrature()?.log_normalizer();
    GridDensity::sample(geometry, |x| prior.pdf(x, log_z))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorFit {
    pub params: MixtureParams,
    /// Grid L² distance between the fitted mixture and the prior.
    pub distance: f64,
}

fn grid_l2(a: &[f64], b: &[f64], pitch: f64) -> f64 {
    let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
    trapezoid(&sq, pitch).sqrt()
}

/// Mixture with `k` components closest in grid L² to the prior, by
/// quasi-Newton descent with numerical gradients from eight fixed starts.
pub fn match_prior_mixture(prior: &PolyExpParams, k: usize, geometry: GridGeometry) -> Result<PriorFit> {
    if k == 0 {
        return Err(Error::InvalidParameters("k must be at least 1".into()));
    }
    let target = prior_on_grid(prior, geometry)?;
    let xs = geometry.xs();
    let pitch = geometry.pitch();
    let objective = |theta: &[f64]| -> f64 {
        let Ok(p) = MixtureParams::new(k, theta.to_vec()) else {
            return f64::INFINITY;
        };
        let d = p.derive();
        let sq: Vec<f64> = xs
            .iter()
            .zip(&target.values)
            .map(|(&x, t)| (d.pdf(x) - t).powi(2))
            .collect();
        let v = trapezoid(&sq, pitch);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let rule = prior.quadrature()?;
    let mean = rule.expect(|x| x);
    let sd = rule.expect(|x| (x - mean) * (x - mean)).sqrt();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starting_points(k, mean, sd, &target) {
        let theta = minimize(&objective, start.as_slice().to_vec());
        let value = objective(&theta);
        if best.as_ref().is_none_or(|(_, v)| value < *v) {
            best = Some((theta, value));
        }
    }
    let (mut theta, _) = best.expect("at least one start");

    // keep components apart so the metric is not singular at t = 0
    for y in theta[k..2 * k - 1].iter_mut() {
        *y = y.max(MIN_MEAN_GAP.ln());
    }
    let params = MixtureParams::new(k, theta)?;
    let d = params.derive();
    let fitted: Vec<f64> = xs.iter().map(|&x| d.pdf(x)).collect();
    let distance = grid_l2(&fitted, &target.values, pitch);
    let norm = grid_l2(&target.values, &vec![0.0; xs.len()], pitch);
    let bound = FIT_BOUND_FRACTION * norm;
    if !(distance <= bound) {
        return Err(Error::OptimizationFailed { distance, bound });
    }
    Ok(PriorFit { params, distance })
}

fn starting_points(k: usize, mean: f64, sd: f64, target: &GridDensity) -> Vec<MixtureParams> {
    let weights = vec![1.0 / k as f64; k];
    let gaussian = MixtureDerived {
        weights: vec![1.0],
        means: vec![mean],
        sds: vec![sd],
    };
    if k == 1 {
        return vec![MixtureParams::from_derived(&gaussian).expect("positive sd")];
    }
    // quantiles of the prior at the centers of k equal-mass bins
    let xs = target.xs();
    let h = target.pitch();
    let mut cdf = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cdf[i] = cdf[i - 1] + 0.5 * h * (target.values[i - 1] + target.values[i]);
    }
    let quantile = |q: f64| xs[cdf.iter().position(|&c| c >= q).unwrap_or(xs.len() - 1)];
    let quantile_means: Vec<f64> = (0..k).map(|i| quantile((i as f64 + 0.5) / k as f64)).collect();

    let spreads = [0.2, 0.5, 0.8, 1.1, 1.5, 0.0, 0.0, 0.0];
    let sd_factors = [0.9, 0.7, 0.6, 0.5, 0.4, 0.6, 0.4, 0.25];
    (0..FIT_STARTS)
        .map(|j| {
            let means: Vec<f64> = if spreads[j] > 0.0 {
                (0..k)
                    .map(|i| mean + sd * spreads[j] * (2.0 * i as f64 / (k - 1) as f64 - 1.0))
                    .collect()
            } else {
                quantile_means.clone()
            };
            let mut means = means;
            for i in 1..k {
                means[i] = means[i].max(means[i - 1] + MIN_MEAN_GAP);
            }
            MixtureParams::from_derived(&MixtureDerived {
                weights: weights.clone(),
                means,
                sds: vec![sd * sd_factors[j]; k],
            })
            .expect("valid start")
        })
        .collect()
}

fn numerical_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// BFGS with backtracking line search.
fn minimize<F: Fn(&[f64]) -> f64>(f: &F, x0: Vec<f64>) -> Vec<f64> {
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let mut fx = f(x.as_slice());
    let mut g = numerical_gradient(f, x.as_slice());
    let mut inv_h = DMatrix::<f64>::identity(n, n);
    for _ in 0..FIT_ITERATIONS {
        if g.norm() < 1e-12 {
            break;
        }
        let mut dir = -(&inv_h * &g);
        if dir.dot(&g) >= 0.0 {
            inv_h = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial = &x + step * &dir;
            let ft = f(trial.as_slice());
            if ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        let g_new = numerical_gradient(f, x_new.as_slice());
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let improvement = fx - f_new;
        x = x_new;
        g = g_new;
        fx = f_new;
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - rho * &s * y.transpose();
            let right = &eye - rho * &y * s.transpose();
            inv_h = &left * &inv_h * &right + rho * &s * s.transpose();
        }
        if improvement <= 1e-15 * fx.abs().max(1e-300) {
            break;
        }
    }
    x.data.into()
}

/// Mean and variance of the prior by quadrature.
pub fn match_prior_gaussian(prior: &PolyExpParams) -> Result<EkfState> {
    let rule = prior.quadrature()?;
    let mean = rule.expect(|x| x);
    let variance = rule.expect(|x| (x - mean) * (x - mean));
    Ok(EkfState { mean, variance })
}
