//! Hellinger projection filter on the polynomial exponential family
//! `p(x) = exp(θ_1 x + ... + θ_m x^m - ψ(θ))`.
//!
//! With the sufficient statistics `x^j`, the tangent vectors are
//! `(x^j - η_j) p` and the Fisher matrix is the covariance of the statistics.
//! Projection gives
//!
//! ```text
//! g dθ = (E[𝓛 x^j] - ½ Cov(b², x^j)) dt + Cov(b, x^j) dY
//! ```
//!
//! When `b` is a polynomial of degree at most `m`, `Cov(b, x^j) = (g β)_j` for
//! the coefficient vector `β` of `b`, so the noise coefficient is constant and
//! the Itô and Stratonovich readings coincide. Expectations have no closed form
//! and are computed by quadrature.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l2nm::FilterRunState;
use crate::linalg::MetricSolver;
use crate::numeric::neumaier_sum;
use crate::polynomial::Polynomial;
use crate::quadrature::composite_rule;

const INITIAL_RADIUS: f64 = 10.0;
const RADIUS_GROWTH: f64 = 1.5;
const MAX_RADIUS: f64 = 1e4;
/// `ln(1e-16)`: relative integrand size at which the truncation radius stops growing.
const LN_EDGE: f64 = -36.841_361_487_904_734;
/// `ln(1e-18)`: relative integrand size below which the integrand is ignored.
const LN_SUPPORT: f64 = -41.446_531_673_892_82;
const SCAN_POINTS: usize = 4001;
const MAX_PANELS: usize = 4096;
const PANEL_TOLERANCE: f64 = 1e-10;

/// Natural parameters `(θ_1, ..., θ_m)` of a polynomial exponential density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyExpParams {
    pub theta: Vec<f64>,
}

/// Normalizing constant and raw moments of a density.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// `ψ(θ) = ln ∫ exp(Σ θ_i x^i) dx`
    pub log_normalizer: f64,
    /// `η_n = E[x^n]`, starting with `η_0 = 1`.
    pub eta: Vec<f64>,
}

impl PolyExpParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        let p = PolyExpParams { theta };
        p.validate()?;
        Ok(p)
    }

    /// Gaussian `N(mean, variance)` as `θ = (mean/variance, -1/(2 variance))`.
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self> {
        PolyExpParams::new(vec![mean / variance, -0.5 / variance])
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.theta.len();
        if m == 0 || m % 2 == 1 {
            return Err(Error::InvalidParameters(format!(
                "polynomial exponential degree must be even and positive, got {m}"
            )));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("natural parameters"));
        }
        let leading = self.theta[m - 1];
        if !(leading < 0.0) {
            return Err(Error::IntegrabilityLost { leading });
        }
        Ok(())
    }

    pub fn degree(&self) -> usize {
        self.theta.len()
    }

    /// `Σ θ_i x^i`, the unnormalized log-density.
    pub fn exponent(&self, x: f64) -> f64 {
        self.theta.iter().rev().fold(0.0, |acc, &t| (acc + t) * x)
    }

    pub fn quadrature(&self) -> Result<DensityRule> {
        DensityRule::new(self)
    }

    pub fn moments(&self, max_order: usize) -> Result<Moments> {
        let rule = self.quadrature()?;
        Ok(Moments {
            log_normalizer: rule.log_normalizer(),
            eta: rule.raw_moments(max_order),
        })
    }

    /// `g_ij = η_{i+j} - η_i η_j` for `i, j = 1..m`, the covariance of `x^i` and `x^j`.
    pub fn fisher_matrix(&self) -> Result<DMatrix<f64>> {
        Ok(self.quadrature()?.statistic_covariance(self.degree()))
    }

    pub fn pdf(&self, x: f64, log_normalizer: f64) -> f64 {
        (self.exponent(x) - log_normalizer).exp()
    }
}

/// Quadrature rule whose weights already include the normalized density,
/// so `E[f] = Σ w_i f(x_i)`.
#[derive(Debug, Clone)]
pub struct DensityRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    log_normalizer: f64,
}

impl DensityRule {
    pub fn new(params: &PolyExpParams) -> Result<Self> {
        params.validate()?;
        let q = |x: f64| params.exponent(x);

        // grow the window until both edges are negligible against the peak
        let mut radius = INITIAL_RADIUS;
        let (grid, values, peak) = loop {
            let step = 2.0 * radius / (SCAN_POINTS - 1) as f64;
            let grid: Vec<f64> = (0..SCAN_POINTS).map(|i| -radius + i as f64 * step).collect();
            let values: Vec<f64> = grid.iter().map(|&x| q(x)).collect();
            if values.iter().any(|v| v.is_nan()) {
                return Err(Error::QuadratureFailure("non-finite integrand".into()));
            }
            let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !peak.is_finite() {
                return Err(Error::QuadratureFailure("non-finite integrand".into()));
            }
            if values[0] - peak < LN_EDGE && values[SCAN_POINTS - 1] - peak < LN_EDGE {
                break (grid, values, peak);
            }
            radius *= RADIUS_GROWTH;
            if radius > MAX_RADIUS {
                return Err(Error::QuadratureFailure(format!(
                    "truncation interval exceeded ±{MAX_RADIUS}"
                )));
            }
        };

        let first = values.iter().position(|&v| v - peak > LN_SUPPORT).unwrap_or(0);
        let last = values.iter().rposition(|&v| v - peak > LN_SUPPORT).unwrap_or(SCAN_POINTS - 1);
        let lo = grid[first.saturating_sub(1)];
        let hi = grid[(last + 1).min(SCAN_POINTS - 1)];

        let integrate = |panels: usize| {
            let (xs, ws) = composite_rule(lo, hi, panels);
            let dens: Vec<f64> = xs
                .iter()
                .zip(&ws)
                .map(|(&x, &w)| w * (q(x) - peak).exp())
                .collect();
            let z = neumaier_sum(dens.iter().copied());
            let m1 = neumaier_sum(xs.iter().zip(&dens).map(|(x, d)| x * d)) / z;
            let m2 = neumaier_sum(xs.iter().zip(&dens).map(|(x, d)| (x - m1) * (x - m1) * d)) / z;
            (xs, dens, z, m1, m2)
        };

        let mut panels = 4;
        let mut prev = integrate(panels);
        loop {
            panels *= 2;
            let cur = integrate(panels);
            let dz = ((cur.2 - prev.2) / cur.2).abs();
            let scale = cur.4.sqrt();
            let dm1 = (cur.3 - prev.3).abs() / scale.max(1e-300);
            let dm2 = ((cur.4 - prev.4) / cur.4).abs();
            if !(cur.2 > 0.0) || !cur.2.is_finite() {
                return Err(Error::QuadratureFailure("non-finite normalizer".into()));
            }
            if dz < PANEL_TOLERANCE && dm1 < PANEL_TOLERANCE && dm2 < PANEL_TOLERANCE {
                let (xs, dens, z, _, _) = cur;
                let weights = dens.into_iter().map(|d| d / z).collect();
                return Ok(DensityRule {
                    nodes: xs,
                    weights,
                    log_normalizer: peak + z.ln(),
                });
            }
            if panels >= MAX_PANELS {
                return Err(Error::QuadratureFailure(format!(
                    "no convergence with {panels} panels"
                )));
            }
            prev = cur;
        }
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        neumaier_sum(self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)))
    }

    /// `[E[x^0], ..., E[x^max_order]]`
    pub fn raw_moments(&self, max_order: usize) -> Vec<f64> {
        let mut acc = vec![0.0; max_order + 1];
        let mut comp = vec![0.0; max_order + 1];
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let mut p = w;
            for n in 0..=max_order {
                let t = acc[n] + p;
                if acc[n].abs() >= p.abs() {
                    comp[n] += (acc[n] - t) + p;
                } else {
                    comp[n] += (p - t) + acc[n];
                }
                acc[n] = t;
                p *= x;
            }
        }
        acc.iter().zip(&comp).map(|(a, c)| a + c).collect()
    }

    /// Covariance matrix of `(x, x², ..., x^m)`, accumulated in centered form.
    pub fn statistic_covariance(&self, m: usize) -> DMatrix<f64> {
        let eta = self.raw_moments(m);
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = self.expect(|x| {
                    (x.powi(i as i32 + 1) - eta[i + 1]) * (x.powi(j as i32 + 1) - eta[j + 1])
                });
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// `Cov(f, x^j)` for `j = 1..m`.
    pub fn covariance_with_statistics<F: Fn(f64) -> f64>(&self, m: usize, f: F) -> DVector<f64> {
        let eta = self.raw_moments(m);
        let mean_f = self.expect(&f);
        let mut out = DVector::zeros(m);
        for j in 0..m {
            out[j] = self.expect(|x| (f(x) - mean_f) * (x.powi(j as i32 + 1) - eta[j + 1]));
        }
        out
    }
}

/// Drift and noise coefficients of the projected equation at one point.
#[derive(Debug, Clone)]
pub struct HeCoefficients {
    pub fisher: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub diffusion: DVector<f64>,
    pub condition: f64,
}

/// Hellinger exponential projection filter for constant `σ` and polynomial `f`, `b`.
#[derive(Debug, Clone)]
pub struct HellingerFilter {
    drift: Polynomial,
    sigma_sq: f64,
    sensor: Polynomial,
}

impl HellingerFilter {
    pub fn new(f: &Polynomial, sigma: &Polynomial, b: &Polynomial) -> Result<Self> {
        if !sigma.is_constant() {
            return Err(Error::InvalidScenario(
                "the Hellinger exponential filter needs a constant diffusion coefficient".into(),
            ));
        }
        let s = sigma.coeff(0);
        Ok(HellingerFilter {
            drift: f.clone(),
            sigma_sq: s * s,
            sensor: b.clone(),
        })
    }

    pub fn coefficients(&self, params: &PolyExpParams) -> Result<HeCoefficients> {
        let m = params.degree();
        let rule = params.quadrature()?;
        let eta = rule.raw_moments(m);
        let fisher = rule.statistic_covariance(m);

        // E[𝓛 x^j] = E[f j x^{j-1} + ½ σ² j (j-1) x^{j-2}]
        let mut drift_rhs = DVector::zeros(m);
        for j in 1..=m {
            let jf = j as f64;
            let transport = if self.drift.is_zero() {
                0.0
            } else {
                rule.expect(|x| self.drift.eval(x) * jf * x.powi(j as i32 - 1))
            };
            let diffusion = if j >= 2 {
                0.5 * self.sigma_sq * jf * (jf - 1.0) * eta[j - 2]
            } else {
                0.0
            };
            drift_rhs[j - 1] = transport + diffusion;
        }
        let b2 = |x: f64| {
            let b = self.sensor.eval(x);
            b * b
        };
        drift_rhs -= 0.5 * rule.covariance_with_statistics(m, b2);
        let diffusion_rhs = rule.covariance_with_statistics(m, |x| self.sensor.eval(x));

        let solver = MetricSolver::new(&fisher)?;
        Ok(HeCoefficients {
            drift: solver.solve(&drift_rhs)?,
            diffusion: solver.solve(&diffusion_rhs)?,
            condition: solver.condition(),
            fisher,
        })
    }

    fn apply(&self, params: &PolyExpParams, delta: impl Iterator<Item = f64>) -> Result<PolyExpParams> {
        let theta: Vec<f64> = params.theta.iter().zip(delta).map(|(t, d)| t + d).collect();
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("natural parameter update"));
        }
        let next = PolyExpParams { theta };
        next.validate()?;
        Ok(next)
    }

    /// Euler–Maruyama step.
    pub fn he_step(&self, params: &PolyExpParams, dt: f64, dy: f64) -> Result<PolyExpParams> {
        self.he_step_with_condition(params, dt, dy).map(|(p, _)| p)
    }

    /// [`HellingerFilter::he_step`], also returning the Fisher matrix condition number.
    pub fn he_step_with_condition(&self, params: &PolyExpParams, dt: f64, dy: f64) -> Result<(PolyExpParams, f64)> {
        let c = self.coefficients(params)?;
        let next = self.apply(params, c.drift.iter().zip(c.diffusion.iter()).map(|(f, g)| f * dt + g * dy))?;
        Ok((next, c.condition))
    }

    /// Stratonovich–Heun step, used to check that the scheme choice does not matter here.
    pub fn heun_step(&self, params: &PolyExpParams, dt: f64, dy: f64) -> Result<PolyExpParams> {
        let c0 = self.coefficients(params)?;
        let predicted = self.apply(params, c0.drift.iter().zip(c0.diffusion.iter()).map(|(f, g)| f * dt + g * dy))?;
        let c1 = self.coefficients(&predicted)?;
        self.apply(
            params,
            (0..params.degree()).map(|i| {
                0.5 * (c0.drift[i] + c1.drift[i]) * dt + 0.5 * (c0.diffusion[i] + c1.diffusion[i]) * dy
            }),
        )
    }

    /// Run-level step that records failures instead of returning them.
    pub fn step_state(&self, state: &FilterRunState<PolyExpParams>, dt: f64, dy: f64) -> FilterRunState<PolyExpParams> {
        if state.is_failed() {
            return state.clone();
        }
        match self.he_step_with_condition(&state.point, dt, dy) {
            Ok((point, condition)) => FilterRunState {
                point,
                t: state.t + dt,
                failed_at: None,
                condition,
                failure: None,
            },
            Err(err) => FilterRunState {
                point: state.point.clone(),
                t: state.t,
                failed_at: Some(state.t),
                condition: match err {
                    Error::SingularMetric { condition } => condition,
                    _ => state.condition,
                },
                failure: Some(err.to_string()),
            },
        }
    }
}
