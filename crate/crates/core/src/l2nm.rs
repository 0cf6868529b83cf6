//! Direct-L² projection filter.
//!
//! Projecting the Stratonovich form of the Kushner–Stratonovich equation onto
//! the tangent space `span{v_i = ∂p/∂θ_i}` with the L² inner product gives
//!
//! ```text
//! Σ_j h_ij dθ_j = (⟨p, 𝓛v_i⟩ - ⟨γ⁰(p), v_i⟩) dt + ⟨γ¹(p), v_i⟩ ∘ dY
//! ```
//!
//! with `h_ij = ⟨v_i, v_j⟩`. For normal mixtures every inner product is a
//! closed-form ring integral. The metric is never inverted; both right-hand
//! sides are solved against a single factorization.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss_ring::{backward_operator, RingFunction};
use crate::linalg::MetricSolver;
use crate::mixture::Manifold;
use crate::polynomial::Polynomial;

/// Signal drift `f`, diffusion `a = σ²` and sensor `b` as ring elements.
#[derive(Debug, Clone)]
pub struct RingModel {
    pub drift: RingFunction,
    pub diffusion_sq: RingFunction,
    pub sensor: RingFunction,
}

impl RingModel {
    pub fn from_polynomials(f: &Polynomial, sigma: &Polynomial, b: &Polynomial) -> Self {
        RingModel {
            drift: f.to_ring(),
            diffusion_sq: sigma.mul(sigma).to_ring(),
            sensor: b.to_ring(),
        }
    }
}

/// `γ⁰(p) = ½ (b² - E_p[b²]) p`
pub fn gamma0(p: &RingFunction, b: &RingFunction) -> Result<RingFunction> {
    let b2 = b.multiply(b);
    let b2p = b2.multiply(p);
    let mean = b2p.integrate()?;
    Ok(b2p.add(&p.multiply_scalar(-mean)).multiply_scalar(0.5))
}

/// `γ¹(p) = (b - E_p[b]) p`
pub fn gamma1(p: &RingFunction, b: &RingFunction) -> Result<RingFunction> {
    let bp = b.multiply(p);
    let mean = bp.integrate()?;
    Ok(bp.add(&p.multiply_scalar(-mean)))
}

/// Gram matrix `h_ij = ⟨v_i, v_j⟩`.
pub fn metric_matrix(tangents: &[RingFunction]) -> Result<DMatrix<f64>> {
    let m = tangents.len();
    let mut h = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = tangents[i].inner(&tangents[j])?;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct ProjectedCoefficients {
    pub metric: DMatrix<f64>,
    /// Coefficient of `dt`.
    pub drift: DVector<f64>,
    /// Coefficient of `∘dY`.
    pub diffusion: DVector<f64>,
    pub condition: f64,
}

/// Projected drift and diffusion at the point whose density and tangent vectors are given.
pub fn assemble_coefficients(
    density: &RingFunction,
    tangents: &[RingFunction],
    model: &RingModel,
) -> Result<ProjectedCoefficients> {
    let metric = metric_matrix(tangents)?;
    let g0 = gamma0(density, &model.sensor)?;
    let g1 = gamma1(density, &model.sensor)?;
    let m = tangents.len();
    let mut drift_rhs = DVector::zeros(m);
    let mut diffusion_rhs = DVector::zeros(m);
    for (j, v) in tangents.iter().enumerate() {
        // ⟨𝓛*p, v⟩ = ⟨p, 𝓛v⟩
        let lv = backward_operator(&model.drift, &model.diffusion_sq, v);
        let forward = density.inner(&lv)?;
        let correction = g0.inner(v)?;
        drift_rhs[j] = forward - correction;
        diffusion_rhs[j] = g1.inner(v)?;
    }
    let solver = MetricSolver::new(&metric)?;
    let drift = solver.solve(&drift_rhs)?;
    let diffusion = solver.solve(&diffusion_rhs)?;
    Ok(ProjectedCoefficients {
        metric,
        drift,
        diffusion,
        condition: solver.condition(),
    })
}

/// State of one projection-filter run.
#[derive(Debug, Clone, Serialize)]
pub struct FilterRunState<P> {
    pub point: P,
    pub t: f64,
    pub failed_at: Option<f64>,
    /// Largest metric condition number seen during the last step.
    pub condition: f64,
    pub failure: Option<String>,
}

impl<P> FilterRunState<P> {
    pub fn new(point: P, t: f64) -> Self {
        FilterRunState {
            point,
            t,
            failed_at: None,
            condition: f64::NAN,
            failure: None,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failed_at.is_some()
    }
}

/// The L² projection filter over any [`Manifold`] whose functions live in the ring.
#[derive(Debug, Clone)]
pub struct L2ProjectionFilter<M> {
    manifold: M,
    model: RingModel,
}

impl<M: Manifold> L2ProjectionFilter<M> {
    pub fn new(manifold: M, model: RingModel) -> Self {
        L2ProjectionFilter { manifold, model }
    }

    pub fn manifold(&self) -> &M {
        &self.manifold
    }

    pub fn model(&self) -> &RingModel {
        &self.model
    }

    pub fn coefficients(&self, point: &M::Point) -> Result<ProjectedCoefficients> {
        let density = self.manifold.density(point);
        let tangents = self.manifold.tangent_vectors(point);
        assemble_coefficients(&density, &tangents, &self.model)
    }

    /// One Stratonovich–Heun step: Euler predictor, then a corrector using the
    /// average of the coefficients at both ends.
    pub fn step_point(&self, point: &M::Point, dt: f64, dy: f64) -> Result<(M::Point, f64)> {
        let first = self.coefficients(point)?;
        let predictor_delta: Vec<f64> = first
            .drift
            .iter()
            .zip(first.diffusion.iter())
            .map(|(f, g)| f * dt + g * dy)
            .collect();
        let predicted = self.manifold.update_point(point, &predictor_delta)?;
        let second = self.coefficients(&predicted)?;
        let delta: Vec<f64> = (0..first.drift.len())
            .map(|i| {
                0.5 * (first.drift[i] + second.drift[i]) * dt
                    + 0.5 * (first.diffusion[i] + second.diffusion[i]) * dy
            })
            .collect();
        let next = self.manifold.update_point(point, &delta)?;
        let next = self.manifold.finalize_point(next)?;
        Ok((next, first.condition.max(second.condition)))
    }

    /// Advances the run by one observation interval. A failure at either stage
    /// leaves the point unchanged and records the time.
    pub fn heun_step(&self, state: &FilterRunState<M::Point>, dt: f64, dy: f64) -> FilterRunState<M::Point> {
        if state.is_failed() {
            return state.clone();
        }
        match self.step_point(&state.point, dt, dy) {
            Ok((point, condition)) => FilterRunState {
                point,
                t: state.t + dt,
                failed_at: None,
                condition,
                failure: None,
            },
            Err(err) => {
                let condition = match &err {
                    Error::SingularMetric { condition } => *condition,
                    _ => state.condition,
                };
                FilterRunState {
                    point: state.point.clone(),
                    t: state.t,
                    failed_at: Some(state.t),
                    condition,
                    failure: Some(err.to_string()),
                }
            }
        }
    }
}
