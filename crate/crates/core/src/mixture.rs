//! Normal-mixture family with an unconstrained parameterization.
//!
//! A point of the `k`-component family is a vector of `3k - 1` reals laid out as
//! `(ξ_1..ξ_{k-1}, x_1, y_2..y_k, s_1..s_k)`:
//!
//! * weights by stick breaking, `λ_i = logistic(ξ_i)·(1 - λ_1 - ... - λ_{i-1})`,
//!   with the last weight taking the remainder;
//! * means `x_i = x_{i-1} + e^{y_i}`, so they are strictly increasing;
//! * standard deviations `σ_i = e^{s_i}`.
//!
//! Every vector in `ℝ^{3k-1}` is a valid point.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss_ring::{GaussTerm, RingFunction, Sign};
use crate::numeric::{log_sigmoid, logit, sigmoid};

/// A parameterized family of densities whose points can be stepped by the
/// projection filter.
pub trait Manifold {
    type Point: Clone;

    fn dimension(&self) -> usize;

    fn density(&self, point: &Self::Point) -> RingFunction;

    /// `∂p/∂θ_i` for every coordinate, in coordinate order.
    fn tangent_vectors(&self, point: &Self::Point) -> Vec<RingFunction>;

    fn update_point(&self, point: &Self::Point, delta: &[f64]) -> Result<Self::Point>;

    /// Called once at the end of each time step.
    fn finalize_point(&self, point: Self::Point) -> Result<Self::Point>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    k: usize,
    values: Vec<f64>,
}

/// Weights, means and standard deviations of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDerived {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl MixtureDerived {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (m, s))| w * (s * s + (m - mean) * (m - mean)))
            .sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (m, s))| {
                let z = (x - m) / s;
                w * (-0.5 * z * z).exp() / (s * (2.0 * PI).sqrt())
            })
            .sum()
    }
}

impl MixtureParams {
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameters("mixture needs at least one component".into()));
        }
        if values.len() != 3 * k - 1 {
            return Err(Error::InvalidParameters(format!(
                "{k}-component mixture needs {} parameters, got {}",
                3 * k - 1,
                values.len()
            )));
        }
        Ok(MixtureParams { k, values })
    }

    pub fn from_parts(xi: &[f64], x1: f64, y: &[f64], s: &[f64]) -> Result<Self> {
        let k = s.len();
        if k == 0 || xi.len() + 1 != k || y.len() + 1 != k {
            return Err(Error::InvalidParameters("inconsistent mixture part lengths".into()));
        }
        let mut values = Vec::with_capacity(3 * k - 1);
        values.extend_from_slice(xi);
        values.push(x1);
        values.extend_from_slice(y);
        values.extend_from_slice(s);
        MixtureParams::new(k, values)
    }

    /// Inverse of [`MixtureParams::derive`]. Components are sorted by mean first.
    pub fn from_derived(derived: &MixtureDerived) -> Result<Self> {
        let k = derived.k();
        if k == 0 || derived.means.len() != k || derived.sds.len() != k {
            return Err(Error::InvalidParameters("inconsistent mixture lengths".into()));
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| derived.means[i].total_cmp(&derived.means[j]));
        let weights: Vec<f64> = order.iter().map(|&i| derived.weights[i]).collect();
        let means: Vec<f64> = order.iter().map(|&i| derived.means[i]).collect();
        if weights.iter().any(|&w| !(w > 0.0)) || derived.sds.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameters("weights and sds must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        let mut xi = Vec::with_capacity(k - 1);
        let mut remaining = 1.0;
        for &w in &weights[..k - 1] {
            let frac = (w / total / remaining).min(1.0 - f64::EPSILON);
            xi.push(logit(frac));
            remaining -= w / total;
        }
        let mut y = Vec::with_capacity(k - 1);
        for pair in means.windows(2) {
            let gap = pair[1] - pair[0];
            if !(gap > 0.0) {
                return Err(Error::InvalidParameters("component means must be distinct".into()));
            }
            y.push(gap.ln());
        }
        let s: Vec<f64> = order.iter().map(|&i| derived.sds[i].ln()).collect();
        MixtureParams::from_parts(&xi, means[0], &y, &s)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn xi(&self) -> &[f64] {
        &self.values[..self.k - 1]
    }

    pub fn x1(&self) -> f64 {
        self.values[self.k - 1]
    }

    pub fn y(&self) -> &[f64] {
        &self.values[self.k..2 * self.k - 1]
    }

    pub fn s(&self) -> &[f64] {
        &self.values[2 * self.k - 1..]
    }

    fn xi_index(&self, i: usize) -> usize {
        i
    }

    fn x1_index(&self) -> usize {
        self.k - 1
    }

    /// Index of `y_{i+1}` (0-based gap `i` between means `i` and `i+1`).
    fn y_index(&self, i: usize) -> usize {
        self.k + i
    }

    fn s_index(&self, i: usize) -> usize {
        2 * self.k - 1 + i
    }

    /// `ln λ_i` for every component, computed without forming the weights first.
    pub fn log_weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k);
        let mut log_remaining = 0.0;
        for &xi in self.xi() {
            out.push(log_remaining + log_sigmoid(xi));
            log_remaining += log_sigmoid(-xi);
        }
        out.push(log_remaining);
        out
    }

    pub fn derive(&self) -> MixtureDerived {
        let weights = self.log_weights().into_iter().map(f64::exp).collect();
        let mut means = Vec::with_capacity(self.k);
        let mut m = self.x1();
        means.push(m);
        for &y in self.y() {
            m += y.exp();
            means.push(m);
        }
        let sds = self.s().iter().map(|s| s.exp()).collect();
        MixtureDerived { weights, means, sds }
    }

    /// Component `i` weighted by its mixture weight, as one ring term.
    fn weighted_component(&self, log_weight: f64, mean: f64, sd: f64) -> GaussTerm {
        let var = sd * sd;
        GaussTerm::new(
            Sign::Plus,
            0,
            -0.5 / var,
            mean / var,
            log_weight - 0.5 * mean * mean / var - sd.ln() - 0.5 * (2.0 * PI).ln(),
        )
    }

    pub fn density(&self) -> RingFunction {
        let derived = self.derive();
        let log_w = self.log_weights();
        RingFunction::from_terms(
            (0..self.k).map(|i| self.weighted_component(log_w[i], derived.means[i], derived.sds[i])),
        )
    }

    /// `∂p/∂θ_i` for each coordinate, by the chain rule through the derived quantities.
    pub fn tangent_vectors(&self) -> Vec<RingFunction> {
        let k = self.k;
        let derived = self.derive();
        let log_w = self.log_weights();
        let comps: Vec<RingFunction> = (0..k)
            .map(|i| RingFunction::from_terms([self.weighted_component(log_w[i], derived.means[i], derived.sds[i])]))
            .collect();

        // λ_i ∂φ_i/∂μ_i = λ_i φ_i (x - μ)/σ²
        let d_mean: Vec<RingFunction> = (0..k)
            .map(|i| {
                let var = derived.sds[i] * derived.sds[i];
                let lin = RingFunction::polynomial(&[-derived.means[i] / var, 1.0 / var]);
                comps[i].multiply(&lin)
            })
            .collect();
        // λ_i ∂φ_i/∂s_i = λ_i φ_i ((x - μ)²/σ² - 1)
        let d_logsd: Vec<RingFunction> = (0..k)
            .map(|i| {
                let var = derived.sds[i] * derived.sds[i];
                let mu = derived.means[i];
                let quad = RingFunction::polynomial(&[mu * mu / var - 1.0, -2.0 * mu / var, 1.0 / var]);
                comps[i].multiply(&quad)
            })
            .collect();

        let mut out = vec![RingFunction::zero(); self.dimension()];
        // ∂ ln λ_i/∂ξ_j is 1 - logistic(ξ_j) for i = j, -logistic(ξ_j) for i > j, zero otherwise.
        for j in 0..k - 1 {
            let xi = self.xi()[j];
            let mut v = comps[j].multiply_scalar(sigmoid(-xi));
            let tail = comps[j + 1..]
                .iter()
                .fold(RingFunction::zero(), |acc, c| acc.add(c));
            v = v.add(&tail.multiply_scalar(-sigmoid(xi)));
            out[self.xi_index(j)] = v;
        }
        out[self.x1_index()] = d_mean.iter().fold(RingFunction::zero(), |acc, d| acc.add(d));
        // μ_i depends on y_l for every l ≤ i
        for gap in 0..k - 1 {
            let scale = self.y()[gap].exp();
            let sum = d_mean[gap + 1..]
                .iter()
                .fold(RingFunction::zero(), |acc, d| acc.add(d));
            out[self.y_index(gap)] = sum.multiply_scalar(scale);
        }
        for (i, d) in d_logsd.into_iter().enumerate() {
            out[self.s_index(i)] = d;
        }
        out
    }

    pub fn update_point(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.values.len() {
            return Err(Error::InvalidParameters(format!(
                "update of length {} for a {}-dimensional point",
                delta.len(),
                self.values.len()
            )));
        }
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("mixture parameter update"));
        }
        Ok(MixtureParams {
            k: self.k,
            values: self.values.iter().zip(delta).map(|(v, d)| v + d).collect(),
        })
    }

    /// Validation hook run at the end of every step. Weights sum to one by
    /// construction, so there is nothing to renormalize.
    pub fn finalize_point(self) -> Result<Self> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixture parameters"));
        }
        Ok(self)
    }
}

/// The `k`-component normal-mixture family as a [`Manifold`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalMixtureFamily {
    pub k: usize,
}

impl Manifold for NormalMixtureFamily {
    type Point = MixtureParams;

    fn dimension(&self) -> usize {
        3 * self.k - 1
    }

    fn density(&self, point: &MixtureParams) -> RingFunction {
        point.density()
    }

    fn tangent_vectors(&self, point: &MixtureParams) -> Vec<RingFunction> {
        point.tangent_vectors()
    }

    fn update_point(&self, point: &MixtureParams, delta: &[f64]) -> Result<MixtureParams> {
        point.update_point(delta)
    }

    fn finalize_point(&self, point: MixtureParams) -> Result<MixtureParams> {
        point.finalize_point()
    }
}
