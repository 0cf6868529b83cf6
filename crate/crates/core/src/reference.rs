//! Reference filters: a finite-difference solver of the Kushner–Stratonovich
//! equation on a uniform grid, and the extended Kalman filter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::trapezoid;
use crate::polynomial::Polynomial;

/// Cells at each end of the grid that must stay (almost) empty.
const EDGE_CELLS: usize = 5;
const EDGE_MASS: f64 = 1e-3;
const MIN_VARIANCE: f64 = 1e-12;

/// Uniform grid `x_min, x_min + h, ..., x_max` with `n_points` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl Default for GridGeometry {
    fn default() -> Self {
        GridGeometry {
            x_min: -6.0,
            x_max: 6.0,
            n_points: 1000,
        }
    }
}

impl GridGeometry {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        let g = GridGeometry { x_min, x_max, n_points };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_min < self.x_max) {
            return Err(Error::InvalidScenario(format!(
                "grid bounds [{}, {}] are not an interval",
                self.x_min, self.x_max
            )));
        }
        if self.n_points < 3 * EDGE_CELLS {
            return Err(Error::InvalidScenario(format!("grid needs at least {} points", 3 * EDGE_CELLS)));
        }
        Ok(())
    }

    pub fn pitch(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.pitch()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Same interval with `factor` times as many cells.
    pub fn refine(&self, factor: usize) -> GridGeometry {
        GridGeometry {
            n_points: (self.n_points - 1) * factor + 1,
            ..*self
        }
    }
}

/// Density samples on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.n_points {
            return Err(Error::GridMismatch(format!(
                "{} values for {} grid points",
                values.len(),
                geometry.n_points
            )));
        }
        Ok(GridDensity {
            x_min: geometry.x_min,
            x_max: geometry.x_max,
            n_points: geometry.n_points,
            values,
        })
    }

    /// Samples `pdf` on the grid without renormalizing.
    pub fn sample<F: Fn(f64) -> f64>(geometry: GridGeometry, pdf: F) -> Result<Self> {
        let values = geometry.xs().into_iter().map(pdf).collect();
        GridDensity::new(geometry, values)
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            x_min: self.x_min,
            x_max: self.x_max,
            n_points: self.n_points,
        }
    }

    pub fn pitch(&self) -> f64 {
        self.geometry().pitch()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.geometry().xs()
    }

    pub fn mass(&self) -> f64 {
        trapezoid(&self.values, self.pitch())
    }

    pub fn normalize(&mut self) -> Result<()> {
        let mass = self.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::NonFinite("grid density mass"));
        }
        for v in &mut self.values {
            *v /= mass;
        }
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    fn moment<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let geometry = self.geometry();
        let weighted: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v * f(geometry.x(i)))
            .collect();
        trapezoid(&weighted, self.pitch()) / self.mass()
    }

    pub fn mean(&self) -> f64 {
        self.moment(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.moment(|x| (x - m) * (x - m))
    }

    pub fn check_same_grid(&self, other: &GridDensity) -> Result<()> {
        if self.n_points != other.n_points || self.x_min != other.x_min || self.x_max != other.x_max {
            return Err(Error::GridMismatch(format!(
                "[{}, {}]/{} vs [{}, {}]/{}",
                self.x_min, self.x_max, self.n_points, other.x_min, other.x_max, other.n_points
            )));
        }
        Ok(())
    }

    /// Probability mass within `EDGE_CELLS` cells of either end.
    pub fn edge_mass(&self) -> f64 {
        let h = self.pitch();
        let n = self.n_points;
        let left = trapezoid(&self.values[..=EDGE_CELLS], h);
        let right = trapezoid(&self.values[n - 1 - EDGE_CELLS..], h);
        left.max(right) / self.mass()
    }
}

/// Signal and sensor coefficients shared by the reference filters.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub f: Polynomial,
    pub sigma: Polynomial,
    pub b: Polynomial,
}

/// Grid solver for the conditional density: one implicit Euler step of the
/// Fokker–Planck equation, then a pointwise likelihood update.
#[derive(Debug, Clone)]
pub struct ExactFilter {
    geometry: GridGeometry,
    f: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl ExactFilter {
    pub fn new(model: &SystemModel, geometry: GridGeometry) -> Result<Self> {
        geometry.validate()?;
        let xs = geometry.xs();
        let a: Vec<f64> = xs.iter().map(|&x| model.sigma.eval(x).powi(2)).collect();
        if a.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidScenario("sigma must be nonzero on the grid".into()));
        }
        Ok(ExactFilter {
            geometry,
            f: xs.iter().map(|&x| model.f.eval(x)).collect(),
            a,
            b: xs.iter().map(|&x| model.b.eval(x)).collect(),
        })
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    fn predict(&self, p: &[f64], dt: f64) -> Vec<f64> {
        let n = p.len();
        let h = self.geometry.pitch();
        let (f, a) = (&self.f, &self.a);
        // (I - Δ𝓛*) p' = p on interior nodes, p' = 0 on the boundary
        let mut lower = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = p.to_vec();
        rhs[0] = 0.0;
        rhs[n - 1] = 0.0;
        for i in 1..n - 1 {
            lower[i] = -dt * (f[i - 1] / (2.0 * h) + 0.5 * a[i - 1] / (h * h));
            diag[i] = 1.0 + dt * a[i] / (h * h);
            upper[i] = -dt * (-f[i + 1] / (2.0 * h) + 0.5 * a[i + 1] / (h * h));
        }
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
        rhs
    }

    pub fn exact_step(&self, g: &GridDensity, dt: f64, dy: f64) -> Result<GridDensity> {
        if g.geometry() != self.geometry {
            return Err(Error::GridMismatch("density and filter grids differ".into()));
        }
        let predicted = self.predict(&g.values, dt);
        let log_lik: Vec<f64> = self.b.iter().map(|b| b * dy - 0.5 * b * b * dt).collect();
        let top = log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let values: Vec<f64> = predicted
            .iter()
            .zip(&log_lik)
            .map(|(p, l)| {
                debug_assert!(*p >= -1e-12, "negative density {p}");
                p.max(0.0) * (l - top).exp()
            })
            .collect();
        let next = GridDensity::new(self.geometry, values)?.normalized()?;
        let mass = next.edge_mass();
        if mass > EDGE_MASS {
            return Err(Error::GridOverflow { mass });
        }
        Ok(next)
    }
}

/// Thomas algorithm; `rhs` is overwritten with the solution.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i - 1];
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EkfState {
    pub mean: f64,
    pub variance: f64,
}

/// Euler-discretized continuous-time extended Kalman filter.
pub fn ekf_step(state: EkfState, dt: f64, dy: f64, model: &SystemModel) -> EkfState {
    let m = state.mean;
    let p = state.variance;
    let b = model.b.eval(m);
    let db = model.b.derivative().eval(m);
    let f = model.f.eval(m);
    let df = model.f.derivative().eval(m);
    let s = model.sigma.eval(m);
    let mean = m + f * dt + p * db * (dy - b * dt);
    let variance = p + (2.0 * df * p + s * s - p * p * db * db) * dt;
    EkfState {
        mean,
        variance: variance.max(MIN_VARIANCE),
    }
}
