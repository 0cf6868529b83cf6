//! Distances between filter outputs: L², Hellinger and Lévy, plus the best
//! Lévy accuracy reachable by a fixed number of particles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::trapezoid;
use crate::reference::GridDensity;

const BISECTION_DEPTH: usize = 40;

pub fn l2_residual(exact: &GridDensity, approx: &GridDensity) -> Result<f64> {
    exact.check_same_grid(approx)?;
    let sq: Vec<f64> = exact
        .values
        .iter()
        .zip(&approx.values)
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    Ok(trapezoid(&sq, exact.pitch()).sqrt())
}

pub fn hellinger_residual(exact: &GridDensity, approx: &GridDensity) -> Result<f64> {
    exact.check_same_grid(approx)?;
    let sq: Vec<f64> = exact
        .values
        .iter()
        .zip(&approx.values)
        .map(|(a, b)| (a.max(0.0).sqrt() - b.max(0.0).sqrt()).powi(2))
        .collect();
    Ok(trapezoid(&sq, exact.pitch()).max(0.0).sqrt())
}

/// Right-continuous step distribution function: `F(x) = values[i]` on
/// `[xs[i], xs[i+1])`, zero left of `xs[0]` and `values[n-1]` from `xs[n-1]` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCdf {
    xs: Vec<f64>,
    values: Vec<f64>,
}

impl StepCdf {
    pub fn new(xs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != values.len() {
            return Err(Error::InvalidParameters("step CDF needs matching, nonempty arrays".into()));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameters("step CDF locations must increase".into()));
        }
        if values.windows(2).any(|w| w[0] > w[1]) || values[0] < 0.0 || values[values.len() - 1] > 1.0 {
            return Err(Error::InvalidParameters("step CDF values must be nondecreasing in [0, 1]".into()));
        }
        Ok(StepCdf { xs, values })
    }

    pub fn dirac(at: f64) -> Self {
        StepCdf {
            xs: vec![at],
            values: vec![1.0],
        }
    }

    /// Distribution of weighted particles; weights are normalized.
    pub fn from_particles(locations: &[f64], weights: &[f64]) -> Result<Self> {
        let mut pairs: Vec<(f64, f64)> = locations.iter().copied().zip(weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = weights.iter().sum();
        let mut xs: Vec<f64> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut acc = 0.0;
        for (x, w) in pairs {
            acc += w / total;
            if xs.last() == Some(&x) {
                *values.last_mut().unwrap() = acc.min(1.0);
            } else {
                xs.push(x);
                values.push(acc.min(1.0));
            }
        }
        if let Some(last) = values.last_mut() {
            *last = 1.0;
        }
        StepCdf::new(xs, values)
    }

    /// Cumulative trapezoid of the density, normalized and clamped to `[0, 1]`.
    pub fn from_density(g: &GridDensity) -> Result<Self> {
        let h = g.pitch();
        let mut cdf = Vec::with_capacity(g.n_points);
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in g.values.windows(2) {
            acc += 0.5 * h * (w[0].max(0.0) + w[1].max(0.0));
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::NonFinite("distribution function of an empty density"));
        }
        let mut prev = 0.0_f64;
        for v in &mut cdf {
            *v = (*v / acc).clamp(prev, 1.0);
            prev = *v;
        }
        *cdf.last_mut().unwrap() = 1.0;
        StepCdf::new(g.xs(), cdf)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.xs.partition_point(|&p| p <= x) {
            0 => 0.0,
            i => self.values[i - 1],
        }
    }

    /// `sup |F - G|`
    pub fn kolmogorov(&self, other: &StepCdf) -> f64 {
        self.xs
            .iter()
            .chain(&other.xs)
            .map(|&x| (self.eval(x) - other.eval(x)).abs())
            .fold(0.0, f64::max)
    }
}

/// Evaluates a step CDF at nondecreasing arguments in amortized constant time.
struct Cursor<'a> {
    cdf: &'a StepCdf,
    shift: f64,
    next: usize,
}

impl<'a> Cursor<'a> {
    fn new(cdf: &'a StepCdf, shift: f64) -> Self {
        Cursor { cdf, shift, next: 0 }
    }

    /// `F(x + shift)`
    fn at(&mut self, x: f64) -> f64 {
        let xs = &self.cdf.xs;
        while self.next < xs.len() && xs[self.next] <= x + self.shift {
            self.next += 1;
        }
        match self.next {
            0 => 0.0,
            i => self.cdf.values[i - 1],
        }
    }
}

/// Sorted union of the jump locations of `G`, `F(· - ε)` and `F(· + ε)`.
fn breakpoints(f: &StepCdf, g: &StepCdf, eps: f64) -> Vec<f64> {
    let lists = [
        g.xs.clone(),
        f.xs.iter().map(|&x| x + eps).collect(),
        f.xs.iter().map(|&x| x - eps).collect(),
    ];
    let mut idx = [0usize; 3];
    let mut out = Vec::with_capacity(lists.iter().map(Vec::len).sum());
    loop {
        let mut pick = None;
        for l in 0..3 {
            if idx[l] < lists[l].len() && pick.is_none_or(|p: usize| lists[l][idx[l]] < lists[p][idx[p]]) {
                pick = Some(l);
            }
        }
        let Some(l) = pick else { break };
        out.push(lists[l][idx[l]]);
        idx[l] += 1;
    }
    out
}

/// Whether `F(x-ε) - ε ≤ G(x) ≤ F(x+ε) + ε` for every `x`. All three step
/// functions are constant between consecutive breakpoints, so one probe per
/// gap suffices. Probing at the midpoints rather than the breakpoints keeps
/// `(x + ε) - ε` rounding from reading a step on the wrong side.
fn band_holds(f: &StepCdf, g: &StepCdf, eps: f64) -> bool {
    let mut lower = Cursor::new(f, -eps);
    let mut upper = Cursor::new(f, eps);
    let mut mid = Cursor::new(g, 0.0);
    let points = breakpoints(f, g, eps);
    let Some(&last) = points.last() else { return true };
    points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| 0.5 * (w[0] + w[1]))
        .chain(std::iter::once(last + 1.0))
        .all(|x| {
            let gv = mid.at(x);
            lower.at(x) - eps <= gv && gv <= upper.at(x) + eps
        })
}

/// Lévy distance between two step CDFs, by bisection on `[0, 1]`.
pub fn levy_distance(f: &StepCdf, g: &StepCdf) -> f64 {
    if band_holds(f, g, 0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTION_DEPTH {
        let mid = 0.5 * (lo + hi);
        if band_holds(f, g, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Lévy distance between two grid densities, reported with the discretization
/// allowance of one grid pitch per distribution function.
pub fn levy_residual(exact: &GridDensity, approx: &GridDensity) -> Result<f64> {
    exact.check_same_grid(approx)?;
    let d = levy_distance(&StepCdf::from_density(exact)?, &StepCdf::from_density(approx)?);
    Ok(d + 2.0 * exact.pitch())
}

/// Fewest steps of a distribution function within Lévy distance `eps` of `f`.
///
/// Sweeps left to right, adding each step as late as possible and making it
/// as high as possible.
pub fn min_particles(f: &StepCdf, eps: f64) -> usize {
    assert!(eps > 0.0, "tolerance must be positive");
    let mut level = 0.0;
    let mut steps = 0;
    let mut first = 0;
    loop {
        // the lower envelope F(x - ε) - ε first exceeds the level at x*
        while first < f.xs.len() && !(f.values[first] > level + eps) {
            first += 1;
        }
        if first == f.xs.len() {
            if level < 1.0 {
                steps += 1;
            }
            return steps;
        }
        let x_star = f.xs[first] + eps;
        level = (f.eval(x_star + eps) + eps).min(1.0);
        steps += 1;
        if level >= 1.0 {
            return steps;
        }
    }
}

/// Smallest Lévy distance from `f` reachable with `n` particles.
pub fn min_epsilon(f: &StepCdf, n: usize) -> f64 {
    assert!(n >= 1, "need at least one particle");
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTION_DEPTH {
        let mid = 0.5 * (lo + hi);
        if mid > 0.0 && min_particles(f, mid) <= n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// [`min_epsilon`] of a grid density, with the same allowance as [`levy_residual`].
pub fn particle_bound(exact: &GridDensity, n: usize) -> Result<f64> {
    Ok(min_epsilon(&StepCdf::from_density(exact)?, n) + 2.0 * exact.pitch())
}
