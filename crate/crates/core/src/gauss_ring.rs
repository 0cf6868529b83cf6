//! The ring of finite sums of signed Gaussian-exponential monomials
//! `±xⁿ·exp(a·x² + b·x + c)`.
//!
//! The ring is closed under addition, multiplication and differentiation, and
//! every element whose terms all have `a < 0` can be integrated over the real
//! line in closed form. Densities of normal mixtures, their parameter
//! derivatives and polynomial model coefficients all live here, which lets the
//! L² projection filter evaluate every inner product analytically.
//!
//! Magnitudes are always carried in the exponent `c`; a term never stores a
//! raw multiplier `e^c`.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::numeric::{log_add_exp, neumaier_sum, CompensatedSum};

/// Highest monomial degree [`GaussTerm::integrate`] accepts.
pub const MAX_DEGREE: u32 = 60;

/// `ln(1e-300)`: terms whose largest magnitude falls below this are dropped.
const LN_UNDERFLOW: f64 = -690.775_527_898_213_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn of(x: f64) -> Self {
        if x.is_sign_negative() {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl Mul for Sign {
    type Output = Sign;

    fn mul(self, rhs: Sign) -> Sign {
        if self == rhs {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

impl Neg for Sign {
    type Output = Sign;

    fn neg(self) -> Sign {
        self * Sign::Minus
    }
}

/// One term `sign · xⁿ · exp(a·x² + b·x + c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussTerm {
    pub sign: Sign,
    pub n: u32,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct TermKey {
    sign: Sign,
    n: u32,
    a: u64,
    b: u64,
}

impl GaussTerm {
    pub fn new(sign: Sign, n: u32, a: f64, b: f64, c: f64) -> Self {
        // fold -0.0 into 0.0 so that like-term keys compare equal
        GaussTerm {
            sign,
            n,
            a: a + 0.0,
            b: b + 0.0,
            c,
        }
    }

    /// Term with real coefficient `q`: `q · xⁿ · exp(a·x² + b·x)`.
    pub fn with_coefficient(q: f64, n: u32, a: f64, b: f64) -> Self {
        GaussTerm::new(Sign::of(q), n, a, b, q.abs().ln())
    }

    fn key(&self) -> TermKey {
        TermKey {
            sign: self.sign,
            n: self.n,
            a: self.a.to_bits(),
            b: self.b.to_bits(),
        }
    }

    /// `ln |term(x)|`, computed without forming `xⁿ` or `e^c` separately.
    pub fn log_abs_at(&self, x: f64) -> f64 {
        let quad = (self.a * x + self.b) * x + self.c;
        if self.n == 0 {
            quad
        } else {
            quad + f64::from(self.n) * x.abs().ln()
        }
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        if self.n > 0 && x == 0.0 {
            return 0.0;
        }
        let mut s = self.sign.value();
        if x < 0.0 && self.n % 2 == 1 {
            s = -s;
        }
        s * self.log_abs_at(x).exp()
    }

    /// Supremum over `x` of `ln |term(x)|`; infinite unless the term decays or is constant.
    pub fn log_peak(&self) -> f64 {
        if self.a < 0.0 {
            let alpha = -self.a;
            if self.n == 0 {
                return self.c + self.b * self.b / (4.0 * alpha);
            }
            // stationary points of n·ln|x| + a·x² + b·x
            let disc = (self.b * self.b + 8.0 * alpha * f64::from(self.n)).sqrt();
            let x1 = (self.b + disc) / (4.0 * alpha);
            let x2 = (self.b - disc) / (4.0 * alpha);
            self.log_abs_at(x1).max(self.log_abs_at(x2))
        } else if self.a == 0.0 && self.b == 0.0 && self.n == 0 {
            self.c
        } else {
            f64::INFINITY
        }
    }

    fn is_negligible(&self) -> bool {
        if self.c == f64::NEG_INFINITY {
            return true;
        }
        if self.a < 0.0 {
            self.log_peak() < LN_UNDERFLOW
        } else {
            self.c < LN_UNDERFLOW
        }
    }

    /// Closed-form integral over the real line.
    ///
    /// Completing the square turns the term into `(h + t/√α)ⁿ e^{-t²}` up to a
    /// constant factor, with `α = -a` and `h = b/(2α)`. The binomial expansion
    /// reduces it to the moments `u_k = ∫ t^k e^{-t²} dt`.
    pub fn integrate(&self) -> Result<f64> {
        if !(self.a < 0.0) {
            return Err(Error::NonIntegrable { index: 0, a: self.a });
        }
        if self.n > MAX_DEGREE {
            return Err(Error::DegreeLimit {
                n: self.n,
                limit: MAX_DEGREE,
            });
        }
        let alpha = -self.a;
        let h = self.b / (2.0 * alpha);
        let inv_sqrt = alpha.sqrt().recip();
        let log_prefactor = self.c + 0.5 * self.b * h - 0.5 * alpha.ln();

        let n = self.n as usize;
        let binom = &binomials()[n];
        let u = gaussian_moments();
        let sum = neumaier_sum((0..=n).step_by(2).map(|k| {
            binom[k] * h.powi((n - k) as i32) * inv_sqrt.powi(k as i32) * u[k]
        }));
        if sum == 0.0 {
            return Ok(0.0);
        }
        Ok(self.sign.value() * sum * log_prefactor.exp())
    }
}

/// `u_n = ∫ xⁿ e^{-x²} dx` for `n ≤ MAX_DEGREE`, by the recursion
/// `u_0 = √π`, `u_1 = 0`, `u_n = (n-1)/2 · u_{n-2}`.
pub fn gaussian_moments() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut u = vec![0.0; MAX_DEGREE as usize + 1];
        u[0] = PI.sqrt();
        for n in 2..u.len() {
            u[n] = (n as f64 - 1.0) / 2.0 * u[n - 2];
        }
        u
    })
}

pub fn gaussian_moment(n: u32) -> f64 {
    gaussian_moments()[n as usize]
}

fn binomials() -> &'static [Vec<f64>] {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let size = MAX_DEGREE as usize + 1;
        let mut rows: Vec<Vec<u128>> = Vec::with_capacity(size);
        for n in 0..size {
            let mut row = vec![1u128; n + 1];
            for k in 1..n {
                row[k] = rows[n - 1][k - 1] + rows[n - 1][k];
            }
            rows.push(row);
        }
        rows.into_iter()
            .map(|r| r.into_iter().map(|v| v as f64).collect())
            .collect()
    })
}

/// A finite sum of [`GaussTerm`]s. The empty sum is the zero function.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RingFunction {
    terms: Vec<GaussTerm>,
}

impl RingFunction {
    pub fn zero() -> Self {
        RingFunction { terms: Vec::new() }
    }

    pub fn constant(s: f64) -> Self {
        if s == 0.0 {
            RingFunction::zero()
        } else {
            RingFunction {
                terms: vec![GaussTerm::with_coefficient(s, 0, 0.0, 0.0)],
            }
        }
    }

    /// `coef · xⁿ`
    pub fn monomial(coef: f64, n: u32) -> Self {
        RingFunction::from_terms([GaussTerm::with_coefficient(coef, n, 0.0, 0.0)])
    }

    /// Polynomial from ascending coefficients.
    pub fn polynomial(coeffs: &[f64]) -> Self {
        RingFunction::from_terms(
            coeffs
                .iter()
                .enumerate()
                .filter(|(_, &q)| q != 0.0)
                .map(|(n, &q)| GaussTerm::with_coefficient(q, n as u32, 0.0, 0.0)),
        )
    }

    /// Builds a function from raw terms, merging like terms and dropping negligible ones.
    pub fn from_terms<I: IntoIterator<Item = GaussTerm>>(terms: I) -> Self {
        RingFunction {
            terms: compact(terms),
        }
    }

    pub fn terms(&self) -> &[GaussTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &RingFunction) -> RingFunction {
        RingFunction::from_terms(self.terms.iter().chain(other.terms.iter()).copied())
    }

    pub fn multiply(&self, other: &RingFunction) -> RingFunction {
        let mut out = Vec::with_capacity(self.terms.len() * other.terms.len());
        for s in &self.terms {
            for o in &other.terms {
                out.push(GaussTerm::new(
                    s.sign * o.sign,
                    s.n + o.n,
                    s.a + o.a,
                    s.b + o.b,
                    s.c + o.c,
                ));
            }
        }
        RingFunction::from_terms(out)
    }

    pub fn multiply_scalar(&self, s: f64) -> RingFunction {
        if s == 0.0 {
            return RingFunction::zero();
        }
        let sign = Sign::of(s);
        let shift = s.abs().ln();
        RingFunction::from_terms(self.terms.iter().map(|t| GaussTerm {
            sign: t.sign * sign,
            c: t.c + shift,
            ..*t
        }))
    }

    pub fn differentiate(&self) -> RingFunction {
        let mut out = Vec::with_capacity(3 * self.terms.len());
        for t in &self.terms {
            if t.n > 0 {
                out.push(GaussTerm {
                    n: t.n - 1,
                    c: t.c + f64::from(t.n).ln(),
                    ..*t
                });
            }
            if t.a != 0.0 {
                out.push(GaussTerm {
                    sign: t.sign * Sign::of(t.a),
                    n: t.n + 1,
                    c: t.c + (2.0 * t.a).abs().ln(),
                    ..*t
                });
            }
            if t.b != 0.0 {
                out.push(GaussTerm {
                    sign: t.sign * Sign::of(t.b),
                    c: t.c + t.b.abs().ln(),
                    ..*t
                });
            }
        }
        RingFunction::from_terms(out)
    }

    /// Integral over the real line; every term must have `a < 0`.
    pub fn integrate(&self) -> Result<f64> {
        let mut acc = CompensatedSum::default();
        for (index, t) in self.terms.iter().enumerate() {
            let v = t.integrate().map_err(|e| match e {
                Error::NonIntegrable { a, .. } => Error::NonIntegrable { index, a },
                other => other,
            })?;
            acc.add(v);
        }
        Ok(acc.value())
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        neumaier_sum(self.terms.iter().map(|t| t.evaluate(x)))
    }

    /// `∫ f·g dμ`, the direct L² inner product.
    pub fn inner(&self, other: &RingFunction) -> Result<f64> {
        self.multiply(other).integrate()
    }
}

fn compact<I: IntoIterator<Item = GaussTerm>>(terms: I) -> Vec<GaussTerm> {
    let mut out: Vec<GaussTerm> = Vec::new();
    let mut index: HashMap<TermKey, usize> = HashMap::new();
    for t in terms {
        if t.is_negligible() {
            continue;
        }
        match index.entry(t.key()) {
            Entry::Occupied(e) => {
                let merged = &mut out[*e.get()];
                merged.c = log_add_exp(merged.c, t.c);
            }
            Entry::Vacant(e) => {
                e.insert(out.len());
                out.push(t);
            }
        }
    }
    out
}

impl Add for &RingFunction {
    type Output = RingFunction;

    fn add(self, rhs: &RingFunction) -> RingFunction {
        RingFunction::add(self, rhs)
    }
}

impl Sub for &RingFunction {
    type Output = RingFunction;

    fn sub(self, rhs: &RingFunction) -> RingFunction {
        RingFunction::add(self, &-rhs)
    }
}

impl Mul for &RingFunction {
    type Output = RingFunction;

    fn mul(self, rhs: &RingFunction) -> RingFunction {
        self.multiply(rhs)
    }
}

impl Mul<&RingFunction> for f64 {
    type Output = RingFunction;

    fn mul(self, rhs: &RingFunction) -> RingFunction {
        rhs.multiply_scalar(self)
    }
}

impl Neg for &RingFunction {
    type Output = RingFunction;

    fn neg(self) -> RingFunction {
        RingFunction {
            terms: self
                .terms
                .iter()
                .map(|t| GaussTerm { sign: -t.sign, ..*t })
                .collect(),
        }
    }
}

impl fmt::Display for RingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.terms.iter().enumerate() {
            let s = if t.sign == Sign::Plus { "+" } else { "-" };
            if i > 0 || t.sign == Sign::Minus {
                write!(f, "{s}")?;
            }
            write!(f, "x^{} exp({}x^2 + {}x + {})", t.n, t.a, t.b, t.c)?;
        }
        Ok(())
    }
}

/// Backward diffusion operator `𝓛v = f·v′ + ½·a·v″`.
pub fn backward_operator(drift: &RingFunction, diffusion_sq: &RingFunction, v: &RingFunction) -> RingFunction {
    let dv = v.differentiate();
    let d2v = dv.differentiate();
    let first = drift.multiply(&dv);
    let second = diffusion_sq.multiply(&d2v).multiply_scalar(0.5);
    first.add(&second)
}
