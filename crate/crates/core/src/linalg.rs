//! Solving against symmetric positive-definite metric matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;
/// Cholesky pivots below this fraction of the largest diagonal entry are treated as singular.
pub const MIN_RELATIVE_PIVOT: f64 = 1e-13;

/// 2-norm condition number `λ_max / λ_min` of a symmetric matrix; infinite when
/// the matrix is not positive definite.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        f64::INFINITY
    } else {
        max / min
    }
}

/// A factored metric matrix ready for repeated solves.
#[derive(Debug, Clone)]
pub struct MetricSolver {
    factor: Factor,
    condition: f64,
}

#[derive(Debug, Clone)]
enum Factor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl MetricSolver {
    /// Factors `m`, failing with [`Error::SingularMetric`] when it is numerically singular.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let condition = condition_number(m);
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularMetric { condition });
        }
        let max_diag = m.diagonal().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        match m.clone().cholesky() {
            Some(chol) => {
                let min_pivot = chol
                    .l_dirty()
                    .diagonal()
                    .iter()
                    .map(|d| d * d)
                    .fold(f64::INFINITY, f64::min);
                if min_pivot < MIN_RELATIVE_PIVOT * max_diag {
                    return Err(Error::SingularMetric { condition });
                }
                Ok(MetricSolver {
                    factor: Factor::Cholesky(chol),
                    condition,
                })
            }
            None => {
                let lu = m.clone().full_piv_lu();
                if !lu.is_invertible() {
                    return Err(Error::SingularMetric { condition });
                }
                Ok(MetricSolver {
                    factor: Factor::Lu(lu),
                    condition,
                })
            }
        }
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let x = match &self.factor {
            Factor::Cholesky(c) => c.solve(rhs),
            Factor::Lu(lu) => lu
                .solve(rhs)
                .ok_or(Error::SingularMetric { condition: self.condition })?,
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metric solve"));
        }
        Ok(x)
    }
}
