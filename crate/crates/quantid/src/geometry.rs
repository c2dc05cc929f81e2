//! The compact box domain that estimates are confined to, its support bound,
//! and projection onto it under a positive-definite metric.
//!
//! Projection minimizes `(x - y)' A (x - y)` over the box. For a general SPD
//! weight `A` this is a bound-constrained strictly convex QP; it is solved by
//! cyclic coordinate minimization, where each coordinate update is an exact
//! 1-D clamp. Sweeps run in coordinate order until the largest per-coordinate
//! change drops below 1e-12, capped at 1e4 sweeps.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const SWEEP_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("box must have at least one dimension")]
    EmptyBox,
    #[error("box bound {index} is invalid: lower={lower}, upper={upper}")]
    InvalidBound { index: usize, lower: f64, upper: f64 },
    #[error("half width must be positive and finite, got {0}")]
    InvalidHalfWidth(f64),
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("weight matrix is asymmetric beyond tolerance")]
    NotSymmetric,
    #[error("weight matrix is not positive definite")]
    NotPositiveDefinite,
}

/// An axis-aligned box `[lower_1, upper_1] x ... x [lower_d, upper_d]`,
/// non-empty and bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxDomain {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, GeometryError> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(GeometryError::EmptyBox);
        }
        for i in 0..lower.len() {
            if !lower[i].is_finite() || !upper[i].is_finite() || lower[i] > upper[i] {
                return Err(GeometryError::InvalidBound {
                    index: i,
                    lower: lower[i],
                    upper: upper[i],
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// The hypercube `[-c, c]^d`.
    pub fn symmetric(half_width: f64, dim: usize) -> Result<Self, GeometryError> {
        if !half_width.is_finite() || half_width <= 0.0 {
            return Err(GeometryError::InvalidHalfWidth(half_width));
        }
        Self::new(
            DVector::from_element(dim, -half_width),
            DVector::from_element(dim, half_width),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// Componentwise membership, boundary included. Exact comparison: the box
    /// is closed, so boundary points belong to it.
    ///
    /// Panics on dimension mismatch.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        (0..x.len()).all(|i| self.lower[i] <= x[i] && x[i] <= self.upper[i])
    }

    /// Strict interior membership, used to validate simulation ground truth.
    pub fn contains_interior(&self, x: &DVector<f64>) -> bool {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        (0..x.len()).all(|i| self.lower[i] < x[i] && x[i] < self.upper[i])
    }

    /// Componentwise clamp onto the box.
    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        DVector::from_fn(x.len(), |i, _| x[i].clamp(self.lower[i], self.upper[i]))
    }

    /// `max_{y in box} |phi' y|`, the tightest bound on the regressor-domain
    /// inner product. For a box the maximizer is a vertex picked sign by sign.
    ///
    /// Panics on dimension mismatch.
    pub fn support_bound(&self, phi: &DVector<f64>) -> f64 {
        assert_eq!(phi.len(), self.dim(), "dimension mismatch");
        let mut hi = 0.0;
        let mut lo = 0.0;
        for i in 0..phi.len() {
            if phi[i] >= 0.0 {
                hi += phi[i] * self.upper[i];
                lo += phi[i] * self.lower[i];
            } else {
                hi += phi[i] * self.lower[i];
                lo += phi[i] * self.upper[i];
            }
        }
        hi.abs().max(lo.abs())
    }
}

/// A validated symmetric positive-definite projection metric.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    a: DMatrix<f64>,
}

impl WeightMatrix {
    /// Validates symmetry to within `1e-12 * ||A||` and positive definiteness
    /// via a Cholesky factorization.
    pub fn new(a: DMatrix<f64>) -> Result<Self, GeometryError> {
        if a.nrows() != a.ncols() || a.is_empty() {
            return Err(GeometryError::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let scale = a.norm();
        for i in 0..a.nrows() {
            for j in (i + 1)..a.ncols() {
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                    return Err(GeometryError::NotSymmetric);
                }
            }
        }
        if nalgebra::Cholesky::new(a.clone()).is_none() {
            return Err(GeometryError::NotPositiveDefinite);
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `||z||_A = sqrt(z' A z)`.
    pub fn norm(&self, z: &DVector<f64>) -> f64 {
        (&self.a * z).dot(z).max(0.0).sqrt()
    }
}

/// Nearest point of the box to `x` in the metric induced by `weight`.
///
/// Points already inside the box are returned unchanged. Panics on dimension
/// mismatch between the three arguments.
pub fn project_weighted(
    x: &DVector<f64>,
    weight: &WeightMatrix,
    domain: &BoxDomain,
) -> DVector<f64> {
    assert_eq!(x.len(), domain.dim(), "dimension mismatch");
    assert_eq!(weight.dim(), domain.dim(), "dimension mismatch");
    if domain.contains(x) {
        return x.clone();
    }

    let a = weight.matrix();
    let d = x.len();
    let mut y = domain.clamp(x);
    for _ in 0..MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..d {
            // minimize over y_j with the others fixed:
            // y_j = x_j - sum_{i != j} a_ji (y_i - x_i) / a_jj, clamped
            let mut cross = 0.0;
            for i in 0..d {
                if i != j {
                    cross += a[(j, i)] * (y[i] - x[i]);
                }
            }
            let target = (x[j] - cross / a[(j, j)]).clamp(domain.lower[j], domain.upper[j]);
            max_change = max_change.max((target - y[j]).abs());
            y[j] = target;
        }
        if max_change < SWEEP_TOL {
            break;
        }
    }
    y
}
