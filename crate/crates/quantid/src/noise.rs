//! Known noise distributions: CDF, density, sampling, and the density infimum
//! used as the conservative estimator gain.
//!
//! Both shipped families are symmetric about zero with `cdf(0) = 1/2` exactly
//! and a density that is continuous and strictly positive on every bounded
//! interval, which is what the estimator requires of the noise.

use libm::erfc;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("noise parameter {name} must be a positive finite number, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("density infimum radius must be finite and non-negative, got {0}")]
    InvalidRadius(f64),
}

/// A zero-median noise family with known distribution and density functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseModel {
    Gaussian { sigma: f64 },
    Logistic { scale: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), NoiseError> {
        let (name, value) = match *self {
            NoiseModel::Gaussian { sigma } => ("sigma", sigma),
            NoiseModel::Logistic { scale } => ("scale", scale),
        };
        if !value.is_finite() || value <= 0.0 {
            return Err(NoiseError::InvalidParameter { name, value });
        }
        Ok(())
    }

    /// Distribution function F(x).
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            // erfc keeps precision in the lower tail where 1 + erf would not.
            NoiseModel::Gaussian { sigma } => 0.5 * erfc(-x / (sigma * SQRT_2)),
            NoiseModel::Logistic { scale } => 1.0 / (1.0 + (-x / scale).exp()),
        }
    }

    /// Density function f(x).
    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => {
                let z = x / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
            }
            NoiseModel::Logistic { scale } => {
                // e^{-|x|/s} / (s (1 + e^{-|x|/s})^2), symmetric form avoids overflow
                let e = (-x.abs() / scale).exp();
                e / (scale * (1.0 + e) * (1.0 + e))
            }
        }
    }

    /// Infimum of the density over `|x| <= radius`.
    ///
    /// Both families are symmetric and unimodal at zero, so the infimum is
    /// attained at the interval endpoint.
    pub fn density_infimum(&self, radius: f64) -> Result<f64, NoiseError> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(NoiseError::InvalidRadius(radius));
        }
        Ok(self.pdf(radius))
    }

    /// Draw one noise realization from the supplied random source.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => Normal::new(0.0, sigma)
                .expect("parameters validated")
                .sample(rng),
            NoiseModel::Logistic { scale } => {
                // inverse-transform: F^{-1}(u) = s ln(u / (1 - u)), u in (0, 1)
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                scale * (u.ln() - (1.0 - u).ln())
            }
        }
    }
}
