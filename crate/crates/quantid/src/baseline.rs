//! A projected quasi-Newton baseline driven by the squared-error loss.
//!
//! This is **not** a published algorithm: it is a like-for-like l2 analogue
//! of the main estimator, built on the identical rank-one covariance update
//! and weighted projection, so that comparisons between the two isolate the
//! loss function. Its innovation is the gap between the observed level and
//! the model's expected level, and its gain is the slope of that expected
//! level.

use nalgebra::{DMatrix, DVector};

use crate::estimator::{quasi_newton_step, AdaConfig, EstimatorError, Observation};
use crate::noise::NoiseModel;
use crate::quantizer::QuantizerSpec;

/// Slope values below this are clamped to keep the update defined in the
/// saturated tails where the density vanishes.
const SLOPE_FLOOR: f64 = 1e-12;

/// `E[y | phi' theta = s]`, which telescopes to `(m + 1) - sum_i F(c_i - s)`.
pub fn expected_level(s: f64, quantizer: &QuantizerSpec, noise: &NoiseModel) -> f64 {
    let m = quantizer.num_thresholds();
    let sum: f64 = quantizer.thresholds().iter().map(|&c| noise.cdf(c - s)).sum();
    (m + 1) as f64 - sum
}

/// Derivative of [`expected_level`] in `s`: the summed density at the
/// thresholds.
pub fn expected_level_slope(s: f64, quantizer: &QuantizerSpec, noise: &NoiseModel) -> f64 {
    quantizer.thresholds().iter().map(|&c| noise.pdf(c - s)).sum()
}

/// Single-layer l2 estimator state.
#[derive(Debug, Clone)]
pub struct L2State {
    theta: DVector<f64>,
    p: DMatrix<f64>,
    p_inv: DMatrix<f64>,
    k: u64,
}

impl L2State {
    pub fn new(
        config: &AdaConfig,
        theta0: DVector<f64>,
        p0: DMatrix<f64>,
    ) -> Result<Self, EstimatorError> {
        let d = config.domain.dim();
        if theta0.len() != d || p0.nrows() != d || p0.ncols() != d {
            return Err(EstimatorError::InvalidConfig(
                "initial state dimensions do not match the domain".into(),
            ));
        }
        if !config.domain.contains(&theta0) {
            return Err(EstimatorError::InvalidConfig(
                "initial estimate lies outside the domain".into(),
            ));
        }
        let p0_inv = p0.clone().try_inverse().ok_or_else(|| {
            EstimatorError::InvalidConfig("initial covariance is not invertible".into())
        })?;
        Ok(Self {
            theta: theta0,
            p: p0,
            p_inv: p0_inv,
            k: 0,
        })
    }

    pub fn with_defaults(config: &AdaConfig) -> Result<Self, EstimatorError> {
        let d = config.domain.dim();
        let theta0 = config.domain.clamp(&DVector::zeros(d));
        Self::new(config, theta0, DMatrix::identity(d, d))
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn p_inv(&self) -> &DMatrix<f64> {
        &self.p_inv
    }

    pub fn step_count(&self) -> u64 {
        self.k
    }

    pub fn predict(&self, phi: &DVector<f64>, quantizer: &QuantizerSpec) -> usize {
        quantizer.quantize(phi.dot(&self.theta))
    }

    /// Process one observation with the level-residual innovation and the
    /// expected-level slope as gain. Returns the (clamped) slope used.
    pub fn update(
        &mut self,
        obs: &Observation,
        config: &AdaConfig,
    ) -> Result<f64, EstimatorError> {
        assert_eq!(obs.phi.len(), self.theta.len(), "dimension mismatch");
        let s = obs.phi.dot(&self.theta);
        let residual = obs.y as f64 - expected_level(s, &obs.quantizer, &config.noise);
        let slope = expected_level_slope(s, &obs.quantizer, &config.noise).max(SLOPE_FLOOR);
        quasi_newton_step(
            &mut self.theta,
            &mut self.p,
            &mut self.p_inv,
            &obs.phi,
            residual,
            slope,
            config.mu,
            &config.domain,
        )?;
        self.k += 1;
        Ok(slope)
    }
}
