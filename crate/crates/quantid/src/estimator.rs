//! The two-step absolute-deviation adaptive estimator.
//!
//! Each observation tick runs two coupled quasi-Newton recursions:
//!
//! * a **preliminary** layer whose gain is the infimum of the noise density
//!   over the reachable signal range (slow but provably contracting), and
//! * an **accelerated** layer whose gain is a divided difference of the noise
//!   CDF between the two layers' predictions, much larger in practice.
//!
//! Both layers drive a sign-based innovation (the sign of the level residual
//! plus a CDF correction that centers its conditional mean), maintain their
//! covariance `P` and its inverse through rank-one updates, and project the
//! new estimate onto the known compact domain in the metric of the updated
//! inverse covariance.
//!
//! All right-hand quantities of a tick are evaluated at the pre-update
//! estimates of that tick, so the two layers commit atomically and their
//! internal order is irrelevant.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{project_weighted, BoxDomain, WeightMatrix};
use crate::noise::NoiseModel;
use crate::quantizer::QuantizerSpec;

/// Any covariance diagonal below this is treated as a numerical breakdown.
const SPD_FLOOR: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("invalid estimator config: {0}")]
    InvalidConfig(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Step sizes and tolerances of the recursion, plus the model ingredients it
/// needs (noise law and domain). The quantizer rides along with each
/// observation since thresholds may vary per step.
#[derive(Debug, Clone)]
pub struct AdaConfig {
    /// Regularizer of the preliminary gain denominator; constant stand-in for
    /// a sequence bounded away from 0 and infinity.
    pub mu_bar: f64,
    /// Regularizer of the accelerated gain denominator.
    pub mu: f64,
    /// Relative scale below which the inter-layer prediction gap is treated
    /// as zero and the divided difference falls back to the density.
    pub delta_zero_tol: f64,
    pub noise: NoiseModel,
    pub domain: BoxDomain,
}

impl AdaConfig {
    pub fn new(noise: NoiseModel, domain: BoxDomain) -> Self {
        Self {
            mu_bar: 1.0,
            mu: 1.0,
            delta_zero_tol: 1e-8,
            noise,
            domain,
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        for (name, v) in [
            ("mu_bar", self.mu_bar),
            ("mu", self.mu),
            ("delta_zero_tol", self.delta_zero_tol),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(EstimatorError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        self.noise
            .validate()
            .map_err(|e| EstimatorError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// One quantized observation: regressor, observed level, and the thresholds
/// in effect when it was produced.
#[derive(Debug, Clone)]
pub struct Observation {
    pub phi: DVector<f64>,
    pub y: usize,
    pub quantizer: QuantizerSpec,
}

impl Observation {
    pub fn new(
        phi: DVector<f64>,
        y: usize,
        quantizer: QuantizerSpec,
    ) -> Result<Self, EstimatorError> {
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::InvalidObservation(
                "regressor has non-finite components".into(),
            ));
        }
        if y < 1 || y > quantizer.num_levels() {
            return Err(EstimatorError::InvalidObservation(format!(
                "level {y} out of range 1..={}",
                quantizer.num_levels()
            )));
        }
        Ok(Self { phi, y, quantizer })
    }
}

/// Per-tick internals, exposed for monitoring and for the invariant checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Preliminary-layer innovation; always in [-2, 2].
    pub v_bar: f64,
    /// Accelerated-layer innovation; always in [-2, 2].
    pub v: f64,
    /// Density-infimum gain of the preliminary layer; strictly positive.
    pub beta_bar: f64,
    /// Divided-difference gain of the accelerated layer; non-negative.
    pub beta: f64,
    /// Preliminary scalar step size, in (0, 1/mu_bar].
    pub a_bar: f64,
    /// Accelerated scalar step size, in (0, 1/mu].
    pub a: f64,
    /// Inter-layer prediction gap phi' (theta_bar - theta).
    pub delta: f64,
    /// Whether projection moved the preliminary estimate.
    pub projected_bar: bool,
    /// Whether projection moved the accelerated estimate.
    pub projected: bool,
}

/// Both estimator layers plus the accumulated information matrix.
#[derive(Debug, Clone)]
pub struct AdaState {
    theta_bar: DVector<f64>,
    p_bar: DMatrix<f64>,
    p_bar_inv: DMatrix<f64>,
    theta: DVector<f64>,
    p: DMatrix<f64>,
    p_inv: DMatrix<f64>,
    /// `P0^{-1} + sum phi phi'`, tracked for eigenvalue diagnostics.
    info: DMatrix<f64>,
    k: u64,
}

impl AdaState {
    /// Start both layers from the same initial estimate and covariance.
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
        WeightMatrix::new(p0.clone())
            .map_err(|e| EstimatorError::InvalidConfig(format!("initial covariance: {e}")))?;
        let p0_inv = p0.clone().try_inverse().ok_or_else(|| {
            EstimatorError::InvalidConfig("initial covariance is not invertible".into())
        })?;
        Ok(Self {
            theta_bar: theta0.clone(),
            p_bar: p0.clone(),
            p_bar_inv: p0_inv.clone(),
            theta: theta0,
            p: p0,
            p_inv: p0_inv.clone(),
            info: p0_inv,
            k: 0,
        })
    }

    /// Zero initial estimates (clamped onto the domain) and identity
    /// covariances.
    pub fn with_defaults(config: &AdaConfig) -> Result<Self, EstimatorError> {
        let d = config.domain.dim();
        let theta0 = config.domain.clamp(&DVector::zeros(d));
        Self::new(config, theta0, DMatrix::identity(d, d))
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn theta_bar(&self) -> &DVector<f64> {
        &self.theta_bar
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn p_bar(&self) -> &DMatrix<f64> {
        &self.p_bar
    }

    pub fn p_inv(&self) -> &DMatrix<f64> {
        &self.p_inv
    }

    pub fn p_bar_inv(&self) -> &DMatrix<f64> {
        &self.p_bar_inv
    }

    pub fn info(&self) -> &DMatrix<f64> {
        &self.info
    }

    pub fn step_count(&self) -> u64 {
        self.k
    }

    /// Level the accelerated estimate predicts for the next observation.
    pub fn predict(&self, phi: &DVector<f64>, quantizer: &QuantizerSpec) -> usize {
        quantizer.quantize(phi.dot(&self.theta))
    }

    /// Process one observation: both layers update from the pre-update
    /// estimates of this tick, then commit together.
    pub fn update(
        &mut self,
        obs: &Observation,
        config: &AdaConfig,
    ) -> Result<StepDiagnostics, EstimatorError> {
        assert_eq!(obs.phi.len(), self.theta.len(), "dimension mismatch");
        let phi = &obs.phi;
        let s_bar = phi.dot(&self.theta_bar);
        let s = phi.dot(&self.theta);

        let v_bar = innovation_at(s_bar, obs.y, &obs.quantizer, &config.noise);
        let v = innovation_at(s, obs.y, &obs.quantizer, &config.noise);
        let beta_bar = density_infimum_gain(phi, &obs.quantizer, &config.domain, &config.noise)
            .map_err(|e| EstimatorError::Numerical(e.to_string()))?;
        let beta = divided_difference_gain_at(
            s,
            s_bar,
            &obs.quantizer,
            &config.noise,
            config.delta_zero_tol,
        );

        let step_bar = quasi_newton_step(
            &mut self.theta_bar,
            &mut self.p_bar,
            &mut self.p_bar_inv,
            phi,
            v_bar,
            beta_bar,
            config.mu_bar,
            &config.domain,
        )?;
        let step = quasi_newton_step(
            &mut self.theta,
            &mut self.p,
            &mut self.p_inv,
            phi,
            v,
            beta,
            config.mu,
            &config.domain,
        )?;

        self.info.ger(1.0, phi, phi, 1.0);
        self.k += 1;

        Ok(StepDiagnostics {
            v_bar,
            v,
            beta_bar,
            beta,
            a_bar: step_bar.gain,
            a: step.gain,
            delta: s_bar - s,
            projected_bar: step_bar.projected,
            projected: step.projected,
        })
    }
}

#[derive(Debug)]
pub(crate) struct LayerStep {
    pub gain: f64,
    pub projected: bool,
}

/// Shared single-layer tick: rank-one covariance update, inverse update, and
/// the projected estimate move. Also used by the l2 baseline so the two
/// algorithms differ only in innovations and gains.
#[allow(clippy::too_many_arguments)]
pub(crate) fn quasi_newton_step(
    theta: &mut DVector<f64>,
    p: &mut DMatrix<f64>,
    p_inv: &mut DMatrix<f64>,
    phi: &DVector<f64>,
    innovation: f64,
    beta: f64,
    mu: f64,
    domain: &BoxDomain,
) -> Result<LayerStep, EstimatorError> {
    let p_phi = &*p * phi;
    // exactly nonnegative for SPD P; the clamp only absorbs rounding
    let quad = phi.dot(&p_phi).max(0.0);
    let gain = 1.0 / (mu + beta * quad);
    if !gain.is_finite() || gain <= 0.0 {
        return Err(EstimatorError::Numerical(format!(
            "step size degenerated: mu={mu}, beta={beta}, quad={quad}"
        )));
    }

    // P <- P - a beta (P phi)(P phi)';  P^{-1} <- P^{-1} + (beta / mu) phi phi'
    p.ger(-gain * beta, &p_phi, &p_phi, 1.0);
    p_inv.ger(beta / mu, phi, phi, 1.0);
    for i in 0..p.nrows() {
        if p[(i, i)] < SPD_FLOOR {
            return Err(EstimatorError::Numerical(format!(
                "covariance diagonal {i} collapsed to {}",
                p[(i, i)]
            )));
        }
    }

    let candidate = &*theta + &p_phi * (gain * innovation);
    let projected = !domain.contains(&candidate);
    if projected {
        let metric = WeightMatrix::new(p_inv.clone())
            .map_err(|e| EstimatorError::Numerical(format!("projection metric: {e}")))?;
        *theta = project_weighted(&candidate, &metric, domain);
    } else {
        *theta = candidate;
    }
    Ok(LayerStep { gain, projected })
}

/// Innovation at the given estimate: sign of the level residual plus the CDF
/// correction for the estimate's cell. Bounded by 2 in absolute value.
pub fn innovation(
    phi: &DVector<f64>,
    theta_hat: &DVector<f64>,
    y: usize,
    quantizer: &QuantizerSpec,
    noise: &NoiseModel,
) -> f64 {
    innovation_at(phi.dot(theta_hat), y, quantizer, noise)
}

fn innovation_at(s: f64, y: usize, quantizer: &QuantizerSpec, noise: &NoiseModel) -> f64 {
    let cell = quantizer.cell_index(s);
    let sign = match y.cmp(&cell) {
        std::cmp::Ordering::Greater => 1.0,
        std::cmp::Ordering::Equal => 0.0,
        std::cmp::Ordering::Less => -1.0,
    };
    let c = quantizer.thresholds();
    let m = quantizer.num_thresholds();
    let correction = if cell == 1 {
        noise.cdf(c[0] - s) - 1.0
    } else if cell == m + 1 {
        noise.cdf(c[m - 1] - s)
    } else {
        noise.cdf(c[cell - 2] - s) - (1.0 - noise.cdf(c[cell - 1] - s))
    };
    sign + correction
}

/// Worst-case gain of the preliminary layer: the density infimum over every
/// signal value reachable from the domain and the active thresholds.
pub fn density_infimum_gain(
    phi: &DVector<f64>,
    quantizer: &QuantizerSpec,
    domain: &BoxDomain,
    noise: &NoiseModel,
) -> Result<f64, crate::noise::NoiseError> {
    let g = domain.support_bound(phi);
    let radius = (g + quantizer.highest_threshold())
        .max(g - quantizer.lowest_threshold())
        .max(0.0);
    noise.density_infimum(radius)
}

/// Divided-difference gain of the accelerated layer: secant slope of the CDF
/// between the two layers' predictions at each threshold of the current cell,
/// falling back to the density when the inter-layer gap is negligible.
///
/// `delta_zero_tol` is a relative scale: the fallback triggers when
/// `|delta| < delta_zero_tol * (1 + |phi' theta| + |phi' theta_bar|)`, since
/// divided differences of nearly equal CDF values carry no significant digits.
pub fn divided_difference_gain(
    phi: &DVector<f64>,
    theta: &DVector<f64>,
    theta_bar: &DVector<f64>,
    quantizer: &QuantizerSpec,
    noise: &NoiseModel,
    delta_zero_tol: f64,
) -> f64 {
    divided_difference_gain_at(
        phi.dot(theta),
        phi.dot(theta_bar),
        quantizer,
        noise,
        delta_zero_tol,
    )
}

fn divided_difference_gain_at(
    s: f64,
    s_bar: f64,
    quantizer: &QuantizerSpec,
    noise: &NoiseModel,
    delta_zero_tol: f64,
) -> f64 {
    let delta = s_bar - s;
    let use_secant = delta.abs() >= delta_zero_tol * (1.0 + s.abs() + s_bar.abs());
    let slope = |c: f64| {
        if use_secant {
            // arguments differ by exactly delta, so the quotient is a
            // nonnegative secant slope of the CDF
            (noise.cdf(c - s) - noise.cdf(c - s_bar)) / delta
        } else {
            noise.pdf(c - s)
        }
    };
    let c = quantizer.thresholds();
    let m = quantizer.num_thresholds();
    let cell = quantizer.cell_index(s);
    let beta = if cell == 1 {
        slope(c[0])
    } else if cell == m + 1 {
        slope(c[m - 1])
    } else {
        slope(c[cell - 2]) + slope(c[cell - 1])
    };
    beta.max(0.0)
}

/// Conditional mean of the innovation at `theta_est` when observations come
/// from `theta_true`: a closed-form difference of CDF values at the
/// thresholds of the estimate's cell.
///
/// This is a diagnostic, not part of the update path; the Monte-Carlo checks
/// pin the sampled innovation mean against it.
pub fn expected_innovation(
    theta_est: &DVector<f64>,
    theta_true: &DVector<f64>,
    phi: &DVector<f64>,
    quantizer: &QuantizerSpec,
    noise: &NoiseModel,
) -> f64 {
    let s_est = phi.dot(theta_est);
    let s_true = phi.dot(theta_true);
    let diff = |c: f64| noise.cdf(c - s_est) - noise.cdf(c - s_true);
    let c = quantizer.thresholds();
    let m = quantizer.num_thresholds();
    let cell = quantizer.cell_index(s_est);
    if cell == 1 {
        diff(c[0])
    } else if cell == m + 1 {
        diff(c[m - 1])
    } else {
        diff(c[cell - 2]) + diff(c[cell - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const GAUSS5: NoiseModel = NoiseModel::Gaussian { sigma: 5.0 };

    fn unit_box(d: usize) -> BoxDomain {
        BoxDomain::symmetric(1.0, d).unwrap()
    }

    fn config2() -> AdaConfig {
        AdaConfig::new(GAUSS5, unit_box(2))
    }

    fn q(thresholds: &[f64]) -> QuantizerSpec {
        QuantizerSpec::new(thresholds.to_vec()).unwrap()
    }

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn random_quantizer(rng: &mut StdRng) -> QuantizerSpec {
        let m = rng.random_range(1..=5);
        let mut thresholds: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        QuantizerSpec::new(thresholds).unwrap()
    }

    #[test]
    fn innovation_binary_examples() {
        let spec = q(&[0.5]);
        let theta = vec2(0.0, 0.0);
        let phi = vec2(1.0, 0.0);
        // frozen against the CDF oracle: Phi(0.1)
        let v2 = innovation(&phi, &theta, 2, &spec, &GAUSS5);
        assert_abs_diff_eq!(v2, 0.539827837277029, epsilon = 1e-12);
        let v1 = innovation(&phi, &theta, 1, &spec, &GAUSS5);
        assert_abs_diff_eq!(v1, -0.460172162722971, epsilon = 1e-12);
    }

    #[test]
    fn innovation_bounded_by_two_on_fuzzed_inputs() {
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..20_000 {
            let spec = random_quantizer(&mut rng);
            let s = rng.random_range(-10.0..10.0);
            let y = rng.random_range(1..=spec.num_levels());
            let v = innovation_at(s, y, &spec, &GAUSS5);
            assert!(v.abs() <= 2.0, "v={v}");
        }
    }

    #[test]
    fn density_infimum_gain_examples() {
        let domain = unit_box(2);
        // G = 2, radius = max(2.5, 1.5) = 2.5
        let beta = density_infimum_gain(&vec2(1.0, 1.0), &q(&[0.5]), &domain, &GAUSS5).unwrap();
        assert_abs_diff_eq!(beta, 0.0704130653528599, epsilon = 1e-15);
        assert_abs_diff_eq!(beta, GAUSS5.pdf(2.5), epsilon = 0.0);

        // zero regressor degenerates to the mode
        let beta0 = density_infimum_gain(&vec2(0.0, 0.0), &q(&[0.0]), &domain, &GAUSS5).unwrap();
        assert_abs_diff_eq!(beta0, GAUSS5.pdf(0.0), epsilon = 0.0);

        // G = 2 with thresholds [-1, 1]: radius = 3
        let beta3 =
            density_infimum_gain(&vec2(1.0, 1.0), &q(&[-1.0, 1.0]), &domain, &GAUSS5).unwrap();
        assert_abs_diff_eq!(beta3, GAUSS5.pdf(3.0), epsilon = 0.0);
        assert_abs_diff_eq!(beta3, 0.06664492057835993, epsilon = 1e-15);
    }

    #[test]
    fn divided_difference_gain_cases() {
        let spec = q(&[0.5]);
        // s_bar at the threshold, s one unit below: secant of the CDF over
        // [0, 1], frozen against the oracle Phi(0.2) - Phi(0)
        let beta = divided_difference_gain_at(-0.5, 0.5, &spec, &GAUSS5, 1e-8);
        assert_abs_diff_eq!(beta, 0.07925970943910302, epsilon = 1e-12);

        // gap below tolerance: exact density fallback
        let beta0 = divided_difference_gain_at(-0.5, -0.5, &spec, &GAUSS5, 1e-8);
        assert_abs_diff_eq!(beta0, GAUSS5.pdf(1.0), epsilon = 0.0);

        // the secant approaches the fallback as the gap closes
        let near = divided_difference_gain_at(-0.5, -0.5 + 1e-4, &spec, &GAUSS5, 1e-8);
        assert_abs_diff_eq!(near, beta0, epsilon = 1e-6);
    }

    #[test]
    fn divided_difference_brackets_density_range() {
        // Mean value theorem: each secant slope lies between the density
        // extremes over the closed interval of its two CDF arguments.
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..2_000 {
            let spec = random_quantizer(&mut rng);
            let s: f64 = rng.random_range(-4.0..4.0);
            let s_bar: f64 = rng.random_range(-4.0..4.0);
            let delta = s_bar - s;
            if delta.abs() < 1e-6 * (1.0 + s.abs() + s_bar.abs()) {
                continue;
            }
            for &c in spec.thresholds() {
                let dd = (GAUSS5.cdf(c - s) - GAUSS5.cdf(c - s_bar)) / delta;
                let (lo, hi) = ((c - s).min(c - s_bar), (c - s).max(c - s_bar));
                let mut f_min = f64::INFINITY;
                let mut f_max = f64::NEG_INFINITY;
                for i in 0..=200 {
                    let x = lo + (hi - lo) * i as f64 / 200.0;
                    f_min = f_min.min(GAUSS5.pdf(x));
                    f_max = f_max.max(GAUSS5.pdf(x));
                }
                assert!(
                    dd >= f_min - 1e-9 && dd <= f_max + 1e-9,
                    "dd={dd} range=[{f_min}, {f_max}]"
                );
            }
        }
    }

    #[test]
    fn rank_one_step_matches_hand_algebra() {
        // d=2, P=I, phi=(1,0), beta=1, mu=1:
        // a = 1/2, P+ = diag(1/2, 1), P^{-1}+ = diag(2, 1)
        let domain = unit_box(2);
        let mut theta = vec2(0.0, 0.0);
        let mut p = DMatrix::identity(2, 2);
        let mut p_inv = DMatrix::identity(2, 2);
        let phi = vec2(1.0, 0.0);
        let step =
            quasi_newton_step(&mut theta, &mut p, &mut p_inv, &phi, 0.25, 1.0, 1.0, &domain)
                .unwrap();
        assert_abs_diff_eq!(step.gain, 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(p[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[(1, 1)], 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(p[(0, 1)], 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(p_inv[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p_inv[(1, 1)], 1.0, epsilon = 0.0);
        // cross-check the inverse against direct matrix inversion
        let direct = p.clone().try_inverse().unwrap();
        assert!((direct - &p_inv).amax() <= 1e-12);
        // theta moved by a * P_k phi * v = (0.125, 0), interior, no projection
        assert_abs_diff_eq!(theta[0], 0.125, epsilon = 1e-15);
        assert!(!step.projected);
    }

    #[test]
    fn zero_innovation_moves_only_the_covariance() {
        let domain = unit_box(2);
        let mut theta = vec2(0.3, -0.2);
        let before = theta.clone();
        let mut p = DMatrix::identity(2, 2);
        let mut p_inv = DMatrix::identity(2, 2);
        quasi_newton_step(
            &mut theta,
            &mut p,
            &mut p_inv,
            &vec2(1.0, 1.0),
            0.0,
            0.5,
            1.0,
            &domain,
        )
        .unwrap();
        assert_eq!(theta, before);
        assert!(p[(0, 0)] < 1.0);
    }

    #[test]
    fn zero_gain_leaves_covariance_unchanged() {
        let domain = unit_box(2);
        let mut theta = vec2(0.0, 0.0);
        let mut p = DMatrix::identity(2, 2);
        let mut p_inv = DMatrix::identity(2, 2);
        let step = quasi_newton_step(
            &mut theta,
            &mut p,
            &mut p_inv,
            &vec2(1.0, 0.0),
            1.0,
            0.0,
            2.0,
            &domain,
        )
        .unwrap();
        assert_abs_diff_eq!(step.gain, 0.5, epsilon = 0.0);
        assert_eq!(p, DMatrix::identity(2, 2));
        assert_eq!(p_inv, DMatrix::identity(2, 2));
        assert_abs_diff_eq!(theta[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_regressor_update_is_a_no_op_except_counters() {
        let config = config2();
        let mut state = AdaState::with_defaults(&config).unwrap();
        let obs = Observation::new(vec2(0.0, 0.0), 2, q(&[0.5])).unwrap();
        let diag = state.update(&obs, &config).unwrap();
        assert_eq!(state.theta(), &vec2(0.0, 0.0));
        assert_eq!(state.theta_bar(), &vec2(0.0, 0.0));
        assert_eq!(state.p(), &DMatrix::identity(2, 2));
        assert_eq!(state.p_bar(), &DMatrix::identity(2, 2));
        assert_eq!(state.step_count(), 1);
        assert_abs_diff_eq!(diag.a_bar, 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(diag.a, 1.0, epsilon = 0.0);
    }

    #[test]
    fn update_composes_the_published_pieces() {
        let config = config2();
        let mut state = AdaState::with_defaults(&config).unwrap();
        let spec = q(&[0.5]);
        let phi = vec2(1.0, 0.0);
        let obs = Observation::new(phi.clone(), 2, spec.clone()).unwrap();
        let diag = state.update(&obs, &config).unwrap();

        // independently recompose the tick from the public pieces
        let zero = vec2(0.0, 0.0);
        let v = innovation(&phi, &zero, 2, &spec, &GAUSS5);
        let beta_bar =
            density_infimum_gain(&phi, &spec, &config.domain, &GAUSS5).unwrap();
        let beta = divided_difference_gain(&phi, &zero, &zero, &spec, &GAUSS5, 1e-8);
        assert_abs_diff_eq!(diag.v, v, epsilon = 0.0);
        assert_abs_diff_eq!(diag.v_bar, v, epsilon = 0.0);
        assert_abs_diff_eq!(diag.beta_bar, beta_bar, epsilon = 0.0);
        assert_abs_diff_eq!(diag.beta, beta, epsilon = 0.0);
        assert_abs_diff_eq!(diag.delta, 0.0, epsilon = 0.0);

        // both layers start identically: theta+ = a * P phi * v on coordinate 0
        let a_bar = 1.0 / (1.0 + beta_bar);
        let a = 1.0 / (1.0 + beta);
        assert_abs_diff_eq!(diag.a_bar, a_bar, epsilon = 1e-15);
        assert_abs_diff_eq!(state.theta_bar()[0], a_bar * v, epsilon = 1e-14);
        assert_abs_diff_eq!(state.theta()[0], a * v, epsilon = 1e-14);
        assert_abs_diff_eq!(state.theta()[1], 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(state.p()[(0, 0)], 1.0 - a * beta, epsilon = 1e-14);
        assert_abs_diff_eq!(state.p_inv()[(0, 0)], 1.0 + beta, epsilon = 1e-14);
        assert_abs_diff_eq!(state.info()[(0, 0)], 2.0, epsilon = 0.0);
    }

    #[test]
    fn predict_uses_the_saturation_map() {
        let config = config2();
        let state = AdaState::with_defaults(&config).unwrap();
        let spec = q(&[0.5]);
        assert_eq!(state.predict(&vec2(1.0, 1.0), &spec), 1);

        let mut shifted = state.clone();
        shifted.theta = vec2(0.7, 0.0);
        assert_eq!(shifted.predict(&vec2(1.0, 0.0), &spec), 2);
    }

    #[test]
    fn expected_innovation_vanishes_at_the_truth() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let spec = random_quantizer(&mut rng);
            let theta = vec2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let phi = vec2(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            assert_eq!(expected_innovation(&theta, &theta, &phi, &spec, &GAUSS5), 0.0);
        }
    }

    #[test]
    fn expected_innovation_bound_and_sign() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..20_000 {
            let spec = random_quantizer(&mut rng);
            let theta_est = vec2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let theta_true = vec2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let phi = vec2(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let psi = expected_innovation(&theta_est, &theta_true, &phi, &spec, &GAUSS5);
            assert!(psi.abs() <= 2.0);
            let gap = phi.dot(&(&theta_true - &theta_est));
            assert!(gap * psi >= 0.0, "gap={gap} psi={psi}");
        }
    }

    #[test]
    fn monte_carlo_innovation_mean_matches_expected_innovation() {
        let spec = q(&[-0.5, 0.8]);
        let theta_est = vec2(0.4, -0.2);
        let theta_true = vec2(-0.3, 0.6);
        let phi = vec2(1.2, 0.7);
        let n = 100_000usize;
        let mut rng = StdRng::seed_from_u64(99);
        let s_true = phi.dot(&theta_true);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let y = spec.quantize(s_true + GAUSS5.sample(&mut rng));
            let v = innovation(&phi, &theta_est, y, &spec, &GAUSS5);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let sd = ((sum_sq / n as f64 - mean * mean).max(0.0)).sqrt();
        let psi = expected_innovation(&theta_est, &theta_true, &phi, &spec, &GAUSS5);
        assert!(
            (mean - psi).abs() <= 5.0 * sd / (n as f64).sqrt(),
            "mean={mean} psi={psi} sd={sd}"
        );
    }

    #[test]
    fn accelerated_step_is_unbiased_at_the_truth() {
        // At theta = theta_bar = theta_true the innovation has zero mean, so
        // the mean one-step displacement vanishes up to Monte-Carlo error.
        let config = config2();
        let theta_true = vec2(0.3, -0.4);
        let spec = q(&[0.5]);
        let phi = vec2(0.8, 0.6);
        let base = AdaState::new(&config, theta_true.clone(), DMatrix::identity(2, 2)).unwrap();
        let s_true = phi.dot(&theta_true);
        let n = 40_000usize;
        let mut rng = StdRng::seed_from_u64(2024);
        let mut mean = vec2(0.0, 0.0);
        let mut sum_v_sq = 0.0;
        let mut gain = 0.0;
        for _ in 0..n {
            let y = spec.quantize(s_true + GAUSS5.sample(&mut rng));
            let mut state = base.clone();
            let diag = state
                .update(&Observation::new(phi.clone(), y, spec.clone()).unwrap(), &config)
                .unwrap();
            mean += state.theta() - &theta_true;
            sum_v_sq += diag.v * diag.v;
            gain = diag.a;
        }
        mean /= n as f64;
        let sd_v = (sum_v_sq / n as f64).sqrt();
        // displacement is a * P phi * v, so its per-component deviation is
        // bounded by the innovation's
        let scale = gain * phi.amax() * sd_v;
        let tol = 5.0 * scale / (n as f64).sqrt() + 1e-12;
        assert!(mean.amax() <= tol, "mean={mean:?} tol={tol}");
    }

    #[test]
    fn long_run_keeps_invariants_and_stays_in_the_domain() {
        let mut rng = StdRng::seed_from_u64(314);
        let config = config2();
        let mut state = AdaState::with_defaults(&config).unwrap();
        let theta_true = vec2(0.6, -0.3);
        let mut prev_info_min = 0.0;
        let mut prev_p_inv = state.p_inv().clone();
        let mut prev_p_bar_inv = state.p_bar_inv().clone();
        for k in 0..500 {
            let spec = random_quantizer(&mut rng);
            let phi = vec2(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let y = spec.quantize(phi.dot(&theta_true) + GAUSS5.sample(&mut rng));
            let obs = Observation::new(phi, y, spec).unwrap();
            let diag = state.update(&obs, &config).unwrap();

            assert!(diag.v.abs() <= 2.0 && diag.v_bar.abs() <= 2.0);
            assert!(diag.beta_bar > 0.0 && diag.beta >= 0.0);
            assert!(diag.a_bar > 0.0 && diag.a_bar <= 1.0 / config.mu_bar);
            assert!(diag.a > 0.0 && diag.a <= 1.0 / config.mu);

            assert!(config.domain.contains(state.theta()));
            assert!(config.domain.contains(state.theta_bar()));

            // the two forms stay inverses of each other
            let id_err = (state.p() * state.p_inv() - DMatrix::identity(2, 2)).amax();
            let id_err_bar =
                (state.p_bar() * state.p_bar_inv() - DMatrix::identity(2, 2)).amax();
            assert!(id_err <= 1e-8 && id_err_bar <= 1e-8, "step {k}: {id_err} {id_err_bar}");

            // the inverses and info grow in the PSD order
            let info_min = nalgebra::SymmetricEigen::new(state.info().clone())
                .eigenvalues
                .min();
            assert!(info_min >= prev_info_min - 1e-9);
            prev_info_min = info_min;
            for (new, old) in [
                (state.p_inv(), &mut prev_p_inv),
                (state.p_bar_inv(), &mut prev_p_bar_inv),
            ] {
                let growth_min = nalgebra::SymmetricEigen::new(new - &*old)
                    .eigenvalues
                    .min();
                assert!(growth_min >= -1e-12, "step {k}: inverse shrank by {growth_min}");
                *old = new.clone();
            }
        }
        assert_eq!(state.step_count(), 500);
    }

    #[test]
    fn covariance_collapse_trips_the_guard() {
        let domain = unit_box(2);
        let mut theta = vec2(0.0, 0.0);
        let mut p = DMatrix::identity(2, 2);
        let mut p_inv = DMatrix::identity(2, 2);
        // mu near zero drives the updated diagonal to mu/(mu + beta) << floor
        let err = quasi_newton_step(
            &mut theta,
            &mut p,
            &mut p_inv,
            &vec2(1.0, 0.0),
            0.1,
            1.0,
            1e-300,
            &domain,
        )
        .unwrap_err();
        assert!(matches!(err, EstimatorError::Numerical(_)), "{err}");
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn update_panics_on_dimension_mismatch() {
        let config = config2();
        let mut state = AdaState::with_defaults(&config).unwrap();
        let obs = Observation::new(DVector::zeros(3), 1, q(&[0.5])).unwrap();
        let _ = state.update(&obs, &config);
    }

    #[test]
    fn observation_validation() {
        let spec = q(&[0.5]);
        assert!(Observation::new(vec2(f64::NAN, 0.0), 1, spec.clone()).is_err());
        assert!(Observation::new(vec2(0.0, 0.0), 0, spec.clone()).is_err());
        assert!(Observation::new(vec2(0.0, 0.0), 3, spec.clone()).is_err());
        assert!(Observation::new(vec2(0.0, 0.0), 2, spec).is_ok());
    }

    #[test]
    fn config_validation() {
        let mut config = config2();
        assert!(config.validate().is_ok());
        config.mu = 0.0;
        assert!(config.validate().is_err());
        config.mu = 1.0;
        config.noise = NoiseModel::Gaussian { sigma: -2.0 };
        assert!(config.validate().is_err());
    }

    #[test]
    fn initial_state_must_lie_in_the_domain() {
        let config = config2();
        assert!(AdaState::new(&config, vec2(2.0, 0.0), DMatrix::identity(2, 2)).is_err());
        assert!(AdaState::new(&config, vec2(1.0, 0.0), DMatrix::identity(2, 2)).is_ok());
        // defaults clamp zero onto shifted boxes
        let shifted = AdaConfig::new(
            GAUSS5,
            BoxDomain::new(vec2(2.0, 2.0), vec2(3.0, 3.0)).unwrap(),
        );
        let state = AdaState::with_defaults(&shifted).unwrap();
        assert_eq!(state.theta(), &vec2(2.0, 2.0));
    }
}
