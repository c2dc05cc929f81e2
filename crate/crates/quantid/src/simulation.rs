//! Scenario generation, trajectory execution, and the metrics the acceptance
//! experiments are built on.
//!
//! Evaluation is strictly prequential: each observation is predicted with the
//! current estimate, the prediction is scored, and only then does the
//! estimator see the observation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::L2State;
use crate::estimator::{AdaConfig, AdaState, EstimatorError, Observation};
use crate::quantizer::QuantizerSpec;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("matrix is asymmetric beyond tolerance")]
    Asymmetric,
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Which estimator drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Ada,
    L2,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Ada => write!(f, "ada"),
            Algorithm::L2 => write!(f, "l2"),
        }
    }
}

/// How regressors are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Components i.i.d. uniform on `[-amplitude, amplitude]`; persistently
    /// exciting.
    IidUniform { amplitude: f64 },
    /// First component constant 1; the rest shrink like `(k+1)^{-alpha}`
    /// times a fresh uniform draw. For `alpha` in (0, 1/2) the information
    /// matrix has `lambda_min ~ k^{1-2 alpha}` against `lambda_max ~ k`, so
    /// the run is excited in the weak logarithmic sense but nowhere near PE.
    DecayingExcitation { alpha: f64 },
    /// First component is the previous prediction rescaled into `[-1, 1]`,
    /// the rest are exogenous uniform draws; a closed-loop stand-in.
    Feedback,
}

/// A reproducible regressor/noise scenario against a known ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub dimension: usize,
    pub steps: usize,
    pub theta_true: DVector<f64>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self, domain: &crate::geometry::BoxDomain) -> Result<(), SimulationError> {
        let err = |msg: String| Err(SimulationError::InvalidScenario(msg));
        if self.dimension == 0 || self.dimension > 64 {
            return err(format!("dimension must be in 1..=64, got {}", self.dimension));
        }
        if self.dimension != domain.dim() {
            return err(format!(
                "dimension {} does not match the domain dimension {}",
                self.dimension,
                domain.dim()
            ));
        }
        if self.theta_true.len() != self.dimension {
            return err(format!(
                "theta_true has {} components, expected {}",
                self.theta_true.len(),
                self.dimension
            ));
        }
        if !domain.contains_interior(&self.theta_true) {
            return err("theta_true must lie strictly inside the domain".into());
        }
        match self.kind {
            ScenarioKind::IidUniform { amplitude } => {
                if !amplitude.is_finite() || amplitude <= 0.0 {
                    return err(format!("amplitude must be positive and finite, got {amplitude}"));
                }
            }
            ScenarioKind::DecayingExcitation { alpha } => {
                if !(alpha > 0.0 && alpha < 0.5) {
                    return err(format!("alpha must lie in (0, 0.5), got {alpha}"));
                }
                if self.dimension < 2 {
                    return err("decaying excitation needs at least 2 dimensions".into());
                }
            }
            ScenarioKind::Feedback => {
                if self.dimension < 2 {
                    return err("feedback scenario needs at least 2 dimensions".into());
                }
            }
        }
        Ok(())
    }
}

/// Draw the regressor for one step. `feedback` is the previous prediction
/// rescaled into `[-1, 1]` (0 before the first prediction); only the feedback
/// scenario reads it.
pub fn generate_regressor(
    kind: &ScenarioKind,
    dimension: usize,
    step: usize,
    rng: &mut StdRng,
    feedback: f64,
) -> DVector<f64> {
    match *kind {
        ScenarioKind::IidUniform { amplitude } => {
            DVector::from_fn(dimension, |_, _| rng.random_range(-amplitude..=amplitude))
        }
        ScenarioKind::DecayingExcitation { alpha } => {
            let scale = ((step + 1) as f64).powf(-alpha);
            DVector::from_fn(dimension, |i, _| {
                if i == 0 {
                    1.0
                } else {
                    scale * rng.random_range(-1.0..=1.0)
                }
            })
        }
        ScenarioKind::Feedback => DVector::from_fn(dimension, |i, _| {
            if i == 0 {
                feedback
            } else {
                rng.random_range(-1.0..=1.0)
            }
        }),
    }
}

/// Level a prediction maps to when rescaled into `[-1, 1]`.
pub fn rescale_level(level: usize, num_thresholds: usize) -> f64 {
    2.0 * (level - 1) as f64 / num_thresholds as f64 - 1.0
}

/// The level an oracle that knows the true parameter would predict; it
/// minimizes the expected absolute level error.
pub fn best_predictor(
    phi: &DVector<f64>,
    theta_true: &DVector<f64>,
    quantizer: &QuantizerSpec,
) -> usize {
    quantizer.quantize(phi.dot(theta_true))
}

/// Absolute level gap between the oracle prediction and the estimate's.
pub fn regret(
    phi: &DVector<f64>,
    theta_true: &DVector<f64>,
    theta_est: &DVector<f64>,
    quantizer: &QuantizerSpec,
) -> usize {
    let best = quantizer.quantize(phi.dot(theta_true));
    let predicted = quantizer.quantize(phi.dot(theta_est));
    best.abs_diff(predicted)
}

/// Extreme eigenvalues of a symmetric matrix via a dense symmetric
/// eigendecomposition. Errors when the input is asymmetric beyond
/// `1e-10 * (1 + max |entry|)`.
pub fn eigen_extremes(matrix: &DMatrix<f64>) -> Result<(f64, f64), SimulationError> {
    let tol = 1e-10 * (1.0 + matrix.amax());
    for i in 0..matrix.nrows() {
        for j in (i + 1)..matrix.ncols() {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > tol {
                return Err(SimulationError::Asymmetric);
            }
        }
    }
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eigenvalues = SymmetricEigen::new(sym).eigenvalues;
    Ok((eigenvalues.min(), eigenvalues.max()))
}

/// One per-step metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: u64,
    /// Squared error of the accelerated estimate.
    pub err_sq: f64,
    /// Squared error of the preliminary estimate (NaN for the l2 baseline).
    pub err_sq_bar: f64,
    /// Extreme eigenvalues of the information matrix, refreshed on a
    /// logarithmic step schedule and carried forward in between.
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Running average of the prediction regret.
    pub avg_regret: f64,
    /// Running fraction of exactly matched levels.
    pub accuracy: f64,
    pub beta: f64,
    /// NaN for the l2 baseline.
    pub beta_bar: f64,
}

/// Full trajectory output. `failure` carries the estimator error message when
/// a run aborted early, with the records up to that point retained.
#[derive(Debug, Clone)]
pub struct TrajectoryMetrics {
    pub records: Vec<StepRecord>,
    pub failure: Option<String>,
    /// Number of steps where the true signal landed exactly on a threshold.
    pub threshold_hits: u64,
    pub final_theta: DVector<f64>,
}

impl TrajectoryMetrics {
    pub fn final_record(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    /// Least-squares slope of `log err_sq` against `log k` over `k >= k_min`;
    /// base-free. `None` when fewer than two usable records exist.
    pub fn rate_slope(&self, k_min: u64) -> Option<f64> {
        let points: Vec<(f64, f64)> = self
            .records
            .iter()
            .filter(|r| r.k >= k_min && r.err_sq > 0.0)
            .map(|r| ((r.k as f64).ln(), r.err_sq.ln()))
            .collect();
        if points.len() < 2 {
            return None;
        }
        let n = points.len() as f64;
        let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (x, y) in points {
            sxx += (x - mean_x) * (x - mean_x);
            sxy += (x - mean_x) * (y - mean_y);
        }
        (sxx > 0.0).then(|| sxy / sxx)
    }
}

enum Runner {
    Ada(AdaState),
    L2(L2State),
}

impl Runner {
    fn predict(&self, phi: &DVector<f64>, quantizer: &QuantizerSpec) -> usize {
        match self {
            Runner::Ada(s) => s.predict(phi, quantizer),
            Runner::L2(s) => s.predict(phi, quantizer),
        }
    }

    /// Returns (beta, beta_bar) with NaN where a layer does not exist.
    fn update(
        &mut self,
        obs: &Observation,
        config: &AdaConfig,
    ) -> Result<(f64, f64), EstimatorError> {
        match self {
            Runner::Ada(s) => {
                let diag = s.update(obs, config)?;
                Ok((diag.beta, diag.beta_bar))
            }
            Runner::L2(s) => {
                let slope = s.update(obs, config)?;
                Ok((slope, f64::NAN))
            }
        }
    }

    fn theta(&self) -> &DVector<f64> {
        match self {
            Runner::Ada(s) => s.theta(),
            Runner::L2(s) => s.theta(),
        }
    }

    fn theta_bar(&self) -> Option<&DVector<f64>> {
        match self {
            Runner::Ada(s) => Some(s.theta_bar()),
            Runner::L2(_) => None,
        }
    }
}

/// Simulate one trajectory: draw the regressor, draw the noise, quantize,
/// score the prediction, then update. Deterministic in the scenario seed.
pub fn run_trajectory(
    scenario: &ScenarioSpec,
    quantizer: &QuantizerSpec,
    config: &AdaConfig,
    algorithm: Algorithm,
) -> Result<TrajectoryMetrics, SimulationError> {
    scenario.validate(&config.domain)?;
    config.validate()?;

    let d = scenario.dimension;
    let mut rng = StdRng::seed_from_u64(scenario.seed);
    let mut runner = match algorithm {
        Algorithm::Ada => Runner::Ada(AdaState::with_defaults(config)?),
        Algorithm::L2 => Runner::L2(L2State::with_defaults(config)?),
    };

    let mut records = Vec::with_capacity(scenario.steps);
    let mut failure = None;
    let mut threshold_hits = 0u64;
    let mut regret_sum = 0u64;
    let mut correct = 0u64;
    let mut feedback = 0.0;
    // information matrix with the default identity prior
    let mut info = DMatrix::<f64>::identity(d, d);
    let mut next_eigen = 1usize;
    let mut lambda = (f64::NAN, f64::NAN);

    for step in 0..scenario.steps {
        let phi = generate_regressor(&scenario.kind, d, step, &mut rng, feedback);
        let eps = config.noise.sample(&mut rng);
        let s_true = phi.dot(&scenario.theta_true);
        if quantizer.thresholds().contains(&s_true) {
            threshold_hits += 1;
        }
        let y = quantizer.quantize(s_true + eps);

        // score before updating
        let predicted = runner.predict(&phi, quantizer);
        let best = quantizer.quantize(s_true);
        regret_sum += best.abs_diff(predicted) as u64;
        correct += u64::from(y == predicted);
        feedback = rescale_level(predicted, quantizer.num_thresholds());

        let obs = Observation::new(phi, y, quantizer.clone())?;
        let (beta, beta_bar) = match runner.update(&obs, config) {
            Ok(betas) => betas,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        info.ger(1.0, &obs.phi, &obs.phi, 1.0);

        let k = step as u64 + 1;
        if step + 1 >= next_eigen || step + 1 == scenario.steps {
            lambda = eigen_extremes(&info)?;
            next_eigen = (step + 1) + ((step + 1) / 4).max(1);
        }
        let err_sq = {
            let diff = runner.theta() - &scenario.theta_true;
            diff.norm_squared()
        };
        let err_sq_bar = runner
            .theta_bar()
            .map_or(f64::NAN, |tb| (tb - &scenario.theta_true).norm_squared());
        records.push(StepRecord {
            k,
            err_sq,
            err_sq_bar,
            lambda_min: lambda.0,
            lambda_max: lambda.1,
            avg_regret: regret_sum as f64 / k as f64,
            accuracy: correct as f64 / k as f64,
            beta,
            beta_bar,
        });
    }

    Ok(TrajectoryMetrics {
        records,
        failure,
        threshold_hits,
        final_theta: runner.theta().clone(),
    })
}

/// One per-row record of a prequential dataset run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub k: u64,
    pub accuracy: f64,
}

/// Output of a prequential pass over a dataset with no ground truth.
#[derive(Debug, Clone)]
pub struct FitMetrics {
    pub records: Vec<FitRecord>,
    pub final_theta: DVector<f64>,
}

impl FitMetrics {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.accuracy)
    }
}

/// Stream labeled rows through the selected estimator: predict, score, update.
/// Rows arrive as `(features, label)`; any upstream error aborts the run.
pub fn run_prequential<I>(
    rows: I,
    quantizer: &QuantizerSpec,
    config: &AdaConfig,
    algorithm: Algorithm,
) -> Result<FitMetrics, SimulationError>
where
    I: IntoIterator<Item = Result<(DVector<f64>, usize), String>>,
{
    config.validate()?;
    let mut runner = match algorithm {
        Algorithm::Ada => Runner::Ada(AdaState::with_defaults(config)?),
        Algorithm::L2 => Runner::L2(L2State::with_defaults(config)?),
    };

    let mut records = Vec::new();
    let mut correct = 0u64;
    for (index, row) in rows.into_iter().enumerate() {
        let (features, label) = row.map_err(SimulationError::Dataset)?;
        let predicted = runner.predict(&features, quantizer);
        correct += u64::from(predicted == label);
        let obs = Observation::new(features, label, quantizer.clone())?;
        runner.update(&obs, config)?;
        let k = index as u64 + 1;
        records.push(FitRecord {
            k,
            accuracy: correct as f64 / k as f64,
        });
    }
    if records.is_empty() {
        return Err(SimulationError::EmptyDataset);
    }
    Ok(FitMetrics {
        records,
        final_theta: runner.theta().clone(),
    })
}
