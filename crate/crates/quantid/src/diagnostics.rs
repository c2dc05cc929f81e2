//! Self-contained oracle checks that pin the estimator's probabilistic
//! identities at runtime: the sampled innovation mean against its closed
//! form, the divided-difference gain against the density range it must
//! bracket, and the projection against its variational inequality.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::estimator::{expected_innovation, innovation};
use crate::geometry::{project_weighted, BoxDomain, WeightMatrix};
use crate::noise::NoiseModel;
use crate::quantizer::QuantizerSpec;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub checks: Vec<CheckResult>,
}

impl DiagnosticsReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn random_quantizer(rng: &mut StdRng) -> QuantizerSpec {
    let m = rng.random_range(1..=5);
    let mut thresholds: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    QuantizerSpec::new(thresholds).expect("sorted finite thresholds")
}

/// Monte-Carlo check that the sampled innovation mean matches its closed-form
/// conditional expectation, within `factor * stderr` per tuple.
pub fn innovation_mean_check(
    noise: &NoiseModel,
    tuples: usize,
    draws: usize,
    factor: f64,
    rng: &mut StdRng,
) -> CheckResult {
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    for _ in 0..tuples {
        let d = rng.random_range(1..=4);
        let quantizer = random_quantizer(rng);
        let phi = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let theta_est = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let theta_true = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let s_true = phi.dot(&theta_true);

        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let y = quantizer.quantize(s_true + noise.sample(rng));
            let v = innovation(&phi, &theta_est, y, &quantizer, noise);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / draws as f64;
        let sd = (sum_sq / draws as f64 - mean * mean).max(0.0).sqrt();
        let psi = expected_innovation(&theta_est, &theta_true, &phi, &quantizer, noise);
        let tol = factor * sd / (draws as f64).sqrt() + 1e-12;
        let gap = (mean - psi).abs();
        worst = worst.max(if tol > 0.0 { gap / tol } else { 0.0 });
        if gap > tol {
            failures += 1;
        }
    }
    CheckResult {
        name: "innovation mean vs closed form",
        passed: failures == 0,
        detail: format!(
            "{failures}/{tuples} tuples out of tolerance, worst gap {worst:.3}x the bound"
        ),
    }
}

/// Checks that every divided-difference slope in the accelerated gain lies
/// inside the density range over the interval between its two CDF arguments,
/// as the mean value theorem dictates.
pub fn divided_difference_bracketing_check(
    noise: &NoiseModel,
    cases: usize,
    grid: usize,
    slack: f64,
    rng: &mut StdRng,
) -> CheckResult {
    let mut checked = 0usize;
    let mut failures = 0usize;
    for _ in 0..cases {
        let quantizer = random_quantizer(rng);
        let s: f64 = rng.random_range(-4.0..4.0);
        let s_bar: f64 = rng.random_range(-4.0..4.0);
        let delta = s_bar - s;
        if delta.abs() < 1e-6 * (1.0 + s.abs() + s_bar.abs()) {
            continue;
        }
        for &c in quantizer.thresholds() {
            let dd = (noise.cdf(c - s) - noise.cdf(c - s_bar)) / delta;
            let (lo, hi) = ((c - s).min(c - s_bar), (c - s).max(c - s_bar));
            let mut f_min = f64::INFINITY;
            let mut f_max = f64::NEG_INFINITY;
            for i in 0..=grid {
                let x = lo + (hi - lo) * i as f64 / grid as f64;
                let f = noise.pdf(x);
                f_min = f_min.min(f);
                f_max = f_max.max(f);
            }
            checked += 1;
            if dd < f_min - slack || dd > f_max + slack {
                failures += 1;
            }
        }
    }
    CheckResult {
        name: "divided-difference density bracketing",
        passed: failures == 0,
        detail: format!("{failures}/{checked} slopes escaped the density range"),
    }
}

/// Checks the projection's variational inequality on random boxes, weights,
/// and points: `(x - y*)' A (z - y*) <= tol_scale * 1e-8 * (1 + |x| |A|)`.
pub fn projection_variational_check(
    instances: usize,
    probes: usize,
    tol_scale: f64,
    rng: &mut StdRng,
) -> CheckResult {
    let mut failures = 0usize;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..instances {
        let d = rng.random_range(1..=5);
        let lower = DVector::from_fn(d, |_, _| rng.random_range(-2.0..0.0));
        let upper = DVector::from_fn(d, |_, _| rng.random_range(0.1..2.0));
        let domain = BoxDomain::new(lower, upper).expect("ordered bounds");
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let weight = WeightMatrix::new(&m * m.transpose() + DMatrix::identity(d, d) * 0.1)
            .expect("spd by construction");
        let x = DVector::from_fn(d, |_, _| rng.random_range(-4.0..4.0));
        let y = project_weighted(&x, &weight, &domain);
        let tol = tol_scale * 1e-8 * (1.0 + x.norm() * weight.matrix().norm());
        let residual = weight.matrix() * (&x - &y);
        for _ in 0..probes {
            let z = DVector::from_fn(d, |i, _| {
                rng.random_range(domain.lower()[i]..=domain.upper()[i])
            });
            let vi = residual.dot(&(&z - &y));
            worst = worst.max(vi - tol);
            if vi > tol {
                failures += 1;
            }
        }
    }
    CheckResult {
        name: "projection variational inequality",
        passed: failures == 0,
        detail: format!(
            "{failures}/{} probes violated, worst excess {worst:.3e}",
            instances * probes
        ),
    }
}

/// Run the full suite at the given noise model. `strict` raises the sample
/// sizes and tightens every bound.
pub fn run_diagnostics(noise: &NoiseModel, seed: u64, strict: bool) -> DiagnosticsReport {
    let mut rng = StdRng::seed_from_u64(seed);
    let checks = if strict {
        vec![
            innovation_mean_check(noise, 50, 100_000, 4.0, &mut rng),
            divided_difference_bracketing_check(noise, 5_000, 1_000, 1e-6, &mut rng),
            projection_variational_check(100, 100, 0.1, &mut rng),
        ]
    } else {
        vec![
            innovation_mean_check(noise, 20, 20_000, 5.0, &mut rng),
            divided_difference_bracketing_check(noise, 2_000, 200, 1e-5, &mut rng),
            projection_variational_check(50, 100, 1.0, &mut rng),
        ]
    };
    DiagnosticsReport { checks }
}
