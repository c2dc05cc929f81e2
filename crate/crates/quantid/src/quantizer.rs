//! The saturation map that turns a real-valued signal into a quantization level.
//!
//! A [`QuantizerSpec`] holds `m` ordered thresholds `c_1 <= ... <= c_m` and maps a
//! real input to one of `m + 1` levels. Cells are left-open/right-closed: level 1
//! is `(-inf, c_1]`, level `i` is `(c_{i-1}, c_i]`, level `m + 1` is `(c_m, +inf)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuantizerError {
    #[error("threshold list is empty")]
    Empty,
    #[error("threshold {index} is not finite")]
    NonFinite { index: usize },
    #[error("thresholds decrease at index {index}")]
    Unsorted { index: usize },
    #[error("level {level} out of range 1..={max}")]
    LevelOutOfRange { level: usize, max: usize },
}

/// Ordered thresholds of a non-decreasing saturation map.
///
/// Immutable once constructed; per-step threshold sequences are modeled by
/// supplying a fresh spec with each observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantizerSpec {
    thresholds: Vec<f64>,
}

impl QuantizerSpec {
    pub fn new(thresholds: Vec<f64>) -> Result<Self, QuantizerError> {
        if thresholds.is_empty() {
            return Err(QuantizerError::Empty);
        }
        for (i, c) in thresholds.iter().enumerate() {
            if !c.is_finite() {
                return Err(QuantizerError::NonFinite { index: i });
            }
            if i > 0 && thresholds[i - 1] > *c {
                return Err(QuantizerError::Unsorted { index: i });
            }
        }
        Ok(Self { thresholds })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Number of thresholds `m`.
    pub fn num_thresholds(&self) -> usize {
        self.thresholds.len()
    }

    /// Number of output levels `m + 1`.
    pub fn num_levels(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn lowest_threshold(&self) -> f64 {
        self.thresholds[0]
    }

    pub fn highest_threshold(&self) -> f64 {
        *self.thresholds.last().expect("non-empty by construction")
    }

    /// `max(c_m, -c_1)`, the quantity bounded by the threshold-magnitude cap.
    pub fn magnitude(&self) -> f64 {
        self.highest_threshold().max(-self.lowest_threshold())
    }

    /// Map `x` to its level in `1..=m+1`.
    ///
    /// Equal adjacent thresholds are allowed; the empty cell they create is
    /// resolved by the first matching branch, i.e. the lowest level wins.
    pub fn quantize(&self, x: f64) -> usize {
        // Level = 1 + number of thresholds strictly below x. Right-closed
        // cells fall out of the strict comparison.
        1 + self.thresholds.partition_point(|&c| c < x)
    }

    /// Which cell of the partition `x` falls in.
    ///
    /// Deliberately a second, independent case-split route to the same answer
    /// as [`quantize`](Self::quantize); the estimator's branch selection uses
    /// this one, and the test suite pins the two routes equal.
    pub fn cell_index(&self, x: f64) -> usize {
        let m = self.thresholds.len();
        if x <= self.thresholds[0] {
            return 1;
        }
        for i in 1..m {
            if self.thresholds[i - 1] < x && x <= self.thresholds[i] {
                return i + 1;
            }
        }
        m + 1
    }

    /// Bounds `(lower, upper]` of a cell; the outer cells are unbounded on one
    /// side and report `-inf` / `+inf`.
    pub fn cell_bounds(&self, level: usize) -> Result<(f64, f64), QuantizerError> {
        let m = self.thresholds.len();
        if level < 1 || level > m + 1 {
            return Err(QuantizerError::LevelOutOfRange { level, max: m + 1 });
        }
        let lower = if level == 1 {
            f64::NEG_INFINITY
        } else {
            self.thresholds[level - 2]
        };
        let upper = if level == m + 1 {
            f64::INFINITY
        } else {
            self.thresholds[level - 1]
        };
        Ok((lower, upper))
    }
}

impl TryFrom<Vec<f64>> for QuantizerSpec {
    type Error = QuantizerError;

    fn try_from(thresholds: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(thresholds)
    }
}

impl From<QuantizerSpec> for Vec<f64> {
    fn from(q: QuantizerSpec) -> Self {
        q.thresholds
    }
}
