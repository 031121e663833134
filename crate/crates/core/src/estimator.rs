//! Bias-corrected EWMA estimate of per-period volatility.
//!
//! The squared estimate after `k` returns is
//! `(1 - b) / (1 - b^k) * sum_j b^(k-j) r_j^2` with decay `b = exp(-ln 2 / h)`.
//! Returns are squared without demeaning. The state keeps the weighted sum
//! and the weight normalizer as running recurrences, so long series never
//! form `b^k` explicitly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("halflife must be positive and finite, got {0}")]
    InvalidHalflife(f64),
    #[error("no returns observed yet")]
    Empty,
}

/// Decay factor for a halflife in periods.
pub fn decay_from_halflife(halflife: f64) -> Result<f64, EstimatorError> {
    if !(halflife.is_finite() && halflife > 0.0) {
        return Err(EstimatorError::InvalidHalflife(halflife));
    }
    Ok((-std::f64::consts::LN_2 / halflife).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EwmaParams {
    halflife: f64,
    decay: f64,
}

impl EwmaParams {
    pub fn new(halflife: f64) -> Result<Self, EstimatorError> {
        let decay = decay_from_halflife(halflife)?;
        Ok(Self { halflife, decay })
    }

    pub fn halflife(&self) -> f64 {
        self.halflife
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EwmaState {
    params: EwmaParams,
    weighted_sum: f64,
    weight_norm: f64,
    count: u64,
}

impl EwmaState {
    pub fn new(params: EwmaParams) -> Self {
        Self {
            params,
            weighted_sum: 0.0,
            weight_norm: 0.0,
            count: 0,
        }
    }

    pub fn with_halflife(halflife: f64) -> Result<Self, EstimatorError> {
        Ok(Self::new(EwmaParams::new(halflife)?))
    }

    pub fn params(&self) -> EwmaParams {
        self.params
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn weighted_sum(&self) -> f64 {
        self.weighted_sum
    }

    /// Sum of the current weights, `(1 - b^k) / (1 - b)`.
    pub fn weight_norm(&self) -> f64 {
        self.weight_norm
    }

    /// Folds in one return.
    pub fn update(&mut self, r: f64) {
        let b = self.params.decay;
        self.weighted_sum = b * self.weighted_sum + r * r;
        self.weight_norm = b * self.weight_norm + 1.0;
        self.count += 1;
    }

    /// Copy of the state after folding in `r`.
    #[must_use]
    pub fn updated(mut self, r: f64) -> Self {
        self.update(r);
        self
    }

    pub fn variance(&self) -> Result<f64, EstimatorError> {
        if self.count == 0 {
            return Err(EstimatorError::Empty);
        }
        Ok(self.weighted_sum / self.weight_norm)
    }

    /// Per-period volatility estimate.
    pub fn estimate(&self) -> Result<f64, EstimatorError> {
        self.variance().map(f64::sqrt)
    }
}

/// Running estimates after each of `returns`.
pub fn running_estimates(params: EwmaParams, returns: &[f64]) -> Vec<f64> {
    let mut state = EwmaState::new(params);
    returns
        .iter()
        .map(|&r| {
            state.update(r);
            (state.weighted_sum / state.weight_norm).sqrt()
        })
        .collect()
}
