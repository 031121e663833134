//! Weight-selection policies.
//!
//! The open-loop policy scales exposure by `target / sigma_hat`. The
//! controlled policy additionally multiplies the target by `exp(kappa)`, where
//! `kappa` follows the smoothed, clipped proportional law
//! `kappa_k = (1 - theta) * clip(-g * e_k, [kappa_min, kappa_max]) + theta * kappa_{k-1}`
//! driven by the log tracking error `e_k = ln(sigma_ind_hat / target)`.
//! Both cap the risky weight at the leverage limit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("clip bounds out of order: lo {lo} > hi {hi}")]
    InvertedBounds { lo: f64, hi: f64 },
    #[error("volatility estimate must be positive, got {0}")]
    NonPositiveVol(f64),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid controller config: {0}")]
    InvalidController(String),
}

pub fn clip(t: f64, lo: f64, hi: f64) -> Result<f64, PolicyError> {
    if lo > hi {
        return Err(PolicyError::InvertedBounds { lo, hi });
    }
    Ok(if t < lo {
        lo
    } else if t > hi {
        hi
    } else {
        t
    })
}

/// Per-period target volatility and leverage limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub sigma_tar: f64,
    pub leverage_limit: f64,
}

impl TargetSpec {
    pub fn new(sigma_tar: f64, leverage_limit: f64) -> Result<Self, PolicyError> {
        let spec = Self {
            sigma_tar,
            leverage_limit,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.sigma_tar.is_finite() && self.sigma_tar > 0.0) {
            return Err(PolicyError::InvalidTarget(format!(
                "sigma_tar must be positive, got {}",
                self.sigma_tar
            )));
        }
        if !(self.leverage_limit.is_finite() && self.leverage_limit > 0.0) {
            return Err(PolicyError::InvalidTarget(format!(
                "leverage limit must be positive, got {}",
                self.leverage_limit
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub gain: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub smoothing: f64,
    /// Accept `gain == 0` and `smoothing == 0`. Used by tests of the
    /// unsmoothed law and by parameter sweeps that include those edges.
    #[serde(default)]
    pub allow_degenerate: bool,
}

impl ControllerConfig {
    /// Strict constructor: `gain > 0`, `kappa_min < 0 < kappa_max`, `0 < smoothing < 1`.
    pub fn new(gain: f64, kappa_min: f64, kappa_max: f64, smoothing: f64) -> Result<Self, PolicyError> {
        let cfg = Self {
            gain,
            kappa_min,
            kappa_max,
            smoothing,
            allow_degenerate: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Like [`ControllerConfig::new`] but also accepts zero gain and zero smoothing.
    pub fn degenerate(gain: f64, kappa_min: f64, kappa_max: f64, smoothing: f64) -> Result<Self, PolicyError> {
        let cfg = Self {
            gain,
            kappa_min,
            kappa_max,
            smoothing,
            allow_degenerate: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::InvalidController(m));
        let gain_ok = if self.allow_degenerate {
            self.gain >= 0.0
        } else {
            self.gain > 0.0
        };
        if !(self.gain.is_finite() && gain_ok) {
            return bad(format!("gain {} out of range", self.gain));
        }
        if !(self.kappa_min.is_finite() && self.kappa_max.is_finite() && self.kappa_min < 0.0 && self.kappa_max > 0.0)
        {
            return bad(format!(
                "need kappa_min < 0 < kappa_max, got [{}, {}]",
                self.kappa_min, self.kappa_max
            ));
        }
        let smoothing_ok = if self.allow_degenerate {
            (0.0..1.0).contains(&self.smoothing)
        } else {
            self.smoothing > 0.0 && self.smoothing < 1.0
        };
        if !smoothing_ok {
            return bad(format!("smoothing {} out of range", self.smoothing));
        }
        Ok(())
    }
}

/// The evolving control parameter, starting at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub kappa: f64,
}

impl ControllerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One step of the smoothed, clipped proportional law.
    #[must_use]
    pub fn update(self, cfg: &ControllerConfig, tracking_error: f64) -> Self {
        // Bounds are ordered by ControllerConfig validation.
        let proposal = clip(-cfg.gain * tracking_error, cfg.kappa_min, cfg.kappa_max).unwrap_or(0.0);
        let blended = (1.0 - cfg.smoothing) * proposal + cfg.smoothing * self.kappa;
        // The blend is convex; the clamp only absorbs rounding at the bounds.
        Self {
            kappa: blended.clamp(cfg.kappa_min, cfg.kappa_max),
        }
    }
}

/// Risky and cash weights; they sum to one and the risky weight lies in `[0, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub risky: f64,
    pub cash: f64,
}

impl Weights {
    pub fn from_risky(risky: f64) -> Self {
        Self {
            risky,
            cash: 1.0 - risky,
        }
    }

    pub fn all_cash() -> Self {
        Self::from_risky(0.0)
    }
}

fn check_vol(sigma_hat: f64) -> Result<(), PolicyError> {
    if sigma_hat.is_finite() && sigma_hat > 0.0 {
        Ok(())
    } else {
        Err(PolicyError::NonPositiveVol(sigma_hat))
    }
}

pub fn open_loop_weights(spec: &TargetSpec, sigma_hat: f64) -> Result<Weights, PolicyError> {
    check_vol(sigma_hat)?;
    Ok(Weights::from_risky((spec.sigma_tar / sigma_hat).min(spec.leverage_limit)))
}

pub fn control_weights(spec: &TargetSpec, state: &ControllerState, sigma_hat: f64) -> Result<Weights, PolicyError> {
    check_vol(sigma_hat)?;
    let scaled = state.kappa.exp() * spec.sigma_tar / sigma_hat;
    Ok(Weights::from_risky(scaled.min(spec.leverage_limit)))
}

/// Log ratio of the index vol estimate to the target.
pub fn tracking_error(sigma_ind_hat: f64, spec: &TargetSpec) -> Result<f64, PolicyError> {
    check_vol(sigma_ind_hat)?;
    Ok((sigma_ind_hat / spec.sigma_tar).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SIGMA_TAR: f64 = 0.0094491;

    fn spec() -> TargetSpec {
        TargetSpec::new(SIGMA_TAR, 1.5).unwrap()
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clip(2.0, -1.0, 1.0).unwrap(), 1.0);
        assert_eq!(clip(-3.0, -1.0, 1.0).unwrap(), -1.0);
        assert_eq!(clip(0.3, -1.0, 1.0).unwrap(), 0.3);
        assert!(clip(0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn open_loop_cases() {
        let w = open_loop_weights(&spec(), SIGMA_TAR).unwrap();
        assert_eq!(w.risky, 1.0);
        let w = open_loop_weights(&spec(), 0.0188982).unwrap();
        assert!((w.risky - 0.5).abs() < 1e-6 && (w.cash - 0.5).abs() < 1e-6);
        let w = open_loop_weights(&spec(), 0.0031497).unwrap();
        assert_eq!(w.risky, 1.5);
        assert_eq!(w.cash, -0.5);
        assert!(open_loop_weights(&spec(), 0.0).is_err());
        assert!(open_loop_weights(&spec(), -0.01).is_err());
    }

    #[test]
    fn tracking_error_cases() {
        assert_eq!(tracking_error(SIGMA_TAR, &spec()).unwrap(), 0.0);
        assert!((tracking_error(SIGMA_TAR * std::f64::consts::E, &spec()).unwrap() - 1.0).abs() < 1e-15);
        let e = tracking_error(0.0085042, &spec()).unwrap();
        assert!((e + 0.10536).abs() < 1e-4);
        assert!(tracking_error(0.0, &spec()).is_err());
    }

    #[test]
    fn kappa_update_cases() {
        let cfg = ControllerConfig::new(55.0, -1.0, 1.0, 0.6).unwrap();
        let k = ControllerState::new().update(&cfg, -0.01);
        assert!((k.kappa - 0.22).abs() < 1e-15);
        let k = ControllerState::new().update(&cfg, -0.1);
        assert!((k.kappa - 0.4).abs() < 1e-15);
        let k = ControllerState::new().update(&cfg, 0.0);
        assert_eq!(k.kappa, 0.0);
    }

    #[test]
    fn zero_smoothing_is_plain_clip() {
        let cfg = ControllerConfig::degenerate(55.0, -1.0, 1.0, 0.0).unwrap();
        let k = ControllerState { kappa: 0.7 }.update(&cfg, 0.004);
        assert_eq!(k.kappa, -55.0 * 0.004);
        assert!(ControllerConfig::new(55.0, -1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn controller_validation() {
        assert!(ControllerConfig::new(0.0, -1.0, 1.0, 0.5).is_err());
        assert!(ControllerConfig::degenerate(0.0, -1.0, 1.0, 0.5).is_ok());
        assert!(ControllerConfig::new(1.0, 0.0, 1.0, 0.5).is_err());
        assert!(ControllerConfig::new(1.0, -1.0, 0.0, 0.5).is_err());
        assert!(ControllerConfig::new(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(ControllerConfig::new(1.0, -0.2, 3.0, 0.5).is_ok());
    }

    #[test]
    fn control_weight_cases() {
        let s = spec();
        let sigma = 2.0 * SIGMA_TAR;
        let a = control_weights(&s, &ControllerState::new(), sigma).unwrap();
        assert_eq!(a, open_loop_weights(&s, sigma).unwrap());
        let w = control_weights(&s, &ControllerState { kappa: 0.22 }, sigma).unwrap();
        assert!((w.risky - 0.5 * 0.22f64.exp()).abs() < 1e-15);
        assert!((w.risky - 0.623038).abs() < 1e-6);
        let w = control_weights(&s, &ControllerState { kappa: 1.0 }, SIGMA_TAR).unwrap();
        assert_eq!(w.risky, 1.5);
    }

    proptest! {
        #[test]
        fn weights_respect_constraints(sigma_hat in 1e-6f64..1.0, kappa in -1.0f64..1.0) {
            let s = spec();
            for w in [open_loop_weights(&s, sigma_hat).unwrap(),
                      control_weights(&s, &ControllerState { kappa }, sigma_hat).unwrap()] {
                prop_assert!((w.risky + w.cash - 1.0).abs() <= f64::EPSILON);
                prop_assert!(w.risky >= 0.0 && w.risky <= s.leverage_limit);
            }
        }

        #[test]
        fn kappa_stays_in_bounds(
            errors in prop::collection::vec(-5.0f64..5.0, 1..200),
            gain in 0.0f64..200.0,
            theta in 0.0f64..0.99,
            lo in -3.0f64..-0.01,
            hi in 0.01f64..3.0,
        ) {
            let cfg = ControllerConfig::degenerate(gain, lo, hi, theta).unwrap();
            let mut st = ControllerState::new();
            for e in errors {
                st = st.update(&cfg, e);
                prop_assert!(st.kappa >= lo && st.kappa <= hi);
            }
        }

        #[test]
        fn monotone_in_kappa_and_sigma(
            sigma in 1e-4f64..0.1, k1 in -1.0f64..1.0, k2 in -1.0f64..1.0, factor in 1.0f64..3.0
        ) {
            let s = spec();
            let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            let a = control_weights(&s, &ControllerState { kappa: lo }, sigma).unwrap();
            let b = control_weights(&s, &ControllerState { kappa: hi }, sigma).unwrap();
            prop_assert!(a.risky <= b.risky);
            let c = control_weights(&s, &ControllerState { kappa: lo }, sigma * factor).unwrap();
            prop_assert!(c.risky <= a.risky);
            if b.risky < s.leverage_limit && hi > lo {
                prop_assert!(a.risky < b.risky);
            }
        }

        #[test]
        fn error_sign_moves_kappa(e in 1e-4f64..0.01, theta in 0.01f64..0.99) {
            let cfg = ControllerConfig::new(55.0, -1.0, 1.0, theta).unwrap();
            prop_assert!(ControllerState::new().update(&cfg, -e).kappa > 0.0);
            prop_assert!(ControllerState::new().update(&cfg, e).kappa < 0.0);
        }
    }
}
