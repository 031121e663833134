//! Volatility-targeted two-asset indices.
//!
//! An index holds a risky asset and cash. Its risky weight is chosen each
//! period either open-loop, as `min(target / sigma_hat, L)` from an EWMA vol
//! estimate of the risky asset, or by a proportional controller that also
//! feeds back the index's own realized volatility. The crate backtests both,
//! computes the usual performance metrics, quantifies EWMA sampling noise
//! and sweeps the controller's parameters.

pub mod backtest;
pub mod cli;
pub mod estimator;
pub mod metrics;
pub mod policy;
pub mod search;
pub mod series;
pub mod uncertainty;

pub use backtest::{run, BacktestConfig, BacktestError, BacktestResult, CostConvention, StepRecord};
pub use estimator::{decay_from_halflife, EwmaParams, EwmaState};
pub use metrics::{MetricsReport, TrackingWindow};
pub use policy::{ControllerConfig, ControllerState, TargetSpec, Weights};
pub use series::{ReturnSeries, SynthKind, SynthSpec, ValueKind, PERIODS_PER_YEAR};
pub use uncertainty::{ChiApprox, McBandSpec};
