//! Sequential simulation of a volatility-targeted index.
//!
//! Row `i` of a run observes the risky and risk-free returns at `i`, accrues
//! the index return earned by the weights decided at `i - 1`, updates both
//! EWMA estimators and then decides the weights for the next period. Row 0
//! has no index return; its weights are the initial allocation.
//!
//! Transaction costs: the rebalance decided at row `i` costs
//! `rate * |w_i - w_{i-1}|` where `rate` is half (or all) of the quoted
//! spread. The cost is recorded on row `i` and deducted from the index return
//! of row `i + 1`, the first return earned on the post-trade holdings. This
//! keeps each weight decision a function of returns already booked.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimatorError, EwmaState};
use crate::policy::{
    control_weights, open_loop_weights, tracking_error, ControllerConfig, ControllerState, PolicyError, TargetSpec,
    Weights,
};
use crate::series::{ReturnSeries, SeriesError, PERIODS_PER_YEAR};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("series are not aligned: {0}")]
    Misaligned(String),
    #[error("series has {len} rows, need more than the {warmup} warmup steps")]
    InsufficientLength { len: usize, warmup: usize },
    #[error("row {row} ({date}): {source}")]
    Policy {
        row: usize,
        date: NaiveDate,
        #[source]
        source: PolicyError,
    },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("writing {path}: {message}")]
    Output { path: String, message: String },
}

/// How a quoted bid-ask spread maps to the cost of one rebalance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CostConvention {
    /// Each trade crosses half the quoted spread.
    #[default]
    HalfSpread,
    /// Each trade pays the full quoted spread.
    FullSpread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub target: TargetSpec,
    pub estimator_halflife: f64,
    /// `None` runs the open-loop policy throughout.
    pub controller: Option<ControllerConfig>,
    /// Rows decided open-loop (with kappa held at zero) before control engages.
    pub warmup_steps: usize,
    pub spread_bps: f64,
    #[serde(default)]
    pub cost_convention: CostConvention,
}

impl BacktestConfig {
    /// Open-loop config with the reference protocol's estimator, warmup and spread.
    pub fn open_loop(target: TargetSpec) -> Self {
        Self {
            target,
            estimator_halflife: 126.0,
            controller: None,
            warmup_steps: 10,
            spread_bps: 5.0,
            cost_convention: CostConvention::HalfSpread,
        }
    }

    pub fn controlled(target: TargetSpec, controller: ControllerConfig) -> Self {
        Self {
            controller: Some(controller),
            ..Self::open_loop(target)
        }
    }

    pub fn validate(&self) -> Result<(), BacktestError> {
        self.target
            .validate()
            .map_err(|e| BacktestError::Config(e.to_string()))?;
        if let Some(c) = &self.controller {
            c.validate().map_err(|e| BacktestError::Config(e.to_string()))?;
        }
        if !(self.estimator_halflife.is_finite() && self.estimator_halflife > 0.0) {
            return Err(BacktestError::Config(format!(
                "halflife must be positive, got {}",
                self.estimator_halflife
            )));
        }
        if self.warmup_steps < 1 {
            return Err(BacktestError::Config("warmup_steps must be at least 1".into()));
        }
        if !(self.spread_bps.is_finite() && self.spread_bps >= 0.0) {
            return Err(BacktestError::Config(format!(
                "spread_bps must be non-negative, got {}",
                self.spread_bps
            )));
        }
        Ok(())
    }

    /// Fraction of traded notional paid per unit of weight change.
    pub fn cost_rate(&self) -> f64 {
        let bps = match self.cost_convention {
            CostConvention::HalfSpread => self.spread_bps / 2.0,
            CostConvention::FullSpread => self.spread_bps,
        };
        bps / 1e4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub date: NaiveDate,
    pub risky_return: f64,
    pub riskfree_return: f64,
    /// Net of the previous row's trade cost. `None` on row 0.
    pub index_return: Option<f64>,
    pub sigma_hat: f64,
    pub sigma_ind_hat: Option<f64>,
    pub tracking_error: Option<f64>,
    pub kappa: f64,
    pub weights: Weights,
    /// Cost of the rebalance decided on this row.
    pub cost: f64,
    /// Whether the feedback policy chose this row's weights.
    pub controlled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub config: BacktestConfig,
    pub risky_label: String,
    pub riskfree_label: String,
    pub steps: Vec<StepRecord>,
}

/// Index return over one period given the weights held through it.
pub fn step_index_return(r_risky: f64, r_rf: f64, prev: &Weights) -> f64 {
    r_risky * prev.risky + r_rf * prev.cash
}

pub fn run(risky: &ReturnSeries, riskfree: &ReturnSeries, cfg: &BacktestConfig) -> Result<BacktestResult, BacktestError> {
    cfg.validate()?;
    if risky.len() != riskfree.len() {
        return Err(BacktestError::Misaligned(format!(
            "risky has {} rows, risk-free has {}",
            risky.len(),
            riskfree.len()
        )));
    }
    if let Some(row) = risky
        .timestamps()
        .iter()
        .zip(riskfree.timestamps())
        .position(|(a, b)| a != b)
    {
        return Err(BacktestError::Misaligned(format!(
            "dates differ at row {row}: {} vs {}",
            risky.timestamps()[row],
            riskfree.timestamps()[row]
        )));
    }
    let n = risky.len();
    if n <= cfg.warmup_steps {
        return Err(BacktestError::InsufficientLength {
            len: n,
            warmup: cfg.warmup_steps,
        });
    }

    let target = cfg.target;
    let cost_rate = cfg.cost_rate();
    let mut risky_vol = EwmaState::with_halflife(cfg.estimator_halflife)?;
    let mut index_vol = EwmaState::with_halflife(cfg.estimator_halflife)?;
    let mut controller = ControllerState::new();
    let mut steps: Vec<StepRecord> = Vec::with_capacity(n);

    for row in 0..n {
        let date = risky.timestamps()[row];
        let r = risky.values()[row];
        let rf = riskfree.values()[row];
        let policy_err = |source| BacktestError::Policy { row, date, source };

        let index_return = steps
            .last()
            .map(|prev| step_index_return(r, rf, &prev.weights) - prev.cost);
        risky_vol.update(r);
        if let Some(ri) = index_return {
            index_vol.update(ri);
        }
        let sigma_hat = risky_vol.estimate()?;
        let sigma_ind_hat = index_return.map(|_| index_vol.estimate()).transpose()?;
        let error = match sigma_ind_hat {
            Some(s) if s > 0.0 => Some(tracking_error(s, &target).map_err(policy_err)?),
            _ => None,
        };

        let engaged = row >= cfg.warmup_steps;
        let (weights, controlled) = match (&cfg.controller, engaged) {
            (Some(c), true) => {
                let e = match error {
                    Some(e) => e,
                    None => return Err(policy_err(PolicyError::NonPositiveVol(sigma_ind_hat.unwrap_or(0.0)))),
                };
                controller = controller.update(c, e);
                (control_weights(&target, &controller, sigma_hat).map_err(policy_err)?, true)
            }
            _ => (open_loop_weights(&target, sigma_hat).map_err(policy_err)?, false),
        };
        let cost = steps
            .last()
            .map_or(0.0, |prev| cost_rate * (weights.risky - prev.weights.risky).abs());

        steps.push(StepRecord {
            date,
            risky_return: r,
            riskfree_return: rf,
            index_return,
            sigma_hat,
            sigma_ind_hat,
            tracking_error: error,
            kappa: controller.kappa,
            weights,
            cost,
            controlled,
        });
    }

    Ok(BacktestResult {
        config: cfg.clone(),
        risky_label: risky.label().to_string(),
        riskfree_label: riskfree.label().to_string(),
        steps,
    })
}

/// CSV column order of [`BacktestResult::write_csv`].
pub const TRAJECTORY_COLUMNS: [&str; 14] = [
    "date",
    "risky_return",
    "riskfree_return",
    "index_return",
    "risky_weight",
    "cash_weight",
    "sigma_hat",
    "sigma_ind_hat",
    "sigma_hat_annualized",
    "sigma_ind_hat_annualized",
    "tracking_error",
    "kappa",
    "cost",
    "controlled",
];

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

impl BacktestResult {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Index returns from row 1 on.
    pub fn index_returns(&self) -> Vec<f64> {
        self.steps.iter().filter_map(|s| s.index_return).collect()
    }

    pub fn index_series(&self) -> Result<ReturnSeries, SeriesError> {
        let rows = &self.steps[1..];
        ReturnSeries::new(
            "index",
            rows.iter().map(|s| s.date).collect(),
            rows.iter().map(|s| s.index_return.unwrap_or(0.0)).collect(),
        )
    }

    /// Risky returns over the same rows as [`BacktestResult::index_series`].
    pub fn risky_series(&self) -> Result<ReturnSeries, SeriesError> {
        let rows = &self.steps[1..];
        ReturnSeries::new(
            self.risky_label.clone(),
            rows.iter().map(|s| s.date).collect(),
            rows.iter().map(|s| s.risky_return).collect(),
        )
    }

    pub fn riskfree_series(&self) -> Result<ReturnSeries, SeriesError> {
        let rows = &self.steps[1..];
        ReturnSeries::new(
            self.riskfree_label.clone(),
            rows.iter().map(|s| s.date).collect(),
            rows.iter().map(|s| s.riskfree_return).collect(),
        )
    }

    pub fn risky_weights(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.weights.risky).collect()
    }

    /// Sum of absolute changes between consecutive decided risky weights.
    pub fn turnover(&self) -> f64 {
        self.steps
            .windows(2)
            .map(|w| (w[1].weights.risky - w[0].weights.risky).abs())
            .sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), csv::Error> {
        let sqrt_year = PERIODS_PER_YEAR.sqrt();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRAJECTORY_COLUMNS)?;
        for s in &self.steps {
            w.write_record([
                s.date.format("%Y-%m-%d").to_string(),
                fmt_f64(s.risky_return),
                fmt_f64(s.riskfree_return),
                fmt_opt(s.index_return),
                fmt_f64(s.weights.risky),
                fmt_f64(s.weights.cash),
                fmt_f64(s.sigma_hat),
                fmt_opt(s.sigma_ind_hat),
                fmt_f64(s.sigma_hat * sqrt_year),
                fmt_opt(s.sigma_ind_hat.map(|v| v * sqrt_year)),
                fmt_opt(s.tracking_error),
                fmt_f64(s.kappa),
                fmt_f64(s.cost),
                s.controlled.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<(), BacktestError> {
        let output_err = |message: String| BacktestError::Output {
            path: path.display().to_string(),
            message,
        };
        let file = std::fs::File::create(path).map_err(|e| output_err(e.to_string()))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| output_err(e.to_string()))
    }
}
