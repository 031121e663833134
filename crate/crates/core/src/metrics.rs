//! Performance metrics for a backtest or a plain return series.
//!
//! Annualized return is geometric. Sharpe uses the mean arithmetic excess
//! return over the supplied risk-free series, times 252, over the annualized
//! sample volatility. Ratios whose denominator is zero are reported as
//! `None`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::BacktestResult;
use crate::series::{ReturnSeries, PERIODS_PER_YEAR};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty return series")]
    Empty,
    #[error("tracking window starting at {start} is empty (series has {len} rows)")]
    EmptyWindow { start: usize, len: usize },
    #[error("returns and risk-free rates differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Rows over which the vol tracking error is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TrackingWindow {
    /// From the first row decided under the configured policy.
    #[default]
    PostWarmup,
    /// From the first available estimate.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub n_periods: usize,
    /// Mean absolute gap between the running vol estimate and the target, annualized.
    pub tracking_error_mae: f64,
    pub ann_return: f64,
    pub ann_return_arithmetic: f64,
    pub ann_vol: f64,
    pub sharpe: Option<f64>,
    pub kalmar: Option<f64>,
    pub max_drawdown: f64,
    pub turnover: f64,
    pub turnover_per_annum: f64,
}

/// CSV header of [`write_reports_csv`].
pub const REPORT_COLUMNS: [&str; 11] = [
    "label",
    "n_periods",
    "tracking_error_mae",
    "ann_return",
    "ann_return_arithmetic",
    "ann_vol",
    "sharpe",
    "kalmar",
    "max_drawdown",
    "turnover",
    "turnover_per_annum",
];

/// Annualized mean of `|sigma_i - sigma_tar|` over `estimates[window_start..]`.
pub fn vol_tracking_mae(estimates: &[f64], sigma_tar: f64, window_start: usize) -> Result<f64, MetricsError> {
    let window = estimates.get(window_start..).unwrap_or(&[]);
    if window.is_empty() {
        return Err(MetricsError::EmptyWindow {
            start: window_start,
            len: estimates.len(),
        });
    }
    let mae = window.iter().map(|s| (s - sigma_tar).abs()).sum::<f64>() / window.len() as f64;
    Ok(mae * PERIODS_PER_YEAR.sqrt())
}

/// Largest peak-to-trough decline of the value path compounded from 1.
pub fn max_drawdown(returns: &[f64]) -> f64 {
    let mut value = 1.0_f64;
    let mut peak = 1.0_f64;
    let mut worst = 0.0_f64;
    for r in returns {
        value *= 1.0 + r;
        peak = peak.max(value);
        worst = worst.max(1.0 - value / peak);
    }
    worst
}

pub fn max_drawdown_series(series: &ReturnSeries) -> Result<f64, MetricsError> {
    if series.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(max_drawdown(series.values()))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; deviations at round-off level count as zero.
fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    let sd = var.sqrt();
    let scale = xs.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    if sd <= 64.0 * f64::EPSILON * scale {
        0.0
    } else {
        sd
    }
}

/// Geometric annualized return `(prod(1 + r))^(252 / n) - 1`.
pub fn annualized_return(returns: &[f64]) -> f64 {
    let log_growth: f64 = returns.iter().map(|r| r.ln_1p()).sum();
    (log_growth * PERIODS_PER_YEAR / returns.len() as f64).exp_m1()
}

pub fn annualized_vol(returns: &[f64]) -> f64 {
    sample_std(returns) * PERIODS_PER_YEAR.sqrt()
}

pub fn sharpe_ratio(returns: &[f64], riskfree: &[f64]) -> Option<f64> {
    let vol = annualized_vol(returns);
    if vol == 0.0 {
        return None;
    }
    let excess: Vec<f64> = returns.iter().zip(riskfree).map(|(r, f)| r - f).collect();
    Some(mean(&excess) * PERIODS_PER_YEAR / vol)
}

/// Metric set for an arbitrary return series with its own vol estimates.
pub fn report_returns(
    label: &str,
    returns: &[f64],
    riskfree: &[f64],
    vol_estimates: &[f64],
    sigma_tar: f64,
    window_start: usize,
    turnover: f64,
) -> Result<MetricsReport, MetricsError> {
    let n = returns.len();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    if riskfree.len() != n {
        return Err(MetricsError::LengthMismatch(n, riskfree.len()));
    }
    let ann_return = annualized_return(returns);
    let drawdown = max_drawdown(returns);
    Ok(MetricsReport {
        label: label.to_string(),
        n_periods: n,
        tracking_error_mae: vol_tracking_mae(vol_estimates, sigma_tar, window_start)?,
        ann_return,
        ann_return_arithmetic: mean(returns) * PERIODS_PER_YEAR,
        ann_vol: annualized_vol(returns),
        sharpe: sharpe_ratio(returns, riskfree),
        kalmar: (drawdown > 0.0).then(|| ann_return / drawdown),
        max_drawdown: drawdown,
        turnover,
        turnover_per_annum: turnover * PERIODS_PER_YEAR / n as f64,
    })
}

/// First index-return position inside the tracking window.
fn window_start(result: &BacktestResult, window: TrackingWindow) -> usize {
    match window {
        // Index returns start at row 1, so row `w` is position `w - 1`.
        TrackingWindow::PostWarmup => result.config.warmup_steps.saturating_sub(1),
        TrackingWindow::All => 0,
    }
}

/// Metrics of the index produced by a backtest.
pub fn report(result: &BacktestResult, window: TrackingWindow) -> Result<MetricsReport, MetricsError> {
    if result.len() < 2 {
        return Err(MetricsError::Empty);
    }
    let rows = &result.steps[1..];
    let returns: Vec<f64> = rows.iter().map(|s| s.index_return.unwrap_or(0.0)).collect();
    let riskfree: Vec<f64> = rows.iter().map(|s| s.riskfree_return).collect();
    let estimates: Vec<f64> = rows.iter().map(|s| s.sigma_ind_hat.unwrap_or(0.0)).collect();
    report_returns(
        "index",
        &returns,
        &riskfree,
        &estimates,
        result.config.target.sigma_tar,
        window_start(result, window),
        result.turnover(),
    )
}

/// Metrics of the backtest's underlying risky asset held outright, over the
/// same rows as the index, tracked by the backtest's risky vol estimate.
pub fn report_underlying(result: &BacktestResult, window: TrackingWindow) -> Result<MetricsReport, MetricsError> {
    if result.len() < 2 {
        return Err(MetricsError::Empty);
    }
    let rows = &result.steps[1..];
    let returns: Vec<f64> = rows.iter().map(|s| s.risky_return).collect();
    let riskfree: Vec<f64> = rows.iter().map(|s| s.riskfree_return).collect();
    let estimates: Vec<f64> = rows.iter().map(|s| s.sigma_hat).collect();
    report_returns(
        &result.risky_label,
        &returns,
        &riskfree,
        &estimates,
        result.config.target.sigma_tar,
        window_start(result, window),
        0.0,
    )
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

pub fn write_reports_csv(reports: &[MetricsReport], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        w.write_record([
            r.label.clone(),
            r.n_periods.to_string(),
            format!("{:?}", r.tracking_error_mae),
            format!("{:?}", r.ann_return),
            format!("{:?}", r.ann_return_arithmetic),
            format!("{:?}", r.ann_vol),
            fmt_opt(r.sharpe),
            fmt_opt(r.kalmar),
            format!("{:?}", r.max_drawdown),
            format!("{:?}", r.turnover),
            format!("{:?}", r.turnover_per_annum),
        ])?;
    }
    w.flush()?;
    Ok(())
}
