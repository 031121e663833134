//! Sensitivity sweep over controller gain and smoothing.
//!
//! Each `(gain, smoothing)` cell is an independent backtest; cells run in
//! parallel and are assembled in grid order.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{run, BacktestConfig, BacktestError};
use crate::metrics::{report, report_underlying, MetricsError, TrackingWindow};
use crate::policy::ControllerConfig;
use crate::series::ReturnSeries;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("cell (g={gain}, theta={smoothing}): {source}")]
    Backtest {
        gain: f64,
        smoothing: f64,
        #[source]
        source: BacktestError,
    },
    #[error("cell (g={gain}, theta={smoothing}): {source}")]
    Metrics {
        gain: f64,
        smoothing: f64,
        #[source]
        source: MetricsError,
    },
}

/// `{0, e^0, e^0.5, ..., e^5}`: twelve gains.
pub fn default_gains() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..=10).map(|i| (0.5 * i as f64).exp()))
        .collect()
}

/// `{0, 0.1, ..., 0.9}`: ten smoothing factors.
pub fn default_thetas() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub gains: Vec<f64>,
    pub thetas: Vec<f64>,
    /// Controller bounds come from `base.controller` when present, else `[-1, 1]`.
    pub base: BacktestConfig,
    #[serde(default)]
    pub window: TrackingWindow,
}

impl GridSpec {
    pub fn new(base: BacktestConfig) -> Self {
        Self {
            gains: default_gains(),
            thetas: default_thetas(),
            base,
            window: TrackingWindow::PostWarmup,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidGrid(m.to_string()));
        if self.gains.is_empty() {
            return bad("gains list is empty");
        }
        if self.thetas.is_empty() {
            return bad("thetas list is empty");
        }
        if self.gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("gains must be finite and non-negative");
        }
        if self.thetas.iter().any(|t| !(0.0..1.0).contains(t)) {
            return bad("thetas must lie in [0, 1)");
        }
        Ok(())
    }

    fn kappa_bounds(&self) -> (f64, f64) {
        self.base
            .controller
            .map_or((-1.0, 1.0), |c| (c.kappa_min, c.kappa_max))
    }

    /// Backtest config of one cell.
    pub fn cell_config(&self, gain: f64, smoothing: f64) -> BacktestConfig {
        let (kappa_min, kappa_max) = self.kappa_bounds();
        BacktestConfig {
            controller: Some(ControllerConfig {
                gain,
                kappa_min,
                kappa_max,
                smoothing,
                allow_degenerate: true,
            }),
            ..self.base.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub gain: f64,
    pub smoothing: f64,
    pub tracking_error: f64,
    /// Index Kalmar minus the underlying's; absent when either is undefined.
    pub delta_kalmar: Option<f64>,
    pub turnover: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub gains: Vec<f64>,
    pub thetas: Vec<f64>,
    /// Row-major: all thetas for `gains[0]`, then `gains[1]`, ...
    pub cells: Vec<GridCell>,
}

/// Metric names of the long-format output.
pub const GRID_METRICS: [&str; 3] = ["tracking_error", "delta_kalmar", "turnover"];

impl GridResult {
    pub fn cell(&self, gain_idx: usize, theta_idx: usize) -> &GridCell {
        &self.cells[gain_idx * self.thetas.len() + theta_idx]
    }

    /// `metric` as a gains-by-thetas matrix.
    pub fn matrix(&self, metric: &str) -> Vec<Vec<Option<f64>>> {
        (0..self.gains.len())
            .map(|g| {
                (0..self.thetas.len())
                    .map(|t| {
                        let c = self.cell(g, t);
                        match metric {
                            "tracking_error" => Some(c.tracking_error),
                            "delta_kalmar" => c.delta_kalmar,
                            "turnover" => Some(c.turnover),
                            _ => None,
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// One `(g, theta, metric, value)` row per cell and metric.
    pub fn write_long_csv(&self, out: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["g", "theta", "metric", "value"])?;
        for metric in GRID_METRICS {
            for c in &self.cells {
                let value = match metric {
                    "tracking_error" => Some(c.tracking_error),
                    "delta_kalmar" => c.delta_kalmar,
                    _ => Some(c.turnover),
                };
                w.write_record([
                    format!("{:?}", c.gain),
                    format!("{:?}", c.smoothing),
                    metric.to_string(),
                    value.map(|v| format!("{v:?}")).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Axis vectors plus one matrix per metric.
    pub fn to_matrix_json(&self) -> serde_json::Value {
        let mut metrics = serde_json::Map::new();
        for m in GRID_METRICS {
            metrics.insert(m.to_string(), serde_json::json!(self.matrix(m)));
        }
        serde_json::json!({
            "gains": self.gains,
            "thetas": self.thetas,
            "metrics": metrics,
        })
    }
}

fn evaluate_cell(
    risky: &ReturnSeries,
    riskfree: &ReturnSeries,
    spec: &GridSpec,
    gain: f64,
    smoothing: f64,
) -> Result<GridCell, SearchError> {
    let cfg = spec.cell_config(gain, smoothing);
    let result = run(risky, riskfree, &cfg).map_err(|source| SearchError::Backtest {
        gain,
        smoothing,
        source,
    })?;
    let metrics_err = |source| SearchError::Metrics {
        gain,
        smoothing,
        source,
    };
    let index = report(&result, spec.window).map_err(metrics_err)?;
    let underlying = report_underlying(&result, spec.window).map_err(metrics_err)?;
    Ok(GridCell {
        gain,
        smoothing,
        tracking_error: index.tracking_error_mae,
        delta_kalmar: index.kalmar.zip(underlying.kalmar).map(|(a, b)| a - b),
        turnover: index.turnover,
    })
}

pub fn run_grid(risky: &ReturnSeries, riskfree: &ReturnSeries, spec: &GridSpec) -> Result<GridResult, SearchError> {
    spec.validate()?;
    let coords: Vec<(f64, f64)> = spec
        .gains
        .iter()
        .flat_map(|&g| spec.thetas.iter().map(move |&t| (g, t)))
        .collect();
    let cells = coords
        .par_iter()
        .map(|&(g, t)| evaluate_cell(risky, riskfree, spec, g, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GridResult {
        gains: spec.gains.clone(),
        thetas: spec.thetas.clone(),
        cells,
    })
}

/// Spearman rank correlation; ties get their average rank.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                out[k] = avg;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::report;
    use crate::policy::TargetSpec;
    use crate::series::{generate, SynthSpec, PERIODS_PER_YEAR};

    fn inputs() -> (ReturnSeries, ReturnSeries, BacktestConfig) {
        let per = PERIODS_PER_YEAR.sqrt();
        let risky = generate(&SynthSpec::regime_switch(0.0, vec![0.10 / per, 0.30 / per], vec![600], 1200, 3)).unwrap();
        let rf = ReturnSeries::constant("rf", risky.timestamps().to_vec(), 0.00005).unwrap();
        let base = BacktestConfig::open_loop(TargetSpec::new(0.15 / per, 1.5).unwrap());
        (risky, rf, base)
    }

    #[test]
    fn default_axes() {
        let g = default_gains();
        assert_eq!(g.len(), 12);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 1.0);
        assert!((g[11] - 5f64.exp()).abs() < 1e-12);
        let t = default_thetas();
        assert_eq!(t.len(), 10);
        assert_eq!(t[9], 0.9);
    }

    #[test]
    fn zero_gain_cells_equal_open_loop() {
        let (risky, rf, base) = inputs();
        let spec = GridSpec {
            gains: vec![0.0],
            thetas: vec![0.0, 0.3, 0.9],
            ..GridSpec::new(base.clone())
        };
        let grid = run_grid(&risky, &rf, &spec).unwrap();
        let open = report(&run(&risky, &rf, &base).unwrap(), TrackingWindow::PostWarmup).unwrap();
        for c in &grid.cells {
            assert_eq!(c.tracking_error, open.tracking_error_mae);
            assert_eq!(c.turnover, open.turnover);
        }
    }

    #[test]
    fn single_cell_equals_direct_backtest() {
        let (risky, rf, base) = inputs();
        let spec = GridSpec {
            gains: vec![55.0],
            thetas: vec![0.6],
            ..GridSpec::new(base.clone())
        };
        let grid = run_grid(&risky, &rf, &spec).unwrap();
        let direct_cfg = BacktestConfig::controlled(base.target, ControllerConfig::new(55.0, -1.0, 1.0, 0.6).unwrap());
        let direct = run(&risky, &rf, &direct_cfg).unwrap();
        let idx = report(&direct, TrackingWindow::PostWarmup).unwrap();
        assert_eq!(grid.cells[0].tracking_error, idx.tracking_error_mae);
        assert_eq!(grid.cells[0].turnover, idx.turnover);
    }

    #[test]
    fn evaluation_order_does_not_matter() {
        let (risky, rf, base) = inputs();
        let spec = GridSpec {
            gains: vec![1.0, 20.0, 100.0],
            thetas: vec![0.2, 0.7],
            ..GridSpec::new(base)
        };
        let grid = run_grid(&risky, &rf, &spec).unwrap();
        let reversed = GridSpec {
            gains: spec.gains.iter().rev().cloned().collect(),
            thetas: spec.thetas.iter().rev().cloned().collect(),
            ..spec.clone()
        };
        let other = run_grid(&risky, &rf, &reversed).unwrap();
        for gi in 0..3 {
            for ti in 0..2 {
                assert_eq!(grid.cell(gi, ti), other.cell(2 - gi, 1 - ti));
            }
        }
    }

    #[test]
    fn invalid_grids_and_cell_errors() {
        let (risky, rf, base) = inputs();
        let empty = GridSpec {
            gains: vec![],
            ..GridSpec::new(base.clone())
        };
        assert!(matches!(run_grid(&risky, &rf, &empty), Err(SearchError::InvalidGrid(_))));
        let bad_theta = GridSpec {
            thetas: vec![1.0],
            ..GridSpec::new(base.clone())
        };
        assert!(run_grid(&risky, &rf, &bad_theta).is_err());
        let zeros = ReturnSeries::from_values("z", vec![0.0; 50]).unwrap();
        let zrf = ReturnSeries::constant("rf", zeros.timestamps().to_vec(), 0.0).unwrap();
        let spec = GridSpec {
            gains: vec![2.0],
            thetas: vec![0.5],
            ..GridSpec::new(base)
        };
        let err = run_grid(&zeros, &zrf, &spec).unwrap_err();
        assert!(err.to_string().contains("g=2"), "{err}");
    }

    #[test]
    fn long_csv_and_matrix_shapes() {
        let (risky, rf, base) = inputs();
        let spec = GridSpec {
            gains: vec![0.0, 10.0],
            thetas: vec![0.0, 0.5, 0.8],
            ..GridSpec::new(base)
        };
        let grid = run_grid(&risky, &rf, &spec).unwrap();
        let mut buf = Vec::new();
        grid.write_long_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 6);
        let json = grid.to_matrix_json();
        assert_eq!(json["metrics"]["turnover"].as_array().unwrap().len(), 2);
        assert_eq!(json["metrics"]["turnover"][0].as_array().unwrap().len(), 3);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
    }
}
