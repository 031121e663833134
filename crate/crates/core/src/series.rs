//! Return series data model, CSV ingestion and synthetic generation.
//!
//! All series hold simple per-period returns. Timestamps are ordered
//! calendar dates used only as labels; there is no trading-calendar logic.

use std::path::Path;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Periods per year used for every annualization in the crate.
pub const PERIODS_PER_YEAR: f64 = 252.0;

/// First label assigned to synthetic series; later steps advance one day each.
const SYNTH_EPOCH: (i32, u32, u32) = (2000, 1, 3);

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("row {row}: cannot parse date '{value}'")]
    BadDate { row: usize, value: String },
    #[error("row {row}: cannot parse number '{value}'")]
    BadNumber { row: usize, value: String },
    #[error("row {row}: date {date} does not follow the previous date")]
    NonMonotoneDate { row: usize, date: NaiveDate },
    #[error("row {row}: price {value} is not positive")]
    NonPositivePrice { row: usize, value: f64 },
    #[error("row {row}: return {value} is not above -1")]
    ReturnOutOfRange { row: usize, value: f64 },
    #[error("timestamps and values differ in length ({timestamps} vs {values})")]
    LengthMismatch { timestamps: usize, values: usize },
    #[error("need at least {needed} rows, found {found}")]
    TooShort { needed: usize, found: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSynth(String),
}

/// Time-indexed sequence of simple returns for one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    timestamps: Vec<NaiveDate>,
    values: Vec<f64>,
    label: String,
}

impl ReturnSeries {
    /// Builds a series, checking that dates strictly increase and every
    /// return is finite and above -1. Reported row numbers are 0-based
    /// positions in `values`.
    pub fn new(
        label: impl Into<String>,
        timestamps: Vec<NaiveDate>,
        values: Vec<f64>,
    ) -> Result<Self, SeriesError> {
        if timestamps.len() != values.len() {
            return Err(SeriesError::LengthMismatch {
                timestamps: timestamps.len(),
                values: values.len(),
            });
        }
        for (row, pair) in timestamps.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(SeriesError::NonMonotoneDate {
                    row: row + 1,
                    date: pair[1],
                });
            }
        }
        for (row, &value) in values.iter().enumerate() {
            if !value.is_finite() || value <= -1.0 {
                return Err(SeriesError::ReturnOutOfRange { row, value });
            }
        }
        Ok(Self {
            timestamps,
            values,
            label: label.into(),
        })
    }

    /// Series labelled with consecutive synthetic dates.
    pub fn from_values(label: impl Into<String>, values: Vec<f64>) -> Result<Self, SeriesError> {
        let timestamps = synthetic_dates(values.len());
        Self::new(label, timestamps, values)
    }

    /// Constant per-period return on the given dates.
    pub fn constant(label: impl Into<String>, timestamps: Vec<NaiveDate>, value: f64) -> Result<Self, SeriesError> {
        let values = vec![value; timestamps.len()];
        Self::new(label, timestamps, values)
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sub-series over `range` of positions.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            timestamps: self.timestamps[range.clone()].to_vec(),
            values: self.values[range].to_vec(),
            label: self.label.clone(),
        }
    }

    /// Compounds the returns from `start`, giving one more value than returns.
    pub fn compound_from(&self, start: f64) -> Vec<f64> {
        let mut path = Vec::with_capacity(self.values.len() + 1);
        let mut level = start;
        path.push(level);
        for r in &self.values {
            level *= 1.0 + r;
            path.push(level);
        }
        path
    }

    /// Restricts both series to the dates they share.
    pub fn align(a: &ReturnSeries, b: &ReturnSeries) -> (ReturnSeries, ReturnSeries) {
        let (mut i, mut j) = (0, 0);
        let (mut ai, mut bi) = (Vec::new(), Vec::new());
        while i < a.len() && j < b.len() {
            match a.timestamps[i].cmp(&b.timestamps[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    ai.push(i);
                    bi.push(j);
                    i += 1;
                    j += 1;
                }
            }
        }
        let pick = |s: &ReturnSeries, idx: &[usize]| ReturnSeries {
            timestamps: idx.iter().map(|&k| s.timestamps[k]).collect(),
            values: idx.iter().map(|&k| s.values[k]).collect(),
            label: s.label.clone(),
        };
        (pick(a, &ai), pick(b, &bi))
    }
}

/// `n` consecutive daily labels starting at a fixed epoch.
pub fn synthetic_dates(n: usize) -> Vec<NaiveDate> {
    let (y, m, d) = SYNTH_EPOCH;
    let start = NaiveDate::from_ymd_opt(y, m, d).expect("valid epoch");
    start.iter_days().take(n).collect()
}

/// Converts a price path into simple returns `p_k / p_{k-1} - 1`.
pub fn prices_to_returns(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
}

/// Per-period simple return from an annualized percentage rate.
pub fn annual_rate_to_period(rate_percent: f64) -> f64 {
    rate_percent / 100.0 / PERIODS_PER_YEAR
}

/// How the value column of a CSV file is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ValueKind {
    /// Positive prices, converted to returns (one fewer row).
    Price,
    /// Simple per-period returns, passed through.
    Return,
    /// Annualized percentage rate, de-annualized by `rate / 100 / 252`.
    AnnualRate,
}

/// Reads one value column of a headed CSV file into a return series.
///
/// Row numbers in errors are 1-based data rows (the header is row 0).
pub fn load_csv(
    path: &Path,
    date_column: &str,
    value_column: &str,
    kind: ValueKind,
) -> Result<ReturnSeries, SeriesError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| SeriesError::Io {
        path: display.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let csv_err = |e: csv::Error| SeriesError::Csv {
        path: display.clone(),
        message: e.to_string(),
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| SeriesError::MissingColumn(name.to_string()))
    };
    let date_idx = find(date_column)?;
    let value_idx = find(value_column)?;

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut raw: Vec<f64> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(csv_err)?;
        let date_text = record.get(date_idx).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(date_text, "%Y-%m-%d").map_err(|_| SeriesError::BadDate {
            row,
            value: date_text.to_string(),
        })?;
        if let Some(&prev) = dates.last() {
            if date <= prev {
                return Err(SeriesError::NonMonotoneDate { row, date });
            }
        }
        let value_text = record.get(value_idx).unwrap_or("").trim();
        let value: f64 = value_text
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| SeriesError::BadNumber {
                row,
                value: value_text.to_string(),
            })?;
        match kind {
            ValueKind::Price if value <= 0.0 => {
                return Err(SeriesError::NonPositivePrice { row, value });
            }
            ValueKind::Return if value <= -1.0 => {
                return Err(SeriesError::ReturnOutOfRange { row, value });
            }
            _ => {}
        }
        dates.push(date);
        raw.push(value);
    }

    let label = value_column.to_string();
    match kind {
        ValueKind::Price => {
            if raw.len() < 2 {
                return Err(SeriesError::TooShort {
                    needed: 2,
                    found: raw.len(),
                });
            }
            let returns = prices_to_returns(&raw);
            ReturnSeries::new(label, dates[1..].to_vec(), returns)
        }
        ValueKind::Return => ReturnSeries::new(label, dates, raw),
        ValueKind::AnnualRate => {
            let returns = raw.into_iter().map(annual_rate_to_period).collect();
            ReturnSeries::new(label, dates, returns)
        }
    }
}

/// Writes a series as `date,<label>` rows.
pub fn write_csv(series: &ReturnSeries, path: &Path) -> Result<(), SeriesError> {
    let display = path.display().to_string();
    let mut writer = csv::Writer::from_path(path).map_err(|e| SeriesError::Csv {
        path: display.clone(),
        message: e.to_string(),
    })?;
    let to_err = |e: csv::Error| SeriesError::Csv {
        path: display.clone(),
        message: e.to_string(),
    };
    writer.write_record(["date", series.label()]).map_err(to_err)?;
    for (date, value) in series.timestamps.iter().zip(&series.values) {
        writer
            .write_record([date.format("%Y-%m-%d").to_string(), format!("{value:?}")])
            .map_err(to_err)?;
    }
    writer.flush().map_err(|e| SeriesError::Io {
        path: display,
        source: e,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SynthKind {
    IidNormal,
    RegimeSwitch,
}

/// Recipe for a synthetic return series. All quantities are per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub mean: f64,
    pub vols: Vec<f64>,
    /// Steps at which the next regime in `vols` becomes active.
    pub switch_points: Vec<usize>,
    pub length: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn iid_normal(mean: f64, vol: f64, length: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::IidNormal,
            mean,
            vols: vec![vol],
            switch_points: Vec::new(),
            length,
            seed,
        }
    }

    pub fn regime_switch(mean: f64, vols: Vec<f64>, switch_points: Vec<usize>, length: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::RegimeSwitch,
            mean,
            vols,
            switch_points,
            length,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SeriesError> {
        let bad = |m: &str| Err(SeriesError::InvalidSynth(m.to_string()));
        if !self.mean.is_finite() || self.mean <= -1.0 {
            return bad("mean must be finite and above -1");
        }
        if self.vols.is_empty() {
            return bad("at least one vol is required");
        }
        // Zero vol is allowed: it yields a constant series, which tests rely on.
        if self.vols.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("vols must be finite and non-negative");
        }
        if self.switch_points.windows(2).any(|w| w[1] <= w[0]) {
            return bad("switch points must be strictly increasing");
        }
        if self.switch_points.iter().any(|&s| s >= self.length) {
            return bad("switch points must be below the length");
        }
        match self.kind {
            SynthKind::IidNormal => {
                if self.vols.len() != 1 || !self.switch_points.is_empty() {
                    return bad("IID_NORMAL takes exactly one vol and no switch points");
                }
            }
            SynthKind::RegimeSwitch => {
                if self.vols.len() != self.switch_points.len() + 1 {
                    return bad("REGIME_SWITCH needs one more vol than switch points");
                }
            }
        }
        Ok(())
    }

    /// Vol of the regime active at `step`.
    pub fn vol_at(&self, step: usize) -> f64 {
        let regime = self.switch_points.iter().take_while(|&&s| s <= step).count();
        self.vols[regime]
    }
}

/// Portable seeded generator used for every random draw in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `mean + vol * z` with `z` standard normal, redrawing the rare
/// value that would fall at or below -1.
pub(crate) fn draw_return(rng: &mut ChaCha8Rng, mean: f64, vol: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let r = mean + vol * z;
        if r > -1.0 {
            return r;
        }
    }
}

/// Generates a synthetic return series; identical specs give identical output.
pub fn generate(spec: &SynthSpec) -> Result<ReturnSeries, SeriesError> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let mut regime = 0;
    let mut values = Vec::with_capacity(spec.length);
    for step in 0..spec.length {
        while regime < spec.switch_points.len() && spec.switch_points[regime] <= step {
            regime += 1;
        }
        values.push(draw_return(&mut rng, spec.mean, spec.vols[regime]));
    }
    let label = match spec.kind {
        SynthKind::IidNormal => "synthetic_iid",
        SynthKind::RegimeSwitch => "synthetic_regime",
    };
    ReturnSeries::from_values(label, values)
}
