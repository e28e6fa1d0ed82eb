//! District-level evaluation metrics over hourly net consumption.
//!
//! Calendar: 24-hour days and fixed 720-hour months; trailing partial days
//! and months are dropped from the daily and monthly metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS_PER_DAY: usize = 24;
pub const HOURS_PER_MONTH: usize = 720;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("series too short: need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("series is empty")]
    Empty,
    #[error("baseline metric `{0}` is zero; cannot normalise")]
    DegenerateBaseline(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

fn need(series: &[f64], n: usize) -> Result<(), MetricError> {
    if series.len() < n {
        Err(MetricError::TooShort { needed: n, got: series.len() })
    } else {
        Ok(())
    }
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Sum of absolute hour-to-hour changes.
pub fn ramping(series: &[f64]) -> Result<f64, MetricError> {
    need(series, 2)?;
    Ok(series.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

/// Mean over whole months of `1 - mean / peak`. Months whose peak is not
/// positive contribute 0.
pub fn one_minus_load_factor(series: &[f64]) -> Result<f64, MetricError> {
    need(series, HOURS_PER_MONTH)?;
    let months: Vec<f64> = series
        .chunks_exact(HOURS_PER_MONTH)
        .map(|m| {
            let peak = max_of(m);
            if peak <= 0.0 {
                0.0
            } else {
                1.0 - (m.iter().sum::<f64>() / m.len() as f64) / peak
            }
        })
        .collect();
    Ok(months.iter().sum::<f64>() / months.len() as f64)
}

/// Mean over whole days of the daily maximum.
pub fn avg_daily_peak(series: &[f64]) -> Result<f64, MetricError> {
    need(series, HOURS_PER_DAY)?;
    let peaks: Vec<f64> = series.chunks_exact(HOURS_PER_DAY).map(max_of).collect();
    Ok(peaks.iter().sum::<f64>() / peaks.len() as f64)
}

pub fn annual_peak(series: &[f64]) -> Result<f64, MetricError> {
    if series.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(max_of(series))
}

/// Total non-negative net consumption; exports count as zero.
pub fn net_consumption_total(series: &[f64]) -> Result<f64, MetricError> {
    if series.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(series.iter().map(|e| e.max(0.0)).sum())
}

/// Electricity cost of the non-negative consumption, `sum v * max(e, 0)`.
pub fn electricity_cost(series: &[f64], prices: &[f64]) -> Result<f64, MetricError> {
    if series.len() != prices.len() {
        return Err(MetricError::LengthMismatch(series.len(), prices.len()));
    }
    if series.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(series.iter().zip(prices).map(|(e, v)| v * e.max(0.0)).sum())
}

/// Average cost in percent of the rule-based controller's, averaged over
/// buildings. Each element is `(consumption, prices, rbc_consumption)`.
pub fn average_cost(buildings: &[(&[f64], &[f64], &[f64])]) -> Result<f64, MetricError> {
    if buildings.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut total = 0.0;
    for (series, prices, rbc) in buildings {
        if rbc.len() != series.len() {
            return Err(MetricError::LengthMismatch(series.len(), rbc.len()));
        }
        let cost = electricity_cost(series, prices)?;
        let base = electricity_cost(rbc, prices)?;
        if base == 0.0 {
            return Err(MetricError::DegenerateBaseline("cost"));
        }
        // Ratio first: a controller identical to the reference scores exactly 100.
        total += 100.0 * (cost / base);
    }
    Ok(total / buildings.len() as f64)
}

/// Raw metric values for one building or district.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub ramping: f64,
    pub one_minus_load_factor: f64,
    pub avg_daily_peak: f64,
    pub annual_peak: f64,
    pub net_consumption: f64,
    pub cost: f64,
}

impl ScoreReport {
    pub const NAMES: [&'static str; 6] = [
        "ramping",
        "one_minus_load_factor",
        "avg_daily_peak",
        "annual_peak",
        "net_consumption",
        "cost",
    ];

    pub fn compute(series: &[f64], prices: &[f64]) -> Result<Self, MetricError> {
        Ok(Self {
            ramping: ramping(series)?,
            one_minus_load_factor: one_minus_load_factor(series)?,
            avg_daily_peak: avg_daily_peak(series)?,
            annual_peak: annual_peak(series)?,
            net_consumption: net_consumption_total(series)?,
            cost: electricity_cost(series, prices)?,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [
            self.ramping,
            self.one_minus_load_factor,
            self.avg_daily_peak,
            self.annual_peak,
            self.net_consumption,
            self.cost,
        ]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        Self {
            ramping: v[0],
            one_minus_load_factor: v[1],
            avg_daily_peak: v[2],
            annual_peak: v[3],
            net_consumption: v[4],
            cost: v[5],
        }
    }

    /// Each metric divided by the baseline's.
    pub fn normalize(&self, baseline: &ScoreReport) -> Result<ScoreReport, MetricError> {
        let (a, b) = (self.values(), baseline.values());
        let mut out = [0.0; 6];
        for i in 0..6 {
            if b[i] == 0.0 {
                return Err(MetricError::DegenerateBaseline(Self::NAMES[i]));
            }
            out[i] = a[i] / b[i];
        }
        Ok(Self::from_values(out))
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[ScoreReport]) -> Option<ScoreReport> {
        if reports.is_empty() {
            return None;
        }
        let mut acc = [0.0; 6];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        Some(Self::from_values(acc.map(|a| a / reports.len() as f64)))
    }
}

/// Hour-by-hour sum of several equally long series.
pub fn district_series(series: &[&[f64]]) -> Result<Vec<f64>, MetricError> {
    let first = series.first().ok_or(MetricError::Empty)?;
    let mut out = vec![0.0; first.len()];
    for s in series {
        if s.len() != out.len() {
            return Err(MetricError::LengthMismatch(out.len(), s.len()));
        }
        for (o, v) in out.iter_mut().zip(s.iter()) {
            *o += v;
        }
    }
    Ok(out)
}

/// Daily sums of a series (whole days only).
pub fn daily_totals(series: &[f64]) -> Vec<f64> {
    series.chunks_exact(HOURS_PER_DAY).map(|d| d.iter().sum()).collect()
}
