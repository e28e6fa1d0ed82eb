//! Synthetic exogenous traces: outdoor temperature, solar output,
//! non-shiftable load and a time-of-use price, one row per hour.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::seed::Rng;

/// Header of the trace CSV format.
pub const TRACE_CSV_HEADER: [&str; 5] = ["hour", "renewable_kw", "load_kw", "outdoor_c", "price"];

const HOURS_PER_DAY: usize = 24;
const DAYS_PER_YEAR: f64 = 365.0;

/// Exogenous inputs for one hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub hour_index: usize,
    pub renewable_output_kw: f64,
    pub nonshiftable_load_kw: f64,
    pub outdoor_temp_c: f64,
    pub price_per_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneProfile {
    pub id: u8,
    pub name: String,
    pub temp_mean_c: f64,
    pub temp_seasonal_amplitude_c: f64,
    pub temp_daily_amplitude_c: f64,
    pub temp_noise_c: f64,
    pub solar_peak_kw: f64,
    pub solar_seasonal_swing: f64,
    pub solar_min_clear_fraction: f64,
    pub load_base_kw: f64,
    pub load_morning_peak_kw: f64,
    pub load_evening_peak_kw: f64,
    pub load_noise_fraction: f64,
    pub price_offpeak: f64,
    pub price_peak: f64,
    pub peak_start_hour: usize,
    pub peak_end_hour: usize,
}

impl ZoneProfile {
    pub fn price_at(&self, hour_of_day: usize) -> f64 {
        if (self.peak_start_hour..self.peak_end_hour).contains(&hour_of_day) {
            self.price_peak
        } else {
            self.price_offpeak
        }
    }
}

/// The versioned zone table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneTable {
    pub version: u32,
    #[serde(rename = "zone")]
    pub zones: Vec<ZoneProfile>,
}

pub const ZONE_TABLE_VERSION: u32 = 1;
const BUILTIN_ZONES: &str = include_str!("../../data/zones.toml");

impl ZoneTable {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_ZONES).expect("shipped zone table parses")
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let table: ZoneTable =
            toml::from_str(text).map_err(|e| SimError::InvalidConfig(format!("zone table: {e}")))?;
        if table.version != ZONE_TABLE_VERSION {
            return Err(SimError::InvalidConfig(format!(
                "zone table version {} is not supported (expected {ZONE_TABLE_VERSION})",
                table.version
            )));
        }
        Ok(table)
    }

    pub fn zone(&self, id: u8) -> Result<&ZoneProfile, SimError> {
        self.zones.iter().find(|z| z.id == id).ok_or(SimError::UnknownZone(id))
    }
}

/// Generates `length` hourly rows starting at midnight on January 1.
///
/// Deterministic in `rng`'s state. Solar output is zero outside 06:00–18:00.
pub fn generate_trace(
    zone: &ZoneProfile,
    length: usize,
    solar_scale: f64,
    load_scale: f64,
    rng: &mut Rng,
) -> Result<Vec<TraceRow>, SimError> {
    if length == 0 {
        return Err(SimError::InvalidConfig("trace length must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(length);
    let mut weather = 0.0_f64;
    let mut clear = 1.0_f64;
    for t in 0..length {
        let hod = t % HOURS_PER_DAY;
        let day = (t / HOURS_PER_DAY) as f64;
        if hod == 0 {
            let u: f64 = rng.random();
            clear = zone.solar_min_clear_fraction + (1.0 - zone.solar_min_clear_fraction) * u;
        }
        let z_temp: f64 = rng.sample(StandardNormal);
        let z_load: f64 = rng.sample(StandardNormal);

        weather = 0.97 * weather + zone.temp_noise_c * z_temp;
        let seasonal = -zone.temp_seasonal_amplitude_c * (2.0 * PI * (day - 15.0) / DAYS_PER_YEAR).cos();
        let diurnal = zone.temp_daily_amplitude_c * (2.0 * PI * (hod as f64 - 15.0) / 24.0).cos();
        let outdoor = zone.temp_mean_c + seasonal + diurnal + weather;

        let solar = if (6..=18).contains(&hod) {
            let bump = (PI * (hod as f64 - 6.0) / 12.0).sin().max(0.0);
            let season = 1.0 + zone.solar_seasonal_swing * (2.0 * PI * (day - 172.0) / DAYS_PER_YEAR).cos();
            zone.solar_peak_kw * solar_scale * season * clear * bump
        } else {
            0.0
        };

        let h = hod as f64;
        let shape = zone.load_base_kw
            + zone.load_morning_peak_kw * (-(h - 8.0).powi(2) / (2.0 * 1.5 * 1.5)).exp()
            + zone.load_evening_peak_kw * (-(h - 19.0).powi(2) / (2.0 * 2.0 * 2.0)).exp();
        let load = (shape * load_scale * (1.0 + zone.load_noise_fraction * z_load)).max(0.0);

        rows.push(TraceRow {
            hour_index: t,
            renewable_output_kw: solar,
            nonshiftable_load_kw: load,
            outdoor_temp_c: outdoor,
            price_per_kwh: zone.price_at(hod),
        });
    }
    Ok(rows)
}

pub fn write_trace_csv<W: Write>(writer: W, rows: &[TraceRow]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_CSV_HEADER)?;
    for r in rows {
        w.write_record(&[
            r.hour_index.to_string(),
            r.renewable_output_kw.to_string(),
            r.nonshiftable_load_kw.to_string(),
            r.outdoor_temp_c.to_string(),
            r.price_per_kwh.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRow>, SimError> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().ne(TRACE_CSV_HEADER) {
        return Err(SimError::InvalidTrace(format!(
            "expected header `{}`, found `{}`",
            TRACE_CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64, SimError> {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| SimError::InvalidTrace(format!("row {i}, column {}: {e}", TRACE_CSV_HEADER[k])))
        };
        let hour: usize = rec[0]
            .trim()
            .parse()
            .map_err(|e| SimError::InvalidTrace(format!("row {i}, column hour: {e}")))?;
        if hour != i {
            return Err(SimError::InvalidTrace(format!("row {i} has hour {hour}; rows must be consecutive from 0")));
        }
        let row = TraceRow {
            hour_index: hour,
            renewable_output_kw: num(1)?,
            nonshiftable_load_kw: num(2)?,
            outdoor_temp_c: num(3)?,
            price_per_kwh: num(4)?,
        };
        if row.renewable_output_kw < 0.0 || row.nonshiftable_load_kw < 0.0 || row.price_per_kwh <= 0.0 {
            return Err(SimError::InvalidTrace(format!("row {i}: negative power or non-positive price")));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(SimError::InvalidTrace("trace has no rows".into()));
    }
    Ok(rows)
}
