use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::seed::Rng;

/// Physical parameters of one building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingConfig {
    /// Multiplier on the zone's solar profile (installed PV relative to the zone reference).
    pub solar_scale: f64,
    /// Multiplier on the zone's non-shiftable load profile.
    pub load_scale: f64,
    pub battery_capacity_kwh: f64,
    pub battery_max_power_kw: f64,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    /// Electrical power drawn by the HVAC at a full-scale command.
    pub hvac_max_power_kw: f64,
    pub hvac_cop: f64,
    /// Indoor heating setpoint, °C.
    pub heat_target_c: f64,
    /// Indoor cooling setpoint, °C. Above it the HVAC runs in cooling mode.
    pub cool_target_c: f64,
    /// °C per kW of envelope heat flow.
    pub thermal_resistance: f64,
    /// kWh per °C of indoor thermal mass.
    pub thermal_capacitance: f64,
    /// Heat-pump supply temperature for heating, °C. Carried, does not enter the dynamics.
    pub supply_heating_c: f64,
    /// Heat-pump supply temperature for cooling, °C. Carried, does not enter the dynamics.
    pub supply_cooling_c: f64,
    /// Carried, does not enter the dynamics.
    pub water_heater_efficiency: f64,
    /// Carried, does not enter the dynamics.
    pub dhw_tank_capacity: f64,
}

impl Default for BuildingConfig {
    fn default() -> Self {
        let capacity = 40.0;
        Self {
            solar_scale: 1.0,
            load_scale: 1.0,
            battery_capacity_kwh: capacity,
            battery_max_power_kw: capacity / 4.0,
            charge_efficiency: 0.95,
            discharge_efficiency: 0.95,
            hvac_max_power_kw: 5.0,
            hvac_cop: 3.0,
            heat_target_c: 20.0,
            cool_target_c: 24.0,
            thermal_resistance: 2.0,
            thermal_capacitance: 5.0,
            supply_heating_c: 45.0,
            supply_cooling_c: 8.0,
            water_heater_efficiency: 0.9,
            dhw_tank_capacity: 3.0,
        }
    }
}

impl BuildingConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let non_negative = [
            ("solar_scale", self.solar_scale),
            ("load_scale", self.load_scale),
            ("battery_capacity_kwh", self.battery_capacity_kwh),
            ("battery_max_power_kw", self.battery_max_power_kw),
            ("hvac_max_power_kw", self.hvac_max_power_kw),
            ("hvac_cop", self.hvac_cop),
            ("dhw_tank_capacity", self.dhw_tank_capacity),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let fractions = [
            ("charge_efficiency", self.charge_efficiency),
            ("discharge_efficiency", self.discharge_efficiency),
            ("water_heater_efficiency", self.water_heater_efficiency),
        ];
        for (name, v) in fractions {
            if !(v > 0.0 && v <= 1.0) {
                return Err(SimError::InvalidConfig(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.thermal_resistance > 0.0 && self.thermal_capacitance > 0.0) {
            return Err(SimError::InvalidConfig(
                "thermal_resistance and thermal_capacitance must be positive".into(),
            ));
        }
        // An explicit Euler step longer than the RC time constant overshoots.
        if self.thermal_resistance * self.thermal_capacitance < super::DT_HOURS {
            return Err(SimError::InvalidConfig(format!(
                "thermal time constant R*C = {} h is shorter than the 1 h step",
                self.thermal_resistance * self.thermal_capacitance
            )));
        }
        for (name, v) in [
            ("heat_target_c", self.heat_target_c),
            ("cool_target_c", self.cool_target_c),
            ("supply_heating_c", self.supply_heating_c),
            ("supply_cooling_c", self.supply_cooling_c),
        ] {
            if !v.is_finite() {
                return Err(SimError::InvalidConfig(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Closed interval `[lo, hi]` for one sampled parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
}

impl ParamRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn sample(&self, name: &str, rng: &mut Rng) -> Result<f64, SimError> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(SimError::InvalidRange {
                parameter: name.to_string(),
                lo: self.lo,
                hi: self.hi,
            });
        }
        // Always draw, so that which ranges are degenerate never shifts the stream.
        let u: f64 = rng.random();
        Ok(self.lo + (self.hi - self.lo) * u)
    }
}

/// Per-parameter sampling ranges for [`sample_building_config`].
///
/// `battery_max_power_kw` is not sampled: it follows the sampled capacity at
/// a quarter of the capacity per hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingRanges {
    pub solar_scale: ParamRange,
    pub load_scale: ParamRange,
    pub battery_capacity_kwh: ParamRange,
    pub charge_efficiency: ParamRange,
    pub discharge_efficiency: ParamRange,
    pub hvac_max_power_kw: ParamRange,
    pub hvac_cop: ParamRange,
    pub heat_target_c: ParamRange,
    pub cool_target_c: ParamRange,
    pub thermal_resistance: ParamRange,
    pub thermal_capacitance: ParamRange,
    pub supply_heating_c: ParamRange,
    pub supply_cooling_c: ParamRange,
    pub water_heater_efficiency: ParamRange,
    pub dhw_tank_capacity: ParamRange,
}

impl Default for BuildingRanges {
    fn default() -> Self {
        Self::standard()
    }
}

impl BuildingRanges {
    /// Moderate variation around the defaults: the library of "building
    /// settings" used by the main experiment.
    pub fn standard() -> Self {
        Self {
            solar_scale: ParamRange::new(0.5, 1.5),
            load_scale: ParamRange::new(0.7, 1.3),
            battery_capacity_kwh: ParamRange::new(20.0, 60.0),
            charge_efficiency: ParamRange::new(0.9, 0.97),
            discharge_efficiency: ParamRange::new(0.9, 0.97),
            hvac_max_power_kw: ParamRange::new(4.0, 6.0),
            hvac_cop: ParamRange::new(2.5, 3.5),
            heat_target_c: ParamRange::new(19.0, 21.0),
            cool_target_c: ParamRange::new(23.0, 25.0),
            thermal_resistance: ParamRange::new(1.5, 2.5),
            thermal_capacitance: ParamRange::new(4.0, 6.0),
            supply_heating_c: ParamRange::new(42.0, 50.0),
            supply_cooling_c: ParamRange::new(6.0, 10.0),
            water_heater_efficiency: ParamRange::new(0.7, 0.95),
            dhw_tank_capacity: ParamRange::new(2.0, 4.0),
        }
    }

    /// The robustness-ablation ranges: solar installation, heat-pump supply
    /// targets, DHW tank, battery capacity and water-heater efficiency vary
    /// over their published ranges; everything else stays at its default.
    pub fn table3() -> Self {
        let d = BuildingConfig::default();
        Self {
            solar_scale: ParamRange::new(0.5, 1.5),
            load_scale: ParamRange::fixed(d.load_scale),
            battery_capacity_kwh: ParamRange::new(0.0, 160.0),
            charge_efficiency: ParamRange::fixed(d.charge_efficiency),
            discharge_efficiency: ParamRange::fixed(d.discharge_efficiency),
            hvac_max_power_kw: ParamRange::fixed(d.hvac_max_power_kw),
            hvac_cop: ParamRange::fixed(d.hvac_cop),
            heat_target_c: ParamRange::fixed(d.heat_target_c),
            cool_target_c: ParamRange::fixed(d.cool_target_c),
            thermal_resistance: ParamRange::fixed(d.thermal_resistance),
            thermal_capacitance: ParamRange::fixed(d.thermal_capacitance),
            supply_heating_c: ParamRange::new(42.0, 50.0),
            supply_cooling_c: ParamRange::new(6.0, 10.0),
            water_heater_efficiency: ParamRange::new(0.7, 0.95),
            dhw_tank_capacity: ParamRange::new(2.0, 4.0),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "standard" => Some(Self::standard()),
            "table3" => Some(Self::table3()),
            _ => None,
        }
    }
}

/// Draws every field uniformly from its range.
pub fn sample_building_config(ranges: &BuildingRanges, rng: &mut Rng) -> Result<BuildingConfig, SimError> {
    let r = ranges;
    let battery_capacity_kwh = r.battery_capacity_kwh.sample("battery_capacity_kwh", rng)?;
    let cfg = BuildingConfig {
        solar_scale: r.solar_scale.sample("solar_scale", rng)?,
        load_scale: r.load_scale.sample("load_scale", rng)?,
        battery_capacity_kwh,
        battery_max_power_kw: battery_capacity_kwh / 4.0,
        charge_efficiency: r.charge_efficiency.sample("charge_efficiency", rng)?,
        discharge_efficiency: r.discharge_efficiency.sample("discharge_efficiency", rng)?,
        hvac_max_power_kw: r.hvac_max_power_kw.sample("hvac_max_power_kw", rng)?,
        hvac_cop: r.hvac_cop.sample("hvac_cop", rng)?,
        heat_target_c: r.heat_target_c.sample("heat_target_c", rng)?,
        cool_target_c: r.cool_target_c.sample("cool_target_c", rng)?,
        thermal_resistance: r.thermal_resistance.sample("thermal_resistance", rng)?,
        thermal_capacitance: r.thermal_capacitance.sample("thermal_capacitance", rng)?,
        supply_heating_c: r.supply_heating_c.sample("supply_heating_c", rng)?,
        supply_cooling_c: r.supply_cooling_c.sample("supply_cooling_c", rng)?,
        water_heater_efficiency: r.water_heater_efficiency.sample("water_heater_efficiency", rng)?,
        dhw_tank_capacity: r.dhw_tank_capacity.sample("dhw_tank_capacity", rng)?,
    };
    cfg.validate()?;
    Ok(cfg)
}
