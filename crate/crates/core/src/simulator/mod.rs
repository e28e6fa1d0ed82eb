//! Hourly building environment.
//!
//! Each step consumes one trace row: the battery (ESU) is charged or
//! discharged, the HVAC heats or cools the zone, and the grid-side net
//! consumption `e = b + h + c - p` is priced and penalised for ramping.

mod config;
mod trace;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{sample_building_config, BuildingConfig, BuildingRanges, ParamRange};
pub use trace::{
    generate_trace, read_trace_csv, write_trace_csv, TraceRow, ZoneProfile, ZoneTable, TRACE_CSV_HEADER,
    ZONE_TABLE_VERSION,
};

/// Simulation step length in hours.
pub const DT_HOURS: f64 = 1.0;

/// Length of the observation vector produced by [`observe`].
pub const OBS_DIM: usize = 10;
/// ESU command and HVAC command.
pub const ACTION_DIM: usize = 2;

const POWER_SCALE_KW: f64 = 10.0;
const PRICE_SCALE: f64 = 30.0;
const TEMP_CENTER_C: f64 = 20.0;
const TEMP_SCALE_C: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("episode exhausted at hour {hour} of {length}")]
    EpisodeExhausted { hour: usize, length: usize },
    #[error("invalid range for {parameter}: [{lo}, {hi}]")]
    InvalidRange { parameter: String, lo: f64, hi: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("unknown climate zone {0}")]
    UnknownZone(u8),
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Control commands. Out-of-range values are clamped, never rejected.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    /// `[-1, 1]`; negative discharges, positive charges, scaled by the ESU power rating.
    pub esu_command: f64,
    /// `[0, 1]`; scaled by the HVAC power rating.
    pub hvac_command: f64,
}

impl Action {
    pub fn new(esu_command: f64, hvac_command: f64) -> Self {
        Self { esu_command, hvac_command }.clamped()
    }

    pub fn clamped(self) -> Self {
        let clamp = |v: f64, lo: f64, hi: f64| if v.is_nan() { 0.0 } else { v.clamp(lo, hi) };
        Self {
            esu_command: clamp(self.esu_command, -1.0, 1.0),
            hvac_command: clamp(self.hvac_command, 0.0, 1.0),
        }
    }

    pub fn to_array(self) -> [f64; ACTION_DIM] {
        [self.esu_command, self.hvac_command]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the energy-cost term.
    pub mu: f64,
    /// Weight of the ramping term.
    pub eta: f64,
    /// Number of step-to-step differences in the ramping window.
    pub window_w: usize,
    /// Weight on degrees outside the comfort band. Zero keeps the reward to
    /// the cost and ramping terms only.
    pub comfort_weight: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { mu: 0.5, eta: 0.5, window_w: 5, comfort_weight: 0.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.mu >= 0.0 && self.eta >= 0.0 && self.comfort_weight >= 0.0) {
            return Err(SimError::InvalidConfig("reward weights must be >= 0".into()));
        }
        if self.window_w == 0 {
            return Err(SimError::InvalidConfig("reward window_w must be >= 1".into()));
        }
        Ok(())
    }
}

/// Charges or discharges the battery for one hour.
///
/// Returns the new stored energy and the signed grid-side power: positive
/// while charging, negative while discharging.
pub fn esu_update(soc_kwh: f64, esu_command: f64, cfg: &BuildingConfig) -> (f64, f64) {
    let cmd = esu_command.clamp(-1.0, 1.0);
    let cap = cfg.battery_capacity_kwh;
    let power = cmd.abs() * cfg.battery_max_power_kw;
    if cmd > 0.0 {
        let new_soc = (soc_kwh + cfg.charge_efficiency * power * DT_HOURS).min(cap);
        let drawn = (new_soc - soc_kwh) / cfg.charge_efficiency / DT_HOURS;
        (new_soc, drawn)
    } else if cmd < 0.0 {
        let new_soc = (soc_kwh - power * DT_HOURS / cfg.discharge_efficiency).max(0.0);
        let relief = -(soc_kwh - new_soc) * cfg.discharge_efficiency / DT_HOURS;
        (new_soc, relief)
    } else {
        (soc_kwh, 0.0)
    }
}

/// Whether the HVAC acts as a cooler at this indoor temperature.
pub fn cooling_mode(indoor_temp_c: f64, cfg: &BuildingConfig) -> bool {
    indoor_temp_c > cfg.cool_target_c
}

/// First-order RC step of the indoor temperature.
///
/// Returns the new temperature and the HVAC's electrical power.
pub fn thermal_update(indoor_temp_c: f64, row: &TraceRow, hvac_command: f64, cfg: &BuildingConfig) -> (f64, f64) {
    let h = hvac_command.clamp(0.0, 1.0) * cfg.hvac_max_power_kw;
    let leak = DT_HOURS / (cfg.thermal_resistance * cfg.thermal_capacitance) * (row.outdoor_temp_c - indoor_temp_c);
    let hvac = cfg.hvac_cop * h * DT_HOURS / cfg.thermal_capacitance;
    let next = if cooling_mode(indoor_temp_c, cfg) {
        indoor_temp_c + leak - hvac
    } else {
        indoor_temp_c + leak + hvac
    };
    (next, h)
}

/// Grid-side net consumption; negative values are exports.
pub fn net_consumption(load_kw: f64, hvac_kw: f64, esu_kw: f64, renewable_kw: f64) -> f64 {
    load_kw + hvac_kw + esu_kw - renewable_kw
}

/// Breakdown of one step's reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    pub reward: f64,
    /// Energy cost `v * e`.
    pub cost: f64,
    /// Sum of absolute step-to-step changes over the window.
    pub ramp: f64,
}

/// `window` holds the most recent net consumptions, oldest first, ending at
/// the current one; at most the last `window_w` differences are counted.
pub fn reward(window: &[f64], price: f64, cfg: &RewardConfig) -> RewardTerms {
    let current = window.last().copied().unwrap_or(0.0);
    let start = window.len().saturating_sub(cfg.window_w + 1);
    let ramp: f64 = window[start..].windows(2).map(|p| (p[1] - p[0]).abs()).sum();
    let cost = price * current;
    RewardTerms { reward: -cfg.mu * cost - cfg.eta * ramp, cost, ramp }
}

/// Degrees outside the `[heat_target, cool_target]` band.
pub fn comfort_violation(indoor_temp_c: f64, cfg: &BuildingConfig) -> f64 {
    (cfg.heat_target_c - indoor_temp_c).max(0.0) + (indoor_temp_c - cfg.cool_target_c).max(0.0)
}

/// Dynamic state of a building between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingState {
    pub hour_index: usize,
    pub soc_kwh: f64,
    pub indoor_temp_c: f64,
    /// ESU grid power realised in the previous step.
    pub last_esu_power_kw: f64,
    /// HVAC power realised in the previous step.
    pub last_hvac_power_kw: f64,
    /// Previous net consumptions, at most `window_w` of them, oldest first.
    pub net_window: VecDeque<f64>,
}

impl BuildingState {
    pub fn initial(cfg: &BuildingConfig) -> Self {
        Self {
            hour_index: 0,
            soc_kwh: 0.0,
            indoor_temp_c: 0.5 * (cfg.heat_target_c + cfg.cool_target_c),
            last_esu_power_kw: 0.0,
            last_hvac_power_kw: 0.0,
            net_window: VecDeque::new(),
        }
    }
}

/// One experience record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: [f64; OBS_DIM],
    pub action: Action,
    pub reward: f64,
    pub next_state: [f64; OBS_DIM],
    /// Set on the last step of the trace.
    pub done: bool,
    pub cost_term_c1: f64,
    pub ramp_term_c2: f64,
    pub comfort_term: f64,
    pub net_consumption_e: f64,
    pub realized_esu_power_c: f64,
    pub realized_hvac_power_h: f64,
    pub price: f64,
    pub hour_index: usize,
}

/// Observation vector, scaled to order one.
///
/// Layout: renewable, load, outdoor temperature, price, previous ESU power,
/// previous HVAC power, hour-of-day as sine and cosine, state of charge as a
/// fraction, indoor temperature.
pub fn observe(state: &BuildingState, trace: &[TraceRow], cfg: &BuildingConfig) -> [f64; OBS_DIM] {
    let row = &trace[state.hour_index.min(trace.len() - 1)];
    let phase = 2.0 * std::f64::consts::PI * (state.hour_index % 24) as f64 / 24.0;
    let soc_frac = if cfg.battery_capacity_kwh > 0.0 {
        state.soc_kwh / cfg.battery_capacity_kwh
    } else {
        0.0
    };
    [
        row.renewable_output_kw / POWER_SCALE_KW,
        row.nonshiftable_load_kw / POWER_SCALE_KW,
        (row.outdoor_temp_c - TEMP_CENTER_C) / TEMP_SCALE_C,
        row.price_per_kwh / PRICE_SCALE,
        state.last_esu_power_kw / POWER_SCALE_KW,
        state.last_hvac_power_kw / POWER_SCALE_KW,
        phase.sin(),
        phase.cos(),
        soc_frac,
        (state.indoor_temp_c - TEMP_CENTER_C) / TEMP_SCALE_C,
    ]
}

/// Advances one hour: battery, then thermal zone, then accounting.
pub fn step(
    state: &BuildingState,
    trace: &[TraceRow],
    action: Action,
    cfg: &BuildingConfig,
    reward_cfg: &RewardConfig,
) -> Result<(BuildingState, Transition), SimError> {
    let t = state.hour_index;
    if t >= trace.len() {
        return Err(SimError::EpisodeExhausted { hour: t, length: trace.len() });
    }
    let row = &trace[t];
    let action = action.clamped();
    let obs = observe(state, trace, cfg);

    let (soc, c) = esu_update(state.soc_kwh, action.esu_command, cfg);
    let (indoor, h) = thermal_update(state.indoor_temp_c, row, action.hvac_command, cfg);
    let e = net_consumption(row.nonshiftable_load_kw, h, c, row.renewable_output_kw);

    let mut window: Vec<f64> = state.net_window.iter().copied().collect();
    window.push(e);
    let terms = reward(&window, row.price_per_kwh, reward_cfg);
    let comfort = comfort_violation(indoor, cfg);
    let r = if reward_cfg.comfort_weight > 0.0 {
        terms.reward - reward_cfg.comfort_weight * comfort
    } else {
        terms.reward
    };

    let mut net_window = state.net_window.clone();
    net_window.push_back(e);
    while net_window.len() > reward_cfg.window_w {
        net_window.pop_front();
    }
    let next = BuildingState {
        hour_index: t + 1,
        soc_kwh: soc,
        indoor_temp_c: indoor,
        last_esu_power_kw: c,
        last_hvac_power_kw: h,
        net_window,
    };
    let transition = Transition {
        state: obs,
        action,
        reward: r,
        next_state: observe(&next, trace, cfg),
        done: t + 1 == trace.len(),
        cost_term_c1: terms.cost,
        ramp_term_c2: terms.ramp,
        comfort_term: comfort,
        net_consumption_e: e,
        realized_esu_power_c: c,
        realized_hvac_power_h: h,
        price: row.price_per_kwh,
        hour_index: t,
    };
    Ok((next, transition))
}

/// A building with its trace, stepping through one episode at a time.
#[derive(Debug, Clone)]
pub struct BuildingEnv {
    config: BuildingConfig,
    reward: RewardConfig,
    trace: Vec<TraceRow>,
    state: BuildingState,
}

impl BuildingEnv {
    pub fn new(config: BuildingConfig, reward: RewardConfig, trace: Vec<TraceRow>) -> Result<Self, SimError> {
        config.validate()?;
        reward.validate()?;
        if trace.is_empty() {
            return Err(SimError::InvalidTrace("trace has no rows".into()));
        }
        let state = BuildingState::initial(&config);
        Ok(Self { config, reward, trace, state })
    }

    /// Rewinds to hour 0 with an empty battery.
    pub fn reset(&mut self) {
        self.state = BuildingState::initial(&self.config);
    }

    pub fn observation(&self) -> [f64; OBS_DIM] {
        observe(&self.state, &self.trace, &self.config)
    }

    pub fn step(&mut self, action: Action) -> Result<Transition, SimError> {
        let (next, transition) = step(&self.state, &self.trace, action, &self.config, &self.reward)?;
        self.state = next;
        Ok(transition)
    }

    pub fn hour(&self) -> usize {
        self.state.hour_index
    }

    pub fn episode_length(&self) -> usize {
        self.trace.len()
    }

    pub fn remaining(&self) -> usize {
        self.trace.len().saturating_sub(self.state.hour_index)
    }

    pub fn is_done(&self) -> bool {
        self.remaining() == 0
    }

    pub fn state(&self) -> &BuildingState {
        &self.state
    }

    pub fn config(&self) -> &BuildingConfig {
        &self.config
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// Exogenous row for the current hour, if any remain.
    pub fn current_row(&self) -> Option<&TraceRow> {
        self.trace.get(self.state.hour_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(p: f64, b: f64, t_out: f64, v: f64) -> TraceRow {
        TraceRow {
            hour_index: 0,
            renewable_output_kw: p,
            nonshiftable_load_kw: b,
            outdoor_temp_c: t_out,
            price_per_kwh: v,
        }
    }

    fn battery(cap: f64, power: f64, eta_c: f64, eta_d: f64) -> BuildingConfig {
        BuildingConfig {
            battery_capacity_kwh: cap,
            battery_max_power_kw: power,
            charge_efficiency: eta_c,
            discharge_efficiency: eta_d,
            ..Default::default()
        }
    }

    #[test]
    fn esu_full_charge_from_empty() {
        let (soc, c) = esu_update(0.0, 1.0, &battery(10.0, 2.0, 1.0, 1.0));
        assert_eq!((soc, c), (2.0, 2.0));
    }

    #[test]
    fn esu_full_battery_absorbs_nothing() {
        let (soc, c) = esu_update(10.0, 1.0, &battery(10.0, 2.0, 1.0, 1.0));
        assert_eq!((soc, c), (10.0, 0.0));
    }

    #[test]
    fn esu_discharge_clips_at_empty() {
        // 2 kW for an hour at 0.9 would need 2.22 kWh stored; only 1 kWh is
        // there, and delivering it yields 0.9 kWh at the grid side.
        let (soc, c) = esu_update(1.0, -1.0, &battery(10.0, 2.0, 1.0, 0.9));
        assert_eq!(soc, 0.0);
        assert!((c + 0.9).abs() < 1e-15, "{c}");
    }

    #[test]
    fn esu_commands_are_clamped() {
        let cfg = battery(10.0, 2.0, 1.0, 1.0);
        assert_eq!(esu_update(0.0, 5.0, &cfg), esu_update(0.0, 1.0, &cfg));
    }

    #[test]
    fn thermal_equilibrium_without_forcing() {
        let cfg = BuildingConfig::default();
        let (t, h) = thermal_update(20.0, &row(0.0, 0.0, 20.0, 0.1), 0.0, &cfg);
        assert_eq!((t, h), (20.0, 0.0));
    }

    #[test]
    fn thermal_first_order_step() {
        let cfg = BuildingConfig { thermal_resistance: 2.0, thermal_capacitance: 5.0, ..Default::default() };
        let (t, _) = thermal_update(20.0, &row(0.0, 0.0, 30.0, 0.1), 0.0, &cfg);
        assert!((t - 21.0).abs() < 1e-12);
    }

    #[test]
    fn thermal_full_command_draws_rated_power() {
        let cfg = BuildingConfig { hvac_max_power_kw: 5.0, ..Default::default() };
        let (_, h) = thermal_update(20.0, &row(0.0, 0.0, 10.0, 0.1), 1.0, &cfg);
        assert_eq!(h, 5.0);
    }

    #[test]
    fn thermal_mode_sign() {
        let cfg = BuildingConfig::default();
        let r = row(0.0, 0.0, 22.0, 0.1);
        let (heated, _) = thermal_update(22.0, &r, 0.5, &cfg);
        assert!(heated > 22.0);
        let r = row(0.0, 0.0, 30.0, 0.1);
        let (cooled, _) = thermal_update(30.0, &r, 0.5, &cfg);
        assert!(cooled < 30.0);
    }

    #[test]
    fn net_consumption_identity() {
        assert_eq!(net_consumption(2.0, 1.0, 0.5, 1.0), 2.5);
        assert_eq!(net_consumption(0.0, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(net_consumption(1.0, 0.0, -2.0, 0.0), -1.0);
    }

    #[test]
    fn reward_flat_history_has_no_ramp() {
        let cfg = RewardConfig::default();
        let terms = reward(&[2.0; 6], 0.5, &cfg);
        assert_eq!(terms.ramp, 0.0);
        assert_eq!(terms.cost, 1.0);
        assert_eq!(terms.reward, -0.5);
    }

    #[test]
    fn reward_ramp_sums_absolute_differences() {
        let terms = reward(&[0.0, 2.0, 1.0], 0.1, &RewardConfig::default());
        assert_eq!(terms.ramp, 3.0);
    }

    #[test]
    fn reward_window_counts_exactly_w_differences() {
        let cfg = RewardConfig { window_w: 2, ..Default::default() };
        // Only |1-5| and |1-1| fall in a two-difference window.
        let terms = reward(&[0.0, 9.0, 5.0, 1.0, 1.0], 0.1, &cfg);
        assert_eq!(terms.ramp, 4.0);
    }

    #[test]
    fn inert_step() {
        let cfg = BuildingConfig::default();
        let trace = vec![row(0.0, 0.0, 22.0, 0.2); 3];
        let mut env = BuildingEnv::new(cfg, RewardConfig::default(), trace).unwrap();
        let tr = env.step(Action::new(0.0, 0.0)).unwrap();
        assert_eq!(tr.net_consumption_e, 0.0);
        assert_eq!(tr.reward, 0.0);
        assert_eq!(env.state().soc_kwh, 0.0);
    }

    #[test]
    fn stepping_past_the_trace_fails() {
        let trace = vec![row(0.0, 1.0, 22.0, 0.2); 2];
        let mut env = BuildingEnv::new(BuildingConfig::default(), RewardConfig::default(), trace).unwrap();
        assert!(!env.step(Action::default()).unwrap().done);
        assert!(env.step(Action::default()).unwrap().done);
        assert!(matches!(env.step(Action::default()), Err(SimError::EpisodeExhausted { hour: 2, length: 2 })));
        env.reset();
        assert_eq!(env.hour(), 0);
    }

    #[test]
    fn three_step_rollout_matches_hand_unrolling() {
        let cfg = BuildingConfig {
            battery_capacity_kwh: 4.0,
            battery_max_power_kw: 2.0,
            charge_efficiency: 0.9,
            discharge_efficiency: 0.8,
            hvac_max_power_kw: 2.0,
            hvac_cop: 2.0,
            heat_target_c: 20.0,
            cool_target_c: 24.0,
            thermal_resistance: 2.0,
            thermal_capacitance: 5.0,
            ..Default::default()
        };
        let rc = RewardConfig { mu: 0.5, eta: 0.5, window_w: 5, comfort_weight: 0.0 };
        let trace = vec![row(1.0, 3.0, 10.0, 0.1), row(2.0, 2.0, 12.0, 0.3), row(0.0, 4.0, 14.0, 0.3)];
        let actions = [Action::new(1.0, 0.5), Action::new(1.0, 0.0), Action::new(-1.0, 1.0)];
        let mut env = BuildingEnv::new(cfg, rc, trace).unwrap();
        let trs: Vec<_> = actions.iter().map(|a| env.step(*a).unwrap()).collect();

        // Hour 0: start 22 °C (setpoint midpoint), heating mode.
        //   ESU: soc 0 -> 1.8, c = 2.0. HVAC: h = 1.0,
        //   T = 22 + (10-22)/10 + 2*1/5 = 22 - 1.2 + 0.4 = 21.2.
        //   e = 3 + 1 + 2 - 1 = 5, cost 0.5, ramp 0, r = -0.25.
        // Hour 1: soc 1.8 -> 3.6, c = 2.0; h = 0, T = 21.2 + (12-21.2)/10 = 20.28.
        //   e = 2 + 0 + 2 - 2 = 2, cost 0.6, ramp 3, r = -0.3 - 1.5 = -1.8.
        // Hour 2: discharge 2 kW needs 2.5 kWh, soc 3.6 -> 1.1, c = -2.0;
        //   h = 2, T = 20.28 + (14-20.28)/10 + 2*2/5 = 20.28 - 0.628 + 0.8 = 20.452.
        //   e = 4 + 2 - 2 - 0 = 4, cost 1.2, ramp 3 + 2 = 5, r = -0.6 - 2.5 = -3.1.
        let expect = [(5.0, -0.25, 1.8, 21.2), (2.0, -1.8, 3.6, 20.28), (4.0, -3.1, 1.1, 20.452)];
        let socs = [1.8, 3.6, 1.1];
        for (i, (tr, (e, r, _, _))) in trs.iter().zip(expect).enumerate() {
            assert!((tr.net_consumption_e - e).abs() < 1e-12, "e at {i}: {}", tr.net_consumption_e);
            assert!((tr.reward - r).abs() < 1e-12, "r at {i}: {}", tr.reward);
        }
        assert!((env.state().soc_kwh - socs[2]).abs() < 1e-12);
        assert!((env.state().indoor_temp_c - expect[2].3).abs() < 1e-12);
        assert!((trs[1].state[9] - (21.2 - 20.0) / 10.0).abs() < 1e-12);
    }
}
