//! Hour-of-day rules and the reactive thermostat.

use std::io::{Read, Write};

use super::BaselineError;
use crate::simulator::{Action, BuildingConfig, BuildingState, DT_HOURS};

pub const RBC_CSV_HEADER: [&str; 3] = ["hour", "esu_command", "hvac_command"];

/// HVAC command that moves the indoor temperature back to the violated
/// setpoint within one hour, ignoring envelope losses. Zero inside the
/// comfort band.
pub fn thermostat_command(indoor_temp_c: f64, cfg: &BuildingConfig) -> f64 {
    let gap = if indoor_temp_c > cfg.cool_target_c {
        indoor_temp_c - cfg.cool_target_c
    } else if indoor_temp_c < cfg.heat_target_c {
        cfg.heat_target_c - indoor_temp_c
    } else {
        return 0.0;
    };
    let full = cfg.hvac_cop * cfg.hvac_max_power_kw * DT_HOURS / cfg.thermal_capacitance;
    if full <= 0.0 {
        return 0.0;
    }
    (gap / full).clamp(0.0, 1.0)
}

/// No load shifting: the battery idles and the thermostat runs the HVAC.
pub fn no_control_policy(state: &BuildingState, cfg: &BuildingConfig) -> Action {
    Action::new(0.0, thermostat_command(state.indoor_temp_c, cfg))
}

/// Per-hour-of-day commands.
#[derive(Debug, Clone, PartialEq)]
pub struct RbcRuleTable {
    entries: [Action; 24],
}

impl Default for RbcRuleTable {
    /// Charge at +0.5 from 22:00 through 07:00, idle at 08:00 and discharge
    /// at -1/3 from 09:00 through 21:00; the HVAC is left to the thermostat.
    fn default() -> Self {
        let mut entries = [Action::default(); 24];
        for (hour, e) in entries.iter_mut().enumerate() {
            e.esu_command = match hour {
                22 | 23 | 0..=7 => 0.5,
                9..=21 => -1.0 / 3.0,
                _ => 0.0,
            };
        }
        Self { entries }
    }
}

impl RbcRuleTable {
    pub fn new(entries: [Action; 24]) -> Result<Self, BaselineError> {
        for (hour, a) in entries.iter().enumerate() {
            if !(-1.0..=1.0).contains(&a.esu_command) || !(0.0..=1.0).contains(&a.hvac_command) {
                return Err(BaselineError::InvalidTable(format!("hour {hour}: command out of range")));
            }
        }
        Ok(Self { entries })
    }

    pub fn entry(&self, hour: usize) -> Action {
        self.entries[hour % 24]
    }

    pub fn entries(&self) -> &[Action; 24] {
        &self.entries
    }

    /// Reads a 24-row `hour,esu_command,hvac_command` table with hours 0..23 in order.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, BaselineError> {
        let mut rdr = csv::Reader::from_reader(reader);
        if rdr.headers()?.iter().ne(RBC_CSV_HEADER) {
            return Err(BaselineError::InvalidTable(format!("header must be `{}`", RBC_CSV_HEADER.join(","))));
        }
        let mut entries = [Action::default(); 24];
        let mut n = 0;
        for rec in rdr.deserialize::<(usize, f64, f64)>() {
            let (hour, esu, hvac) = rec?;
            if n >= 24 || hour != n {
                return Err(BaselineError::InvalidTable(format!("expected hour {n}, found {hour}")));
            }
            entries[n] = Action { esu_command: esu, hvac_command: hvac };
            n += 1;
        }
        if n != 24 {
            return Err(BaselineError::InvalidTable(format!("expected 24 rows, found {n}")));
        }
        Self::new(entries)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), BaselineError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(RBC_CSV_HEADER)?;
        for (hour, a) in self.entries.iter().enumerate() {
            w.serialize((hour, a.esu_command, a.hvac_command))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, BaselineError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Table lookup by hour of day; the HVAC runs at the larger of the table
/// entry and the thermostat's demand.
pub fn rbc_policy(hour: usize, table: &RbcRuleTable, indoor_temp_c: f64, cfg: &BuildingConfig) -> Action {
    let e = table.entry(hour);
    Action::new(e.esu_command, e.hvac_command.max(thermostat_command(indoor_temp_c, cfg)))
}
