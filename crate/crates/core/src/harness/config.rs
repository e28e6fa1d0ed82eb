//! Experiment configuration, presets and dotted-key overrides.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::AgentConfig;
use crate::baselines::{MamlConfig, RlMpcConfig};
use crate::meta::MetaConfig;
use crate::metrics::HOURS_PER_MONTH;
use crate::simulator::{BuildingRanges, RewardConfig, ZoneTable};

/// Which comparison methods run besides the rule-based controller, which
/// always runs as the normalisation reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodToggles {
    pub no_control: bool,
    pub random_init: bool,
    pub pretrained: bool,
    pub maml: bool,
    pub rl_mpc: bool,
    pub metaems: bool,
}

impl Default for MethodToggles {
    fn default() -> Self {
        Self { no_control: true, random_init: true, pretrained: true, maml: true, rl_mpc: true, metaems: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub n_repeat_seeds: usize,
    pub zones: Vec<u8>,
    pub n_source_buildings: usize,
    pub n_target_buildings: usize,
    /// Hours per episode; at least one 720-hour month.
    pub episode_length: usize,
    /// Consecutive adaptation episodes on each target building.
    pub test_episodes: usize,
    /// Building parameter ranges: `standard` or `table3`.
    pub building_ranges: String,
    /// Optional rule table CSV; the built-in table when empty.
    pub rbc_table: String,
    pub methods: MethodToggles,
    pub meta: MetaConfig,
    pub agent: AgentConfig,
    pub reward: RewardConfig,
    pub maml: MamlConfig,
    pub rl_mpc: RlMpcConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::quick()
    }
}

impl ExperimentConfig {
    /// Desk-scale profile: 30-day episodes and three meta-training rounds.
    pub fn quick() -> Self {
        Self {
            master_seed: 0,
            n_repeat_seeds: 5,
            zones: vec![1, 2, 3, 4],
            n_source_buildings: 8,
            n_target_buildings: 3,
            episode_length: 720,
            test_episodes: 1,
            building_ranges: "standard".into(),
            rbc_table: String::new(),
            methods: MethodToggles::default(),
            meta: MetaConfig { rounds: Some(3), ..MetaConfig::default() },
            agent: AgentConfig::default(),
            reward: RewardConfig::default(),
            maml: MamlConfig::default(),
            rl_mpc: RlMpcConfig {
                horizon: 6,
                candidates: 64,
                hidden_layers: vec![32, 32],
                fit_epochs: 10,
                ..RlMpcConfig::default()
            },
        }
    }

    /// Full-year episodes with the default number of rounds.
    pub fn paper() -> Self {
        Self {
            episode_length: 8760,
            meta: MetaConfig::default(),
            rl_mpc: RlMpcConfig::default(),
            ..Self::quick()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "quick" => Some(Self::quick()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    /// Parses a config document on top of the defaults and applies
    /// `key=value` overrides in order.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn ranges(&self) -> Result<BuildingRanges, HarnessError> {
        BuildingRanges::preset(&self.building_ranges).ok_or_else(|| {
            HarnessError::Config(format!(
                "building_ranges must be `standard` or `table3`, got `{}`",
                self.building_ranges
            ))
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.n_repeat_seeds == 0 {
            return bad("n_repeat_seeds must be >= 1".into());
        }
        if self.zones.is_empty() {
            return bad("at least one zone is required".into());
        }
        let table = ZoneTable::builtin();
        for z in &self.zones {
            table.zone(*z).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.n_target_buildings == 0 {
            return bad("n_target_buildings must be >= 1".into());
        }
        if self.episode_length < HOURS_PER_MONTH {
            return bad(format!("episode_length must be >= {HOURS_PER_MONTH}, got {}", self.episode_length));
        }
        if self.test_episodes == 0 {
            return bad("test_episodes must be >= 1".into());
        }
        self.ranges()?;
        self.agent.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.reward.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let m = &self.methods;
        if m.metaems || m.maml {
            self.meta
                .validate(self.episode_length, self.n_source_buildings)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if (m.pretrained || m.rl_mpc) && self.n_source_buildings == 0 {
            return bad("pretrained and rl_mpc need source buildings".into());
        }
        if m.rl_mpc && (self.rl_mpc.horizon == 0 || self.rl_mpc.candidates == 0) {
            return bad("rl_mpc horizon and candidates must be >= 1".into());
        }
        Ok(())
    }
}

/// Sets `a.b.c=value` in a TOML table. The value is read as a TOML literal
/// (number, boolean, array, quoted string) and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), HarnessError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{spec}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::Config(format!("override `{spec}` has an empty key segment")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override `{spec}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Every configuration key with its default value, one `key = value` per line.
pub fn documented_keys() -> Vec<(String, String)> {
    let value = toml::Value::try_from(ExperimentConfig::default()).expect("config serialises");
    let mut out = Vec::new();
    flatten("", &value, &mut out);
    out
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_quick_profile() {
        let c = ExperimentConfig::default();
        assert_eq!(c.n_repeat_seeds, 5);
        assert_eq!(c.zones, vec![1, 2, 3, 4]);
        assert_eq!((c.n_source_buildings, c.n_target_buildings), (8, 3));
        assert_eq!(c.episode_length, 720);
        assert_eq!(ExperimentConfig::paper().episode_length, 8760);
        assert!(c.validate().is_ok());
        assert!(ExperimentConfig::paper().validate().is_ok());
    }

    #[test]
    fn overrides_apply_after_parsing() {
        let c = ExperimentConfig::from_toml_with_overrides(
            "n_repeat_seeds = 2\n[meta]\nt_theta = 10\n",
            &["meta.t_theta=20".into(), "agent.hidden_layers=[16, 16]".into(), "building_ranges=table3".into()],
        )
        .unwrap();
        assert_eq!(c.n_repeat_seeds, 2);
        assert_eq!(c.meta.t_theta, 20);
        assert_eq!(c.agent.hidden_layers, vec![16, 16]);
        assert_eq!(c.building_ranges, "table3");
        let round = ExperimentConfig::from_toml_with_overrides(&c.to_toml(), &[]).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let err = |text: &str, o: &[&str]| {
            let o: Vec<String> = o.iter().map(|s| s.to_string()).collect();
            ExperimentConfig::from_toml_with_overrides(text, &o).unwrap_err()
        };
        assert!(matches!(err("bogus = 1", &[]), HarnessError::Config(_)));
        assert!(matches!(err("", &["n_repeat_seeds=0"]), HarnessError::Config(_)));
        assert!(matches!(err("", &["zones=[9]"]), HarnessError::Config(_)));
        assert!(matches!(err("", &["meta.t_theta=0"]), HarnessError::Config(_)));
        assert!(matches!(err("", &["episode_length=100"]), HarnessError::Config(_)));
        assert!(matches!(err("", &["noequals"]), HarnessError::Config(_)));
        assert!(matches!(err("", &["meta.building_batch_size=9"]), HarnessError::Config(_)));
    }

    #[test]
    fn key_listing_covers_nested_sections() {
        let keys = documented_keys();
        let has = |k: &str| keys.iter().any(|(key, _)| key == k);
        assert!(has("meta.t_theta"));
        assert!(has("agent.gamma"));
        assert!(has("methods.metaems"));
        assert!(has("rl_mpc.candidates"));
        assert!(keys.iter().any(|(k, v)| k == "meta.t_theta" && v == "20"));
    }
}
