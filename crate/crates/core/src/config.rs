//! Pipeline configuration: one TOML section per module.
//!
//! Every field has a default, so an empty file is a valid config. Command
//! line overrides use dotted keys (`residual.gamma=0.9`) and are applied on
//! top of the file before deserialization, so they are type-checked the same
//! way file values are.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, GapModel, GapPreset, GapRanges};
use crate::error::{Error, Result};
use crate::hand::HandConfig;
use crate::keyboard::{Keyboard, KeyboardDims};
use crate::learn::{PpoConfig, ResidualConfig};
use crate::refine::RefineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyboardSection {
    pub num_keys: usize,
    #[serde(flatten)]
    pub dims: KeyboardDims,
}

impl Default for KeyboardSection {
    fn default() -> Self {
        KeyboardSection {
            num_keys: 88,
            dims: KeyboardDims::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapSection {
    pub preset: GapPreset,
    /// Seed the gap parameters are drawn with. Fixed per "robot".
    pub seed: u64,
    /// Replaces the preset's ranges when set.
    pub ranges: Option<GapRanges>,
}

impl Default for GapSection {
    fn default() -> Self {
        GapSection {
            preset: GapPreset::PaperLike,
            seed: 0,
            ranges: None,
        }
    }
}

impl GapSection {
    /// Explicit ranges, else the preset's.
    pub fn effective_ranges(&self) -> GapRanges {
        self.ranges.clone().unwrap_or_else(|| self.preset.ranges())
    }

    pub fn model(&self, hand: &HandConfig, dims: &KeyboardDims) -> GapModel {
        match &self.ranges {
            Some(r) => GapModel::sample(r, self.seed, hand, dims),
            None => GapModel::from_preset(self.preset, self.seed, hand, dims),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub keyboard: KeyboardSection,
    pub hand: HandConfig,
    pub env: EnvConfig,
    pub gap: GapSection,
    pub refine: RefineConfig,
    pub residual: ResidualConfig,
    pub ppo: PpoConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        Config::from_toml_with(text, &[])
    }

    /// Parses `text` and applies `key=value` overrides in order.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Config> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Config::from_table(table, overrides)
    }

    /// `text` layered over `base`: keys absent from the file keep the base
    /// value instead of the default.
    pub fn layered(base: &Config, text: &str, overrides: &[String]) -> Result<Config> {
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut table = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, file);
        Config::from_table(table, overrides)
    }

    fn from_table(mut table: toml::Table, overrides: &[String]) -> Result<Config> {
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Config = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (empty when `None`) over `base` and applies overrides.
    pub fn load(base: &Config, path: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Config::layered(base, &text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=128).contains(&self.keyboard.num_keys) {
            return Err(Error::Config(format!("keyboard.num_keys must be in 1..=128, got {}", self.keyboard.num_keys)));
        }
        if self.env.goal_horizon < 1 || self.env.substeps < 1 {
            return Err(Error::Config("env.goal_horizon and env.substeps must be >= 1".into()));
        }
        self.refine.validate()?;
        self.residual.validate()?;
        self.ppo.validate()
    }

    pub fn keyboard(&self) -> Keyboard {
        Keyboard::build(self.keyboard.num_keys, &self.keyboard.dims)
    }

    pub fn gap_model(&self) -> GapModel {
        self.gap.model(&self.hand, &self.keyboard.dims)
    }
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// `a.b.c=value`. The value is parsed as a TOML value, falling back to a
/// bare string so `gap.preset=bias-only` works unquoted.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override '{spec}' has an empty key segment")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("split yields one segment");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{spec}': '{p}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn defaults_round_trip() {
        let text = Config::default().to_toml();
        assert_eq!(Config::from_toml(&text).unwrap(), Config::default());
    }

    #[test]
    fn overrides_beat_file_values() {
        let file = "[residual]\ngamma = 0.7\n[gap]\npreset = \"identity\"\n";
        let cfg = Config::from_toml_with(
            file,
            &["residual.gamma=0.9".into(), "gap.preset=bias-only".into(), "keyboard.white_width=0.024".into()],
        )
        .unwrap();
        assert_eq!(cfg.residual.gamma, 0.9);
        assert_eq!(cfg.gap.preset, GapPreset::BiasOnly);
        assert_eq!(cfg.keyboard.dims.white_width, 0.024);
        assert_eq!(cfg.residual.hidden, ResidualConfig::default().hidden);
    }

    #[test]
    fn file_layers_over_a_base() {
        let base = Config {
            residual: ResidualConfig::compact(),
            ..Config::default()
        };
        let cfg = Config::layered(&base, "[residual]\nbatch = 64\n", &["residual.gamma=0.9".into()]).unwrap();
        assert_eq!(cfg.residual.batch, 64);
        assert_eq!(cfg.residual.gamma, 0.9);
        assert_eq!(cfg.residual.hidden, ResidualConfig::compact().hidden);
    }

    #[test]
    fn list_override() {
        let cfg = Config::from_toml_with("", &["ppo.hidden=[32, 32]".into()]).unwrap();
        assert_eq!(cfg.ppo.hidden, vec![32, 32]);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(Config::from_toml("[residual]\ngama = 0.9\n").is_err());
        assert!(Config::from_toml("[bogus]\n").is_err());
        assert!(Config::from_toml("[keyboard]\nwhite_wdth = 0.02\n").is_err());
        assert!(Config::from_toml_with("", &["residual.gamma=fast".into()]).is_err());
        assert!(Config::from_toml_with("", &["residual.gamma".into()]).is_err());
        assert!(Config::from_toml_with("", &["refine.anneal_factor=1.5".into()]).is_err());
    }

    #[test]
    fn custom_ranges_replace_the_preset() {
        let cfg = Config::from_toml_with(
            "",
            &["gap.preset=paper-like".into(), "gap.ranges.max_bias_key_widths=0.0".into(), "gap.ranges.lag_alpha=[1.0, 1.0]".into()],
        )
        .unwrap();
        let r = cfg.gap.ranges.as_ref().unwrap();
        assert_eq!(r.max_bias_key_widths, 0.0);
        // Unset range fields fall back to the paper-like defaults.
        assert_eq!(r.threshold_shift, GapPreset::PaperLike.ranges().threshold_shift);
    }
}
