//! Scenario configuration and its on-disk TOML form.
//!
//! Units are converted once, at load time: dBm to watts, millijoules to
//! joules, Mbit to bits and MHz to Hz. Everything downstream works in SI units
//! and integer energy quanta.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::LinkParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RoundingMode {
    /// Floor harvested energy, ceil transmit energy.
    #[default]
    LowerBound,
    /// Ceil harvested energy, floor transmit energy.
    UpperBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub battery_capacity_j: f64,
    pub battery_quanta: u32,
    pub aoi_cap: u32,
    pub weight: f64,
    pub link: LinkParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub sources: Vec<SourceSpec>,
    pub tx_power_w: f64,
    pub harvest_efficiency: f64,
    pub noise_power_w: f64,
    pub packet_bits: f64,
    pub bandwidth_hz: f64,
    pub rounding_mode: RoundingMode,
    /// Forces the uplink level to equal the downlink level in every slot.
    pub correlated_links: bool,
    pub seed: u64,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

impl SystemConfig {
    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    /// Bits per channel use needed to deliver one packet in a unit slot (`S / W`).
    pub fn spectral_load(&self) -> f64 {
        self.packet_bits / self.bandwidth_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::InvalidConfig("at least one source is required".into()));
        }
        if self.sources.len() > 30 {
            return Err(Error::InvalidConfig("at most 30 sources are supported".into()));
        }
        let total_weight: f64 = self.sources.iter().map(|s| s.weight).sum();
        if (total_weight - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "source weights must sum to 1, got {total_weight}"
            )));
        }
        if !(self.harvest_efficiency > 0.0 && self.harvest_efficiency <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "harvest efficiency must lie in (0, 1], got {}",
                self.harvest_efficiency
            )));
        }
        if !(self.packet_bits > 0.0) {
            return Err(Error::InvalidConfig("packet size must be positive".into()));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidConfig("bandwidth must be positive".into()));
        }
        if !(self.tx_power_w > 0.0) || !(self.noise_power_w > 0.0) {
            return Err(Error::InvalidConfig("powers must be positive".into()));
        }
        for (i, s) in self.sources.iter().enumerate() {
            let ctx = |msg: &str| Error::InvalidConfig(format!("source {}: {msg}", i + 1));
            if s.battery_quanta < 1 {
                return Err(ctx("battery_quanta must be at least 1"));
            }
            if s.aoi_cap < 1 {
                return Err(ctx("aoi_cap must be at least 1"));
            }
            if !(s.weight >= 0.0) {
                return Err(ctx("weight must be non-negative"));
            }
            if !(s.battery_capacity_j > 0.0) {
                return Err(ctx("battery capacity must be positive"));
            }
            s.link.validate().map_err(|e| ctx(&e.to_string()))?;
            if self.correlated_links && s.link.levels_downlink != s.link.levels_uplink {
                return Err(ctx("correlated links need equal downlink and uplink level counts"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text)?;
        let config = file.into_config();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ConfigFile::from_config(self)).expect("config serializes")
    }

    /// Sets every battery capacity to `joules`.
    pub fn with_battery_capacity(mut self, joules: f64) -> Self {
        for s in &mut self.sources {
            s.battery_capacity_j = joules;
        }
        self
    }

    pub fn with_packet_bits(mut self, bits: f64) -> Self {
        self.packet_bits = bits;
        self
    }
}

/// File representation; keys mirror the documented config schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub tx_power_dbm: f64,
    pub harvest_efficiency: f64,
    pub noise_power_dbm: f64,
    pub packet_mbits: f64,
    pub bandwidth_mhz: f64,
    pub reference_gain: f64,
    pub path_loss_exponent: f64,
    #[serde(default)]
    pub rounding_mode: RoundingMode,
    #[serde(default)]
    pub correlated_links: bool,
    #[serde(default)]
    pub seed: u64,
    pub sources: Vec<SourceFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceFile {
    pub distance_m: f64,
    pub battery_capacity_mj: f64,
    pub battery_quanta: u32,
    pub aoi_cap: u32,
    pub weight: f64,
    pub levels_downlink: u32,
    pub levels_uplink: u32,
}

impl ConfigFile {
    pub fn into_config(self) -> SystemConfig {
        let (gamma, nu) = (self.reference_gain, self.path_loss_exponent);
        SystemConfig {
            sources: self
                .sources
                .into_iter()
                .map(|s| SourceSpec {
                    battery_capacity_j: s.battery_capacity_mj * 1e-3,
                    battery_quanta: s.battery_quanta,
                    aoi_cap: s.aoi_cap,
                    weight: s.weight,
                    link: LinkParams {
                        distance_m: s.distance_m,
                        path_loss_exponent: nu,
                        reference_gain: gamma,
                        levels_downlink: s.levels_downlink,
                        levels_uplink: s.levels_uplink,
                    },
                })
                .collect(),
            tx_power_w: dbm_to_watts(self.tx_power_dbm),
            harvest_efficiency: self.harvest_efficiency,
            noise_power_w: dbm_to_watts(self.noise_power_dbm),
            packet_bits: self.packet_mbits * 1e6,
            bandwidth_hz: self.bandwidth_mhz * 1e6,
            rounding_mode: self.rounding_mode,
            correlated_links: self.correlated_links,
            seed: self.seed,
        }
    }

    /// Inverse of [`ConfigFile::into_config`]. Link physics are stored once
    /// in the file, so the first source's values are written.
    pub fn from_config(config: &SystemConfig) -> Self {
        let first = &config.sources[0].link;
        ConfigFile {
            tx_power_dbm: watts_to_dbm(config.tx_power_w),
            harvest_efficiency: config.harvest_efficiency,
            noise_power_dbm: watts_to_dbm(config.noise_power_w),
            packet_mbits: config.packet_bits * 1e-6,
            bandwidth_mhz: config.bandwidth_hz * 1e-6,
            reference_gain: first.reference_gain,
            path_loss_exponent: first.path_loss_exponent,
            rounding_mode: config.rounding_mode,
            correlated_links: config.correlated_links,
            seed: config.seed,
            sources: config
                .sources
                .iter()
                .map(|s| SourceFile {
                    distance_m: s.link.distance_m,
                    battery_capacity_mj: s.battery_capacity_j * 1e3,
                    battery_quanta: s.battery_quanta,
                    aoi_cap: s.aoi_cap,
                    weight: s.weight,
                    levels_downlink: s.link.levels_downlink,
                    levels_uplink: s.link.levels_uplink,
                })
                .collect(),
        }
    }
}

/// Ready-made scenarios used by the experiments, tests and sample configs.
pub mod presets {
    use super::*;

    /// Per-source knobs for [`build`].
    #[derive(Debug, Clone, Copy)]
    pub struct SourceKnobs {
        pub distance_m: f64,
        pub battery_capacity_mj: f64,
        pub battery_quanta: u32,
        pub aoi_cap: u32,
        pub levels: u32,
    }

    /// Default physics (1 MHz, 37 dBm, η = 0.5, -95 dBm noise, Γ = 0.2, ν = 2)
    /// with equal weights across sources.
    pub fn build(sources: &[SourceKnobs], packet_mbits: f64) -> SystemConfig {
        let weight = 1.0 / sources.len() as f64;
        ConfigFile {
            tx_power_dbm: 37.0,
            harvest_efficiency: 0.5,
            noise_power_dbm: -95.0,
            packet_mbits,
            bandwidth_mhz: 1.0,
            reference_gain: 0.2,
            path_loss_exponent: 2.0,
            rounding_mode: RoundingMode::LowerBound,
            correlated_links: false,
            seed: 0,
            sources: sources
                .iter()
                .map(|k| SourceFile {
                    distance_m: k.distance_m,
                    battery_capacity_mj: k.battery_capacity_mj,
                    battery_quanta: k.battery_quanta,
                    aoi_cap: k.aoi_cap,
                    weight,
                    levels_downlink: k.levels,
                    levels_uplink: k.levels,
                })
                .collect(),
        }
        .into_config()
    }

    fn knobs(distance_m: f64, battery_capacity_mj: f64, battery_quanta: u32, cap: u32) -> SourceKnobs {
        SourceKnobs {
            distance_m,
            battery_capacity_mj,
            battery_quanta,
            aoi_cap: cap,
            levels: cap,
        }
    }

    /// Two sources at 25 m and 40 m, 0.4 mJ batteries in 5 quanta, 15 Mbit
    /// packets, six AoI and channel levels each.
    pub fn two_source_policy_map() -> SystemConfig {
        build(&[knobs(25.0, 0.4, 5, 6), knobs(40.0, 0.4, 5, 6)], 15.0)
    }

    /// One source at 35 m, 0.3 mJ battery in 9 quanta, 12 Mbit packets, ten
    /// AoI and channel levels.
    pub fn single_source_policy_map() -> SystemConfig {
        build(&[knobs(35.0, 0.3, 9, 10)], 12.0)
    }

    /// One source at 25 m, 0.3 mJ battery in 3 quanta, 12 Mbit packets, four
    /// AoI and channel levels (256 states).
    pub fn single_source_learning() -> SystemConfig {
        build(&[knobs(25.0, 0.3, 3, 4)], 12.0)
    }

    /// Three sources at 25, 40 and 20 m with 3-quanta batteries and four AoI
    /// and channel levels each.
    pub fn three_source_sweep(battery_capacity_mj: f64, packet_mbits: f64) -> SystemConfig {
        build(
            &[
                knobs(25.0, battery_capacity_mj, 3, 4),
                knobs(40.0, battery_capacity_mj, 3, 4),
                knobs(20.0, battery_capacity_mj, 3, 4),
            ],
            packet_mbits,
        )
    }
}
