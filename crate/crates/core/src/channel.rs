//! Discretized block-fading channel.
//!
//! The small-scale power gain is unit-mean exponential (Rayleigh amplitude).
//! Its support is split into `num_levels` intervals of equal probability and
//! each interval is represented by the conditional mean of the gain inside it,
//! scaled by the large-scale mean gain. Levels are 1-based throughout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Large-scale link description between the destination and one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub distance_m: f64,
    pub path_loss_exponent: f64,
    pub reference_gain: f64,
    pub levels_downlink: u32,
    pub levels_uplink: u32,
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "distance must be positive, got {}",
                self.distance_m
            )));
        }
        if !(self.path_loss_exponent >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "path-loss exponent must be non-negative, got {}",
                self.path_loss_exponent
            )));
        }
        if !(self.reference_gain > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "reference gain must be positive, got {}",
                self.reference_gain
            )));
        }
        if self.levels_downlink == 0 || self.levels_uplink == 0 {
            return Err(Error::InvalidConfig("channel level counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Average power gain `Γ · d^(-ν)`.
    pub fn mean_gain(&self) -> f64 {
        self.reference_gain * self.distance_m.powf(-self.path_loss_exponent)
    }
}

/// Equal-probability quantizer of an exponentially distributed power gain.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingQuantizer {
    num_levels: u32,
    mean_gain: f64,
    representative_gains: Vec<f64>,
    level_pmf: Vec<f64>,
}

/// Builds the quantizer for a link with the given average gain.
///
/// Bin `j` (0-based) of the unit exponential spans `[a_j, a_{j+1})` with
/// `a_j = -ln(1 - j/n)`; its conditional mean is
/// `n · ((a_j + 1) e^{-a_j} - (a_{j+1} + 1) e^{-a_{j+1}})`.
pub fn build_quantizer(mean_gain: f64, num_levels: u32) -> Result<FadingQuantizer> {
    if !(mean_gain > 0.0) || !mean_gain.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "mean channel gain must be positive and finite, got {mean_gain}"
        )));
    }
    if num_levels == 0 {
        return Err(Error::InvalidConfig("a quantizer needs at least one level".into()));
    }
    let n = num_levels as f64;
    // (a + 1) e^{-a} at a = -ln(1 - q), where e^{-a} = 1 - q.
    let tail_moment = |j: u32| -> f64 {
        if j == num_levels {
            return 0.0;
        }
        let survival = 1.0 - j as f64 / n;
        (1.0 - survival.ln()) * survival
    };
    let representative_gains = (0..num_levels)
        .map(|j| mean_gain * n * (tail_moment(j) - tail_moment(j + 1)))
        .collect();
    Ok(FadingQuantizer {
        num_levels,
        mean_gain,
        representative_gains,
        level_pmf: vec![1.0 / n; num_levels as usize],
    })
}

impl FadingQuantizer {
    pub fn num_levels(&self) -> u32 {
        self.num_levels
    }

    pub fn mean_gain(&self) -> f64 {
        self.mean_gain
    }

    pub fn representative_gains(&self) -> &[f64] {
        &self.representative_gains
    }

    pub fn level_pmf(&self) -> &[f64] {
        &self.level_pmf
    }

    /// Representative gain of a 1-based level.
    pub fn gain(&self, level: u32) -> f64 {
        self.representative_gains[(level - 1) as usize]
    }

    pub fn probability(&self, level: u32) -> f64 {
        self.level_pmf[(level - 1) as usize]
    }

    /// Draws a 1-based level; every level is equally likely.
    pub fn sample_level<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if self.num_levels == 1 {
            return 1;
        }
        rng.gen_range(1..=self.num_levels)
    }
}
