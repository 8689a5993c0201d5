//! Ground-truth flapping-wing robot.
//!
//! The robot maps a drive command to a stroke-averaged wrench: pitch and roll
//! torque plus vertical thrust. Torques are affine in the command with
//! optional cross-axis coupling and cubic saturation, a slowly accumulating
//! wear drift, and run-to-run Gaussian variability whose size depends on
//! whether the command sits at the edge of its range.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::signalgen::{require_feasible, DriveCommand};
use crate::units::{mm_to_m, nm_to_unm, weight_n};
use crate::Axis;

fn one() -> f64 {
    1.0
}

fn default_extreme_fraction() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirCharacter {
    #[serde(rename = "mass_mg")]
    pub mass: f64,
    #[serde(rename = "pitch_slope_uNm_per_V")]
    pub pitch_slope: f64,
    #[serde(rename = "roll_slope_uNm_per_V")]
    pub roll_slope: f64,
    #[serde(rename = "pitch_bias_uNm")]
    pub pitch_bias: f64,
    #[serde(rename = "roll_bias_uNm")]
    pub roll_bias: f64,
    #[serde(rename = "thrust_at_baseline_mg")]
    pub thrust_at_baseline: f64,
    #[serde(rename = "thrust_pitch_slope_mg_per_V")]
    pub thrust_pitch_slope: f64,
    #[serde(rename = "thrust_roll_slope_mg_per_V")]
    pub thrust_roll_slope: f64,
    /// Pitch torque produced per volt of roll command (δA).
    #[serde(rename = "coupling_roll_to_pitch_uNm_per_V")]
    pub coupling_roll_to_pitch: f64,
    /// Roll torque produced per volt of pitch command (V_o).
    #[serde(rename = "coupling_pitch_to_roll_uNm_per_V")]
    pub coupling_pitch_to_roll: f64,
    #[serde(rename = "pitch_cubic_uNm_per_V3", default)]
    pub pitch_cubic: f64,
    #[serde(rename = "roll_cubic_uNm_per_V3", default)]
    pub roll_cubic: f64,
    #[serde(rename = "pitch_inner_noise_sd_uNm")]
    pub pitch_inner_noise_sd: f64,
    #[serde(rename = "roll_inner_noise_sd_uNm")]
    pub roll_inner_noise_sd: f64,
    #[serde(rename = "pitch_extreme_noise_sd_uNm")]
    pub pitch_extreme_noise_sd: f64,
    #[serde(rename = "roll_extreme_noise_sd_uNm")]
    pub roll_extreme_noise_sd: f64,
    #[serde(rename = "thrust_noise_sd_mg", default)]
    pub thrust_noise_sd: f64,
    #[serde(default = "default_extreme_fraction")]
    pub extreme_threshold_fraction: f64,
    #[serde(rename = "pitch_command_range_V")]
    pub pitch_command_range: f64,
    #[serde(rename = "roll_command_range_V")]
    pub roll_command_range: f64,
    #[serde(rename = "pitch_wear_rate_uNm_per_s", default)]
    pub pitch_wear_rate: f64,
    #[serde(rename = "roll_wear_rate_uNm_per_s", default)]
    pub roll_wear_rate: f64,
    /// Multiplies all thrust; below 1 emulates a damaged actuator.
    #[serde(default = "one")]
    pub thrust_scale: f64,
}

impl Default for FirCharacter {
    /// An unbiased, noiseless, uncoupled 180 mg robot.
    fn default() -> Self {
        Self {
            mass: 180.0,
            pitch_slope: 0.13,
            roll_slope: 0.49,
            pitch_bias: 0.0,
            roll_bias: 0.0,
            thrust_at_baseline: 180.0,
            thrust_pitch_slope: 0.0,
            thrust_roll_slope: 0.0,
            coupling_roll_to_pitch: 0.0,
            coupling_pitch_to_roll: 0.0,
            pitch_cubic: 0.0,
            roll_cubic: 0.0,
            pitch_inner_noise_sd: 0.0,
            roll_inner_noise_sd: 0.0,
            pitch_extreme_noise_sd: 0.0,
            roll_extreme_noise_sd: 0.0,
            thrust_noise_sd: 0.0,
            extreme_threshold_fraction: default_extreme_fraction(),
            pitch_command_range: 15.0,
            roll_command_range: 25.0,
            pitch_wear_rate: 0.0,
            roll_wear_rate: 0.0,
            thrust_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    #[serde(rename = "pitch_uNm")]
    pub pitch: f64,
    #[serde(rename = "roll_uNm")]
    pub roll: f64,
    #[serde(rename = "thrust_mg")]
    pub thrust: f64,
}

/// Accumulated flapping time and the bias drift it has caused.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WearState {
    #[serde(rename = "flap_seconds_s")]
    pub flap_seconds: f64,
    #[serde(rename = "pitch_drift_uNm")]
    pub pitch_drift: f64,
    #[serde(rename = "roll_drift_uNm")]
    pub roll_drift: f64,
}

impl WearState {
    /// Wear state after `flap_seconds` of flapping from new.
    pub fn after(character: &FirCharacter, flap_seconds: f64) -> Self {
        advance_wear(character, WearState::default(), flap_seconds)
    }
}

/// Accumulates linear bias drift over `flap_seconds` of additional flapping.
pub fn advance_wear(character: &FirCharacter, state: WearState, flap_seconds: f64) -> WearState {
    debug_assert!(flap_seconds >= 0.0);
    WearState {
        flap_seconds: state.flap_seconds + flap_seconds,
        pitch_drift: state.pitch_drift + character.pitch_wear_rate * flap_seconds,
        roll_drift: state.roll_drift + character.roll_wear_rate * flap_seconds,
    }
}

impl FirCharacter {
    pub fn validate(&self) -> Result<()> {
        if self.pitch_slope <= 0.0 || self.roll_slope <= 0.0 {
            return Err(invalid("torque slopes must be positive"));
        }
        if self.thrust_at_baseline <= 0.0 {
            return Err(invalid("baseline thrust must be positive"));
        }
        let sds = [
            self.pitch_inner_noise_sd,
            self.roll_inner_noise_sd,
            self.pitch_extreme_noise_sd,
            self.roll_extreme_noise_sd,
            self.thrust_noise_sd,
        ];
        if sds.iter().any(|s| !(*s >= 0.0)) {
            return Err(invalid("noise standard deviations must be non-negative"));
        }
        if self.pitch_extreme_noise_sd < self.pitch_inner_noise_sd
            || self.roll_extreme_noise_sd < self.roll_inner_noise_sd
        {
            return Err(invalid("extreme-range noise must be at least the inner noise"));
        }
        if !(self.extreme_threshold_fraction > 0.0 && self.extreme_threshold_fraction <= 1.0) {
            return Err(invalid("extreme threshold fraction must lie in (0, 1]"));
        }
        if self.pitch_command_range <= 0.0 || self.roll_command_range <= 0.0 {
            return Err(invalid("command ranges must be positive"));
        }
        if self.mass < 0.0 || self.thrust_scale < 0.0 {
            return Err(invalid("mass and thrust scale must be non-negative"));
        }
        Ok(())
    }

    pub fn slope(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Pitch => self.pitch_slope,
            Axis::Roll => self.roll_slope,
        }
    }

    pub fn bias(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Pitch => self.pitch_bias,
            Axis::Roll => self.roll_bias,
        }
    }

    /// Whether a command lies in the high-variability band near the range edges.
    pub fn is_extreme(&self, offset_voltage: f64, amplitude_difference: f64) -> bool {
        let f = self.extreme_threshold_fraction;
        offset_voltage.abs() >= f * self.pitch_command_range
            || amplitude_difference.abs() >= f * self.roll_command_range
    }

    /// The noiseless wrench for a command offset pair under a given wear state.
    pub fn mean_wrench(&self, offset_voltage: f64, amplitude_difference: f64, wear: &WearState) -> Wrench {
        let vo = offset_voltage;
        let da = amplitude_difference;
        Wrench {
            pitch: self.pitch_slope * vo
                + self.pitch_cubic * vo.powi(3)
                + self.pitch_bias
                + self.coupling_roll_to_pitch * da
                + wear.pitch_drift,
            roll: self.roll_slope * da
                + self.roll_cubic * da.powi(3)
                + self.roll_bias
                + self.coupling_pitch_to_roll * vo
                + wear.roll_drift,
            thrust: self.thrust_scale
                * (self.thrust_at_baseline
                    + self.thrust_pitch_slope * vo
                    + self.thrust_roll_slope * da),
        }
    }

    /// The command that nulls torque on `axis` with no coupling, saturation or load.
    pub fn nominal_trim(&self, axis: Axis) -> f64 {
        -self.bias(axis) / self.slope(axis)
    }
}

/// Stroke-averaged wrench for one run of `cmd`, including run-to-run noise.
///
/// Three standard normal draws (pitch, roll, thrust) are consumed from `rng`
/// on every call regardless of the configured noise levels, so stream
/// positions do not depend on the noise configuration.
pub fn stroke_avg_wrench<R: Rng + ?Sized>(
    character: &FirCharacter,
    cmd: &DriveCommand,
    flap_time_so_far: f64,
    rng: &mut R,
) -> Result<Wrench> {
    if !(flap_time_so_far >= 0.0) {
        return Err(invalid("flap time must be non-negative"));
    }
    cmd.validate()?;
    require_feasible(cmd, 0.0)?;
    let wear = WearState::after(character, flap_time_so_far);
    let mean = character.mean_wrench(cmd.offset_voltage, cmd.amplitude_difference, &wear);
    let (sd_pitch, sd_roll) = if character.is_extreme(cmd.offset_voltage, cmd.amplitude_difference) {
        (character.pitch_extreme_noise_sd, character.roll_extreme_noise_sd)
    } else {
        (character.pitch_inner_noise_sd, character.roll_inner_noise_sd)
    };
    let z_pitch: f64 = rng.sample(StandardNormal);
    let z_roll: f64 = rng.sample(StandardNormal);
    let z_thrust: f64 = rng.sample(StandardNormal);
    Ok(Wrench {
        pitch: mean.pitch + sd_pitch * z_pitch,
        roll: mean.roll + sd_roll * z_roll,
        thrust: mean.thrust + character.thrust_noise_sd * z_thrust,
    })
}

/// A known mass hung on a rod at a known distance from the centre of mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetLoad {
    #[serde(rename = "mass_mg")]
    pub mass: f64,
    #[serde(rename = "lever_mm")]
    pub lever: f64,
    pub axis: Axis,
    /// +1 or −1.
    pub sign: i8,
}

impl OffsetLoad {
    pub fn new(mass: f64, lever: f64, axis: Axis, sign: i8) -> Result<Self> {
        let load = Self {
            mass,
            lever,
            axis,
            sign,
        };
        load.validate()?;
        Ok(load)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass >= 0.0 && self.lever >= 0.0) {
            return Err(invalid("load mass and lever must be non-negative"));
        }
        if self.sign != 1 && self.sign != -1 {
            return Err(invalid("load sign must be +1 or -1"));
        }
        Ok(())
    }
}

/// Static torque of an offset load, in µNm.
pub fn offset_torque(load: &OffsetLoad, g: f64) -> f64 {
    f64::from(load.sign) * nm_to_unm(weight_n(load.mass, g) * mm_to_m(load.lever))
}
