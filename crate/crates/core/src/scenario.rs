//! Scenario files: one JSON document describing the gimbal, sensors, robots
//! and protocols. Every dimensional key carries its unit as a suffix.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::firmodel::{FirCharacter, OffsetLoad};
use crate::gimbalsim::GimbalParams;
use crate::mapper::{default_calibration_loads, Plant, SweepSpec, TrimConfig};
use crate::virtualsensors::{BalanceConfig, MocapConfig};
use crate::AxisPair;

/// The scenario reproducing the published experiments.
pub const REFERENCE_SCENARIO: &str = include_str!("../scenarios/reference.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProtocol {
    pub loads: Vec<OffsetLoad>,
    #[serde(rename = "settle_duration_s")]
    pub settle_duration: f64,
    #[serde(rename = "average_window_s")]
    pub average_window: f64,
}

impl Default for CalibrationProtocol {
    fn default() -> Self {
        Self {
            loads: default_calibration_loads(),
            settle_duration: 30.0,
            average_window: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponseProtocol {
    #[serde(rename = "initial_angles_deg")]
    pub initial_angles: Vec<f64>,
    #[serde(rename = "duration_s")]
    pub duration: f64,
}

impl Default for StepResponseProtocol {
    fn default() -> Self {
        Self {
            initial_angles: vec![-4.0, -2.0, 2.0, 4.0],
            duration: 20.0,
        }
    }
}

/// A trim reported by the original experiments, kept for side-by-side output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrim {
    pub source: String,
    #[serde(rename = "delta_a_V", default, skip_serializing_if = "Option::is_none")]
    pub delta_a: Option<f64>,
    #[serde(rename = "offset_V", default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationProtocol {
    pub fly: FirCharacter,
    pub sweep: SweepSpec,
    /// Loads trimmed against one at a time before the sweep.
    pub loads: Vec<OffsetLoad>,
    #[serde(default)]
    pub reference_trims: Vec<ReferenceTrim>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(rename = "integrator_step_s")]
    pub integrator_step: f64,
    pub gimbal: AxisPair<GimbalParams>,
    #[serde(default)]
    pub mocap: MocapConfig,
    #[serde(default)]
    pub balance: BalanceConfig,
    #[serde(default)]
    pub calibration: CalibrationProtocol,
    #[serde(default)]
    pub step_response: StepResponseProtocol,
    pub mapping_fly: FirCharacter,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub trim: TrimConfig,
    /// Trim the mapping fly in free flight before sweeping it.
    #[serde(default = "yes")]
    pub trim_before_sweep: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationProtocol>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn reference() -> Self {
        Self::from_json(REFERENCE_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.integrator_step > 0.0 && self.integrator_step <= 0.01) {
            return Err(invalid("integrator_step_s must lie in (0, 0.01]"));
        }
        self.gimbal.pitch.validate()?;
        self.gimbal.roll.validate()?;
        self.mocap.validate()?;
        self.balance.validate()?;
        let cal = &self.calibration;
        if !(cal.average_window > 0.0 && cal.average_window < cal.settle_duration) {
            return Err(invalid("calibration averaging window must be shorter than its settle time"));
        }
        for load in &cal.loads {
            load.validate()?;
        }
        if !(self.step_response.duration > 0.0) {
            return Err(invalid("step response duration must be positive"));
        }
        self.mapping_fly.validate()?;
        self.sweep.validate()?;
        self.trim.validate()?;
        if let Some(v) = &self.validation {
            v.fly.validate()?;
            v.sweep.validate()?;
            for load in &v.loads {
                load.validate()?;
            }
        }
        Ok(())
    }

    /// Removes every noise source: robot variability, sensors and trim
    /// observations.
    pub fn without_noise(mut self) -> Self {
        let quiet = |f: &mut FirCharacter| {
            f.pitch_inner_noise_sd = 0.0;
            f.roll_inner_noise_sd = 0.0;
            f.pitch_extreme_noise_sd = 0.0;
            f.roll_extreme_noise_sd = 0.0;
            f.thrust_noise_sd = 0.0;
        };
        quiet(&mut self.mapping_fly);
        if let Some(v) = &mut self.validation {
            quiet(&mut v.fly);
        }
        self.mocap.marker_position_sd = 0.0;
        self.balance.reading_sd = 0.0;
        self.trim.observation_noise_sd = 0.0;
        self
    }

    /// Sets both cross-axis coupling coefficients of every robot, µNm/V.
    pub fn with_coupling(mut self, coupling: f64) -> Self {
        let set = |f: &mut FirCharacter| {
            f.coupling_pitch_to_roll = coupling;
            f.coupling_roll_to_pitch = coupling;
        };
        set(&mut self.mapping_fly);
        if let Some(v) = &mut self.validation {
            set(&mut v.fly);
        }
        self
    }

    /// SHA-256 of the effective configuration, hex encoded. The output
    /// directory is left out so relocated runs hash the same.
    pub fn hash(&self) -> String {
        let mut cfg = self.clone();
        cfg.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&cfg).expect("config serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The stand carrying `fly`, converting angles with `calibrated_stiffness`.
    pub fn plant(&self, fly: &FirCharacter, calibrated_stiffness: AxisPair<f64>) -> Plant {
        Plant {
            gimbal: self.gimbal,
            fir: fly.clone(),
            mocap: self.mocap,
            balance: self.balance,
            calibrated_stiffness,
            dt: self.integrator_step,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gimbalsim::total_stiffness;
    use crate::units::per_rad_to_per_deg;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bundled_scenario_matches_reported_device() {
        let cfg = ScenarioConfig::reference();
        assert_abs_diff_eq!(per_rad_to_per_deg(total_stiffness(&cfg.gimbal.roll)), 1.52, epsilon = 1e-6);
        assert_abs_diff_eq!(per_rad_to_per_deg(total_stiffness(&cfg.gimbal.pitch)), 1.88, epsilon = 1e-6);
        for axis in [cfg.gimbal.pitch, cfg.gimbal.roll] {
            let tau = axis.dominant_time_constant().unwrap();
            assert!((3.0..=4.0).contains(&tau), "{tau}");
        }
        assert_abs_diff_eq!(cfg.mapping_fly.nominal_trim(crate::Axis::Roll), 17.0, epsilon = 0.01);
        assert_abs_diff_eq!(cfg.mapping_fly.nominal_trim(crate::Axis::Pitch), -3.0, epsilon = 0.01);
        let v = cfg.validation.as_ref().unwrap();
        assert_abs_diff_eq!(v.fly.nominal_trim(crate::Axis::Roll), -10.0, epsilon = 0.01);
        assert_abs_diff_eq!(v.fly.nominal_trim(crate::Axis::Pitch), 7.5, epsilon = 0.01);
    }

    #[test]
    fn overrides_change_the_hash() {
        let cfg = ScenarioConfig::reference();
        let h = cfg.hash();
        assert_eq!(h.len(), 64);
        assert_eq!(h, cfg.clone().hash());
        assert_ne!(h, cfg.clone().with_coupling(0.1).hash());
        assert_ne!(h, cfg.without_noise().hash());
    }

    #[test]
    fn quiet_scenario_has_no_noise() {
        let cfg = ScenarioConfig::reference().without_noise();
        assert_eq!(cfg.mocap.marker_position_sd, 0.0);
        assert_eq!(cfg.mapping_fly.roll_extreme_noise_sd, 0.0);
        assert_eq!(cfg.validation.unwrap().fly.thrust_noise_sd, 0.0);
    }

    #[test]
    fn unitless_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(REFERENCE_SCENARIO).unwrap();
        let roll = v["gimbal"]["roll"].as_object_mut().unwrap();
        let cw = roll.remove("counterweight_mass_mg").unwrap();
        roll.insert("counterweight_mass".into(), cw);
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(REFERENCE_SCENARIO).unwrap();
        v["integrator_step_s"] = serde_json::json!(-1.0);
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
    }
}
