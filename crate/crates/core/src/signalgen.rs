//! Two-wing sinusoidal drive commands.
//!
//! Each wing is driven by a sinusoid around half the bias voltage. The mean
//! of the pair is shifted by the offset voltage `V_o` (pitch) and the two
//! amplitudes differ by `δA` (roll):
//!
//! ```text
//! v1(t) = V_b/2 − V_o + ((A + δA)/2)·sin(2πft)
//! v2(t) = V_b/2 + V_o − ((A − δA)/2)·sin(2πft)
//! ```
//!
//! `A` is the per-wing baseline peak-to-peak amplitude.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveCommand {
    #[serde(rename = "bias_voltage_V")]
    pub bias_voltage: f64,
    #[serde(rename = "amplitude_V")]
    pub amplitude: f64,
    #[serde(rename = "amplitude_difference_V")]
    pub amplitude_difference: f64,
    #[serde(rename = "offset_voltage_V")]
    pub offset_voltage: f64,
    #[serde(rename = "flap_frequency_Hz")]
    pub flap_frequency: f64,
    #[serde(rename = "duration_s")]
    pub duration: f64,
}

impl DriveCommand {
    pub fn new(
        bias_voltage: f64,
        amplitude: f64,
        amplitude_difference: f64,
        offset_voltage: f64,
        flap_frequency: f64,
        duration: f64,
    ) -> Result<Self> {
        let cmd = Self {
            bias_voltage,
            amplitude,
            amplitude_difference,
            offset_voltage,
            flap_frequency,
            duration,
        };
        cmd.validate()?;
        Ok(cmd)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.bias_voltage,
            self.amplitude,
            self.amplitude_difference,
            self.offset_voltage,
            self.flap_frequency,
            self.duration,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("drive command fields must be finite"));
        }
        if self.flap_frequency <= 0.0 {
            return Err(invalid("flap frequency must be positive"));
        }
        if self.duration <= 0.0 {
            return Err(invalid("command duration must be positive"));
        }
        if self.bias_voltage <= 0.0 {
            return Err(invalid("bias voltage must be positive"));
        }
        if self.amplitude < self.amplitude_difference.abs() {
            return Err(invalid(format!(
                "amplitude {} V is smaller than |δA| = {} V",
                self.amplitude,
                self.amplitude_difference.abs()
            )));
        }
        Ok(())
    }

    /// Per-wing sinusoid amplitudes (half of each wing's peak-to-peak).
    pub fn wing_amplitudes(&self) -> (f64, f64) {
        (
            (self.amplitude + self.amplitude_difference) / 2.0,
            (self.amplitude - self.amplitude_difference) / 2.0,
        )
    }
}

/// Instantaneous drive voltages of the two wings at time `t`.
pub fn drive_voltages(cmd: &DriveCommand, t: f64) -> (f64, f64) {
    let s = (2.0 * PI * cmd.flap_frequency * t).sin();
    let (a1, a2) = cmd.wing_amplitudes();
    let mid = cmd.bias_voltage / 2.0;
    (
        mid - cmd.offset_voltage + a1 * s,
        mid + cmd.offset_voltage - a2 * s,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RailCheck {
    pub feasible: bool,
    /// Highest voltage reached by either wing.
    pub max_voltage: f64,
    /// Lowest voltage reached by either wing.
    pub min_voltage: f64,
    /// Whichever of the two extremes lies further from `V_b/2`.
    pub extremum: f64,
}

/// Closed-form check that both drive signals stay inside `[margin, V_b − margin]`.
pub fn rail_feasible(cmd: &DriveCommand, margin: f64) -> RailCheck {
    let mid = cmd.bias_voltage / 2.0;
    let (a1, a2) = cmd.wing_amplitudes();
    let c1 = mid - cmd.offset_voltage;
    let c2 = mid + cmd.offset_voltage;
    let max_voltage = (c1 + a1.abs()).max(c2 + a2.abs());
    let min_voltage = (c1 - a1.abs()).min(c2 - a2.abs());
    let extremum = if (max_voltage - mid).abs() >= (mid - min_voltage).abs() {
        max_voltage
    } else {
        min_voltage
    };
    RailCheck {
        feasible: min_voltage >= margin && max_voltage <= cmd.bias_voltage - margin,
        max_voltage,
        min_voltage,
        extremum,
    }
}

/// Fails with [`Error::RailViolation`] unless the command is rail-feasible.
pub fn require_feasible(cmd: &DriveCommand, margin: f64) -> Result<RailCheck> {
    let check = rail_feasible(cmd, margin);
    if check.feasible {
        Ok(check)
    } else {
        Err(Error::RailViolation {
            extremum: check.extremum,
            bias: cmd.bias_voltage,
            margin,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveformSeries {
    pub sample_rate: f64,
    pub samples_v1: Vec<f64>,
    pub samples_v2: Vec<f64>,
}

impl WaveformSeries {
    pub fn len(&self) -> usize {
        self.samples_v1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples_v1.is_empty()
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 / self.sample_rate
    }

    /// Writes `t_seconds,v1_volts,v2_volts` rows with a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t_seconds", "v1_volts", "v2_volts"])?;
        for (i, (v1, v2)) in self.samples_v1.iter().zip(&self.samples_v2).enumerate() {
            w.write_record([
                self.time(i).to_string(),
                v1.to_string(),
                v2.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates the drive signals on a uniform grid of `round(rate × duration)`
/// samples starting at `t = 0`.
pub fn sample_waveform(cmd: &DriveCommand, sample_rate: f64) -> Result<WaveformSeries> {
    cmd.validate()?;
    if !(sample_rate >= 2.0 * cmd.flap_frequency) {
        return Err(Error::Aliasing {
            rate: sample_rate,
            frequency: cmd.flap_frequency,
        });
    }
    let n = (sample_rate * cmd.duration).round() as usize;
    let (samples_v1, samples_v2) = (0..n)
        .map(|i| drive_voltages(cmd, i as f64 / sample_rate))
        .unzip();
    Ok(WaveformSeries {
        sample_rate,
        samples_v1,
        samples_v2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cmd(vb: f64, a: f64, da: f64, vo: f64) -> DriveCommand {
        DriveCommand::new(vb, a, da, vo, 180.0, 1.0).unwrap()
    }

    #[test]
    fn zero_amplitude_is_symmetric() {
        let c = cmd(250.0, 0.0, 0.0, 0.0);
        for t in [0.0, 0.0013, 0.37] {
            assert_eq!(drive_voltages(&c, t), (125.0, 125.0));
        }
    }

    #[test]
    fn peak_of_baseline_amplitude() {
        let c = cmd(250.0, 192.0, 0.0, 0.0);
        // sin = +1 at a quarter period
        let (v1, v2) = drive_voltages(&c, 0.25 / 180.0);
        assert_abs_diff_eq!(v1, 221.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v2, 29.0, epsilon = 1e-9);
    }

    #[test]
    fn pitch_trim_offset_at_t0() {
        let c = cmd(250.0, 192.0, 0.0, -3.0);
        assert_eq!(drive_voltages(&c, 0.0), (128.0, 122.0));
    }

    #[test]
    fn amplitude_must_cover_difference() {
        assert!(DriveCommand::new(250.0, 10.0, 11.0, 0.0, 180.0, 1.0).is_err());
        assert!(DriveCommand::new(250.0, 10.0, -10.0, 0.0, 180.0, 1.0).is_ok());
        assert!(DriveCommand::new(0.0, 10.0, 0.0, 0.0, 180.0, 1.0).is_err());
        assert!(DriveCommand::new(250.0, 10.0, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(DriveCommand::new(250.0, 10.0, 0.0, 0.0, 180.0, 0.0).is_err());
    }

    #[test]
    fn rail_examples() {
        let idle = rail_feasible(&cmd(250.0, 0.0, 0.0, 0.0), 0.0);
        assert!(idle.feasible);
        assert_eq!(idle.extremum, 125.0);

        let corner = cmd(250.0, 192.0, 25.0, -15.0);
        let at0 = rail_feasible(&corner, 0.0);
        assert!(at0.feasible);
        assert_abs_diff_eq!(at0.extremum, 248.5, epsilon = 1e-12);
        assert!(!rail_feasible(&corner, 2.0).feasible);
        assert!(require_feasible(&corner, 2.0).is_err());

        assert!(!rail_feasible(&cmd(250.0, 240.0, 25.0, -15.0), 0.0).feasible);
    }

    #[test]
    fn waveform_length_and_first_sample() {
        let c = DriveCommand::new(250.0, 192.0, 10.0, 4.0, 180.0, 1.0).unwrap();
        let w = sample_waveform(&c, 10_000.0).unwrap();
        assert_eq!(w.len(), 10_000);
        assert_eq!(w.samples_v1[0], 121.0);
        assert_eq!(w.samples_v2[0], 129.0);
    }

    #[test]
    fn aliasing_guard() {
        let c = DriveCommand::new(250.0, 192.0, 0.0, 0.0, 180.0, 1.0).unwrap();
        assert!(matches!(
            sample_waveform(&c, 359.0),
            Err(Error::Aliasing { .. })
        ));
        assert!(sample_waveform(&c, 360.0).is_ok());
    }

    #[test]
    fn mean_over_whole_periods() {
        // 180 Hz sampled at 10 kHz for 1 s covers 180 whole periods
        let c = DriveCommand::new(250.0, 192.0, 17.0, -3.0, 180.0, 1.0).unwrap();
        let w = sample_waveform(&c, 10_000.0).unwrap();
        let mean = w.samples_v1.iter().sum::<f64>() / w.len() as f64;
        assert_abs_diff_eq!(mean, 128.0, epsilon = 1e-9);
    }

    #[test]
    fn csv_has_header() {
        let c = DriveCommand::new(250.0, 100.0, 0.0, 0.0, 100.0, 0.01).unwrap();
        let w = sample_waveform(&c, 1000.0).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t_seconds,v1_volts,v2_volts"));
        assert_eq!(lines.next(), Some("0,125,125"));
        assert_eq!(text.lines().count(), 11);
    }

    fn arb_command() -> impl Strategy<Value = DriveCommand> {
        (50.0..300.0f64, 0.0..300.0f64, -1.0..1.0f64, -40.0..40.0f64, 50.0..250.0f64).prop_map(
            |(vb, a, frac, vo, f)| DriveCommand {
                bias_voltage: vb,
                amplitude: a,
                amplitude_difference: frac * a,
                offset_voltage: vo,
                flap_frequency: f,
                duration: 1.0 / f,
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rail_check_matches_brute_force(c in arb_command(), margin in 0.0..5.0f64) {
            // 100 samples per period lands exactly on sin = ±1
            let w = sample_waveform(&c, 100.0 * c.flap_frequency).unwrap();
            let all = w.samples_v1.iter().chain(&w.samples_v2);
            let hi = all.clone().cloned().fold(f64::MIN, f64::max);
            let lo = all.cloned().fold(f64::MAX, f64::min);
            let check = rail_feasible(&c, margin);
            prop_assert!((check.max_voltage - hi).abs() < 1e-9);
            prop_assert!((check.min_voltage - lo).abs() < 1e-9);
            let brute = lo >= margin && hi <= c.bias_voltage - margin;
            let slack = (lo - margin).abs().min((c.bias_voltage - margin - hi).abs());
            if slack > 1e-9 {
                prop_assert_eq!(check.feasible, brute);
            }
        }

        #[test]
        fn antisymmetric_without_difference(c in arb_command(), t in 0.0..1.0f64) {
            let c = DriveCommand { amplitude_difference: 0.0, ..c };
            let (v1, v2) = drive_voltages(&c, t);
            prop_assert!((v1 + v2 - c.bias_voltage).abs() < 1e-9);
        }

        #[test]
        fn peak_to_peak_split(c in arb_command()) {
            let w = sample_waveform(&c, 100.0 * c.flap_frequency).unwrap();
            let span = |v: &[f64]| {
                v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
            };
            prop_assert!((span(&w.samples_v1) - (c.amplitude + c.amplitude_difference)).abs() < 1e-9);
            prop_assert!((span(&w.samples_v2) - (c.amplitude - c.amplitude_difference)).abs() < 1e-9);
        }
    }
}
