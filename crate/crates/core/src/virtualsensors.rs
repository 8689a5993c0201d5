//! Emulated motion-capture and precision-balance read-outs.
//!
//! Motion capture tracks two markers a fixed distance apart on each gimbal
//! axis; every frame perturbs both markers transversely and the angle is
//! recovered from the perturbed segment. The balance supports the gimbal
//! frame, so upward thrust lowers its reading.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gimbalsim::AxisTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MocapConfig {
    #[serde(rename = "frame_rate_Hz")]
    pub frame_rate: f64,
    #[serde(rename = "marker_separation_mm")]
    pub marker_separation: f64,
    #[serde(rename = "marker_position_sd_mm")]
    pub marker_position_sd: f64,
}

impl Default for MocapConfig {
    fn default() -> Self {
        Self {
            frame_rate: 240.0,
            marker_separation: 40.0,
            marker_position_sd: 0.05,
        }
    }
}

impl MocapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0 && self.marker_separation > 0.0 && self.marker_position_sd >= 0.0) {
            return Err(invalid(
                "motion capture needs a positive frame rate and marker separation and a non-negative noise",
            ));
        }
        Ok(())
    }

    /// Standard deviation of a single-frame angle estimate, rad.
    pub fn frame_angle_sd(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.marker_position_sd / self.marker_separation
    }

    /// Angle error when the two markers are displaced by one standard
    /// deviation in opposite directions, rad.
    pub fn angular_resolution(&self) -> f64 {
        (2.0 * self.marker_position_sd).atan2(self.marker_separation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    #[serde(rename = "report_rate_Hz")]
    pub report_rate: f64,
    #[serde(rename = "reading_sd_mg")]
    pub reading_sd: f64,
    #[serde(rename = "tare_mg")]
    pub tare: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            report_rate: 10.0,
            reading_sd: 0.1,
            tare: 0.0,
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.report_rate > 0.0 && self.reading_sd >= 0.0 && self.tare.is_finite()) {
            return Err(invalid("balance needs a positive report rate and a non-negative noise"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorUnit {
    Radian,
    MilligramForce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    pub timestamps: Vec<f64>,
    pub values: Vec<f64>,
    pub unit: SensorUnit,
}

impl SensorStream {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Writes one `t_seconds,reading` line per sample, without a header.
    pub fn write_log<W: Write>(&self, mut writer: W) -> Result<()> {
        for (t, v) in self.timestamps.iter().zip(&self.values) {
            writeln!(writer, "{t},{v}")?;
        }
        Ok(())
    }
}

/// Sample times `t0 + k/rate` for `k = 1..=n`, `n = round(rate·(t1 − t0))`.
fn frame_times(window: (f64, f64), rate: f64) -> Vec<f64> {
    let (t0, t1) = window;
    let n = (rate * (t1 - t0)).round().max(0.0) as usize;
    (1..=n).map(|k| t0 + k as f64 / rate).collect()
}

/// Orientation of the segment from `a` to `b` relative to the +x axis, rad.
pub fn angle_from_markers(a: [f64; 2], b: [f64; 2]) -> Result<f64> {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    if dx == 0.0 && dy == 0.0 {
        return Err(invalid("coincident markers define no orientation"));
    }
    Ok(dy.atan2(dx))
}

/// Nominal marker positions (mm) for a segment of length `d` rotated by `theta`.
pub fn marker_positions(theta: f64, d: f64) -> ([f64; 2], [f64; 2]) {
    let (s, c) = theta.sin_cos();
    let h = d / 2.0;
    ([-h * c, -h * s], [h * c, h * s])
}

/// Samples a true angle trajectory through the virtual motion-capture arena
/// over the window `(t0, t1]`.
pub fn mocap_stream<R: Rng + ?Sized>(
    trajectory: &AxisTrajectory,
    window: (f64, f64),
    cfg: &MocapConfig,
    rng: &mut R,
) -> Result<SensorStream> {
    cfg.validate()?;
    let (Some(&first), Some(&last)) = (trajectory.time.first(), trajectory.time.last()) else {
        return Err(invalid("empty trajectory"));
    };
    let tol = 1e-9 * (1.0 + last.abs());
    if window.0 < first - tol || window.1 > last + tol || window.1 <= window.0 {
        return Err(invalid(format!(
            "window ({}, {}) s is not covered by the trajectory [{first}, {last}] s",
            window.0, window.1
        )));
    }
    let timestamps = frame_times(window, cfg.frame_rate);
    let sd = cfg.marker_position_sd;
    let d = cfg.marker_separation;
    let mut values = Vec::with_capacity(timestamps.len());
    for &t in &timestamps {
        let theta = trajectory.theta_at(t);
        if sd == 0.0 {
            values.push(theta);
            continue;
        }
        let (mut a, mut b) = marker_positions(theta, d);
        let (s, c) = theta.sin_cos();
        let na: f64 = sd * rng.sample::<f64, _>(StandardNormal);
        let nb: f64 = sd * rng.sample::<f64, _>(StandardNormal);
        // transverse direction is (−sin θ, cos θ)
        a[0] -= na * s;
        a[1] += na * c;
        b[0] -= nb * s;
        b[1] += nb * c;
        values.push(angle_from_markers(a, b)?);
    }
    Ok(SensorStream {
        timestamps,
        values,
        unit: SensorUnit::Radian,
    })
}

/// Balance readings over `(t0, t1]` for a vertical thrust history in mg-force.
///
/// `reading = tare + supported_weight − thrust + noise`.
pub fn balance_stream<F, R>(
    thrust_mg: F,
    supported_weight_mg: f64,
    window: (f64, f64),
    cfg: &BalanceConfig,
    rng: &mut R,
) -> Result<SensorStream>
where
    F: Fn(f64) -> f64,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if window.1 <= window.0 {
        return Err(invalid("balance window must have positive length"));
    }
    let timestamps = frame_times(window, cfg.report_rate);
    let values = timestamps
        .iter()
        .map(|&t| {
            let noise = if cfg.reading_sd == 0.0 {
                0.0
            } else {
                cfg.reading_sd * rng.sample::<f64, _>(StandardNormal)
            };
            cfg.tare + supported_weight_mg - thrust_mg(t) + noise
        })
        .collect();
    Ok(SensorStream {
        timestamps,
        values,
        unit: SensorUnit::MilligramForce,
    })
}
