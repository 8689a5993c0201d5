//! Sensor identification: stiffness from hung-mass loading, torque
//! resolution, and decay time constants.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gimbalsim::AxisTrajectory;
use crate::units::per_rad_to_per_deg;
use crate::{Axis, AxisPair};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    #[serde(rename = "applied_torque_uNm")]
    pub applied_torque: f64,
    #[serde(rename = "measured_angle_rad")]
    pub measured_angle: f64,
    pub axis: Axis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessFit {
    /// µNm/rad.
    #[serde(rename = "k_s_uNm_per_rad")]
    pub k_s: f64,
    #[serde(rename = "intercept_uNm")]
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

impl StiffnessFit {
    pub fn k_s_per_deg(&self) -> f64 {
        per_rad_to_per_deg(self.k_s)
    }
}

/// Ordinary least-squares line `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits `y` on `x` by ordinary least squares.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(invalid("x and y lengths differ"));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} points cannot define a line")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::Degenerate("regressor has zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
            .sum();
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Regresses applied torque on measured angle; the slope is the total stiffness.
///
/// Needs at least three points loaded in both directions.
pub fn calibrate_stiffness(points: &[CalibrationPoint]) -> Result<StiffnessFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "stiffness calibration needs at least 3 points, got {}",
            points.len()
        )));
    }
    let positive = points.iter().any(|p| p.applied_torque > 0.0);
    let negative = points.iter().any(|p| p.applied_torque < 0.0);
    if !(positive && negative) {
        return Err(Error::InsufficientData(
            "calibration loads must be applied in both directions".into(),
        ));
    }
    if points.iter().any(|p| !(p.applied_torque.is_finite() && p.measured_angle.is_finite())) {
        return Err(invalid("calibration points must be finite"));
    }
    let angles: Vec<f64> = points.iter().map(|p| p.measured_angle).collect();
    let torques: Vec<f64> = points.iter().map(|p| p.applied_torque).collect();
    let line = fit_line(&angles, &torques)?;
    Ok(StiffnessFit {
        k_s: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        n_points: points.len(),
    })
}

/// Smallest resolvable torque, µNm, for a stiffness in µNm/rad and an angular
/// resolution in rad.
pub fn resolution_budget(k_s: f64, angular_resolution: f64) -> f64 {
    k_s * angular_resolution
}

/// Default fraction of the initial deflection below which a decay is no
/// longer used for fitting.
pub const DECAY_FIT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    #[serde(rename = "time_constant_s")]
    pub time_constant: f64,
    /// Quality of the log-linear fit.
    pub r_squared: f64,
    pub n_points: usize,
    #[serde(rename = "window_end_s")]
    pub window_end: f64,
}

pub fn fit_time_constant(trace: &AxisTrajectory) -> Result<DecayFit> {
    fit_time_constant_with(trace, DECAY_FIT_THRESHOLD)
}

/// Fits `ln|θ|` against time over the part of a free decay where
/// `|θ| ≥ threshold·|θ0|`.
pub fn fit_time_constant_with(trace: &AxisTrajectory, threshold: f64) -> Result<DecayFit> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid("decay threshold must lie in (0, 1)"));
    }
    let Some(&theta0) = trace.theta.first() else {
        return Err(Error::InsufficientData("empty decay trace".into()));
    };
    if theta0 == 0.0 || !theta0.is_finite() {
        return Err(Error::InsufficientData("decay trace starts at zero deflection".into()));
    }
    let sign = theta0.signum();
    let floor = threshold * theta0.abs();
    let mut times = Vec::new();
    let mut logs = Vec::new();
    let mut previous = theta0.abs();
    let mut crossed = false;
    for (&t, &theta) in trace.time.iter().zip(&trace.theta) {
        if theta * sign < 0.0 {
            return Err(Error::Underdamped(format!("trace crosses zero at t = {t:.3} s")));
        }
        let mag = theta.abs();
        if mag > previous * (1.0 + 1e-9) {
            return Err(Error::Underdamped(format!("deflection grows at t = {t:.3} s")));
        }
        previous = mag;
        if mag < floor {
            crossed = true;
            continue;
        }
        if !crossed {
            times.push(t);
            logs.push(mag.ln());
        }
    }
    if times.len() < 3 {
        return Err(Error::InsufficientData("fewer than 3 samples above the fit threshold".into()));
    }
    let line = fit_line(&times, &logs)?;
    if line.slope >= 0.0 {
        return Err(Error::Degenerate("trace does not decay".into()));
    }
    let time_constant = -1.0 / line.slope;
    let span = trace.time.last().unwrap() - trace.time[0];
    if span < 2.0 * time_constant {
        return Err(Error::InsufficientData(format!(
            "trace spans {span:.2} s, less than two time constants ({time_constant:.2} s each)"
        )));
    }
    Ok(DecayFit {
        time_constant,
        r_squared: line.r_squared,
        n_points: times.len(),
        window_end: *times.last().unwrap(),
    })
}

/// First-order cutoff frequency `1/(2π·τ)`, Hz.
pub fn bandwidth_from_tau(time_constant: f64) -> f64 {
    1.0 / (2.0 * PI * time_constant)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisCalibration {
    #[serde(rename = "k_s_uNm_per_rad")]
    pub k_s_per_rad: f64,
    #[serde(rename = "k_s_uNm_per_deg")]
    pub k_s_per_deg: f64,
    #[serde(rename = "intercept_uNm")]
    pub intercept: f64,
    pub r_squared: f64,
    #[serde(rename = "resolution_uNm")]
    pub resolution: f64,
    pub n_points: usize,
}

impl AxisCalibration {
    pub fn from_fit(fit: &StiffnessFit, angular_resolution: f64) -> Self {
        Self {
            k_s_per_rad: fit.k_s,
            k_s_per_deg: fit.k_s_per_deg(),
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            resolution: resolution_budget(fit.k_s, angular_resolution),
            n_points: fit.n_points,
        }
    }
}

pub type CalibrationReport = AxisPair<AxisCalibration>;
