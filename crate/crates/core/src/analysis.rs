//! Statistics over a sweep dataset: own-axis regressions, planar fits,
//! cross-axis correlation, inner/extreme dispersion, thrust summary and
//! trim consistency.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibkit::fit_line;
use crate::error::{Error, Result};
use crate::firmodel::{offset_torque, OffsetLoad};
use crate::mapper::{SweepDataset, TrimResult};
use crate::{Axis, AxisPair};

/// Disturbance torque of the power tether, µNm. Trim deviations below this
/// are indistinguishable from tether effects.
pub const TETHER_TORQUE: f64 = 0.3;

/// A measured point flattened for fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub offset_voltage: f64,
    pub amplitude_difference: f64,
    pub tau_pitch: f64,
    pub tau_roll: f64,
    pub thrust: f64,
}

impl Sample {
    pub fn command(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Pitch => self.offset_voltage,
            Axis::Roll => self.amplitude_difference,
        }
    }

    pub fn torque(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Pitch => self.tau_pitch,
            Axis::Roll => self.tau_roll,
        }
    }

    pub fn response(&self, r: Response) -> f64 {
        match r {
            Response::PitchTorque => self.tau_pitch,
            Response::RollTorque => self.tau_roll,
            Response::Thrust => self.thrust,
        }
    }
}

pub fn samples(ds: &SweepDataset) -> Vec<Sample> {
    ds.measured()
        .map(|(row, m)| Sample {
            offset_voltage: row.offset_voltage,
            amplitude_difference: row.amplitude_difference,
            tau_pitch: m.tau_pitch,
            tau_roll: m.tau_roll,
            thrust: m.thrust,
        })
        .collect()
}

fn other(axis: Axis) -> Axis {
    match axis {
        Axis::Pitch => Axis::Roll,
        Axis::Roll => Axis::Pitch,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisFit {
    #[serde(rename = "slope_uNm_per_V")]
    pub slope: f64,
    #[serde(rename = "intercept_uNm")]
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope, µNm/V.
    #[serde(rename = "slope_se_uNm_per_V")]
    pub slope_se: f64,
    pub n_points: usize,
}

impl AxisFit {
    pub fn predict(&self, command: f64) -> f64 {
        self.slope * command + self.intercept
    }

    /// Command where the trend line crosses zero, V.
    pub fn zero_crossing(&self) -> f64 {
        -self.intercept / self.slope
    }
}

/// Ordinary least squares of an axis torque on its own command.
pub fn axis_regression(samples: &[Sample], axis: Axis) -> Result<AxisFit> {
    if samples.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{axis} regression needs at least 3 points, got {}",
            samples.len()
        )));
    }
    let x: Vec<f64> = samples.iter().map(|s| s.command(axis)).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.torque(axis)).collect();
    let line = fit_line(&x, &y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sse: f64 = x
        .iter()
        .zip(&y)
        .map(|(xi, yi)| (yi - line.slope * xi - line.intercept).powi(2))
        .sum();
    Ok(AxisFit {
        slope: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        slope_se: (sse / (n - 2.0) / sxx).sqrt(),
        n_points: x.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    PitchTorque,
    RollTorque,
    Thrust,
}

impl Response {
    pub const ALL: [Response; 3] = [Response::PitchTorque, Response::RollTorque, Response::Thrust];

    pub fn name(self) -> &'static str {
        match self {
            Response::PitchTorque => "pitch_torque",
            Response::RollTorque => "roll_torque",
            Response::Thrust => "thrust",
        }
    }
}

/// `response ≈ c0 + c_pitch·V_o + c_roll·δA`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarFit {
    pub c0: f64,
    pub c_pitch: f64,
    pub c_roll: f64,
    pub residual_sd: f64,
    pub r_squared: f64,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl PlanarFit {
    pub fn predict(&self, offset_voltage: f64, amplitude_difference: f64) -> f64 {
        self.c0 + self.c_pitch * offset_voltage + self.c_roll * amplitude_difference
    }
}

/// Least squares of a response on `(1, V_o, δA)`.
pub fn planar_fit(samples: &[Sample], response: Response) -> Result<PlanarFit> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!("planar fit needs at least 4 points, got {n}")));
    }
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => samples[i].offset_voltage,
        _ => samples[i].amplitude_difference,
    });
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.response(response)));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Degenerate(
            "planar fit design is rank deficient; both commands must vary".into(),
        ));
    }
    let coef = svd
        .solve(&y, 1e-12 * smax)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let fitted = &design * &coef;
    let residuals: Vec<f64> = (&y - fitted).iter().copied().collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if sst > 0.0 { (1.0 - sse / sst).clamp(0.0, 1.0) } else { 1.0 };
    Ok(PlanarFit {
        c0: coef[0],
        c_pitch: coef[1],
        c_roll: coef[2],
        residual_sd: if n > 3 { (sse / (n - 3) as f64).sqrt() } else { 0.0 },
        r_squared,
        residuals,
    })
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter("correlation series differ in length".into()));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData("correlation needs at least 3 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation of a zero-variance series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn residualize(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let line = fit_line(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| b - line.slope * a - line.intercept).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCorrelation {
    pub roll_cmd_vs_pitch_torque: f64,
    pub pitch_cmd_vs_roll_torque: f64,
}

impl CrossCorrelation {
    /// Coefficient between the other axis's command and `torque_axis` torque.
    pub fn into_axis(&self, torque_axis: Axis) -> f64 {
        match torque_axis {
            Axis::Pitch => self.roll_cmd_vs_pitch_torque,
            Axis::Roll => self.pitch_cmd_vs_roll_torque,
        }
    }
}

/// Pearson correlation between each cross-axis command and the measured
/// torque.
pub fn cross_correlation(samples: &[Sample]) -> Result<CrossCorrelation> {
    let coef = |torque_axis: Axis| {
        let cmd: Vec<f64> = samples.iter().map(|s| s.command(other(torque_axis))).collect();
        let tau: Vec<f64> = samples.iter().map(|s| s.torque(torque_axis)).collect();
        pearson(&cmd, &tau)
    };
    Ok(CrossCorrelation {
        roll_cmd_vs_pitch_torque: coef(Axis::Pitch)?,
        pitch_cmd_vs_roll_torque: coef(Axis::Roll)?,
    })
}

/// Correlation between the cross-axis command and torque after both are
/// stripped of their linear dependence on the axis's own command. Unlike the
/// raw coefficient this is not diluted by own-axis torque variance.
pub fn residual_cross_correlation(samples: &[Sample]) -> Result<CrossCorrelation> {
    let coef = |torque_axis: Axis| -> Result<f64> {
        let own: Vec<f64> = samples.iter().map(|s| s.command(torque_axis)).collect();
        let cmd: Vec<f64> = samples.iter().map(|s| s.command(other(torque_axis))).collect();
        let tau: Vec<f64> = samples.iter().map(|s| s.torque(torque_axis)).collect();
        pearson(&residualize(&own, &cmd)?, &residualize(&own, &tau)?)
    };
    Ok(CrossCorrelation {
        roll_cmd_vs_pitch_torque: coef(Axis::Pitch)?,
        pitch_cmd_vs_roll_torque: coef(Axis::Roll)?,
    })
}

fn distinct_abs_levels(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut levels: Vec<f64> = values.map(f64::abs).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
}

/// The inner points: the three smallest-magnitude levels on each axis.
pub fn inner_points(samples: &[Sample]) -> Vec<Sample> {
    let pick = |axis: Axis| -> Vec<f64> {
        let mut levels: Vec<f64> = samples.iter().map(|s| s.command(axis)).collect();
        levels.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        levels.dedup();
        levels.truncate(3);
        levels
    };
    let (pitch, roll) = (pick(Axis::Pitch), pick(Axis::Roll));
    samples
        .iter()
        .filter(|s| pitch.contains(&s.offset_voltage) && roll.contains(&s.amplitude_difference))
        .copied()
        .collect()
}

/// Points at the largest command magnitude on either axis.
pub fn extreme_points(samples: &[Sample]) -> Vec<Sample> {
    let max_pitch = distinct_abs_levels(samples.iter().map(|s| s.offset_voltage))
        .last()
        .copied()
        .unwrap_or(0.0);
    let max_roll = distinct_abs_levels(samples.iter().map(|s| s.amplitude_difference))
        .last()
        .copied()
        .unwrap_or(0.0);
    samples
        .iter()
        .filter(|s| s.offset_voltage.abs() == max_pitch || s.amplitude_difference.abs() == max_roll)
        .copied()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    #[serde(rename = "sigma_inner_uNm")]
    pub inner: AxisPair<f64>,
    #[serde(rename = "sigma_extreme_uNm")]
    pub extreme: AxisPair<f64>,
    pub n_inner: usize,
    pub n_extreme: usize,
}

fn rms_from_trend(points: &[Sample], axis: Axis, fit: &AxisFit) -> f64 {
    let ss: f64 = points
        .iter()
        .map(|s| (s.torque(axis) - fit.predict(s.command(axis))).powi(2))
        .sum();
    (ss / points.len() as f64).sqrt()
}

/// Root-mean-square deviation from each axis trend line over the inner nine
/// and the extreme points.
pub fn dispersion_stats(samples: &[Sample], fits: &AxisPair<AxisFit>) -> Result<Dispersion> {
    let inner = inner_points(samples);
    let extreme = extreme_points(samples);
    if inner.len() < 9 {
        return Err(Error::InsufficientData(format!(
            "inner 3x3 incomplete: {} of 9 points measured",
            inner.len()
        )));
    }
    if extreme.is_empty() {
        return Err(Error::InsufficientData("no extreme points measured".into()));
    }
    let by_axis = |pts: &[Sample]| AxisPair::new(rms_from_trend(pts, Axis::Pitch, &fits.pitch), rms_from_trend(pts, Axis::Roll, &fits.roll));
    Ok(Dispersion {
        inner: by_axis(&inner),
        extreme: by_axis(&extreme),
        n_inner: inner.len(),
        n_extreme: extreme.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrustStats {
    #[serde(rename = "mean_mg")]
    pub mean: f64,
    pub max_dev_fraction: f64,
    #[serde(rename = "slope_pitch_mg_per_V")]
    pub slope_pitch: f64,
    #[serde(rename = "slope_roll_mg_per_V")]
    pub slope_roll: f64,
}

pub fn thrust_stats(samples: &[Sample]) -> Result<ThrustStats> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no thrust measurements".into()));
    }
    let mean = samples.iter().map(|s| s.thrust).sum::<f64>() / samples.len() as f64;
    if mean == 0.0 {
        return Err(Error::Degenerate("mean thrust is zero".into()));
    }
    let max_dev = samples.iter().map(|s| (s.thrust - mean).abs()).fold(0.0, f64::max);
    let plane = planar_fit(samples, Response::Thrust)?;
    Ok(ThrustStats {
        mean,
        max_dev_fraction: max_dev / mean.abs(),
        slope_pitch: plane.c_pitch,
        slope_roll: plane.c_roll,
    })
}

/// A trim found in free flight, with the load carried at the time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimObservation {
    pub source: String,
    pub trim: TrimResult,
    #[serde(default)]
    pub load: Option<OffsetLoad>,
}

impl TrimObservation {
    pub fn external_torque(&self, axis: Axis, gravity: f64) -> f64 {
        match &self.load {
            Some(l) if l.axis == axis => offset_torque(l, gravity),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimCheck {
    pub source: String,
    pub axis: Axis,
    #[serde(rename = "external_torque_uNm")]
    pub external_torque: f64,
    #[serde(rename = "predicted_trim_V")]
    pub predicted: f64,
    #[serde(rename = "observed_trim_V")]
    pub observed: f64,
    #[serde(rename = "deviation_V")]
    pub deviation_volts: f64,
    #[serde(rename = "deviation_uNm")]
    pub deviation_torque: f64,
    #[serde(rename = "sigma_uNm")]
    pub sigma: f64,
    pub deviation_sigmas: f64,
    pub within_sigma: bool,
    pub within_tether: bool,
}

/// Compares each trim against the zero crossing of the map, shifted by any
/// external load: predicted = −(intercept + load)/slope.
pub fn trim_consistency(
    fits: &AxisPair<AxisFit>,
    sigma: &AxisPair<f64>,
    trims: &[TrimObservation],
    gravity: f64,
) -> Result<Vec<TrimCheck>> {
    if trims.is_empty() {
        return Err(Error::InsufficientData("no trims to check".into()));
    }
    let mut checks = Vec::with_capacity(2 * trims.len());
    for obs in trims {
        for axis in [Axis::Roll, Axis::Pitch] {
            let fit = fits.get(axis);
            if fit.slope == 0.0 {
                return Err(Error::Degenerate(format!("{axis} map has zero slope")));
            }
            let external = obs.external_torque(axis, gravity);
            let predicted = -(fit.intercept + external) / fit.slope;
            let observed = obs.trim.command(axis);
            let deviation_volts = (observed - predicted).abs();
            let deviation_torque = fit.slope.abs() * deviation_volts;
            let s = *sigma.get(axis);
            checks.push(TrimCheck {
                source: obs.source.clone(),
                axis,
                external_torque: external,
                predicted,
                observed,
                deviation_volts,
                deviation_torque,
                sigma: s,
                deviation_sigmas: if s > 0.0 { deviation_torque / s } else { f64::INFINITY },
                within_sigma: deviation_torque <= s,
                within_tether: deviation_torque <= TETHER_TORQUE + 1e-12,
            });
        }
    }
    Ok(checks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarFits {
    pub pitch_torque: PlanarFit,
    pub roll_torque: PlanarFit,
    pub thrust: PlanarFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub pitch_fit: AxisFit,
    pub roll_fit: AxisFit,
    pub planar_fits: PlanarFits,
    pub cross_corr: CrossCorrelation,
    /// Same pairs with own-axis dependence removed first.
    pub cross_corr_residual: CrossCorrelation,
    #[serde(rename = "sigma_inner_uNm")]
    pub sigma_inner: AxisPair<f64>,
    #[serde(rename = "sigma_extreme_uNm")]
    pub sigma_extreme: AxisPair<f64>,
    pub thrust_stats: ThrustStats,
    pub trim_checks: Vec<TrimCheck>,
    pub n_points: usize,
}

impl AnalysisReport {
    pub fn fits(&self) -> AxisPair<AxisFit> {
        AxisPair::new(self.pitch_fit, self.roll_fit)
    }
}

/// Runs every statistic on a dataset. Trim checks are filled in when trims
/// are supplied.
pub fn analyze(ds: &SweepDataset, trims: &[TrimObservation], gravity: f64) -> Result<AnalysisReport> {
    let s = samples(ds);
    let fits = AxisPair::new(axis_regression(&s, Axis::Pitch)?, axis_regression(&s, Axis::Roll)?);
    let dispersion = dispersion_stats(&s, &fits)?;
    let trim_checks = if trims.is_empty() {
        Vec::new()
    } else {
        trim_consistency(&fits, &dispersion.inner, trims, gravity)?
    };
    Ok(AnalysisReport {
        pitch_fit: fits.pitch,
        roll_fit: fits.roll,
        planar_fits: PlanarFits {
            pitch_torque: planar_fit(&s, Response::PitchTorque)?,
            roll_torque: planar_fit(&s, Response::RollTorque)?,
            thrust: planar_fit(&s, Response::Thrust)?,
        },
        cross_corr: cross_correlation(&s)?,
        cross_corr_residual: residual_cross_correlation(&s)?,
        sigma_inner: dispersion.inner,
        sigma_extreme: dispersion.extreme,
        thrust_stats: thrust_stats(&s)?,
        trim_checks,
        n_points: s.len(),
    })
}

/// Torque against own command with the trend line and a ±σ_inner band.
pub fn write_scatter_csv<W: Write>(
    samples: &[Sample],
    axis: Axis,
    fit: &AxisFit,
    sigma: f64,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["command_V", "torque_uNm", "trend_uNm", "band_low_uNm", "band_high_uNm"])?;
    let mut pts: Vec<&Sample> = samples.iter().collect();
    pts.sort_by(|a, b| a.command(axis).total_cmp(&b.command(axis)));
    for s in pts {
        let trend = fit.predict(s.command(axis));
        w.write_record([
            s.command(axis).to_string(),
            s.torque(axis).to_string(),
            trend.to_string(),
            (trend - sigma).to_string(),
            (trend + sigma).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-point residuals of the three planar fits.
pub fn write_planar_residuals_csv<W: Write>(samples: &[Sample], fits: &PlanarFits, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "v_o_volts",
        "delta_a_volts",
        "pitch_residual_uNm",
        "roll_residual_uNm",
        "thrust_residual_mg",
    ])?;
    for s in samples {
        let r = |f: &PlanarFit, r: Response| s.response(r) - f.predict(s.offset_voltage, s.amplitude_difference);
        w.write_record([
            s.offset_voltage.to_string(),
            s.amplitude_difference.to_string(),
            r(&fits.pitch_torque, Response::PitchTorque).to_string(),
            r(&fits.roll_torque, Response::RollTorque).to_string(),
            r(&fits.thrust, Response::Thrust).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Thrust and its fractional deviation from the mean at every point.
pub fn write_thrust_deviation_csv<W: Write>(samples: &[Sample], mean: f64, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["v_o_volts", "delta_a_volts", "thrust_mg", "deviation_fraction"])?;
    for s in samples {
        w.write_record([
            s.offset_voltage.to_string(),
            s.amplitude_difference.to_string(),
            s.thrust.to_string(),
            ((s.thrust - mean) / mean).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
