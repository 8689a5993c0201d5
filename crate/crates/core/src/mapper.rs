//! Experiment protocols run against the simulated plant: hung-mass
//! calibration, single-point torque measurement, grid sweeps and the
//! free-flight trim search.
//!
//! A point measurement drives the robot with a constant command from rest,
//! lets the gimbal settle, averages the motion-capture angles over the final
//! window and converts them to torque with the *calibrated* stiffness. Thrust
//! is the drop of the balance reading relative to an idle baseline.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calibkit::{calibrate_stiffness, fit_line, CalibrationPoint, StiffnessFit};
use crate::error::{invalid, Error, Result};
use crate::firmodel::{offset_torque, stroke_avg_wrench, FirCharacter, OffsetLoad, WearState, Wrench};
use crate::gimbalsim::{integrate_axis, total_stiffness, GimbalParams, GimbalState};
use crate::signalgen::{rail_feasible, DriveCommand};
use crate::virtualsensors::{balance_stream, mocap_stream, BalanceConfig, MocapConfig};
use crate::{Axis, AxisPair};

/// Angle drift over the averaging window below which a run always counts as
/// settled, rad. Keeps noiseless configurations from being flagged for
/// sub-microradian integrator residue.
pub const STEADY_DRIFT_FLOOR: f64 = 1e-5;

/// Everything needed to take a measurement on the simulated test stand.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub gimbal: AxisPair<GimbalParams>,
    pub fir: FirCharacter,
    pub mocap: MocapConfig,
    pub balance: BalanceConfig,
    /// Stiffness used to turn angles into torques, µNm/rad.
    pub calibrated_stiffness: AxisPair<f64>,
    /// Integrator step, s.
    pub dt: f64,
}

impl Plant {
    /// A plant whose torque conversion uses the true stiffness of each axis.
    pub fn with_true_calibration(
        gimbal: AxisPair<GimbalParams>,
        fir: FirCharacter,
        mocap: MocapConfig,
        balance: BalanceConfig,
        dt: f64,
    ) -> Self {
        let calibrated_stiffness = gimbal.as_ref().map(total_stiffness);
        Self {
            gimbal,
            fir,
            mocap,
            balance,
            calibrated_stiffness,
            dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gimbal.pitch.validate()?;
        self.gimbal.roll.validate()?;
        self.fir.validate()?;
        self.mocap.validate()?;
        self.balance.validate()?;
        if !(self.calibrated_stiffness.pitch > 0.0 && self.calibrated_stiffness.roll > 0.0) {
            return Err(invalid("calibrated stiffness must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("integrator step must be positive"));
        }
        Ok(())
    }

    /// Weight resting on the balance with the robot idle, mg.
    pub fn supported_weight(&self) -> f64 {
        self.fir.mass + self.gimbal.pitch.counterweight_mass + self.gimbal.roll.counterweight_mass
    }
}

/// Result of one settle-and-average run on a single axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticReading {
    /// Mean motion-capture angle over the averaging window, rad.
    pub mean_angle: f64,
    /// True angle change across the averaging window, rad.
    pub drift: f64,
    pub steady: bool,
}

/// Holds a constant torque on one axis from rest for `settle` seconds and
/// averages the motion-capture angle over the final `window` seconds.
pub fn read_static_angle<R: rand::Rng + ?Sized>(
    gimbal: &GimbalParams,
    torque_unm: f64,
    settle: f64,
    window: f64,
    dt: f64,
    mocap: &MocapConfig,
    rng: &mut R,
) -> Result<StaticReading> {
    if !(window > 0.0 && window < settle) {
        return Err(invalid("averaging window must be positive and shorter than the settle time"));
    }
    let steps = (settle / dt).round() as usize;
    let window_steps = ((window / dt).round() as usize).min(steps);
    let traj = integrate_axis(
        gimbal,
        GimbalState::default(),
        |_| torque_unm,
        steps,
        dt,
        steps - window_steps,
    )?;
    let end = traj.time[traj.len() - 1];
    let start = traj.time[0];
    let stream = mocap_stream(&traj, (start, end), mocap, rng)?;
    if stream.is_empty() {
        return Err(invalid("averaging window holds no motion-capture frames"));
    }
    let drift = (traj.theta[traj.len() - 1] - traj.theta[0]).abs();
    let mean_se = mocap.frame_angle_sd() / (stream.len() as f64).sqrt();
    let threshold = (3.0 * mean_se).max(STEADY_DRIFT_FLOOR);
    Ok(StaticReading {
        mean_angle: stream.mean(),
        drift,
        steady: drift <= threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMeasurement {
    #[serde(rename = "tau_pitch_uNm")]
    pub tau_pitch: f64,
    #[serde(rename = "tau_roll_uNm")]
    pub tau_roll: f64,
    #[serde(rename = "thrust_mg")]
    pub thrust: f64,
    /// Both axes settled within the averaging window.
    pub steady: bool,
    /// The wrench the robot actually produced on this run.
    pub true_wrench: Wrench,
}

/// Measures one command: the robot flaps for `cmd.duration` seconds and the
/// final `average_window` seconds are averaged.
///
/// Draws from `rng` in a fixed order: robot variability, balance baseline,
/// balance active, pitch motion capture, roll motion capture.
pub fn measure_point<R: rand::Rng + ?Sized>(
    plant: &Plant,
    cmd: &DriveCommand,
    average_window: f64,
    flap_time_so_far: f64,
    rng: &mut R,
) -> Result<PointMeasurement> {
    let settle = cmd.duration;
    let wrench = stroke_avg_wrench(&plant.fir, cmd, flap_time_so_far, rng)?;

    let supported = plant.supported_weight();
    let baseline = balance_stream(|_| 0.0, supported, (-average_window, 0.0), &plant.balance, rng)?;
    let active = balance_stream(
        |_| wrench.thrust,
        supported,
        (settle - average_window, settle),
        &plant.balance,
        rng,
    )?;

    let mut readings = [Axis::Pitch, Axis::Roll].map(|_| None);
    for (slot, axis) in readings.iter_mut().zip(Axis::BOTH) {
        let torque = match axis {
            Axis::Pitch => wrench.pitch,
            Axis::Roll => wrench.roll,
        };
        *slot = Some(read_static_angle(
            plant.gimbal.get(axis),
            torque,
            settle,
            average_window,
            plant.dt,
            &plant.mocap,
            rng,
        )?);
    }
    let [Some(pitch), Some(roll)] = readings else {
        unreachable!()
    };
    Ok(PointMeasurement {
        tau_pitch: plant.calibrated_stiffness.pitch * pitch.mean_angle,
        tau_roll: plant.calibrated_stiffness.roll * roll.mean_angle,
        thrust: baseline.mean() - active.mean(),
        steady: pitch.steady && roll.steady,
        true_wrench: wrench,
    })
}

/// Hangs each load on its axis of `gimbal` and calibrates the stiffness from
/// the resulting motion-capture angles.
pub fn hung_mass_calibration<R: rand::Rng + ?Sized>(
    gimbal: &GimbalParams,
    axis: Axis,
    loads: &[OffsetLoad],
    mocap: &MocapConfig,
    settle: f64,
    window: f64,
    dt: f64,
    rng: &mut R,
) -> Result<(Vec<CalibrationPoint>, StiffnessFit)> {
    let points = loads
        .iter()
        .filter(|l| l.axis == axis)
        .map(|load| {
            load.validate()?;
            let torque = offset_torque(load, gimbal.gravity);
            let reading = read_static_angle(gimbal, torque, settle, window, dt, mocap, rng)?;
            Ok(CalibrationPoint {
                applied_torque: torque,
                measured_angle: reading.mean_angle,
                axis,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = calibrate_stiffness(&points)?;
    Ok((points, fit))
}

/// Default calibration set: 17, 34 and 51 mg on a 4 mm lever, hung both ways
/// on each axis (about ±0.67, ±1.33 and ±2.0 µNm).
pub fn default_calibration_loads() -> Vec<OffsetLoad> {
    let mut loads = Vec::new();
    for axis in Axis::BOTH {
        for sign in [-1, 1] {
            for mass in [17.0, 34.0, 51.0] {
                loads.push(OffsetLoad {
                    mass,
                    lever: 4.0,
                    axis,
                    sign,
                });
            }
        }
    }
    loads
}

fn default_settle() -> f64 {
    30.0
}

fn default_window() -> f64 {
    0.5
}

fn default_margin() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(rename = "pitch_levels_V")]
    pub pitch_levels: Vec<f64>,
    #[serde(rename = "roll_levels_V")]
    pub roll_levels: Vec<f64>,
    #[serde(rename = "settle_duration_s", default = "default_settle")]
    pub settle_duration: f64,
    #[serde(rename = "average_window_s", default = "default_window")]
    pub average_window: f64,
    #[serde(rename = "amplitude_V")]
    pub amplitude: f64,
    #[serde(rename = "bias_voltage_V")]
    pub bias_voltage: f64,
    #[serde(rename = "flap_frequency_Hz")]
    pub flap_frequency: f64,
    #[serde(rename = "rail_margin_V", default = "default_margin")]
    pub rail_margin: f64,
}

impl Default for SweepSpec {
    /// ±15 V pitch in 5 V steps by ±25 V roll in 5 V steps at A = 192 V.
    fn default() -> Self {
        Self {
            pitch_levels: (-3..=3).map(|i| 5.0 * f64::from(i)).collect(),
            roll_levels: (-5..=5).map(|i| 5.0 * f64::from(i)).collect(),
            settle_duration: default_settle(),
            average_window: default_window(),
            amplitude: 192.0,
            bias_voltage: 250.0,
            flap_frequency: 180.0,
            rail_margin: default_margin(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pitch_levels.is_empty() || self.roll_levels.is_empty() {
            return Err(invalid("sweep levels must be non-empty"));
        }
        if !(self.average_window > 0.0 && self.average_window < self.settle_duration) {
            return Err(invalid("averaging window must be positive and shorter than the settle time"));
        }
        if !(self.rail_margin >= 0.0) {
            return Err(invalid("rail margin must be non-negative"));
        }
        for &vo in &self.pitch_levels {
            for &da in &self.roll_levels {
                self.command(vo, da)?;
            }
        }
        Ok(())
    }

    pub fn command(&self, offset_voltage: f64, amplitude_difference: f64) -> Result<DriveCommand> {
        DriveCommand::new(
            self.bias_voltage,
            self.amplitude,
            amplitude_difference,
            offset_voltage,
            self.flap_frequency,
            self.settle_duration,
        )
    }

    /// Grid points in traversal order: pitch levels outer, roll levels inner.
    pub fn grid(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.pitch_levels
            .iter()
            .flat_map(move |&vo| self.roll_levels.iter().map(move |&da| (vo, da)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub tau_pitch: f64,
    pub tau_roll: f64,
    pub thrust: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub offset_voltage: f64,
    pub amplitude_difference: f64,
    /// `None` exactly when the point is excluded.
    pub measured: Option<Measured>,
}

impl SweepRow {
    pub fn excluded(&self) -> bool {
        self.measured.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAnnotation {
    pub index: usize,
    #[serde(rename = "v_o_volts")]
    pub offset_voltage: f64,
    #[serde(rename = "delta_a_volts")]
    pub amplitude_difference: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub seed: u64,
    pub spec: SweepSpec,
    #[serde(rename = "calibration_uNm_per_rad")]
    pub calibration: AxisPair<f64>,
    pub annotations: Vec<PointAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Flapping time accumulated over the sweep, s.
    #[serde(rename = "flap_time_s")]
    pub flap_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepDataset {
    pub rows: Vec<SweepRow>,
    pub metadata: SweepMetadata,
}

const CSV_HEADER: [&str; 6] = [
    "v_o_volts",
    "delta_a_volts",
    "tau_pitch_uNm",
    "tau_roll_uNm",
    "thrust_mg",
    "excluded",
];

impl SweepDataset {
    pub fn measured(&self) -> impl Iterator<Item = (&SweepRow, &Measured)> + '_ {
        self.rows
            .iter()
            .filter_map(|r| r.measured.as_ref().map(|m| (r, m)))
    }

    pub fn measured_count(&self) -> usize {
        self.measured().count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            let (p, r, t) = match row.measured {
                Some(m) => (m.tau_pitch.to_string(), m.tau_roll.to_string(), m.thrust.to_string()),
                None => Default::default(),
            };
            w.write_record([
                row.offset_voltage.to_string(),
                row.amplitude_difference.to_string(),
                p,
                r,
                t,
                row.excluded().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses rows written by [`SweepDataset::write_csv`].
    pub fn read_rows<R: Read>(reader: R) -> Result<Vec<SweepRow>> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != CSV_HEADER {
            return Err(Error::Format(format!("unexpected header {header:?}")));
        }
        let num = |s: &str, line: usize| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Format(format!("row {line}: {s:?} is not a number ({e})")))
        };
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let excluded = match &rec[5] {
                "true" => true,
                "false" => false,
                other => return Err(Error::Format(format!("row {line}: bad excluded flag {other:?}"))),
            };
            let measured = if excluded {
                if !(rec[2].is_empty() && rec[3].is_empty() && rec[4].is_empty()) {
                    return Err(Error::Format(format!("row {line}: excluded row carries measurements")));
                }
                None
            } else {
                Some(Measured {
                    tau_pitch: num(&rec[2], line)?,
                    tau_roll: num(&rec[3], line)?,
                    thrust: num(&rec[4], line)?,
                })
            };
            rows.push(SweepRow {
                offset_voltage: num(&rec[0], line)?,
                amplitude_difference: num(&rec[1], line)?,
                measured,
            });
        }
        Ok(rows)
    }

    pub fn save(&self, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(csv_path, buf)?;
        std::fs::write(sidecar_path, serde_json::to_string_pretty(&self.metadata)? + "\n")?;
        Ok(())
    }

    pub fn load(csv_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let rows = Self::read_rows(std::fs::File::open(csv_path)?)?;
        let metadata = serde_json::from_slice(&std::fs::read(sidecar_path)?)?;
        Ok(Self { rows, metadata })
    }
}

/// RNG for grid point `index` of a run seeded with `seed`.
pub fn point_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

enum PointOutcome {
    Excluded,
    Measured(PointMeasurement),
    Failed(String),
}

fn measure_grid_point(
    plant: &Plant,
    spec: &SweepSpec,
    seed: u64,
    index: usize,
    (vo, da): (f64, f64),
    flap_time: f64,
) -> Result<PointOutcome> {
    let cmd = spec.command(vo, da)?;
    if !rail_feasible(&cmd, spec.rail_margin).feasible {
        return Ok(PointOutcome::Excluded);
    }
    let mut rng = point_rng(seed, index);
    Ok(match measure_point(plant, &cmd, spec.average_window, flap_time, &mut rng) {
        Ok(m) => PointOutcome::Measured(m),
        Err(e) => PointOutcome::Failed(e.to_string()),
    })
}

fn assemble(
    plant: &Plant,
    spec: &SweepSpec,
    seed: u64,
    outcomes: Vec<PointOutcome>,
) -> SweepDataset {
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut annotations = Vec::new();
    let mut flap_time = 0.0;
    for (index, ((vo, da), outcome)) in spec.grid().zip(outcomes).enumerate() {
        let annotate = |note: String| PointAnnotation {
            index,
            offset_voltage: vo,
            amplitude_difference: da,
            note,
        };
        let measured = match outcome {
            PointOutcome::Excluded => {
                annotations.push(annotate("excluded: outside the drive rail".into()));
                None
            }
            PointOutcome::Failed(msg) => {
                annotations.push(annotate(format!("failed: {msg}")));
                None
            }
            PointOutcome::Measured(m) => {
                flap_time += spec.settle_duration;
                if !m.steady {
                    annotations.push(annotate("non-steady: angle still drifting in the averaging window".into()));
                }
                Some(Measured {
                    tau_pitch: m.tau_pitch,
                    tau_roll: m.tau_roll,
                    thrust: m.thrust,
                })
            }
        };
        rows.push(SweepRow {
            offset_voltage: vo,
            amplitude_difference: da,
            measured,
        });
    }
    SweepDataset {
        rows,
        metadata: SweepMetadata {
            seed,
            spec: spec.clone(),
            calibration: plant.calibrated_stiffness,
            annotations,
            config_hash: None,
            flap_time,
        },
    }
}

/// Measures every rail-feasible grid point in traversal order. Wear drift
/// advances by the settle time of each measured point.
pub fn run_grid(plant: &Plant, spec: &SweepSpec, seed: u64) -> Result<SweepDataset> {
    run_grid_from(plant, spec, seed, 0.0)
}

/// As [`run_grid`], for a robot that has already flapped for `initial_flap_time` seconds.
pub fn run_grid_from(plant: &Plant, spec: &SweepSpec, seed: u64, initial_flap_time: f64) -> Result<SweepDataset> {
    plant.validate()?;
    spec.validate()?;
    let mut flap_time = initial_flap_time;
    let mut outcomes = Vec::new();
    for (index, point) in spec.grid().enumerate() {
        let outcome = measure_grid_point(plant, spec, seed, index, point, flap_time)?;
        if matches!(outcome, PointOutcome::Measured(_)) {
            flap_time += spec.settle_duration;
        }
        outcomes.push(outcome);
    }
    Ok(assemble(plant, spec, seed, outcomes))
}

/// Measures grid points on several threads. Only allowed for robots without
/// wear drift, where points do not depend on measurement order; the result is
/// identical to [`run_grid`].
pub fn run_grid_parallel(plant: &Plant, spec: &SweepSpec, seed: u64, threads: usize) -> Result<SweepDataset> {
    if plant.fir.pitch_wear_rate != 0.0 || plant.fir.roll_wear_rate != 0.0 {
        return Err(invalid("parallel sweeps require a robot without wear drift"));
    }
    plant.validate()?;
    spec.validate()?;
    let points: Vec<(usize, (f64, f64))> = spec.grid().enumerate().collect();
    let threads = threads.max(1).min(points.len().max(1));
    let chunk = points.len().div_ceil(threads);
    let mut outcomes: Vec<Option<PointOutcome>> = (0..points.len()).map(|_| None).collect();
    std::thread::scope(|scope| -> Result<()> {
        let handles: Vec<_> = points
            .chunks(chunk.max(1))
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&(i, p)| measure_grid_point(plant, spec, seed, i, p, 0.0).map(|o| (i, o)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        for h in handles {
            for (i, o) in h.join().expect("sweep worker panicked")? {
                outcomes[i] = Some(o);
            }
        }
        Ok(())
    })?;
    Ok(assemble(
        plant,
        spec,
        seed,
        outcomes.into_iter().map(|o| o.expect("every point measured")).collect(),
    ))
}

fn default_step() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimConfig {
    /// Command quantisation, V.
    #[serde(rename = "step_V", default = "default_step")]
    pub step: f64,
    /// Largest acceptable observed residual torque, µNm.
    #[serde(rename = "tolerance_uNm")]
    pub tolerance: f64,
    /// Spread of a single free-flight torque observation, µNm.
    #[serde(rename = "observation_noise_sd_uNm")]
    pub observation_noise_sd: f64,
    /// Take-offs averaged per tried command.
    pub observations_per_point: usize,
    /// Commands tried on each side of the estimated trim, in steps.
    pub probe_half_width: usize,
    pub max_iterations: usize,
    #[serde(rename = "start_delta_a_V", default)]
    pub start_delta_a: f64,
    #[serde(rename = "start_offset_V", default)]
    pub start_offset: f64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self {
            step: default_step(),
            tolerance: 0.3,
            observation_noise_sd: 0.05,
            observations_per_point: 4,
            probe_half_width: 2,
            max_iterations: 20,
            start_delta_a: 0.0,
            start_offset: 0.0,
        }
    }
}

impl TrimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.tolerance > 0.0 && self.observation_noise_sd >= 0.0) {
            return Err(invalid("trim step and tolerance must be positive, noise non-negative"));
        }
        if self.observations_per_point == 0 || self.max_iterations == 0 || self.probe_half_width == 0 {
            return Err(invalid("trim search needs observations, iterations and probes"));
        }
        Ok(())
    }

    fn quantize(&self, v: f64) -> f64 {
        (v / self.step).round() * self.step
    }
}

/// The robot in free flight: its character, accumulated wear and gravity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeFlight<'a> {
    pub fir: &'a FirCharacter,
    pub wear: WearState,
    pub gravity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimResult {
    #[serde(rename = "delta_a_trim_V")]
    pub delta_a: f64,
    #[serde(rename = "offset_trim_V")]
    pub offset: f64,
    pub iterations: usize,
    #[serde(rename = "residual_roll_uNm")]
    pub residual_roll: f64,
    #[serde(rename = "residual_pitch_uNm")]
    pub residual_pitch: f64,
}

impl TrimResult {
    pub fn command(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Pitch => self.offset,
            Axis::Roll => self.delta_a,
        }
    }
}

struct TrimObserver<'a, R: rand::Rng + ?Sized> {
    flight: FreeFlight<'a>,
    load: AxisPair<f64>,
    cfg: &'a TrimConfig,
    rng: &'a mut R,
}

impl<R: rand::Rng + ?Sized> TrimObserver<'_, R> {
    /// Mean observed (roll, pitch) residual torque at a command pair.
    fn observe(&mut self, delta_a: f64, offset: f64) -> AxisPair<f64> {
        let w = self.flight.fir.mean_wrench(offset, delta_a, &self.flight.wear);
        let n = self.cfg.observations_per_point;
        let mut sum = AxisPair::new(0.0, 0.0);
        for _ in 0..n {
            let zp: f64 = StandardNormal.sample(self.rng);
            let zr: f64 = StandardNormal.sample(self.rng);
            sum.pitch += w.pitch + self.load.pitch + self.cfg.observation_noise_sd * zp;
            sum.roll += w.roll + self.load.roll + self.cfg.observation_noise_sd * zr;
        }
        sum.map(|s| s / n as f64)
    }

    fn observe_axis(&mut self, axis: Axis, cmd: AxisPair<f64>) -> f64 {
        *self.observe(cmd.roll, cmd.pitch).get(axis)
    }

    /// One coordinate move: secant estimate of the zero, then a local line
    /// fit over quantised probes around it.
    fn line_trim(&mut self, axis: Axis, cmd: AxisPair<f64>) -> Result<f64> {
        let at = |v: f64| {
            let mut c = cmd;
            *c.get_mut(axis) = v;
            c
        };
        let x0 = *cmd.get(axis);
        let h = 4.0 * self.cfg.step;
        let y0 = self.observe_axis(axis, at(x0));
        let y1 = self.observe_axis(axis, at(x0 + h));
        let secant = (y1 - y0) / h;
        if !(secant.is_finite() && secant != 0.0) {
            return Err(Error::Degenerate(format!("{axis} torque does not respond to its command")));
        }
        let center = self.cfg.quantize(x0 - y0 / secant);
        let k = self.cfg.probe_half_width as i64;
        let xs: Vec<f64> = (-k..=k).map(|i| center + i as f64 * self.cfg.step).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| self.observe_axis(axis, at(x))).collect();
        let line = fit_line(&xs, &ys)?;
        if line.slope == 0.0 {
            return Err(Error::Degenerate(format!("{axis} torque does not respond to its command")));
        }
        Ok(self.cfg.quantize(-line.intercept / line.slope))
    }
}

/// Coordinate descent on (δA, V_o) that nulls the observed roll and pitch
/// torque of the robot in free flight, optionally carrying an offset load.
///
/// Stops once a full pass leaves the quantised command unchanged and both
/// observed residuals are within tolerance.
pub fn trim_search<R: rand::Rng + ?Sized>(
    flight: FreeFlight<'_>,
    load: Option<&OffsetLoad>,
    cfg: &TrimConfig,
    rng: &mut R,
) -> Result<TrimResult> {
    cfg.validate()?;
    if flight.fir.pitch_slope == 0.0 || flight.fir.roll_slope == 0.0 {
        return Err(Error::Degenerate("trim search needs nonzero torque slopes".into()));
    }
    let mut load_torque = AxisPair::new(0.0, 0.0);
    if let Some(l) = load {
        l.validate()?;
        *load_torque.get_mut(l.axis) += offset_torque(l, flight.gravity);
    }
    let mut obs = TrimObserver {
        flight,
        load: load_torque,
        cfg,
        rng,
    };
    let mut cmd = AxisPair::new(cfg.quantize(cfg.start_offset), cfg.quantize(cfg.start_delta_a));
    let mut best: Option<(f64, AxisPair<f64>, AxisPair<f64>)> = None;
    for iteration in 1..=cfg.max_iterations {
        let before = cmd;
        for axis in [Axis::Roll, Axis::Pitch] {
            let v = obs.line_trim(axis, cmd)?;
            *cmd.get_mut(axis) = v;
        }
        let residual = obs.observe(cmd.roll, cmd.pitch);
        let score = residual.roll.abs().max(residual.pitch.abs());
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, cmd, residual));
        }
        if cmd == before && score <= cfg.tolerance {
            return Ok(TrimResult {
                delta_a: cmd.roll,
                offset: cmd.pitch,
                iterations: iteration,
                residual_roll: residual.roll,
                residual_pitch: residual.pitch,
            });
        }
    }
    let (_, c, r) = best.expect("at least one iteration ran");
    Err(Error::TrimNotConverged {
        iterations: cfg.max_iterations,
        best_delta_a: c.roll,
        best_offset: c.pitch,
        residual_roll: r.roll,
        residual_pitch: r.pitch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{per_deg_to_per_rad, STANDARD_GRAVITY};
    use approx::assert_abs_diff_eq;

    fn axis(per_deg: f64) -> GimbalParams {
        let base = GimbalParams {
            counterweight_mass: 50.0,
            counterweight_lever: 17.0,
            robot_mass: 180.0,
            robot_com_offset: 0.0,
            flexure_stiffness: 0.0,
            damping: 0.0,
            inertia: 1.0,
            gravity: STANDARD_GRAVITY,
        };
        GimbalParams {
            flexure_stiffness: per_deg_to_per_rad(per_deg) - base.counterweight_stiffness(),
            ..base
        }
        .with_decay(3.5, 50.0)
    }

    fn quiet_plant(fir: FirCharacter) -> Plant {
        Plant::with_true_calibration(
            AxisPair::new(axis(1.88), axis(1.52)),
            fir,
            MocapConfig {
                marker_position_sd: 0.0,
                ..Default::default()
            },
            BalanceConfig {
                reading_sd: 0.0,
                ..Default::default()
            },
            1e-3,
        )
    }

    fn flat_fir() -> FirCharacter {
        FirCharacter {
            pitch_slope: 0.0,
            roll_slope: 0.0,
            ..Default::default()
        }
    }

    fn small_spec() -> SweepSpec {
        SweepSpec {
            pitch_levels: vec![-10.0, 0.0, 10.0],
            roll_levels: vec![-20.0, 0.0, 20.0],
            ..Default::default()
        }
    }

    #[test]
    fn idle_robot_measures_zero_torque() {
        let plant = quiet_plant(FirCharacter::default());
        let cmd = SweepSpec::default().command(0.0, 0.0).unwrap();
        let m = measure_point(&plant, &cmd, 0.5, 0.0, &mut point_rng(1, 0)).unwrap();
        assert_abs_diff_eq!(m.tau_pitch, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.tau_roll, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.thrust, 180.0, epsilon = 1e-9);
        assert!(m.steady);
    }

    #[test]
    fn pure_roll_torque_round_trip() {
        let plant = quiet_plant(FirCharacter {
            roll_bias: 1.0,
            ..flat_fir()
        });
        let cmd = SweepSpec::default().command(0.0, 0.0).unwrap();
        let m = measure_point(&plant, &cmd, 0.5, 0.0, &mut point_rng(1, 0)).unwrap();
        assert_abs_diff_eq!(m.tau_roll, 1.0, epsilon = 0.005);
        assert_abs_diff_eq!(m.tau_pitch, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn short_settle_is_flagged_non_steady() {
        let plant = quiet_plant(FirCharacter {
            roll_bias: 1.0,
            ..flat_fir()
        });
        let spec = SweepSpec {
            settle_duration: 3.0,
            ..Default::default()
        };
        let cmd = spec.command(0.0, 0.0).unwrap();
        let m = measure_point(&plant, &cmd, 0.5, 0.0, &mut point_rng(1, 0)).unwrap();
        assert!(!m.steady);
        assert!(m.tau_roll < 0.7, "3 s captures only part of the step: {}", m.tau_roll);
    }

    #[test]
    fn repeated_measurements_match_mocap_averaging() {
        let mut plant = quiet_plant(flat_fir());
        plant.mocap = MocapConfig::default();
        let cmd = SweepSpec {
            settle_duration: 2.0,
            ..Default::default()
        }
        .command(0.0, 0.0)
        .unwrap();
        let values: Vec<f64> = (0..300)
            .map(|i| measure_point(&plant, &cmd, 0.5, 0.0, &mut point_rng(9, i)).unwrap().tau_roll)
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt();
        let expected = plant.calibrated_stiffness.roll * plant.mocap.frame_angle_sd() / 120f64.sqrt();
        assert!((sd / expected - 1.0).abs() < 0.12, "sd {sd} vs {expected}");
    }

    #[test]
    fn grid_counts_and_corner_exclusion() {
        let plant = quiet_plant(FirCharacter::default());
        let spec = SweepSpec::default();
        let cmds: Vec<_> = spec.grid().collect();
        assert_eq!(cmds.len(), 77);
        let excluded: Vec<_> = cmds
            .iter()
            .filter(|&&(vo, da)| !rail_feasible(&spec.command(vo, da).unwrap(), spec.rail_margin).feasible)
            .collect();
        assert_eq!(excluded, [&(-15.0, -25.0), &(-15.0, 25.0), &(15.0, -25.0), &(15.0, 25.0)]);

        let wide = SweepSpec {
            rail_margin: 0.0,
            ..small_spec()
        };
        let ds = run_grid(&plant, &wide, 3).unwrap();
        assert_eq!(ds.rows.len(), 9);
        assert_eq!(ds.measured_count(), 9);
    }

    #[test]
    fn noiseless_sweep_lies_on_planes() {
        let fir = FirCharacter {
            pitch_bias: 0.39,
            roll_bias: -2.0,
            ..Default::default()
        };
        let plant = quiet_plant(fir.clone());
        let ds = run_grid(&plant, &small_spec(), 5).unwrap();
        for (row, m) in ds.measured() {
            let truth = fir.mean_wrench(row.offset_voltage, row.amplitude_difference, &WearState::default());
            assert_abs_diff_eq!(m.tau_pitch, truth.pitch, epsilon = 1e-3 * truth.pitch.abs().max(1.0));
            assert_abs_diff_eq!(m.tau_roll, truth.roll, epsilon = 1e-3 * truth.roll.abs().max(1.0));
        }
    }

    #[test]
    fn sweeps_are_deterministic_and_schedule_independent() {
        let mut plant = quiet_plant(FirCharacter {
            pitch_inner_noise_sd: 0.2,
            pitch_extreme_noise_sd: 0.2,
            roll_inner_noise_sd: 0.77,
            roll_extreme_noise_sd: 0.77,
            ..Default::default()
        });
        plant.mocap = MocapConfig::default();
        let spec = SweepSpec {
            settle_duration: 5.0,
            ..small_spec()
        };
        let a = run_grid(&plant, &spec, 11).unwrap();
        let b = run_grid(&plant, &spec, 11).unwrap();
        let c = run_grid_parallel(&plant, &spec, 11, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows, c.rows);
        let d = run_grid(&plant, &spec, 12).unwrap();
        assert_ne!(a.rows, d.rows);
    }

    #[test]
    fn parallel_refuses_wearing_robot() {
        let plant = quiet_plant(FirCharacter {
            roll_wear_rate: 0.01,
            ..Default::default()
        });
        assert!(run_grid_parallel(&plant, &small_spec(), 1, 2).is_err());
    }

    #[test]
    fn wear_accumulates_over_the_sweep() {
        let fir = FirCharacter {
            roll_wear_rate: 0.01,
            ..Default::default()
        };
        let plant = quiet_plant(fir);
        let spec = SweepSpec {
            pitch_levels: vec![0.0],
            roll_levels: vec![0.0, 0.0, 0.0],
            ..Default::default()
        };
        let ds = run_grid(&plant, &spec, 1).unwrap();
        let rolls: Vec<f64> = ds.measured().map(|(_, m)| m.tau_roll).collect();
        assert_abs_diff_eq!(rolls[0], 0.0, epsilon = 1e-3);
        assert_abs_diff_eq!(rolls[1], 0.3, epsilon = 2e-3);
        assert_abs_diff_eq!(rolls[2], 0.6, epsilon = 3e-3);
        assert_eq!(ds.metadata.flap_time, 90.0);
    }

    #[test]
    fn csv_round_trip_preserves_rows() {
        let plant = quiet_plant(FirCharacter::default());
        let spec = SweepSpec {
            pitch_levels: vec![-15.0, 0.0],
            roll_levels: vec![25.0, 0.0],
            settle_duration: 2.0,
            ..Default::default()
        };
        let ds = run_grid(&plant, &spec, 2).unwrap();
        assert!(ds.rows[0].excluded());
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("v_o_volts,delta_a_volts,tau_pitch_uNm,tau_roll_uNm,thrust_mg,excluded\n"));
        assert!(text.lines().nth(1).unwrap().ends_with(",,,true"));
        assert_eq!(SweepDataset::read_rows(buf.as_slice()).unwrap(), ds.rows);
        assert!(ds.metadata.annotations.iter().any(|a| a.index == 0 && a.note.starts_with("excluded")));
    }

    #[test]
    fn malformed_csv_rejected() {
        let bad_header = "a,b\n1,2\n";
        assert!(SweepDataset::read_rows(bad_header.as_bytes()).is_err());
        let bad_flag = "v_o_volts,delta_a_volts,tau_pitch_uNm,tau_roll_uNm,thrust_mg,excluded\n0,0,1,1,1,maybe\n";
        assert!(SweepDataset::read_rows(bad_flag.as_bytes()).is_err());
    }

    fn flight(fir: &FirCharacter) -> FreeFlight<'_> {
        FreeFlight {
            fir,
            wear: WearState::default(),
            gravity: STANDARD_GRAVITY,
        }
    }

    #[test]
    fn trims_unbiased_robot_at_zero() {
        let fir = FirCharacter::default();
        let cfg = TrimConfig {
            observation_noise_sd: 0.0,
            ..Default::default()
        };
        let t = trim_search(flight(&fir), None, &cfg, &mut point_rng(1, 0)).unwrap();
        assert_eq!((t.delta_a, t.offset), (0.0, 0.0));
        assert_eq!(t.iterations, 1);
    }

    #[test]
    fn trims_mapping_fly_bias() {
        let fir = FirCharacter {
            pitch_bias: 0.39,
            roll_bias: -8.33,
            ..Default::default()
        };
        let t = trim_search(flight(&fir), None, &TrimConfig::default(), &mut point_rng(2, 0)).unwrap();
        assert_eq!(t.delta_a, 17.0);
        assert_eq!(t.offset, -3.0);
        assert!(t.residual_roll.abs() <= 0.3 && t.residual_pitch.abs() <= 0.3);
    }

    #[test]
    fn roll_load_shifts_validation_fly_trim() {
        let fir = FirCharacter {
            pitch_slope: 0.11,
            roll_slope: 0.38,
            pitch_bias: -0.825,
            roll_bias: 3.8,
            ..Default::default()
        };
        let cfg = TrimConfig::default();
        let free = trim_search(flight(&fir), None, &cfg, &mut point_rng(3, 0)).unwrap();
        assert_eq!((free.delta_a, free.offset), (-10.0, 7.5));
        let load = OffsetLoad::new(31.8, 4.0, Axis::Roll, 1).unwrap();
        let loaded = trim_search(flight(&fir), Some(&load), &cfg, &mut point_rng(3, 1)).unwrap();
        let shift = loaded.delta_a - free.delta_a;
        assert!((shift + 1.25 / 0.38).abs() <= 0.5, "shift {shift}");
        assert_eq!(loaded.offset, free.offset);
    }

    #[test]
    fn coupled_robot_still_trims() {
        let fir = FirCharacter {
            pitch_bias: 0.39,
            roll_bias: -8.33,
            coupling_pitch_to_roll: 0.1,
            coupling_roll_to_pitch: 0.05,
            ..Default::default()
        };
        let t = trim_search(flight(&fir), None, &TrimConfig::default(), &mut point_rng(4, 0)).unwrap();
        let w = fir.mean_wrench(t.offset, t.delta_a, &WearState::default());
        assert!(w.roll.abs() <= 0.49 * 0.5 && w.pitch.abs() <= 0.13 * 0.5 + 0.05 * 0.5);
    }

    #[test]
    fn impossible_tolerance_reports_best_point() {
        let fir = FirCharacter {
            roll_bias: -8.2,
            ..Default::default()
        };
        let cfg = TrimConfig {
            tolerance: 1e-6,
            observation_noise_sd: 0.0,
            max_iterations: 3,
            ..Default::default()
        };
        match trim_search(flight(&fir), None, &cfg, &mut point_rng(5, 0)) {
            Err(Error::TrimNotConverged { best_delta_a, iterations, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(best_delta_a, 16.5);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_slope_rejected() {
        let fir = flat_fir();
        assert!(trim_search(flight(&fir), None, &TrimConfig::default(), &mut point_rng(1, 0)).is_err());
    }

    #[test]
    fn hung_masses_recover_stiffness() {
        let g = axis(1.52);
        let mocap = MocapConfig {
            marker_position_sd: 0.0,
            ..Default::default()
        };
        let (points, fit) = hung_mass_calibration(
            &g,
            Axis::Roll,
            &default_calibration_loads(),
            &mocap,
            30.0,
            0.5,
            1e-3,
            &mut point_rng(1, 0),
        )
        .unwrap();
        assert_eq!(points.len(), 6);
        assert!((fit.k_s / total_stiffness(&g) - 1.0).abs() < 0.005);
        assert!(fit.r_squared > 0.999_999);
    }
}
