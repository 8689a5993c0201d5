//! End-to-end commands: each runs one protocol on a scenario and writes its
//! results under the output directory. Every JSON file carries the config
//! hash and seed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    analyze, samples, write_planar_residuals_csv, write_scatter_csv, write_thrust_deviation_csv, AnalysisReport,
    TrimObservation,
};
use crate::calibkit::{bandwidth_from_tau, fit_time_constant, AxisCalibration, CalibrationPoint, DecayFit};
use crate::error::{Error, Result};
use crate::firmodel::{FirCharacter, OffsetLoad, WearState};
use crate::gimbalsim::{step_response, total_stiffness, AxisTrajectory};
use crate::mapper::{
    hung_mass_calibration, run_grid, run_grid_from, run_grid_parallel, trim_search, FreeFlight, SweepDataset,
    TrimResult,
};
use crate::scenario::{ReferenceTrim, ScenarioConfig};
use crate::units::per_rad_to_per_deg;
use crate::{Axis, AxisPair};

const CALIBRATION_STREAM: u64 = 1 << 40;
const TRIM_STREAM: u64 = 1 << 41;
const VALIDATION_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub coupling: Option<f64>,
    pub no_noise: bool,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub no_noise: bool,
    #[serde(rename = "coupling_override_uNm_per_V")]
    pub coupling_override: Option<f64>,
}

/// A scenario with overrides applied, ready to run.
#[derive(Debug, Clone)]
pub struct Session {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub parallel: bool,
    pub metadata: RunMetadata,
}

impl Session {
    pub fn new(mut config: ScenarioConfig, opts: &RunOptions) -> Result<Self> {
        if let Some(c) = opts.coupling {
            config = config.with_coupling(c);
        }
        if opts.no_noise {
            config = config.without_noise();
        }
        if let Some(seed) = opts.seed {
            config.seed = seed;
        }
        if let Some(dir) = &opts.out_dir {
            config.output_dir = dir.clone();
        }
        config.validate()?;
        let metadata = RunMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: config.name.clone(),
            config_hash: config.hash(),
            seed: config.seed,
            no_noise: opts.no_noise,
            coupling_override: opts.coupling,
        };
        Ok(Self {
            seed: config.seed,
            out_dir: config.output_dir.clone(),
            parallel: opts.parallel,
            config,
            metadata,
        })
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(self.out_dir.join("plots"))?;
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_csv_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub metadata: RunMetadata,
    pub axes: AxisPair<AxisCalibration>,
    #[serde(rename = "true_stiffness_uNm_per_rad")]
    pub true_stiffness: AxisPair<f64>,
    pub relative_error: AxisPair<f64>,
    #[serde(rename = "angular_resolution_rad")]
    pub angular_resolution: f64,
    #[serde(rename = "angular_resolution_deg")]
    pub angular_resolution_deg: f64,
}

impl CalibrationFile {
    pub fn stiffness(&self) -> AxisPair<f64> {
        AxisPair::new(self.axes.pitch.k_s_per_rad, self.axes.roll.k_s_per_rad)
    }
}

/// Virtual hung-mass calibration of both axes. Writes `calibration.json` and
/// `calibration_points.csv`.
pub fn cmd_calibrate(session: &Session) -> Result<CalibrationFile> {
    session.prepare()?;
    let cfg = &session.config;
    let resolution = cfg.mocap.angular_resolution();
    let mut points: Vec<CalibrationPoint> = Vec::new();
    let axes = AxisPair::new(Axis::Pitch, Axis::Roll).try_map(|axis, _| -> Result<AxisCalibration> {
        let mut rng = session.rng(CALIBRATION_STREAM + axis as u64);
        let (pts, fit) = hung_mass_calibration(
            cfg.gimbal.get(axis),
            axis,
            &cfg.calibration.loads,
            &cfg.mocap,
            cfg.calibration.settle_duration,
            cfg.calibration.average_window,
            cfg.integrator_step,
            &mut rng,
        )?;
        points.extend(pts);
        Ok(AxisCalibration::from_fit(&fit, resolution))
    })?;
    let true_stiffness = cfg.gimbal.as_ref().map(total_stiffness);
    let file = CalibrationFile {
        metadata: session.metadata.clone(),
        relative_error: AxisPair::new(
            axes.pitch.k_s_per_rad / true_stiffness.pitch - 1.0,
            axes.roll.k_s_per_rad / true_stiffness.roll - 1.0,
        ),
        axes,
        true_stiffness,
        angular_resolution: resolution,
        angular_resolution_deg: resolution.to_degrees(),
    };
    write_json(&session.path("calibration.json"), &file)?;
    write_csv_file(&session.path("calibration_points.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["axis", "applied_torque_uNm", "measured_angle_rad"])?;
        for p in &points {
            w.write_record([p.axis.name().to_string(), p.applied_torque.to_string(), p.measured_angle.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(file)
}

/// Reuses `calibration.json` from the output directory when it was produced
/// by the same configuration and seed; calibrates otherwise.
pub fn load_or_calibrate(session: &Session) -> Result<CalibrationFile> {
    let path = session.path("calibration.json");
    if let Ok(bytes) = fs::read(&path) {
        if let Ok(file) = serde_json::from_slice::<CalibrationFile>(&bytes) {
            if file.metadata == session.metadata {
                return Ok(file);
            }
        }
    }
    cmd_calibrate(session)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRun {
    pub axis: Axis,
    #[serde(rename = "initial_angle_deg")]
    pub initial_angle: f64,
    pub fit: Option<DecayFit>,
    #[serde(rename = "cutoff_Hz")]
    pub cutoff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Cut-off interval stated alongside the reported 3 to 4 s time constants, Hz.
pub const REPORTED_CUTOFF_INTERVAL: [f64; 2] = [0.036, 0.063];
/// Cut-off quoted in the decay figure caption, Hz.
pub const REPORTED_CUTOFF_CAPTION: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponseFile {
    pub metadata: RunMetadata,
    pub runs: Vec<DecayRun>,
    #[serde(rename = "time_constant_range_s")]
    pub time_constant_range: Option<[f64; 2]>,
    #[serde(rename = "cutoff_range_Hz")]
    pub cutoff_range: Option<[f64; 2]>,
    /// `1/(2πτ)` over τ from 3 to 4 s.
    #[serde(rename = "first_order_interval_Hz")]
    pub first_order_interval: [f64; 2],
    #[serde(rename = "reported_interval_Hz")]
    pub reported_interval: [f64; 2],
    #[serde(rename = "reported_caption_Hz")]
    pub reported_caption: f64,
}

fn write_trace(path: &Path, trace: &AxisTrajectory, every: usize) -> Result<()> {
    write_csv_file(path, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["t_seconds", "theta_rad"])?;
        for i in (0..trace.len()).step_by(every.max(1)) {
            w.write_record([trace.time[i].to_string(), trace.theta[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Free decays from each configured angle on both axes. Writes
/// `step_response.json` and one trace CSV per run.
pub fn cmd_step_response(session: &Session) -> Result<StepResponseFile> {
    session.prepare()?;
    let cfg = &session.config;
    let every = (0.01 / cfg.integrator_step).round() as usize;
    let mut runs = Vec::new();
    for axis in Axis::BOTH {
        for &deg in &cfg.step_response.initial_angles {
            let trace = step_response(cfg.gimbal.get(axis), deg.to_radians(), cfg.step_response.duration, cfg.integrator_step)?;
            write_trace(&session.path(&format!("step_response_{}_{deg}deg.csv", axis.name())), &trace, every)?;
            let run = match fit_time_constant(&trace) {
                Ok(fit) => DecayRun {
                    axis,
                    initial_angle: deg,
                    cutoff: Some(bandwidth_from_tau(fit.time_constant)),
                    fit: Some(fit),
                    error: None,
                },
                Err(e @ Error::Underdamped(_)) => return Err(e),
                Err(e) => DecayRun {
                    axis,
                    initial_angle: deg,
                    fit: None,
                    cutoff: None,
                    error: Some(e.to_string()),
                },
            };
            runs.push(run);
        }
    }
    let range = |vals: Vec<f64>| -> Option<[f64; 2]> {
        (!vals.is_empty()).then(|| {
            [vals.iter().copied().fold(f64::INFINITY, f64::min), vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)]
        })
    };
    let file = StepResponseFile {
        metadata: session.metadata.clone(),
        time_constant_range: range(runs.iter().filter_map(|r| r.fit.map(|f| f.time_constant)).collect()),
        cutoff_range: range(runs.iter().filter_map(|r| r.cutoff).collect()),
        runs,
        first_order_interval: [bandwidth_from_tau(4.0), bandwidth_from_tau(3.0)],
        reported_interval: REPORTED_CUTOFF_INTERVAL,
        reported_caption: REPORTED_CUTOFF_CAPTION,
    };
    write_json(&session.path("step_response.json"), &file)?;
    Ok(file)
}

fn trim_fly(
    session: &Session,
    fly: &FirCharacter,
    wear: WearState,
    load: Option<&OffsetLoad>,
    stream: u64,
) -> Result<TrimResult> {
    let flight = FreeFlight {
        fir: fly,
        wear,
        gravity: session.config.gimbal.roll.gravity,
    };
    trim_search(flight, load, &session.config.trim, &mut session.rng(TRIM_STREAM + stream))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub metadata: RunMetadata,
    pub analysis: AnalysisReport,
    pub trims: Vec<TrimObservation>,
    pub annotations: usize,
    pub parallel: bool,
}

fn write_plots(session: &Session, ds: &SweepDataset, report: &AnalysisReport, prefix: &str) -> Result<()> {
    let s = samples(ds);
    let fits = report.fits();
    for axis in Axis::BOTH {
        write_csv_file(&session.path(&format!("plots/{prefix}{}_scatter.csv", axis.name())), |buf| {
            write_scatter_csv(&s, axis, fits.get(axis), *report.sigma_inner.get(axis), buf)
        })?;
    }
    write_csv_file(&session.path(&format!("plots/{prefix}planar_residuals.csv")), |buf| {
        write_planar_residuals_csv(&s, &report.planar_fits, buf)
    })?;
    write_csv_file(&session.path(&format!("plots/{prefix}thrust_deviation.csv")), |buf| {
        write_thrust_deviation_csv(&s, report.thrust_stats.mean, buf)
    })
}

pub struct SweepOutput {
    pub dataset: SweepDataset,
    pub report: ReportFile,
}

/// Calibrates if needed, optionally trims the mapping fly, sweeps the grid
/// and analyses it. Writes `sweep.csv`, `sweep_meta.json`, `report.json` and
/// the plot data under `plots/`.
pub fn cmd_sweep(session: &Session) -> Result<SweepOutput> {
    session.prepare()?;
    let cfg = &session.config;
    let calibration = load_or_calibrate(session)?;
    let mut trims = Vec::new();
    if cfg.trim_before_sweep {
        let trim = trim_fly(session, &cfg.mapping_fly, WearState::default(), None, 0)?;
        trims.push(TrimObservation {
            source: "mapping fly, no load".into(),
            trim,
            load: None,
        });
    }
    let plant = cfg.plant(&cfg.mapping_fly, calibration.stiffness());
    let no_wear = cfg.mapping_fly.pitch_wear_rate == 0.0 && cfg.mapping_fly.roll_wear_rate == 0.0;
    let parallel = session.parallel && no_wear;
    let mut dataset = if parallel {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        run_grid_parallel(&plant, &cfg.sweep, session.seed, threads)?
    } else {
        run_grid(&plant, &cfg.sweep, session.seed)?
    };
    dataset.metadata.config_hash = Some(session.metadata.config_hash.clone());
    dataset.save(&session.path("sweep.csv"), &session.path("sweep_meta.json"))?;
    let analysis = analyze(&dataset, &trims, cfg.gimbal.roll.gravity)?;
    write_plots(session, &dataset, &analysis, "")?;
    let report = ReportFile {
        metadata: session.metadata.clone(),
        annotations: dataset.metadata.annotations.len(),
        analysis,
        trims,
        parallel,
    };
    write_json(&session.path("report.json"), &report)?;
    Ok(SweepOutput { dataset, report })
}

/// Recovery targets evaluated on a single sweep report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCheck {
    pub name: String,
    pub value: f64,
    pub target: String,
    pub pass: bool,
}

/// Checks one report against the recovery targets for the configured robot.
pub fn target_checks(report: &AnalysisReport, fly: &FirCharacter) -> Vec<TargetCheck> {
    let mut out = Vec::new();
    let mut push = |name: &str, value: f64, target: String, pass: bool| {
        out.push(TargetCheck {
            name: name.into(),
            value,
            target,
            pass,
        })
    };
    let within = |v: f64, truth: f64, frac: f64| (v - truth).abs() <= frac * truth.abs();
    push(
        "pitch slope (uNm/V)",
        report.pitch_fit.slope,
        format!("{} ± 8%", fly.pitch_slope),
        within(report.pitch_fit.slope, fly.pitch_slope, 0.08),
    );
    push(
        "roll slope (uNm/V)",
        report.roll_fit.slope,
        format!("{} ± 8%", fly.roll_slope),
        within(report.roll_fit.slope, fly.roll_slope, 0.08),
    );
    push("pitch R^2", report.pitch_fit.r_squared, ">= 0.93".into(), report.pitch_fit.r_squared >= 0.93);
    push("roll R^2", report.roll_fit.r_squared, ">= 0.96".into(), report.roll_fit.r_squared >= 0.96);
    let decoupled = fly.coupling_pitch_to_roll == 0.0 && fly.coupling_roll_to_pitch == 0.0;
    for (name, v) in [
        ("roll cmd vs pitch torque correlation", report.cross_corr.roll_cmd_vs_pitch_torque),
        ("pitch cmd vs roll torque correlation", report.cross_corr.pitch_cmd_vs_roll_torque),
    ] {
        if decoupled {
            push(name, v, "|rho| <= 0.1".into(), v.abs() <= 0.1);
        }
    }
    if !decoupled {
        let v = report.cross_corr_residual.pitch_cmd_vs_roll_torque;
        push("pitch cmd vs roll torque residual correlation", v, "> 0.3".into(), v > 0.3);
    }
    let t = &report.thrust_stats;
    push(
        "thrust max deviation (%)",
        100.0 * t.max_dev_fraction,
        "5.8 ± 1.5".into(),
        (t.max_dev_fraction - 0.058).abs() <= 0.015,
    );
    push(
        "thrust pitch slope (mg/V)",
        t.slope_pitch,
        format!("{} ± 10%", fly.thrust_pitch_slope),
        within(t.slope_pitch, fly.thrust_pitch_slope, 0.10),
    );
    push(
        "thrust roll slope (mg/V)",
        t.slope_roll,
        format!("{} ± 10%", fly.thrust_roll_slope),
        within(t.slope_roll, fly.thrust_roll_slope, 0.10),
    );
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOutcome {
    pub report: ReportFile,
    pub checks: Vec<TargetCheck>,
}

/// Re-analyses `sweep.csv` from the output directory, rewriting
/// `report.json` and the plot data, and evaluates the recovery targets.
pub fn cmd_report(session: &Session) -> Result<ReportOutcome> {
    session.prepare()?;
    let dataset = SweepDataset::load(&session.path("sweep.csv"), &session.path("sweep_meta.json"))?;
    let previous: Option<ReportFile> = fs::read(session.path("report.json"))
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok());
    let trims = previous.as_ref().map(|r| r.trims.clone()).unwrap_or_default();
    let analysis = analyze(&dataset, &trims, session.config.gimbal.roll.gravity)?;
    write_plots(session, &dataset, &analysis, "")?;
    let checks = target_checks(&analysis, &session.config.mapping_fly);
    let mut metadata = session.metadata.clone();
    metadata.seed = dataset.metadata.seed;
    if let Some(h) = &dataset.metadata.config_hash {
        metadata.config_hash = h.clone();
    }
    let report = ReportFile {
        metadata,
        annotations: dataset.metadata.annotations.len(),
        analysis,
        trims,
        parallel: previous.map(|r| r.parallel).unwrap_or(false),
    };
    write_json(&session.path("report.json"), &report)?;
    Ok(ReportOutcome { report, checks })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimRow {
    pub source: String,
    #[serde(rename = "delta_a_V")]
    pub delta_a: f64,
    #[serde(rename = "offset_V")]
    pub offset: f64,
    #[serde(rename = "reported_delta_a_V")]
    pub reported_delta_a: Option<f64>,
    #[serde(rename = "reported_offset_V")]
    pub reported_offset: Option<f64>,
    #[serde(rename = "load_torque_uNm")]
    pub load_torque: f64,
    pub load_axis: Option<Axis>,
}

/// Informational comparison of the trim change caused by a load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadShift {
    pub source: String,
    pub axis: Axis,
    #[serde(rename = "load_torque_uNm")]
    pub load_torque: f64,
    /// `−load/slope` from the recovered map, V.
    #[serde(rename = "predicted_shift_V")]
    pub predicted: f64,
    #[serde(rename = "simulated_shift_V")]
    pub simulated: f64,
    #[serde(rename = "reported_shift_V")]
    pub reported: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationFile {
    pub metadata: RunMetadata,
    pub trims: Vec<TrimRow>,
    pub mapping_checks: Vec<crate::analysis::TrimCheck>,
    pub validation_analysis: AnalysisReport,
    pub load_shifts: Vec<LoadShift>,
    #[serde(rename = "validation_flap_time_s")]
    pub flap_time: f64,
}

fn load_source(load: &OffsetLoad) -> String {
    format!("validation fly, {} load", load.axis.name())
}

fn reference<'a>(refs: &'a [ReferenceTrim], source: &str) -> Option<&'a ReferenceTrim> {
    refs.iter().find(|r| r.source == source)
}

/// Free-flight trims of both robots with and without the offset loads,
/// checked against the maps. Runs the mapping sweep and the validation
/// sweep as needed. Writes `validation.json` and `validation_trims.csv`.
pub fn cmd_validate(session: &Session) -> Result<ValidationFile> {
    session.prepare()?;
    let cfg = &session.config;
    let Some(protocol) = &cfg.validation else {
        return Err(Error::InvalidParameter("scenario has no validation section".into()));
    };
    let gravity = cfg.gimbal.roll.gravity;
    let mapping = cmd_sweep(session)?;
    let mapping_trim = match mapping.report.trims.first() {
        Some(t) => t.clone(),
        None => TrimObservation {
            source: "mapping fly, no load".into(),
            trim: trim_fly(session, &cfg.mapping_fly, WearState::default(), None, 0)?,
            load: None,
        },
    };
    let mapping_checks = mapping.report.analysis.trim_checks.clone();
    let mapping_checks = if mapping_checks.is_empty() {
        crate::analysis::trim_consistency(
            &mapping.report.analysis.fits(),
            &mapping.report.analysis.sigma_inner,
            std::slice::from_ref(&mapping_trim),
            gravity,
        )?
    } else {
        mapping_checks
    };

    let fly = &protocol.fly;
    let fresh = WearState::default();
    let mut observations = vec![TrimObservation {
        source: "validation fly, no load".into(),
        trim: trim_fly(session, fly, fresh, None, 1)?,
        load: None,
    }];
    for (i, load) in protocol.loads.iter().enumerate() {
        observations.push(TrimObservation {
            source: load_source(load),
            trim: trim_fly(session, fly, fresh, Some(load), 2 + i as u64)?,
            load: Some(*load),
        });
    }

    let calibration = load_or_calibrate(session)?;
    let plant = cfg.plant(fly, calibration.stiffness());
    let mut dataset = run_grid_from(&plant, &protocol.sweep, session.seed ^ VALIDATION_SEED_MIX, 0.0)?;
    dataset.metadata.config_hash = Some(session.metadata.config_hash.clone());
    dataset.save(&session.path("validation_sweep.csv"), &session.path("validation_sweep_meta.json"))?;
    let flap_time = dataset.metadata.flap_time;
    observations.push(TrimObservation {
        source: "validation fly, after sweep".into(),
        trim: trim_fly(session, fly, WearState::after(fly, flap_time), None, 100)?,
        load: None,
    });
    let validation_analysis = analyze(&dataset, &observations, gravity)?;
    write_plots(session, &dataset, &validation_analysis, "validation_")?;

    let fits = validation_analysis.fits();
    let free = &observations[0];
    let free_ref = reference(&protocol.reference_trims, &free.source);
    let load_shifts = observations
        .iter()
        .filter_map(|o| o.load.map(|l| (o, l)))
        .map(|(o, load)| {
            let torque = o.external_torque(load.axis, gravity);
            let reported = match (reference(&protocol.reference_trims, &o.source), free_ref) {
                (Some(r), Some(f)) => match load.axis {
                    Axis::Roll => r.delta_a.zip(f.delta_a).map(|(a, b)| a - b),
                    Axis::Pitch => r.offset.zip(f.offset).map(|(a, b)| a - b),
                },
                _ => None,
            };
            LoadShift {
                source: o.source.clone(),
                axis: load.axis,
                load_torque: torque,
                predicted: -torque / fits.get(load.axis).slope,
                simulated: o.trim.command(load.axis) - free.trim.command(load.axis),
                reported,
            }
        })
        .collect();

    let trims: Vec<TrimRow> = std::iter::once(&mapping_trim)
        .chain(&observations)
        .map(|o| {
            let r = reference(&protocol.reference_trims, &o.source);
            TrimRow {
                source: o.source.clone(),
                delta_a: o.trim.delta_a,
                offset: o.trim.offset,
                reported_delta_a: r.and_then(|r| r.delta_a),
                reported_offset: r.and_then(|r| r.offset),
                load_torque: o.load.map_or(0.0, |l| o.external_torque(l.axis, gravity)),
                load_axis: o.load.map(|l| l.axis),
            }
        })
        .collect();

    let file = ValidationFile {
        metadata: session.metadata.clone(),
        trims,
        mapping_checks,
        validation_analysis,
        load_shifts,
        flap_time,
    };
    write_json(&session.path("validation.json"), &file)?;
    write_csv_file(&session.path("validation_trims.csv"), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "source",
            "axis",
            "load_torque_uNm",
            "predicted_trim_V",
            "observed_trim_V",
            "deviation_V",
            "deviation_uNm",
            "deviation_sigma",
        ])?;
        for c in file.mapping_checks.iter().chain(&file.validation_analysis.trim_checks) {
            w.write_record([
                c.source.clone(),
                c.axis.name().to_string(),
                c.external_torque.to_string(),
                c.predicted.to_string(),
                c.observed.to_string(),
                c.deviation_volts.to_string(),
                c.deviation_torque.to_string(),
                c.deviation_sigmas.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(file)
}

/// Stiffness in µNm/deg, for display.
pub fn per_degree(stiffness: AxisPair<f64>) -> AxisPair<f64> {
    stiffness.map(per_rad_to_per_deg)
}
