use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flexgimbal::pipeline::{
    cmd_calibrate, cmd_report, cmd_step_response, cmd_sweep, cmd_validate, per_degree, RunOptions, Session,
};
use flexgimbal::scenario::ScenarioConfig;
use flexgimbal::Axis;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

/// Virtual testbench for a flexured-gimbal torque sensor carrying a
/// flapping-wing micro robot.
#[derive(Debug, Parser)]
#[command(name = "flexgimbal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (JSON). Defaults to the bundled reference scenario.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the scenario seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Set both cross-axis coupling coefficients, µNm/V.
    #[arg(long, global = true, value_name = "X", allow_negative_numbers = true)]
    coupling: Option<f64>,

    /// Disable every noise source.
    #[arg(long, global = true)]
    no_noise: bool,

    /// Measure grid points concurrently (robots without wear only).
    #[arg(long, global = true)]
    parallel: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Hung-mass stiffness calibration of both axes.
    Calibrate,
    /// Free-decay time constants and cut-off frequencies.
    StepResponse,
    /// Calibrate, trim, sweep the command grid and analyse it.
    Sweep,
    /// Free-flight trims with and without offset loads against the maps.
    Validate,
    /// Re-analyse an existing sweep and evaluate the recovery targets.
    Report {
        /// Exit with status 4 when any target is missed.
        #[arg(long)]
        check: bool,
    },
}

fn session(cli: &Cli) -> Result<Session, String> {
    let config = match &cli.config {
        Some(path) => ScenarioConfig::load(path).map_err(|e| format!("cannot load {}: {e}", path.display()))?,
        None => ScenarioConfig::reference(),
    };
    let opts = RunOptions {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        coupling: cli.coupling,
        no_noise: cli.no_noise,
        parallel: cli.parallel,
    };
    Session::new(config, &opts).map_err(|e| format!("invalid configuration: {e}"))
}

fn run(cli: &Cli, s: &Session) -> flexgimbal::Result<u8> {
    let out = s.out_dir.display();
    match &cli.command {
        Command::Calibrate => {
            let cal = cmd_calibrate(s)?;
            let deg = per_degree(cal.stiffness());
            for axis in Axis::BOTH {
                let a = cal.axes.get(axis);
                println!(
                    "{axis:>5}: k_s = {:.2} uNm/rad ({:.3} uNm/deg), R^2 = {:.6}, error {:+.2}%, resolution {:.3} uNm",
                    a.k_s_per_rad,
                    deg.get(axis),
                    a.r_squared,
                    100.0 * cal.relative_error.get(axis),
                    a.resolution
                );
            }
            println!("wrote {out}/calibration.json");
        }
        Command::StepResponse => {
            let sr = cmd_step_response(s)?;
            for run in &sr.runs {
                match (&run.fit, run.cutoff) {
                    (Some(fit), Some(fc)) => println!(
                        "{:>5} {:+.1} deg: tau = {:.3} s, f_c = {:.4} Hz",
                        run.axis, run.initial_angle, fit.time_constant, fc
                    ),
                    _ => println!(
                        "{:>5} {:+.1} deg: no fit ({})",
                        run.axis,
                        run.initial_angle,
                        run.error.as_deref().unwrap_or("unknown")
                    ),
                }
            }
            println!(
                "first-order interval for tau in [3, 4] s: [{:.3}, {:.3}] Hz; reported [{}, {}] Hz; caption ~{} Hz",
                sr.first_order_interval[0],
                sr.first_order_interval[1],
                sr.reported_interval[0],
                sr.reported_interval[1],
                sr.reported_caption
            );
        }
        Command::Sweep => {
            let sw = cmd_sweep(s)?;
            let a = &sw.report.analysis;
            println!(
                "{} of {} points measured, {} annotations",
                sw.dataset.measured_count(),
                sw.dataset.rows.len(),
                sw.report.annotations
            );
            println!("pitch: slope {:.4} uNm/V, R^2 {:.3}", a.pitch_fit.slope, a.pitch_fit.r_squared);
            println!("roll:  slope {:.4} uNm/V, R^2 {:.3}", a.roll_fit.slope, a.roll_fit.r_squared);
            println!(
                "cross-correlation: roll cmd/pitch torque {:+.3}, pitch cmd/roll torque {:+.3}",
                a.cross_corr.roll_cmd_vs_pitch_torque, a.cross_corr.pitch_cmd_vs_roll_torque
            );
            println!(
                "sigma inner {:.2}/{:.2}, extreme {:.2}/{:.2} uNm (pitch/roll)",
                a.sigma_inner.pitch, a.sigma_inner.roll, a.sigma_extreme.pitch, a.sigma_extreme.roll
            );
            println!(
                "thrust mean {:.1} mg, max deviation {:.1}%",
                a.thrust_stats.mean,
                100.0 * a.thrust_stats.max_dev_fraction
            );
            println!("wrote {out}/sweep.csv and {out}/report.json");
        }
        Command::Validate => {
            let v = cmd_validate(s)?;
            println!("{:<28} {:>8} {:>8} {:>10} {:>10}", "source", "dA (V)", "Vo (V)", "ref dA", "ref Vo");
            for t in &v.trims {
                let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.1}"));
                println!(
                    "{:<28} {:>8.1} {:>8.1} {:>10} {:>10}",
                    t.source,
                    t.delta_a,
                    t.offset,
                    fmt(t.reported_delta_a),
                    fmt(t.reported_offset)
                );
            }
            for c in v.mapping_checks.iter().chain(&v.validation_analysis.trim_checks) {
                println!(
                    "{:<28} {:>5}: predicted {:+.2} V, observed {:+.2} V, deviation {:.2} uNm = {:.2} sigma",
                    c.source, c.axis, c.predicted, c.observed, c.deviation_torque, c.deviation_sigmas
                );
            }
            for l in &v.load_shifts {
                println!(
                    "{} ({:+.2} uNm): predicted shift {:+.2} V, simulated {:+.2} V, reported {}",
                    l.source,
                    l.load_torque,
                    l.predicted,
                    l.simulated,
                    l.reported.map_or("-".into(), |r| format!("{r:+.2} V"))
                );
            }
            println!("wrote {out}/validation.json");
        }
        Command::Report { check } => {
            let r = cmd_report(s)?;
            let mut failed = 0;
            for c in &r.checks {
                println!(
                    "{} {:<44} {:>10.4}  target {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.target
                );
                failed += usize::from(!c.pass);
            }
            println!("wrote {out}/report.json");
            if *check && failed > 0 {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let s = match session(&cli) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run(&cli, &s) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
