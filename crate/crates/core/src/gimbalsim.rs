//! Single-axis gimbal dynamics.
//!
//! Each axis is a damped pendulum with a flexure spring:
//!
//! ```text
//! I·θ̈ = τ − m_b·g·l_b·sin θ + m_R·g·l_R·sin θ − k_f·θ − b·θ̇
//! ```
//!
//! Pitch and roll are integrated as two independent systems. At steady state
//! with `l_R ≈ 0` and small angles the balance reduces to `τ = k_s·θ` with
//! `k_s = m_b·g·l_b + k_f`.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::units::{
    mg_to_kg, mm_to_m, nm_to_unm, unm_to_nm, KG_M2_PER_MG_MM2, STANDARD_GRAVITY, UNM_PER_NM,
};
use crate::AxisPair;

fn standard_gravity() -> f64 {
    STANDARD_GRAVITY
}

/// Physical constants of one gimbal axis, in interface units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GimbalParams {
    #[serde(rename = "counterweight_mass_mg")]
    pub counterweight_mass: f64,
    #[serde(rename = "counterweight_lever_mm")]
    pub counterweight_lever: f64,
    #[serde(rename = "robot_mass_mg")]
    pub robot_mass: f64,
    #[serde(rename = "robot_com_offset_mm")]
    pub robot_com_offset: f64,
    #[serde(rename = "flexure_stiffness_uNm_per_rad")]
    pub flexure_stiffness: f64,
    #[serde(rename = "damping_uNm_s_per_rad")]
    pub damping: f64,
    #[serde(rename = "inertia_mg_mm2")]
    pub inertia: f64,
    #[serde(rename = "gravity_m_per_s2", default = "standard_gravity")]
    pub gravity: f64,
}

impl GimbalParams {
    /// Pendulum stiffness of the counterweight, µNm/rad.
    pub fn counterweight_stiffness(&self) -> f64 {
        nm_to_unm(mg_to_kg(self.counterweight_mass) * self.gravity * mm_to_m(self.counterweight_lever))
    }

    /// Destabilising stiffness of a robot whose centre of mass sits above the axis, µNm/rad.
    pub fn robot_offset_stiffness(&self) -> f64 {
        nm_to_unm(mg_to_kg(self.robot_mass) * self.gravity * mm_to_m(self.robot_com_offset))
    }

    /// Linearised restoring stiffness including the robot offset term, µNm/rad.
    pub fn effective_stiffness(&self) -> f64 {
        self.counterweight_stiffness() - self.robot_offset_stiffness() + self.flexure_stiffness
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.counterweight_mass,
            self.counterweight_lever,
            self.robot_mass,
            self.robot_com_offset,
            self.flexure_stiffness,
            self.damping,
            self.inertia,
            self.gravity,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(invalid("gimbal parameters must be finite"));
        }
        if self.inertia <= 0.0 {
            return Err(invalid("gimbal inertia must be positive"));
        }
        if self.damping < 0.0 || self.flexure_stiffness < 0.0 {
            return Err(invalid("damping and flexure stiffness must be non-negative"));
        }
        if self.effective_stiffness() <= 0.0 {
            return Err(invalid(format!(
                "effective stiffness {:.3} µNm/rad is not positive; θ = 0 is unstable",
                self.effective_stiffness()
            )));
        }
        Ok(())
    }

    /// Eigenvalue magnitudes `(slow, fast)` of the linearised free decay, in 1/s.
    ///
    /// `None` when the axis is underdamped.
    pub fn decay_rates(&self) -> Option<(f64, f64)> {
        let m = AxisModel::new(self);
        let k = m.linear_stiffness();
        let disc = m.damping * m.damping - 4.0 * m.inertia * k;
        if disc < 0.0 {
            return None;
        }
        let root = disc.sqrt();
        Some((
            (m.damping - root) / (2.0 * m.inertia),
            (m.damping + root) / (2.0 * m.inertia),
        ))
    }

    /// Time constant of the slow decay mode, seconds.
    pub fn dominant_time_constant(&self) -> Option<f64> {
        self.decay_rates().map(|(slow, _)| 1.0 / slow)
    }

    /// Chooses damping and inertia so the linearised decay has a slow time
    /// constant `time_constant` and a fast mode `pole_ratio` times quicker.
    pub fn with_decay(mut self, time_constant: f64, pole_ratio: f64) -> Self {
        assert!(time_constant > 0.0 && pole_ratio > 1.0);
        let slow = 1.0 / time_constant;
        let fast = pole_ratio * slow;
        let k = unm_to_nm(self.effective_stiffness());
        let inertia = k / (slow * fast);
        self.inertia = inertia / KG_M2_PER_MG_MM2;
        self.damping = nm_to_unm(inertia * (slow + fast));
        self
    }

    /// Chooses inertia and damping for a given undamped natural frequency
    /// (Hz) and damping ratio of the linearised axis.
    pub fn with_natural_frequency(mut self, frequency: f64, damping_ratio: f64) -> Self {
        assert!(frequency > 0.0 && damping_ratio >= 0.0);
        let omega = 2.0 * std::f64::consts::PI * frequency;
        let k = unm_to_nm(self.effective_stiffness());
        let inertia = k / (omega * omega);
        self.inertia = inertia / KG_M2_PER_MG_MM2;
        self.damping = nm_to_unm(2.0 * damping_ratio * inertia * omega);
        self
    }
}

/// Total device stiffness `m_b·g·l_b + k_f`, µNm/rad. The robot offset term
/// is left out because the robot is mounted with its centre of mass on the axis.
pub fn total_stiffness(p: &GimbalParams) -> f64 {
    p.counterweight_stiffness() + p.flexure_stiffness
}

/// SI coefficients of one axis, precomputed for the integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisModel {
    /// Net coefficient of `sin θ`, Nm/rad.
    pub gravity_stiffness: f64,
    pub flexure_stiffness: f64,
    pub damping: f64,
    pub inertia: f64,
}

impl AxisModel {
    pub fn new(p: &GimbalParams) -> Self {
        Self {
            gravity_stiffness: unm_to_nm(p.counterweight_stiffness() - p.robot_offset_stiffness()),
            flexure_stiffness: unm_to_nm(p.flexure_stiffness),
            damping: unm_to_nm(p.damping),
            inertia: p.inertia * KG_M2_PER_MG_MM2,
        }
    }

    pub fn linear_stiffness(&self) -> f64 {
        self.gravity_stiffness + self.flexure_stiffness
    }

    #[inline]
    pub fn acceleration(&self, theta: f64, theta_dot: f64, torque_nm: f64) -> f64 {
        (torque_nm
            - self.gravity_stiffness * theta.sin()
            - self.flexure_stiffness * theta
            - self.damping * theta_dot)
            / self.inertia
    }

    /// Kinetic plus potential energy, J.
    pub fn energy(&self, theta: f64, theta_dot: f64) -> f64 {
        0.5 * self.inertia * theta_dot * theta_dot
            + self.gravity_stiffness * (1.0 - theta.cos())
            + 0.5 * self.flexure_stiffness * theta * theta
    }

    #[inline]
    fn rk4<F: Fn(f64) -> f64>(&self, s: GimbalState, torque_nm: &F, dt: f64) -> GimbalState {
        let h = 0.5 * dt;
        let tau0 = torque_nm(s.t);
        let tau_mid = torque_nm(s.t + h);
        let tau1 = torque_nm(s.t + dt);

        let k1x = s.theta_dot;
        let k1v = self.acceleration(s.theta, s.theta_dot, tau0);
        let k2x = s.theta_dot + h * k1v;
        let k2v = self.acceleration(s.theta + h * k1x, k2x, tau_mid);
        let k3x = s.theta_dot + h * k2v;
        let k3v = self.acceleration(s.theta + h * k2x, k3x, tau_mid);
        let k4x = s.theta_dot + dt * k3v;
        let k4v = self.acceleration(s.theta + dt * k3x, k4x, tau1);

        GimbalState {
            theta: s.theta + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
            theta_dot: s.theta_dot + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
            t: s.t + dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GimbalState {
    #[serde(rename = "theta_rad")]
    pub theta: f64,
    #[serde(rename = "theta_dot_rad_per_s")]
    pub theta_dot: f64,
    #[serde(rename = "t_s")]
    pub t: f64,
}

impl GimbalState {
    pub fn at_rest(theta: f64) -> Self {
        Self {
            theta,
            theta_dot: 0.0,
            t: 0.0,
        }
    }

    /// Whether the angle is inside the model's validity envelope.
    pub fn is_valid(&self) -> bool {
        self.theta.abs() < FRAC_PI_2
    }
}

/// Angular acceleration, rad/s², for an applied torque in µNm.
pub fn dynamics_rhs(p: &GimbalParams, s: &GimbalState, torque_unm: f64) -> f64 {
    AxisModel::new(p).acceleration(s.theta, s.theta_dot, unm_to_nm(torque_unm))
}

/// Default half-width of the small-angle envelope, degrees.
pub const SMALL_ANGLE_ENVELOPE_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticDeflection {
    pub angle_rad: f64,
    /// False when the deflection exceeds the small-angle envelope, where the
    /// linear torque estimate starts to misread the pendulum term.
    pub within_envelope: bool,
}

/// Small-angle steady deflection `τ / k_s`.
pub fn static_deflection(p: &GimbalParams, torque_unm: f64, envelope_deg: f64) -> StaticDeflection {
    let angle_rad = torque_unm / total_stiffness(p);
    StaticDeflection {
        angle_rad,
        within_envelope: angle_rad.abs() <= envelope_deg.to_radians(),
    }
}

/// One classical fourth-order Runge–Kutta step under a constant torque (µNm).
pub fn step(p: &GimbalParams, s: GimbalState, torque_unm: f64, dt: f64) -> Result<GimbalState> {
    if !(dt > 0.0) {
        return Err(invalid("time step must be positive"));
    }
    let tau = unm_to_nm(torque_unm);
    let next = AxisModel::new(p).rk4(s, &|_| tau, dt);
    check_envelope(next)
}

fn check_envelope(s: GimbalState) -> Result<GimbalState> {
    if s.is_valid() {
        Ok(s)
    } else {
        Err(Error::Divergence {
            theta: s.theta,
            t: s.t,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AxisTrajectory {
    pub time: Vec<f64>,
    pub theta: Vec<f64>,
    /// Applied torque, µNm.
    pub torque: Vec<f64>,
}

impl AxisTrajectory {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn final_theta(&self) -> Option<f64> {
        self.theta.last().copied()
    }

    /// Linearly interpolated angle at `t`, clamped to the recorded span.
    pub fn theta_at(&self, t: f64) -> f64 {
        let n = self.time.len();
        if n == 0 {
            return f64::NAN;
        }
        if t <= self.time[0] {
            return self.theta[0];
        }
        if t >= self.time[n - 1] {
            return self.theta[n - 1];
        }
        let i = self.time.partition_point(|&x| x <= t);
        let (t0, t1) = (self.time[i - 1], self.time[i]);
        let w = (t - t0) / (t1 - t0);
        self.theta[i - 1] + w * (self.theta[i] - self.theta[i - 1])
    }
}

/// Integrates one axis for `steps` steps of `dt` from `initial`, recording
/// every sample from step index `record_from` onward.
///
/// `torque_unm` gives the applied torque at a time, µNm.
pub fn integrate_axis<F: Fn(f64) -> f64>(
    p: &GimbalParams,
    initial: GimbalState,
    torque_unm: F,
    steps: usize,
    dt: f64,
    record_from: usize,
) -> Result<AxisTrajectory> {
    if !(dt > 0.0) {
        return Err(invalid("time step must be positive"));
    }
    let model = AxisModel::new(p);
    let torque_nm = |t: f64| torque_unm(t) / UNM_PER_NM;
    let capacity = (steps + 1).saturating_sub(record_from);
    let mut traj = AxisTrajectory {
        time: Vec::with_capacity(capacity),
        theta: Vec::with_capacity(capacity),
        torque: Vec::with_capacity(capacity),
    };
    let mut s = check_envelope(initial)?;
    let t0 = initial.t;
    for i in 0..=steps {
        if i >= record_from {
            traj.time.push(s.t);
            traj.theta.push(s.theta);
            traj.torque.push(torque_unm(s.t));
        }
        if i < steps {
            s = model.rk4(s, &torque_nm, dt);
            // re-anchor time to avoid accumulating rounding in t
            s.t = t0 + (i + 1) as f64 * dt;
            s = check_envelope(s)?;
        }
    }
    Ok(traj)
}

fn step_count(duration: f64, dt: f64) -> Result<usize> {
    if !(duration > 0.0) {
        return Err(invalid("run duration must be positive"));
    }
    if !(dt > 0.0) {
        return Err(invalid("time step must be positive"));
    }
    Ok((duration / dt).round() as usize)
}

/// Runs both axes from rest under time-varying torques (µNm) for `duration`.
pub fn simulate_run<F, G>(
    params: &AxisPair<GimbalParams>,
    pitch_torque: F,
    roll_torque: G,
    duration: f64,
    dt: f64,
) -> Result<AxisPair<AxisTrajectory>>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let steps = step_count(duration, dt)?;
    let rest = GimbalState::default();
    Ok(AxisPair {
        pitch: integrate_axis(&params.pitch, rest, pitch_torque, steps, dt, 0)?,
        roll: integrate_axis(&params.roll, rest, roll_torque, steps, dt, 0)?,
    })
}

/// Free decay from rest at `theta0` with no applied torque.
pub fn step_response(p: &GimbalParams, theta0: f64, duration: f64, dt: f64) -> Result<AxisTrajectory> {
    let steps = step_count(duration, dt)?;
    integrate_axis(p, GimbalState::at_rest(theta0), |_| 0.0, steps, dt, 0)
}

/// Writes `t_seconds,theta_pitch_rad,theta_roll_rad,tau_pitch_uNm,tau_roll_uNm`.
///
/// Both trajectories must share one time grid.
pub fn write_trajectory_csv<W: Write>(traj: &AxisPair<AxisTrajectory>, writer: W) -> Result<()> {
    if traj.pitch.time != traj.roll.time {
        return Err(invalid("pitch and roll trajectories use different time grids"));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "t_seconds",
        "theta_pitch_rad",
        "theta_roll_rad",
        "tau_pitch_uNm",
        "tau_roll_uNm",
    ])?;
    for i in 0..traj.pitch.len() {
        w.write_record([
            traj.pitch.time[i].to_string(),
            traj.pitch.theta[i].to_string(),
            traj.roll.theta[i].to_string(),
            traj.pitch.torque[i].to_string(),
            traj.roll.torque[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::per_deg_to_per_rad;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Roll axis tuned to 1.52 µNm/deg with a 3.5 s dominant time constant.
    fn roll_axis() -> GimbalParams {
        let pendulum = GimbalParams {
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
            flexure_stiffness: per_deg_to_per_rad(1.52) - pendulum.counterweight_stiffness(),
            ..pendulum
        }
        .with_decay(3.5, 50.0)
    }

    #[test]
    fn equilibrium_has_no_acceleration() {
        assert_eq!(dynamics_rhs(&roll_axis(), &GimbalState::default(), 0.0), 0.0);
    }

    #[test]
    fn counterweight_restoring_stiffness() {
        let p = GimbalParams {
            flexure_stiffness: 0.0,
            damping: 0.0,
            ..roll_axis()
        };
        let theta = 1e-6;
        let accel = dynamics_rhs(&p, &GimbalState::at_rest(theta), 0.0);
        let stiffness_unm = -accel * p.inertia * KG_M2_PER_MG_MM2 / theta * UNM_PER_NM;
        assert_abs_diff_eq!(stiffness_unm, 8.336, epsilon = 1e-3);
    }

    #[test]
    fn positive_torque_accelerates_positively() {
        assert!(dynamics_rhs(&roll_axis(), &GimbalState::default(), 0.5) > 0.0);
    }

    #[test]
    fn total_stiffness_examples() {
        let flex_only = GimbalParams {
            counterweight_mass: 0.0,
            flexure_stiffness: 5.0,
            ..roll_axis()
        };
        assert_abs_diff_eq!(total_stiffness(&flex_only), 5.0, epsilon = 1e-12);

        let p = GimbalParams {
            flexure_stiffness: 78.8,
            ..roll_axis()
        };
        assert_abs_diff_eq!(total_stiffness(&p), 87.1, epsilon = 0.05);
        assert_abs_diff_eq!(crate::units::per_rad_to_per_deg(total_stiffness(&p)), 1.52, epsilon = 0.005);

        let heavier = GimbalParams {
            counterweight_mass: 60.0,
            ..p
        };
        assert!(total_stiffness(&heavier) > total_stiffness(&p));
    }

    #[test]
    fn robot_offset_is_ignored_by_total_stiffness() {
        let p = GimbalParams {
            robot_com_offset: 0.5,
            ..roll_axis()
        };
        assert_eq!(total_stiffness(&p), total_stiffness(&roll_axis()));
        assert!(p.effective_stiffness() < total_stiffness(&p));
    }

    #[test]
    fn static_deflection_inverts_stiffness() {
        let p = roll_axis();
        assert_eq!(static_deflection(&p, 0.0, 10.0).angle_rad, 0.0);

        let pitch = GimbalParams {
            flexure_stiffness: per_deg_to_per_rad(1.88) - p.counterweight_stiffness(),
            ..p
        };
        let d = static_deflection(&pitch, 1.88, 10.0);
        assert_abs_diff_eq!(d.angle_rad.to_degrees(), 1.0, epsilon = 1e-9);
        assert!(d.within_envelope);
        assert!(!static_deflection(&p, 20.0, 10.0).within_envelope);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(roll_axis().validate().is_ok());
        assert!(GimbalParams { inertia: 0.0, ..roll_axis() }.validate().is_err());
        assert!(GimbalParams { damping: -1.0, ..roll_axis() }.validate().is_err());
        let top_heavy = GimbalParams {
            robot_com_offset: 100.0,
            ..roll_axis()
        };
        assert!(top_heavy.validate().is_err());
    }

    #[test]
    fn rest_is_a_fixed_point() {
        let s = step(&roll_axis(), GimbalState::default(), 0.0, 1e-3).unwrap();
        assert_eq!((s.theta, s.theta_dot), (0.0, 0.0));
        assert_eq!(s.t, 1e-3);
    }

    #[test]
    fn step_rejects_bad_dt_and_divergence() {
        assert!(step(&roll_axis(), GimbalState::default(), 0.0, 0.0).is_err());
        let near_edge = GimbalState {
            theta: 1.57,
            theta_dot: 100.0,
            t: 0.0,
        };
        assert!(matches!(
            step(&roll_axis(), near_edge, 0.0, 1e-3),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn energy_never_increases_during_damped_decay() {
        let p = roll_axis();
        let model = AxisModel::new(&p);
        for dt in [1e-3, 5e-4] {
            let mut s = GimbalState::at_rest(4f64.to_radians());
            let mut e = model.energy(s.theta, s.theta_dot);
            for _ in 0..(3.0 / dt) as usize {
                s = step(&p, s, 0.0, dt).unwrap();
                let e_next = model.energy(s.theta, s.theta_dot);
                assert!(e_next <= e * (1.0 + 1e-14), "energy rose from {e} to {e_next}");
                e = e_next;
            }
        }
    }

    #[test]
    fn zero_torque_stays_at_rest() {
        let params = AxisPair::new(roll_axis(), roll_axis());
        let run = simulate_run(&params, |_| 0.0, |_| 0.0, 1.0, 1e-3).unwrap();
        assert_eq!(run.pitch.len(), 1001);
        assert!(run.pitch.theta.iter().chain(&run.roll.theta).all(|&x| x == 0.0));
    }

    #[test]
    fn constant_torque_settles_to_static_deflection() {
        let p = roll_axis();
        let params = AxisPair::new(p, p);
        let run = simulate_run(&params, |_| 1.0, |_| -2.0, 40.0, 1e-3).unwrap();
        let expected = static_deflection(&p, 1.0, 10.0).angle_rad;
        let got = run.pitch.final_theta().unwrap();
        assert!((got / expected - 1.0).abs() < 0.005);
        let got_roll = run.roll.final_theta().unwrap();
        assert!((got_roll / (-2.0 * expected) - 1.0).abs() < 0.005);
    }

    #[test]
    fn damping_changes_only_the_transient() {
        let p = roll_axis();
        let stiff = GimbalParams {
            damping: 2.0 * p.damping,
            ..p
        };
        let run = |q: GimbalParams| {
            integrate_axis(&q, GimbalState::default(), |_| 1.5, 120_000, 1e-3, 120_000)
                .unwrap()
                .final_theta()
                .unwrap()
        };
        assert_abs_diff_eq!(run(p), run(stiff), epsilon = 1e-9);
    }

    #[test]
    fn axes_are_independent() {
        let p = roll_axis();
        let params = AxisPair::new(p, p);
        let both = simulate_run(&params, |t| (3.0 * t).sin(), |_| 4.0, 2.0, 1e-3).unwrap();
        let alone = integrate_axis(&p, GimbalState::default(), |t| (3.0 * t).sin(), 2000, 1e-3, 0).unwrap();
        assert_eq!(both.pitch, alone);
    }

    #[test]
    fn flat_decay_from_zero() {
        let tr = step_response(&roll_axis(), 0.0, 2.0, 1e-3).unwrap();
        assert!(tr.theta.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn overdamped_decay_never_crosses_zero() {
        let p = roll_axis();
        assert!(p.decay_rates().is_some());
        let tr = step_response(&p, 3f64.to_radians(), 20.0, 1e-3).unwrap();
        assert!(tr.theta.iter().all(|&x| x > 0.0));
        assert!(tr.theta.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn tuned_decay_reaches_one_over_e_near_time_constant() {
        let p = roll_axis();
        assert_abs_diff_eq!(p.dominant_time_constant().unwrap(), 3.5, epsilon = 1e-9);
        let theta0 = 2f64.to_radians();
        let tr = step_response(&p, theta0, 5.0, 1e-3).unwrap();
        let crossing = tr
            .time
            .iter()
            .zip(&tr.theta)
            .find(|(_, &th)| th <= theta0 / std::f64::consts::E)
            .map(|(t, _)| *t)
            .unwrap();
        assert!((crossing - 3.5).abs() < 0.15, "crossed 1/e at {crossing} s");
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        // On the tuned axis the 1 ms truncation error is already below
        // rounding, so a ringing 20 Hz axis is used to make it visible.
        let p = roll_axis().with_natural_frequency(20.0, 0.1);
        let theta0 = 4f64.to_radians();
        // worst error over a short ringing window against a fine-step reference,
        // compared on the shared 1 ms grid
        let run = |dt: f64| step_response(&p, theta0, 0.5, dt).unwrap().theta;
        let reference = run(1e-3 / 32.0);
        let max_err = |dt: f64| {
            let stride = (1e-3 / dt).round() as usize;
            let theta = run(dt);
            (0..=500).map(|k| (theta[k * stride] - reference[k * 32]).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (max_err(1e-3), max_err(5e-4));
        assert!(fine > 1e-9 * theta0, "error {fine:e} is at rounding level");
        let order = (coarse / fine).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn trajectory_csv_layout() {
        let p = roll_axis();
        let run = simulate_run(&AxisPair::new(p, p), |_| 1.0, |_| 0.5, 0.002, 1e-3).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&run, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t_seconds,theta_pitch_rad,theta_roll_rad,tau_pitch_uNm,tau_roll_uNm\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn interpolation_between_samples() {
        let tr = AxisTrajectory {
            time: vec![0.0, 1.0, 2.0],
            theta: vec![0.0, 2.0, 4.0],
            torque: vec![0.0; 3],
        };
        assert_eq!(tr.theta_at(0.5), 1.0);
        assert_eq!(tr.theta_at(-1.0), 0.0);
        assert_eq!(tr.theta_at(5.0), 4.0);
        assert_eq!(tr.theta_at(1.0), 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn zero_is_the_only_unloaded_equilibrium(
            mb in 1.0..200.0f64, lb in 1.0..30.0f64, kf in 0.0..200.0f64, lr in 0.0..0.5f64,
        ) {
            let p = GimbalParams {
                counterweight_mass: mb, counterweight_lever: lb, robot_com_offset: lr,
                flexure_stiffness: kf, ..roll_axis()
            };
            prop_assume!(p.validate().is_ok());
            let m = AxisModel::new(&p);
            // restoring torque G·sinθ + k_f·θ has the sign of θ on (0, π/2)
            for i in 1..=200 {
                let theta = i as f64 / 200.0 * FRAC_PI_2 * 0.999;
                let r = m.gravity_stiffness * theta.sin() + m.flexure_stiffness * theta;
                prop_assert!(r > 0.0);
                prop_assert!(m.acceleration(theta, 0.0, 0.0) < 0.0);
                prop_assert!(m.acceleration(-theta, 0.0, 0.0) > 0.0);
            }
        }
    }
}
