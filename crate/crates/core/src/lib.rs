//! A virtual testbench for a flexured-gimbal torque/force sensor carrying a
//! sub-gram flapping-wing robot.
//!
//! The crate simulates the whole measurement chain: drive waveforms
//! ([`signalgen`]), a ground-truth robot ([`firmodel`]), the gimbal dynamics
//! ([`gimbalsim`]), motion capture and balance read-outs
//! ([`virtualsensors`]), sensor calibration ([`calibkit`]), the experiment
//! protocols ([`mapper`]) and the statistics computed on their output
//! ([`analysis`]). [`scenario`] and [`pipeline`] tie them together behind the
//! command-line tool.
//!
//! Configuration files and reports use µNm, mg, mm and degrees; all dynamics
//! are integrated in SI units.

pub mod analysis;
pub mod calibkit;
pub mod error;
pub mod firmodel;
pub mod gimbalsim;
pub mod mapper;
pub mod pipeline;
pub mod scenario;
pub mod signalgen;
pub mod units;
pub mod virtualsensors;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// One rotational axis of the gimbal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Pitch,
    Roll,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::Pitch, Axis::Roll];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Pitch => "pitch",
            Axis::Roll => "roll",
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A value held separately for the pitch and roll axes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisPair<T> {
    pub pitch: T,
    pub roll: T,
}

impl<T> AxisPair<T> {
    pub fn new(pitch: T, roll: T) -> Self {
        Self { pitch, roll }
    }

    pub fn get(&self, axis: Axis) -> &T {
        match axis {
            Axis::Pitch => &self.pitch,
            Axis::Roll => &self.roll,
        }
    }

    pub fn get_mut(&mut self, axis: Axis) -> &mut T {
        match axis {
            Axis::Pitch => &mut self.pitch,
            Axis::Roll => &mut self.roll,
        }
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> AxisPair<U> {
        AxisPair {
            pitch: f(self.pitch),
            roll: f(self.roll),
        }
    }

    pub fn as_ref(&self) -> AxisPair<&T> {
        AxisPair {
            pitch: &self.pitch,
            roll: &self.roll,
        }
    }

    pub fn try_map<U, E>(self, mut f: impl FnMut(Axis, T) -> Result<U, E>) -> Result<AxisPair<U>, E> {
        Ok(AxisPair {
            pitch: f(Axis::Pitch, self.pitch)?,
            roll: f(Axis::Roll, self.roll)?,
        })
    }
}
