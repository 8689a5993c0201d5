//! Unit conversions between the interface units used in configuration files
//! and reports (µNm, mg, mm, degrees) and the SI units used internally.

use std::f64::consts::PI;

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;

pub const UNM_PER_NM: f64 = 1e6;
pub const KG_PER_MG: f64 = 1e-6;
pub const M_PER_MM: f64 = 1e-3;
/// 1 mg·mm² expressed in kg·m².
pub const KG_M2_PER_MG_MM2: f64 = 1e-12;

#[inline]
pub fn unm_to_nm(torque_unm: f64) -> f64 {
    torque_unm / UNM_PER_NM
}

#[inline]
pub fn nm_to_unm(torque_nm: f64) -> f64 {
    torque_nm * UNM_PER_NM
}

#[inline]
pub fn mg_to_kg(mass_mg: f64) -> f64 {
    mass_mg * KG_PER_MG
}

#[inline]
pub fn mm_to_m(length_mm: f64) -> f64 {
    length_mm * M_PER_MM
}

/// Converts a rotational stiffness from per-radian to per-degree.
#[inline]
pub fn per_rad_to_per_deg(stiffness_per_rad: f64) -> f64 {
    stiffness_per_rad * PI / 180.0
}

#[inline]
pub fn per_deg_to_per_rad(stiffness_per_deg: f64) -> f64 {
    stiffness_per_deg * 180.0 / PI
}

/// Weight of `mass_mg` at gravity `g`, in newtons.
#[inline]
pub fn weight_n(mass_mg: f64, g: f64) -> f64 {
    mg_to_kg(mass_mg) * g
}
