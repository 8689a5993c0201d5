//! Runs the code samples in the user guide as doc-tests, one module per chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/drive-signals.md")]
pub mod drive_signals {}
#[doc = include_str!("../../../book/src/gimbal-model.md")]
pub mod gimbal_model {}
#[doc = include_str!("../../../book/src/sensors-calibration.md")]
pub mod sensors_calibration {}
#[doc = include_str!("../../../book/src/sweeps-trims.md")]
pub mod sweeps_trims {}
#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}
#[doc = include_str!("../../../book/src/scenarios-cli.md")]
pub mod scenarios_cli {}
