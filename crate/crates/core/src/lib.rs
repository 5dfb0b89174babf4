//! Synthetic 4D-flow super-resolution toolkit.
//!
//! The pipeline runs in this order:
//!
//! * [`phantom`] builds analytic velocity volumes for four flow families,
//! * [`synth`] turns a high-resolution volume into a noisy half-resolution
//!   phase-contrast acquisition via k-space truncation,
//! * [`patch`] cuts paired 12³/24³ training patches and splits them model-wise,
//! * [`tensor`] and [`models`] provide the 3D convolutional networks with
//!   reverse-mode gradients,
//! * [`train`] implements the compartment-balanced loss, Adam, bagging and
//!   stacking,
//! * [`eval`] computes relative speed error, RMSE and regression statistics.
//!
//! Voxel data is always laid out x-fastest: `index = x + nx * (y + ny * z)`.

pub mod eval;
mod fileio;
pub mod models;
pub mod patch;
pub mod phantom;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod volume;

pub use fileio::atomic_write;
