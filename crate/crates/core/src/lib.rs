//! Correlation plenoptic imaging with chaotic light and binary single-photon frames.
//!
//! The crate is `no_std` (with `alloc`) and carries every algorithm of the
//! pipeline: the optical configuration and thin-lens bookkeeping, a Fresnel
//! wave-optics model of the two-arm setup with an analytic correlation oracle
//! and Monte-Carlo chaotic fields, the ray-optics predictions, the SPAD
//! binary-frame model, the streaming correlator, refocusing, and image
//! analysis. File formats, the command-line pipeline and thread pools live in
//! the `cpi` companion crate.
//!
//! Units are fixed across the crate: millimetres for axial and transverse
//! geometry, micrometres for pixel pitch and slit features, microseconds for
//! times and nanometres for the wavelength.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod analysis;
pub mod config;
pub mod correlator;
mod error;
mod math;
pub mod presets;
pub mod ray;
pub mod refocus;
pub mod scene;
pub mod seeds;
pub mod spad;
pub mod wave;

pub use error::{Error, Result};

/// A transverse coordinate `[x, y]` in millimetres.
///
/// One-dimensional models place every sample on the `y` axis (`x = 0`), which
/// is the axis across horizontal slits.
pub type Point = [f64; 2];

/// One of the two detector arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    /// Sensor D_a, conjugate to plane O_a at `z_a`.
    A,
    /// Sensor D_b, conjugate to plane O_b at `z_b`.
    B,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::A, Arm::B];

    pub fn name(self) -> &'static str {
        match self {
            Arm::A => "a",
            Arm::B => "b",
        }
    }
}
