//! Ready-made setups.
//!
//! Both presets share the lens (f = 75 mm imaging z_o = 275 mm at M = -0.375),
//! the planes z_a = 345 mm and z_b = 293 mm, a source 600 mm from the lens with
//! sigma = 1.02 mm and r_sigma = 1.44 mm, a 532 nm wavelength and a 15 us
//! coherence time. The object-side NA, the source distance and the lens
//! distances are assumptions consistent with the reported aperture radii, not
//! measured values.

use crate::config::{AcquisitionConfig, OpticalConfig, Roi, Setup, SourceProfile};

pub const FOCAL_LENGTH: f64 = 75.0;
pub const IMAGE_DISTANCE: f64 = 103.125;
pub const Z_A: f64 = 345.0;
pub const Z_B: f64 = 293.0;
pub const Z_SIGMA: f64 = 600.0;
pub const WAVELENGTH_NM: f64 = 532.0;
pub const SIGMA: f64 = 1.02;
pub const R_SIGMA: f64 = 1.44;
pub const COHERENCE_TIME_US: f64 = 15.0;
/// Full-resolution frame rate of the sensor (frames/s).
pub const FRAME_RATE: f64 = 97_700.0;

fn source() -> SourceProfile {
    SourceProfile::new(SIGMA, R_SIGMA / SIGMA, COHERENCE_TIME_US)
}

fn optics(na: f64, pitch_um: f64) -> OpticalConfig {
    OpticalConfig::from_lens(FOCAL_LENGTH, IMAGE_DISTANCE, na, Z_A, Z_B, Z_SIGMA, WAVELENGTH_NM, pitch_um)
        .expect("preset lens has a real conjugate")
}

fn acquisition(width: usize, height: usize, n_frames: u64) -> AcquisitionConfig {
    AcquisitionConfig {
        n_frames,
        frame_rate: FRAME_RATE,
        gate_time_us: 10.0,
        width,
        height,
        binning: 1,
        roi_a: Roi::full(width, height),
        roi_b: Roi::full(width, height),
        seed: 1,
    }
}

/// Geometry matching the published aperture radii: NA_o = 0.05 and two
/// 256 x 256 arms of 16.38 um pixels.
pub fn paper_like() -> Setup {
    Setup { optics: optics(0.05, 16.38), source: source(), acquisition: acquisition(256, 256, 10_000) }
}

/// Desk-scale simulation setup: NA_o = 0.02, 8 um pixels, 128 rows per arm
/// and 32 columns of independent speckle along the slits.
pub fn desk() -> Setup {
    Setup { optics: optics(0.02, 8.0), source: source(), acquisition: acquisition(32, 128, 10_000) }
}

/// Named preset lookup.
pub fn by_name(name: &str) -> Option<Setup> {
    match name {
        "paper-like" | "paper_like" => Some(paper_like()),
        "desk" => Some(desk()),
        _ => None,
    }
}
