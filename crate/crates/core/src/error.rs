use alloc::string::String;
use alloc::vec::Vec;

use crate::config::ConfigIssue;
use crate::wave::Leg;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Every failure the algorithms can report.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("no real conjugate plane: image distance {image_distance} mm must exceed focal length {focal_length} mm")]
    NoRealConjugate { focal_length: f64, image_distance: f64 },

    #[error("invalid configuration: {}", summarize(.0))]
    InvalidConfig(Vec<ConfigIssue>),

    #[error("object at arm conjugate singularity (z - z_j + z_o = 0)")]
    ArmSingularity,

    #[error("grid violates the Nyquist guard on the {leg} leg: phase step {phase_step:.3} rad between adjacent samples")]
    Nyquist { leg: Leg, phase_step: f64 },

    #[error("object behind source: mask at z = {z} mm, source at {z_sigma} mm")]
    ObjectBehindSource { z: f64, z_sigma: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient statistics: {n_t} frame(s) accumulated, at least 2 required")]
    InsufficientStatistics { n_t: u64 },

    #[error("accumulator could overflow: {0}")]
    Overflow(String),

    #[error("singular refocus transform (z_s = z = {z} mm)")]
    SingularRefocus { z: f64 },

    #[error("aperture smaller than one rho_s sample (radius {radius} mm, pitch {pitch} mm)")]
    EmptyIntegrationDomain { radius: f64, pitch: f64 },

    #[error("source conjugate to both planes (zero denominator in source correlation aperture)")]
    SourceConjugateToBoth,

    #[error("empty region")]
    EmptyRegion,

    #[error("visibility undefined: max + min = {0} is not positive")]
    NonPositiveDenominator(f64),

    #[error("degenerate fit input: {0}")]
    DegenerateFit(&'static str),

    #[error("feature range does not bracket the visibility threshold (v(min) = {v_min:.4}, v(max) = {v_max:.4})")]
    NonBracketing { v_min: f64, v_max: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn summarize(issues: &[ConfigIssue]) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    for (i, issue) in issues.iter().enumerate() {
        if i > 0 {
            s.push_str("; ");
        }
        let _ = write!(s, "{issue}");
    }
    s
}
