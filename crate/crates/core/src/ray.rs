//! Ray-optics predictions: the factorized correlation function, correlation
//! apertures and the image locus.
//!
//! Aperture radii are expressed in the `rho_s`-free units of the detector
//! plane (mm on the sensor).

use crate::config::{ObjectMask, OpticalConfig, PupilFunction, SourceProfile};
use crate::math::{abs, sqrt};
use crate::{Error, Point, Result};

fn combine(ca: f64, pa: Point, cb: f64, pb: Point) -> Point {
    [ca * pa[0] + cb * pb[0], ca * pa[1] + cb * pb[1]]
}

/// Ray-optics correlation `|A|^4 |P|^2 |P|^2 |S|^2` at `(rho_a, rho_b)`.
pub fn gamma_ray(
    rho_a: Point,
    rho_b: Point,
    mask: &ObjectMask,
    cfg: &OpticalConfig,
    pupil: &PupilFunction,
    source: &SourceProfile,
) -> Result<f64> {
    let dz = cfg.delta_z;
    if dz == 0.0 {
        return Err(Error::InvalidConfig(alloc::vec![crate::config::ConfigIssue::DeltaZZero]));
    }
    let md = cfg.m_delta_z();
    let (z, za, zb, zo, zs) = (mask.z, cfg.z_a, cfg.z_b, cfg.object_distance, cfg.z_sigma);
    let obj = combine((zb - z) / md, rho_a, -(za - z) / md, rho_b);
    let lens1 = combine((zo + dz) / md, rho_a, -zo / md, rho_b);
    let lens2 = combine(zo / md, rho_a, -(zo - dz) / md, rho_b);
    let src = combine((zb - zs) / md, rho_a, -(za - zs) / md, rho_b);
    let a = mask.transmission(obj);
    let p1 = pupil.value(lens1);
    let p2 = pupil.value(lens2);
    let s = source.intensity(src);
    Ok(a * a * a * a * p1 * p1 * p2 * p2 * s * s)
}

/// Which correlation aperture is smallest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Limiting {
    LensA,
    LensB,
    Source,
}

impl Limiting {
    pub fn name(self) -> &'static str {
        match self {
            Limiting::LensA => "lens_a",
            Limiting::LensB => "lens_b",
            Limiting::Source => "source",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApertureRadii {
    pub ca_lens_a: f64,
    pub ca_lens_b: f64,
    pub ca_source: f64,
    pub limiting: Limiting,
}

impl ApertureRadii {
    /// Collects the three radii and tags the smallest.
    pub fn new(ca_lens_a: f64, ca_lens_b: f64, ca_source: f64) -> Self {
        let mut r = ApertureRadii { ca_lens_a, ca_lens_b, ca_source, limiting: Limiting::Source };
        r.limiting = limiting_aperture(&r).0;
        r
    }

    pub fn compute(cfg: &OpticalConfig, pupil: &PupilFunction, source: &SourceProfile) -> Result<Self> {
        let (a, b) = ca_lens(cfg, pupil);
        Ok(Self::new(a, b, ca_source(cfg, source)?))
    }

    pub fn radius(&self, which: Limiting) -> f64 {
        match which {
            Limiting::LensA => self.ca_lens_a,
            Limiting::LensB => self.ca_lens_b,
            Limiting::Source => self.ca_source,
        }
    }

    pub fn limiting_radius(&self) -> f64 {
        self.radius(self.limiting)
    }
}

/// Lens correlation apertures of both arms. The pupil radius sets the
/// numerical aperture as `r_l / z_o`.
pub fn ca_lens(cfg: &OpticalConfig, pupil: &PupilFunction) -> (f64, f64) {
    let na = pupil.radius / cfg.object_distance;
    let md = abs(cfg.m_delta_z());
    let u = cfg.delta_z / cfg.object_distance;
    let a = na * md / sqrt((1.0 + u) * (1.0 + u) + 1.0);
    let b = na * md / sqrt((1.0 - u) * (1.0 - u) + 1.0);
    (a, b)
}

/// Source correlation aperture.
pub fn ca_source(cfg: &OpticalConfig, source: &SourceProfile) -> Result<f64> {
    let zs = cfg.z_sigma;
    let ub = cfg.z_b / zs - 1.0;
    let ua = cfg.z_a / zs - 1.0;
    let den = sqrt(ub * ub + ua * ua);
    if !(den > 0.0) {
        return Err(Error::SourceConjugateToBoth);
    }
    Ok(source.r_sigma / zs * abs(cfg.m_delta_z()) / den)
}

/// Smallest radius with ties resolved as source, then lens B, then lens A.
pub fn limiting_aperture(r: &ApertureRadii) -> (Limiting, f64) {
    let mut best = (Limiting::Source, r.ca_source);
    for (tag, v) in [(Limiting::LensB, r.ca_lens_b), (Limiting::LensA, r.ca_lens_a)] {
        if v < best.1 {
            best = (tag, v);
        }
    }
    best
}

/// Coefficients `(c_a, c_b)` such that the object coordinate imaged at
/// `(rho_a, rho_b)` is `c_a rho_a + c_b rho_b` for an object at `z`.
pub fn image_locus(z: f64, cfg: &OpticalConfig) -> Result<(f64, f64)> {
    if cfg.delta_z == 0.0 {
        return Err(Error::InvalidConfig(alloc::vec![crate::config::ConfigIssue::DeltaZZero]));
    }
    let md = cfg.m_delta_z();
    Ok(((cfg.z_b - z) / md, -(cfg.z_a - z) / md))
}
