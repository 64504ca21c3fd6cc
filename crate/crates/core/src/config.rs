//! Geometry, source and acquisition configuration shared by every stage.
//!
//! All axial coordinates (`z`, `z_a`, `z_b`, `z_sigma`) are distances from the
//! lens plane. The plenoptic baseline is `delta_z = z_a - z_b`; every formula
//! that needs it reads [`OpticalConfig::delta_z`].

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::math::abs;
use crate::{Error, Point, Result};

/// Relative tolerance of the thin-lens consistency check.
pub const THIN_LENS_RTOL: f64 = 1e-9;

/// Solves the thin-lens equation `1/z_o + 1/z_i = 1/f` for the conjugate
/// distance. The relation is symmetric, so the same call maps `z_o -> z_i`.
pub fn thin_lens_solve(focal_length: f64, distance: f64) -> Result<f64> {
    if !(focal_length > 0.0) || !(distance > focal_length) {
        return Err(Error::NoRealConjugate { focal_length, image_distance: distance });
    }
    Ok(1.0 / (1.0 / focal_length - 1.0 / distance))
}

/// Lens, plane and detector geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalConfig {
    /// Focal length `f` (mm).
    pub focal_length: f64,
    /// Lens-to-sensor distance `z_i` (mm).
    pub image_distance: f64,
    /// Conjugate object distance `z_o` (mm).
    pub object_distance: f64,
    /// Transverse magnification `M = -z_i / z_o` (derived).
    pub magnification: f64,
    /// Object-side numerical aperture.
    pub na_object: f64,
    /// Distance of plane O_a from the lens (mm).
    pub z_a: f64,
    /// Distance of plane O_b from the lens (mm).
    pub z_b: f64,
    /// Distance of the source plane from the lens (mm).
    pub z_sigma: f64,
    /// Wavelength (nm).
    pub wavelength_nm: f64,
    /// Detector pixel pitch (um).
    pub pixel_pitch_um: f64,
    /// `z_a - z_b` (mm, derived).
    pub delta_z: f64,
}

impl OpticalConfig {
    /// Builds a configuration from the lens focal length and sensor distance,
    /// deriving `z_o`, `M` and `delta_z`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_lens(
        focal_length: f64,
        image_distance: f64,
        na_object: f64,
        z_a: f64,
        z_b: f64,
        z_sigma: f64,
        wavelength_nm: f64,
        pixel_pitch_um: f64,
    ) -> Result<Self> {
        let object_distance = thin_lens_solve(focal_length, image_distance)?;
        let mut cfg = OpticalConfig {
            focal_length,
            image_distance,
            object_distance,
            magnification: 0.0,
            na_object,
            z_a,
            z_b,
            z_sigma,
            wavelength_nm,
            pixel_pitch_um,
            delta_z: 0.0,
        };
        cfg.derive();
        Ok(cfg)
    }

    fn derive(&mut self) {
        self.magnification = -self.image_distance / self.object_distance;
        self.delta_z = self.z_a - self.z_b;
    }

    /// Wavelength in millimetres.
    pub fn wavelength_mm(&self) -> f64 {
        self.wavelength_nm * 1e-6
    }

    /// Wavenumber `k = 2 pi / lambda` (rad/mm).
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength_mm()
    }

    /// Pixel pitch in millimetres.
    pub fn pixel_pitch_mm(&self) -> f64 {
        self.pixel_pitch_um * 1e-3
    }

    /// Effective lens radius `r_l = NA_o z_o` (mm).
    pub fn lens_radius(&self) -> f64 {
        self.na_object * self.object_distance
    }

    /// `M * delta_z`, the common denominator of the plenoptic formulas.
    pub fn m_delta_z(&self) -> f64 {
        self.magnification * self.delta_z
    }

    /// Focused plane of an arm.
    pub fn arm_plane(&self, arm: crate::Arm) -> f64 {
        match arm {
            crate::Arm::A => self.z_a,
            crate::Arm::B => self.z_b,
        }
    }

    /// Optical distance between an object at `z` and the lens along `arm`:
    /// `z - z_j + z_o`.
    pub fn arm_path(&self, z: f64, arm: crate::Arm) -> f64 {
        z - self.arm_plane(arm) + self.object_distance
    }
}

/// Gaussian intensity profile of the chaotic source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceProfile {
    /// Standard deviation of the Gaussian intensity (mm).
    pub sigma: f64,
    /// Aperture optimization factor.
    pub c: f64,
    /// Effective radius `c * sigma` (mm, derived).
    pub r_sigma: f64,
    /// Coherence time (us).
    pub coherence_time_us: f64,
}

impl SourceProfile {
    pub fn new(sigma: f64, c: f64, coherence_time_us: f64) -> Self {
        SourceProfile { sigma, c, r_sigma: c * sigma, coherence_time_us }
    }

    /// Relative intensity `S(rho_s)`, unity on axis.
    pub fn intensity(&self, p: Point) -> f64 {
        crate::math::exp(-crate::math::norm2(p) / (2.0 * self.sigma * self.sigma))
    }
}

/// Which way the slits run. Horizontal slits (`AlongX`) modulate the `y`
/// coordinate, which is the axis used by one-dimensional models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlitOrientation {
    AlongX,
    AlongY,
}

/// A group of equal, evenly spaced slits centred on `center_um`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlitGroup {
    pub count: usize,
    pub width_um: f64,
    /// Centre-to-centre distance of neighbouring slits.
    pub spacing_um: f64,
    pub orientation: SlitOrientation,
    /// Offset of the group centre along the modulated axis.
    pub center_um: f64,
}

impl SlitGroup {
    /// Slit centres along the modulated axis (mm).
    pub fn centers_mm(&self) -> Vec<f64> {
        let n = self.count as f64;
        (0..self.count)
            .map(|i| (self.center_um + (i as f64 - (n - 1.0) / 2.0) * self.spacing_um) * 1e-3)
            .collect()
    }

    /// Centres of the opaque gaps between neighbouring slits (mm).
    pub fn gaps_mm(&self) -> Vec<f64> {
        let c = self.centers_mm();
        c.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Half-extent of the transmissive support around the group centre (mm).
    pub fn half_extent_mm(&self) -> f64 {
        ((self.count as f64 - 1.0) * self.spacing_um + self.width_um) * 0.5e-3
    }
}

/// A transmission raster sampled on a regular grid centred on the axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub nx: usize,
    pub ny: usize,
    pub pitch_um: f64,
    /// Row-major (`y` outer) transmission values in `[0, 1]`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskKind {
    Slits(SlitGroup),
    Raster(Raster),
    /// Fully transmissive (`A = 1`).
    Open,
}

/// Planar transmissive object `A(rho_o)` at axial position `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    pub kind: MaskKind,
    pub z: f64,
}

impl ObjectMask {
    pub fn slits(z: f64, group: SlitGroup) -> Self {
        ObjectMask { kind: MaskKind::Slits(group), z }
    }

    /// Double slit of slits `width_um` wide spaced `spacing_um` apart along `y`.
    pub fn double_slit(z: f64, width_um: f64, spacing_um: f64) -> Self {
        Self::slits(
            z,
            SlitGroup {
                count: 2,
                width_um,
                spacing_um,
                orientation: SlitOrientation::AlongX,
                center_um: 0.0,
            },
        )
    }

    /// Transmission at a transverse point.
    pub fn transmission(&self, p: Point) -> f64 {
        match &self.kind {
            MaskKind::Open => 1.0,
            MaskKind::Slits(g) => {
                let u = match g.orientation {
                    SlitOrientation::AlongX => p[1],
                    SlitOrientation::AlongY => p[0],
                };
                let half = g.width_um * 0.5e-3;
                if g.centers_mm().iter().any(|c| abs(u - c) <= half) {
                    1.0
                } else {
                    0.0
                }
            }
            MaskKind::Raster(r) => {
                let pitch = r.pitch_um * 1e-3;
                let fx = p[0] / pitch + r.nx as f64 / 2.0;
                let fy = p[1] / pitch + r.ny as f64 / 2.0;
                if fx < 0.0 || fy < 0.0 {
                    return 0.0;
                }
                let (ix, iy) = (fx as usize, fy as usize);
                if ix >= r.nx || iy >= r.ny {
                    return 0.0;
                }
                r.values[iy * r.nx + ix]
            }
        }
    }

    /// Half-width of the region outside which the mask is opaque along the
    /// modulated axis, if bounded.
    pub fn support_half_width(&self) -> Option<f64> {
        match &self.kind {
            MaskKind::Open => None,
            MaskKind::Slits(g) => Some(abs(g.center_um * 1e-3) + g.half_extent_mm()),
            MaskKind::Raster(r) => Some(0.5e-3 * r.pitch_um * r.nx.max(r.ny) as f64),
        }
    }

    pub fn validate(&self) -> core::result::Result<(), Vec<ConfigIssue>> {
        let mut issues = Vec::new();
        if !(self.z > 0.0) {
            issues.push(ConfigIssue::MaskPosition);
        }
        match &self.kind {
            MaskKind::Raster(r) => {
                if r.values.len() != r.nx * r.ny {
                    issues.push(ConfigIssue::RasterShape);
                }
                if r.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    issues.push(ConfigIssue::TransmissionRange);
                }
                if !(r.pitch_um > 0.0) {
                    issues.push(ConfigIssue::RasterShape);
                }
            }
            MaskKind::Slits(g) => {
                if g.count == 0 || !(g.width_um > 0.0) || (g.count > 1 && !(g.spacing_um > g.width_um * 0.0)) {
                    issues.push(ConfigIssue::SlitGeometry);
                }
            }
            MaskKind::Open => {}
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PupilShape {
    CircularBinary,
    /// Piecewise-linear transmission over `(r / radius, value)` knots,
    /// sorted by radius; zero beyond the last knot.
    Radial(Vec<(f64, f64)>),
}

/// Lens pupil `P(rho_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PupilFunction {
    pub radius: f64,
    pub shape: PupilShape,
}

impl PupilFunction {
    pub fn circular(radius: f64) -> Self {
        PupilFunction { radius, shape: PupilShape::CircularBinary }
    }

    /// Circular pupil of radius `NA_o z_o`.
    pub fn from_config(cfg: &OpticalConfig) -> Self {
        Self::circular(cfg.lens_radius())
    }

    pub fn value(&self, p: Point) -> f64 {
        let r = crate::math::sqrt(crate::math::norm2(p));
        match &self.shape {
            PupilShape::CircularBinary => {
                if r <= self.radius {
                    1.0
                } else {
                    0.0
                }
            }
            PupilShape::Radial(knots) => {
                let u = r / self.radius;
                let Some(last) = knots.last() else { return 0.0 };
                if u > last.0 {
                    return 0.0;
                }
                let mut prev = (0.0, knots[0].1);
                for &(ku, kv) in knots {
                    if u <= ku {
                        let span = ku - prev.0;
                        if span <= 0.0 {
                            return kv;
                        }
                        let t = (u - prev.0) / span;
                        return prev.1 + t * (kv - prev.1);
                    }
                    prev = (ku, kv);
                }
                last.1
            }
        }
    }
}

/// Rectangular region of interest on one arm, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn full(width: usize, height: usize) -> Self {
        Roi { x: 0, y: 0, width, height }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x + self.width <= width && self.y + self.height <= height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    /// Frame count `N_t`.
    pub n_frames: u64,
    /// Frames per second.
    pub frame_rate: f64,
    /// Effective exposure per frame (us).
    pub gate_time_us: f64,
    /// Pixels per arm.
    pub width: usize,
    pub height: usize,
    /// Spatial bin factor per axis.
    pub binning: usize,
    pub roi_a: Roi,
    pub roi_b: Roi,
    pub seed: u64,
}

impl AcquisitionConfig {
    /// Acquisition time of one correlation image, `N_t / R` (s).
    pub fn image_time_s(&self) -> f64 {
        self.n_frames as f64 / self.frame_rate
    }

    /// Number of coherence cells integrated per gate, `max(1, round(T_gate / t_ch))`.
    pub fn cells_per_gate(&self, source: &SourceProfile) -> usize {
        crate::spad::cells_per_gate(self.gate_time_us, source.coherence_time_us)
    }
}

/// Everything [`validate_config`] checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub optics: OpticalConfig,
    pub source: SourceProfile,
    pub acquisition: AcquisitionConfig,
}

/// Output of [`validate_config`]: a setup whose derived fields are populated
/// and whose invariants hold.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSetup {
    pub optics: OpticalConfig,
    pub source: SourceProfile,
    pub acquisition: AcquisitionConfig,
    /// `N_t / R` (s).
    pub image_time_s: f64,
}

impl ValidatedSetup {
    pub fn into_setup(self) -> Setup {
        Setup { optics: self.optics, source: self.source, acquisition: self.acquisition }
    }
}

/// A single violated invariant. [`ConfigIssue::code`] is the stable
/// machine-readable name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigIssue {
    FocalLength,
    NoRealConjugate,
    ThinLensMismatch,
    NumericalAperture,
    DeltaZZero,
    SourceNotBehindScene,
    Wavelength,
    PixelPitch,
    SourceSigma,
    SourceFactor,
    CoherenceTime,
    TooFewFrames,
    FrameRate,
    GateTime,
    FrameSize,
    Binning,
    RoiOutOfFrame,
    RoiMismatch,
    BinningDoesNotDivideRoi,
    MaskPosition,
    TransmissionRange,
    RasterShape,
    SlitGeometry,
}

impl ConfigIssue {
    pub fn code(self) -> &'static str {
        use ConfigIssue::*;
        match self {
            FocalLength => "focal_length<=0",
            NoRealConjugate => "z_i<=f",
            ThinLensMismatch => "thin_lens_mismatch",
            NumericalAperture => "na_object_out_of_range",
            DeltaZZero => "delta_z=0",
            SourceNotBehindScene => "z_sigma<=max(z_a,z_b)",
            Wavelength => "wavelength<=0",
            PixelPitch => "pixel_pitch<=0",
            SourceSigma => "sigma<=0",
            SourceFactor => "c<=0",
            CoherenceTime => "t_ch<=0",
            TooFewFrames => "n_frames<2",
            FrameRate => "frame_rate<=0",
            GateTime => "gate_time<=0",
            FrameSize => "frame_size_zero",
            Binning => "binning<1",
            RoiOutOfFrame => "roi_out_of_frame",
            RoiMismatch => "roi_shape_mismatch",
            BinningDoesNotDivideRoi => "binning_does_not_divide_roi",
            MaskPosition => "mask_z<=0",
            TransmissionRange => "transmission_out_of_[0,1]",
            RasterShape => "raster_shape",
            SlitGeometry => "slit_geometry",
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Checks every invariant of the optical, source and acquisition types and
/// populates the derived fields. All violations are returned, not only the
/// first. Validating an already validated setup changes nothing.
pub fn validate_config(setup: Setup) -> core::result::Result<ValidatedSetup, Vec<ConfigIssue>> {
    let Setup { mut optics, mut source, acquisition } = setup;
    let mut issues = Vec::new();
    let o = &mut optics;

    if !(o.focal_length > 0.0) {
        issues.push(ConfigIssue::FocalLength);
    } else if !(o.image_distance > o.focal_length) {
        issues.push(ConfigIssue::NoRealConjugate);
    } else {
        let lhs = 1.0 / o.object_distance + 1.0 / o.image_distance;
        let rhs = 1.0 / o.focal_length;
        if !(abs(lhs - rhs) <= THIN_LENS_RTOL * rhs) {
            issues.push(ConfigIssue::ThinLensMismatch);
        }
    }
    if o.object_distance != 0.0 {
        o.derive();
    }
    if !(o.na_object > 0.0 && o.na_object < 1.0) {
        issues.push(ConfigIssue::NumericalAperture);
    }
    if !(o.delta_z != 0.0) {
        issues.push(ConfigIssue::DeltaZZero);
    }
    if !(o.z_sigma > o.z_a.max(o.z_b)) {
        issues.push(ConfigIssue::SourceNotBehindScene);
    }
    if !(o.wavelength_nm > 0.0) {
        issues.push(ConfigIssue::Wavelength);
    }
    if !(o.pixel_pitch_um > 0.0) {
        issues.push(ConfigIssue::PixelPitch);
    }

    if !(source.sigma > 0.0) {
        issues.push(ConfigIssue::SourceSigma);
    }
    if !(source.c > 0.0) {
        issues.push(ConfigIssue::SourceFactor);
    }
    if !(source.coherence_time_us > 0.0) {
        issues.push(ConfigIssue::CoherenceTime);
    }
    source.r_sigma = source.c * source.sigma;

    let a = &acquisition;
    if a.n_frames < 2 {
        issues.push(ConfigIssue::TooFewFrames);
    }
    if !(a.frame_rate > 0.0) {
        issues.push(ConfigIssue::FrameRate);
    }
    if !(a.gate_time_us > 0.0) {
        issues.push(ConfigIssue::GateTime);
    }
    if a.width == 0 || a.height == 0 {
        issues.push(ConfigIssue::FrameSize);
    }
    if a.binning < 1 {
        issues.push(ConfigIssue::Binning);
    }
    if !a.roi_a.fits(a.width, a.height) || !a.roi_b.fits(a.width, a.height) {
        issues.push(ConfigIssue::RoiOutOfFrame);
    }
    if a.binning >= 1 {
        let divides = |r: &Roi| r.width % a.binning == 0 && r.height % a.binning == 0;
        if !divides(&a.roi_a) || !divides(&a.roi_b) {
            issues.push(ConfigIssue::BinningDoesNotDivideRoi);
        }
    }

    if issues.is_empty() {
        let image_time_s = acquisition.image_time_s();
        Ok(ValidatedSetup { optics, source, acquisition, image_time_s })
    } else {
        Err(issues)
    }
}

/// Convenience wrapper turning the issue list into an [`Error`].
pub fn validate(setup: Setup) -> Result<ValidatedSetup> {
    validate_config(setup).map_err(Error::InvalidConfig)
}
