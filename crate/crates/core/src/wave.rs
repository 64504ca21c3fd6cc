//! Fresnel wave-optics model of the two-arm setup.
//!
//! The field at detector sample `d` of arm `j` produced by a source point `s`
//! is `K_j[s, d] = sum_o Q[s, o] A(o) w_o C_j(o) p_j(o, d)`, where `Q` is the
//! source-to-object Fresnel factor, `C_j` the quadratic phase picked up between
//! the object and the lens, and `p_j` the lens-to-detector propagator obtained
//! by quadrature over the pupil. Only object samples with nonzero transmission
//! are kept, so kernels are stored factored as `Q` (source x object) times one
//! `B_j` (object x detector) per arm.
//!
//! For a delta-correlated chaotic source the intensity covariance between the
//! two detectors is `|sum_s S(s) w_s K_a[s, d_a] conj(K_b[s, d_b])|^2`, which
//! [`gamma_analytic`] evaluates directly and [`FieldSampler`] reproduces by
//! Monte Carlo.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{ObjectMask, OpticalConfig, PupilFunction, SourceProfile};
use crate::correlator::CorrelationTensor;
use crate::math::{abs, ceil, cis, dot, norm2, sqrt};
use crate::{seeds, Arm, Error, Point, Result};

/// Grids are sized so that the phase changes by at most `pi / NYQUIST_MARGIN`
/// between neighbouring samples.
pub const NYQUIST_MARGIN: f64 = 1.5;

/// Source samples extend to this many standard deviations.
pub const SOURCE_EXTENT_SIGMAS: f64 = 3.5;

/// A propagation leg checked by the Nyquist guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    SourceToObject,
    ObjectToLens(Arm),
    LensToDetector(Arm),
}

impl fmt::Display for Leg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Leg::SourceToObject => f.write_str("source-to-object"),
            Leg::ObjectToLens(a) => write!(f, "object-to-lens (arm {})", a.name()),
            Leg::LensToDetector(a) => write!(f, "lens-to-detector (arm {})", a.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimensionality {
    /// Samples along `y` only; slit targets are invariant along `x`.
    One,
    /// Square sample lattices in both transverse directions.
    Two,
}

/// Uniform midpoint-rule axis: `samples` cells of width `2 half_width / samples`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub center: f64,
    pub half_width: f64,
    pub samples: usize,
}

impl Axis {
    pub fn new(center: f64, half_width: f64, samples: usize) -> Self {
        Axis { center, half_width, samples }
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_width / self.samples as f64
    }

    pub fn position(&self, i: usize) -> f64 {
        self.center - self.half_width + (i as f64 + 0.5) * self.step()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.samples).map(|i| self.position(i)).collect()
    }

    /// Largest distance of a sample from the optical axis.
    pub fn max_abs(&self) -> f64 {
        abs(self.center) + self.half_width
    }

    fn valid(&self) -> bool {
        self.samples >= 2 && self.half_width > 0.0 && self.half_width.is_finite()
    }
}

/// Detector sampling: `cols x rows` pixels subdivided into `oversample`
/// subsamples per axis. One-dimensional grids use `rows` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorSpec {
    pub cols: usize,
    pub rows: usize,
    pub pitch_mm: f64,
    pub oversample: usize,
}

impl DetectorSpec {
    pub fn line(rows: usize, pitch_mm: f64, oversample: usize) -> Self {
        DetectorSpec { cols: 1, rows, pitch_mm, oversample }
    }

    /// Centre coordinate of pixel `i` on an axis of `n` pixels.
    pub fn pixel_center(&self, i: usize, n: usize) -> f64 {
        (i as f64 + 0.5 - n as f64 / 2.0) * self.pitch_mm
    }

    fn sub_positions(&self, n: usize) -> Vec<f64> {
        let os = self.oversample;
        (0..n * os)
            .map(|k| {
                let (p, u) = (k / os, k % os);
                self.pixel_center(p, n) + ((u as f64 + 0.5) / os as f64 - 0.5) * self.pitch_mm
            })
            .collect()
    }

    /// Half-extent of the sensitive area along `rows`.
    pub fn half_height(&self) -> f64 {
        0.5 * self.rows as f64 * self.pitch_mm
    }
}

/// Sample grids of every integration variable.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub dims: Dimensionality,
    pub source: Axis,
    pub object: Axis,
    pub lens: Axis,
    pub detector: DetectorSpec,
}

/// Switches that select between modelling conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelOptions {
    pub source_distance: SourceDistance,
    /// Include the quadratic phase `exp(i k o^2 / (2 (z - z_j + z_o)))`
    /// accumulated between the object and the lens.
    pub object_curvature: bool,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions { source_distance: SourceDistance::FromObject, object_curvature: true }
    }
}

/// Distance used in the source-to-object Fresnel factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceDistance {
    /// `z_sigma - z`.
    FromObject,
    /// `z_sigma`.
    Absolute,
}

impl KernelOptions {
    fn source_distance(&self, cfg: &OpticalConfig, z: f64) -> f64 {
        match self.source_distance {
            SourceDistance::FromObject => cfg.z_sigma - z,
            SourceDistance::Absolute => cfg.z_sigma,
        }
    }
}

fn lattice(dims: Dimensionality, axis: &Axis) -> Vec<Point> {
    let xs = axis.positions();
    match dims {
        Dimensionality::One => xs.iter().map(|&y| [0.0, y]).collect(),
        Dimensionality::Two => {
            let mut out = Vec::with_capacity(xs.len() * xs.len());
            for &y in &xs {
                for &x in &xs {
                    out.push([x, y]);
                }
            }
            out
        }
    }
}

impl GridSpec {
    pub fn new(dims: Dimensionality, source: Axis, object: Axis, lens: Axis, detector: DetectorSpec) -> Result<Self> {
        for (name, axis) in [("source", &source), ("object", &object), ("lens", &lens)] {
            if !axis.valid() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "{name} axis needs at least 2 samples and a positive extent"
                )));
            }
        }
        if detector.rows == 0 || detector.cols == 0 || detector.oversample == 0 || !(detector.pitch_mm > 0.0) {
            return Err(Error::InvalidArgument("detector needs pixels, a positive pitch and oversample >= 1".into()));
        }
        Ok(GridSpec { dims, source, object, lens, detector })
    }

    /// Chooses sample counts and extents that satisfy the Nyquist guard with
    /// [`NYQUIST_MARGIN`] for an object at `mask.z`.
    pub fn auto(
        dims: Dimensionality,
        cfg: &OpticalConfig,
        pupil: &PupilFunction,
        source: &SourceProfile,
        mask: &ObjectMask,
        detector: DetectorSpec,
        opts: &KernelOptions,
    ) -> Result<Self> {
        let z = mask.z;
        let k = cfg.wavenumber();
        let lim = PI / NYQUIST_MARGIN;
        let lens_r = pupil.radius;
        let mz = abs(cfg.magnification * cfg.object_distance);
        let l_s = abs(opts.source_distance(cfg, z));
        let mut paths = [0.0f64; 2];
        for (p, arm) in paths.iter_mut().zip(Arm::BOTH) {
            let l = cfg.arm_path(z, arm);
            if abs(l) < 1e-12 {
                return Err(Error::ArmSingularity);
            }
            *p = abs(l);
        }
        let l_min = paths[0].min(paths[1]);
        let l_max = paths[0].max(paths[1]);
        let q_max = paths.iter().map(|l| abs(1.0 / l - 1.0 / cfg.object_distance)).fold(0.0, f64::max);

        let d_max = detector.half_height().max(0.5 * detector.cols as f64 * detector.pitch_mm);
        let object_half = match (mask.support_half_width(), dims) {
            (Some(h), _) => h,
            (None, _) => d_max * l_max / mz + 0.05,
        };
        let s_half = SOURCE_EXTENT_SIGMAS * source.sigma;

        let o_step_for = |half: f64| {
            let s = (lim * l_s / (k * (half + s_half))).min(lim * l_min / (k * (half + lens_r)));
            match mask_feature(mask) {
                Some(f) => s.min(f / 10.0),
                None => s,
            }
        };
        let object_half = object_half + o_step_for(object_half);
        let o_step = o_step_for(object_half);
        let s_step = lim * l_s / (k * (object_half + s_half));
        let l_step = (lim / (k * (q_max * lens_r + object_half / l_min + d_max / mz)))
            .min(lim * mz / (k * d_max));
        let d_step = lim * mz / (k * lens_r);
        let oversample = (ceil(detector.pitch_mm / d_step) as usize).max(1);

        let count = |half: f64, step: f64| (ceil(2.0 * half / step) as usize).max(2);
        GridSpec::new(
            dims,
            Axis::new(0.0, s_half, count(s_half, s_step)),
            Axis::new(0.0, object_half, count(object_half, o_step)),
            Axis::new(0.0, lens_r, count(lens_r, l_step)),
            DetectorSpec { oversample: detector.oversample.max(oversample), ..detector },
        )
    }

    pub fn source_points(&self) -> Vec<Point> {
        lattice(self.dims, &self.source)
    }

    pub fn object_points(&self) -> Vec<Point> {
        lattice(self.dims, &self.object)
    }

    pub fn lens_points(&self) -> Vec<Point> {
        lattice(self.dims, &self.lens)
    }

    /// Detector subsample positions, row-major with `y` outermost.
    pub fn detector_points(&self) -> Vec<Point> {
        let ys = self.detector.sub_positions(self.detector.rows);
        match self.dims {
            Dimensionality::One => ys.iter().map(|&y| [0.0, y]).collect(),
            Dimensionality::Two => {
                let xs = self.detector.sub_positions(self.detector.cols);
                let mut out = Vec::with_capacity(xs.len() * ys.len());
                for &y in &ys {
                    for &x in &xs {
                        out.push([x, y]);
                    }
                }
                out
            }
        }
    }

    /// Pixel index of every detector subsample.
    pub fn detector_pixel_map(&self) -> Vec<usize> {
        let os = self.detector.oversample;
        match self.dims {
            Dimensionality::One => (0..self.detector.rows * os).map(|k| k / os).collect(),
            Dimensionality::Two => {
                let (nx, ny) = (self.detector.cols * os, self.detector.rows * os);
                let mut out = Vec::with_capacity(nx * ny);
                for sy in 0..ny {
                    for sx in 0..nx {
                        out.push((sy / os) * self.detector.cols + sx / os);
                    }
                }
                out
            }
        }
    }

    /// Number of detector pixels.
    pub fn pixels(&self) -> usize {
        match self.dims {
            Dimensionality::One => self.detector.rows,
            Dimensionality::Two => self.detector.rows * self.detector.cols,
        }
    }

    /// `[cols, rows]` of the pixel lattice as stored in correlation tensors.
    pub fn pixel_shape(&self) -> [usize; 2] {
        match self.dims {
            Dimensionality::One => [1, self.detector.rows],
            Dimensionality::Two => [self.detector.cols, self.detector.rows],
        }
    }

    fn weight(&self, axis: &Axis) -> f64 {
        match self.dims {
            Dimensionality::One => axis.step(),
            Dimensionality::Two => axis.step() * axis.step(),
        }
    }

    /// Largest phase change between adjacent samples on every leg for an
    /// object at `z`, paired with the leg.
    pub fn phase_steps(&self, cfg: &OpticalConfig, z: f64, opts: &KernelOptions) -> Result<Vec<(Leg, f64)>> {
        let k = cfg.wavenumber();
        let mz = abs(cfg.magnification * cfg.object_distance);
        let (o_max, s_max, l_max) = (self.object.max_abs(), self.source.max_abs(), self.lens.max_abs());
        let d_max = match self.dims {
            Dimensionality::One => self.detector.half_height(),
            Dimensionality::Two => self.detector.half_height().max(0.5 * self.detector.cols as f64 * self.detector.pitch_mm),
        };
        let d_step = self.detector.pitch_mm / self.detector.oversample as f64;
        let l_s = abs(opts.source_distance(cfg, z));
        let mut out = Vec::with_capacity(5);
        out.push((
            Leg::SourceToObject,
            k * (o_max + s_max) / l_s * self.source.step().max(self.object.step()),
        ));
        for arm in Arm::BOTH {
            let l = cfg.arm_path(z, arm);
            if abs(l) < 1e-12 {
                return Err(Error::ArmSingularity);
            }
            let q = abs(1.0 / l - 1.0 / cfg.object_distance);
            let curv = if opts.object_curvature { o_max } else { 0.0 };
            let over_o = k * (l_max + curv) / abs(l) * self.object.step();
            let over_l = k * (q * l_max + o_max / abs(l)) * self.lens.step();
            out.push((Leg::ObjectToLens(arm), over_o.max(over_l)));
            let det = (k * l_max / mz * d_step).max(k * d_max / mz * self.lens.step());
            out.push((Leg::LensToDetector(arm), det));
        }
        Ok(out)
    }

    /// Fails with the first leg whose phase step reaches `pi`.
    pub fn check_nyquist(&self, cfg: &OpticalConfig, z: f64, opts: &KernelOptions) -> Result<()> {
        for (leg, phase_step) in self.phase_steps(cfg, z, opts)? {
            if !(phase_step < PI) {
                return Err(Error::Nyquist { leg, phase_step });
            }
        }
        Ok(())
    }
}

fn mask_feature(mask: &ObjectMask) -> Option<f64> {
    match &mask.kind {
        crate::config::MaskKind::Slits(g) => {
            let gap = if g.count > 1 { g.spacing_um - g.width_um } else { g.width_um };
            Some(g.width_um.min(gap).max(1e-3) * 1e-3)
        }
        crate::config::MaskKind::Raster(r) => Some(r.pitch_um * 1e-3),
        crate::config::MaskKind::Open => None,
    }
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [Complex64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * other`.
    pub fn mul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                axpy(dst, a, other.row(k));
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

#[inline]
fn axpy(dst: &mut [Complex64], a: Complex64, x: &[Complex64]) {
    for (d, &v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// `sum_r w_r x[r, i] y'[r, j]` where `y'` is `y` or its conjugate.
fn transpose_product(x: &CMatrix, w: Option<&[f64]>, y: &CMatrix, conj_y: bool) -> CMatrix {
    assert_eq!(x.rows, y.rows);
    let mut out = CMatrix::zeros(x.cols, y.cols);
    let mut yrow = vec![Complex64::new(0.0, 0.0); y.cols];
    for r in 0..x.rows {
        let wr = w.map_or(1.0, |w| w[r]);
        if wr == 0.0 {
            continue;
        }
        for (d, &v) in yrow.iter_mut().zip(y.row(r)) {
            *d = if conj_y { v.conj() } else { v };
        }
        for (i, &a) in x.row(r).iter().enumerate() {
            let a = a * wr;
            if a.re == 0.0 && a.im == 0.0 {
                continue;
            }
            axpy(out.row_mut(i), a, &yrow);
        }
    }
    out
}

/// Phase `phi_j` of the lens propagator (multiply by `k` for radians):
/// `(1/L - 1/z_o) l^2 / 2 - (o / L - d / (M z_o)) . l` with `L = z - z_j + z_o`.
pub fn propagator_phase(object: Point, lens: Point, detector: Point, z: f64, arm: Arm, cfg: &OpticalConfig) -> Result<f64> {
    let l = cfg.arm_path(z, arm);
    if abs(l) < 1e-12 || cfg.object_distance == 0.0 {
        return Err(Error::ArmSingularity);
    }
    let mz = cfg.magnification * cfg.object_distance;
    let quad = (1.0 / l - 1.0 / cfg.object_distance) * norm2(lens) / 2.0;
    let lin = [object[0] / l - detector[0] / mz, object[1] / l - detector[1] / mz];
    Ok(quad - dot(lin, lens))
}

/// Lens propagator `p_j(o, d)` by midpoint quadrature over the lens grid.
pub fn propagator_p(
    object: Point,
    detector: Point,
    z: f64,
    arm: Arm,
    cfg: &OpticalConfig,
    pupil: &PupilFunction,
    grid: &GridSpec,
) -> Result<Complex64> {
    grid.check_nyquist(cfg, z, &KernelOptions::default())?;
    let k = cfg.wavenumber();
    let w = grid.weight(&grid.lens);
    let mut acc = Complex64::new(0.0, 0.0);
    for l in grid.lens_points() {
        let p = pupil.value(l);
        if p == 0.0 {
            continue;
        }
        acc += cis(k * propagator_phase(object, l, detector, z, arm, cfg)?) * (p * w);
    }
    Ok(acc)
}

/// Kernel `K_j[s, d]` of one arm, materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferKernel {
    pub arm: Arm,
    pub matrix: CMatrix,
    pub source_points: Vec<Point>,
    /// Quadrature weight of one source sample.
    pub source_weight: f64,
    pub pixel_map: Vec<usize>,
    pub pixel_shape: [usize; 2],
    pub pitch_mm: f64,
}

/// Both arms' kernels in factored form for one object.
#[derive(Debug, Clone)]
pub struct KernelPair {
    pub grid: GridSpec,
    pub z: f64,
    pub source_points: Vec<Point>,
    /// `S(s) w_s` per source sample.
    pub source_weights: Vec<f64>,
    /// Object samples with nonzero transmission.
    pub object_points: Vec<Point>,
    /// `Q[s, o]`.
    pub source_to_object: CMatrix,
    /// `B_j[o, d] = A(o) w_o C_j(o) p_j(o, d)`, arm A then arm B.
    pub object_to_detector: [CMatrix; 2],
    /// `sum_o A(o)^2 w_o |p_j(o, d)|^2` per subsample, the image of an
    /// incoherently illuminated object.
    pub incoherent: [Vec<f64>; 2],
    pixel_map: Vec<usize>,
}

/// Builds both arms' kernels for `mask`.
pub fn build_kernels(
    mask: &ObjectMask,
    cfg: &OpticalConfig,
    pupil: &PupilFunction,
    source: &SourceProfile,
    grid: &GridSpec,
    opts: &KernelOptions,
) -> Result<KernelPair> {
    let z = mask.z;
    if !(z < cfg.z_sigma) {
        return Err(Error::ObjectBehindSource { z, z_sigma: cfg.z_sigma });
    }
    grid.check_nyquist(cfg, z, opts)?;
    let k = cfg.wavenumber();
    let mz = cfg.magnification * cfg.object_distance;
    let l_s = opts.source_distance(cfg, z);

    let source_points = grid.source_points();
    let ws = grid.weight(&grid.source);
    let source_weights: Vec<f64> = source_points.iter().map(|&s| source.intensity(s) * ws).collect();

    let wo = grid.weight(&grid.object);
    let mut object_points = Vec::new();
    let mut transmission = Vec::new();
    for o in grid.object_points() {
        let a = mask.transmission(o);
        if a != 0.0 {
            object_points.push(o);
            transmission.push(a);
        }
    }
    let (ns, no) = (source_points.len(), object_points.len());

    let mut q = CMatrix::zeros(ns, no);
    for (i, &s) in source_points.iter().enumerate() {
        for (j, &o) in object_points.iter().enumerate() {
            let r2 = norm2([o[0] - s[0], o[1] - s[1]]);
            q.data[i * no + j] = cis(k * r2 / (2.0 * l_s));
        }
    }

    let lens: Vec<(Point, f64)> = {
        let wl = grid.weight(&grid.lens);
        grid.lens_points()
            .into_iter()
            .filter_map(|l| {
                let p = pupil.value(l);
                (p != 0.0).then_some((l, p * wl))
            })
            .collect()
    };
    let det = grid.detector_points();
    let nd = det.len();
    // Lens-to-detector factor, shared by both arms.
    let mut ed = CMatrix::zeros(lens.len(), nd);
    for (i, (l, _)) in lens.iter().enumerate() {
        for (j, d) in det.iter().enumerate() {
            ed.data[i * nd + j] = cis(k * dot(*l, *d) / mz);
        }
    }

    let mut arms: [CMatrix; 2] = [CMatrix::zeros(no, nd), CMatrix::zeros(no, nd)];
    let mut incoherent = [vec![0.0; nd], vec![0.0; nd]];
    for (ai, arm) in Arm::BOTH.into_iter().enumerate() {
        let lj = cfg.arm_path(z, arm);
        if abs(lj) < 1e-12 {
            return Err(Error::ArmSingularity);
        }
        let qc = 1.0 / lj - 1.0 / cfg.object_distance;
        let mut eo = CMatrix::zeros(no, lens.len());
        for (i, o) in object_points.iter().enumerate() {
            for (j, (l, pw)) in lens.iter().enumerate() {
                eo.data[i * lens.len() + j] = cis(k * (qc * norm2(*l) / 2.0 - dot(*o, *l) / lj)) * *pw;
            }
        }
        let p = eo.mul(&ed);
        let b = &mut arms[ai];
        for (i, o) in object_points.iter().enumerate() {
            let curv = if opts.object_curvature { cis(k * norm2(*o) / (2.0 * lj)) } else { Complex64::new(1.0, 0.0) };
            let f = curv * (transmission[i] * wo);
            let a2 = transmission[i] * transmission[i] * wo;
            for (j, &pv) in p.row(i).iter().enumerate() {
                b.data[i * nd + j] = f * pv;
                incoherent[ai][j] += a2 * pv.norm_sqr();
            }
        }
        if !b.is_finite() {
            return Err(Error::InvalidArgument("kernel has non-finite entries".into()));
        }
    }

    Ok(KernelPair {
        grid: grid.clone(),
        z,
        source_points,
        source_weights,
        object_points,
        source_to_object: q,
        object_to_detector: arms,
        incoherent,
        pixel_map: grid.detector_pixel_map(),
    })
}

fn arm_index(arm: Arm) -> usize {
    match arm {
        Arm::A => 0,
        Arm::B => 1,
    }
}

fn bin_pixels(sub: &[f64], map: &[usize], pixels: usize) -> Vec<f64> {
    let mut out = vec![0.0; pixels];
    for (v, &p) in sub.iter().zip(map) {
        out[p] += v;
    }
    out
}

fn gamma_from_cross(cross: &CMatrix, map: &[usize], pixels: usize) -> Vec<f64> {
    let mut out = vec![0.0; pixels * pixels];
    for da in 0..cross.rows {
        let pa = map[da];
        let dst = &mut out[pa * pixels..(pa + 1) * pixels];
        for (db, c) in cross.row(da).iter().enumerate() {
            dst[map[db]] += c.norm_sqr();
        }
    }
    out
}

impl KernelPair {
    pub fn detector_samples(&self) -> usize {
        self.object_to_detector[0].cols
    }

    pub fn pixels(&self) -> usize {
        self.grid.pixels()
    }

    /// Materializes `K_j = Q B_j`.
    pub fn kernel(&self, arm: Arm) -> TransferKernel {
        let b = &self.object_to_detector[arm_index(arm)];
        let matrix = if self.object_points.is_empty() {
            CMatrix::zeros(self.source_points.len(), b.cols)
        } else {
            self.source_to_object.mul(b)
        };
        TransferKernel {
            arm,
            matrix,
            source_points: self.source_points.clone(),
            source_weight: self.grid.weight(&self.grid.source),
            pixel_map: self.pixel_map.clone(),
            pixel_shape: self.grid.pixel_shape(),
            pitch_mm: self.grid.detector.pitch_mm,
        }
    }

    /// Source cross-spectral density at the object, `Q^T diag(S w) conj(Q)`.
    fn object_coherence(&self) -> CMatrix {
        transpose_product(&self.source_to_object, Some(&self.source_weights), &self.source_to_object, true)
    }

    /// Cross-spectral density between detector subsamples of arm A and B.
    pub fn cross_spectral(&self) -> CMatrix {
        let nd = self.detector_samples();
        if self.object_points.is_empty() {
            return CMatrix::zeros(nd, nd);
        }
        let g = self.object_coherence();
        let mut bconj = self.object_to_detector[1].clone();
        for v in bconj.data.iter_mut() {
            *v = v.conj();
        }
        let h = g.mul(&bconj);
        transpose_product(&self.object_to_detector[0], None, &h, false)
    }

    /// Pixel-integrated intensity covariance between the two arms.
    pub fn gamma(&self) -> CorrelationTensor {
        let cross = self.cross_spectral();
        let n = self.pixels();
        self.tensor(gamma_from_cross(&cross, &self.pixel_map, n))
    }

    fn tensor(&self, values: Vec<f64>) -> CorrelationTensor {
        let shape = self.grid.pixel_shape();
        let pitch = self.grid.detector.pitch_mm;
        let origin = [
            self.grid.detector.pixel_center(0, shape[0]),
            self.grid.detector.pixel_center(0, shape[1]),
        ];
        CorrelationTensor::new(shape, shape, pitch, pitch, origin, origin, 0, values)
    }

    /// Mean intensity per pixel of one arm under the chaotic illumination.
    pub fn mean_intensity(&self, arm: Arm) -> Vec<f64> {
        let b = &self.object_to_detector[arm_index(arm)];
        let mut sub = vec![0.0; b.cols];
        if !self.object_points.is_empty() {
            let g = self.object_coherence();
            // I(d) = sum_{o,o'} B[o,d] G[o,o'] conj(B[o',d])
            let gb = {
                let mut bconj = b.clone();
                for v in bconj.data.iter_mut() {
                    *v = v.conj();
                }
                g.mul(&bconj)
            };
            for o in 0..b.rows {
                for (d, (x, y)) in b.row(o).iter().zip(gb.row(o)).enumerate() {
                    sub[d] += (x * y).re;
                }
            }
        }
        bin_pixels(&sub, &self.pixel_map, self.pixels())
    }

    /// Per-pixel image of the same object under spatially incoherent
    /// illumination, as formed by a conventional camera with this lens.
    pub fn incoherent_intensity(&self, arm: Arm) -> Vec<f64> {
        bin_pixels(&self.incoherent[arm_index(arm)], &self.pixel_map, self.pixels())
    }
}

/// Intensity covariance `|sum_s S(s) w_s K_a[s, d_a] conj(K_b[s, d_b])|^2`,
/// summed over detector subsamples into pixels.
pub fn gamma_analytic(ka: &TransferKernel, kb: &TransferKernel, source: &SourceProfile) -> Result<CorrelationTensor> {
    if ka.source_points != kb.source_points || ka.pixel_map != kb.pixel_map {
        return Err(Error::GridMismatch("kernels are sampled on different grids"));
    }
    let w: Vec<f64> = ka.source_points.iter().map(|&s| source.intensity(s) * ka.source_weight).collect();
    let cross = transpose_product(&ka.matrix, Some(&w), &kb.matrix, true);
    let n = ka.pixel_shape[0] * ka.pixel_shape[1];
    let values = gamma_from_cross(&cross, &ka.pixel_map, n);
    let origin = [
        (0.5 - ka.pixel_shape[0] as f64 / 2.0) * ka.pitch_mm,
        (0.5 - ka.pixel_shape[1] as f64 / 2.0) * ka.pitch_mm,
    ];
    Ok(CorrelationTensor::new(ka.pixel_shape, kb.pixel_shape, ka.pitch_mm, kb.pitch_mm, origin, origin, 0, values))
}

/// Chaotic fields at both detectors for one coherence cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRealization {
    pub index: u64,
    pub seed: u64,
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
}

impl FieldRealization {
    pub fn field(&self, arm: Arm) -> &[Complex64] {
        match arm {
            Arm::A => &self.a,
            Arm::B => &self.b,
        }
    }
}

/// Draws independent chaotic-field realizations `E_j = K_j^T (sqrt(S w) g)`.
pub struct FieldSampler<'a> {
    pair: &'a KernelPair,
    seed: u64,
    amp: Vec<f64>,
    g: Vec<Complex64>,
    obj: Vec<Complex64>,
}

impl<'a> FieldSampler<'a> {
    pub fn new(pair: &'a KernelPair, seed: u64) -> Self {
        FieldSampler {
            pair,
            seed,
            amp: pair.source_weights.iter().map(|w| sqrt(*w)).collect(),
            g: vec![Complex64::new(0.0, 0.0); pair.source_points.len()],
            obj: vec![Complex64::new(0.0, 0.0); pair.object_points.len()],
        }
    }

    /// Writes the detector-subsample fields of realization `index`.
    pub fn fields_into(&mut self, index: u64, a: &mut [Complex64], b: &mut [Complex64]) {
        let mut rng = seeds::stream(self.seed, seeds::FIELD, index);
        let h = core::f64::consts::FRAC_1_SQRT_2;
        for g in self.g.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *g = Complex64::new(re * h, im * h);
        }
        self.propagate(a, b);
    }

    /// Same as [`FieldSampler::fields_into`] with caller-provided source
    /// amplitudes instead of random ones.
    pub fn fields_from_amplitudes(&mut self, g: &[Complex64], a: &mut [Complex64], b: &mut [Complex64]) {
        self.g.copy_from_slice(g);
        self.propagate(a, b);
    }

    fn propagate(&mut self, a: &mut [Complex64], b: &mut [Complex64]) {
        let q = &self.pair.source_to_object;
        self.obj.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (s, (&g, &amp)) in self.g.iter().zip(&self.amp).enumerate() {
            axpy(&mut self.obj, g * amp, q.row(s));
        }
        for (out, bm) in [(a, &self.pair.object_to_detector[0]), (b, &self.pair.object_to_detector[1])] {
            out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (o, &e) in self.obj.iter().enumerate() {
                axpy(out, e, bm.row(o));
            }
        }
    }

    pub fn realization(&mut self, index: u64) -> FieldRealization {
        let nd = self.pair.detector_samples();
        let mut a = vec![Complex64::new(0.0, 0.0); nd];
        let mut b = vec![Complex64::new(0.0, 0.0); nd];
        self.fields_into(index, &mut a, &mut b);
        FieldRealization { index, seed: self.seed, a, b }
    }

    /// Pixel intensities of realization `index` into `ia` and `ib`.
    pub fn intensities_into(&mut self, index: u64, ia: &mut [f64], ib: &mut [f64], scratch: &mut [Vec<Complex64>; 2]) {
        let [sa, sb] = scratch;
        self.fields_into(index, sa, sb);
        ia.iter_mut().for_each(|v| *v = 0.0);
        ib.iter_mut().for_each(|v| *v = 0.0);
        for (d, &p) in self.pair.pixel_map.iter().enumerate() {
            ia[p] += sa[d].norm_sqr();
            ib[p] += sb[d].norm_sqr();
        }
    }

    pub fn scratch(&self) -> [Vec<Complex64>; 2] {
        let nd = self.pair.detector_samples();
        [vec![Complex64::new(0.0, 0.0); nd], vec![Complex64::new(0.0, 0.0); nd]]
    }
}

/// The first `n` realizations for `seed`.
pub fn sample_fields(pair: &KernelPair, n: u64, seed: u64) -> impl Iterator<Item = FieldRealization> + '_ {
    let mut sampler = FieldSampler::new(pair, seed);
    (0..n).map(move |i| sampler.realization(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ObjectMask, SlitGroup, SlitOrientation};
    use crate::presets;

    fn desk() -> (OpticalConfig, SourceProfile, PupilFunction) {
        let s = presets::desk();
        let p = PupilFunction::from_config(&s.optics);
        (s.optics, s.source, p)
    }

    fn small_grid(cfg: &OpticalConfig, pupil: &PupilFunction, src: &SourceProfile, mask: &ObjectMask) -> GridSpec {
        GridSpec::auto(
            Dimensionality::One,
            cfg,
            pupil,
            src,
            mask,
            DetectorSpec::line(48, cfg.pixel_pitch_mm(), 1),
            &KernelOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn phase_example() {
        let (cfg, _, _) = desk();
        let phi = propagator_phase([0.0, 0.0], [0.0, 1.0], [0.0, 0.0], 319.0, Arm::A, &cfg).unwrap();
        let expect = (1.0 / 249.0 - 1.0 / 275.0) * 0.5;
        assert!((phi - expect).abs() < 1e-15);
        assert!((phi - 1.8985e-4).abs() < 1e-8);
    }

    #[test]
    fn phase_on_axis_ray_is_zero() {
        let (cfg, _, _) = desk();
        for z in [280.0, 319.0, 360.0] {
            let phi = propagator_phase([0.0, 0.3], [0.0, 0.0], [0.0, -0.2], z, Arm::B, &cfg).unwrap();
            assert_eq!(phi, 0.0);
        }
    }

    #[test]
    fn phase_is_linear_on_focused_plane() {
        let (cfg, _, _) = desk();
        let f = |l: f64| propagator_phase([0.0, 0.1], [0.0, l], [0.0, 0.05], cfg.z_a, Arm::A, &cfg).unwrap();
        let (p1, p2) = (f(1.0), f(2.0));
        assert!((p2 - 2.0 * p1).abs() < 1e-15);
    }

    #[test]
    fn singular_arm_is_rejected() {
        let (cfg, _, _) = desk();
        let z = cfg.z_a - cfg.object_distance;
        assert_eq!(
            propagator_phase([0.0; 2], [0.0, 1.0], [0.0; 2], z, Arm::A, &cfg),
            Err(Error::ArmSingularity)
        );
    }

    fn line_grid(cfg: &OpticalConfig, lens_r: f64, nl: usize) -> GridSpec {
        GridSpec::new(
            Dimensionality::One,
            Axis::new(0.0, 1.0, 64),
            Axis::new(0.0, 0.2, 64),
            Axis::new(0.0, lens_r, nl),
            DetectorSpec::line(64, cfg.pixel_pitch_mm(), 4),
        )
        .unwrap()
    }

    #[test]
    fn blocked_pupil_gives_zero() {
        let (cfg, _, _) = desk();
        let pupil = PupilFunction { radius: 1.0, shape: crate::config::PupilShape::Radial(vec![(1.0, 0.0)]) };
        let grid = line_grid(&cfg, 1.0, 128);
        let p = propagator_p([0.0, 0.0], [0.0, 0.0], cfg.z_a, Arm::A, &cfg, &pupil, &grid).unwrap();
        assert_eq!(p, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn lens_quadrature_converges() {
        let (cfg, _, pupil) = desk();
        let r = pupil.radius;
        let coarse = line_grid(&cfg, r, 800);
        let fine = line_grid(&cfg, r, 1600);
        for (o, d, z) in [(0.0, 0.0, 319.0), (0.05, -0.02, 300.0), (0.1, 0.01, 345.0)] {
            let a = propagator_p([0.0, o], [0.0, d], z, Arm::A, &cfg, &pupil, &coarse).unwrap();
            let b = propagator_p([0.0, o], [0.0, d], z, Arm::A, &cfg, &pupil, &fine).unwrap();
            assert!((a - b).norm() / b.norm() < 1e-3, "z={z} o={o}: {a} vs {b}");
        }
    }

    fn central_lobe(cfg: &OpticalConfig, radius: f64, o: f64) -> (f64, f64) {
        let pupil = PupilFunction::circular(radius);
        let grid = line_grid(cfg, radius, 600);
        let ds: Vec<f64> = (-1500..=1500).map(|i| cfg.magnification * o + i as f64 * 2e-5).collect();
        let mags: Vec<f64> = ds
            .iter()
            .map(|&d| propagator_p([0.0, o], [0.0, d], cfg.z_a, Arm::A, cfg, &pupil, &grid).unwrap().norm())
            .collect();
        let (imax, &peak) = mags.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let mut lo = imax;
        while lo > 0 && mags[lo - 1] < mags[lo] {
            lo -= 1;
        }
        let mut hi = imax;
        while hi + 1 < mags.len() && mags[hi + 1] < mags[hi] {
            hi += 1;
        }
        assert!(peak > 0.0);
        (ds[imax], ds[hi] - ds[lo])
    }

    #[test]
    fn focused_propagator_peaks_at_image_point() {
        let (cfg, _, pupil) = desk();
        let o = 0.12;
        let (peak, width) = central_lobe(&cfg, pupil.radius, o);
        assert!((peak - cfg.magnification * o).abs() <= 2e-5, "peak {peak}");
        // first zeros at +-lambda z_i / (2 r_l)
        let expect = cfg.wavelength_mm() * cfg.image_distance / pupil.radius;
        assert!((width - expect).abs() / expect < 0.1, "width {width} vs {expect}");
    }

    #[test]
    fn halving_pupil_doubles_lobe() {
        let (cfg, _, pupil) = desk();
        let (_, w1) = central_lobe(&cfg, pupil.radius, 0.0);
        let (_, w2) = central_lobe(&cfg, pupil.radius / 2.0, 0.0);
        assert!((w2 / w1 - 2.0).abs() < 0.2, "{w1} {w2}");
    }

    #[test]
    fn nyquist_names_offending_leg() {
        let (cfg, _, _) = desk();
        let grid = GridSpec::new(
            Dimensionality::One,
            Axis::new(0.0, 3.0, 8),
            Axis::new(0.0, 0.2, 64),
            Axis::new(0.0, 5.0, 512),
            DetectorSpec::line(64, cfg.pixel_pitch_mm(), 4),
        )
        .unwrap();
        match grid.check_nyquist(&cfg, 319.0, &KernelOptions::default()) {
            Err(Error::Nyquist { leg, .. }) => assert_eq!(leg, Leg::SourceToObject),
            other => panic!("{other:?}"),
        }
        let grid = GridSpec { source: Axis::new(0.0, 3.0, 2048), lens: Axis::new(0.0, 5.5, 16), ..grid };
        match grid.check_nyquist(&cfg, 319.0, &KernelOptions::default()) {
            Err(Error::Nyquist { leg, .. }) => assert_eq!(leg, Leg::ObjectToLens(Arm::A)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn auto_grid_passes_guard() {
        let (cfg, src, pupil) = desk();
        let mask = ObjectMask::double_slit(319.0, 100.0, 200.0);
        let grid = small_grid(&cfg, &pupil, &src, &mask);
        for (leg, step) in grid.phase_steps(&cfg, 319.0, &KernelOptions::default()).unwrap() {
            assert!(step <= PI / NYQUIST_MARGIN + 1e-9, "{leg}: {step}");
        }
    }

    #[test]
    fn object_behind_source_is_rejected() {
        let (cfg, src, pupil) = desk();
        let mask = ObjectMask::double_slit(319.0, 100.0, 200.0);
        let grid = small_grid(&cfg, &pupil, &src, &mask);
        let far = ObjectMask { z: cfg.z_sigma + 1.0, ..mask };
        assert!(matches!(
            build_kernels(&far, &cfg, &pupil, &src, &grid, &KernelOptions::default()),
            Err(Error::ObjectBehindSource { .. })
        ));
    }

    #[test]
    fn opaque_mask_gives_zero_kernels() {
        let (cfg, src, pupil) = desk();
        let slit = ObjectMask::double_slit(319.0, 100.0, 200.0);
        let grid = small_grid(&cfg, &pupil, &src, &slit);
        let opaque = ObjectMask {
            kind: crate::config::MaskKind::Raster(crate::config::Raster { nx: 1, ny: 1, pitch_um: 1000.0, values: vec![0.0] }),
            z: 319.0,
        };
        let pair = build_kernels(&opaque, &cfg, &pupil, &src, &grid, &KernelOptions::default()).unwrap();
        let k = pair.kernel(Arm::A);
        assert!(k.matrix.data.iter().all(|v| v.norm() == 0.0));
        assert!(pair.gamma().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn factored_gamma_matches_materialized() {
        let (cfg, src, pupil) = desk();
        let mask = ObjectMask::double_slit(319.0, 100.0, 200.0);
        let grid = small_grid(&cfg, &pupil, &src, &mask);
        let pair = build_kernels(&mask, &cfg, &pupil, &src, &grid, &KernelOptions::default()).unwrap();
        let (ka, kb) = (pair.kernel(Arm::A), pair.kernel(Arm::B));
        assert_eq!(ka.matrix.rows, grid.source.samples);
        assert!(ka.matrix.is_finite());
        for d in 0..ka.matrix.cols {
            let norm: f64 = (0..ka.matrix.rows).map(|s| ka.matrix.at(s, d).norm_sqr()).sum();
            assert!(norm > 0.0 && norm.is_finite());
        }
        let g1 = gamma_analytic(&ka, &kb, &src).unwrap();
        let g2 = pair.gamma();
        let max = g1.values.iter().cloned().fold(0.0, f64::max);
        for (x, y) in g1.values.iter().zip(&g2.values) {
            assert!((x - y).abs() <= 1e-9 * max);
            assert!(*x >= 0.0);
        }
    }

    #[test]
    fn gamma_autocorrelation_point_and_homogeneity() {
        let (cfg, src, pupil) = desk();
        let mask = ObjectMask::double_slit(330.0, 100.0, 200.0);
        let grid = small_grid(&cfg, &pupil, &src, &mask);
        let pair = build_kernels(&mask, &cfg, &pupil, &src, &grid, &KernelOptions::default()).unwrap();
        let ka = pair.kernel(Arm::A);
        let g = gamma_analytic(&ka, &ka, &src).unwrap();
        let n = grid.pixels();
        let w: Vec<f64> = ka.source_points.iter().map(|&s| src.intensity(s) * ka.source_weight).collect();
        let coh = |d: usize, e: usize| -> Complex64 {
            (0..ka.matrix.rows).map(|s| ka.matrix.at(s, d) * ka.matrix.at(s, e).conj() * w[s]).sum()
        };
        for p in [0, n / 3, n / 2] {
            let subs: Vec<usize> = (0..ka.pixel_map.len()).filter(|&d| ka.pixel_map[d] == p).collect();
            let mut want = 0.0;
            let mut mean = 0.0;
            for &d in &subs {
                mean += coh(d, d).re;
                for &e in &subs {
                    want += coh(d, e).norm_sqr();
                }
            }
            let v = g.values[p * n + p];
            assert!((v - want).abs() <= 1e-9 * v.max(1e-300), "{v} vs {want}");
            assert!(v <= mean * mean * (1.0 + 1e-9));
        }
        let scaled = TransferKernel { source_weight: ka.source_weight * 3.0, ..ka.clone() };
        let g3 = gamma_analytic(&scaled, &scaled, &src).unwrap();
        for (a, b) in g.values.iter().zip(&g3.values) {
            assert!((b - 9.0 * a).abs() <= 1e-9 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn gamma_swap_symmetry() {
        let (cfg, src, pupil) = desk();
        let mask = ObjectMask::double_slit(310.0, 100.0, 200.0);
        let grid = small_grid(&cfg, &pupil, &src, &mask);
        let pair = build_kernels(&mask, &cfg, &pupil, &src, &grid, &KernelOptions::default()).unwrap();
        let (ka, kb) = (pair.kernel(Arm::A), pair.kernel(Arm::B));
        let gab = gamma_analytic(&ka, &kb, &src).unwrap();
        let gba = gamma_analytic(&kb, &ka, &src).unwrap();
        let n = grid.pixels();
        let max = gab.values.iter().cloned().fold(0.0, f64::max);
        for i in 0..n {
            for j in 0..n {
                assert!((gab.values[i * n + j] - gba.values[j * n + i]).abs() <= 1e-9 * max);
            }
        }
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let (cfg, src, pupil) = desk();
        let m1 = ObjectMask::double_slit(319.0, 100.0, 200.0);
        let g1 = small_grid(&cfg, &pupil, &src, &m1);
        let g2 = GridSpec { source: Axis::new(0.0, g1.source.half_width, g1.source.samples + 2), ..g1.clone() };
        let ka = build_kernels(&m1, &cfg, &pupil, &src, &g1, &KernelOptions::default()).unwrap().kernel(Arm::A);
        let kb = build_kernels(&m1, &cfg, &pupil, &src, &g2, &KernelOptions::default()).unwrap().kernel(Arm::B);
        assert!(matches!(gamma_analytic(&ka, &kb, &src), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn unit_amplitudes_give_deterministic_field() {
        let (cfg, src, pupil) = desk();
        let mask = ObjectMask::double_slit(319.0, 100.0, 200.0);
        let grid = small_grid(&cfg, &pupil, &src, &mask);
        let pair = build_kernels(&mask, &cfg, &pupil, &src, &grid, &KernelOptions::default()).unwrap();
        let ka = pair.kernel(Arm::A);
        let mut sampler = FieldSampler::new(&pair, 0);
        let ones = vec![Complex64::new(1.0, 0.0); pair.source_points.len()];
        let nd = pair.detector_samples();
        let (mut a, mut b) = (vec![Complex64::default(); nd], vec![Complex64::default(); nd]);
        sampler.fields_from_amplitudes(&ones, &mut a, &mut b);
        for d in 0..nd {
            let e: Complex64 = (0..ka.matrix.rows).map(|s| ka.matrix.at(s, d) * sqrt(pair.source_weights[s])).sum();
            assert!((e - a[d]).norm() <= 1e-9 * e.norm().max(1e-12));
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let (cfg, src, pupil) = desk();
        let mask = ObjectMask::slits(
            319.0,
            SlitGroup { count: 1, width_um: 100.0, spacing_um: 0.0, orientation: SlitOrientation::AlongX, center_um: 0.0 },
        );
        let grid = small_grid(&cfg, &pupil, &src, &mask);
        let pair = build_kernels(&mask, &cfg, &pupil, &src, &grid, &KernelOptions::default()).unwrap();
        let r1: Vec<_> = sample_fields(&pair, 3, 42).collect();
        let r2: Vec<_> = sample_fields(&pair, 3, 42).collect();
        assert_eq!(r1, r2);
        assert_ne!(r1[0].a, r1[1].a);
    }

    #[test]
    fn point_speckle_contrast_is_unity() {
        let (cfg, src, pupil) = desk();
        let mask = ObjectMask::slits(
            319.0,
            SlitGroup { count: 1, width_um: 80.0, spacing_um: 0.0, orientation: SlitOrientation::AlongX, center_um: 0.0 },
        );
        let grid = GridSpec::auto(
            Dimensionality::One,
            &cfg,
            &pupil,
            &src,
            &mask,
            DetectorSpec::line(8, cfg.pixel_pitch_mm(), 1),
            &KernelOptions::default(),
        )
        .unwrap();
        let opts = KernelOptions::default();
        let pair = build_kernels(&mask, &cfg, &pupil, &src, &grid, &opts).unwrap();
        let mut sampler = FieldSampler::new(&pair, 9);
        let (mut a, mut b) = (sampler.scratch()[0].clone(), sampler.scratch()[1].clone());
        let d = a.len() / 2;
        let n = 20_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            sampler.fields_into(i, &mut a, &mut b);
            let v = a[d].norm_sqr();
            s1 += v;
            s2 += v * v;
        }
        let m = s1 / n as f64;
        let var = s2 / n as f64 - m * m;
        assert!((var / (m * m) - 1.0).abs() < 0.06, "{}", var / (m * m));
    }
}
