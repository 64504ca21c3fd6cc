//! Refocusing: the linear map `(rho_a, rho_b) -> (rho_r, rho_s)`, resampling
//! of the measured correlation onto it, and integration over `rho_s`.
//!
//! With `z_s` on the source plane the refocused coordinate of a point object
//! at `z_a` is `rho_r = -rho_a / M`, so refocused images are mirrored with
//! respect to the object: object coordinate `o` appears at `rho_r = -o`.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::OpticalConfig;
use crate::correlator::CorrelationTensor;
use crate::math::{abs, floor, hypot, round};
use crate::ray::ApertureRadii;
use crate::{Arm, Error, Point, Result};

/// Minimum `rho_s` samples across the aperture diameter before a warning.
pub const MIN_APERTURE_SAMPLES: usize = 5;

/// `alpha(z) = 1/(M dz) [[z_b - z, z - z_a], [z_b - z_s, z_s - z_a]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefocusMatrix {
    pub z: f64,
    pub z_s: f64,
    pub m: [[f64; 2]; 2],
}

/// Builds `alpha(z)` for auxiliary plane `z_s`.
pub fn alpha_matrix(z: f64, z_s: f64, cfg: &OpticalConfig) -> Result<RefocusMatrix> {
    if cfg.delta_z == 0.0 {
        return Err(Error::InvalidConfig(vec![crate::config::ConfigIssue::DeltaZZero]));
    }
    if z_s == z {
        return Err(Error::SingularRefocus { z });
    }
    let md = cfg.m_delta_z();
    let m = [
        [(cfg.z_b - z) / md, (z - cfg.z_a) / md],
        [(cfg.z_b - z_s) / md, (z_s - cfg.z_a) / md],
    ];
    Ok(RefocusMatrix { z, z_s, m })
}

impl RefocusMatrix {
    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// `(rho_r, rho_s)` from `(rho_a, rho_b)`, one transverse component.
    pub fn apply(&self, a: f64, b: f64) -> (f64, f64) {
        (self.m[0][0] * a + self.m[0][1] * b, self.m[1][0] * a + self.m[1][1] * b)
    }

    pub fn inverse(&self) -> [[f64; 2]; 2] {
        let d = self.det();
        [[self.m[1][1] / d, -self.m[0][1] / d], [-self.m[1][0] / d, self.m[0][0] / d]]
    }

    /// `(rho_a, rho_b)` from `(rho_r, rho_s)`.
    pub fn invert(&self, r: f64, s: f64) -> (f64, f64) {
        let i = self.inverse();
        (i[0][0] * r + i[0][1] * s, i[1][0] * r + i[1][1] * s)
    }

    /// Length of the `rho_s` row, which converts a correlation-aperture radius
    /// into a radius in `rho_s`.
    pub fn source_row_norm(&self) -> f64 {
        hypot(self.m[1][0], self.m[1][1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Multilinear,
    Nearest,
}

/// Sampling of the refocused coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputGrid {
    /// `[cols, rows]` of `rho_r` samples; `cols` is 1 for line data.
    pub r_shape: [usize; 2],
    pub r_origin: Point,
    pub r_pitch: f64,
    /// `rho_s` lattice pitch; samples sit at integer multiples.
    pub s_pitch: f64,
    /// Half-extent of the `rho_s` lattice.
    pub s_half: f64,
}

impl OutputGrid {
    /// Default sampling for `gamma` refocused with `alpha`: as many `rho_r`
    /// samples as arm A has bins, spaced by the bin pitch times the larger
    /// first-row coefficient, and `rho_s` samples spaced by the smaller of the
    /// second-row steps produced by one bin.
    pub fn for_tensor(gamma: &CorrelationTensor, alpha: &RefocusMatrix, s_half: f64) -> Self {
        let pitch = gamma.pitch[0].max(gamma.pitch[1]);
        let r_pitch = pitch * abs(alpha.m[0][0]).max(abs(alpha.m[0][1]));
        let s_pitch = (gamma.pitch[0] * abs(alpha.m[1][0])).min(gamma.pitch[1] * abs(alpha.m[1][1]));
        let shape = gamma.shape_a;
        let origin = |n: usize| if n > 1 { -(n as f64 - 1.0) / 2.0 * r_pitch } else { 0.0 };
        OutputGrid { r_shape: shape, r_origin: [origin(shape[0]), origin(shape[1])], r_pitch, s_pitch, s_half }
    }

    fn s_positions(&self) -> Vec<f64> {
        let k = floor(self.s_half / self.s_pitch + 1e-9) as i64;
        (-k..=k).map(|i| i as f64 * self.s_pitch).collect()
    }

    pub fn r_coord(&self, i: usize) -> Point {
        let c = self.r_shape[0];
        [self.r_origin[0] + (i % c) as f64 * self.r_pitch, self.r_origin[1] + (i / c) as f64 * self.r_pitch]
    }
}

/// `Gamma_r(rho_r, rho_s)`; out-of-domain samples are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct RemappedGamma {
    pub alpha: RefocusMatrix,
    pub grid: OutputGrid,
    /// `rho_s` sample positions, `[x, y]`.
    pub s_points: Vec<Point>,
    /// Row-major over `(rho_r, rho_s)`.
    pub values: Vec<f64>,
}

impl RemappedGamma {
    pub fn n_r(&self) -> usize {
        self.grid.r_shape[0] * self.grid.r_shape[1]
    }
}

/// Index-space coordinate of `x` on an axis, or `None` outside the lattice.
#[inline]
fn lattice_coord(x: f64, origin: f64, pitch: f64, n: usize) -> Option<f64> {
    let u = (x - origin) / pitch;
    let top = (n - 1) as f64;
    if u < -1e-9 || u > top + 1e-9 {
        return None;
    }
    Some(u.clamp(0.0, top))
}

/// Interpolation stencil along one axis: up to two `(index, weight)` pairs.
#[inline]
fn stencil(u: f64, n: usize, mode: Interpolation) -> [(usize, f64); 2] {
    match mode {
        Interpolation::Nearest => [(round(u) as usize, 1.0), (0, 0.0)],
        Interpolation::Multilinear => {
            let i0 = floor(u) as usize;
            if i0 + 1 >= n {
                return [(n - 1, 1.0), (0, 0.0)];
            }
            let f = u - i0 as f64;
            [(i0, 1.0 - f), (i0 + 1, f)]
        }
    }
}

struct Sampler<'a> {
    gamma: &'a CorrelationTensor,
    two_d: bool,
    mode: Interpolation,
}

impl Sampler<'_> {
    /// Interpolated value at `(rho_a, rho_b)` or `None` outside the domain.
    fn sample(&self, pa: Point, pb: Point) -> Option<f64> {
        let g = self.gamma;
        let ([ca, ra], [cb, rb]) = (g.shape_a, g.shape_b);
        let ya = lattice_coord(pa[1], g.origin[0][1], g.pitch[0], ra)?;
        let yb = lattice_coord(pb[1], g.origin[1][1], g.pitch[1], rb)?;
        let (xa, xb) = if self.two_d {
            (
                lattice_coord(pa[0], g.origin[0][0], g.pitch[0], ca)?,
                lattice_coord(pb[0], g.origin[1][0], g.pitch[1], cb)?,
            )
        } else {
            (0.0, 0.0)
        };
        let sya = stencil(ya, ra, self.mode);
        let syb = stencil(yb, rb, self.mode);
        let sxa = if self.two_d { stencil(xa, ca, self.mode) } else { [(0, 1.0), (0, 0.0)] };
        let sxb = if self.two_d { stencil(xb, cb, self.mode) } else { [(0, 1.0), (0, 0.0)] };
        let nb = g.n_b();
        let mut acc = 0.0;
        for &(iya, wya) in &sya {
            if wya == 0.0 {
                continue;
            }
            for &(ixa, wxa) in &sxa {
                if wxa == 0.0 {
                    continue;
                }
                let row = (iya * ca + ixa) * nb;
                for &(iyb, wyb) in &syb {
                    if wyb == 0.0 {
                        continue;
                    }
                    for &(ixb, wxb) in &sxb {
                        if wxb == 0.0 {
                            continue;
                        }
                        acc += wya * wxa * wyb * wxb * g.values[row + iyb * cb + ixb];
                    }
                }
            }
        }
        Some(acc)
    }
}

fn is_two_d(gamma: &CorrelationTensor) -> bool {
    gamma.shape_a[0] > 1 || gamma.shape_b[0] > 1
}

/// Samples `gamma` at `alpha^-1 (rho_r, rho_s)` on `grid`.
pub fn remap(gamma: &CorrelationTensor, alpha: &RefocusMatrix, grid: &OutputGrid, mode: Interpolation) -> Result<RemappedGamma> {
    if alpha.det() == 0.0 || !alpha.det().is_finite() {
        return Err(Error::SingularRefocus { z: alpha.z });
    }
    let two_d = is_two_d(gamma);
    let s1 = grid.s_positions();
    let s_points: Vec<Point> = if two_d {
        s1.iter().flat_map(|&y| s1.iter().map(move |&x| [x, y])).collect()
    } else {
        s1.iter().map(|&y| [0.0, y]).collect()
    };
    let sampler = Sampler { gamma, two_d, mode };
    let inv = alpha.inverse();
    let n_r = grid.r_shape[0] * grid.r_shape[1];
    let mut values = Vec::with_capacity(n_r * s_points.len());
    for i in 0..n_r {
        let r = grid.r_coord(i);
        for s in &s_points {
            let map = |k: usize| (inv[0][0] * r[k] + inv[0][1] * s[k], inv[1][0] * r[k] + inv[1][1] * s[k]);
            let (ay, by) = map(1);
            let (ax, bx) = if two_d { map(0) } else { (gamma.origin[0][0], gamma.origin[1][0]) };
            values.push(sampler.sample([ax, ay], [bx, by]).unwrap_or(f64::NAN));
        }
    }
    Ok(RemappedGamma { alpha: *alpha, grid: *grid, s_points, values })
}

/// Refocused image `Sigma(rho_r; z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefocusedImage {
    pub z: f64,
    /// `[cols, rows]`.
    pub shape: [usize; 2],
    pub origin: Point,
    pub pitch: f64,
    pub values: Vec<f64>,
    /// In-domain `rho_s` samples averaged into each pixel.
    pub samples: Vec<u32>,
    /// Radius of the `rho_s` integration domain.
    pub s_radius: f64,
    /// Fewer than [`MIN_APERTURE_SAMPLES`] samples span the aperture diameter.
    pub undersampled_aperture: bool,
}

impl RefocusedImage {
    /// `rho_r` coordinate of pixel `i`.
    pub fn coord(&self, i: usize) -> Point {
        let c = self.shape[0];
        [self.origin[0] + (i % c) as f64 * self.pitch, self.origin[1] + (i / c) as f64 * self.pitch]
    }

    /// Object-plane coordinate imaged at pixel `i` (`-rho_r`).
    pub fn object_coord(&self, i: usize) -> Point {
        let p = self.coord(i);
        [-p[0], -p[1]]
    }
}

/// Radius in `rho_s` of the limiting correlation aperture.
pub fn source_radius(alpha: &RefocusMatrix, aperture: &ApertureRadii) -> f64 {
    aperture.limiting_radius() * alpha.source_row_norm()
}

/// Averages `gamma_r` over `|rho_s| <= radius`, counting only in-domain
/// samples.
pub fn integrate_radius(gamma_r: &RemappedGamma, radius: f64) -> Result<RefocusedImage> {
    let inside: Vec<usize> = gamma_r
        .s_points
        .iter()
        .enumerate()
        .filter(|(_, p)| hypot(p[0], p[1]) <= radius * (1.0 + 1e-12))
        .map(|(k, _)| k)
        .collect();
    if inside.is_empty() {
        return Err(Error::EmptyIntegrationDomain { radius, pitch: gamma_r.grid.s_pitch });
    }
    let across = 2.0 * radius / gamma_r.grid.s_pitch;
    let ns = gamma_r.s_points.len();
    let n_r = gamma_r.n_r();
    let mut values = vec![0.0; n_r];
    let mut samples = vec![0u32; n_r];
    for i in 0..n_r {
        let row = &gamma_r.values[i * ns..(i + 1) * ns];
        let (mut sum, mut n) = (0.0, 0u32);
        for &k in &inside {
            let v = row[k];
            if !v.is_nan() {
                sum += v;
                n += 1;
            }
        }
        values[i] = if n > 0 { sum / n as f64 } else { 0.0 };
        samples[i] = n;
    }
    Ok(RefocusedImage {
        z: gamma_r.alpha.z,
        shape: gamma_r.grid.r_shape,
        origin: gamma_r.grid.r_origin,
        pitch: gamma_r.grid.r_pitch,
        values,
        samples,
        s_radius: radius,
        undersampled_aperture: (floor(across) as usize + 1) < MIN_APERTURE_SAMPLES,
    })
}

/// Integration over the limiting correlation aperture.
pub fn integrate(gamma_r: &RemappedGamma, aperture: &ApertureRadii) -> Result<RefocusedImage> {
    integrate_radius(gamma_r, source_radius(&gamma_r.alpha, aperture))
}

/// Options shared by every plane of a refocus stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefocusOptions {
    /// Auxiliary plane; `None` selects the source plane.
    pub z_s: Option<f64>,
    pub interpolation: Interpolation,
    /// Overrides the default `rho_r` sampling.
    pub r_pitch: Option<f64>,
    pub r_count: Option<usize>,
    /// Overrides the default `rho_s` sampling.
    pub s_pitch: Option<f64>,
}

impl Default for RefocusOptions {
    fn default() -> Self {
        RefocusOptions { z_s: None, interpolation: Interpolation::Multilinear, r_pitch: None, r_count: None, s_pitch: None }
    }
}

/// Output grid for plane `alpha` honouring the overrides in `opts`.
pub fn output_grid(gamma: &CorrelationTensor, alpha: &RefocusMatrix, radius: f64, opts: &RefocusOptions) -> OutputGrid {
    let mut grid = OutputGrid::for_tensor(gamma, alpha, radius);
    if let Some(p) = opts.s_pitch {
        grid.s_pitch = p;
    }
    if let Some(p) = opts.r_pitch {
        grid.r_pitch = p;
    }
    if let Some(n) = opts.r_count {
        let two_d = is_two_d(gamma);
        grid.r_shape = if two_d { [n, n] } else { [1, n] };
    }
    let origin = |n: usize| if n > 1 { -(n as f64 - 1.0) / 2.0 * grid.r_pitch } else { 0.0 };
    grid.r_origin = [origin(grid.r_shape[0]), origin(grid.r_shape[1])];
    grid
}

/// Remap and integrate one plane.
pub fn refocus_plane(
    gamma: &CorrelationTensor,
    z: f64,
    cfg: &OpticalConfig,
    aperture: &ApertureRadii,
    opts: &RefocusOptions,
) -> Result<RefocusedImage> {
    let alpha = alpha_matrix(z, opts.z_s.unwrap_or(cfg.z_sigma), cfg)?;
    let radius = source_radius(&alpha, aperture);
    let grid = output_grid(gamma, &alpha, radius, opts);
    let gr = remap(gamma, &alpha, &grid, opts.interpolation)?;
    integrate_radius(&gr, radius)
}

/// One refocused image per `z`; failures are reported per plane.
pub fn refocus_stack(
    gamma: &CorrelationTensor,
    z_list: &[f64],
    cfg: &OpticalConfig,
    aperture: &ApertureRadii,
    opts: &RefocusOptions,
) -> Vec<Result<RefocusedImage>> {
    z_list.iter().map(|&z| refocus_plane(gamma, z, cfg, aperture, opts)).collect()
}

/// `z` values from `start` to `stop` inclusive in steps of `step`.
pub fn z_range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step != 0.0) || !step.is_finite() || (stop - start) / step < 0.0 {
        return Err(Error::InvalidArgument("z range step must move from start towards stop".into()));
    }
    let n = floor((stop - start) / step + 1e-9) as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Arm whose direct image is sharp at `z`, if any.
pub fn focused_arm(z: f64, cfg: &OpticalConfig) -> Option<Arm> {
    if z == cfg.z_a {
        Some(Arm::A)
    } else if z == cfg.z_b {
        Some(Arm::B)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::ray::image_locus;

    fn cfg() -> OpticalConfig {
        presets::paper_like().optics
    }

    #[test]
    fn example_at_319() {
        let a = alpha_matrix(319.0, 600.0, &cfg()).unwrap();
        let expect = [[1.3333, 1.3333], [15.7436, -13.0769]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((a.m[r][c] - expect[r][c]).abs() < 1e-4, "{:?}", a.m);
            }
        }
    }

    #[test]
    fn focused_plane_rows() {
        let c = cfg();
        let a = alpha_matrix(c.z_a, c.z_sigma, &c).unwrap();
        assert!((a.m[0][0] + 1.0 / c.magnification).abs() < 1e-12);
        assert_eq!(a.m[0][1], 0.0);
        let (r, _) = a.apply(0.3, -0.7);
        assert!((r + 0.3 / c.magnification).abs() < 1e-12);
        let b = alpha_matrix(c.z_b, c.z_sigma, &c).unwrap();
        assert_eq!(b.m[0][0], 0.0);
        assert!((b.m[0][1] + 1.0 / c.magnification).abs() < 1e-12);
    }

    #[test]
    fn singular_plane() {
        assert_eq!(alpha_matrix(600.0, 600.0, &cfg()), Err(Error::SingularRefocus { z: 600.0 }));
    }

    #[test]
    fn first_row_is_image_locus() {
        let c = cfg();
        for z in [250.0, 293.0, 319.0, 345.0, 400.0] {
            let a = alpha_matrix(z, c.z_sigma, &c).unwrap();
            let (ca, cb) = image_locus(z, &c).unwrap();
            assert!((a.m[0][0] - ca).abs() < 1e-12 && (a.m[0][1] - cb).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn determinant_and_inverse(z in 200.0f64..500.0, zs in 200.0f64..800.0, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            proptest::prop_assume!((zs - z).abs() > 1.0);
            let c = cfg();
            let m = alpha_matrix(z, zs, &c).unwrap();
            let expect = -(zs - z) / (c.magnification * c.magnification * c.delta_z);
            proptest::prop_assert!((m.det() - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            let (r, s) = m.apply(a, b);
            let (a2, b2) = m.invert(r, s);
            proptest::prop_assert!((a2 - a).abs() < 1e-10 && (b2 - b).abs() < 1e-10);
        }
    }

    fn line_tensor(n: usize, pitch: f64, f: impl Fn(f64, f64) -> f64) -> CorrelationTensor {
        let origin = [0.0, -(n as f64 - 1.0) / 2.0 * pitch];
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f(origin[1] + i as f64 * pitch, origin[1] + j as f64 * pitch));
            }
        }
        CorrelationTensor::new([1, n], [1, n], pitch, pitch, origin, origin, 10, values)
    }

    #[test]
    fn multilinear_remap_is_exact_on_bilinear_gamma() {
        let c = cfg();
        let a = alpha_matrix(c.z_a, c.z_sigma, &c).unwrap();
        let pitch = 0.01;
        let g = line_tensor(21, pitch, |x, y| 1.0 + x * 7.0 + y * 3.0 + 2.0 * x * y);
        let grid = OutputGrid {
            r_shape: [1, 1],
            r_origin: [0.0, -0.05 * a.m[0][0]],
            r_pitch: 1.0,
            s_pitch: abs(a.m[1][1]) * pitch,
            s_half: 3.0 * abs(a.m[1][1]) * pitch,
        };
        let gr = remap(&g, &a, &grid, Interpolation::Multilinear).unwrap();
        for (k, s) in gr.s_points.iter().enumerate() {
            let (pa, pb) = a.invert(grid.r_origin[1], s[1]);
            let expect = 1.0 + pa * 7.0 + pb * 3.0 + 2.0 * pa * pb;
            assert!((gr.values[k] - expect).abs() < 1e-9, "{} {}", gr.values[k], expect);
        }
    }

    #[test]
    fn zero_gamma_stays_zero() {
        let c = cfg();
        let g = line_tensor(16, 0.02, |_, _| 0.0);
        let a = alpha_matrix(319.0, c.z_sigma, &c).unwrap();
        let img = refocus_plane(&g, 319.0, &c, &ApertureRadii::new(1.0, 1.0, 0.07), &RefocusOptions::default()).unwrap();
        assert!(img.values.iter().all(|&v| v == 0.0));
        assert!(a.det() != 0.0);
    }

    #[test]
    fn separable_gamma_integrates_to_its_r_factor() {
        let c = cfg();
        let a = alpha_matrix(330.0, c.z_sigma, &c).unwrap();
        let f = |r: f64| 2.0 + (r * 9.0).sin();
        let gfun = |s: f64| 1.0 + s * s;
        let pitch = 0.005;
        let g = line_tensor(121, pitch, |pa, pb| {
            let (r, s) = a.apply(pa, pb);
            f(r) * gfun(s)
        });
        let radius = 0.5;
        let grid = OutputGrid { r_shape: [1, 9], r_origin: [0.0, -0.04], r_pitch: 0.01, s_pitch: 0.05, s_half: radius };
        let gr = remap(&g, &a, &grid, Interpolation::Multilinear).unwrap();
        let img = integrate_radius(&gr, radius).unwrap();
        let ratio0 = img.values[0] / f(grid.r_coord(0)[1]);
        for i in 0..9 {
            assert_eq!(img.samples[i], 21);
            let ratio = img.values[i] / f(grid.r_coord(i)[1]);
            assert!((ratio / ratio0 - 1.0).abs() < 2e-3, "{ratio} {ratio0}");
        }
    }

    #[test]
    fn empty_domain_is_an_error() {
        let c = cfg();
        let g = line_tensor(8, 0.01, |_, _| 1.0);
        let a = alpha_matrix(319.0, c.z_sigma, &c).unwrap();
        let grid = OutputGrid { r_shape: [1, 2], r_origin: [0.0, 0.0], r_pitch: 0.01, s_pitch: 1.0, s_half: 0.0 };
        let mut gr = remap(&g, &a, &grid, Interpolation::Nearest).unwrap();
        gr.s_points = vec![[0.0, 1.0]];
        gr.values = vec![1.0, 1.0];
        assert!(matches!(integrate_radius(&gr, 0.1), Err(Error::EmptyIntegrationDomain { .. })));
    }

    #[test]
    fn out_of_domain_samples_are_not_averaged() {
        let c = cfg();
        let g = line_tensor(11, 0.01, |_, _| 5.0);
        let img = refocus_plane(&g, 319.0, &c, &ApertureRadii::new(1.0, 1.0, 0.07), &RefocusOptions::default()).unwrap();
        for (v, n) in img.values.iter().zip(&img.samples) {
            if *n > 0 {
                assert!((v - 5.0).abs() < 1e-12);
            }
        }
        assert!(img.samples.iter().any(|&n| n > 0));
    }

    #[test]
    fn stack_reports_errors_per_plane() {
        let c = cfg();
        let g = line_tensor(11, 0.01, |_, _| 1.0);
        let out = refocus_stack(&g, &[319.0, c.z_sigma, 330.0], &c, &ApertureRadii::new(1.0, 1.0, 0.07), &RefocusOptions::default());
        assert!(out[0].is_ok() && out[2].is_ok());
        assert!(matches!(out[1], Err(Error::SingularRefocus { .. })));
    }

    #[test]
    fn gain_scales_sigma() {
        let c = cfg();
        let g = line_tensor(31, 0.01, |x, y| (x * 20.0).cos() + y + 2.0);
        let mut g2 = g.clone();
        g2.values.iter_mut().for_each(|v| *v *= 3.5);
        let ap = ApertureRadii::new(1.0, 1.0, 0.07);
        let i1 = refocus_plane(&g, 325.0, &c, &ap, &RefocusOptions::default()).unwrap();
        let i2 = refocus_plane(&g2, 325.0, &c, &ap, &RefocusOptions::default()).unwrap();
        for (a, b) in i1.values.iter().zip(&i2.values) {
            assert!((b - 3.5 * a).abs() < 1e-9);
        }
    }

    #[test]
    fn z_ranges() {
        assert_eq!(z_range(300.0, 310.0, 5.0).unwrap(), vec![300.0, 305.0, 310.0]);
        assert!(z_range(300.0, 310.0, -1.0).is_err());
    }
}
