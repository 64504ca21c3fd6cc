//! Image evaluation: slit profiles, visibility, the SNR estimator and its
//! saturating model, resolution sweeps and the circle-of-confusion band.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::OpticalConfig;
use crate::math::{abs, exp, log, mean, sqrt, variance};
use crate::refocus::RefocusedImage;
use crate::{Error, Point, Result};

/// Visibility threshold of the resolution criterion.
pub const RESOLUTION_VISIBILITY: f64 = 0.10;

/// A sampled image with physical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    /// `[cols, rows]`.
    pub shape: [usize; 2],
    pub origin: Point,
    pub pitch: f64,
    pub values: Vec<f64>,
}

impl Image {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.shape[0] + x]
    }

    /// Centre of pixel `(x, y)`.
    pub fn coord(&self, x: usize, y: usize) -> Point {
        [self.origin[0] + x as f64 * self.pitch, self.origin[1] + y as f64 * self.pitch]
    }

    /// A line image along `y` with the given axis.
    pub fn line(origin_y: f64, pitch: f64, values: Vec<f64>) -> Self {
        Image { shape: [1, values.len()], origin: [0.0, origin_y], pitch, values }
    }
}

impl From<&RefocusedImage> for Image {
    fn from(r: &RefocusedImage) -> Self {
        Image { shape: r.shape, origin: r.origin, pitch: r.pitch, values: r.values.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Direction along which a slit profile sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumAxis {
    /// Sum over columns; the profile runs along `y`.
    X,
    /// Sum over rows; the profile runs along `x`.
    Y,
}

/// A 1-D profile with its coordinate axis (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
}

impl Profile {
    /// Profile with coordinates reversed in sign, e.g. refocused `rho_r` to
    /// object coordinates.
    pub fn mirrored(&self) -> Profile {
        let mut coords: Vec<f64> = self.coords.iter().map(|c| -c).collect();
        let mut values = self.values.clone();
        coords.reverse();
        values.reverse();
        Profile { coords, values }
    }

    /// Linear interpolation at `x`, `None` outside the sampled range.
    pub fn at(&self, x: f64) -> Option<f64> {
        let c = &self.coords;
        if c.is_empty() {
            return None;
        }
        let (lo, hi) = (c[0].min(c[c.len() - 1]), c[0].max(c[c.len() - 1]));
        if x < lo || x > hi {
            return None;
        }
        for k in 0..c.len().saturating_sub(1) {
            let (c0, c1) = (c[k], c[k + 1]);
            if (x >= c0.min(c1)) && (x <= c0.max(c1)) {
                if c1 == c0 {
                    return Some(self.values[k]);
                }
                let t = (x - c0) / (c1 - c0);
                return Some(self.values[k] + t * (self.values[k + 1] - self.values[k]));
            }
        }
        Some(self.values[0])
    }
}

/// Sum of `image` inside `rect` along the slit direction.
pub fn slit_profile(image: &Image, rect: Rect, axis: SumAxis) -> Result<Profile> {
    if rect.width == 0 || rect.height == 0 {
        return Err(Error::EmptyRegion);
    }
    if rect.x + rect.width > image.shape[0] || rect.y + rect.height > image.shape[1] {
        return Err(Error::InvalidArgument("rectangle extends past the image".into()));
    }
    let (mut coords, mut values) = (Vec::new(), Vec::new());
    match axis {
        SumAxis::X => {
            for y in rect.y..rect.y + rect.height {
                coords.push(image.coord(0, y)[1]);
                values.push((rect.x..rect.x + rect.width).map(|x| image.get(x, y)).sum());
            }
        }
        SumAxis::Y => {
            for x in rect.x..rect.x + rect.width {
                coords.push(image.coord(x, 0)[0]);
                values.push((rect.y..rect.y + rect.height).map(|y| image.get(x, y)).sum());
            }
        }
    }
    Ok(Profile { coords, values })
}

/// Local maxima as `(index, value)`, plateaus reported once at their centre.
fn local_maxima(v: &[f64]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let n = v.len();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[j + 1] == v[i] {
            j += 1;
        }
        let left_lower = i == 0 || v[i - 1] < v[i];
        let right_lower = j + 1 == n || v[j + 1] < v[i];
        let interior = !(i == 0 && j + 1 == n);
        if left_lower && right_lower && interior {
            out.push(((i + j) / 2, v[i]));
        }
        i = j + 1;
    }
    out
}

/// `(max - min) / (max + min)` between the two strongest peaks of a profile
/// and the lowest point between them. Profiles with fewer than two peaks have
/// zero visibility.
pub fn visibility(profile: &[f64]) -> Result<f64> {
    if profile.len() < 3 {
        return Err(Error::InvalidArgument("visibility needs at least 3 samples".into()));
    }
    let mut peaks = local_maxima(profile);
    let lo = profile.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi + lo > 0.0) {
        return Err(Error::NonPositiveDenominator(hi + lo));
    }
    if peaks.len() < 2 {
        return Ok(0.0);
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let (i, j) = (peaks[0].0.min(peaks[1].0), peaks[0].0.max(peaks[1].0));
    let max = 0.5 * (peaks[0].1 + peaks[1].1);
    let min = profile[i..=j].iter().cloned().fold(f64::INFINITY, f64::min);
    ratio(max, min)
}

fn ratio(max: f64, min: f64) -> Result<f64> {
    let den = max + min;
    if !(den > 0.0) {
        return Err(Error::NonPositiveDenominator(den));
    }
    Ok(((max - min) / den).max(0.0))
}

/// Where the transmissive slits and the opaque gaps of a target sit along a
/// profile axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SlitLayout {
    pub slits: Vec<f64>,
    pub gaps: Vec<f64>,
    /// Half-width of the window averaged around each centre.
    pub window: f64,
}

impl SlitLayout {
    /// `count` slits with centre-to-centre `spacing`, centred on `center`;
    /// windows cover the central half of a half-spacing slit.
    pub fn regular(count: usize, spacing: f64, center: f64) -> Self {
        let n = count as f64;
        let slits: Vec<f64> = (0..count).map(|i| center + (i as f64 - (n - 1.0) / 2.0) * spacing).collect();
        let gaps = slits.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        SlitLayout { slits, gaps, window: spacing / 8.0 }
    }

    /// The same layout seen through a transverse magnification.
    pub fn scaled(&self, m: f64) -> Self {
        SlitLayout {
            slits: self.slits.iter().map(|c| c * m).collect(),
            gaps: self.gaps.iter().map(|c| c * m).collect(),
            window: self.window * abs(m),
        }
    }
}

fn window_mean(p: &Profile, c: f64, w: f64) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, v) in p.coords.iter().zip(&p.values) {
        if abs(x - c) <= w {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        p.at(c)
    } else {
        Some(sum / n as f64)
    }
}

/// Visibility between the mean level inside the slits and inside the gaps,
/// each averaged over the layout's window around the known centres. Windows
/// that hold no sample use the interpolated value at the centre.
pub fn structured_visibility(profile: &Profile, layout: &SlitLayout) -> Result<f64> {
    if layout.slits.is_empty() || layout.gaps.is_empty() {
        return Err(Error::InvalidArgument("layout needs slits and gaps".into()));
    }
    let mut hi = Vec::with_capacity(layout.slits.len());
    for &c in &layout.slits {
        hi.push(window_mean(profile, c, layout.window).ok_or(Error::EmptyRegion)?);
    }
    let mut lo = Vec::with_capacity(layout.gaps.len());
    for &c in &layout.gaps {
        lo.push(window_mean(profile, c, layout.window).ok_or(Error::EmptyRegion)?);
    }
    ratio(mean(&hi), mean(&lo))
}

/// Signal-to-noise estimate over a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Finite(f64),
    /// The region has zero spread.
    Unbounded,
}

impl Snr {
    pub fn value(self) -> Option<f64> {
        match self {
            Snr::Finite(v) => Some(v),
            Snr::Unbounded => None,
        }
    }
}

/// Mean over population standard deviation of the values selected by `region`.
pub fn estimate_snr(values: &[f64], region: &[bool]) -> Result<Snr> {
    if values.len() != region.len() {
        return Err(Error::DimensionMismatch { expected: values.len(), got: region.len() });
    }
    let sel: Vec<f64> = values.iter().zip(region).filter(|(_, &r)| r).map(|(v, _)| *v).collect();
    if sel.len() < 2 {
        return Err(Error::EmptyRegion);
    }
    let sd = sqrt(variance(&sel));
    if sd == 0.0 {
        return Ok(Snr::Unbounded);
    }
    Ok(Snr::Finite(mean(&sel) / sd))
}

/// `SNR(N) = (a + b / N)^(-1/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrModel {
    pub a: f64,
    pub b: f64,
    /// RMS of `SNR_i - model(N_i)`.
    pub rms_residual: f64,
    pub r_squared: f64,
}

impl SnrModel {
    pub fn new(a: f64, b: f64) -> Self {
        SnrModel { a, b, rms_residual: 0.0, r_squared: 1.0 }
    }

    pub fn predict(&self, n_t: f64) -> f64 {
        1.0 / sqrt(self.a + self.b / n_t)
    }

    /// Limit of the model for infinitely many frames.
    pub fn asymptote(&self) -> f64 {
        1.0 / sqrt(self.a)
    }
}

fn residuals(points: &[(f64, f64)], a: f64, b: f64) -> Vec<f64> {
    points.iter().map(|&(n, s)| s - 1.0 / sqrt(a + b / n)).collect()
}

/// Least-squares fit of the saturating SNR model.
///
/// The linear problem `1/SNR^2 = a + b/N` seeds a Levenberg-Marquardt
/// refinement of the SNR residuals in `(ln a, ln b)`.
pub fn fit_snr(points: &[(f64, f64)]) -> Result<SnrModel> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit("at least two points are required"));
    }
    if points.iter().any(|&(n, s)| !(n > 0.0) || !(s > 0.0) || !n.is_finite() || !s.is_finite()) {
        return Err(Error::DegenerateFit("frame counts and SNR values must be positive"));
    }
    let xs: Vec<f64> = points.iter().map(|p| 1.0 / p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| 1.0 / (p.1 * p.1)).collect();
    let mx = mean(&xs);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) || sxx < 1e-24 * mx * mx * xs.len() as f64 {
        return Err(Error::DegenerateFit("frame counts must be distinct"));
    }
    let my = mean(&ys);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b0 = sxy / sxx;
    let a0 = my - b0 * mx;
    let floor_a = 1e-9 * my;
    let floor_b = 1e-9 * my / mx;
    let (mut u, mut v) = (log(a0.max(floor_a)), log(b0.max(floor_b)));

    let cost = |u: f64, v: f64| residuals(points, exp(u), exp(v)).iter().map(|r| r * r).sum::<f64>();
    let mut c = cost(u, v);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let (a, b) = (exp(u), exp(v));
        // Jacobian of the model with respect to (ln a, ln b)
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (&(n, s), r) in points.iter().zip(residuals(points, a, b)) {
            let q = a + b / n;
            let d = -0.5 / (q * sqrt(q));
            let j = [d * a, d * b / n];
            for p in 0..2 {
                jtr[p] += j[p] * r;
                for k in 0..2 {
                    jtj[p][k] += j[p] * j[k];
                }
            }
            let _ = s;
        }
        let mut improved = false;
        for _ in 0..30 {
            let m = [[jtj[0][0] * (1.0 + lambda), jtj[0][1]], [jtj[1][0], jtj[1][1] * (1.0 + lambda)]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if !(abs(det) > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let du = (m[1][1] * jtr[0] - m[0][1] * jtr[1]) / det;
            let dv = (m[0][0] * jtr[1] - m[1][0] * jtr[0]) / det;
            let (nu, nv) = (u + du, v + dv);
            let nc = cost(nu, nv);
            if nc.is_finite() && nc <= c {
                let rel = (c - nc) / c.max(1e-300);
                u = nu;
                v = nv;
                c = nc;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let (a, b) = (exp(u), exp(v));
    let res = residuals(points, a, b);
    let ss_res: f64 = res.iter().map(|r| r * r).sum();
    let snrs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let ms = mean(&snrs);
    let ss_tot: f64 = snrs.iter().map(|s| (s - ms) * (s - ms)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(SnrModel { a, b, rms_residual: sqrt(ss_res / points.len() as f64), r_squared })
}

/// Which resolution curve is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Curve {
    Refocused,
    ConventionalA,
    ConventionalB,
}

impl Curve {
    pub const ALL: [Curve; 3] = [Curve::Refocused, Curve::ConventionalA, Curve::ConventionalB];

    pub fn name(self) -> &'static str {
        match self {
            Curve::Refocused => "cpi",
            Curve::ConventionalA => "conventional_a",
            Curve::ConventionalB => "conventional_b",
        }
    }
}

/// Smallest feature size in `[lo, hi]` whose visibility reaches
/// `threshold`, by bisection with `iterations` halvings. Returns `lo` when
/// the smallest size is already resolved.
pub fn resolvable_feature<F>(mut vis: F, lo: f64, hi: f64, threshold: f64, iterations: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let v_hi = vis(hi)?;
    if v_hi < threshold {
        let v_lo = vis(lo)?;
        return Err(Error::NonBracketing { v_min: v_lo, v_max: v_hi });
    }
    if vis(lo)? >= threshold {
        return Ok(lo);
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..iterations {
        let m = 0.5 * (a + b);
        if vis(m)? >= threshold {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(b)
}

/// Resolvable feature size per `z` for each curve (mm), `None` where even the
/// largest feature is unresolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionCurve {
    pub z: Vec<f64>,
    pub refocused: Vec<Option<f64>>,
    pub conventional_a: Vec<Option<f64>>,
    pub conventional_b: Vec<Option<f64>>,
}

impl ResolutionCurve {
    pub fn curve(&self, c: Curve) -> &[Option<f64>] {
        match c {
            Curve::Refocused => &self.refocused,
            Curve::ConventionalA => &self.conventional_a,
            Curve::ConventionalB => &self.conventional_b,
        }
    }
}

/// Feature-size search range and precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub min_feature: f64,
    pub max_feature: f64,
    pub iterations: usize,
    pub threshold: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { min_feature: 0.02, max_feature: 1.0, iterations: 6, threshold: RESOLUTION_VISIBILITY }
    }
}

/// Resolution of every curve at every `z`. `vis(curve, z, feature)` returns
/// the visibility of a target with the given feature size.
pub fn resolution_sweep<F>(z: &[f64], opts: &SweepOptions, mut vis: F) -> Result<ResolutionCurve>
where
    F: FnMut(Curve, f64, f64) -> Result<f64>,
{
    if !(opts.min_feature > 0.0 && opts.max_feature > opts.min_feature) || opts.iterations < 4 {
        return Err(Error::InvalidArgument("feature range must be increasing and iterations >= 4".into()));
    }
    let mut out = ResolutionCurve { z: z.to_vec(), refocused: vec![], conventional_a: vec![], conventional_b: vec![] };
    for &zi in z {
        for c in Curve::ALL {
            let r = match resolvable_feature(|f| vis(c, zi, f), opts.min_feature, opts.max_feature, opts.threshold, opts.iterations) {
                Ok(f) => Some(f),
                Err(Error::NonBracketing { .. }) => None,
                Err(e) => return Err(e),
            };
            match c {
                Curve::Refocused => out.refocused.push(r),
                Curve::ConventionalA => out.conventional_a.push(r),
                Curve::ConventionalB => out.conventional_b.push(r),
            }
        }
    }
    Ok(out)
}

/// An axial edge located to within `[inner, outer]`: `inner` is resolved,
/// `outer` is not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub inner: f64,
    pub outer: f64,
}

/// The axial range over which a feature stays resolved around a plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lower: Edge,
    pub upper: Edge,
}

impl Band {
    /// Width guaranteed resolved.
    pub fn min_width(&self) -> f64 {
        self.upper.inner - self.lower.inner
    }

    /// Upper bound on the width.
    pub fn max_width(&self) -> f64 {
        self.upper.outer - self.lower.outer
    }
}

fn bisect_edge<F: FnMut(f64) -> Result<bool>>(resolved: &mut F, mut inner: f64, mut outer: f64, tol: f64) -> Result<Edge> {
    while abs(outer - inner) > tol {
        let m = 0.5 * (inner + outer);
        if resolved(m)? {
            inner = m;
        } else {
            outer = m;
        }
    }
    Ok(Edge { inner, outer })
}

/// Bisects both edges of the band of `z` around `z_in` where `resolved(z)`
/// holds. `z_in` must be resolved and the limits unresolved.
pub fn axial_band<F>(mut resolved: F, z_in: f64, z_min: f64, z_max: f64, tol: f64) -> Result<Band>
where
    F: FnMut(f64) -> Result<bool>,
{
    if !(z_min < z_in && z_in < z_max) || !(tol > 0.0) {
        return Err(Error::InvalidArgument("band search needs z_min < z_in < z_max and tol > 0".into()));
    }
    if !resolved(z_in)? {
        return Err(Error::NonBracketing { v_min: 0.0, v_max: 0.0 });
    }
    if resolved(z_min)? || resolved(z_max)? {
        return Err(Error::InvalidArgument("band extends past the search limits".into()));
    }
    let lower = bisect_edge(&mut resolved, z_in, z_min, tol)?;
    let upper = bisect_edge(&mut resolved, z_in, z_max, tol)?;
    Ok(Band { lower, upper })
}

/// How the blur spot is scaled to the object plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CocProjection {
    /// Blur diameter `2 NA |z - z_f|`.
    Unity,
    /// Blur diameter `2 NA |z - z_f| min(z, z_f) / z`.
    NearPlaneRatio,
}

/// Geometric blur diameter at `z` of a camera focused on `z_f` (mm).
pub fn coc_blur(cfg: &OpticalConfig, z: f64, z_f: f64, projection: CocProjection) -> f64 {
    let d = 2.0 * cfg.na_object * abs(z - z_f);
    match projection {
        CocProjection::Unity => d,
        CocProjection::NearPlaneRatio => d * z.min(z_f) / z,
    }
}

/// Axial interval around `z_f` where the blur stays below `feature` (mm).
pub fn coc_curve(cfg: &OpticalConfig, feature: f64, z_f: f64, projection: CocProjection) -> (f64, f64) {
    let na2 = 2.0 * cfg.na_object;
    let half = feature / na2;
    match projection {
        CocProjection::Unity => (z_f - half, z_f + half),
        CocProjection::NearPlaneRatio => {
            let k = feature / (na2 * z_f);
            let hi = if k < 1.0 { z_f / (1.0 - k) } else { f64::INFINITY };
            (z_f - half, hi)
        }
    }
}
