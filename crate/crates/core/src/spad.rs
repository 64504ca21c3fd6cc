//! Binary single-photon frames: gate integration, Poisson detection with dark
//! counts, bit-packed frame stacks and linearity diagnostics.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::Roi;
use crate::math::{exp, round};
use crate::{Arm, Error, Result};

/// ROI-average fire rate above which the detector is flagged as saturating:
/// `1 - exp(-p)` deviates from `p` by about 10% there.
pub const SATURATION_THRESHOLD: f64 = 0.2;

/// Minimum frame count accepted by [`linearity_report`].
pub const MIN_LINEARITY_FRAMES: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SpadConfig {
    /// Photon detection efficiency, fill factor included.
    pub pde: f64,
    /// Dark counts per pixel per second.
    pub dark_rate: f64,
    /// Gate time (us).
    pub gate_time_us: f64,
    /// Expected photons per coherence cell on a pixel of unit normalized
    /// intensity.
    pub mean_photons_per_cell: f64,
}

impl SpadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pde > 0.0 && self.pde <= 1.0) {
            return Err(Error::InvalidArgument("pde must lie in (0, 1]".into()));
        }
        if !(self.dark_rate >= 0.0) {
            return Err(Error::InvalidArgument("dark rate must be >= 0".into()));
        }
        if !(self.gate_time_us > 0.0) {
            return Err(Error::InvalidArgument("gate time must be > 0".into()));
        }
        if !(self.mean_photons_per_cell >= 0.0) {
            return Err(Error::InvalidArgument("mean photons per cell must be >= 0".into()));
        }
        Ok(())
    }

    /// Expected dark counts per gate.
    pub fn dark_per_gate(&self) -> f64 {
        self.dark_rate * self.gate_time_us * 1e-6
    }

    /// Probability that a pixel fires given its normalized gate-averaged
    /// intensity and the number of coherence cells in the gate.
    pub fn fire_probability(&self, intensity: f64, m_cells: usize) -> f64 {
        let mu = self.mean_photons_per_cell * intensity * m_cells as f64;
        1.0 - exp(-(self.pde * mu + self.dark_per_gate()))
    }
}

/// `max(1, round(gate / t_ch))`.
pub fn cells_per_gate(gate_time_us: f64, coherence_time_us: f64) -> usize {
    let m = round(gate_time_us / coherence_time_us);
    if m < 1.0 {
        1
    } else {
        m as usize
    }
}

/// Mean of the per-cell intensities of one gate.
pub fn integrate_gate<'a, I>(cells: I) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut out: Vec<f64> = Vec::new();
    let mut m = 0usize;
    for cell in cells {
        if out.is_empty() {
            out = vec![0.0; cell.len()];
        }
        for (o, v) in out.iter_mut().zip(cell) {
            *o += v;
        }
        m += 1;
    }
    if m > 1 {
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

/// Draws one binary frame row-major into `out` (packed, MSB first).
pub fn detect_frame<R: Rng + ?Sized>(
    intensity: &[f64],
    width: usize,
    spad: &SpadConfig,
    m_cells: usize,
    rng: &mut R,
    out: &mut [u8],
) {
    let stride = width.div_ceil(8);
    out.iter_mut().for_each(|b| *b = 0);
    for (i, &v) in intensity.iter().enumerate() {
        let p = spad.fire_probability(v.max(0.0), m_cells);
        if rng.random::<f64>() < p {
            let (x, y) = (i % width, i / width);
            out[y * stride + x / 8] |= 0x80 >> (x % 8);
        }
    }
}

/// Where a frame stack came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: u64,
}

/// Bit-packed binary frames of both arms. Each arm plane is row-major with
/// rows padded to whole bytes and pixels packed most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameStack {
    pub width: usize,
    pub height: usize,
    n_frames: usize,
    a: Vec<u8>,
    b: Vec<u8>,
    pub provenance: Provenance,
}

impl FrameStack {
    pub fn new(width: usize, height: usize) -> Self {
        FrameStack { width, height, n_frames: 0, a: Vec::new(), b: Vec::new(), provenance: Provenance::default() }
    }

    pub fn zeroed(width: usize, height: usize, n_frames: usize) -> Self {
        let bytes = width.div_ceil(8) * height * n_frames;
        FrameStack { width, height, n_frames, a: vec![0; bytes], b: vec![0; bytes], provenance: Provenance::default() }
    }

    /// Builds a stack from concatenated packed planes of each arm.
    pub fn from_planes(width: usize, height: usize, a: Vec<u8>, b: Vec<u8>) -> Result<Self> {
        let pb = width.div_ceil(8) * height;
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
        }
        let n_frames = if pb == 0 { 0 } else { a.len() / pb };
        if pb * n_frames != a.len() {
            return Err(Error::DimensionMismatch { expected: pb * n_frames, got: a.len() });
        }
        Ok(FrameStack { width, height, n_frames, a, b, provenance: Provenance::default() })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn stride(&self) -> usize {
        self.width.div_ceil(8)
    }

    pub fn plane_bytes(&self) -> usize {
        self.stride() * self.height
    }

    pub fn plane(&self, arm: Arm, frame: usize) -> &[u8] {
        let pb = self.plane_bytes();
        let data = match arm {
            Arm::A => &self.a,
            Arm::B => &self.b,
        };
        &data[frame * pb..(frame + 1) * pb]
    }

    pub fn plane_mut(&mut self, arm: Arm, frame: usize) -> &mut [u8] {
        let pb = self.plane_bytes();
        let data = match arm {
            Arm::A => &mut self.a,
            Arm::B => &mut self.b,
        };
        &mut data[frame * pb..(frame + 1) * pb]
    }

    /// Mutable planes of both arms for one frame.
    pub fn planes_mut(&mut self, frame: usize) -> (&mut [u8], &mut [u8]) {
        let pb = self.plane_bytes();
        let r = frame * pb..(frame + 1) * pb;
        (&mut self.a[r.clone()], &mut self.b[r])
    }

    /// Mutable planes of every frame, in frame order.
    pub fn frames_mut(&mut self) -> Vec<(&mut [u8], &mut [u8])> {
        let pb = self.plane_bytes();
        if pb == 0 {
            return (0..self.n_frames).map(|_| (&mut [][..], &mut [][..])).collect();
        }
        self.a.chunks_exact_mut(pb).zip(self.b.chunks_exact_mut(pb)).collect()
    }

    /// All planes of one arm, frame after frame.
    pub fn planes(&self, arm: Arm) -> &[u8] {
        match arm {
            Arm::A => &self.a,
            Arm::B => &self.b,
        }
    }

    pub fn get(&self, arm: Arm, frame: usize, x: usize, y: usize) -> bool {
        self.plane(arm, frame)[y * self.stride() + x / 8] & (0x80 >> (x % 8)) != 0
    }

    pub fn set(&mut self, arm: Arm, frame: usize, x: usize, y: usize, bit: bool) {
        let stride = self.stride();
        let byte = &mut self.plane_mut(arm, frame)[y * stride + x / 8];
        if bit {
            *byte |= 0x80 >> (x % 8);
        } else {
            *byte &= !(0x80 >> (x % 8));
        }
    }

    /// Appends one frame given its packed planes.
    pub fn push_frame(&mut self, a: &[u8], b: &[u8]) -> Result<()> {
        let pb = self.plane_bytes();
        if a.len() != pb || b.len() != pb {
            return Err(Error::DimensionMismatch { expected: pb, got: a.len().max(b.len()) });
        }
        self.a.extend_from_slice(a);
        self.b.extend_from_slice(b);
        self.n_frames += 1;
        Ok(())
    }

    /// Appends every frame of `other`.
    pub fn append(&mut self, other: &FrameStack) -> Result<()> {
        if other.width != self.width || other.height != self.height {
            return Err(Error::DimensionMismatch { expected: self.width * self.height, got: other.width * other.height });
        }
        self.a.extend_from_slice(&other.a);
        self.b.extend_from_slice(&other.b);
        self.n_frames += other.n_frames;
        Ok(())
    }

    /// Copy of frames `start..end`.
    pub fn range(&self, start: usize, end: usize) -> FrameStack {
        let pb = self.plane_bytes();
        FrameStack {
            width: self.width,
            height: self.height,
            n_frames: end - start,
            a: self.a[start * pb..end * pb].to_vec(),
            b: self.b[start * pb..end * pb].to_vec(),
            provenance: self.provenance,
        }
    }
}

/// Fire rates reported by [`linearity_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearityReport {
    /// Mean fire rate over each arm's ROI.
    pub rate: [f64; 2],
    /// Per-pixel fire rate inside each ROI, row-major.
    pub pixel_rate: [Vec<f64>; 2],
    pub threshold: f64,
    /// True when an ROI-average rate exceeds `threshold`.
    pub saturating: bool,
}

pub fn linearity_report(stack: &FrameStack, roi: [Roi; 2], threshold: f64) -> Result<LinearityReport> {
    let n = stack.n_frames() as u64;
    if n < MIN_LINEARITY_FRAMES {
        return Err(Error::InsufficientStatistics { n_t: n });
    }
    let mut rate = [0.0; 2];
    let mut pixel_rate: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (k, arm) in Arm::BOTH.into_iter().enumerate() {
        let r = roi[k];
        if !r.fits(stack.width, stack.height) || r.width == 0 || r.height == 0 {
            return Err(Error::EmptyRegion);
        }
        let mut counts = vec![0u64; r.width * r.height];
        let stride = stack.stride();
        for f in 0..stack.n_frames() {
            let plane = stack.plane(arm, f);
            for y in 0..r.height {
                let row = &plane[(r.y + y) * stride..];
                for x in 0..r.width {
                    let px = r.x + x;
                    counts[y * r.width + x] += ((row[px / 8] >> (7 - px % 8)) & 1) as u64;
                }
            }
        }
        pixel_rate[k] = counts.iter().map(|&c| c as f64 / n as f64).collect();
        rate[k] = crate::math::mean(&pixel_rate[k]);
    }
    let saturating = rate.iter().any(|&r| r > threshold);
    Ok(LinearityReport { rate, pixel_rate, threshold, saturating })
}
