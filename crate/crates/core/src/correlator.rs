//! Streaming intensity-fluctuation correlator for binary frame stacks.
//!
//! Frames are reduced to raw integer moments (`sum_ab`, `sum_a`, `sum_b`,
//! `n_t`) so accumulators can be merged exactly and finalized at any time into
//! `<N_a N_b> - <N_a><N_b>`.
//!
//! Two fast paths produce accumulators identical to the per-frame loop:
//! per-pixel time bitsets combined with AND and popcount when pixels are not
//! binned, and blocked integer dot products of per-bin count series otherwise.
//! Both expose [`ProductKernel::add_rows`] so callers can split the
//! accumulator into row blocks and fill them on separate threads.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::Roi;
use crate::spad::FrameStack;
use crate::{Arm, Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// One correlation per pair of (binned) pixels.
    Full4d,
    /// Counts summed along `x` inside the ROI before correlating rows.
    Reduced1d,
}

/// Which pixels are correlated and how they are grouped.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// Frame size of one arm (pixels).
    pub width: usize,
    pub height: usize,
    pub roi: [Roi; 2],
    pub binning: usize,
    pub mode: Mode,
    pub pixel_pitch_mm: f64,
}

impl Geometry {
    pub fn full(width: usize, height: usize, binning: usize, mode: Mode, pixel_pitch_mm: f64) -> Self {
        Geometry { width, height, roi: [Roi::full(width, height); 2], binning, mode, pixel_pitch_mm }
    }

    pub fn validate(&self) -> Result<()> {
        if self.binning == 0 {
            return Err(Error::InvalidArgument("binning must be >= 1".into()));
        }
        for r in &self.roi {
            if !r.fits(self.width, self.height) || r.width == 0 || r.height == 0 {
                return Err(Error::InvalidArgument(alloc::format!(
                    "roi {},{},{},{} does not fit a {}x{} frame",
                    r.x, r.y, r.width, r.height, self.width, self.height
                )));
            }
            let cols_ok = self.mode == Mode::Reduced1d || r.width % self.binning == 0;
            if !cols_ok || r.height % self.binning != 0 {
                return Err(Error::InvalidArgument("binning must divide the roi".into()));
            }
        }
        Ok(())
    }

    fn roi_of(&self, arm: Arm) -> &Roi {
        &self.roi[arm as usize]
    }

    /// `[cols, rows]` of bins on one arm.
    pub fn bins(&self, arm: Arm) -> [usize; 2] {
        let r = self.roi_of(arm);
        match self.mode {
            Mode::Full4d => [r.width / self.binning, r.height / self.binning],
            Mode::Reduced1d => [1, r.height / self.binning],
        }
    }

    pub fn n_bins(&self, arm: Arm) -> usize {
        let [c, r] = self.bins(arm);
        c * r
    }

    /// Pixels per bin.
    pub fn bin_area(&self, arm: Arm) -> u64 {
        match self.mode {
            Mode::Full4d => (self.binning * self.binning) as u64,
            Mode::Reduced1d => (self.roi_of(arm).width * self.binning) as u64,
        }
    }

    /// Largest frame count whose co-fire sums cannot overflow `u64`.
    pub fn max_frames(&self) -> u64 {
        u64::MAX / (self.bin_area(Arm::A) * self.bin_area(Arm::B))
    }

    /// Fails when `n_frames` could overflow the accumulator.
    pub fn check_capacity(&self, n_frames: u64) -> Result<()> {
        if n_frames > self.max_frames() {
            return Err(Error::Overflow(alloc::format!(
                "{n_frames} frames exceed the {} frame limit of this binning",
                self.max_frames()
            )));
        }
        Ok(())
    }

    /// Physical centre of bin 0 and bin pitch on one arm, relative to the
    /// arm centre.
    pub fn axis(&self, arm: Arm) -> (Point, f64) {
        let r = self.roi_of(arm);
        let b = self.binning as f64;
        let p = self.pixel_pitch_mm;
        let y = (r.y as f64 + b / 2.0 - self.height as f64 / 2.0) * p;
        let x = match self.mode {
            Mode::Full4d => (r.x as f64 + b / 2.0 - self.width as f64 / 2.0) * p,
            Mode::Reduced1d => (r.x as f64 + r.width as f64 / 2.0 - self.width as f64 / 2.0) * p,
        };
        ([x, y], p * b)
    }

    /// Adds the bin counts of one packed plane into `out`.
    pub fn count_into(&self, arm: Arm, plane: &[u8], out: &mut [u32]) {
        let r = *self.roi_of(arm);
        let stride = self.width.div_ceil(8);
        let cols = self.bins(arm)[0];
        let b = self.binning;
        let (x0, x1) = (r.x, r.x + r.width);
        for y in r.y..r.y + r.height {
            let row_bin = (y - r.y) / b * cols;
            let row = &plane[y * stride..(y + 1) * stride];
            for byte_i in x0 / 8..x1.div_ceil(8) {
                let mut byte = row[byte_i];
                if byte == 0 {
                    continue;
                }
                let base = byte_i * 8;
                if base < x0 {
                    byte &= 0xff >> (x0 - base);
                }
                if base + 8 > x1 {
                    byte &= 0xffu8 << (base + 8 - x1);
                }
                while byte != 0 {
                    let bit = byte.leading_zeros() as usize;
                    byte &= !(0x80 >> bit);
                    let x = base + bit;
                    let bin = match self.mode {
                        Mode::Full4d => row_bin + (x - r.x) / b,
                        Mode::Reduced1d => row_bin,
                    };
                    out[bin] += 1;
                }
            }
        }
    }
}

/// Raw moments of the two arms' (binned) counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrelationAccumulator {
    pub geometry: GeometryKey,
    pub n_a: usize,
    pub n_b: usize,
    /// Co-fire sums, row-major over `(bin_a, bin_b)`.
    pub sum_ab: Vec<u64>,
    pub sum_a: Vec<u64>,
    pub sum_b: Vec<u64>,
    pub n_t: u64,
}

/// Geometry stored with an accumulator; compared bitwise on merge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeometryKey {
    pub width: usize,
    pub height: usize,
    pub roi: [Roi; 2],
    pub binning: usize,
    pub mode: Mode,
    pub pixel_pitch_bits: u64,
}

impl GeometryKey {
    pub fn geometry(&self) -> Geometry {
        Geometry {
            width: self.width,
            height: self.height,
            roi: self.roi,
            binning: self.binning,
            mode: self.mode,
            pixel_pitch_mm: f64::from_bits(self.pixel_pitch_bits),
        }
    }
}

impl From<&Geometry> for GeometryKey {
    fn from(g: &Geometry) -> Self {
        GeometryKey {
            width: g.width,
            height: g.height,
            roi: g.roi,
            binning: g.binning,
            mode: g.mode,
            pixel_pitch_bits: g.pixel_pitch_mm.to_bits(),
        }
    }
}

impl CorrelationAccumulator {
    pub fn new(geometry: &Geometry) -> Result<Self> {
        geometry.validate()?;
        let (n_a, n_b) = (geometry.n_bins(Arm::A), geometry.n_bins(Arm::B));
        Ok(CorrelationAccumulator {
            geometry: geometry.into(),
            n_a,
            n_b,
            sum_ab: vec![0; n_a * n_b],
            sum_a: vec![0; n_a],
            sum_b: vec![0; n_b],
            n_t: 0,
        })
    }

    /// Bytes held by the accumulator arrays.
    pub fn memory_bytes(&self) -> usize {
        8 * (self.sum_ab.len() + self.sum_a.len() + self.sum_b.len())
    }

    fn reserve(&self, frames: u64) -> Result<u64> {
        let total = self.n_t.checked_add(frames).ok_or_else(|| Error::Overflow("frame count".into()))?;
        self.geometry.geometry().check_capacity(total)?;
        Ok(total)
    }

    /// Adds one frame given each arm's packed plane.
    pub fn accumulate(&mut self, frame_a: &[u8], frame_b: &[u8]) -> Result<()> {
        let g = self.geometry.geometry();
        let pb = g.width.div_ceil(8) * g.height;
        for f in [frame_a, frame_b] {
            if f.len() != pb {
                return Err(Error::DimensionMismatch { expected: pb, got: f.len() });
            }
        }
        let total = self.reserve(1)?;
        let mut ca = vec![0u32; self.n_a];
        let mut cb = vec![0u32; self.n_b];
        g.count_into(Arm::A, frame_a, &mut ca);
        g.count_into(Arm::B, frame_b, &mut cb);
        self.add_counts(&ca, &cb);
        self.n_t = total;
        Ok(())
    }

    fn add_counts(&mut self, ca: &[u32], cb: &[u32]) {
        for (i, &a) in ca.iter().enumerate() {
            self.sum_a[i] += a as u64;
            if a == 0 {
                continue;
            }
            let row = &mut self.sum_ab[i * self.n_b..(i + 1) * self.n_b];
            for (s, &b) in row.iter_mut().zip(cb) {
                *s += a as u64 * b as u64;
            }
        }
        for (s, &b) in self.sum_b.iter_mut().zip(cb) {
            *s += b as u64;
        }
    }

    /// Adds every frame of `stack` one at a time.
    pub fn accumulate_stack(&mut self, stack: &FrameStack) -> Result<()> {
        for f in 0..stack.n_frames() {
            self.accumulate(stack.plane(Arm::A, f), stack.plane(Arm::B, f))?;
        }
        Ok(())
    }

    /// Elementwise sum with another accumulator over the same geometry.
    pub fn merge(&mut self, other: &CorrelationAccumulator) -> Result<()> {
        if self.geometry != other.geometry {
            return Err(Error::GridMismatch("accumulators cover different geometries"));
        }
        let total = self.reserve(other.n_t)?;
        for (a, b) in self.sum_ab.iter_mut().zip(&other.sum_ab) {
            *a += b;
        }
        for (a, b) in self.sum_a.iter_mut().zip(&other.sum_a) {
            *a += b;
        }
        for (a, b) in self.sum_b.iter_mut().zip(&other.sum_b) {
            *a += b;
        }
        self.n_t = total;
        Ok(())
    }

    /// Adds the products and marginals of a chunk.
    pub fn absorb<K: ProductKernel + ?Sized>(&mut self, chunk: &K) -> Result<()> {
        if chunk.shape() != (self.n_a, self.n_b) {
            return Err(Error::DimensionMismatch { expected: self.n_a * self.n_b, got: chunk.shape().0 * chunk.shape().1 });
        }
        let total = self.reserve(chunk.frames() as u64)?;
        chunk.add_rows(0, &mut self.sum_ab);
        self.absorb_marginals_unchecked(chunk);
        self.n_t = total;
        Ok(())
    }

    /// Adds a chunk's marginals and frame count after its products were
    /// added through [`ProductKernel::add_rows`] by the caller.
    pub fn absorb_marginals<K: ProductKernel + ?Sized>(&mut self, chunk: &K) -> Result<()> {
        let total = self.reserve(chunk.frames() as u64)?;
        self.absorb_marginals_unchecked(chunk);
        self.n_t = total;
        Ok(())
    }

    fn absorb_marginals_unchecked<K: ProductKernel + ?Sized>(&mut self, chunk: &K) {
        let (a, b) = chunk.marginals();
        for (s, v) in self.sum_a.iter_mut().zip(a) {
            *s += v;
        }
        for (s, v) in self.sum_b.iter_mut().zip(b) {
            *s += v;
        }
    }

    /// `sum_ab / n - (sum_a / n)(sum_b / n)` with the numerator formed
    /// exactly in integers.
    pub fn finalize(&self) -> Result<CorrelationTensor> {
        if self.n_t < 2 {
            return Err(Error::InsufficientStatistics { n_t: self.n_t });
        }
        let n = self.n_t as i128;
        let inv = 1.0 / (self.n_t as f64 * self.n_t as f64);
        let mut values = Vec::with_capacity(self.sum_ab.len());
        for i in 0..self.n_a {
            let sa = self.sum_a[i] as i128;
            for j in 0..self.n_b {
                let num = n * self.sum_ab[i * self.n_b + j] as i128 - sa * self.sum_b[j] as i128;
                values.push(num as f64 * inv);
            }
        }
        let g = self.geometry.geometry();
        let (oa, pa) = g.axis(Arm::A);
        let (ob, pb) = g.axis(Arm::B);
        Ok(CorrelationTensor::new(g.bins(Arm::A), g.bins(Arm::B), pa, pb, oa, ob, self.n_t, values))
    }

    /// Mean counts per bin of one arm.
    pub fn mean_counts(&self, arm: Arm) -> Vec<f64> {
        let s = match arm {
            Arm::A => &self.sum_a,
            Arm::B => &self.sum_b,
        };
        let n = self.n_t.max(1) as f64;
        s.iter().map(|&v| v as f64 / n).collect()
    }
}

/// A block of frames prepared for the product kernels.
pub trait ProductKernel {
    /// `(n_a, n_b)`.
    fn shape(&self) -> (usize, usize);
    fn frames(&self) -> usize;
    /// Adds co-fire sums of accumulator rows `row0..row0 + out.len() / n_b`
    /// into `out`.
    fn add_rows(&self, row0: usize, out: &mut [u64]);
    /// Per-bin count totals of each arm.
    fn marginals(&self) -> (Vec<u64>, Vec<u64>);
}

/// Per-pixel time bitsets for unbinned full-resolution correlation.
#[derive(Debug, Clone)]
pub struct BitChunk {
    frames: usize,
    words: usize,
    n_a: usize,
    n_b: usize,
    a: Vec<u64>,
    b: Vec<u64>,
}

impl BitChunk {
    /// Transposes frames `start..end` of `stack` into per-pixel bitsets.
    pub fn from_stack(stack: &FrameStack, geometry: &Geometry, start: usize, end: usize) -> Result<Self> {
        if geometry.binning != 1 || geometry.mode != Mode::Full4d {
            return Err(Error::InvalidArgument("bit chunks need binning 1 in full4d mode".into()));
        }
        check_stack(stack, geometry)?;
        let frames = end - start;
        let words = frames.div_ceil(64);
        let mut sets = [Vec::new(), Vec::new()];
        for (k, arm) in Arm::BOTH.into_iter().enumerate() {
            let r = geometry.roi[k];
            let mut bits = vec![0u64; r.width * r.height * words];
            let stride = stack.stride();
            for (t, f) in (start..end).enumerate() {
                let plane = stack.plane(arm, f);
                let (w, mask) = (t / 64, 1u64 << (t % 64));
                for y in 0..r.height {
                    let row = &plane[(r.y + y) * stride..];
                    for x in 0..r.width {
                        let px = r.x + x;
                        if row[px / 8] & (0x80 >> (px % 8)) != 0 {
                            bits[(y * r.width + x) * words + w] |= mask;
                        }
                    }
                }
            }
            sets[k] = bits;
        }
        let [a, b] = sets;
        Ok(BitChunk {
            frames,
            words,
            n_a: geometry.n_bins(Arm::A),
            n_b: geometry.n_bins(Arm::B),
            a,
            b,
        })
    }
}

#[inline]
fn and_popcount(x: &[u64], y: &[u64]) -> u64 {
    x.iter().zip(y).map(|(a, b)| (a & b).count_ones() as u64).sum()
}

impl ProductKernel for BitChunk {
    fn shape(&self) -> (usize, usize) {
        (self.n_a, self.n_b)
    }

    fn frames(&self) -> usize {
        self.frames
    }

    fn add_rows(&self, row0: usize, out: &mut [u64]) {
        let w = self.words;
        for (r, dst) in out.chunks_exact_mut(self.n_b).enumerate() {
            let i = row0 + r;
            let ai = &self.a[i * w..(i + 1) * w];
            if ai.iter().all(|&v| v == 0) {
                continue;
            }
            for (j, d) in dst.iter_mut().enumerate() {
                *d += and_popcount(ai, &self.b[j * w..(j + 1) * w]);
            }
        }
    }

    fn marginals(&self) -> (Vec<u64>, Vec<u64>) {
        let w = self.words;
        let ones = |v: &[u64], n: usize| (0..n).map(|i| v[i * w..(i + 1) * w].iter().map(|x| x.count_ones() as u64).sum()).collect();
        (ones(&self.a, self.n_a), ones(&self.b, self.n_b))
    }
}

/// Lanes processed together by the count kernel; chunk lengths are padded to
/// a multiple of this.
const LANES: usize = 32;

/// Per-bin count series of a block of frames, bin-major, for binned or
/// reduced correlation.
#[derive(Debug, Clone)]
pub struct CountChunk {
    frames: usize,
    padded: usize,
    n_a: usize,
    n_b: usize,
    a: Vec<i16>,
    b: Vec<i16>,
}

impl CountChunk {
    /// Largest chunk length for `geometry` that keeps the 32-bit partial sums
    /// exact, or `None` when counts do not fit 16 bits.
    pub fn max_frames(geometry: &Geometry) -> Option<usize> {
        let (aa, ab) = (geometry.bin_area(Arm::A), geometry.bin_area(Arm::B));
        if aa > i16::MAX as u64 || ab > i16::MAX as u64 {
            return None;
        }
        let per_frame = aa * ab;
        let n = (i32::MAX as u64 / per_frame) as usize / LANES * LANES;
        (n >= LANES).then_some(n)
    }

    pub fn from_stack(stack: &FrameStack, geometry: &Geometry, start: usize, end: usize) -> Result<Self> {
        check_stack(stack, geometry)?;
        let frames = end - start;
        match Self::max_frames(geometry) {
            Some(m) if frames <= m => {}
            _ => return Err(Error::Overflow("chunk too long for 32-bit partial sums".into())),
        }
        let padded = frames.div_ceil(LANES) * LANES;
        let (n_a, n_b) = (geometry.n_bins(Arm::A), geometry.n_bins(Arm::B));
        let mut a = vec![0i16; n_a * padded];
        let mut b = vec![0i16; n_b * padded];
        let mut ca = vec![0u32; n_a];
        let mut cb = vec![0u32; n_b];
        for (t, f) in (start..end).enumerate() {
            ca.iter_mut().for_each(|v| *v = 0);
            cb.iter_mut().for_each(|v| *v = 0);
            geometry.count_into(Arm::A, stack.plane(Arm::A, f), &mut ca);
            geometry.count_into(Arm::B, stack.plane(Arm::B, f), &mut cb);
            for (i, &c) in ca.iter().enumerate() {
                a[i * padded + t] = c as i16;
            }
            for (j, &c) in cb.iter().enumerate() {
                b[j * padded + t] = c as i16;
            }
        }
        Ok(CountChunk { frames, padded, n_a, n_b, a, b })
    }

    fn series(&self, arm: Arm, i: usize) -> &[i16] {
        let v = match arm {
            Arm::A => &self.a,
            Arm::B => &self.b,
        };
        &v[i * self.padded..(i + 1) * self.padded]
    }
}

#[inline(always)]
fn dot_block<const R: usize, const C: usize>(a: [&[i16]; R], b: [&[i16]; C]) -> [[i32; C]; R] {
    const L: usize = 8;
    let mut acc = [[[0i32; L]; C]; R];
    let n = a[0].len();
    let mut t = 0;
    while t + 2 * L <= n {
        let av: [[i16; 2 * L]; R] = core::array::from_fn(|r| a[r][t..t + 2 * L].try_into().unwrap());
        let bv: [[i16; 2 * L]; C] = core::array::from_fn(|c| b[c][t..t + 2 * L].try_into().unwrap());
        for r in 0..R {
            for c in 0..C {
                for l in 0..L {
                    acc[r][c][l] += av[r][2 * l] as i32 * bv[c][2 * l] as i32
                        + av[r][2 * l + 1] as i32 * bv[c][2 * l + 1] as i32;
                }
            }
        }
        t += 2 * L;
    }
    let mut out = [[0i32; C]; R];
    for r in 0..R {
        for c in 0..C {
            out[r][c] = acc[r][c].iter().sum();
        }
    }
    out
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use core::arch::x86_64::*;

    #[cfg(any(test, feature = "std"))]
    pub fn has_avx512() -> bool {
        std::is_x86_feature_detected!("avx512f") && std::is_x86_feature_detected!("avx512bw")
    }

    #[cfg(not(any(test, feature = "std")))]
    pub fn has_avx512() -> bool {
        cfg!(all(target_feature = "avx512f", target_feature = "avx512bw"))
    }

    #[cfg(any(test, feature = "std"))]
    pub fn has_avx2() -> bool {
        std::is_x86_feature_detected!("avx2")
    }

    #[cfg(not(any(test, feature = "std")))]
    pub fn has_avx2() -> bool {
        cfg!(target_feature = "avx2")
    }

    /// Series lengths must be multiples of 16.
    #[target_feature(enable = "avx2")]
    pub unsafe fn block_avx2<const R: usize, const C: usize>(a: [&[i16]; R], b: [&[i16]; C]) -> [[i32; C]; R] {
        let n = a[0].len();
        let mut acc = [[_mm256_setzero_si256(); C]; R];
        let mut t = 0;
        while t + 16 <= n {
            let av: [__m256i; R] = core::array::from_fn(|r| unsafe { _mm256_loadu_si256(a[r].as_ptr().add(t) as *const __m256i) });
            for c in 0..C {
                let bv = unsafe { _mm256_loadu_si256(b[c].as_ptr().add(t) as *const __m256i) };
                for r in 0..R {
                    acc[r][c] = _mm256_add_epi32(acc[r][c], _mm256_madd_epi16(av[r], bv));
                }
            }
            t += 16;
        }
        let mut out = [[0i32; C]; R];
        for r in 0..R {
            for c in 0..C {
                let mut lanes = [0i32; 8];
                unsafe { _mm256_storeu_si256(lanes.as_mut_ptr() as *mut __m256i, acc[r][c]) };
                out[r][c] = lanes.iter().sum();
            }
        }
        out
    }

    /// Series lengths must be multiples of 32.
    #[target_feature(enable = "avx512f,avx512bw")]
    pub unsafe fn block_avx512<const R: usize, const C: usize>(a: [&[i16]; R], b: [&[i16]; C]) -> [[i32; C]; R] {
        let n = a[0].len();
        let mut acc = [[_mm512_setzero_si512(); C]; R];
        let mut t = 0;
        while t + 32 <= n {
            let av: [__m512i; R] = core::array::from_fn(|r| unsafe { _mm512_loadu_si512(a[r].as_ptr().add(t) as *const _) });
            for c in 0..C {
                let bv = unsafe { _mm512_loadu_si512(b[c].as_ptr().add(t) as *const _) };
                for r in 0..R {
                    acc[r][c] = _mm512_add_epi32(acc[r][c], _mm512_madd_epi16(av[r], bv));
                }
            }
            t += 32;
        }
        let mut out = [[0i32; C]; R];
        for r in 0..R {
            for c in 0..C {
                out[r][c] = _mm512_reduce_add_epi32(acc[r][c]);
            }
        }
        out
    }
}

/// Instruction set used by [`CountChunk`] products.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Isa {
    Portable,
    Avx2,
    Avx512,
}

impl Isa {
    /// Best instruction set available on the running CPU.
    pub fn detect() -> Isa {
        #[cfg(target_arch = "x86_64")]
        {
            if simd::has_avx512() {
                return Isa::Avx512;
            }
            if simd::has_avx2() {
                return Isa::Avx2;
            }
        }
        Isa::Portable
    }
}

impl CountChunk {
    #[inline(always)]
    fn blocked<const R: usize, const C: usize, F>(&self, row0: usize, out: &mut [u64], block: F)
    where
        F: Fn([&[i16]; R], [&[i16]; C]) -> [[i32; C]; R],
    {
        let rows = out.len() / self.n_b;
        let nb = self.n_b;
        let mut r = 0;
        while r < rows {
            let rr = (rows - r).min(R);
            let i = row0 + r;
            let mut j = 0;
            while j < nb {
                let cc = (nb - j).min(C);
                if rr == R && cc == C {
                    let a = core::array::from_fn(|k| self.series(Arm::A, i + k));
                    let b = core::array::from_fn(|k| self.series(Arm::B, j + k));
                    for (k, row) in block(a, b).iter().enumerate() {
                        let dst = &mut out[(r + k) * nb + j..(r + k) * nb + j + C];
                        for (d, &v) in dst.iter_mut().zip(row) {
                            *d += v as u64;
                        }
                    }
                } else {
                    for k in 0..rr {
                        for m in 0..cc {
                            let [[v]] = dot_block::<1, 1>([self.series(Arm::A, i + k)], [self.series(Arm::B, j + m)]);
                            out[(r + k) * nb + j + m] += v as u64;
                        }
                    }
                }
                j += cc;
            }
            r += rr;
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn add_rows_avx2(&self, row0: usize, out: &mut [u64]) {
        self.blocked::<3, 4, _>(row0, out, |a, b| unsafe { simd::block_avx2(a, b) });
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f,avx512bw")]
    unsafe fn add_rows_avx512(&self, row0: usize, out: &mut [u64]) {
        self.blocked::<6, 4, _>(row0, out, |a, b| unsafe { simd::block_avx512(a, b) });
    }

    /// [`ProductKernel::add_rows`] with an explicit instruction set, which
    /// must be supported by the running CPU.
    pub fn add_rows_with(&self, isa: Isa, row0: usize, out: &mut [u64]) {
        match isa {
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 if simd::has_avx512() => unsafe { self.add_rows_avx512(row0, out) },
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 if simd::has_avx2() => unsafe { self.add_rows_avx2(row0, out) },
            _ => self.blocked::<4, 4, _>(row0, out, dot_block::<4, 4>),
        }
    }
}

impl ProductKernel for CountChunk {
    fn shape(&self) -> (usize, usize) {
        (self.n_a, self.n_b)
    }

    fn frames(&self) -> usize {
        self.frames
    }

    fn add_rows(&self, row0: usize, out: &mut [u64]) {
        self.add_rows_with(Isa::detect(), row0, out);
    }

    fn marginals(&self) -> (Vec<u64>, Vec<u64>) {
        let sum = |arm, n| (0..n).map(|i| self.series(arm, i).iter().map(|&v| v as u64).sum()).collect();
        (sum(Arm::A, self.n_a), sum(Arm::B, self.n_b))
    }
}

fn check_stack(stack: &FrameStack, geometry: &Geometry) -> Result<()> {
    if stack.width != geometry.width || stack.height != geometry.height {
        return Err(Error::DimensionMismatch {
            expected: geometry.width * geometry.height,
            got: stack.width * stack.height,
        });
    }
    Ok(())
}

/// Frames per chunk used by [`correlate_fast`].
pub const CHUNK_FRAMES: usize = 2048;

/// Which kernel [`correlate_fast`] uses for a geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Bits,
    Counts { chunk: usize },
    PerFrame,
}

pub fn kernel_kind(geometry: &Geometry) -> KernelKind {
    if geometry.binning == 1 && geometry.mode == Mode::Full4d {
        KernelKind::Bits
    } else {
        match CountChunk::max_frames(geometry) {
            Some(m) => KernelKind::Counts { chunk: m.min(CHUNK_FRAMES) },
            None => KernelKind::PerFrame,
        }
    }
}

/// Accumulator over every frame of `stack`, identical to feeding the frames
/// one by one to [`CorrelationAccumulator::accumulate`].
pub fn correlate_fast(stack: &FrameStack, geometry: &Geometry) -> Result<CorrelationAccumulator> {
    let mut acc = CorrelationAccumulator::new(geometry)?;
    check_stack(stack, geometry)?;
    geometry.check_capacity(stack.n_frames() as u64)?;
    let n = stack.n_frames();
    match kernel_kind(geometry) {
        KernelKind::Bits => {
            let mut start = 0;
            while start < n {
                let end = (start + CHUNK_FRAMES).min(n);
                acc.absorb(&BitChunk::from_stack(stack, geometry, start, end)?)?;
                start = end;
            }
        }
        KernelKind::Counts { chunk } => {
            let mut start = 0;
            while start < n {
                let end = (start + chunk).min(n);
                acc.absorb(&CountChunk::from_stack(stack, geometry, start, end)?)?;
                start = end;
            }
        }
        KernelKind::PerFrame => acc.accumulate_stack(stack)?,
    }
    Ok(acc)
}

/// Per-frame row counts of one arm after summing along `x` inside a ROI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReducedCounts {
    pub rows: usize,
    pub frames: usize,
    /// Frame-major counts.
    pub counts: Vec<u32>,
}

impl ReducedCounts {
    pub fn frame(&self, f: usize) -> &[u32] {
        &self.counts[f * self.rows..(f + 1) * self.rows]
    }
}

/// Sums each arm's bits along `x` inside its ROI, frame by frame.
pub fn reduce_1d(stack: &FrameStack, roi: [Roi; 2]) -> Result<[ReducedCounts; 2]> {
    let g = Geometry { width: stack.width, height: stack.height, roi, binning: 1, mode: Mode::Reduced1d, pixel_pitch_mm: 1.0 };
    g.validate()?;
    let out = Arm::BOTH.map(|arm| {
        let rows = g.n_bins(arm);
        let mut counts = vec![0u32; rows * stack.n_frames()];
        for f in 0..stack.n_frames() {
            g.count_into(arm, stack.plane(arm, f), &mut counts[f * rows..(f + 1) * rows]);
        }
        ReducedCounts { rows, frames: stack.n_frames(), counts }
    });
    Ok(out)
}

/// Finalized correlation over the bins of both arms.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTensor {
    /// `[cols, rows]` of bins on arm A.
    pub shape_a: [usize; 2],
    pub shape_b: [usize; 2],
    /// Bin pitch on each detector (mm).
    pub pitch: [f64; 2],
    /// Physical centre of bin 0 on each detector (mm).
    pub origin: [Point; 2],
    pub n_t: u64,
    /// Row-major over `(bin_a, bin_b)`, bins row-major with `y` outermost.
    pub values: Vec<f64>,
}

impl CorrelationTensor {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        shape_a: [usize; 2],
        shape_b: [usize; 2],
        pitch_a: f64,
        pitch_b: f64,
        origin_a: Point,
        origin_b: Point,
        n_t: u64,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(values.len(), shape_a[0] * shape_a[1] * shape_b[0] * shape_b[1]);
        CorrelationTensor { shape_a, shape_b, pitch: [pitch_a, pitch_b], origin: [origin_a, origin_b], n_t, values }
    }

    pub fn n_a(&self) -> usize {
        self.shape_a[0] * self.shape_a[1]
    }

    pub fn n_b(&self) -> usize {
        self.shape_b[0] * self.shape_b[1]
    }

    pub fn shape(&self, arm: Arm) -> [usize; 2] {
        match arm {
            Arm::A => self.shape_a,
            Arm::B => self.shape_b,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_b() + j]
    }

    /// Physical coordinate of bin `i` of one arm.
    pub fn coord(&self, arm: Arm, i: usize) -> Point {
        let k = arm as usize;
        let cols = self.shape(arm)[0];
        let (x, y) = (i % cols, i / cols);
        [self.origin[k][0] + x as f64 * self.pitch[k], self.origin[k][1] + y as f64 * self.pitch[k]]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Sum over the `x` bins of both arms, leaving a `(rows_a, rows_b)`
    /// tensor.
    pub fn integrate_x(&self) -> CorrelationTensor {
        let ([ca, ra], [cb, rb]) = (self.shape_a, self.shape_b);
        let mut values = vec![0.0; ra * rb];
        for ya in 0..ra {
            for xa in 0..ca {
                let i = ya * ca + xa;
                for yb in 0..rb {
                    let row = &self.values[i * self.n_b() + yb * cb..i * self.n_b() + (yb + 1) * cb];
                    values[ya * rb + yb] += row.iter().sum::<f64>();
                }
            }
        }
        let mid = |k: usize, c: usize| self.origin[k][0] + (c as f64 - 1.0) / 2.0 * self.pitch[k];
        CorrelationTensor::new(
            [1, ra],
            [1, rb],
            self.pitch[0],
            self.pitch[1],
            [mid(0, ca), self.origin[0][1]],
            [mid(1, cb), self.origin[1][1]],
            self.n_t,
            values,
        )
    }

    /// Marginal over arm B (sum over all `b` bins) for each `a` bin.
    pub fn marginal_a(&self) -> Vec<f64> {
        let nb = self.n_b();
        (0..self.n_a()).map(|i| self.values[i * nb..(i + 1) * nb].iter().sum()).collect()
    }
}
