//! Simulated acquisitions of a one-dimensional scene.
//!
//! The wave model runs across the slits (`y`, the sensor rows). Every sensor
//! column sees an independent speckle realization of the same row profile,
//! which stands in for the decorrelation along the slit direction.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;

use crate::analysis::{Profile, SlitLayout};
use crate::config::{MaskKind, ObjectMask, PupilFunction, Roi, Setup, SlitOrientation};
use crate::correlator::{Geometry, Mode};
use crate::spad::{detect_frame, FrameStack, Provenance, SpadConfig};
use crate::wave::{build_kernels, DetectorSpec, Dimensionality, FieldSampler, GridSpec, KernelOptions, KernelPair};
use crate::{seeds, Arm, Error, Result};

/// Detector and noise settings of a simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneOptions {
    pub kernel: KernelOptions,
    pub spad: SpadConfig,
    /// Minimum detector subsamples per pixel.
    pub oversample: usize,
    /// Draw speckle from a pool of this many precomputed realizations instead
    /// of a fresh one per coherence cell.
    pub speckle_pool: Option<usize>,
}

impl Default for SceneOptions {
    fn default() -> Self {
        SceneOptions {
            kernel: KernelOptions::default(),
            spad: SpadConfig { pde: 0.5, dark_rate: 10.0, gate_time_us: 10.0, mean_photons_per_cell: 0.1 },
            oversample: 1,
            speckle_pool: None,
        }
    }
}

/// A mask, the setup that images it and the kernels linking the two.
#[derive(Debug, Clone)]
pub struct Scene {
    pub setup: Setup,
    pub mask: ObjectMask,
    pub pupil: PupilFunction,
    pub pair: KernelPair,
    pub options: SceneOptions,
    /// Divides raw intensities so that the brightest mean pixel is 1.
    pub scale: f64,
    pool: Option<Vec<[Vec<f64>; 2]>>,
}

impl Scene {
    pub fn new(setup: Setup, mask: ObjectMask, options: SceneOptions) -> Result<Self> {
        mask.validate().map_err(Error::InvalidConfig)?;
        options.spad.validate()?;
        let cfg = &setup.optics;
        let pupil = PupilFunction::from_config(cfg);
        let detector = DetectorSpec::line(setup.acquisition.height, cfg.pixel_pitch_mm(), options.oversample.max(1));
        let grid = GridSpec::auto(Dimensionality::One, cfg, &pupil, &setup.source, &mask, detector, &options.kernel)?;
        let pair = build_kernels(&mask, cfg, &pupil, &setup.source, &grid, &options.kernel)?;
        let peak = Arm::BOTH
            .into_iter()
            .flat_map(|arm| pair.mean_intensity(arm))
            .fold(0.0f64, f64::max);
        let scale = if peak > 0.0 { peak } else { 1.0 };
        let mut scene = Scene { setup, mask, pupil, pair, options, scale, pool: None };
        if let Some(n) = scene.options.speckle_pool {
            if n == 0 {
                return Err(Error::InvalidArgument("speckle pool must hold at least one realization".into()));
            }
            let seed = scene.setup.acquisition.seed;
            let rows = scene.rows();
            let mut sampler = FieldSampler::new(&scene.pair, seed);
            let mut scratch = sampler.scratch();
            let mut pool = Vec::with_capacity(n);
            for i in 0..n as u64 {
                let (mut a, mut b) = (vec![0.0; rows], vec![0.0; rows]);
                sampler.intensities_into(i, &mut a, &mut b, &mut scratch);
                pool.push([a, b]);
            }
            scene.pool = Some(pool);
        }
        Ok(scene)
    }

    pub fn rows(&self) -> usize {
        self.setup.acquisition.height
    }

    pub fn cols(&self) -> usize {
        self.setup.acquisition.width
    }

    pub fn cells_per_gate(&self) -> usize {
        crate::spad::cells_per_gate(self.options.spad.gate_time_us, self.setup.source.coherence_time_us)
    }

    /// Correlator geometry of the simulated sensor, reduced along the slits.
    pub fn geometry(&self, mode: Mode) -> Geometry {
        let a = &self.setup.acquisition;
        Geometry {
            width: a.width,
            height: a.height,
            roi: [Roi::full(a.width, a.height); 2],
            binning: 1,
            mode,
            pixel_pitch_mm: self.setup.optics.pixel_pitch_mm(),
        }
    }

    fn provenance(&self) -> Provenance {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let cfg = &self.setup.optics;
        let s = &self.options.spad;
        for v in [
            self.mask.z,
            cfg.na_object,
            cfg.pixel_pitch_um,
            cfg.wavelength_nm,
            s.pde,
            s.dark_rate,
            s.gate_time_us,
            s.mean_photons_per_cell,
            self.rows() as f64,
            self.cols() as f64,
        ] {
            for b in v.to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
        }
        Provenance { seed: self.setup.acquisition.seed, config_hash: h }
    }

    /// A per-thread worker that renders frames of this scene.
    pub fn renderer(&self) -> FrameRenderer<'_> {
        let sampler = FieldSampler::new(&self.pair, self.setup.acquisition.seed);
        let scratch = sampler.scratch();
        let (rows, cols) = (self.rows(), self.cols());
        FrameRenderer {
            scene: self,
            sampler,
            scratch,
            cell: [vec![0.0; rows], vec![0.0; rows]],
            frame: [vec![0.0; rows * cols], vec![0.0; rows * cols]],
        }
    }

    /// Frames `start..end` of the acquisition.
    pub fn simulate_range(&self, start: u64, end: u64) -> FrameStack {
        let mut r = self.renderer();
        let (w, h) = (self.cols(), self.rows());
        let mut stack = FrameStack::zeroed(w, h, (end - start) as usize);
        for (k, f) in (start..end).enumerate() {
            let (a, b) = stack.planes_mut(k);
            r.render(f, a, b);
        }
        stack.provenance = self.provenance();
        stack
    }

    /// The first `n_frames` frames.
    pub fn simulate(&self, n_frames: u64) -> FrameStack {
        self.simulate_range(0, n_frames)
    }

    /// Normalized mean intensity per row under chaotic illumination.
    pub fn mean_image(&self, arm: Arm) -> Vec<f64> {
        self.pair.mean_intensity(arm).into_iter().map(|v| v / self.scale).collect()
    }

    /// Row profile of an incoherently illuminated object through one arm.
    pub fn incoherent_image(&self, arm: Arm) -> Vec<f64> {
        self.pair.incoherent_intensity(arm)
    }

    /// Row centres on the sensor (mm).
    pub fn row_coords(&self) -> Vec<f64> {
        let d = &self.pair.grid.detector;
        (0..d.rows).map(|i| d.pixel_center(i, d.rows)).collect()
    }

    /// Profile of a per-row image in sensor coordinates.
    pub fn row_profile(&self, values: Vec<f64>) -> Profile {
        Profile { coords: self.row_coords(), values }
    }

    /// Object-plane slit and gap centres across the slits (mm).
    pub fn layout(&self) -> Result<SlitLayout> {
        match &self.mask.kind {
            MaskKind::Slits(g) if g.orientation == SlitOrientation::AlongX && g.count >= 2 => {
                let mut l = SlitLayout::regular(g.count, g.spacing_um * 1e-3, g.center_um * 1e-3);
                l.slits = g.centers_mm();
                l.gaps = g.gaps_mm();
                Ok(l)
            }
            _ => Err(Error::InvalidArgument("layout needs at least two slits along x".into())),
        }
    }

    /// Where the slit layout lands on the sensor of `arm` under geometric
    /// imaging of the defocused plane.
    pub fn sensor_layout(&self, arm: Arm) -> Result<SlitLayout> {
        let cfg = &self.setup.optics;
        let m = cfg.magnification * cfg.object_distance / cfg.arm_path(self.mask.z, arm);
        Ok(self.layout()?.scaled(m))
    }
}

/// Renders frames of a [`Scene`]; each frame depends only on its index.
pub struct FrameRenderer<'a> {
    scene: &'a Scene,
    sampler: FieldSampler<'a>,
    scratch: [Vec<Complex64>; 2],
    cell: [Vec<f64>; 2],
    frame: [Vec<f64>; 2],
}

impl FrameRenderer<'_> {
    /// Gate-integrated normalized intensities of frame `index`, row-major.
    pub fn intensities(&mut self, index: u64) -> [&[f64]; 2] {
        let s = self.scene;
        let (rows, cols) = (s.rows(), s.cols());
        let m = s.cells_per_gate();
        let inv = 1.0 / (m as f64 * s.scale);
        let mut pick = s.pool.as_ref().map(|_| seeds::stream(s.setup.acquisition.seed, seeds::POOL, index));
        for v in self.frame.iter_mut() {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        for c in 0..cols {
            for cell in 0..m {
                let id = (index * cols as u64 + c as u64) * m as u64 + cell as u64;
                let [ca, cb] = match (&s.pool, pick.as_mut()) {
                    (Some(pool), Some(rng)) => {
                        let p = &pool[rng.random_range(0..pool.len())];
                        [&p[0][..], &p[1][..]]
                    }
                    _ => {
                        let [a, b] = &mut self.cell;
                        self.sampler.intensities_into(id, a, b, &mut self.scratch);
                        [&a[..], &b[..]]
                    }
                };
                for (arm, src) in [ca, cb].into_iter().enumerate() {
                    let dst = &mut self.frame[arm];
                    for (y, &v) in src.iter().enumerate().take(rows) {
                        dst[y * cols + c] += v * inv;
                    }
                }
            }
        }
        [&self.frame[0], &self.frame[1]]
    }

    /// Draws frame `index` into packed planes of arm A and B.
    pub fn render(&mut self, index: u64, a: &mut [u8], b: &mut [u8]) {
        let s = self.scene;
        let (cols, m, spad, seed) = (s.cols(), s.cells_per_gate(), &s.options.spad, s.setup.acquisition.seed);
        self.intensities(index);
        let mut rng = seeds::stream(seed, seeds::DETECT, index);
        detect_frame(&self.frame[0], cols, spad, m, &mut rng, a);
        detect_frame(&self.frame[1], cols, spad, m, &mut rng, b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::structured_visibility;
    use crate::presets;

    fn small() -> Scene {
        let mut setup = presets::desk();
        setup.acquisition.width = 4;
        setup.acquisition.height = 32;
        let mask = ObjectMask::double_slit(setup.optics.z_a, 100.0, 200.0);
        Scene::new(setup, mask, SceneOptions::default()).unwrap()
    }

    #[test]
    fn frames_are_reproducible_and_rate_limited() {
        let s = small();
        let x = s.simulate(50);
        assert_eq!(x, s.simulate(50));
        assert_eq!(x.range(20, 30), s.simulate_range(20, 30).range(0, 10));
        let ones: usize = (0..50).map(|f| (0..32).filter(|&y| x.get(Arm::A, f, 0, y)).count()).sum();
        assert!(ones < 50 * 32 / 5, "{ones}");
    }

    #[test]
    fn pooled_speckle_is_reproducible() {
        let mut setup = presets::desk();
        setup.acquisition.width = 4;
        setup.acquisition.height = 32;
        let mask = ObjectMask::double_slit(setup.optics.z_a, 100.0, 200.0);
        let opts = SceneOptions { speckle_pool: Some(16), ..SceneOptions::default() };
        let s = Scene::new(setup, mask, opts).unwrap();
        assert_eq!(s.simulate(10), s.simulate(10));
    }

    #[test]
    fn focused_arm_resolves_the_slits() {
        let mut setup = presets::desk();
        setup.acquisition.width = 1;
        let mask = ObjectMask::double_slit(setup.optics.z_a, 125.0, 250.0);
        let s = Scene::new(setup, mask, SceneOptions::default()).unwrap();
        let p = s.row_profile(s.mean_image(Arm::A));
        let v = structured_visibility(&p, &s.sensor_layout(Arm::A).unwrap()).unwrap();
        assert!(v > 0.5, "{v}");
        let peak = s.mean_image(Arm::A).into_iter().chain(s.mean_image(Arm::B)).fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-12);
    }
}
