//! TOML run configuration.
//!
//! Every section is optional when `preset` names a base setup; fields given in
//! the file override the preset. Without a preset all optics, source and
//! acquisition fields are required.
//!
//! ```toml
//! preset = "desk"
//!
//! [acquisition]
//! frames = 10000
//! seed = 7
//! roi_a = [0, 0, 32, 128]
//!
//! [object]
//! kind = "double_slit"
//! z = 319.0
//! width_um = 125.0
//! spacing_um = 250.0
//!
//! [refocus]
//! z = "300:340:5"
//! ```

use std::path::Path;

use cpi_core::config::{
    validate_config, AcquisitionConfig, MaskKind, ObjectMask, OpticalConfig, Roi, Setup, SlitGroup, SlitOrientation,
    SourceProfile,
};
use cpi_core::correlator::Mode;
use cpi_core::presets;
use cpi_core::refocus::{z_range, Interpolation, RefocusOptions};
use cpi_core::scene::SceneOptions;
use cpi_core::spad::SpadConfig;
use cpi_core::wave::KernelOptions;
use serde::{Deserialize, Serialize};

use crate::checksum::sha256_hex;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default)]
    pub optics: OpticsSection,
    #[serde(default)]
    pub source: SourceSection,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    #[serde(default)]
    pub spad: SpadSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<ObjectSection>,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub refocus: RefocusSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsSection {
    pub focal_length: Option<f64>,
    pub image_distance: Option<f64>,
    pub na_object: Option<f64>,
    pub z_a: Option<f64>,
    pub z_b: Option<f64>,
    pub z_sigma: Option<f64>,
    pub wavelength_nm: Option<f64>,
    pub pixel_pitch_um: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub sigma: Option<f64>,
    /// Ratio `r_sigma / sigma`.
    pub c: Option<f64>,
    pub coherence_time_us: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    pub frames: Option<u64>,
    pub frame_rate: Option<f64>,
    pub gate_time_us: Option<f64>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub binning: Option<usize>,
    /// `[x, y, width, height]`.
    pub roi_a: Option<[usize; 4]>,
    pub roi_b: Option<[usize; 4]>,
    pub seed: Option<u64>,
    /// `full4d` or `reduced1d`.
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpadSection {
    pub pde: Option<f64>,
    pub dark_rate: Option<f64>,
    pub mean_photons_per_cell: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSection {
    /// `slits`, `double_slit` or `open`.
    pub kind: String,
    pub z: f64,
    pub count: Option<usize>,
    pub width_um: Option<f64>,
    pub spacing_um: Option<f64>,
    pub center_um: Option<f64>,
    /// `along_x` (default) or `along_y`.
    pub orientation: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub oversample: Option<usize>,
    pub speckle_pool: Option<usize>,
    pub object_curvature: Option<bool>,
    /// Frames rendered per parallel task.
    pub chunk_frames: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZSpec {
    List(Vec<f64>),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefocusSection {
    pub z: Option<ZSpec>,
    /// `multilinear` or `nearest`.
    pub interpolation: Option<String>,
    pub z_s: Option<f64>,
    pub r_pitch: Option<f64>,
    pub r_count: Option<usize>,
    pub s_pitch: Option<f64>,
}

/// Fully resolved and validated settings of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub setup: Setup,
    pub spad: SpadConfig,
    pub mask: Option<ObjectMask>,
    pub mode: Mode,
    pub oversample: usize,
    pub speckle_pool: Option<usize>,
    pub object_curvature: bool,
    pub chunk_frames: usize,
    pub z: Option<Vec<f64>>,
    pub refocus: RefocusOptions,
}

pub const DEFAULT_CHUNK_FRAMES: usize = 256;

/// Parses `a,b,c` or `start:stop:step`.
pub fn parse_z(text: &str) -> Result<Vec<f64>> {
    let bad = |what: &str| CliError::Config(format!("z specification {text:?}: {what}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("expected numbers"));
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("a range is START:STOP:STEP"));
        }
        let (a, b, s) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        z_range(a, b, s).map_err(|e| bad(&e.to_string()))
    } else {
        let z = text.split(',').filter(|s| !s.trim().is_empty()).map(num).collect::<Result<Vec<_>>>()?;
        if z.is_empty() {
            return Err(bad("empty list"));
        }
        Ok(z)
    }
}

pub fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "full4d" => Ok(Mode::Full4d),
        "reduced1d" => Ok(Mode::Reduced1d),
        _ => Err(CliError::Config(format!("unknown correlation mode {s:?} (full4d or reduced1d)"))),
    }
}

pub fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Full4d => "full4d",
        Mode::Reduced1d => "reduced1d",
    }
}

/// Parses `X,Y,W,H`.
pub fn parse_roi(text: &str) -> Result<Roi> {
    let v: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Config(format!("ROI {text:?}: expected X,Y,W,H")))?;
    match v[..] {
        [x, y, width, height] => Ok(Roi { x, y, width, height }),
        _ => Err(CliError::Config(format!("ROI {text:?}: expected X,Y,W,H"))),
    }
}

fn roi_array(r: Roi) -> [usize; 4] {
    [r.x, r.y, r.width, r.height]
}

fn roi_from(a: [usize; 4]) -> Roi {
    Roi { x: a[0], y: a[1], width: a[2], height: a[3] }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies the preset and defaults, then validates everything at once.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut issues: Vec<String> = Vec::new();
        let base = match &self.preset {
            Some(name) => match presets::by_name(name) {
                Some(s) => Some(s),
                None => {
                    issues.push(format!("unknown preset {name:?}"));
                    None
                }
            },
            None => None,
        };
        let bo = base.as_ref().map(|s| &s.optics);
        let bs = base.as_ref().map(|s| &s.source);
        let ba = base.as_ref().map(|s| &s.acquisition);

        macro_rules! pick {
            ($section:literal, $field:ident, $given:expr, $base:expr, $default:expr) => {
                match ($given, $base) {
                    (Some(v), _) => v,
                    (None, Some(v)) => v,
                    (None, None) => match $default {
                        Some(v) => v,
                        None => {
                            issues.push(format!("missing {}.{}", $section, stringify!($field)));
                            Default::default()
                        }
                    },
                }
            };
        }

        let o = &self.optics;
        let focal_length = pick!("optics", focal_length, o.focal_length, bo.map(|b| b.focal_length), None::<f64>);
        let image_distance = pick!("optics", image_distance, o.image_distance, bo.map(|b| b.image_distance), None::<f64>);
        let na_object = pick!("optics", na_object, o.na_object, bo.map(|b| b.na_object), None::<f64>);
        let z_a = pick!("optics", z_a, o.z_a, bo.map(|b| b.z_a), None::<f64>);
        let z_b = pick!("optics", z_b, o.z_b, bo.map(|b| b.z_b), None::<f64>);
        let z_sigma = pick!("optics", z_sigma, o.z_sigma, bo.map(|b| b.z_sigma), None::<f64>);
        let wavelength_nm = pick!("optics", wavelength_nm, o.wavelength_nm, bo.map(|b| b.wavelength_nm), None::<f64>);
        let pixel_pitch_um =
            pick!("optics", pixel_pitch_um, o.pixel_pitch_um, bo.map(|b| b.pixel_pitch_um), None::<f64>);

        let s = &self.source;
        let sigma = pick!("source", sigma, s.sigma, bs.map(|b| b.sigma), None::<f64>);
        let c = pick!("source", c, s.c, bs.map(|b| b.c), None::<f64>);
        let coherence_time_us =
            pick!("source", coherence_time_us, s.coherence_time_us, bs.map(|b| b.coherence_time_us), None::<f64>);

        let a = &self.acquisition;
        let n_frames = pick!("acquisition", frames, a.frames, ba.map(|b| b.n_frames), None::<u64>);
        let frame_rate = pick!("acquisition", frame_rate, a.frame_rate, ba.map(|b| b.frame_rate), Some(presets::FRAME_RATE));
        let gate_time_us = pick!("acquisition", gate_time_us, a.gate_time_us, ba.map(|b| b.gate_time_us), Some(10.0));
        let width = pick!("acquisition", width, a.width, ba.map(|b| b.width), None::<usize>);
        let height = pick!("acquisition", height, a.height, ba.map(|b| b.height), None::<usize>);
        let binning = pick!("acquisition", binning, a.binning, ba.map(|b| b.binning), Some(1));
        let seed = pick!("acquisition", seed, a.seed, ba.map(|b| b.seed), Some(1));
        let full = Roi::full(width, height);
        let roi_a = a.roi_a.map(roi_from).unwrap_or(full);
        let roi_b = a.roi_b.map(roi_from).unwrap_or(full);
        let mode = match a.mode.as_deref().map(parse_mode).transpose() {
            Ok(m) => m.unwrap_or(Mode::Full4d),
            Err(e) => {
                issues.push(e.to_string());
                Mode::Full4d
            }
        };

        let d = SceneOptions::default().spad;
        let sp = &self.spad;
        let spad = SpadConfig {
            pde: sp.pde.unwrap_or(d.pde),
            dark_rate: sp.dark_rate.unwrap_or(d.dark_rate),
            gate_time_us,
            mean_photons_per_cell: sp.mean_photons_per_cell.unwrap_or(d.mean_photons_per_cell),
        };
        if let Err(e) = spad.validate() {
            issues.push(format!("spad: {e}"));
        }

        let mask = match &self.object {
            None => None,
            Some(ob) => match object_mask(ob) {
                Ok(m) => {
                    if let Err(list) = m.validate() {
                        issues.extend(list.iter().map(|i| format!("object: {i}")));
                    }
                    Some(m)
                }
                Err(e) => {
                    issues.push(e);
                    None
                }
            },
        };

        let sim = &self.simulation;
        let oversample = sim.oversample.unwrap_or(1);
        if oversample == 0 {
            issues.push("simulation.oversample must be >= 1".into());
        }
        if sim.speckle_pool == Some(0) {
            issues.push("simulation.speckle_pool must be >= 1".into());
        }
        let chunk_frames = sim.chunk_frames.unwrap_or(DEFAULT_CHUNK_FRAMES);
        if chunk_frames == 0 {
            issues.push("simulation.chunk_frames must be >= 1".into());
        }

        let r = &self.refocus;
        let z = match &r.z {
            None => None,
            Some(ZSpec::List(v)) if v.is_empty() => {
                issues.push("refocus.z is empty".into());
                None
            }
            Some(ZSpec::List(v)) => Some(v.clone()),
            Some(ZSpec::Text(t)) => match parse_z(t) {
                Ok(v) => Some(v),
                Err(e) => {
                    issues.push(e.to_string());
                    None
                }
            },
        };
        let interpolation = match r.interpolation.as_deref() {
            None | Some("multilinear") => Interpolation::Multilinear,
            Some("nearest") => Interpolation::Nearest,
            Some(other) => {
                issues.push(format!("unknown interpolation {other:?} (multilinear or nearest)"));
                Interpolation::Multilinear
            }
        };
        for (name, v) in [("r_pitch", r.r_pitch), ("s_pitch", r.s_pitch)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    issues.push(format!("refocus.{name} must be > 0"));
                }
            }
        }
        if r.r_count == Some(0) {
            issues.push("refocus.r_count must be >= 1".into());
        }
        let refocus = RefocusOptions { z_s: r.z_s, interpolation, r_pitch: r.r_pitch, r_count: r.r_count, s_pitch: r.s_pitch };

        let mut optics = OpticalConfig {
            focal_length,
            image_distance,
            object_distance: 0.0,
            magnification: 0.0,
            na_object,
            z_a,
            z_b,
            z_sigma,
            wavelength_nm,
            pixel_pitch_um,
            delta_z: z_a - z_b,
        };
        if image_distance > focal_length && focal_length > 0.0 {
            if let Ok(o) = OpticalConfig::from_lens(
                focal_length,
                image_distance,
                na_object,
                z_a,
                z_b,
                z_sigma,
                wavelength_nm,
                pixel_pitch_um,
            ) {
                optics = o;
            }
        }
        let setup = Setup {
            optics,
            source: SourceProfile::new(sigma, c, coherence_time_us),
            acquisition: AcquisitionConfig {
                n_frames,
                frame_rate,
                gate_time_us,
                width,
                height,
                binning,
                roi_a,
                roi_b,
                seed,
            },
        };
        let setup = match validate_config(setup.clone()) {
            Ok(v) => v.into_setup(),
            Err(list) => {
                issues.extend(list.iter().map(|i| i.to_string()));
                setup
            }
        };
        if let Some(m) = &mask {
            if m.z >= setup.optics.z_sigma {
                issues.push("object: mask must sit in front of the source (z < z_sigma)".into());
            }
        }
        if !issues.is_empty() {
            return Err(CliError::Config(format!("invalid configuration: {}", issues.join("; "))));
        }
        Ok(RunConfig {
            setup,
            spad,
            mask,
            mode,
            oversample,
            speckle_pool: sim.speckle_pool,
            object_curvature: sim.object_curvature.unwrap_or(true),
            chunk_frames,
            z,
            refocus,
        })
    }
}

fn object_mask(ob: &ObjectSection) -> std::result::Result<ObjectMask, String> {
    let orientation = match ob.orientation.as_deref() {
        None | Some("along_x") => SlitOrientation::AlongX,
        Some("along_y") => SlitOrientation::AlongY,
        Some(o) => return Err(format!("object.orientation {o:?} (along_x or along_y)")),
    };
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| format!("missing object.{name}"));
    match ob.kind.as_str() {
        "open" => Ok(ObjectMask { kind: MaskKind::Open, z: ob.z }),
        "double_slit" | "slits" => {
            let count = if ob.kind == "double_slit" { 2 } else { ob.count.ok_or("missing object.count")? };
            if ob.kind == "double_slit" && ob.count.is_some_and(|c| c != 2) {
                return Err("object.count must be 2 for a double_slit".into());
            }
            let width_um = need(ob.width_um, "width_um")?;
            let spacing_um = if count > 1 { need(ob.spacing_um, "spacing_um")? } else { ob.spacing_um.unwrap_or(0.0) };
            Ok(ObjectMask::slits(
                ob.z,
                SlitGroup { count, width_um, spacing_um, orientation, center_um: ob.center_um.unwrap_or(0.0) },
            ))
        }
        k => Err(format!("unknown object.kind {k:?} (slits, double_slit or open)")),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        ConfigFile::load(path)?.resolve()
    }

    pub fn scene_options(&self) -> SceneOptions {
        SceneOptions {
            kernel: KernelOptions { object_curvature: self.object_curvature, ..KernelOptions::default() },
            spad: self.spad.clone(),
            oversample: self.oversample,
            speckle_pool: self.speckle_pool,
        }
    }

    pub fn mask(&self) -> Result<&ObjectMask> {
        self.mask.as_ref().ok_or_else(|| CliError::Config("the configuration has no [object] section".into()))
    }

    /// Fully explicit configuration equivalent to this one.
    pub fn snapshot(&self) -> ConfigFile {
        let o = &self.setup.optics;
        let s = &self.setup.source;
        let a = &self.setup.acquisition;
        ConfigFile {
            preset: None,
            optics: OpticsSection {
                focal_length: Some(o.focal_length),
                image_distance: Some(o.image_distance),
                na_object: Some(o.na_object),
                z_a: Some(o.z_a),
                z_b: Some(o.z_b),
                z_sigma: Some(o.z_sigma),
                wavelength_nm: Some(o.wavelength_nm),
                pixel_pitch_um: Some(o.pixel_pitch_um),
            },
            source: SourceSection { sigma: Some(s.sigma), c: Some(s.c), coherence_time_us: Some(s.coherence_time_us) },
            acquisition: AcquisitionSection {
                frames: Some(a.n_frames),
                frame_rate: Some(a.frame_rate),
                gate_time_us: Some(a.gate_time_us),
                width: Some(a.width),
                height: Some(a.height),
                binning: Some(a.binning),
                roi_a: Some(roi_array(a.roi_a)),
                roi_b: Some(roi_array(a.roi_b)),
                seed: Some(a.seed),
                mode: Some(mode_name(self.mode).into()),
            },
            spad: SpadSection {
                pde: Some(self.spad.pde),
                dark_rate: Some(self.spad.dark_rate),
                mean_photons_per_cell: Some(self.spad.mean_photons_per_cell),
            },
            object: self.mask.as_ref().map(|m| match &m.kind {
                MaskKind::Slits(g) => ObjectSection {
                    kind: "slits".into(),
                    z: m.z,
                    count: Some(g.count),
                    width_um: Some(g.width_um),
                    spacing_um: Some(g.spacing_um),
                    center_um: Some(g.center_um),
                    orientation: Some(
                        match g.orientation {
                            SlitOrientation::AlongX => "along_x",
                            SlitOrientation::AlongY => "along_y",
                        }
                        .into(),
                    ),
                },
                _ => ObjectSection {
                    kind: "open".into(),
                    z: m.z,
                    count: None,
                    width_um: None,
                    spacing_um: None,
                    center_um: None,
                    orientation: None,
                },
            }),
            simulation: SimulationSection {
                oversample: Some(self.oversample),
                speckle_pool: self.speckle_pool,
                object_curvature: Some(self.object_curvature),
                chunk_frames: Some(self.chunk_frames),
            },
            refocus: RefocusSection {
                z: self.z.clone().map(ZSpec::List),
                interpolation: Some(
                    match self.refocus.interpolation {
                        Interpolation::Multilinear => "multilinear",
                        Interpolation::Nearest => "nearest",
                    }
                    .into(),
                ),
                z_s: self.refocus.z_s,
                r_pitch: self.refocus.r_pitch,
                r_count: self.refocus.r_count,
                s_pitch: self.refocus.s_pitch,
            },
        }
    }

    pub fn snapshot_toml(&self) -> String {
        toml::to_string(&self.snapshot()).expect("snapshot serializes")
    }

    /// SHA-256 of the explicit snapshot.
    pub fn hash(&self) -> String {
        sha256_hex(self.snapshot_toml().as_bytes())
    }

    /// First 8 bytes of [`RunConfig::hash`] as stored in frame files.
    pub fn hash_u64(&self) -> u64 {
        crate::checksum::checksum(self.snapshot_toml().as_bytes())
    }
}
