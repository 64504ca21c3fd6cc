//! Visibility measurements on simulated double slits.

use cpi_core::analysis::{
    resolution_sweep, slit_profile, structured_visibility, Curve, Image, Profile, Rect, ResolutionCurve, SlitLayout,
    SumAxis, SweepOptions,
};
use cpi_core::config::{ObjectMask, Setup};
use cpi_core::ray::ApertureRadii;
use cpi_core::refocus::{refocus_plane, RefocusOptions, RefocusedImage};
use cpi_core::scene::{Scene, SceneOptions};
use cpi_core::{Arm, Result};
use rayon::prelude::*;

/// Object-space profile of a refocused image across the slits, summed
/// along `x`.
pub fn object_profile(img: &RefocusedImage) -> Result<Profile> {
    let im = Image::from(img);
    let rect = Rect { x: 0, y: 0, width: im.shape[0], height: im.shape[1] };
    Ok(slit_profile(&im, rect, SumAxis::X)?.mirrored())
}

pub fn refocused_visibility(img: &RefocusedImage, layout: &SlitLayout) -> Result<f64> {
    structured_visibility(&object_profile(img)?, layout)
}

/// Double slit of period `spacing_mm` (slit width half the period) at `z`.
pub fn double_slit(z: f64, spacing_mm: f64) -> ObjectMask {
    ObjectMask::double_slit(z, spacing_mm * 500.0, spacing_mm * 1e3)
}

/// Noise-free visibility of a double slit of period `feature` at `z`: the
/// refocused image of the analytic correlation function, or an arm's image
/// under incoherent illumination.
pub fn model_visibility(setup: &Setup, options: &SceneOptions, curve: Curve, z: f64, feature: f64) -> Result<f64> {
    let scene = Scene::new(setup.clone(), double_slit(z, feature), options.clone())?;
    match curve {
        Curve::Refocused => {
            let gamma = scene.pair.gamma();
            let ap = ApertureRadii::compute(&setup.optics, &scene.pupil, &setup.source)?;
            let img = refocus_plane(&gamma, z, &setup.optics, &ap, &RefocusOptions::default())?;
            refocused_visibility(&img, &scene.layout()?)
        }
        Curve::ConventionalA | Curve::ConventionalB => {
            let arm = if curve == Curve::ConventionalA { Arm::A } else { Arm::B };
            let p = scene.row_profile(scene.incoherent_image(arm));
            structured_visibility(&p, &scene.sensor_layout(arm)?)
        }
    }
}

/// Smallest resolvable period per `z` for all three curves, in parallel over
/// `z`. Failing model evaluations count as unresolved.
pub fn resolution_curves(setup: &Setup, options: &SceneOptions, z: &[f64], sweep: &SweepOptions) -> Result<ResolutionCurve> {
    let parts: Vec<Result<ResolutionCurve>> = z
        .par_iter()
        .map(|&zi| {
            resolution_sweep(&[zi], sweep, |c, z, f| Ok(model_visibility(setup, options, c, z, f).unwrap_or(0.0)))
        })
        .collect();
    let mut out = ResolutionCurve { z: Vec::new(), refocused: Vec::new(), conventional_a: Vec::new(), conventional_b: Vec::new() };
    for p in parts {
        let p = p?;
        out.z.extend(p.z);
        out.refocused.extend(p.refocused);
        out.conventional_a.extend(p.conventional_a);
        out.conventional_b.extend(p.conventional_b);
    }
    Ok(out)
}
