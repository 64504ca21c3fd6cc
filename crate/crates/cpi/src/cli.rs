//! The `cpi` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use cpi_core::analysis::{
    estimate_snr, fit_snr, structured_visibility, visibility, Curve, Profile, SlitLayout, SweepOptions,
};
use cpi_core::config::{MaskKind, PupilFunction, Roi, SlitOrientation};
use cpi_core::correlator::Geometry;
use cpi_core::ray::ApertureRadii;
use cpi_core::scene::Scene;
use cpi_core::spad::{detect_frame, linearity_report, FrameStack, Provenance, SATURATION_THRESHOLD};
use cpi_core::{seeds, Arm};
use rayon::prelude::*;
use serde_json::json;

use crate::array::{image_to_array, read_array, tensor_to_array, write_array, write_csv, Array, AxisInfo};
use crate::config::{mode_name, parse_mode, parse_roi, parse_z, ConfigFile, RunConfig};
use crate::cpif::{read_cpif, CpifWriter};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::pgm::{write_gray, write_plot, Series};
use crate::pipeline::{correlate_file, pool, refocus_planes, simulate_to_file};
use crate::study::{object_profile, resolution_curves};

#[derive(Debug, Parser)]
#[command(name = "cpi", version, about = "Correlation plenoptic imaging: simulate, correlate, refocus, analyze")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate binary frames of the configured scene.
    Simulate(SimulateArgs),
    /// Correlate a frame file into a correlation tensor.
    Correlate(CorrelateArgs),
    /// Refocus a correlation tensor onto a list of planes.
    Refocus(RefocusArgs),
    /// Derived quantities, tables and plots.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Time the correlate and refocus stages.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the acquisition seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    /// Region of interest X,Y,W,H; once for both arms or twice (arm A, arm B).
    #[arg(long)]
    pub roi: Vec<String>,
    /// Square bin size in pixels.
    #[arg(long = "bin")]
    pub bin: Option<usize>,
    /// full4d or reduced1d.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Args)]
pub struct RefocusArgs {
    #[arg(long)]
    pub gamma: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Planes as a list `Z1,Z2,...` or a range `START:STOP:STEP` (mm).
    #[arg(long)]
    pub z: Option<String>,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Correlation aperture radii and the limiting one.
    Apertures {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit SNR(N_t) = (a + b / N_t)^(-1/2) to a CSV of `n_t,snr`.
    SnrFit {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SNR of an image array: mean over a region divided by the standard
    /// deviation over the same region.
    Snr {
        #[arg(long)]
        input: PathBuf,
        /// Region X,Y,W,H in array pixels (default: whole image).
        #[arg(long)]
        roi: Option<String>,
    },
    /// Visibility of the profile of an image array across the slits.
    Visibility {
        #[arg(long)]
        input: PathBuf,
        /// Uses the configured slit layout when given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resolvable double-slit period versus z for the refocused and both
    /// conventional images.
    Resolution {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        z: Option<String>,
        #[command(flatten)]
        workers: WorkerArgs,
    },
    /// Per-arm fire rates and the saturation warning.
    Linearity {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        roi: Vec<String>,
        #[arg(long, default_value_t = SATURATION_THRESHOLD)]
        threshold: f64,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Frame file to correlate; random frames are generated when absent.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Defaults to the paper-like preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub z: Option<String>,
    /// Frames to generate.
    #[arg(long, default_value_t = 10_000)]
    pub count: u64,
    /// Fire probability of generated frames.
    #[arg(long, default_value_t = 0.05)]
    pub rate: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("cpi: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Correlate(a) => correlate(a),
        Command::Refocus(a) => refocus(a),
        Command::Analyze(a) => analyze(a),
        Command::Bench(a) => bench(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.setup.acquisition.seed = s;
    }
    let mask = cfg.mask()?.clone();
    let pool = pool(a.workers.workers)?;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("simulate", pool.current_num_threads());
    m.config_sha256 = Some(cfg.hash());
    m.seeds.insert("acquisition".into(), cfg.setup.acquisition.seed);
    m.input(&a.config)?;

    let t = Instant::now();
    let scene = Scene::new(cfg.setup.clone(), mask, cfg.scene_options())?;
    m.time("kernels", t);
    let n = cfg.setup.acquisition.n_frames;
    let prov = Provenance { seed: cfg.setup.acquisition.seed, config_hash: cfg.hash_u64() };
    let t = Instant::now();
    simulate_to_file(&scene, n, cfg.chunk_frames, prov, &a.out.join("frames.cpif"), &pool)?;
    m.time("simulate", t);

    write_text(&a.out.join("config.toml"), &cfg.snapshot_toml())?;
    let rows: Vec<Vec<f64>> = scene.row_coords().iter().enumerate().map(|(i, &y)| {
        vec![y, scene.mean_image(Arm::A)[i], scene.mean_image(Arm::B)[i]]
    }).collect();
    write_csv(&a.out.join("mean_intensity.csv"), &["y_mm", "a", "b"], rows)?;
    m.param("frames", n);
    m.param("width", scene.cols());
    m.param("height", scene.rows());
    m.param("cells_per_gate", scene.cells_per_gate());
    for name in ["frames.cpif", "config.toml", "mean_intensity.csv"] {
        m.output(&a.out, name)?;
    }
    m.write(&a.out)?;
    println!("wrote {} frames of {}x{} per arm to {}", n, scene.cols(), scene.rows(), a.out.join("frames.cpif").display());
    Ok(())
}

fn geometry_for(cfg: &RunConfig, width: usize, height: usize, g: &GeometryArgs) -> Result<Geometry> {
    let acq = &cfg.setup.acquisition;
    let mut roi = if (acq.width, acq.height) == (width, height) {
        [acq.roi_a, acq.roi_b]
    } else {
        [Roi::full(width, height); 2]
    };
    match g.roi.len() {
        0 => {}
        1 => roi = [parse_roi(&g.roi[0])?; 2],
        2 => roi = [parse_roi(&g.roi[0])?, parse_roi(&g.roi[1])?],
        n => return Err(CliError::Config(format!("--roi given {n} times (at most once per arm)"))),
    }
    let mode = match &g.mode {
        Some(m) => parse_mode(m)?,
        None => cfg.mode,
    };
    let geometry = Geometry {
        width,
        height,
        roi,
        binning: g.bin.unwrap_or(acq.binning),
        mode,
        pixel_pitch_mm: cfg.setup.optics.pixel_pitch_mm(),
    };
    geometry.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(geometry)
}

fn direct_array(acc: &cpi_core::correlator::CorrelationAccumulator, g: &Geometry, arm: Arm) -> Array {
    let [cols, rows] = g.bins(arm);
    let (o, p) = g.axis(arm);
    Array::new(
        vec![AxisInfo::new("y", "mm", o[1], p), AxisInfo::new("x", "mm", o[0], p)],
        vec![rows, cols],
        acc.mean_counts(arm),
    )
    .with_attr("quantity", "mean_counts")
    .with_attr("arm", arm.name())
}

fn correlate(a: CorrelateArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let header = *crate::cpif::CpifReader::open(&a.frames)?.header();
    let geometry = geometry_for(&cfg, header.width as usize, header.height as usize, &a.geometry)?;
    let pool = pool(a.workers.workers)?;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("correlate", pool.current_num_threads());
    m.config_sha256 = Some(cfg.hash());
    if let Some(p) = header.provenance {
        m.seeds.insert("acquisition".into(), p.seed);
    }
    m.input(&a.config)?;
    m.input(&a.frames)?;
    let t = Instant::now();
    let acc = correlate_file(&a.frames, &geometry, &pool)?;
    let gamma = acc.finalize()?;
    m.time("correlate", t);
    write_array(&tensor_to_array(&gamma), &a.out.join("gamma.cpia"))?;
    for arm in Arm::BOTH {
        write_array(&direct_array(&acc, &geometry, arm), &a.out.join(format!("direct_{}.cpia", arm.name())))?;
    }
    m.param("frames", acc.n_t);
    m.param("mode", mode_name(geometry.mode));
    m.param("binning", geometry.binning);
    m.param("roi", json!(geometry.roi.iter().map(|r| [r.x, r.y, r.width, r.height]).collect::<Vec<_>>()));
    for name in ["gamma.cpia", "direct_a.cpia", "direct_b.cpia"] {
        m.output(&a.out, name)?;
    }
    m.write(&a.out)?;
    println!(
        "correlated {} frames into {}x{} bins ({:.2} s)",
        acc.n_t,
        acc.n_a,
        acc.n_b,
        m.timings_s["correlate"]
    );
    Ok(())
}

fn apertures(cfg: &RunConfig) -> Result<ApertureRadii> {
    let o = &cfg.setup.optics;
    Ok(ApertureRadii::compute(o, &PupilFunction::from_config(o), &cfg.setup.source)?)
}

fn refocus(a: RefocusArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let z = match (&a.z, &cfg.z) {
        (Some(t), _) => parse_z(t)?,
        (None, Some(z)) => z.clone(),
        (None, None) => return Err(CliError::Config("no planes: pass --z or set refocus.z".into())),
    };
    let array = read_array(&a.gamma)?;
    let gamma = crate::array::array_to_tensor(&array, &a.gamma)?;
    let ap = apertures(&cfg)?;
    let pool = pool(a.workers.workers)?;
    create_dir(&a.out)?;
    let mut m = RunManifest::new("refocus", pool.current_num_threads());
    m.config_sha256 = Some(cfg.hash());
    m.input(&a.config)?;
    m.input(&a.gamma)?;
    let t = Instant::now();
    let planes = refocus_planes(&gamma, &z, &cfg.setup.optics, &ap, &cfg.refocus, &pool);
    m.time("refocus", t);
    let mut failed = Vec::new();
    let mut listing = Vec::new();
    for (k, (zk, plane)) in z.iter().zip(planes).enumerate() {
        let img = match plane {
            Ok(img) => img,
            Err(e) => {
                eprintln!("cpi: plane z = {zk} mm: {e}");
                failed.push((*zk, e));
                continue;
            }
        };
        if img.undersampled_aperture {
            eprintln!("cpi: warning: plane z = {zk} mm integrates fewer than 5 rho_s samples across the aperture");
        }
        let stem = format!("plane_{k:03}");
        write_array(&image_to_array(&img), &a.out.join(format!("{stem}.cpia")))?;
        write_gray(&a.out.join(format!("{stem}.pgm")), img.shape[0], img.shape[1], &flip_rows(&img.values, img.shape))?;
        let p = object_profile(&img)?;
        crate::array::write_profile_csv(&a.out.join(format!("{stem}.csv")), ["y_object_mm", "value"], &p.coords, &p.values)?;
        for ext in ["cpia", "pgm", "csv"] {
            m.output(&a.out, &format!("{stem}.{ext}"))?;
        }
        listing.push(json!({ "index": k, "z": zk, "stem": stem, "s_radius": img.s_radius }));
    }
    m.param("planes", listing);
    m.param("interpolation", format!("{:?}", cfg.refocus.interpolation).to_lowercase());
    m.write(&a.out)?;
    println!("refocused {} of {} planes into {}", z.len() - failed.len(), z.len(), a.out.display());
    match failed.into_iter().next() {
        Some((_, e)) => Err(e.into()),
        None => Ok(()),
    }
}

/// Image rows reordered so that `+y` points up in the picture.
fn flip_rows(values: &[f64], shape: [usize; 2]) -> Vec<f64> {
    let [c, r] = shape;
    (0..r).rev().flat_map(|y| values[y * c..(y + 1) * c].iter().copied()).collect()
}

fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Apertures { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let ap = apertures(&cfg)?;
            println!("ca_lens_a  {:.6} mm", ap.ca_lens_a);
            println!("ca_lens_b  {:.6} mm", ap.ca_lens_b);
            println!("ca_source  {:.6} mm", ap.ca_source);
            println!("limiting   {}", ap.limiting.name());
            if let Some(out) = out {
                create_dir(&out)?;
                let path = out.join("apertures.csv");
                let csv_err = |e: csv::Error| CliError::io(&path, std::io::Error::other(e));
                let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
                w.write_record(["ca_lens_a", "ca_lens_b", "ca_source", "limiting"]).map_err(csv_err)?;
                w.write_record([
                    ap.ca_lens_a.to_string(),
                    ap.ca_lens_b.to_string(),
                    ap.ca_source.to_string(),
                    ap.limiting.name().to_string(),
                ])
                .map_err(csv_err)?;
                w.flush().map_err(|e| CliError::io(&path, e))?;
            }
            Ok(())
        }
        AnalyzeCommand::SnrFit { points, out } => {
            let data = read_points(&points)?;
            let model = fit_snr(&data)?;
            println!("a          {:.6e}", model.a);
            println!("b          {:.6e}", model.b);
            println!("asymptote  {:.4}", model.asymptote());
            println!("rms        {:.4e}", model.rms_residual);
            println!("r_squared  {:.6}", model.r_squared);
            if let Some(out) = out {
                create_dir(&out)?;
                write_csv(
                    &out.join("snr_fit.csv"),
                    &["a", "b", "rms_residual", "r_squared"],
                    [vec![model.a, model.b, model.rms_residual, model.r_squared]],
                )?;
                let n_max = data.iter().map(|p| p.0).fold(0.0, f64::max) * 1.2;
                let xs: Vec<f64> = (0..=200).map(|i| n_max * i as f64 / 200.0).collect();
                let fit: Vec<Option<f64>> = xs.iter().map(|&n| Some(model.predict(n))).collect();
                write_csv(&out.join("snr_curve.csv"), &["n_t", "snr"], xs.iter().zip(&fit).map(|(x, y)| vec![*x, y.unwrap()]))?;
                let (px, py): (Vec<f64>, Vec<Option<f64>>) = data.iter().map(|&(n, s)| (n, Some(s))).unzip();
                write_plot(
                    &out.join("snr_fit.pgm"),
                    480,
                    320,
                    &[Series { x: &xs, y: &fit, shade: 128 }, Series { x: &px, y: &py, shade: 0 }],
                )?;
            }
            Ok(())
        }
        AnalyzeCommand::Snr { input, roi } => {
            let arr = read_array(&input)?;
            let (rows, cols) = image_dims(&arr, &input)?;
            let r = match roi {
                Some(t) => parse_roi(&t)?,
                None => Roi::full(cols, rows),
            };
            if !r.fits(cols, rows) {
                return Err(CliError::Config(format!("region {t:?} lies outside the {cols}x{rows} image", t = [r.x, r.y, r.width, r.height])));
            }
            let region: Vec<bool> = (0..rows * cols)
                .map(|i| {
                    let (x, y) = (i % cols, i / cols);
                    x >= r.x && x < r.x + r.width && y >= r.y && y < r.y + r.height
                })
                .collect();
            match estimate_snr(&arr.data, &region)? {
                cpi_core::analysis::Snr::Finite(v) => println!("snr {v:.6}"),
                cpi_core::analysis::Snr::Unbounded => println!("snr inf"),
            }
            Ok(())
        }
        AnalyzeCommand::Visibility { input, config, out } => {
            let arr = read_array(&input)?;
            let profile = array_profile(&arr, &input)?;
            let layout = match config {
                Some(c) => layout_for(&RunConfig::load(&c)?, &arr)?,
                None => None,
            };
            let v = match &layout {
                Some(l) => structured_visibility(&profile, l)?,
                None => visibility(&profile.values)?,
            };
            println!("visibility {v:.6}");
            if let Some(out) = out {
                create_dir(&out)?;
                crate::array::write_profile_csv(&out.join("profile.csv"), ["coord_mm", "value"], &profile.coords, &profile.values)?;
                write_csv(&out.join("visibility.csv"), &["visibility"], [vec![v]])?;
            }
            Ok(())
        }
        AnalyzeCommand::Resolution { config, out, z, workers } => {
            let cfg = RunConfig::load(&config)?;
            let z = match (z, &cfg.z) {
                (Some(t), _) => parse_z(&t)?,
                (None, Some(z)) => z.clone(),
                (None, None) => return Err(CliError::Config("no planes: pass --z or set refocus.z".into())),
            };
            let pool = pool(workers.workers)?;
            create_dir(&out)?;
            let mut m = RunManifest::new("analyze-resolution", pool.current_num_threads());
            m.config_sha256 = Some(cfg.hash());
            m.input(&config)?;
            let t = Instant::now();
            let opts = SweepOptions::default();
            let res = pool.install(|| resolution_curves(&cfg.setup, &cfg.scene_options(), &z, &opts))?;
            m.time("resolution", t);
            let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
            write_csv(
                &out.join("resolution.csv"),
                &["z_mm", "cpi_mm", "conventional_a_mm", "conventional_b_mm"],
                (0..z.len()).map(|i| vec![z[i], nan(res.refocused[i]), nan(res.conventional_a[i]), nan(res.conventional_b[i])]),
            )?;
            let series: Vec<Series> = Curve::ALL
                .iter()
                .zip([0u8, 96, 160])
                .map(|(&c, shade)| Series { x: &res.z, y: res.curve(c), shade })
                .collect();
            write_plot(&out.join("resolution.pgm"), 480, 320, &series)?;
            m.param("visibility_threshold", opts.threshold);
            m.output(&out, "resolution.csv")?;
            m.output(&out, "resolution.pgm")?;
            m.write(&out)?;
            Ok(())
        }
        AnalyzeCommand::Linearity { frames, out, roi, threshold } => {
            let stack = read_cpif(&frames)?;
            let roi = match roi.len() {
                0 => [Roi::full(stack.width, stack.height); 2],
                1 => [parse_roi(&roi[0])?; 2],
                2 => [parse_roi(&roi[0])?, parse_roi(&roi[1])?],
                n => return Err(CliError::Config(format!("--roi given {n} times (at most once per arm)"))),
            };
            let r = linearity_report(&stack, roi, threshold)?;
            println!("rate_a {:.6}  rate_b {:.6}  threshold {}", r.rate[0], r.rate[1], r.threshold);
            if r.saturating {
                eprintln!("cpi: warning: mean fire rate above {threshold}; detection is no longer linear");
            }
            if let Some(out) = out {
                create_dir(&out)?;
                write_csv(
                    &out.join("linearity.csv"),
                    &["rate_a", "rate_b", "threshold", "saturating"],
                    [vec![r.rate[0], r.rate[1], r.threshold, if r.saturating { 1.0 } else { 0.0 }]],
                )?;
            }
            Ok(())
        }
    }
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| bad(format!("row {}: expected two numbers", out.len() + 1)))
        };
        out.push((num(0)?, num(1)?));
    }
    Ok(out)
}

fn image_dims(arr: &Array, path: &Path) -> Result<(usize, usize)> {
    match arr.shape[..] {
        [rows, cols] => Ok((rows, cols)),
        _ => Err(CliError::Format(crate::error::FormatError::header(path, "expected a two-dimensional image array"))),
    }
}

/// Profile across the slits (`y`), summed along `x`. Refocused images are
/// returned in object coordinates.
fn array_profile(arr: &Array, path: &Path) -> Result<Profile> {
    let (rows, cols) = image_dims(arr, path)?;
    let y = &arr.axes[0];
    let values: Vec<f64> = (0..rows).map(|r| arr.data[r * cols..(r + 1) * cols].iter().sum()).collect();
    let p = Profile { coords: (0..rows).map(|i| y.coord(i)).collect(), values };
    Ok(if arr.attrs.get("quantity").and_then(|v| v.as_str()) == Some("refocused") { p.mirrored() } else { p })
}

fn layout_for(cfg: &RunConfig, arr: &Array) -> Result<Option<SlitLayout>> {
    let Some(mask) = &cfg.mask else { return Ok(None) };
    let MaskKind::Slits(g) = &mask.kind else { return Ok(None) };
    if g.orientation != SlitOrientation::AlongX || g.count < 2 {
        return Ok(None);
    }
    let mut l = SlitLayout::regular(g.count, g.spacing_um * 1e-3, g.center_um * 1e-3);
    l.slits = g.centers_mm();
    l.gaps = g.gaps_mm();
    let o = &cfg.setup.optics;
    match arr.attrs.get("arm").and_then(|v| v.as_str()) {
        Some(name) => {
            let arm = if name == "a" { Arm::A } else { Arm::B };
            Ok(Some(l.scaled(o.magnification * o.object_distance / o.arm_path(mask.z, arm))))
        }
        None => Ok(Some(l)),
    }
}

fn synthetic_frames(path: &Path, width: usize, height: usize, n: u64, rate: f64, seed: u64, pool: &rayon::ThreadPool) -> Result<()> {
    let spad = cpi_core::spad::SpadConfig { pde: 1.0, dark_rate: 0.0, gate_time_us: 1.0, mean_photons_per_cell: -(1.0 - rate).ln() };
    let intensity = vec![1.0; width * height];
    let mut w = CpifWriter::create(path, width, height, 2, Some(Provenance { seed, config_hash: 0 }))?;
    let chunk = 512u64;
    for start in (0..n).step_by(chunk as usize) {
        let end = (start + chunk).min(n);
        let mut stack = FrameStack::zeroed(width, height, (end - start) as usize);
        pool.install(|| {
            stack.frames_mut().into_par_iter().enumerate().for_each(|(k, (a, b))| {
                let mut rng = seeds::stream(seed, seeds::DETECT, start + k as u64);
                detect_frame(&intensity, width, &spad, 1, &mut rng, a);
                detect_frame(&intensity, width, &spad, 1, &mut rng, b);
            })
        });
        w.write_stack(&stack)?;
    }
    w.finish()?;
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => ConfigFile { preset: Some("paper-like".into()), ..Default::default() }.resolve()?,
    };
    let pool = pool(a.workers.workers)?;
    let tmp;
    let out = match &a.out {
        Some(o) => o.clone(),
        None => {
            tmp = std::env::temp_dir().join(format!("cpi-bench-{}", std::process::id()));
            tmp.clone()
        }
    };
    create_dir(&out)?;
    let mut m = RunManifest::new("bench", pool.current_num_threads());
    m.config_sha256 = Some(cfg.hash());
    let frames = match &a.frames {
        Some(f) => f.clone(),
        None => {
            let acq = &cfg.setup.acquisition;
            let seed = a.seed.unwrap_or(acq.seed);
            let path = out.join("bench_frames.cpif");
            let t = Instant::now();
            synthetic_frames(&path, acq.width, acq.height, a.count, a.rate, seed, &pool)?;
            m.time("generate", t);
            m.seeds.insert("frames".into(), seed);
            path
        }
    };
    let header = *crate::cpif::CpifReader::open(&frames)?.header();
    let mut gargs = GeometryArgs { roi: a.geometry.roi.clone(), bin: a.geometry.bin, mode: a.geometry.mode.clone() };
    if gargs.bin.is_none() {
        gargs.bin = Some(4);
    }
    let geometry = geometry_for(&cfg, header.width as usize, header.height as usize, &gargs)?;
    let t = Instant::now();
    let acc = correlate_file(&frames, &geometry, &pool)?;
    let gamma = acc.finalize()?;
    m.time("correlate", t);
    let o = &cfg.setup.optics;
    let z = match &a.z {
        Some(t) => parse_z(t)?,
        None => vec![o.z_b, 0.5 * (o.z_a + o.z_b), o.z_a],
    };
    let ap = apertures(&cfg)?;
    let mut per_z = Vec::new();
    for &zi in &z {
        let t = Instant::now();
        let r = refocus_planes(&gamma, &[zi], o, &ap, &cfg.refocus, &pool).pop().expect("one plane");
        r?;
        per_z.push(t.elapsed().as_secs_f64());
    }
    let worst = per_z.iter().copied().fold(0.0, f64::max);
    m.timings_s.insert("refocus_max_per_z".into(), worst);
    m.param("frames", acc.n_t);
    m.param("bins_per_arm", json!([acc.n_a, acc.n_b]));
    m.param("mode", mode_name(geometry.mode));
    m.param("refocus_z", json!(z));
    m.param("refocus_s", json!(per_z));
    m.write(&out)?;
    let ct = m.timings_s["correlate"];
    println!("stage       seconds   budget");
    println!("correlate   {ct:8.2}   60 ({} frames, {}x{} bins per arm, {} workers)", acc.n_t, geometry.bins(Arm::A)[0], geometry.bins(Arm::A)[1], pool.current_num_threads());
    println!("refocus/z   {worst:8.2}   14");
    if a.out.is_none() {
        let _ = std::fs::remove_dir_all(&out);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "cpi", "correlate", "--frames", "f.cpif", "--config", "c.toml", "--out", "o", "--roi", "0,0,4,4", "--roi", "4,0,4,4",
            "--bin", "2", "--mode", "reduced1d", "--workers", "3",
        ])
        .unwrap();
        match cli.command {
            Command::Correlate(a) => {
                assert_eq!(a.geometry.roi.len(), 2);
                assert_eq!(a.geometry.bin, Some(2));
                assert_eq!(a.workers.workers, Some(3));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["cpi", "refocus", "--gamma", "g", "--config", "c", "--out", "o", "--z", "300:340:5"]).is_ok());
        assert!(Cli::try_parse_from(["cpi", "simulate", "--config", "c", "--out", "o", "--seed", "18446744073709551615"]).is_ok());
        assert!(Cli::try_parse_from(["cpi", "analyze", "apertures", "--config", "c"]).is_ok());
    }

    #[test]
    fn flipped_rows() {
        assert_eq!(flip_rows(&[1.0, 2.0, 3.0, 4.0], [2, 2]), vec![3.0, 4.0, 1.0, 2.0]);
    }
}
