use std::path::{Path, PathBuf};

use cpi::cli::main_with;
use cpi::manifest::RunManifest;

const SMALL: &str = r#"
preset = "desk"

[acquisition]
frames = 300
width = 4
height = 32
seed = 11

[spad]
mean_photons_per_cell = 0.3

[object]
kind = "double_slit"
z = 319.0
width_um = 100.0
spacing_um = 200.0

[simulation]
chunk_frames = 64

[refocus]
z = "310:330:10"
"#;

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["cpi"];
    v.extend_from_slice(args);
    main_with(v)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup(dir: &Path) -> PathBuf {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    cfg
}

fn pipeline(dir: &Path, cfg: &Path, workers: &str) -> PathBuf {
    let root = dir.join(format!("w{workers}"));
    let (sim, cor, refo) = (root.join("sim"), root.join("cor"), root.join("ref"));
    assert_eq!(run(&["simulate", "--config", s(cfg), "--out", s(&sim), "--workers", workers]), 0);
    let frames = sim.join("frames.cpif");
    assert_eq!(
        run(&["correlate", "--frames", s(&frames), "--config", s(cfg), "--out", s(&cor), "--mode", "full4d", "--workers", workers]),
        0
    );
    assert_eq!(run(&["refocus", "--gamma", s(&cor.join("gamma.cpia")), "--config", s(cfg), "--out", s(&refo), "--workers", workers]), 0);
    root
}

fn outputs(root: &Path) -> Vec<(String, String)> {
    let mut all = Vec::new();
    for stage in ["sim", "cor", "ref"] {
        let m = RunManifest::read(&root.join(stage).join("manifest.json")).unwrap();
        all.extend(m.outputs.into_iter().map(|e| (format!("{stage}/{}", e.path), e.sha256)));
    }
    all
}

#[test]
fn pipeline_is_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let one = pipeline(dir.path(), &cfg, "1");
    let three = pipeline(dir.path(), &cfg, "3");
    let (a, b) = (outputs(&one), outputs(&three));
    assert_eq!(a.len(), 3 + 3 + 9, "{a:?}");
    assert_eq!(a, b);
    for (name, _) in &a {
        let (x, y) = (std::fs::read(one.join(name)).unwrap(), std::fs::read(three.join(name)).unwrap());
        assert!(x == y, "{name} differs between worker counts");
    }
    let m = RunManifest::read(&one.join("sim/manifest.json")).unwrap();
    assert_eq!(m.seeds["acquisition"], 11);
    assert!(m.config_sha256.unwrap().len() == 64);
    assert!(m.timings_s.contains_key("simulate"));

    let restarted = dir.path().join("again");
    assert_eq!(
        run(&["refocus", "--gamma", s(&one.join("cor/gamma.cpia")), "--config", s(&cfg), "--out", s(&restarted), "--z", "320"]),
        0
    );
    assert!(restarted.join("plane_000.pgm").exists());

    let vis = dir.path().join("vis");
    assert_eq!(run(&["analyze", "visibility", "--input", s(&one.join("ref/plane_001.cpia")), "--config", s(&cfg), "--out", s(&vis)]), 0);
    assert!(vis.join("profile.csv").exists());
    assert_eq!(run(&["analyze", "linearity", "--frames", s(&one.join("sim/frames.cpif"))]), 0);
    assert_eq!(run(&["analyze", "snr", "--input", s(&one.join("ref/plane_000.cpia"))]), 0);
}

#[test]
fn seed_flag_changes_frames() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&a), "--seed", "1"]), 0);
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&b), "--seed", "2"]), 0);
    let fa = std::fs::read(a.join("frames.cpif")).unwrap();
    let fb = std::fs::read(b.join("frames.cpif")).unwrap();
    assert_eq!(fa.len(), fb.len());
    assert_ne!(fa, fb);
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "preset = \"desk\"\n[optics]\nfocal_length = -5.0\n").unwrap();
    assert_eq!(run(&["simulate", "--config", s(&bad), "--out", s(&out)]), 2);
    std::fs::write(&bad, "preset = \"desk\"\n[optics]\nunknown = 1\n").unwrap();
    assert_eq!(run(&["simulate", "--config", s(&bad), "--out", s(&out)]), 2);
    assert_eq!(run(&["simulate", "--config", s(&cfg)]), 2);
    assert_eq!(run(&["correlate", "--frames", s(&dir.path().join("none.cpif")), "--config", s(&cfg), "--out", s(&out)]), 3);
    assert_eq!(run(&["simulate", "--config", s(&dir.path().join("none.toml")), "--out", s(&out)]), 3);

    let sim = dir.path().join("sim");
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&sim)]), 0);
    let frames = sim.join("frames.cpif");
    let mut bytes = std::fs::read(&frames).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    let broken = dir.path().join("broken.cpif");
    std::fs::write(&broken, &bytes).unwrap();
    assert_eq!(run(&["correlate", "--frames", s(&broken), "--config", s(&cfg), "--out", s(&out)]), 3);
    assert!(!out.join("gamma.cpia").exists(), "no output after a checksum failure");
    std::fs::write(&broken, &bytes[..bytes.len() - 100]).unwrap();
    assert_eq!(run(&["correlate", "--frames", s(&broken), "--config", s(&cfg), "--out", s(&out)]), 3);

    assert_eq!(run(&["correlate", "--frames", s(&frames), "--config", s(&cfg), "--out", s(&out), "--roi", "0,0,99,4"]), 2);
    assert_eq!(run(&["correlate", "--frames", s(&frames), "--config", s(&cfg), "--out", s(&out), "--mode", "sideways"]), 2);
    assert_eq!(run(&["correlate", "--frames", s(&frames), "--config", s(&cfg), "--out", s(&out)]), 0);
    let gamma = out.join("gamma.cpia");
    // z equal to the source plane makes the refocus transform singular.
    assert_eq!(run(&["refocus", "--gamma", s(&gamma), "--config", s(&cfg), "--out", s(&out), "--z", "600"]), 4);
    assert_eq!(run(&["refocus", "--gamma", s(&frames), "--config", s(&cfg), "--out", s(&out), "--z", "320"]), 3);
    assert_eq!(run(&["refocus", "--gamma", s(&gamma), "--config", s(&cfg), "--out", s(&out), "--z", "1:2"]), 2);
}

#[test]
fn analyze_commands_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("an");
    assert_eq!(run(&["analyze", "apertures", "--config", s(&cfg), "--out", s(&out)]), 0);
    let text = std::fs::read_to_string(out.join("apertures.csv")).unwrap();
    assert!(text.starts_with("ca_lens_a,ca_lens_b,ca_source,limiting\n"));
    assert!(text.trim_end().ends_with("source"));

    let pts = dir.path().join("snr.csv");
    std::fs::write(&pts, "n_t,snr\n9800,3.9\n98000,5.1\n400000,5.3\n").unwrap();
    assert_eq!(run(&["analyze", "snr-fit", "--points", s(&pts), "--out", s(&out)]), 0);
    assert!(out.join("snr_fit.pgm").exists());
    std::fs::write(&pts, "n_t,snr\n9800,3.9\n").unwrap();
    assert_eq!(run(&["analyze", "snr-fit", "--points", s(&pts)]), 4);

    assert_eq!(run(&["analyze", "resolution", "--config", s(&cfg), "--out", s(&out), "--z", "345"]), 0);
    let rows = std::fs::read_to_string(out.join("resolution.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2, "{rows}");
}

#[test]
fn bench_reports_both_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.toml");
    std::fs::write(&cfg, "preset = \"paper-like\"\n[acquisition]\nwidth = 32\nheight = 32\n").unwrap();
    let out = dir.path().join("bench");
    assert_eq!(run(&["bench", "--config", s(&cfg), "--out", s(&out), "--count", "500", "--bin", "4"]), 0);
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert!(m.timings_s.contains_key("correlate"));
    assert!(m.timings_s.contains_key("refocus_max_per_z"));
    assert_eq!(m.parameters["frames"], 500);
}
