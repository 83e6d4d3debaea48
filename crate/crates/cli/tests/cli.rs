use std::path::{Path, PathBuf};
use std::process::Command;

use xstereo::scenesim::{render_bundle, CameraId, SceneSpec};
use xstereo_cli::commands::{self, EstimateMeta};
use xstereo_cli::config::{Config, Preset};
use xstereo_cli::dataset::{self, frame_dir, read_frame, Calibration};
use xstereo::matching::MatchMode;

const SMALL: &str = "
seed = 5
[sim]
frames = 2
width = 64
height = 32
focal = 80.0
supersample = 1
objects = 4
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xstereo"))
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, format!("{SMALL}{extra}")).unwrap();
    p
}

fn run(args: &[&str]) -> std::process::Output {
    let out = bin().args(args).env_remove("XSTEREO_SEED").env_remove("XSTEREO_THREADS").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_writes_full_frame_and_reads_back() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "");
    let data = tmp.path().join("data");
    run(&["simulate", "--config", cfg_path.to_str().unwrap(), "--frames", "1", "--preset", "day", "--out", data.to_str().unwrap()]);

    let names: Vec<String> = std::fs::read_dir(&data).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("frame_")).count(), 1);
    let dir = frame_dir(&data, 0);
    for f in [
        "gated_l_slice0.png",
        "gated_r_slice2.png",
        "rccb_l_raw.png",
        "rccb_r_rgb.png",
        "gt_depth_gated_l.f32",
        "gt_depth_rccb_r.f32",
        "lidar_sparse.f32",
    ] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }

    let cfg = Config::parse(SMALL).unwrap();
    let calib = Calibration::read(&data).unwrap();
    let meta = &calib.frames[0];
    let read = read_frame(&data, &calib, meta).unwrap();
    let scene = SceneSpec::street(meta.seed, Preset::Day.ambient_level(), cfg.sim.objects);
    let truth = render_bundle(&scene, &cfg.sim.rig(), &cfg.sim.render_config(Preset::Day, meta.seed)).unwrap();
    let q = 0.5 / 65535.0 + 1e-12;
    let close = |a: &xstereo::Image, b: &xstereo::Image| a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() <= q);
    for (a, b) in read.gated.left.slices.iter().zip(&truth.gated.left.slices) {
        assert!(close(a, b));
    }
    assert!(close(&read.gated.right.ambient_ref, &truth.gated.right.ambient_ref));
    assert!(close(&read.rccb_raw.left, &truth.rccb_raw.left));
    assert!(close(&read.rccb_rgb.right, &truth.rccb_rgb.right));
    for id in CameraId::ALL {
        let (a, b) = (read.gt_depth.get(id), truth.gt_depth.get(id));
        assert_eq!(a.mask, b.mask);
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() <= 1e-6 * y.abs()));
    }
    assert_eq!(read.delta_t, truth.delta_t);
    assert_eq!(read.calib, truth.calib);
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&["simulate", "--config", cfg_path.to_str().unwrap(), "--out", a.to_str().unwrap(), "--threads", "1"]);
    run(&["simulate", "--config", cfg_path.to_str().unwrap(), "--out", b.to_str().unwrap(), "--threads", "3"]);
    assert_eq!(files(&a), files(&b));
    let c = tmp.path().join("c");
    run(&["simulate", "--config", cfg_path.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "6"]);
    assert_ne!(files(&a), files(&c));
}

#[test]
fn evaluating_ground_truth_gives_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Config::parse(SMALL).unwrap();
    let data = tmp.path().join("data");
    let calib = commands::simulate(&cfg, Preset::Night, &data).unwrap();
    let pred = tmp.path().join("pred");
    let cam = calib.rig.gated_left.intrinsics;
    for meta in &calib.frames {
        let dir = frame_dir(&pred, meta.index);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::copy(frame_dir(&data, meta.index).join("gt_depth_gated_l.f32"), dir.join("fused_depth.f32")).unwrap();
        let m = EstimateMeta { mode: MatchMode::Fused, camera: CameraId::GatedLeft, grid_scale: 1, grid_camera: cam, pose_velocity: None };
        dataset::write_json(&dir.join("fused.json"), &m).unwrap();
    }
    let ev = commands::evaluate(&cfg, &data, &pred, &[MatchMode::Fused]).unwrap();
    let agg = &ev.mode(MatchMode::Fused).unwrap().aggregate;
    let mut seen = 0;
    for b in &agg.buckets {
        if let Some(m) = b.metrics {
            assert_eq!((m.rmse, m.mae, m.ard, m.excluded), (0.0, 0.0, 0.0, 0));
            assert_eq!(m.delta, [100.0; 3]);
            seen += 1;
        }
    }
    assert!(seen > 0);

    let err = commands::evaluate(&cfg, &data, &pred, &[MatchMode::GatedOnly]).unwrap_err();
    assert!(err.to_string().contains("gated-only.json"), "{err}");
}

#[test]
fn single_fused_iteration_equals_target_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "[matching]\nfusion_upsample = false\n");
    let c = cfg_path.to_str().unwrap();
    let data = tmp.path().join("data");
    let pred = tmp.path().join("pred");
    run(&["simulate", "--config", c, "--frames", "1", "--out", data.to_str().unwrap()]);
    run(&["estimate", "--config", c, "--data", data.to_str().unwrap(), "--out", pred.to_str().unwrap(), "--mode", "fused,gated-only", "--iterations", "1", "--levels", "1"]);
    let dir = frame_dir(&pred, 0);
    let read = |n: &str| std::fs::read(dir.join(n)).unwrap();
    assert_eq!(read("fused_disparity.f32"), read("gated-only_disparity.f32"));
    assert_eq!(read("fused_depth.f32"), read("gated-only_depth.f32"));
}

#[test]
fn errors_exit_nonzero_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin().args(["decode", "--data", tmp.path().join("nowhere").to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("calib.json"));

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[sim]\nframes = \"many\"\n").unwrap();
    let out = bin().args(["simulate", "--config", bad.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 2") && msg.contains("frames"), "{msg}");
}

#[test]
fn environment_overrides_config_and_flags_override_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "");
    let c = cfg_path.to_str().unwrap();
    let out = |seed_env: Option<&str>, seed_flag: Option<&str>, name: &str| {
        let dir = tmp.path().join(name);
        let mut cmd = bin();
        cmd.args(["simulate", "--config", c, "--frames", "1", "--out", dir.to_str().unwrap()]);
        if let Some(s) = seed_flag {
            cmd.args(["--seed", s]);
        }
        match seed_env {
            Some(s) => cmd.env("XSTEREO_SEED", s),
            None => cmd.env_remove("XSTEREO_SEED"),
        };
        assert!(cmd.status().unwrap().success());
        Calibration::read(&dir).unwrap().frames[0].seed
    };
    let file = out(None, None, "file");
    let env = out(Some("9"), None, "env");
    let flag = out(Some("9"), Some("5"), "flag");
    assert_ne!(file, env);
    assert_eq!(file, flag);
}
