//! Subcommand implementations. Frames are processed in parallel; each frame's
//! files are written by the worker that produced them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xstereo::eval::{bucketed_report, Bucket, EvalReport};
use xstereo::matching::{depth_in_view, estimate_disparity, MatchConfig, MatchMode};
use xstereo::scenesim::{render_bundle, CameraId, SceneSpec};
use xstereo::tofdecode::decode_depth;
use xstereo::{CameraModel, DepthMap};

use crate::config::{Config, GroundTruth, Preset};
use crate::dataset::{self, frame_dir, read_depth, read_frame, read_json, write_depth, write_f32, write_json, Calibration, FrameMeta};
use crate::{plot, CliError};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Renders `cfg.sim.frames` frames of `preset` into `out`.
pub fn simulate(cfg: &Config, preset: Preset, out: &Path) -> Result<Calibration, CliError> {
    create_dir(out)?;
    let rig = cfg.sim.rig();
    let frames = (0..cfg.sim.frames)
        .into_par_iter()
        .map(|index| {
            let seed = cfg.frame_seed(preset, index);
            let scene = SceneSpec::street(seed, preset.ambient_level(), cfg.sim.objects);
            let bundle = render_bundle(&scene, &rig, &cfg.sim.render_config(preset, seed))?;
            dataset::write_frame(&frame_dir(out, index), &bundle)?;
            Ok(FrameMeta { index, seed, delta_t: bundle.delta_t, ambient_level: bundle.ambient_level })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let gating = cfg.sim.render_config(preset, 0).gating;
    let calib = Calibration { preset, rig, profiles: gating.profiles, dark: gating.dark, frames };
    calib.write(out)?;
    Ok(calib)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSummary {
    pub index: usize,
    /// Fraction of pixels passing the SNR mask, left and right.
    pub coverage: [f64; 2],
}

/// Decodes both gated stacks of every frame into `out/frame_*/decode_{l,r}_*.f32`.
pub fn decode(cfg: &Config, data: &Path, out: &Path) -> Result<Vec<DecodeSummary>, CliError> {
    let calib = Calibration::read(data)?;
    let summaries = calib
        .frames
        .par_iter()
        .map(|meta| {
            let bundle = read_frame(data, &calib, meta)?;
            let dir = frame_dir(out, meta.index);
            create_dir(&dir)?;
            let mut coverage = [0.0; 2];
            for (i, (s, stack)) in [("l", &bundle.gated.left), ("r", &bundle.gated.right)].into_iter().enumerate() {
                let r = decode_depth(stack, &cfg.decode)?;
                write_depth(&dir.join(format!("decode_{s}_depth.f32")), &r.depth)?;
                write_f32(&dir.join(format!("decode_{s}_albedo.f32")), &r.albedo_hat.data)?;
                write_f32(&dir.join(format!("decode_{s}_ambient.f32")), &r.ambient_hat.data)?;
                write_f32(&dir.join(format!("decode_{s}_residual.f32")), &r.residual.data)?;
                coverage[i] = r.coverage();
            }
            Ok(DecodeSummary { index: meta.index, coverage })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_json(&out.join("decode.json"), &summaries)?;
    Ok(summaries)
}

/// Sidecar of an estimated depth raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateMeta {
    pub mode: MatchMode,
    /// Left camera hosting the estimate.
    pub camera: CameraId,
    /// Output grid resolution relative to `camera`.
    pub grid_scale: usize,
    pub grid_camera: CameraModel,
    /// Recovered RCCB velocity twist `(ω, v)` for fused runs.
    pub pose_velocity: Option<[f64; 6]>,
}

fn estimate_paths(dir: &Path, mode: MatchMode) -> (PathBuf, PathBuf, PathBuf) {
    let m = mode.name();
    (dir.join(format!("{m}_depth.f32")), dir.join(format!("{m}_disparity.f32")), dir.join(format!("{m}.json")))
}

/// Runs the matcher in every requested mode on every frame.
pub fn estimate(cfg: &Config, data: &Path, out: &Path, modes: &[MatchMode]) -> Result<(), CliError> {
    let calib = Calibration::read(data)?;
    calib.frames.par_iter().try_for_each(|meta| {
        let bundle = read_frame(data, &calib, meta)?;
        let dir = frame_dir(out, meta.index);
        create_dir(&dir)?;
        for &mode in modes {
            let mc = MatchConfig { mode, ..cfg.matching.clone() };
            let est = estimate_disparity(&bundle, &mc)?;
            let (depth_p, disp_p, meta_p) = estimate_paths(&dir, mode);
            write_depth(&depth_p, &est.depth)?;
            write_depth(&disp_p, &est.disparity)?;
            let pose_velocity = est.pose.as_ref().map(|p| {
                let mut v = [0.0; 6];
                v.copy_from_slice(p.velocity.as_slice());
                v
            });
            let m = EstimateMeta { mode, camera: est.camera, grid_scale: est.grid_scale, grid_camera: est.grid_camera, pose_velocity };
            write_json(&meta_p, &m)?;
        }
        Ok(())
    })
}

/// Reads an estimate and resamples it to the native pixels of `view`.
pub fn load_estimate(calib: &Calibration, pred: &Path, index: usize, mode: MatchMode, view: CameraId) -> Result<DepthMap, CliError> {
    let (depth_p, _, meta_p) = estimate_paths(&frame_dir(pred, index), mode);
    if !meta_p.exists() {
        return Err(CliError::Missing(meta_p));
    }
    let meta: EstimateMeta = read_json(&meta_p)?;
    let depth = read_depth(&depth_p, meta.grid_camera.width, meta.grid_camera.height)?;
    Ok(depth_in_view(&depth, meta.camera, &meta.grid_camera, meta.grid_scale, &calib.rig, view))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEvaluation {
    pub mode: MatchMode,
    pub frames: Vec<EvalReport>,
    /// Pixels of all frames pooled.
    pub aggregate: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub view: CameraId,
    pub ground_truth: GroundTruth,
    pub modes: Vec<ModeEvaluation>,
}

impl Evaluation {
    pub fn mode(&self, mode: MatchMode) -> Option<&ModeEvaluation> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

fn ground_truth(cfg: &Config, data: &Path, calib: &Calibration, index: usize) -> Result<DepthMap, CliError> {
    let view = cfg.eval.view;
    let cam = calib.rig.camera(view).intrinsics;
    let dir = frame_dir(data, index);
    let file = match cfg.eval.ground_truth {
        GroundTruth::Dense => dataset::gt_depth_name(view),
        GroundTruth::Lidar if view == CameraId::GatedLeft => dataset::LIDAR_FILE.to_string(),
        GroundTruth::Lidar => return Err(CliError::Config("lidar ground truth exists only for the gated_left view".into())),
    };
    read_depth(&dir.join(file), cam.width, cam.height)
}

/// Scores every mode's estimates against ground truth in `cfg.eval.view`.
pub fn evaluate(cfg: &Config, data: &Path, pred: &Path, modes: &[MatchMode]) -> Result<Evaluation, CliError> {
    let calib = Calibration::read(data)?;
    let per_frame = calib
        .frames
        .par_iter()
        .map(|meta| {
            let gt = ground_truth(cfg, data, &calib, meta.index)?;
            modes
                .iter()
                .map(|&mode| {
                    let d = load_estimate(&calib, pred, meta.index, mode, cfg.eval.view)?;
                    Ok(bucketed_report(&d, &gt, &cfg.eval.buckets)?)
                })
                .collect::<Result<Vec<_>, CliError>>()
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let modes = modes
        .iter()
        .enumerate()
        .map(|(i, &mode)| {
            let frames: Vec<EvalReport> = per_frame.iter().map(|f| f[i].clone()).collect();
            let aggregate = EvalReport::aggregate(&frames)?;
            Ok(ModeEvaluation { mode, frames, aggregate })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Evaluation { view: cfg.eval.view, ground_truth: cfg.eval.ground_truth, modes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetResult {
    pub preset: Preset,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub frames: usize,
    pub buckets: Vec<Bucket>,
    pub presets: Vec<PresetResult>,
}

impl BenchmarkReport {
    pub fn mae(&self, preset: Preset, mode: MatchMode, bucket: Bucket) -> Option<f64> {
        let p = self.presets.iter().find(|p| p.preset == preset)?;
        Some(p.evaluation.mode(mode)?.aggregate.get(bucket)?.mae)
    }

    /// Fixed-width table: one row per preset and mode, metric columns per bucket.
    pub fn table(&self) -> String {
        let mut s = String::new();
        for b in &self.buckets {
            let _ = writeln!(s, "range {}", b.label());
            let _ = writeln!(s, "{:<6} {:<11} {:>8} {:>8} {:>7} {:>7} {:>7} {:>7} {:>9}", "preset", "mode", "RMSE", "MAE", "ARD", "d1", "d2", "d3", "excluded");
            for p in &self.presets {
                for m in &p.evaluation.modes {
                    match m.aggregate.get(*b) {
                        Some(x) => {
                            let _ = writeln!(
                                s,
                                "{:<6} {:<11} {:>8.3} {:>8.3} {:>7.4} {:>7.2} {:>7.2} {:>7.2} {:>9}",
                                p.preset.name(),
                                m.mode.name(),
                                x.rmse,
                                x.mae,
                                x.ard,
                                x.delta[0],
                                x.delta[1],
                                x.delta[2],
                                x.excluded
                            );
                        }
                        None => {
                            let _ = writeln!(s, "{:<6} {:<11} (no ground truth in range)", p.preset.name(), m.mode.name());
                        }
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Simulates, estimates and evaluates every preset, then writes
/// `benchmark.json`, `benchmark.txt` and one MAE chart per preset and bucket.
pub fn benchmark(cfg: &Config, out: &Path) -> Result<BenchmarkReport, CliError> {
    create_dir(out)?;
    let modes = &cfg.benchmark.modes;
    let mut presets = Vec::new();
    for &preset in &cfg.benchmark.presets {
        let root = out.join(preset.name());
        let (data, pred) = (root.join("data"), root.join("pred"));
        let t = std::time::Instant::now();
        simulate(cfg, preset, &data)?;
        estimate(cfg, &data, &pred, modes)?;
        let evaluation = evaluate(cfg, &data, &pred, modes)?;
        write_json(&root.join("evaluation.json"), &evaluation)?;
        eprintln!("{}: {} frames in {:.1} s", preset.name(), cfg.sim.frames, t.elapsed().as_secs_f64());
        presets.push(PresetResult { preset, evaluation });
    }
    let report = BenchmarkReport { seed: cfg.seed, frames: cfg.sim.frames, buckets: cfg.eval.buckets.clone(), presets };
    write_json(&out.join("benchmark.json"), &report)?;
    std::fs::write(out.join("benchmark.txt"), report.table()).map_err(|e| CliError::io(&out.join("benchmark.txt"), e))?;
    let plots = out.join("plots");
    create_dir(&plots)?;
    for p in &report.presets {
        for b in &report.buckets {
            let values: Vec<Option<f64>> = modes.iter().map(|&m| report.mae(p.preset, m, *b)).collect();
            let name = format!("{}_mae_{}-{}.png", p.preset.name(), b.lo, b.hi);
            plot::bar_chart(&plots.join(name), &values)?;
        }
    }
    Ok(report)
}
