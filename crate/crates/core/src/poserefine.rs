//! Photometric residual-pose refinement between two cameras.
//!
//! The correction is parameterized as a velocity twist `ν` scaled by the measured
//! time offset: `X = X_init · exp(δt · ν)`. Levenberg–Marquardt runs on a local
//! perturbation `X_cur · exp(δt · Δν)` with Huber reweighting, coarse to fine.

use nalgebra::{Matrix3, Matrix6, Point3, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};
use crate::se3::{exp_twist, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseRefineConfig {
    pub max_iters: usize,
    pub lm_lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Step-norm threshold on the displacement twist `δt·Δν`.
    pub convergence_tol: f64,
    pub huber_delta: f64,
    pub pyramid_levels: usize,
    pub min_valid_pixels: usize,
    /// Relative depth margin for the self-occlusion test; 0 disables it.
    pub occlusion_tol: f64,
}

impl Default for PoseRefineConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            lm_lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.5,
            convergence_tol: 1e-7,
            huber_delta: 0.1,
            pyramid_levels: 3,
            min_valid_pixels: 100,
            occlusion_tol: 0.02,
        }
    }
}

impl PoseRefineConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.lm_lambda0, self.lambda_up, self.lambda_down, self.convergence_tol, self.huber_delta];
        if self.max_iters == 0 || self.pyramid_levels == 0 || pos.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig(format!("pose refinement parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseRefineResult {
    pub transform: RigidTransform,
    /// Recovered velocity twist `ν*` (rad/s, m/s).
    pub velocity: Vector6<f64>,
    /// Mean Huber cost at the finest level.
    pub cost: f64,
    pub iterations: usize,
}

/// Camera pair and images for one pyramid level.
pub struct PoseProblem<'a> {
    pub f_target: &'a Image,
    pub f_src: &'a Image,
    pub depth_target: &'a DepthMap,
    pub cam_src: &'a CameraModel,
    pub cam_target: &'a CameraModel,
}

fn hat(p: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -p.z, p.y, p.z, 0.0, -p.x, -p.y, p.x, 0.0)
}

fn huber(r: f64, d: f64) -> (f64, f64) {
    let a = r.abs();
    if a <= d {
        (0.5 * r * r, 1.0)
    } else {
        (d * (a - 0.5 * d), d / a)
    }
}

/// Residuals `F_target(x) − F_src(π(X·p))` for every channel of target pixel
/// `(px, py)` and their Jacobians with respect to `Δν` in `X · exp(δt·Δν)`,
/// evaluated at `Δν = 0`. `None` if the pixel has no depth or leaves the source.
pub fn residual_jacobian(
    prob: &PoseProblem,
    x: &RigidTransform,
    delta_t: f64,
    px: usize,
    py: usize,
) -> Option<Vec<(f64, Vector6<f64>)>> {
    let z = prob.depth_target.get(px, py)?;
    let p = prob.cam_target.backproject(&nalgebra::Point2::new(px as f64, py as f64), z).ok()?;
    residual_jacobian_at(prob, x, &p, px, py).map(|v| v.into_iter().map(|(r, j)| (r, j * delta_t)).collect())
}

fn residual_jacobian_at(
    prob: &PoseProblem,
    x: &RigidTransform,
    p: &Point3<f64>,
    px: usize,
    py: usize,
) -> Option<Vec<(f64, Vector6<f64>)>> {
    let q = x.transform_point(p);
    if q.z <= 0.0 {
        return None;
    }
    let cam = prob.cam_src;
    let uv = cam.project(&q).ok()?;
    let iz = 1.0 / q.z;
    let jpi = nalgebra::Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * q.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * q.y * iz * iz,
    );
    // d(exp(ξ)p)/dξ at 0 = [−[p]× | I], rotated into the source frame.
    let mut dq = nalgebra::Matrix3x6::zeros();
    dq.fixed_view_mut::<3, 3>(0, 0).copy_from(&(x.rotation * -hat(&p.coords)));
    dq.fixed_view_mut::<3, 3>(0, 3).copy_from(&x.rotation);
    let duv = jpi * dq;
    let mut out = Vec::with_capacity(prob.f_src.channels);
    for c in 0..prob.f_src.channels {
        let (val, du, dv) = prob.f_src.sample_channel_grad(uv.x, uv.y, c)?;
        let r = prob.f_target.get(px, py, c) - val;
        let j = -(duv.row(0) * du + duv.row(1) * dv).transpose();
        out.push((r, j));
    }
    Some(out)
}

struct Level {
    f_target: Image,
    f_src: Image,
    depth: DepthMap,
    cam_src: CameraModel,
    cam_target: CameraModel,
    points: Vec<(usize, usize, Point3<f64>)>,
}

impl Level {
    fn new(f_target: Image, f_src: Image, depth: DepthMap, cam_src: CameraModel, cam_target: CameraModel) -> Self {
        let mut points = Vec::new();
        for y in 0..depth.height {
            for x in 0..depth.width {
                if let Some(z) = depth.get(x, y) {
                    if let Ok(p) = cam_target.backproject(&nalgebra::Point2::new(x as f64, y as f64), z) {
                        points.push((x, y, p));
                    }
                }
            }
        }
        Self { f_target, f_src, depth, cam_src, cam_target, points }
    }

    fn problem(&self) -> PoseProblem<'_> {
        PoseProblem {
            f_target: &self.f_target,
            f_src: &self.f_src,
            depth_target: &self.depth,
            cam_src: &self.cam_src,
            cam_target: &self.cam_target,
        }
    }
}

#[derive(Clone, Copy)]
struct Normal {
    cost: f64,
    count: usize,
    h: Matrix6<f64>,
    g: Vector6<f64>,
}

impl Normal {
    fn zero() -> Self {
        Self { cost: 0.0, count: 0, h: Matrix6::zeros(), g: Vector6::zeros() }
    }

    fn add(mut self, o: &Normal) -> Self {
        self.cost += o.cost;
        self.count += o.count;
        self.h += o.h;
        self.g += o.g;
        self
    }

    fn mean_cost(&self) -> f64 {
        if self.count == 0 {
            f64::INFINITY
        } else {
            self.cost / self.count as f64
        }
    }
}

const CHUNK: usize = 256;

/// Normal equations with respect to the displacement twist `ξ = δt·Δν`.
/// Chunks are reduced in index order so results do not depend on scheduling.
fn accumulate(level: &Level, x: &RigidTransform, huber_delta: f64, with_jacobian: bool) -> Normal {
    let prob = level.problem();
    let partial: Vec<Normal> = level
        .points
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Normal::zero();
            for (px, py, p) in chunk {
                let Some(res) = residual_jacobian_at(&prob, x, p, *px, *py) else { continue };
                for (r, j) in res {
                    let (rho, w) = huber(r, huber_delta);
                    acc.cost += rho;
                    acc.count += 1;
                    if with_jacobian {
                        acc.h += j * j.transpose() * w;
                        acc.g += j * (w * r);
                    }
                }
            }
            acc
        })
        .collect();
    partial.iter().fold(Normal::zero(), |a, b| a.add(b))
}

struct LevelOutcome {
    x: RigidTransform,
    cost: f64,
    iterations: usize,
}

/// Drops target points hidden in the source view by other target points, using a
/// z-buffer of the target depth splatted into the source raster.
fn drop_self_occluded(level: &mut Level, x: &RigidTransform, tol: f64) {
    let (w, h) = (level.cam_src.width, level.cam_src.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let landed: Vec<Option<(usize, f64)>> = level
        .points
        .iter()
        .map(|(_, _, p)| {
            let q = x.transform_point(p);
            let uv = level.cam_src.project(&q).ok()?;
            let (u, v) = (uv.x.round(), uv.y.round());
            (u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64).then(|| (v as usize * w + u as usize, q.z))
        })
        .collect();
    for &(i, z) in landed.iter().flatten() {
        zbuf[i] = zbuf[i].min(z);
    }
    // The splat is sparse when the source is finer; take the nearest occluder around.
    let r = ((level.cam_src.fx / level.cam_target.fx).ceil() as isize).max(1);
    let mut keep = Vec::with_capacity(level.points.len());
    for (pt, land) in level.points.iter().zip(&landed) {
        let visible = match land {
            None => true,
            Some((i, z)) => {
                let (cx, cy) = ((i % w) as isize, (i / w) as isize);
                let mut front = f64::INFINITY;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (sx, sy) = (cx + dx, cy + dy);
                        if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                            front = front.min(zbuf[sy as usize * w + sx as usize]);
                        }
                    }
                }
                *z - front <= tol * z.max(1.0)
            }
        };
        if visible {
            keep.push(*pt);
        }
    }
    level.points = keep;
}

fn solve_level(level: &Level, x0: RigidTransform, cfg: &PoseRefineConfig) -> Result<LevelOutcome> {
    let mut x = x0;
    let mut cur = accumulate(level, &x, cfg.huber_delta, true);
    let mut lambda = cfg.lm_lambda0;
    let mut rejected = 0;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let n = cur.count.max(1) as f64;
        let h = cur.h / n;
        let g = cur.g / n;
        let mut damped = h;
        for i in 0..6 {
            damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
            lambda *= cfg.lambda_up;
            rejected += 1;
            continue;
        };
        if step.norm() < cfg.convergence_tol {
            break;
        }
        let cand = x.compose(&exp_twist(&step));
        let next = accumulate(level, &cand, cfg.huber_delta, true);
        if next.count > 0 && next.mean_cost() <= cur.mean_cost() {
            x = cand;
            cur = next;
            lambda = (lambda * cfg.lambda_down).max(1e-12);
            rejected = 0;
        } else {
            lambda *= cfg.lambda_up;
            rejected += 1;
            if rejected >= cfg.max_iters {
                return Err(Error::Diverged(iterations));
            }
        }
    }
    Ok(LevelOutcome { x, cost: cur.mean_cost(), iterations })
}

/// Mean Huber cost of the alignment `x` on the full-resolution problem.
pub fn alignment_cost(prob: &PoseProblem, x: &RigidTransform, huber_delta: f64) -> f64 {
    let level = Level::new(
        prob.f_target.clone(),
        prob.f_src.clone(),
        prob.depth_target.clone(),
        *prob.cam_src,
        *prob.cam_target,
    );
    accumulate(&level, x, huber_delta, false).mean_cost()
}

/// Refines `x_init` (mapping target-frame points into the source frame) so that the
/// source features warped into the target frame match the target features.
pub fn refine_pose(
    prob: &PoseProblem,
    x_init: &RigidTransform,
    delta_t: f64,
    cfg: &PoseRefineConfig,
) -> Result<PoseRefineResult> {
    cfg.validate()?;
    if !delta_t.is_finite() {
        return Err(Error::InvalidConfig(format!("time offset must be finite, got {delta_t}")));
    }
    if prob.f_target.width != prob.depth_target.width
        || prob.f_target.height != prob.depth_target.height
        || prob.f_target.channels != prob.f_src.channels
    {
        return Err(Error::ShapeMismatch("target features, source features and depth disagree".into()));
    }
    let valid = prob.depth_target.valid_count();
    if valid < cfg.min_valid_pixels {
        return Err(Error::InsufficientValidPixels { required: cfg.min_valid_pixels, actual: valid });
    }
    if delta_t == 0.0 {
        let cost = alignment_cost(prob, x_init, cfg.huber_delta);
        return Ok(PoseRefineResult { transform: *x_init, velocity: Vector6::zeros(), cost, iterations: 0 });
    }

    let mut levels = vec![Level::new(
        prob.f_target.clone(),
        prob.f_src.clone(),
        prob.depth_target.clone(),
        *prob.cam_src,
        *prob.cam_target,
    )];
    for _ in 1..cfg.pyramid_levels {
        let prev = levels.last().expect("non-empty");
        if prev.depth.width < 16 || prev.depth.height < 16 {
            break;
        }
        let ft = prev.f_target.downsample2();
        let fs = prev.f_src.downsample2();
        let cam_t = prev.cam_target.scaled(0.5, ft.width, ft.height);
        let cam_s = prev.cam_src.scaled(0.5, fs.width, fs.height);
        levels.push(Level::new(ft, fs, prev.depth.downsample2_min(), cam_s, cam_t));
    }

    let mut x = *x_init;
    let mut iterations = 0;
    let mut cost = f64::INFINITY;
    for (i, level) in levels.iter_mut().enumerate().rev() {
        if cfg.occlusion_tol > 0.0 {
            drop_self_occluded(level, &x, cfg.occlusion_tol);
        }
        if i > 0 && level.points.len() < cfg.min_valid_pixels {
            continue;
        }
        let out = solve_level(level, x, cfg)?;
        x = out.x;
        iterations += out.iterations;
        cost = out.cost;
    }
    let velocity = x_init.invert().compose(&x).log() / delta_t;
    let transform = x_init.compose(&exp_twist(&(velocity * delta_t)));
    Ok(PoseRefineResult { transform, velocity, cost, iterations })
}
