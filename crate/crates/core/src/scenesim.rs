//! Ray-cast synthetic scenes and four-camera frame bundles.
//!
//! World coordinates coincide with the rig frame: `x` right, `y` down, `z` forward.
//! Camera poses are camera-to-rig transforms.

use nalgebra::{Point3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::gating::{
    apply_noise, form_gated_slice, form_passive_image, rccb_demosaic, rccb_mosaic, splitmix64, Ambient,
    GatedSliceStack, GatingConfig, SensorNoise, EXPOSURE_REF_S,
};
use crate::image::{DepthMap, Image, MaskedMap};
use crate::se3::{exp_twist, RigidTransform};

const MAX_BACKGROUND_DEPTH: f64 = 300.0;
const HIT_EPS: f64 = 1e-9;
/// Texture feature size per metre of range in procedural scenes.
const TEXTURE_SCALE: f64 = 0.004;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Infinite plane through `point` with normal `normal`.
    Plane { point: [f64; 3], normal: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned box.
    Cuboid { min: [f64; 3], max: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Texture {
    Constant { value: f64 },
    /// 3-D checkerboard with cell edge `size` (m).
    Checker { size: f64, lo: f64, hi: f64 },
    /// Two-octave lattice value noise with feature size `scale` (m).
    ValueNoise { scale: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub ambient_level: f64,
    #[serde(default)]
    pub seed: u64,
}

fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl Shape {
    /// Smallest `t > 0` with `origin + t·dir` on the surface.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Shape::Plane { point, normal } => {
                let n = v3(normal);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&(v3(point) - origin.coords)) / denom;
                (t > HIT_EPS).then_some(t)
            }
            Shape::Sphere { center, radius } => {
                let oc = origin.coords - v3(center);
                let a = dir.dot(dir);
                let b = 2.0 * dir.dot(&oc);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Numerically stable roots.
                let q = -0.5 * (b + b.signum() * sq);
                let (mut t0, mut t1) = (q / a, c / q);
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                if t0 > HIT_EPS {
                    Some(t0)
                } else if t1 > HIT_EPS {
                    Some(t1)
                } else {
                    None
                }
            }
            Shape::Cuboid { min, max } => {
                let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..3 {
                    let o = origin[i];
                    let d = dir[i];
                    if d.abs() < 1e-15 {
                        if o < min[i] || o > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let (mut a, mut b) = ((min[i] - o) / d, (max[i] - o) / d);
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                    }
                    tmin = tmin.max(a);
                    tmax = tmax.min(b);
                }
                if tmax < tmin || tmax <= HIT_EPS {
                    None
                } else if tmin > HIT_EPS {
                    Some(tmin)
                } else {
                    Some(tmax)
                }
            }
        }
    }

    /// Signed distance-like residual of a point to the surface (0 on the surface).
    pub fn surface_residual(&self, p: &Point3<f64>) -> f64 {
        match self {
            Shape::Plane { point, normal } => {
                let n = v3(normal).normalize();
                n.dot(&(p.coords - v3(point)))
            }
            Shape::Sphere { center, radius } => (p.coords - v3(center)).norm() - radius,
            Shape::Cuboid { min, max } => {
                // Distance to the nearest face for points on or inside the box.
                (0..3)
                    .flat_map(|i| [(p[i] - min[i]).abs(), (p[i] - max[i]).abs()])
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Plane { normal, .. } => v3(normal).norm() > 0.0,
            Shape::Sphere { radius, .. } => *radius > 0.0,
            Shape::Cuboid { min, max } => (0..3).all(|i| max[i] > min[i]),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("degenerate primitive {self:?}")))
        }
    }
}

fn hash3(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let h = splitmix64(
        seed ^ splitmix64((ix as u64).wrapping_mul(0x8da6_b343) ^ (iy as u64).wrapping_mul(0xd816_3841) ^ (iz as u64).wrapping_mul(0xcb1a_b31f)),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(p: &Vector3<f64>, seed: u64) -> f64 {
    let base = p.map(f64::floor);
    let f = p - base;
    let s = f.map(|t| t * t * (3.0 - 2.0 * t));
    let (x0, y0, z0) = (base.x as i64, base.y as i64, base.z as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { s.x } else { 1.0 - s.x })
                    * (if dy == 1 { s.y } else { 1.0 - s.y })
                    * (if dz == 1 { s.z } else { 1.0 - s.z });
                acc += w * hash3(x0 + dx, y0 + dy, z0 + dz, seed);
            }
        }
    }
    acc
}

impl Texture {
    pub fn eval(&self, p: &Point3<f64>, seed: u64) -> f64 {
        match *self {
            Texture::Constant { value } => value,
            Texture::Checker { size, lo, hi } => {
                // Offset keeps axis-aligned faces away from cell boundaries.
                let q = p.coords / size + Vector3::repeat(0.37);
                let parity = (q.x.floor() + q.y.floor() + q.z.floor()) as i64;
                if parity.rem_euclid(2) == 0 {
                    lo
                } else {
                    hi
                }
            }
            Texture::ValueNoise { scale, lo, hi } => {
                let q = p.coords / scale;
                let n = 0.65 * value_noise(&q, seed) + 0.35 * value_noise(&(q * 2.13), seed ^ 0x5bd1_e995);
                lo + (hi - lo) * n
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = match *self {
            Texture::Constant { value } => in_unit(value),
            Texture::Checker { size, lo, hi } => size > 0.0 && in_unit(lo) && in_unit(hi),
            Texture::ValueNoise { scale, lo, hi } => scale > 0.0 && in_unit(lo) && in_unit(hi),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("texture parameters out of range: {self:?}")))
        }
    }
}

impl SceneSpec {
    /// Procedural road scene: textured ground, side walls, a far wall near
    /// 200 m and `n_objects` boxes and spheres spread over 12–210 m.
    pub fn street(seed: u64, ambient_level: f64, n_objects: usize) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x57ee7));
        // Feature size grows with range so texture stays a few pixels wide.
        let tex = |rng: &mut ChaCha8Rng, z: f64| {
            let lo = rng.random_range(0.1..0.3);
            Texture::ValueNoise { scale: (TEXTURE_SCALE * z).max(0.25), lo, hi: lo + rng.random_range(0.35..0.45) }
        };
        let far = rng.random_range(195.0..215.0);
        let mut primitives = vec![
            Primitive {
                shape: Shape::Plane { point: [0.0, 1.6, 0.0], normal: [0.0, -1.0, 0.0] },
                texture: Texture::ValueNoise { scale: 0.6, lo: 0.15, hi: 0.55 },
            },
            Primitive { shape: Shape::Plane { point: [0.0, 0.0, far], normal: [0.0, 0.0, -1.0] }, texture: tex(&mut rng, far) },
            Primitive {
                shape: Shape::Plane { point: [-14.0, 0.0, 0.0], normal: [1.0, 0.0, 0.0] },
                texture: Texture::ValueNoise { scale: 1.2, lo: 0.2, hi: 0.6 },
            },
            Primitive {
                shape: Shape::Plane { point: [14.0, 0.0, 0.0], normal: [-1.0, 0.0, 0.0] },
                texture: Texture::ValueNoise { scale: 1.2, lo: 0.2, hi: 0.6 },
            },
        ];
        for i in 0..n_objects {
            let z = 12.0 + (far - 15.0 - 12.0) * (i as f64 + rng.random_range(0.0..1.0)) / n_objects as f64;
            let half_fov = 0.3 * z;
            let x = rng.random_range(-half_fov..half_fov).clamp(-12.0, 12.0);
            let size = rng.random_range(1.5..3.0) + 0.02 * z;
            let shape = if rng.random_range(0.0..1.0) < 0.7 {
                let height = rng.random_range(1.5..3.5) + 0.03 * z;
                Shape::Cuboid { min: [x - size / 2.0, 1.6 - height, z], max: [x + size / 2.0, 1.6, z + size] }
            } else {
                let r = size / 2.0;
                Shape::Sphere { center: [x, 1.6 - r, z + r], radius: r }
            };
            primitives.push(Primitive { shape, texture: tex(&mut rng, z) });
        }
        SceneSpec { primitives, ambient_level, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::InvalidConfig("scene has no primitives".into()));
        }
        for p in &self.primitives {
            p.shape.validate()?;
            p.texture.validate()?;
        }
        let has_background = self.primitives.iter().any(|p| match &p.shape {
            Shape::Plane { point, normal } => {
                let n = v3(normal).normalize();
                n.z.abs() > 1e-6 && n.dot(&v3(point)).abs() / n.z.abs() <= MAX_BACKGROUND_DEPTH
            }
            _ => false,
        });
        if !has_background {
            return Err(Error::InvalidConfig(format!(
                "scene needs a background plane crossing the optical axis within {MAX_BACKGROUND_DEPTH} m"
            )));
        }
        if !(self.ambient_level >= 0.0) {
            return Err(Error::InvalidConfig("ambient_level must be non-negative".into()));
        }
        Ok(())
    }

    /// Nearest hit along a ray: `(t, primitive index)`.
    pub fn trace(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.shape.intersect(origin, dir).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    fn texture_seed(&self, index: usize) -> u64 {
        splitmix64(self.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

/// Ray-casts z-depth and albedo for every pixel of `cam` placed at `pose` (camera-to-world).
/// Casts one ray per pixel for depth (z-depth at the pixel center) and averages
/// albedo over a `supersample × supersample` grid of sub-pixel rays, which
/// models the integration over the pixel area.
pub fn raycast(scene: &SceneSpec, cam: &CameraModel, pose: &RigidTransform, supersample: usize) -> (DepthMap, Image) {
    let (w, h) = (cam.width, cam.height);
    let k = supersample.max(1);
    let origin = Point3::from(pose.translation);
    let shade = |u: f64, v: f64| -> Option<(f64, f64)> {
        // Camera-frame direction with unit z, so the hit parameter is the z-depth.
        let dir = pose.rotation * Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
        let (t, i) = scene.trace(&origin, &dir)?;
        let hit = origin + dir * t;
        Some((t, scene.primitives[i].texture.eval(&hit, scene.texture_seed(i))))
    };
    let rows: Vec<(Vec<f64>, Vec<bool>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut depth = vec![0.0; w];
            let mut mask = vec![false; w];
            let mut albedo = vec![0.0; w];
            for x in 0..w {
                let (xf, yf) = (x as f64, y as f64);
                if let Some((t, a)) = shade(xf, yf) {
                    depth[x] = t;
                    mask[x] = true;
                    albedo[x] = a;
                }
                if k > 1 {
                    let mut acc = 0.0;
                    let mut n = 0.0;
                    for j in 0..k {
                        for i in 0..k {
                            let du = (i as f64 + 0.5) / k as f64 - 0.5;
                            let dv = (j as f64 + 0.5) / k as f64 - 0.5;
                            if let Some((_, a)) = shade(xf + du, yf + dv) {
                                acc += a;
                                n += 1.0;
                            }
                        }
                    }
                    if n > 0.0 {
                        albedo[x] = acc / n;
                    }
                }
            }
            (depth, mask, albedo)
        })
        .collect();
    let mut dm = MaskedMap::invalid(w, h);
    let mut img = Image::new(w, h, 1);
    for (y, (d, m, a)) in rows.into_iter().enumerate() {
        dm.values[y * w..(y + 1) * w].copy_from_slice(&d);
        dm.mask[y * w..(y + 1) * w].copy_from_slice(&m);
        img.data[y * w..(y + 1) * w].copy_from_slice(&a);
    }
    (dm, img)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub intrinsics: CameraModel,
    /// Camera-to-rig transform.
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraId {
    GatedLeft,
    GatedRight,
    RccbLeft,
    RccbRight,
}

impl CameraId {
    pub const ALL: [CameraId; 4] = [CameraId::GatedLeft, CameraId::GatedRight, CameraId::RccbLeft, CameraId::RccbRight];

    pub fn name(&self) -> &'static str {
        match self {
            CameraId::GatedLeft => "gated_l",
            CameraId::GatedRight => "gated_r",
            CameraId::RccbLeft => "rccb_l",
            CameraId::RccbRight => "rccb_r",
        }
    }

    pub fn is_gated(&self) -> bool {
        matches!(self, CameraId::GatedLeft | CameraId::GatedRight)
    }
}

/// One value per rig camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerCamera<T> {
    pub gated_left: T,
    pub gated_right: T,
    pub rccb_left: T,
    pub rccb_right: T,
}

impl<T> PerCamera<T> {
    pub fn get(&self, id: CameraId) -> &T {
        match id {
            CameraId::GatedLeft => &self.gated_left,
            CameraId::GatedRight => &self.gated_right,
            CameraId::RccbLeft => &self.rccb_left,
            CameraId::RccbRight => &self.rccb_right,
        }
    }

    pub fn from_fn(mut f: impl FnMut(CameraId) -> T) -> Self {
        Self {
            gated_left: f(CameraId::GatedLeft),
            gated_right: f(CameraId::GatedRight),
            rccb_left: f(CameraId::RccbLeft),
            rccb_right: f(CameraId::RccbRight),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub gated_left: CameraSpec,
    pub gated_right: CameraSpec,
    pub rccb_left: CameraSpec,
    pub rccb_right: CameraSpec,
    pub baseline_gated: f64,
    pub baseline_rccb: f64,
    /// Injected RCCB shutter-timing error (s).
    pub time_offset_truth: f64,
    /// Rig velocity twist `(ω, v)` in rad/s and m/s, expressed in the RCCB camera frame.
    pub rig_velocity: [f64; 6],
}

pub const DEFAULT_BASELINE_M: f64 = 0.76;

impl RigSpec {
    /// Gated pair of `width × height` at focal length `focal`, RCCB pair at `ratio`×
    /// the linear resolution with the same field of view, mounted 12 cm above and
    /// 5 cm left of the gated pair. Both pairs use the 0.76 m baseline.
    pub fn standard(width: usize, height: usize, focal: f64, ratio: usize) -> Self {
        let g = CameraModel::centered(focal, width, height);
        let r = CameraModel::centered(focal * ratio as f64, width * ratio, height * ratio);
        let b = DEFAULT_BASELINE_M;
        let at = |x: f64, y: f64| RigidTransform::from_translation(Vector3::new(x, y, 0.0));
        Self {
            gated_left: CameraSpec { intrinsics: g, pose: at(0.0, 0.0) },
            gated_right: CameraSpec { intrinsics: g, pose: at(b, 0.0) },
            rccb_left: CameraSpec { intrinsics: r, pose: at(-0.05, -0.12) },
            rccb_right: CameraSpec { intrinsics: r, pose: at(-0.05 + b, -0.12) },
            baseline_gated: b,
            baseline_rccb: b,
            time_offset_truth: 0.0,
            rig_velocity: [0.0; 6],
        }
    }

    pub fn camera(&self, id: CameraId) -> &CameraSpec {
        match id {
            CameraId::GatedLeft => &self.gated_left,
            CameraId::GatedRight => &self.gated_right,
            CameraId::RccbLeft => &self.rccb_left,
            CameraId::RccbRight => &self.rccb_right,
        }
    }

    pub fn velocity(&self) -> Vector6<f64> {
        Vector6::from_row_slice(&self.rig_velocity)
    }

    /// Displacement of the RCCB cameras caused by the timing error.
    pub fn rccb_displacement(&self) -> RigidTransform {
        exp_twist(&(self.velocity() * self.time_offset_truth))
    }

    /// Pose at capture time: calibrated pose, displaced for RCCB cameras.
    pub fn actual_pose(&self, id: CameraId) -> RigidTransform {
        let pose = self.camera(id).pose;
        if id.is_gated() {
            pose
        } else {
            pose.compose(&self.rccb_displacement())
        }
    }

    /// Calibrated transform mapping points of camera `src` into camera `dst`.
    /// Copy of the rig with every camera at its capture-time pose.
    pub fn with_actual_poses(&self) -> RigSpec {
        let mut out = *self;
        out.rccb_left.pose = self.actual_pose(CameraId::RccbLeft);
        out.rccb_right.pose = self.actual_pose(CameraId::RccbRight);
        out
    }

    pub fn transform(&self, src: CameraId, dst: CameraId) -> RigidTransform {
        self.camera(dst).pose.invert().compose(&self.camera(src).pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.baseline_gated > 0.0 && self.baseline_rccb > 0.0) {
            return Err(Error::InvalidConfig("baselines must be positive".into()));
        }
        for id in CameraId::ALL {
            let c = self.camera(id);
            c.intrinsics.validate()?;
            if !c.pose.is_valid(1e-9) {
                return Err(Error::InvalidConfig(format!("{} pose is not a rigid transform", id.name())));
            }
        }
        for (l, r, b) in [
            (CameraId::GatedLeft, CameraId::GatedRight, self.baseline_gated),
            (CameraId::RccbLeft, CameraId::RccbRight, self.baseline_rccb),
        ] {
            let rel = self.transform(r, l);
            let rect = (rel.rotation - nalgebra::Matrix3::identity()).abs().max() < 1e-9
                && (rel.translation - Vector3::new(b, 0.0, 0.0)).norm() < 1e-9
                && self.camera(l).intrinsics == self.camera(r).intrinsics;
            if !rect {
                return Err(Error::InvalidConfig(format!(
                    "{}/{} pair is not rectified with baseline {b}",
                    l.name(),
                    r.name()
                )));
            }
        }
        Ok(())
    }
}

/// Rendering parameters beyond scene and rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub gating: GatingConfig,
    /// Passive RCCB exposure (s).
    pub exposure: f64,
    pub gated_noise: Option<SensorNoise>,
    pub rccb_noise: Option<SensorNoise>,
    pub lidar_lines: usize,
    pub lidar_jitter: f64,
    /// Standard deviation of the measured time-offset jitter (s).
    pub delta_t_jitter: f64,
    /// Sub-pixel rays per pixel side for albedo integration.
    pub supersample: usize,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            gating: GatingConfig::staggered(1.0),
            exposure: EXPOSURE_REF_S,
            gated_noise: None,
            rccb_noise: None,
            lidar_lines: 64,
            lidar_jitter: 0.0,
            delta_t_jitter: 1e-3,
            supersample: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stereo<T> {
    pub left: T,
    pub right: T,
}

/// One synchronized four-camera capture with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub gated: Stereo<GatedSliceStack>,
    /// Demosaiced RCCB images (3 channels).
    pub rccb_rgb: Stereo<Image>,
    pub rccb_raw: Stereo<Image>,
    pub gt_depth: PerCamera<DepthMap>,
    pub gt_albedo: PerCamera<Image>,
    /// Scanline samples in the gated-left frame.
    pub sparse_lidar: DepthMap,
    pub calib: RigSpec,
    /// Measured RCCB time offset (s).
    pub delta_t: f64,
    pub ambient_level: f64,
}

impl FrameBundle {
    pub fn gated_stack(&self, id: CameraId) -> Option<&GatedSliceStack> {
        match id {
            CameraId::GatedLeft => Some(&self.gated.left),
            CameraId::GatedRight => Some(&self.gated.right),
            _ => None,
        }
    }

    /// Single-channel intensity image of a camera: slice mean for gated cameras,
    /// RGB mean for RCCB cameras.
    pub fn intensity(&self, id: CameraId) -> Image {
        match id {
            CameraId::GatedLeft => self.gated.left.mean_image(),
            CameraId::GatedRight => self.gated.right.mean_image(),
            CameraId::RccbLeft => self.rccb_rgb.left.channel_mean(),
            CameraId::RccbRight => self.rccb_rgb.right.channel_mean(),
        }
    }
}

fn render_gated(
    depth: &DepthMap,
    albedo: &Image,
    ambient_level: f64,
    cfg: &RenderConfig,
    stream: u64,
) -> Result<GatedSliceStack> {
    let g = &cfg.gating;
    let ambient = albedo.map(|a| a * ambient_level * g.ambient_fraction);
    let slices = g
        .profiles
        .par_iter()
        .zip(&g.dark)
        .enumerate()
        .map(|(k, (p, &d))| {
            let noise = cfg.gated_noise.map(|n| n.derive(stream * 16 + k as u64));
            form_gated_slice(depth, albedo, p, Ambient::PerPixel(&ambient), d, noise.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ambient_ref = ambient.clone();
    let noise = cfg.gated_noise.map(|n| n.derive(stream * 16 + 15));
    apply_noise(&mut ambient_ref, noise.as_ref());
    Ok(GatedSliceStack { slices, profiles: g.profiles.clone(), dark: g.dark.clone(), ambient_ref })
}

fn render_rccb(albedo: &Image, ambient_level: f64, cfg: &RenderConfig, stream: u64) -> Result<(Image, Image)> {
    let rgb = Image::stack(&[albedo, albedo, albedo])?;
    let passive = form_passive_image(&rgb, ambient_level, cfg.exposure, None)?;
    let mut raw = rccb_mosaic(&passive)?;
    let noise = cfg.rccb_noise.map(|n| n.derive(stream));
    apply_noise(&mut raw, noise.as_ref());
    Ok((rccb_demosaic(&raw)?, raw))
}

pub fn render_bundle(scene: &SceneSpec, rig: &RigSpec, cfg: &RenderConfig) -> Result<FrameBundle> {
    scene.validate()?;
    rig.validate()?;
    cfg.gating.validate()?;
    let casts: Vec<(DepthMap, Image)> = CameraId::ALL
        .par_iter()
        .map(|&id| raycast(scene, &rig.camera(id).intrinsics, &rig.actual_pose(id), cfg.supersample))
        .collect();
    let mut casts = casts.into_iter();
    let mut next = || casts.next().expect("four casts");
    let (gl, gr, cl, cr) = (next(), next(), next(), next());

    let a = scene.ambient_level;
    let (stack_l, stack_r) = rayon::join(|| render_gated(&gl.0, &gl.1, a, cfg, 1), || render_gated(&gr.0, &gr.1, a, cfg, 2));
    let (rccb_l, rccb_r) = rayon::join(|| render_rccb(&cl.1, a, cfg, 3), || render_rccb(&cr.1, a, cfg, 4));
    let (rgb_l, raw_l) = rccb_l?;
    let (rgb_r, raw_r) = rccb_r?;

    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0xde17a));
    let jitter = if cfg.delta_t_jitter > 0.0 {
        Normal::new(0.0, cfg.delta_t_jitter).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
    } else {
        0.0
    };
    let sparse_lidar = sample_lidar(&gl.0, cfg.lidar_lines.max(1), cfg.lidar_jitter, splitmix64(cfg.seed ^ 0x11da7));

    Ok(FrameBundle {
        gated: Stereo { left: stack_l?, right: stack_r? },
        rccb_rgb: Stereo { left: rgb_l, right: rgb_r },
        rccb_raw: Stereo { left: raw_l, right: raw_r },
        gt_depth: PerCamera { gated_left: gl.0, gated_right: gr.0, rccb_left: cl.0, rccb_right: cr.0 },
        gt_albedo: PerCamera { gated_left: gl.1, gated_right: gr.1, rccb_left: cl.1, rccb_right: cr.1 },
        sparse_lidar,
        calib: *rig,
        delta_t: rig.time_offset_truth + jitter,
        ambient_level: a,
    })
}

/// Keeps `n_lines` equally spaced rows of `gt` with Gaussian range jitter.
pub fn sample_lidar(gt: &DepthMap, n_lines: usize, jitter_sigma: f64, seed: u64) -> DepthMap {
    let n = n_lines.clamp(1, gt.height);
    let rows: Vec<usize> = if n == 1 {
        vec![gt.height / 2]
    } else {
        (0..n).map(|i| ((i * (gt.height - 1)) as f64 / (n - 1) as f64).round() as usize).collect()
    };
    let mut out = MaskedMap::invalid(gt.width, gt.height);
    let normal = Normal::new(0.0, jitter_sigma.max(0.0)).ok();
    for &y in &rows {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(y as u64);
        for x in 0..gt.width {
            if let Some(z) = gt.get(x, y) {
                let j = match (&normal, jitter_sigma > 0.0) {
                    (Some(d), true) => d.sample(&mut rng),
                    _ => 0.0,
                };
                let v = z + j;
                out.set(x, y, (v > 0.0).then_some(v));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall(z: f64) -> Primitive {
        Primitive {
            shape: Shape::Plane { point: [0.0, 0.0, z], normal: [0.0, 0.0, -1.0] },
            texture: Texture::ValueNoise { scale: 1.5, lo: 0.2, hi: 0.7 },
        }
    }

    fn scene(prims: Vec<Primitive>) -> SceneSpec {
        SceneSpec { primitives: prims, ambient_level: 1.0, seed: 1 }
    }

    #[test]
    fn plane_depth_is_constant_z() {
        let cam = CameraModel::centered(100.0, 41, 21);
        let (d, _) = raycast(&scene(vec![wall(50.0)]), &cam, &RigidTransform::identity(), 1);
        assert_eq!(d.valid_count(), 41 * 21);
        assert!((d.get(20, 10).unwrap() - 50.0).abs() < 1e-12);
        assert!((d.get(0, 0).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_on_axis() {
        let cam = CameraModel::centered(100.0, 41, 21);
        let s = Primitive {
            shape: Shape::Sphere { center: [0.0, 0.0, 30.0], radius: 2.0 },
            texture: Texture::Constant { value: 0.5 },
        };
        let (d, a) = raycast(&scene(vec![wall(80.0), s]), &cam, &RigidTransform::identity(), 1);
        assert!((d.get(20, 10).unwrap() - 28.0).abs() < 1e-9);
        assert_eq!(a.get(20, 10, 0), 0.5);
    }

    #[test]
    fn cuboid_front_face() {
        let b = Shape::Cuboid { min: [-1.0, -1.0, 10.0], max: [1.0, 1.0, 12.0] };
        let t = b.intersect(&Point3::origin(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((t - 10.0).abs() < 1e-12);
        let inside = b.intersect(&Point3::new(0.0, 0.0, 11.0), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((inside - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(scene(vec![]).validate().is_err());
        let no_bg = scene(vec![Primitive {
            shape: Shape::Sphere { center: [0.0, 0.0, 10.0], radius: 1.0 },
            texture: Texture::Constant { value: 0.5 },
        }]);
        assert!(no_bg.validate().is_err());
        assert!(scene(vec![wall(400.0)]).validate().is_err());
        assert!(scene(vec![wall(100.0)]).validate().is_ok());
    }

    #[test]
    fn lidar_patterns() {
        let gt = DepthMap::constant(8, 6, 20.0);
        assert_eq!(sample_lidar(&gt, 6, 0.0, 0), gt);
        let one = sample_lidar(&gt, 1, 0.0, 0);
        assert_eq!(one.valid_count(), 8);
        let rows: Vec<usize> = (0..6).filter(|&y| one.get(0, y).is_some()).collect();
        assert_eq!(rows.len(), 1);
        let some = sample_lidar(&gt, 3, 0.0, 0);
        assert!(some.mask.iter().zip(&some.values).all(|(&m, &v)| !m || v == 20.0));
    }

    #[test]
    fn standard_rig_is_rectified() {
        let rig = RigSpec::standard(64, 32, 80.0, 3);
        rig.validate().unwrap();
        let mut bad = rig;
        bad.gated_right.pose.translation.y = 0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_offset_keeps_calibration() {
        let mut rig = RigSpec::standard(64, 32, 80.0, 3);
        rig.rig_velocity = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(rig.actual_pose(CameraId::RccbLeft), rig.rccb_left.pose);
        rig.time_offset_truth = 0.02;
        let moved = rig.actual_pose(CameraId::RccbLeft);
        assert!((moved.translation - rig.rccb_left.pose.translation - Vector3::new(0.0, 0.0, 0.02)).norm() < 1e-12);
    }
}
