use serde::{Deserialize, Serialize};

use super::correlation::{aggregate, correlation_at, search_offsets, CorrVolume, Offset};
use super::{fuse_features, AttentionFn};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureConfig};
use crate::geometry::{build_warp, disparity_to_depth, splat_depth, warp_image};
use crate::image::{DepthMap, DisparityMap, Image, MaskedMap};
use crate::poserefine::{refine_pose, PoseProblem, PoseRefineConfig, PoseRefineResult};
use crate::scenesim::{CameraId, FrameBundle, RigSpec};
use crate::se3::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    GatedOnly,
    RccbOnly,
    Fused,
}

impl MatchMode {
    pub const ALL: [MatchMode; 3] = [MatchMode::GatedOnly, MatchMode::RccbOnly, MatchMode::Fused];

    pub fn name(&self) -> &'static str {
        match self {
            MatchMode::GatedOnly => "gated-only",
            MatchMode::RccbOnly => "rccb-only",
            MatchMode::Fused => "fused",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Gated,
    Rccb,
}

impl Modality {
    fn other(self) -> Self {
        match self {
            Modality::Gated => Modality::Rccb,
            Modality::Rccb => Modality::Gated,
        }
    }

    fn cameras(self) -> (CameraId, CameraId) {
        match self {
            Modality::Gated => (CameraId::GatedLeft, CameraId::GatedRight),
            Modality::Rccb => (CameraId::RccbLeft, CameraId::RccbRight),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub mode: MatchMode,
    /// Viewpoint of fused matching.
    pub fusion_target: Modality,
    /// Run fused matching on the target viewpoint at the finer of the two
    /// camera resolutions.
    pub fusion_upsample: bool,
    /// Refinement iterations per pyramid level.
    pub iterations: usize,
    pub pyramid_levels: usize,
    pub radius: usize,
    /// Box radius for cost aggregation, in pixels of the finest camera; coarser
    /// target grids use the same angular footprint.
    pub aggregation_radius: usize,
    /// Nearest depth (m) covered by the disparity search.
    pub min_depth: f64,
    /// Farthest representable depth (m); bounds the disparity from below.
    pub max_depth: f64,
    pub features: FeatureConfig,
    pub attention_unary: AttentionFn,
    pub attention_merge: AttentionFn,
    pub refine_pose: bool,
    pub pose: PoseRefineConfig,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            mode: MatchMode::Fused,
            fusion_target: Modality::Gated,
            fusion_upsample: true,
            iterations: 4,
            pyramid_levels: 3,
            radius: 4,
            aggregation_radius: 12,
            min_depth: 5.0,
            max_depth: 250.0,
            features: FeatureConfig::default(),
            attention_unary: AttentionFn::unary_default(),
            attention_merge: AttentionFn::merge_default(),
            refine_pose: true,
            pose: PoseRefineConfig::default(),
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0
            || self.pyramid_levels == 0
            || self.radius == 0
            || !(self.min_depth > 0.0)
            || !(self.max_depth > self.min_depth)
        {
            return Err(Error::InvalidConfig(format!(
                "iterations, pyramid_levels, radius must be positive and 0 < min_depth < max_depth \
                 (got {}, {}, {}, {}, {})",
                self.iterations, self.pyramid_levels, self.radius, self.min_depth, self.max_depth
            )));
        }
        self.attention_unary.validate()?;
        self.attention_merge.validate()?;
        self.pose.validate()
    }

    /// Modality whose viewpoint hosts the output.
    pub fn target(&self) -> Modality {
        match self.mode {
            MatchMode::GatedOnly => Modality::Gated,
            MatchMode::RccbOnly => Modality::Rccb,
            MatchMode::Fused => self.fusion_target,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoEstimate {
    /// Left camera whose viewpoint holds the result.
    pub camera: CameraId,
    /// Output grid resolution relative to that camera (1 = native).
    pub grid_scale: usize,
    /// Intrinsics of the output grid.
    pub grid_camera: CameraModel,
    pub disparity: DisparityMap,
    pub right_disparity: DisparityMap,
    pub depth: DepthMap,
    /// Disparity after every iteration, at the resolution of its level.
    pub intermediates: Vec<DisparityMap>,
    /// Refined secondary-to-target alignment of the left cameras (fused mode).
    pub pose: Option<PoseRefineResult>,
}

impl StereoEstimate {
    /// Depth at the native pixel centers of `camera`.
    pub fn native_depth(&self) -> DepthMap {
        sample_centers(&self.depth, self.grid_scale)
    }

    /// Depth at the native pixel centers of camera `view`, forward-projected with
    /// the calibrated rig when `view` differs from the estimate's camera.
    pub fn depth_in(&self, rig: &RigSpec, view: CameraId) -> DepthMap {
        depth_in_view(&self.depth, self.camera, &self.grid_camera, self.grid_scale, rig, view)
    }
}

/// Resamples a depth map held on a (possibly upsampled) grid of `camera` to the
/// native pixel centers of `view`.
pub fn depth_in_view(
    depth: &DepthMap,
    camera: CameraId,
    grid_camera: &CameraModel,
    grid_scale: usize,
    rig: &RigSpec,
    view: CameraId,
) -> DepthMap {
    if view == camera {
        return sample_centers(depth, grid_scale);
    }
    let native = rig.camera(view).intrinsics;
    let s = matched_scale(grid_camera.fx, native.fx);
    let grid = native.scaled(s as f64, native.width * s, native.height * s);
    let x = rig.transform(camera, view);
    sample_centers(&splat_depth(depth, grid_camera, &x, &grid), s)
}

fn sample_centers(depth: &DepthMap, s: usize) -> DepthMap {
    if s == 1 {
        return depth.clone();
    }
    let (w, h) = (depth.width / s, depth.height / s);
    let mut out = MaskedMap::invalid(w, h);
    // Native pixel x is centered on grid coordinate s·x + (s − 1)/2.
    let off = (s as f64 - 1.0) / 2.0;
    for y in 0..h {
        for x in 0..w {
            let (u, v) = ((s * x) as f64 + off, (s * y) as f64 + off);
            out.set(x, y, depth.sample(u, v).or_else(|| depth.sample_nearest(u, v)));
        }
    }
    out
}

struct Level {
    left: Image,
    right: Image,
    cam: CameraModel,
}

fn pyramid(left: Image, right: Image, cam: CameraModel, levels: usize) -> Vec<Level> {
    let mut out = vec![Level { left, right, cam }];
    for _ in 1..levels {
        let prev = out.last().expect("non-empty");
        let left = prev.left.downsample2();
        let right = prev.right.downsample2();
        let cam = prev.cam.scaled(0.5, left.width, left.height);
        out.push(Level { left, right, cam });
    }
    out
}

fn pair_pyramid(bundle: &FrameBundle, m: Modality, levels: usize, upsample: usize) -> Vec<Level> {
    let (l, r) = m.cameras();
    let cam = bundle.calib.camera(l).intrinsics;
    let (il, ir) = (bundle.intensity(l), bundle.intensity(r));
    if upsample > 1 {
        let (w, h) = (cam.width * upsample, cam.height * upsample);
        let grid = cam.scaled(upsample as f64, w, h);
        pyramid(il.resize_bilinear(w, h), ir.resize_bilinear(w, h), grid, levels)
    } else {
        pyramid(il, ir, cam, levels)
    }
}

fn baseline(rig: &RigSpec, m: Modality) -> f64 {
    match m {
        Modality::Gated => rig.baseline_gated,
        Modality::Rccb => rig.baseline_rccb,
    }
}

fn matched_scale(f_self: f64, f_other: f64) -> usize {
    (f_self / f_other).round().max(1.0) as usize
}

/// Winner-take-all over the volume with a parabola fit along the horizontal
/// axis; `d ← d − f*`, clamped to `[dmin, dmax]`.
fn update(vol: &CorrVolume, d: &mut [f64], dmin: f64, dmax: f64) {
    let offs = &vol.offsets;
    let neighbour = |k: usize, step: i32| -> Option<usize> {
        let (f, g) = offs[k];
        offs.iter().position(|&o| o == (f + step, g))
    };
    let nb: Vec<(Option<usize>, Option<usize>)> = (0..offs.len()).map(|k| (neighbour(k, -1), neighbour(k, 1))).collect();
    let k_len = offs.len();
    for (i, di) in d.iter_mut().enumerate() {
        let c = &vol.values[i * k_len..(i + 1) * k_len];
        if c.iter().all(|v| *v == 0.0) {
            continue;
        }
        let mut best = 0;
        for k in 1..k_len {
            if c[k] > c[best] {
                best = k;
            }
        }
        let mut sub = 0.0;
        if let (Some(a), Some(b)) = nb[best] {
            let (cm, c0, cp) = (c[a], c[best], c[b]);
            let den = cm - 2.0 * c0 + cp;
            if den < 0.0 {
                sub = (0.5 * (cm - cp) / den).clamp(-0.5, 0.5);
            }
        }
        let f = offs[best].0 as f64 + sub;
        *di = (*di - f).clamp(dmin, dmax);
    }
}

fn as_map(w: usize, h: usize, d: &[f64]) -> DisparityMap {
    MaskedMap { width: w, height: h, values: d.to_vec(), mask: vec![true; d.len()] }
}

/// Right-view disparity from the left view by the fixed point `d_r(u) = d_l(u + d_r(u))`.
pub fn right_view_disparity(left: &DisparityMap) -> DisparityMap {
    let mut out = MaskedMap::invalid(left.width, left.height);
    for y in 0..left.height {
        for x in 0..left.width {
            let lookup = |u: f64| left.sample(u, y as f64).or_else(|| left.sample_nearest(u, y as f64));
            let Some(mut dr) = lookup(x as f64) else { continue };
            let mut ok = true;
            for _ in 0..6 {
                match lookup(x as f64 + dr) {
                    Some(v) => dr = v,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                out.set(x, y, Some(dr));
            }
        }
    }
    out
}

/// Pre-correlation warping of the secondary modality into the target views.
struct Pcw<'a> {
    rig: &'a RigSpec,
    target: Modality,
    delta_t: f64,
    cfg: &'a MatchConfig,
    /// Current estimate of the RCCB capture-time displacement.
    displacement: RigidTransform,
    pose: Option<PoseRefineResult>,
}

impl Pcw<'_> {
    fn pose_of(&self, id: CameraId) -> RigidTransform {
        let p = self.rig.camera(id).pose;
        if id.is_gated() {
            p
        } else {
            p.compose(&self.displacement)
        }
    }

    /// Maps points of camera `t` into camera `s`.
    fn transform(&self, t: CameraId, s: CameraId) -> RigidTransform {
        self.pose_of(s).invert().compose(&self.pose_of(t))
    }

    /// Refines the RCCB displacement on native-resolution left images.
    fn refine(&mut self, t_level: &Level, s_level: &Level, depth: &DepthMap) -> Result<()> {
        if !self.cfg.refine_pose || self.delta_t == 0.0 {
            return Ok(());
        }
        let (tl, _) = self.target.cameras();
        let (sl, _) = self.target.other().cameras();
        let fc = &self.cfg.features;
        let ft = extract_features(&t_level.left, &FeatureConfig { scale: matched_scale(t_level.cam.fx, s_level.cam.fx), ..*fc });
        let fs = extract_features(&s_level.left, &FeatureConfig { scale: matched_scale(s_level.cam.fx, t_level.cam.fx), ..*fc });
        let calib = self.rig.transform(tl, sl);
        let prob = PoseProblem { f_target: &ft, f_src: &fs, depth_target: depth, cam_src: &s_level.cam, cam_target: &t_level.cam };
        let out = match refine_pose(&prob, &calib, self.delta_t, &self.cfg.pose) {
            Ok(o) => o,
            // Too little depth or no convergence: keep the previous alignment.
            Err(Error::InsufficientValidPixels { .. } | Error::Diverged(_)) => return Ok(()),
            Err(e) => return Err(e),
        };
        self.displacement = if tl.is_gated() {
            out.transform.compose(&calib.invert()).invert()
        } else {
            calib.invert().compose(&out.transform)
        };
        self.pose = Some(out);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn warp(
        &self,
        t_id: CameraId,
        s_id: CameraId,
        depth: &DepthMap,
        f_t: &Image,
        f_s: &Image,
        t_cam: &CameraModel,
        s_cam: &CameraModel,
    ) -> Image {
        let x = self.transform(t_id, s_id);
        let field = build_warp(depth, &x, s_cam, t_cam);
        let (mut warped, mask) = warp_image(f_s, &field);
        // Target pixels hidden from the source camera keep their own features.
        let zbuf = splat_depth(depth, t_cam, &x, s_cam);
        let tol = self.cfg.pose.occlusion_tol;
        let ch = warped.channels;
        for (i, m) in mask.iter().enumerate() {
            let c = field.coords[i];
            let hidden = *m && zbuf.sample_nearest(c.x, c.y).is_some_and(|zs| field.src_z[i] - zs > tol * zs);
            if !m || hidden {
                warped.data[i * ch..(i + 1) * ch].copy_from_slice(&f_t.data[i * ch..(i + 1) * ch]);
            }
        }
        warped
    }
}

/// Coarse-to-fine disparity for the pair selected by `cfg.mode`.
///
/// Per level, each iteration correlates around the current disparity with the
/// 2D-1D offset schedule, aggregates, and applies winner-take-all with a
/// sub-pixel parabola. In fused mode every iteration but the very first warps
/// the secondary features into the target views and fuses them.
pub fn estimate_disparity(bundle: &FrameBundle, cfg: &MatchConfig) -> Result<StereoEstimate> {
    cfg.validate()?;
    let rig = &bundle.calib;
    let target = cfg.target();
    let secondary = target.other();
    let fused = cfg.mode == MatchMode::Fused;
    let levels = cfg.pyramid_levels;
    let (tl, tr) = target.cameras();
    let (sl, sr) = secondary.cameras();
    let f_native = rig.camera(tl).intrinsics.fx;
    let grid_scale = if fused && cfg.fusion_upsample {
        matched_scale(rig.camera(sl).intrinsics.fx, f_native)
    } else {
        1
    };
    let t_pyr = pair_pyramid(bundle, target, levels, grid_scale);
    let (t_native, s_pyr) = if fused {
        let native = if grid_scale > 1 { pair_pyramid(bundle, target, levels, 1) } else { Vec::new() };
        (native, pair_pyramid(bundle, secondary, levels, 1))
    } else {
        (Vec::new(), Vec::new())
    };
    let t_feat_cfg = FeatureConfig { scale: cfg.features.scale * grid_scale, ..cfg.features };
    let b = baseline(rig, target);
    let f_full = t_pyr[0].cam.fx;
    let dmax_full = b * f_full / cfg.min_depth;
    let dmin_full = b * f_full / cfg.max_depth;
    let f_finest = CameraId::ALL.iter().map(|&id| rig.camera(id).intrinsics.fx).fold(0.0, f64::max);
    let agg_radius = ((cfg.aggregation_radius as f64 * f_full / f_finest).round() as usize).max(1);

    let mut pcw = Pcw { rig, target, delta_t: bundle.delta_t, cfg, displacement: RigidTransform::identity(), pose: None };
    let coarsest = levels - 1;
    let mut d: Vec<f64> = vec![0.0; t_pyr[coarsest].left.width * t_pyr[coarsest].left.height];
    let mut intermediates = Vec::new();

    for lvl in (0..levels).rev() {
        let tlev = &t_pyr[lvl];
        let (w, h) = (tlev.left.width, tlev.left.height);
        if lvl < coarsest {
            let prev = &t_pyr[lvl + 1];
            d = as_map(prev.left.width, prev.left.height, &d).resize_bilinear(w, h, 2.0).values;
        }
        let scale = 0.5f64.powi(lvl as i32);
        let (dmin, dmax) = (dmin_full * scale, dmax_full * scale);
        let fl = extract_features(&tlev.left, &t_feat_cfg);
        let fr = extract_features(&tlev.right, &t_feat_cfg);
        let s_feats = if fused {
            let slev = &s_pyr[lvl];
            let sc = FeatureConfig { scale: matched_scale(slev.cam.fx, tlev.cam.fx), ..cfg.features };
            Some((extract_features(&slev.left, &sc), extract_features(&slev.right, &sc)))
        } else {
            None
        };
        let mut refined_here = false;
        for it in 1..=cfg.iterations {
            let first = lvl == coarsest && it == 1;
            // 1-D iterations at the coarsest level scan the whole disparity range.
            let global = lvl == coarsest && it % 2 == 1;
            let prior = as_map(w, h, &d);
            if global {
                d.iter_mut().for_each(|v| *v = 0.0);
            }
            let offsets: Vec<Offset> = if global {
                (-(dmax.ceil() as i32)..=0).map(|f| (f, 0)).collect()
            } else {
                search_offsets(it, cfg.radius)
            };
            let vol = match (&s_feats, first) {
                (Some((sfl, sfr)), false) => {
                    let slev = &s_pyr[lvl];
                    let depth_l = disparity_to_depth(&prior, b, tlev.cam.fx);
                    if !refined_here {
                        let (nlev, ndepth) = match t_native.get(lvl) {
                            Some(n) => (n, depth_l.resize_bilinear(n.left.width, n.left.height, 1.0)),
                            None => (tlev, depth_l.clone()),
                        };
                        pcw.refine(nlev, slev, &ndepth)?;
                        refined_here = true;
                    }
                    let depth_r = disparity_to_depth(&right_view_disparity(&prior), b, tlev.cam.fx);
                    let wl = pcw.warp(tl, sl, &depth_l, &fl, sfl, &tlev.cam, &slev.cam);
                    let wr = pcw.warp(tr, sr, &depth_r, &fr, sfr, &tlev.cam, &slev.cam);
                    let gl = fuse_features(&fl, &wl, &cfg.attention_unary, &cfg.attention_merge)?;
                    let gr = fuse_features(&fr, &wr, &cfg.attention_unary, &cfg.attention_merge)?;
                    correlation_at(&gl, &gr, &d, &offsets)?
                }
                _ => correlation_at(&fl, &fr, &d, &offsets)?,
            };
            update(&aggregate(&vol, agg_radius), &mut d, dmin, dmax);
            intermediates.push(as_map(w, h, &d));
        }
    }

    let w = t_pyr[0].left.width;
    let mut disparity = as_map(w, t_pyr[0].left.height, &d);
    for (i, v) in disparity.values.iter().enumerate() {
        if (i % w) as f64 - v < 0.0 {
            disparity.mask[i] = false;
        }
    }
    let right_disparity = right_view_disparity(&disparity);
    let depth = disparity_to_depth(&disparity, b, f_full);
    Ok(StereoEstimate {
        camera: tl,
        grid_scale,
        grid_camera: t_pyr[0].cam,
        disparity,
        right_disparity,
        depth,
        intermediates,
        pose: pcw.pose,
    })
}
