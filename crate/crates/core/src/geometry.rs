//! Depth-driven registration between camera frames.
//!
//! All warps are backward (target-driven): each target pixel is lifted with its
//! depth, moved by `X_src←target`, and projected into the source camera, where
//! the source raster is then sampled.

use nalgebra::Point2;
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::image::{DepthMap, DisparityMap, Image, MaskedMap};
use crate::se3::RigidTransform;

/// Disparities at or below this floor (px) are treated as infinitely far.
pub const DISPARITY_EPS: f64 = 1e-3;

pub fn disparity_to_depth(d: &DisparityMap, baseline: f64, focal: f64) -> DepthMap {
    let mut out = MaskedMap::invalid(d.width, d.height);
    for i in 0..d.values.len() {
        if d.mask[i] && d.values[i] > DISPARITY_EPS && d.values[i].is_finite() {
            out.values[i] = baseline * focal / d.values[i];
            out.mask[i] = true;
        }
    }
    out
}

pub fn depth_to_disparity(z: &DepthMap, baseline: f64, focal: f64) -> DisparityMap {
    let mut out = MaskedMap::invalid(z.width, z.height);
    for i in 0..z.values.len() {
        if z.mask[i] && z.values[i] > 0.0 && z.values[i].is_finite() {
            out.values[i] = baseline * focal / z.values[i];
            out.mask[i] = true;
        }
    }
    out
}

/// Source coordinates for every target pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    pub width: usize,
    pub height: usize,
    pub coords: Vec<Point2<f64>>,
    /// Depth of the transported point in the source frame.
    pub src_z: Vec<f64>,
    pub mask: Vec<bool>,
}

impl WarpField {
    pub fn identity(width: usize, height: usize) -> Self {
        let coords = (0..width * height).map(|i| Point2::new((i % width) as f64, (i / width) as f64)).collect();
        Self { width, height, coords, src_z: vec![1.0; width * height], mask: vec![true; width * height] }
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Builds the backward warp from `cam_target` (with `depth_target`) into `cam_src`.
/// `x_src_from_target` maps target-frame points into the source frame.
pub fn build_warp(
    depth_target: &DepthMap,
    x_src_from_target: &RigidTransform,
    cam_src: &CameraModel,
    cam_target: &CameraModel,
) -> WarpField {
    let (w, h) = (depth_target.width, depth_target.height);
    let entries: Vec<(Point2<f64>, f64, bool)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let invalid = (Point2::new(-1.0, -1.0), 0.0, false);
            let Some(z) = depth_target.get(i % w, i / w) else { return invalid };
            let uv = Point2::new((i % w) as f64, (i / w) as f64);
            let Ok(p) = cam_target.backproject(&uv, z) else { return invalid };
            let q = x_src_from_target.transform_point(&p);
            match cam_src.project(&q) {
                Ok(s) if cam_src.contains(&s) => (s, q.z, true),
                _ => invalid,
            }
        })
        .collect();
    let mut field = WarpField {
        width: w,
        height: h,
        coords: Vec::with_capacity(w * h),
        src_z: Vec::with_capacity(w * h),
        mask: Vec::with_capacity(w * h),
    };
    for (c, z, m) in entries {
        field.coords.push(c);
        field.src_z.push(z);
        field.mask.push(m);
    }
    field
}

/// Samples `src` at every valid field entry; invalid entries are zero and masked out.
pub fn warp_image(src: &Image, field: &WarpField) -> (Image, Vec<bool>) {
    let ch = src.channels;
    let mut out = Image::new(field.width, field.height, ch);
    let mut mask = vec![false; field.width * field.height];
    out.data.par_chunks_mut(ch).zip(mask.par_iter_mut()).enumerate().for_each(|(i, (px, m))| {
        if !field.mask[i] {
            return;
        }
        let c = field.coords[i];
        let mut ok = true;
        for (k, v) in px.iter_mut().enumerate() {
            match src.sample_channel(c.x, c.y, k) {
                Some(s) => *v = s,
                None => ok = false,
            }
        }
        if !ok {
            px.iter_mut().for_each(|v| *v = 0.0);
        }
        *m = ok;
    });
    (out, mask)
}

fn source_depth_at(depth_src: &DepthMap, c: &Point2<f64>) -> Option<f64> {
    depth_src.sample(c.x, c.y).or_else(|| depth_src.sample_nearest(c.x, c.y))
}

/// Target pixels whose transported point lies behind the source surface by more
/// than `tol` metres (`true` = occluded).
pub fn occlusion_mask(
    depth_target: &DepthMap,
    depth_src: &DepthMap,
    x_src_from_target: &RigidTransform,
    cam_src: &CameraModel,
    cam_target: &CameraModel,
    tol: f64,
) -> Vec<bool> {
    let field = build_warp(depth_target, x_src_from_target, cam_src, cam_target);
    occlusion_from_field(&field, depth_src, tol)
}

pub fn occlusion_from_field(field: &WarpField, depth_src: &DepthMap, tol: f64) -> Vec<bool> {
    (0..field.mask.len())
        .into_par_iter()
        .map(|i| {
            if !field.mask[i] {
                return false;
            }
            // Nearest sample avoids blending foreground and background at edges.
            let c = field.coords[i];
            match depth_src.sample_nearest(c.x, c.y) {
                Some(zs) => field.src_z[i] - zs > tol,
                None => false,
            }
        })
        .collect()
}

/// Expresses source-frame depth in the target frame: samples `depth_src` where each
/// target pixel lands, lifts that source point and returns its target-frame z.
pub fn transfer_depth(
    field: &WarpField,
    depth_src: &DepthMap,
    x_src_from_target: &RigidTransform,
    cam_src: &CameraModel,
) -> DepthMap {
    let x_target_from_src = x_src_from_target.invert();
    let mut out = MaskedMap::invalid(field.width, field.height);
    for i in 0..field.mask.len() {
        if !field.mask[i] {
            continue;
        }
        let c = field.coords[i];
        if let Some(zs) = source_depth_at(depth_src, &c) {
            if let Ok(p) = cam_src.backproject(&c, zs) {
                let q = x_target_from_src.transform_point(&p);
                if q.z > 0.0 {
                    out.values[i] = q.z;
                    out.mask[i] = true;
                }
            }
        }
    }
    out
}

/// Forward-projects a source depth map into a target camera with a z-buffer;
/// each source pixel lands on its nearest target pixel. Unreached pixels stay invalid.
pub fn splat_depth(
    depth_src: &DepthMap,
    cam_src: &CameraModel,
    x_target_from_src: &RigidTransform,
    cam_target: &CameraModel,
) -> DepthMap {
    let mut out = MaskedMap::invalid(cam_target.width, cam_target.height);
    for y in 0..depth_src.height {
        for x in 0..depth_src.width {
            let Some(z) = depth_src.get(x, y) else { continue };
            let Ok(p) = cam_src.backproject(&Point2::new(x as f64, y as f64), z) else { continue };
            let q = x_target_from_src.transform_point(&p);
            let Ok(uv) = cam_target.project(&q) else { continue };
            let (u, v) = (uv.x.round(), uv.y.round());
            if u < 0.0 || v < 0.0 || u >= cam_target.width as f64 || v >= cam_target.height as f64 {
                continue;
            }
            let (u, v) = (u as usize, v as usize);
            if out.get(u, v).is_none_or(|cur| q.z < cur) {
                out.set(u, v, Some(q.z));
            }
        }
    }
    out
}
