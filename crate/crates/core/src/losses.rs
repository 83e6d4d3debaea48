//! Image-formation and supervision losses, used as quality functionals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::{rip_eval, GatedSliceStack};
use crate::geometry::{build_warp, occlusion_from_field, transfer_depth, warp_image};
use crate::image::{DepthMap, DisparityMap, Image};
use crate::scenesim::{CameraId, FrameBundle, PerCamera, RigSpec};

pub const SSIM_RADIUS: usize = 3;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Occlusion tolerance (m) for the reprojection terms.
pub const OCCLUSION_TOL: f64 = 0.3;
/// Depths are divided by this (m) before the photometric comparison.
pub const DEPTH_NORM: f64 = 220.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { c1: 1.0, c2: 0.1, c3: 1.0, gamma: 0.9 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.c1, self.c2, self.c3, self.gamma].iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("loss weights must be finite and non-negative: {self:?}")))
        }
    }
}

/// Per-pixel SSIM (7×7 box window) averaged over channels.
pub fn ssim_map(a: &Image, b: &Image) -> Result<Vec<f64>> {
    check_shape(a, b)?;
    let prod = |x: &Image, y: &Image| Image { data: x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect(), ..x.clone() };
    let (ma, mb) = (a.box_mean(SSIM_RADIUS), b.box_mean(SSIM_RADIUS));
    let (maa, mbb, mab) = (
        prod(a, a).box_mean(SSIM_RADIUS),
        prod(b, b).box_mean(SSIM_RADIUS),
        prod(a, b).box_mean(SSIM_RADIUS),
    );
    let ch = a.channels;
    Ok((0..a.width * a.height)
        .into_par_iter()
        .map(|p| {
            let mut s = 0.0;
            for c in 0..ch {
                let i = p * ch + c;
                let (ua, ub) = (ma.data[i], mb.data[i]);
                let va = maa.data[i] - ua * ua;
                let vb = mbb.data[i] - ub * ub;
                let cov = mab.data[i] - ua * ub;
                s += (2.0 * ua * ub + SSIM_C1) * (2.0 * cov + SSIM_C2) / ((ua * ua + ub * ub + SSIM_C1) * (va + vb + SSIM_C2));
            }
            s / ch as f64
        })
        .collect())
}

/// `0.85·(1 − SSIM)/2 + 0.15·|a − b|` per pixel.
pub fn lp_map(a: &Image, b: &Image) -> Result<Vec<f64>> {
    let ssim = ssim_map(a, b)?;
    let ch = a.channels;
    Ok(ssim
        .iter()
        .enumerate()
        .map(|(p, s)| {
            let l1 = (0..ch).map(|c| (a.data[p * ch + c] - b.data[p * ch + c]).abs()).sum::<f64>() / ch as f64;
            0.85 * (1.0 - s) / 2.0 + 0.15 * l1
        })
        .collect())
}

/// Masked mean of the photometric error; `None` uses every pixel.
pub fn photometric_lp(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<f64> {
    let lp = lp_map(a, b)?;
    masked_mean(&lp, mask)
}

fn masked_mean(v: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let (sum, n) = match mask {
        Some(m) => {
            if m.len() != v.len() {
                return Err(Error::ShapeMismatch(format!("mask of {} for {} pixels", m.len(), v.len())));
            }
            v.iter().zip(m).filter(|(_, k)| **k).fold((0.0, 0usize), |(s, n), (x, _)| (s + x, n + 1))
        }
        None => (v.iter().sum(), v.len()),
    };
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

fn check_shape(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )))
    }
}

fn masked(img: &Image, mask: &[bool]) -> Image {
    let ch = img.channels;
    Image { data: img.data.iter().enumerate().map(|(i, v)| if mask[i / ch] { *v } else { 0.0 }).collect(), ..img.clone() }
}

fn counterpart(id: CameraId) -> CameraId {
    match id {
        CameraId::GatedLeft => CameraId::GatedRight,
        CameraId::GatedRight => CameraId::GatedLeft,
        CameraId::RccbLeft => CameraId::RccbRight,
        CameraId::RccbRight => CameraId::RccbLeft,
    }
}

/// Same side, other modality.
fn cross(id: CameraId) -> CameraId {
    match id {
        CameraId::GatedLeft => CameraId::RccbLeft,
        CameraId::GatedRight => CameraId::RccbRight,
        CameraId::RccbLeft => CameraId::GatedLeft,
        CameraId::RccbRight => CameraId::GatedRight,
    }
}

struct Warped {
    image: Image,
    valid: Vec<bool>,
}

fn warp_into(bundle: &FrameBundle, depths: &PerCamera<DepthMap>, rig: &RigSpec, target: CameraId, src: CameraId) -> Warped {
    let cam_t = &rig.camera(target).intrinsics;
    let cam_s = &rig.camera(src).intrinsics;
    let x = rig.transform(target, src);
    let field = build_warp(depths.get(target), &x, cam_s, cam_t);
    let occluded = occlusion_from_field(&field, depths.get(src), OCCLUSION_TOL);
    let (image, mask) = warp_image(&bundle.intensity(src), &field);
    let valid = mask.iter().zip(&occluded).map(|(m, o)| *m && !o).collect();
    Warped { image, valid }
}

/// Photometric self-consistency of four per-view depth maps.
///
/// Each view sums a stereo term against its in-modality partner, a term
/// comparing the other modality's two images warped into this view, and a
/// depth-consistency term against the other modality's depth. `rig` holds the
/// camera poses used for every warp.
pub fn reprojection_loss(bundle: &FrameBundle, depths: &PerCamera<DepthMap>, rig: &RigSpec) -> Result<f64> {
    let mut total = 0.0;
    for view in CameraId::ALL {
        let cam = rig.camera(view).intrinsics;
        let d = depths.get(view);
        if d.width != cam.width || d.height != cam.height {
            return Err(Error::ShapeMismatch(format!("{view:?} depth {}x{} vs camera {}x{}", d.width, d.height, cam.width, cam.height)));
        }
        let own = bundle.intensity(view);
        let partner = warp_into(bundle, depths, rig, view, counterpart(view));
        let stereo = photometric_lp(&masked(&own, &partner.valid), &masked(&partner.image, &partner.valid), Some(&partner.valid))?;

        let other = cross(view);
        let a = warp_into(bundle, depths, rig, view, other);
        let b = warp_into(bundle, depths, rig, view, counterpart(other));
        let both: Vec<bool> = a.valid.iter().zip(&b.valid).map(|(p, q)| *p && *q).collect();
        let cross_img = photometric_lp(&masked(&a.image, &both), &masked(&b.image, &both), Some(&both))?;

        let x = rig.transform(view, other);
        let field = build_warp(d, &x, &rig.camera(other).intrinsics, &cam);
        let moved = transfer_depth(&field, depths.get(other), &x, &rig.camera(other).intrinsics);
        let occluded = occlusion_from_field(&field, depths.get(other), OCCLUSION_TOL);
        let ok: Vec<bool> = (0..d.values.len()).map(|i| d.mask[i] && moved.mask[i] && !occluded[i]).collect();
        let norm = |m: &DepthMap| Image { width: m.width, height: m.height, channels: 1, data: m.values.iter().map(|v| v / DEPTH_NORM).collect() };
        let depth_term = photometric_lp(&masked(&norm(&moved), &ok), &masked(&norm(d), &ok), Some(&ok))?;

        total += stereo + cross_img + depth_term;
    }
    Ok(total)
}

/// Analytic re-rendering error of a gated stack for depth `z`, albedo and ambient estimates.
///
/// Slices are predicted as `α·C_k(z) + Λ + D_k`; the ambient estimate is
/// compared with the stack's laser-off capture over the whole frame.
pub fn gated_reconstruction_loss(
    stack: &GatedSliceStack,
    z: &DepthMap,
    albedo_hat: &Image,
    ambient_hat: &Image,
    mask: &[bool],
) -> Result<f64> {
    stack.validate()?;
    let (w, h) = (stack.width(), stack.height());
    if z.width != w || z.height != h || !albedo_hat.same_shape(ambient_hat) || albedo_hat.width != w || albedo_hat.height != h {
        return Err(Error::ShapeMismatch("depth, albedo and ambient must match the stack".into()));
    }
    if mask.len() != w * h {
        return Err(Error::ShapeMismatch(format!("mask of {} for {} pixels", mask.len(), w * h)));
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::EmptyMask);
    }
    let mut total = 0.0;
    for ((slice, profile), dark) in stack.slices.iter().zip(&stack.profiles).zip(&stack.dark) {
        let data = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let signal = if z.mask[i] { albedo_hat.data[i] * rip_eval(profile, z.values[i]).unwrap_or(0.0) } else { 0.0 };
                signal + ambient_hat.data[i] + dark
            })
            .collect();
        let pred = Image { width: w, height: h, channels: 1, data };
        total += photometric_lp(&masked(&pred, mask), &masked(slice, mask), Some(mask))?;
    }
    Ok(total + photometric_lp(ambient_hat, &stack.ambient_ref, None)?)
}

/// Decayed l1/l2 disparity supervision over a sequence of predictions.
///
/// Predictions at lower resolution are upsampled bilinearly with their values
/// rescaled to the ground-truth width; invalid predicted pixels count as zero.
pub fn lidar_loss(preds: &[DisparityMap], gt: &DisparityMap, gamma: f64) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidConfig("need at least one prediction".into()));
    }
    let n_gt = gt.valid_count();
    if n_gt == 0 {
        return Err(Error::EmptyMask);
    }
    let n = preds.len();
    let mut total = 0.0;
    for (i, p) in preds.iter().enumerate() {
        let full = if p.width == gt.width && p.height == gt.height {
            p.clone()
        } else {
            p.resize_bilinear(gt.width, gt.height, gt.width as f64 / p.width as f64)
        };
        let (mut l1, mut l2) = (0.0, 0.0);
        for j in 0..gt.values.len() {
            if gt.mask[j] {
                let pred = if full.mask[j] { full.values[j] } else { 0.0 };
                let e = (gt.values[j] - pred).abs();
                l1 += e;
                l2 += e * e;
            }
        }
        let step = (2.0 / 3.0) * l1 / n_gt as f64 + (1.0 / 3.0) * l2 / n_gt as f64;
        total += gamma.powi((n - 1 - i) as i32) * step;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub reprojection: f64,
    pub reconstruction: f64,
    pub lidar: f64,
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    w.c1 * parts.reprojection + w.c2 * parts.reconstruction + w.c3 * parts.lidar
}
