//! Hand-crafted matching features: locally contrast-normalized intensity and its
//! gradients.

use serde::{Deserialize, Serialize};

use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Normalization window radius (px).
    pub window_radius: usize,
    /// Contrast floor in intensity units; local contrast below it is attenuated.
    pub contrast_floor: f64,
    /// Box pre-blur radius (px) applied before normalization.
    pub blur_radius: usize,
    /// Resolution ratio to the reference camera; window, blur and gradient
    /// step are multiplied by it so features describe the same footprint.
    pub scale: usize,
    /// Multiple `k` of the estimated image noise in the confidence weight; 0 disables it.
    pub noise_gain: f64,
    /// Floor `ν` of the per-pixel vector normalization `F / √(‖F‖² + ν²)`; 0 disables it.
    pub vector_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { window_radius: 2, contrast_floor: 0.01, blur_radius: 0, scale: 1, vector_floor: 0.1, noise_gain: 3.0 }
    }
}

/// Robust white-noise level of a single-channel image from the response to the
/// 3×3 Laplacian-difference mask (Immerkær 1996).
pub fn estimate_noise_sigma(img: &Image) -> f64 {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return 0.0;
    }
    const MASK: [[f64; 3]; 3] = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]];
    let mut acc = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut r = 0.0;
            for (j, row) in MASK.iter().enumerate() {
                for (i, m) in row.iter().enumerate() {
                    r += m * img.get(x + i - 1, y + j - 1, 0);
                }
            }
            acc += r.abs();
        }
    }
    (std::f64::consts::FRAC_PI_2).sqrt() * acc / (6.0 * ((w - 2) * (h - 2)) as f64)
}

/// Three channels: normalized intensity `n = (I − μ)/√(var + floor²)` and the
/// central-difference gradients of `n`. Each pixel vector is then rescaled to
/// `c · F / √(‖F‖² + ν²)`, where `c = s/(s + (kσ)²)` is a local SNR confidence from
/// the noise-corrected local variance `s` and the estimated noise level `σ`.
pub fn extract_features(intensity: &Image, cfg: &FeatureConfig) -> Image {
    let src = if intensity.channels == 1 { intensity.clone() } else { intensity.channel_mean() };
    let s = cfg.scale.max(1);
    let blur = cfg.blur_radius * s + s / 2;
    let src = if blur > 0 { src.box_mean(blur) } else { src };
    let (w, h) = (src.width, src.height);
    let win = cfg.window_radius * s;
    let mean = src.box_mean(win);
    let sq = src.map(|v| v * v).box_mean(win);
    let floor2 = cfg.contrast_floor * cfg.contrast_floor;
    let sigma = if cfg.noise_gain > 0.0 { estimate_noise_sigma(&src) } else { 0.0 };
    let noise2 = (cfg.noise_gain * sigma).powi(2);
    let confidence: Vec<f64> = (0..w * h)
        .map(|i| {
            if noise2 == 0.0 {
                return 1.0;
            }
            let signal = (sq.data[i] - mean.data[i] * mean.data[i] - sigma * sigma).max(0.0);
            signal / (signal + noise2)
        })
        .collect();
    let norm: Vec<f64> = (0..w * h)
        .map(|i| {
            let var = (sq.data[i] - mean.data[i] * mean.data[i]).max(0.0);
            (src.data[i] - mean.data[i]) / (var + floor2).sqrt()
        })
        .collect();
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        norm[y * w + x]
    };
    let mut out = Image::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi, si) = (x as isize, y as isize, s as isize);
            let i = (y * w + x) * 3;
            out.data[i] = norm[y * w + x];
            out.data[i + 1] = 0.5 * (at(xi + si, yi) - at(xi - si, yi));
            out.data[i + 2] = 0.5 * (at(xi, yi + si) - at(xi, yi - si));
        }
    }
    let nu2 = cfg.vector_floor * cfg.vector_floor;
    for (px, c) in out.data.chunks_mut(3).zip(&confidence) {
        let k = if nu2 > 0.0 { c / (px.iter().map(|v| v * v).sum::<f64>() + nu2).sqrt() } else { *c };
        px.iter_mut().for_each(|v| *v *= k);
    }
    out
}
