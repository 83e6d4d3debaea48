//! Cross-spectral feature fusion and iterative disparity estimation.

mod correlation;
mod disparity;

pub use correlation::{aggregate, correlation, correlation_at, search_offsets, CorrVolume, Offset};
pub use disparity::{
    depth_in_view, estimate_disparity, right_view_disparity, MatchConfig, MatchMode, Modality, StereoEstimate,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Logistic squashing kept strictly inside (0, 1).
fn logistic(x: f64) -> f64 {
    (1.0 / (1.0 + (-x).exp())).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

/// Deterministic attention map producing per-pixel, per-channel weights.
///
/// `Parametric` computes `logistic(gain_global·mean(|F_c|) + gain_local·mean₃ₓ₃(|F_c|) + bias_c)`
/// with per-channel parameters (a single value is broadcast to every channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttentionFn {
    Parametric { gain_global: Vec<f64>, gain_local: Vec<f64>, bias: Vec<f64> },
    Constant { value: f64 },
}

impl AttentionFn {
    /// Gates a modality on its mean feature strength (intensity, then gradient channels).
    pub fn unary_default() -> Self {
        AttentionFn::Parametric { gain_global: vec![40.0], gain_local: vec![0.0], bias: vec![-9.4, -6.6, -6.6] }
    }

    /// Leans towards the secondary branch wherever it passes the unary gate.
    pub fn merge_default() -> Self {
        AttentionFn::Parametric { gain_global: vec![0.0], gain_local: vec![0.0], bias: vec![-2.0] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AttentionFn::Constant { value } if !(0.0..=1.0).contains(value) => {
                Err(Error::InvalidConfig(format!("constant attention {value} outside [0, 1]")))
            }
            AttentionFn::Parametric { gain_global, gain_local, bias }
                if gain_global.is_empty()
                    || gain_local.is_empty()
                    || bias.is_empty()
                    || gain_global.iter().chain(gain_local).chain(bias).any(|v| !v.is_finite()) =>
            {
                Err(Error::InvalidConfig("parametric attention needs finite, non-empty parameters".into()))
            }
            _ => Ok(()),
        }
    }

    /// True when the output does not depend on the input features.
    pub fn is_constant(&self) -> bool {
        match self {
            AttentionFn::Constant { .. } => true,
            AttentionFn::Parametric { gain_global, gain_local, .. } => {
                gain_global.iter().chain(gain_local).all(|&g| g == 0.0)
            }
        }
    }

    pub fn apply(&self, f: &Image) -> Image {
        match self {
            AttentionFn::Constant { value } => Image::filled(f.width, f.height, f.channels, *value),
            AttentionFn::Parametric { gain_global, gain_local, bias } => {
                let pick = |v: &Vec<f64>, c: usize| v[c.min(v.len() - 1)];
                let n = (f.width * f.height).max(1) as f64;
                let mut global = vec![0.0; f.channels];
                if gain_global.iter().any(|&g| g != 0.0) {
                    for (i, v) in f.data.iter().enumerate() {
                        global[i % f.channels] += v.abs();
                    }
                    global.iter_mut().for_each(|g| *g /= n);
                }
                let mut out = if gain_local.iter().all(|&g| g == 0.0) {
                    Image::filled(f.width, f.height, f.channels, 0.0)
                } else {
                    f.map(f64::abs).box_mean(1)
                };
                for (i, v) in out.data.iter_mut().enumerate() {
                    let c = i % f.channels;
                    *v = logistic(pick(gain_global, c) * global[c] + pick(gain_local, c) * *v + pick(bias, c));
                }
                out
            }
        }
    }
}

/// Attention-weighted fusion of target features `f_g` with aligned secondary
/// features `f_c`.
pub fn fuse_features(f_g: &Image, f_c: &Image, a_u: &AttentionFn, a_m: &AttentionFn) -> Result<Image> {
    if !f_g.same_shape(f_c) {
        return Err(Error::ShapeMismatch(format!(
            "fusion inputs {}x{}x{} vs {}x{}x{}",
            f_g.width, f_g.height, f_g.channels, f_c.width, f_c.height, f_c.channels
        )));
    }
    let wg = a_u.apply(f_g);
    let wc = a_u.apply(f_c);
    let ug: Vec<f64> = f_g.data.iter().zip(&wg.data).map(|(f, a)| f * a).collect();
    let uc: Vec<f64> = f_c.data.iter().zip(&wc.data).map(|(f, a)| f * a).collect();
    let am = if a_m.is_constant() {
        a_m.apply(&Image::filled(1, 1, f_g.channels, 0.0)).data.repeat(f_g.width * f_g.height)
    } else {
        merge_weights(&ug, &uc, &wg, &wc, f_g, a_m).data
    };
    let data = (0..ug.len()).map(|i| ug[i] * am[i] + uc[i] * (1.0 - am[i])).collect();
    Ok(Image { width: f_g.width, height: f_g.height, channels: f_g.channels, data })
}

fn merge_weights(ug: &[f64], uc: &[f64], wg: &Image, wc: &Image, f_g: &Image, a_m: &AttentionFn) -> Image {
    let mean: Vec<f64> = (0..ug.len())
        .map(|i| {
            let den = wg.data[i] + wc.data[i];
            if den > 0.0 {
                (ug[i] + uc[i]) / den
            } else {
                0.0
            }
        })
        .collect();
    let fbar = Image { width: f_g.width, height: f_g.height, channels: f_g.channels, data: mean };
    a_m.apply(&fbar)
}
