//! Analytic gated image formation.
//!
//! A gate setting `k` integrates the returning laser pulse over the window
//! `[ξ, ξ + τ_g]`. With a rectangular pulse of length `τ_p` emitted at `t = 0`,
//! the echo from depth `z` occupies `[2z/c, 2z/c + τ_p]`, so the range-intensity
//! profile is the overlap length of both windows scaled by the pulse amplitude
//! and the range attenuation `β(z)`. A slice then reads
//! `α·C_k(z) + Λ + D_k` per pixel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};

pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;
/// Normalization distance of the optional inverse-square falloff.
pub const FALLOFF_REFERENCE_M: f64 = 10.0;
/// Exposure at which a passive capture reproduces the albedo at unit ambient level.
pub const EXPOSURE_REF_S: f64 = 108e-6;
/// Clear-site sensitivity gain relative to the RGB mean.
pub const CLEAR_GAIN: f64 = 1.3;
/// Above this mean photon count shot noise is drawn from the Gaussian approximation.
const POISSON_GAUSSIAN_SWITCH: f64 = 20.0;

/// Geometric falloff applied on top of atmospheric extinction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeFalloff {
    /// Range-compensated sensor: only extinction attenuates the return.
    #[default]
    None,
    /// `(z_ref / z)²` with `z_ref = 10 m`.
    InverseSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeIntensityProfile {
    /// Gate delay ξ (s).
    pub xi: f64,
    /// Gate duration (s).
    pub tau_g: f64,
    /// Pulse duration (s).
    pub tau_p: f64,
    pub amplitude: f64,
    /// Extinction coefficient σ (1/m).
    pub sigma_atm: f64,
    #[serde(default = "default_c")]
    pub c_light: f64,
    #[serde(default)]
    pub falloff: RangeFalloff,
}

fn default_c() -> f64 {
    SPEED_OF_LIGHT
}

impl RangeIntensityProfile {
    pub fn new(xi: f64, tau_g: f64, tau_p: f64, amplitude: f64, sigma_atm: f64) -> Self {
        Self { xi, tau_g, tau_p, amplitude, sigma_atm, c_light: SPEED_OF_LIGHT, falloff: RangeFalloff::None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_g > 0.0 && self.tau_p > 0.0 && self.xi >= 0.0 && self.sigma_atm >= 0.0 && self.c_light > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid range-intensity profile {self:?}")))
        }
    }

    /// Depth interval `[z_lo, z_hi]` outside which the profile is exactly zero.
    pub fn support(&self) -> (f64, f64) {
        (self.c_light * (self.xi - self.tau_p) / 2.0, self.c_light * (self.xi + self.tau_g) / 2.0)
    }

    /// Temporal overlap of gate and echo (s).
    pub fn overlap(&self, z: f64) -> f64 {
        let arrival = 2.0 * z / self.c_light;
        let hi = (self.xi + self.tau_g).min(arrival + self.tau_p);
        let lo = self.xi.max(arrival);
        (hi - lo).max(0.0)
    }

    pub fn attenuation(&self, z: f64) -> f64 {
        let ext = (-2.0 * self.sigma_atm * z).exp();
        match self.falloff {
            RangeFalloff::None => ext,
            RangeFalloff::InverseSquare => ext * (FALLOFF_REFERENCE_M / z).powi(2),
        }
    }
}

/// Evaluates `C_k(z)`.
pub fn rip_eval(profile: &RangeIntensityProfile, z: f64) -> Result<f64> {
    if z <= 0.0 || z.is_nan() {
        return Err(Error::NonPositiveDepth(z));
    }
    Ok(profile.attenuation(z) * profile.amplitude * profile.overlap(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorNoise {
    /// Gaussian read noise standard deviation (normalized DN).
    pub read_sigma: f64,
    /// Photons per unit DN; zero disables shot noise.
    pub shot_scale: f64,
    pub seed: u64,
}

impl SensorNoise {
    pub fn read_only(read_sigma: f64, seed: u64) -> Self {
        Self { read_sigma, shot_scale: 0.0, seed }
    }

    /// Same noise parameters on an independent random stream.
    pub fn derive(&self, stream: u64) -> Self {
        Self { seed: splitmix64(self.seed ^ splitmix64(stream.wrapping_add(0x9e37_79b9))), ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.read_sigma >= 0.0 && self.shot_scale >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid noise {self:?}")))
        }
    }

    fn sample(&self, value: f64, rng: &mut ChaCha8Rng) -> f64 {
        let mut v = value;
        if self.shot_scale > 0.0 && value > 0.0 {
            let photons = value * self.shot_scale;
            let count = if photons > POISSON_GAUSSIAN_SWITCH {
                Normal::new(photons, photons.sqrt()).map(|d| d.sample(rng)).unwrap_or(photons)
            } else {
                Poisson::new(photons).map(|d| d.sample(rng)).unwrap_or(photons)
            };
            v = count / self.shot_scale;
        }
        if self.read_sigma > 0.0 {
            v += self.read_sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        v
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Adds sensor noise in place and clips to `[0, 1]`. Each row draws from its own
/// ChaCha stream, so output does not depend on the thread count.
pub fn apply_noise(img: &mut Image, noise: Option<&SensorNoise>) {
    let row_len = img.width * img.channels;
    match noise {
        Some(n) => img.data.par_chunks_mut(row_len).enumerate().for_each(|(y, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
            rng.set_stream(y as u64);
            for v in row.iter_mut() {
                *v = n.sample(*v, &mut rng).clamp(0.0, 1.0);
            }
        }),
        None => img.data.par_iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0)),
    }
}

/// Ambient term Λ of a gated slice.
#[derive(Debug, Clone, Copy)]
pub enum Ambient<'a> {
    Uniform(f64),
    PerPixel(&'a Image),
}

impl Ambient<'_> {
    #[inline]
    fn at(&self, i: usize) -> f64 {
        match self {
            Ambient::Uniform(v) => *v,
            Ambient::PerPixel(img) => img.data[i],
        }
    }

    fn check(&self, width: usize, height: usize) -> Result<()> {
        match self {
            Ambient::PerPixel(img) if img.width != width || img.height != height || img.channels != 1 => {
                Err(Error::DimensionMismatch("ambient image does not match the depth map".into()))
            }
            _ => Ok(()),
        }
    }
}

pub fn form_gated_slice(
    depth: &DepthMap,
    albedo: &Image,
    profile: &RangeIntensityProfile,
    ambient: Ambient<'_>,
    dark: f64,
    noise: Option<&SensorNoise>,
) -> Result<Image> {
    if albedo.width != depth.width || albedo.height != depth.height || albedo.channels != 1 {
        return Err(Error::DimensionMismatch(format!(
            "depth {}x{} vs albedo {}x{}x{}",
            depth.width, depth.height, albedo.width, albedo.height, albedo.channels
        )));
    }
    ambient.check(depth.width, depth.height)?;
    if albedo.data.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidConfig("albedo outside [0, 1]".into()));
    }
    let mut out = Image::new(depth.width, depth.height, 1);
    out.data.par_iter_mut().enumerate().for_each(|(i, o)| {
        let signal = if depth.mask[i] && depth.values[i] > 0.0 {
            albedo.data[i] * rip_eval(profile, depth.values[i]).unwrap_or(0.0)
        } else {
            0.0
        };
        *o = signal + ambient.at(i) + dark;
    });
    apply_noise(&mut out, noise);
    Ok(out)
}

/// Passive capture: `α · ambient_level · exposure / 108 µs`, plus noise, clipped.
pub fn form_passive_image(albedo: &Image, ambient_level: f64, exposure: f64, noise: Option<&SensorNoise>) -> Result<Image> {
    if exposure <= 0.0 || !exposure.is_finite() {
        return Err(Error::InvalidConfig(format!("exposure must be positive, got {exposure}")));
    }
    let gain = ambient_level * exposure / EXPOSURE_REF_S;
    let mut out = albedo.map(|a| a * gain);
    apply_noise(&mut out, noise);
    Ok(out)
}

/// Color of the filter at `(x, y)` in the R C / C B tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfaSite {
    Red,
    Clear,
    Blue,
}

pub fn cfa_site(x: usize, y: usize) -> CfaSite {
    match (y % 2, x % 2) {
        (0, 0) => CfaSite::Red,
        (1, 1) => CfaSite::Blue,
        _ => CfaSite::Clear,
    }
}

fn check_even(width: usize, height: usize) -> Result<()> {
    if width % 2 != 0 || height % 2 != 0 || width == 0 || height == 0 {
        Err(Error::OddDimensions { width, height })
    } else {
        Ok(())
    }
}

pub fn rccb_mosaic(rgb: &Image) -> Result<Image> {
    if rgb.channels != 3 {
        return Err(Error::DimensionMismatch(format!("expected 3 channels, got {}", rgb.channels)));
    }
    check_even(rgb.width, rgb.height)?;
    Ok(Image::from_fn(rgb.width, rgb.height, |x, y| {
        let p = rgb.pixel(x, y);
        match cfa_site(x, y) {
            CfaSite::Red => p[0],
            CfaSite::Blue => p[2],
            CfaSite::Clear => ((p[0] + p[1] + p[2]) / 3.0 * CLEAR_GAIN).clamp(0.0, 1.0),
        }
    }))
}

/// Reflect-101 index, which preserves the CFA parity at the border.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

pub fn rccb_demosaic(raw: &Image) -> Result<Image> {
    if raw.channels != 1 {
        return Err(Error::DimensionMismatch(format!("expected 1 channel, got {}", raw.channels)));
    }
    check_even(raw.width, raw.height)?;
    let (w, h) = (raw.width, raw.height);
    let at = |x: isize, y: isize| raw.get(reflect(x, w), reflect(y, h), 0);
    let mut out = Image::new(w, h, 3);
    out.data.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        let yi = y as isize;
        for x in 0..w {
            let xi = x as isize;
            let center = at(xi, yi);
            let horiz = (at(xi - 1, yi) + at(xi + 1, yi)) / 2.0;
            let vert = (at(xi, yi - 1) + at(xi, yi + 1)) / 2.0;
            let cross = (horiz + vert) / 2.0;
            let diag = (at(xi - 1, yi - 1) + at(xi + 1, yi - 1) + at(xi - 1, yi + 1) + at(xi + 1, yi + 1)) / 4.0;
            let (r, c, b) = match cfa_site(x, y) {
                CfaSite::Red => (center, cross, diag),
                CfaSite::Blue => (diag, cross, center),
                // Clear on a red row has red neighbours left/right and blue above/below.
                CfaSite::Clear if y % 2 == 0 => (horiz, center, vert),
                CfaSite::Clear => (vert, center, horiz),
            };
            let g = (3.0 * c / CLEAR_GAIN - r - b).clamp(0.0, 1.0);
            row[x * 3] = r.clamp(0.0, 1.0);
            row[x * 3 + 1] = g;
            row[x * 3 + 2] = b.clamp(0.0, 1.0);
        }
    });
    Ok(out)
}

/// K gated slices of one camera plus the model parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedSliceStack {
    pub slices: Vec<Image>,
    pub profiles: Vec<RangeIntensityProfile>,
    /// Dark-current offsets `D_k` (normalized DN).
    pub dark: Vec<f64>,
    /// Dark-corrected laser-off capture Λ.
    pub ambient_ref: Image,
}

impl GatedSliceStack {
    pub fn validate(&self) -> Result<()> {
        let k = self.slices.len();
        if k == 0 || self.profiles.len() != k || self.dark.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} slices, {} profiles, {} dark levels",
                k,
                self.profiles.len(),
                self.dark.len()
            )));
        }
        let (w, h) = (self.slices[0].width, self.slices[0].height);
        if self.slices.iter().any(|s| s.width != w || s.height != h || s.channels != 1)
            || self.ambient_ref.width != w
            || self.ambient_ref.height != h
        {
            return Err(Error::DimensionMismatch("slice stack rasters differ in size".into()));
        }
        self.profiles.iter().try_for_each(|p| p.validate())
    }

    pub fn width(&self) -> usize {
        self.slices[0].width
    }

    pub fn height(&self) -> usize {
        self.slices[0].height
    }

    /// Mean of the slices: the intensity image used for stereo features.
    pub fn mean_image(&self) -> Image {
        let mut out = Image::new(self.width(), self.height(), 1);
        for s in &self.slices {
            for (o, v) in out.data.iter_mut().zip(&s.data) {
                *o += v;
            }
        }
        let k = self.slices.len() as f64;
        out.data.iter_mut().for_each(|v| *v /= k);
        out
    }
}

/// Slice design and radiometry used by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingConfig {
    pub profiles: Vec<RangeIntensityProfile>,
    pub dark: Vec<f64>,
    /// Fraction of the ambient level that leaks into a gate window.
    pub ambient_fraction: f64,
}

impl GatingConfig {
    /// Peak slice response for unit albedo at unit laser gain.
    pub const PEAK_LEVEL: f64 = 0.8;

    /// Three triangular gates (τ_g = τ_p = 800 ns) peaking near 7.5 m, 105 m and
    /// 202 m. Every depth in 10–220 m is seen by at least two slices with a
    /// varying ratio, which keeps depth identifiable from the stack.
    pub fn staggered(laser_gain: f64) -> Self {
        let tau = 800e-9;
        let amplitude = laser_gain * Self::PEAK_LEVEL / tau;
        let profiles = [50e-9, 700e-9, 1350e-9]
            .iter()
            .map(|&xi| RangeIntensityProfile::new(xi, tau, tau, amplitude, 2e-4))
            .collect();
        Self { profiles, dark: vec![0.010, 0.012, 0.014], ambient_fraction: 0.15 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() || self.profiles.len() != self.dark.len() {
            return Err(Error::InvalidConfig("gating needs one dark level per profile".into()));
        }
        self.profiles.iter().try_for_each(|p| p.validate())
    }
}
