//! Per-pixel depth decoding from a gated slice stack.
//!
//! For a fixed depth the slice model `m_k − D_k = α·C_k(z) + Λ` is linear in
//! `(α, Λ)`, so both are eliminated in closed form and only `z` is searched:
//! a uniform grid locates the basin, golden-section search polishes it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::{rip_eval, GatedSliceStack, RangeIntensityProfile};
use crate::image::{DepthMap, Image, MaskedMap};

const INV_PHI: f64 = 0.618_033_988_749_894_8;
/// Residual curves flatter than this carry no depth information.
const FLAT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub z_min: f64,
    pub z_max: f64,
    pub grid_step: f64,
    /// Bracket width at which golden-section refinement stops (m).
    pub refine_tol: f64,
    /// Per-slice noise standard deviation used by the SNR mask (DN).
    pub noise_sigma: f64,
    pub snr_threshold: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { z_min: 5.0, z_max: 220.0, grid_step: 0.5, refine_tol: 1e-8, noise_sigma: 0.002, snr_threshold: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelFit {
    pub z: f64,
    pub albedo: f64,
    pub ambient: f64,
    /// Root-mean-square model residual (DN).
    pub rms: f64,
}

/// Closed-form `(α, Λ, rms)` for responses `c` and dark-corrected measurements `y`.
/// `None` when the responses are constant across slices (α unobservable).
fn solve_linear(c: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = c.len() as f64;
    let (mut sc, mut scc, mut sy, mut scy) = (0.0, 0.0, 0.0, 0.0);
    for (&ci, &yi) in c.iter().zip(y) {
        sc += ci;
        scc += ci * ci;
        sy += yi;
        scy += ci * yi;
    }
    let det = n * scc - sc * sc;
    if !(det > 1e-12 * n * scc) {
        return None;
    }
    let mut alpha = (n * scy - sc * sy) / det;
    let mut ambient = (sy - alpha * sc) / n;
    if alpha < 0.0 {
        alpha = 0.0;
        ambient = sy / n;
    }
    let sse: f64 = c.iter().zip(y).map(|(&ci, &yi)| (yi - alpha * ci - ambient).powi(2)).sum();
    Some((alpha, ambient, (sse / n).sqrt()))
}

fn responses(profiles: &[RangeIntensityProfile], z: f64, out: &mut [f64]) {
    for (o, p) in out.iter_mut().zip(profiles) {
        *o = rip_eval(p, z).unwrap_or(0.0);
    }
}

/// Precomputed `C_k` on the search grid, shared by all pixels of a stack.
struct ResponseTable {
    zs: Vec<f64>,
    c: Vec<f64>,
    k: usize,
}

impl ResponseTable {
    fn new(profiles: &[RangeIntensityProfile], cfg: &DecodeConfig) -> Self {
        let n = ((cfg.z_max - cfg.z_min) / cfg.grid_step).floor() as usize + 1;
        let zs: Vec<f64> = (0..n).map(|i| cfg.z_min + i as f64 * cfg.grid_step).collect();
        let k = profiles.len();
        let mut c = vec![0.0; n * k];
        for (i, &z) in zs.iter().enumerate() {
            responses(profiles, z, &mut c[i * k..(i + 1) * k]);
        }
        Self { zs, c, k }
    }
}

fn check_config(cfg: &DecodeConfig) -> Result<()> {
    if cfg.z_min > 0.0 && cfg.z_max > cfg.z_min && cfg.grid_step > 0.0 && cfg.refine_tol > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("invalid decode search {cfg:?}")))
    }
}

fn fit_with_table(
    measurements: &[f64],
    profiles: &[RangeIntensityProfile],
    dark: &[f64],
    table: &ResponseTable,
    cfg: &DecodeConfig,
) -> Result<PixelFit> {
    let k = table.k;
    let y: Vec<f64> = measurements.iter().zip(dark).map(|(m, d)| m - d).collect();
    let mut best: Option<(usize, f64)> = None;
    let (mut lo_rms, mut hi_rms) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..table.zs.len() {
        if let Some((_, _, rms)) = solve_linear(&table.c[i * k..(i + 1) * k], &y) {
            lo_rms = lo_rms.min(rms);
            hi_rms = hi_rms.max(rms);
            if best.is_none_or(|(_, b)| rms < b) {
                best = Some((i, rms));
            }
        }
    }
    let (i_best, _) = best.ok_or_else(|| Error::DegenerateSystem("no slice responds anywhere in range".into()))?;
    if hi_rms - lo_rms <= FLAT_TOL {
        return Err(Error::DegenerateSystem("residual is flat in depth".into()));
    }

    let mut c = vec![0.0; k];
    let mut eval = |z: f64| -> Option<(f64, f64, f64)> {
        responses(profiles, z, &mut c);
        solve_linear(&c, &y)
    };
    let cost = |r: Option<(f64, f64, f64)>| r.map_or(f64::INFINITY, |r| r.2);

    // Golden-section search on the bracket around the grid minimum.
    let mut a = (table.zs[i_best] - cfg.grid_step).max(cfg.z_min);
    let mut b = (table.zs[i_best] + cfg.grid_step).min(cfg.z_max);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = cost(eval(x1));
    let mut f2 = cost(eval(x2));
    while b - a > cfg.refine_tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = cost(eval(x1));
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = cost(eval(x2));
        }
    }
    let mut z = 0.5 * (a + b);
    let mut sol = eval(z);
    let grid = eval(table.zs[i_best]);
    if cost(grid) < cost(sol) {
        z = table.zs[i_best];
        sol = grid;
    }
    let (albedo, ambient, rms) = sol.ok_or_else(|| Error::DegenerateSystem("refined depth is unobservable".into()))?;
    Ok(PixelFit { z, albedo, ambient, rms })
}

/// Fits `(z, α, Λ)` to one pixel's slice measurements.
pub fn fit_pixel(
    measurements: &[f64],
    profiles: &[RangeIntensityProfile],
    dark: &[f64],
    cfg: &DecodeConfig,
) -> Result<PixelFit> {
    if measurements.len() < 3 || profiles.len() != measurements.len() || dark.len() != measurements.len() {
        return Err(Error::DimensionMismatch(format!(
            "need K ≥ 3 matching measurements/profiles/dark levels, got {}/{}/{}",
            measurements.len(),
            profiles.len(),
            dark.len()
        )));
    }
    check_config(cfg)?;
    let table = ResponseTable::new(profiles, cfg);
    fit_with_table(measurements, profiles, dark, &table, cfg)
}

/// SNR consistency mask: the strongest slice must exceed ambient and dark level
/// by more than `threshold · noise_sigma`.
pub fn snr_mask(measurements: &[f64], ambient_hat: f64, dark: &[f64], noise_sigma: f64, threshold: f64) -> bool {
    measurements
        .iter()
        .zip(dark)
        .map(|(m, d)| m - ambient_hat - d)
        .fold(f64::NEG_INFINITY, f64::max)
        > threshold * noise_sigma
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub depth: DepthMap,
    pub albedo_hat: Image,
    pub ambient_hat: Image,
    pub residual: Image,
    /// Fit succeeded and passed the SNR mask.
    pub mask: Vec<bool>,
}

impl DecodeResult {
    pub fn coverage(&self) -> f64 {
        self.mask.iter().filter(|m| **m).count() as f64 / self.mask.len().max(1) as f64
    }
}

pub fn decode_depth(stack: &GatedSliceStack, cfg: &DecodeConfig) -> Result<DecodeResult> {
    stack.validate()?;
    if stack.slices.len() < 3 {
        return Err(Error::DimensionMismatch(format!("need K ≥ 3 slices, got {}", stack.slices.len())));
    }
    check_config(cfg)?;
    let (w, h) = (stack.width(), stack.height());
    let k = stack.slices.len();
    let table = ResponseTable::new(&stack.profiles, cfg);
    let fits: Vec<(Option<PixelFit>, f64, bool)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let m: Vec<f64> = stack.slices.iter().map(|s| s.data[i]).collect();
            match fit_with_table(&m, &stack.profiles, &stack.dark, &table, cfg) {
                Ok(fit) => {
                    let ok = fit.rms.is_finite()
                        && (cfg.z_min..=cfg.z_max).contains(&fit.z)
                        && snr_mask(&m, fit.ambient, &stack.dark, cfg.noise_sigma, cfg.snr_threshold);
                    (Some(fit), 0.0, ok)
                }
                Err(_) => {
                    let ambient = m.iter().zip(&stack.dark).map(|(m, d)| m - d).sum::<f64>() / k as f64;
                    (None, ambient, false)
                }
            }
        })
        .collect();

    let mut depth = MaskedMap::invalid(w, h);
    let mut albedo_hat = Image::new(w, h, 1);
    let mut ambient_hat = Image::new(w, h, 1);
    let mut residual = Image::new(w, h, 1);
    let mut mask = vec![false; w * h];
    for (i, (fit, fallback_ambient, ok)) in fits.into_iter().enumerate() {
        match fit {
            Some(f) => {
                albedo_hat.data[i] = f.albedo;
                ambient_hat.data[i] = f.ambient;
                residual.data[i] = f.rms;
                if ok {
                    depth.values[i] = f.z;
                    depth.mask[i] = true;
                    mask[i] = true;
                }
            }
            None => {
                ambient_hat.data[i] = fallback_ambient;
                residual.data[i] = f64::NAN;
            }
        }
    }
    Ok(DecodeResult { depth, albedo_hat, ambient_hat, residual, mask })
}
