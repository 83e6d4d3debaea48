use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{box_mean_generic, Image};

/// Integer search offset `(f, g)`: horizontal and vertical displacement (px).
pub type Offset = (i32, i32);

/// Per-pixel correlation values, `values[(y·w + x)·K + k]` for offset `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrVolume {
    pub width: usize,
    pub height: usize,
    pub offsets: Vec<Offset>,
    pub values: Vec<f64>,
}

impl CorrVolume {
    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let k = self.offsets.len();
        let i = (y * self.width + x) * k;
        &self.values[i..i + k]
    }
}

/// Odd iterations search horizontally over `[−r, r]`; even iterations search a
/// square window of half-size `⌈r/2⌉`.
pub fn search_offsets(iteration: usize, radius: usize) -> Vec<Offset> {
    let r = radius.max(1) as i32;
    if iteration % 2 == 1 {
        (-r..=r).map(|f| (f, 0)).collect()
    } else {
        let r2 = (r + 1) / 2;
        (-r2..=r2).flat_map(|g| (-r2..=r2).map(move |f| (f, g))).collect()
    }
}

fn check(f_l: &Image, f_r: &Image) -> Result<()> {
    if f_l.channels != f_r.channels || f_l.width != f_r.width || f_l.height != f_r.height {
        return Err(Error::ShapeMismatch(format!(
            "correlation inputs {}x{}x{} vs {}x{}x{}",
            f_l.width, f_l.height, f_l.channels, f_r.width, f_r.height, f_r.channels
        )));
    }
    Ok(())
}

/// `Corr(x, y, k) = (1/C) Σ_i F_l(i, x, y) · F_r(i, x + f_k, y + g_k)`, with
/// out-of-bounds samples contributing zero.
pub fn correlation(f_l: &Image, f_r: &Image, offsets: &[Offset]) -> Result<CorrVolume> {
    check(f_l, f_r)?;
    let (w, h, ch) = (f_l.width, f_l.height, f_l.channels);
    let k = offsets.len();
    let mut values = vec![0.0; w * h * k];
    values.par_chunks_mut((w * k).max(1)).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let a = f_l.pixel(x, y);
            for (j, &(f, g)) in offsets.iter().enumerate() {
                let (sx, sy) = (x as i64 + f as i64, y as i64 + g as i64);
                if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                    continue;
                }
                let b = f_r.pixel(sx as usize, sy as usize);
                row[x * k + j] = a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / ch as f64;
            }
        }
    });
    Ok(CorrVolume { width: w, height: h, offsets: offsets.to_vec(), values })
}

/// Correlation around a per-pixel base disparity: the right features are sampled
/// bilinearly at `(x − base(x, y) + f_k, y + g_k)`.
pub fn correlation_at(f_l: &Image, f_r: &Image, base: &[f64], offsets: &[Offset]) -> Result<CorrVolume> {
    check(f_l, f_r)?;
    let (w, h, ch) = (f_l.width, f_l.height, f_l.channels);
    if base.len() != w * h {
        return Err(Error::ShapeMismatch(format!("base disparity has {} entries, expected {}", base.len(), w * h)));
    }
    let k = offsets.len();
    let mut values = vec![0.0; w * h * k];
    let inv = 1.0 / ch as f64;
    values.par_chunks_mut((w * k).max(1)).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let a = f_l.pixel(x, y);
            let u0 = x as f64 - base[y * w + x];
            if !u0.is_finite() {
                continue;
            }
            // Rows are integral, so only the horizontal weights matter.
            let fl = u0.floor();
            let t = u0 - fl;
            let iu = fl as i64;
            for (j, &(f, g)) in offsets.iter().enumerate() {
                let sy = y as i64 + g as i64;
                let sx = iu + f as i64;
                if sy < 0 || sy >= h as i64 || sx < 0 || sx >= w as i64 || (t > 0.0 && sx + 1 >= w as i64) {
                    continue;
                }
                let p0 = f_r.pixel(sx as usize, sy as usize);
                let dot0: f64 = a.iter().zip(p0).map(|(p, q)| p * q).sum();
                let dot = if t > 0.0 {
                    let p1 = f_r.pixel(sx as usize + 1, sy as usize);
                    let dot1: f64 = a.iter().zip(p1).map(|(p, q)| p * q).sum();
                    (1.0 - t) * dot0 + t * dot1
                } else {
                    dot0
                };
                row[x * k + j] = dot * inv;
            }
        }
    });
    Ok(CorrVolume { width: w, height: h, offsets: offsets.to_vec(), values })
}

/// Box-filters every correlation slice over a `(2r+1)²` window.
pub fn aggregate(vol: &CorrVolume, radius: usize) -> CorrVolume {
    if radius == 0 {
        return vol.clone();
    }
    let img = box_mean_generic(vol.width, vol.height, vol.offsets.len(), &vol.values, radius);
    CorrVolume { values: img.data, ..vol.clone() }
}
