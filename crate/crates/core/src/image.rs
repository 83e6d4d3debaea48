//! Raster containers: multi-channel real images and masked scalar maps.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved real-valued raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Bilinear interpolation footprint: base pixel, fractional offsets, and whether
/// the right/bottom neighbour carries weight.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    x0: usize,
    y0: usize,
    fx: f64,
    fy: f64,
    x1: usize,
    y1: usize,
}

fn footprint(width: usize, height: usize, u: f64, v: f64) -> Option<Footprint> {
    if !(u.is_finite() && v.is_finite()) || u < 0.0 || v < 0.0 {
        return None;
    }
    let x0 = u.floor();
    let y0 = v.floor();
    let (fx, fy) = (u - x0, v - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    // A neighbour with zero weight is not required, so integer coordinates on
    // the last row/column stay in bounds.
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    if x1 >= width || y1 >= height {
        return None;
    }
    Some(Footprint { x0, y0, fx, fy, x1, y1 })
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Single-channel image from a per-pixel function, evaluated in parallel over rows.
    pub fn from_fn<F>(width: usize, height: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let mut data = vec![0.0; width * height];
        data.par_chunks_mut(width.max(1)).enumerate().for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                *out = f(x, y);
            }
        });
        Self { width, height, channels: 1, data }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.idx(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn channel(&self, c: usize) -> Image {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }

    /// Stacks single-channel images into one multi-channel image.
    pub fn stack(planes: &[&Image]) -> Result<Image> {
        let first = planes.first().ok_or_else(|| Error::DimensionMismatch("no planes".into()))?;
        let channels: usize = planes.iter().map(|p| p.channels).sum();
        let mut out = Image::new(first.width, first.height, channels);
        let mut c0 = 0;
        for p in planes {
            if p.width != first.width || p.height != first.height {
                return Err(Error::DimensionMismatch("stacked planes differ in size".into()));
            }
            for i in 0..p.width * p.height {
                for c in 0..p.channels {
                    out.data[i * channels + c0 + c] = p.data[i * p.channels + c];
                }
            }
            c0 += p.channels;
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    /// Mean over channels, producing a single-channel image.
    pub fn channel_mean(&self) -> Image {
        let c = self.channels;
        let data = self.data.chunks(c).map(|px| px.iter().sum::<f64>() / c as f64).collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }

    /// Bilinear sample of channel `c`; `None` when a weighted neighbour is out of bounds.
    #[inline]
    pub fn sample_channel(&self, u: f64, v: f64, c: usize) -> Option<f64> {
        let f = footprint(self.width, self.height, u, v)?;
        let a = self.get(f.x0, f.y0, c);
        let b = self.get(f.x1, f.y0, c);
        let d = self.get(f.x0, f.y1, c);
        let e = self.get(f.x1, f.y1, c);
        let top = a + (b - a) * f.fx;
        let bot = d + (e - d) * f.fx;
        Some(top + (bot - top) * f.fy)
    }

    /// Bilinear sample of channel `c` together with the exact partial derivatives
    /// of the bilinear interpolant, `(value, ∂/∂u, ∂/∂v)`.
    #[inline]
    pub fn sample_channel_grad(&self, u: f64, v: f64, c: usize) -> Option<(f64, f64, f64)> {
        let f = footprint(self.width, self.height, u, v)?;
        // Cell corners always come from the full cell so the derivative is defined
        // on integer coordinates as well; fall back to the left/upper cell at the edge.
        let (x0, x1) = if f.x0 + 1 < self.width { (f.x0, f.x0 + 1) } else { (f.x0 - 1, f.x0) };
        let (y0, y1) = if f.y0 + 1 < self.height { (f.y0, f.y0 + 1) } else { (f.y0 - 1, f.y0) };
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let a = self.get(x0, y0, c);
        let b = self.get(x1, y0, c);
        let d = self.get(x0, y1, c);
        let e = self.get(x1, y1, c);
        let top = a + (b - a) * fx;
        let bot = d + (e - d) * fx;
        let value = top + (bot - top) * fy;
        let du = (b - a) * (1.0 - fy) + (e - d) * fy;
        let dv = bot - top;
        Some((value, du, dv))
    }

    /// Bilinear sample of every channel. Out of bounds yields zeros and `false`.
    pub fn bilinear_sample(&self, u: f64, v: f64) -> (Vec<f64>, bool) {
        match footprint(self.width, self.height, u, v) {
            Some(_) => ((0..self.channels).map(|c| self.sample_channel(u, v, c).unwrap_or(0.0)).collect(), true),
            None => (vec![0.0; self.channels], false),
        }
    }

    /// 2×2 box downsampling; odd trailing rows/columns are averaged with what exists.
    pub fn downsample2(&self) -> Image {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let ch = self.channels;
        let mut out = Image::new(w, h, ch);
        out.data.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = 0.0;
                    let mut n = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (sx, sy) = (2 * x + dx, 2 * y + dy);
                            if sx < self.width && sy < self.height {
                                acc += self.get(sx, sy, c);
                                n += 1.0;
                            }
                        }
                    }
                    row[x * ch + c] = acc / n;
                }
            }
        });
        out
    }

    /// Bilinear resampling to `width × height` with the pixel-center convention,
    /// clamping coordinates at the borders.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let ch = self.channels;
        let mut out = Image::new(width, height, ch);
        out.data.par_chunks_mut((width * ch).max(1)).enumerate().for_each(|(y, row)| {
            let v = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            for x in 0..width {
                let u = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                for c in 0..ch {
                    row[x * ch + c] = self.sample_channel(u, v, c).unwrap_or(0.0);
                }
            }
        });
        out
    }

    /// Box mean over a `(2r+1)²` window, clamped at the borders (mean of in-bounds samples).
    pub fn box_mean(&self, r: usize) -> Image {
        box_mean_generic(self.width, self.height, self.channels, &self.data, r)
    }
}

pub(crate) fn box_mean_generic(width: usize, height: usize, ch: usize, data: &[f64], r: usize) -> Image {
    // Separable running sums over in-bounds samples: horizontal, then vertical.
    let row_len = width * ch;
    let mut tmp = vec![0.0; data.len()];
    tmp.par_chunks_mut(row_len.max(1)).enumerate().for_each(|(y, row)| {
        let src = &data[y * row_len..(y + 1) * row_len];
        let mut acc = vec![0.0; ch];
        for x in 0..r.min(width) {
            for c in 0..ch {
                acc[c] += src[x * ch + c];
            }
        }
        for x in 0..width {
            if x + r < width {
                for c in 0..ch {
                    acc[c] += src[(x + r) * ch + c];
                }
            }
            if x > r {
                for c in 0..ch {
                    acc[c] -= src[(x - r - 1) * ch + c];
                }
            }
            let n = ((x + r).min(width - 1) - x.saturating_sub(r) + 1) as f64;
            for c in 0..ch {
                row[x * ch + c] = acc[c] / n;
            }
        }
    });
    let mut out = vec![0.0; data.len()];
    let mut acc = vec![0.0; row_len];
    for y in 0..r.min(height) {
        acc.iter_mut().zip(&tmp[y * row_len..(y + 1) * row_len]).for_each(|(a, v)| *a += v);
    }
    for y in 0..height {
        if y + r < height {
            acc.iter_mut().zip(&tmp[(y + r) * row_len..(y + r + 1) * row_len]).for_each(|(a, v)| *a += v);
        }
        if y > r {
            acc.iter_mut().zip(&tmp[(y - r - 1) * row_len..(y - r) * row_len]).for_each(|(a, v)| *a -= v);
        }
        let n = ((y + r).min(height - 1) - y.saturating_sub(r) + 1) as f64;
        out[y * row_len..(y + 1) * row_len].iter_mut().zip(&acc).for_each(|(o, a)| *o = a / n);
    }
    Image { width, height, channels: ch, data: out }
}

/// Per-pixel scalar map with a validity mask; used for depth (m) and disparity (px).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

pub type DepthMap = MaskedMap;
pub type DisparityMap = MaskedMap;

impl MaskedMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height], mask: vec![false; width * height] }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, values: vec![value; width * height], mask: vec![true; width * height] }
    }

    /// Builds a map where `NaN` marks invalid pixels.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} values for {}x{}", values.len(), width, height)));
        }
        let mask = values.iter().map(|v| v.is_finite()).collect();
        let values = values.into_iter().map(|v| if v.is_finite() { v } else { 0.0 }).collect();
        Ok(Self { width, height, values, mask })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.mask[i].then(|| self.values[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Option<f64>) {
        let i = y * self.width + x;
        match v {
            Some(v) => {
                self.values[i] = v;
                self.mask[i] = true;
            }
            None => {
                self.values[i] = 0.0;
                self.mask[i] = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn same_size(&self, other: &MaskedMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Values with `NaN` at invalid pixels.
    pub fn to_nan_values(&self) -> Vec<f64> {
        self.values.iter().zip(&self.mask).map(|(&v, &m)| if m { v } else { f64::NAN }).collect()
    }

    pub fn as_image(&self) -> Image {
        Image { width: self.width, height: self.height, channels: 1, data: self.values.clone() }
    }

    /// Bilinear sample that requires all weighted neighbours to be valid.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        let f = footprint(self.width, self.height, u, v)?;
        let a = self.get(f.x0, f.y0)?;
        let b = self.get(f.x1, f.y0)?;
        let d = self.get(f.x0, f.y1)?;
        let e = self.get(f.x1, f.y1)?;
        let top = a + (b - a) * f.fx;
        let bot = d + (e - d) * f.fx;
        Some(top + (bot - top) * f.fy)
    }

    /// Nearest-neighbour lookup (rounding to the closest pixel center).
    pub fn sample_nearest(&self, u: f64, v: f64) -> Option<f64> {
        let (x, y) = (u.round(), v.round());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        self.get(x as usize, y as usize)
    }

    /// Resamples to `width × height` by bilinear interpolation of valid samples,
    /// multiplying values by `value_scale` (e.g. the width ratio for disparity).
    pub fn resize_bilinear(&self, width: usize, height: usize, value_scale: f64) -> MaskedMap {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = MaskedMap::invalid(width, height);
        for y in 0..height {
            for x in 0..width {
                let u = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let v = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
                let s = self.sample(u, v).or_else(|| self.sample_nearest(u, v));
                out.set(x, y, s.map(|s| s * value_scale));
            }
        }
        out
    }

    /// 2× downsampling keeping the minimum valid value in each 2×2 block.
    pub fn downsample2_min(&self) -> MaskedMap {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let mut out = MaskedMap::invalid(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut best: Option<f64> = None;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (sx, sy) = (2 * x + dx, 2 * y + dy);
                        if sx < self.width && sy < self.height {
                            if let Some(v) = self.get(sx, sy) {
                                best = Some(best.map_or(v, |b: f64| b.min(v)));
                            }
                        }
                    }
                }
                out.set(x, y, best);
            }
        }
        out
    }
}
