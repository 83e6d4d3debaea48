//! Minimal bar charts rendered straight into an RGB PNG.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::CliError;

pub const PALETTE: [[u8; 3]; 4] = [[68, 119, 170], [204, 102, 119], [34, 136, 51], [170, 170, 170]];

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self { w, h, px: vec![255; w * h * 3] }
    }

    fn rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, c: [u8; 3]) {
        for y in y0.min(self.h)..y1.min(self.h) {
            for x in x0.min(self.w)..x1.min(self.w) {
                let i = (y * self.w + x) * 3;
                self.px[i..i + 3].copy_from_slice(&c);
            }
        }
    }

    /// Draws digits, '.' and '-' in a 3×5 font scaled by `s`.
    fn text(&mut self, mut x: usize, y: usize, s: usize, t: &str, c: [u8; 3]) {
        for ch in t.chars() {
            let rows = glyph(ch);
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..3 {
                    if bits >> (2 - col) & 1 == 1 {
                        self.rect(x + col * s, y + r * s, x + (col + 1) * s, y + (r + 1) * s, c);
                    }
                }
            }
            x += 4 * s;
        }
    }

    fn save(&self, path: &Path) -> Result<(), CliError> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.w as u32, self.h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let err = |e: png::EncodingError| CliError::Format(format!("{}: {e}", path.display()));
        let mut w = enc.write_header().map_err(err)?;
        w.write_image_data(&self.px).map_err(err)?;
        w.finish().map_err(err)
    }
}

fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        _ => [0; 5],
    }
}

/// One bar per value, colored by position in `PALETTE`, with the value printed
/// above it. Missing values leave a gap.
pub fn bar_chart(path: &Path, values: &[Option<f64>]) -> Result<(), CliError> {
    let (bar, gap, margin, top, bottom) = (60, 30, 40, 40, 20);
    let plot_h = 240;
    let w = 2 * margin + values.len() * bar + values.len().saturating_sub(1) * gap;
    let h = top + plot_h + bottom;
    let mut c = Canvas::new(w.max(1), h);
    let max = values.iter().flatten().cloned().fold(0.0, f64::max);
    let base = top + plot_h;
    c.rect(margin / 2, base, w - margin / 2, base + 2, [0, 0, 0]);
    for (i, v) in values.iter().enumerate() {
        let Some(v) = v else { continue };
        let x0 = margin + i * (bar + gap);
        let bh = if max > 0.0 { (v / max * plot_h as f64).round() as usize } else { 0 };
        c.rect(x0, base - bh, x0 + bar, base, PALETTE[i % PALETTE.len()]);
        let label = format!("{v:.2}");
        let tw = label.len() * 8;
        c.text((x0 + bar / 2).saturating_sub(tw / 2), (base - bh).saturating_sub(14), 2, &label, [0, 0, 0]);
    }
    c.save(path)
}
