//! On-disk dataset: one directory per frame plus a root `calib.json`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xstereo::gating::{GatedSliceStack, RangeIntensityProfile};
use xstereo::scenesim::{CameraId, FrameBundle, PerCamera, RigSpec, Stereo};
use xstereo::{DepthMap, Image};

use crate::config::Preset;
use crate::CliError;

pub const CALIB_FILE: &str = "calib.json";

pub fn frame_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("frame_{index:06}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub index: usize,
    pub seed: u64,
    /// Measured RCCB time offset (s).
    pub delta_t: f64,
    pub ambient_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub preset: Preset,
    pub rig: RigSpec,
    pub profiles: Vec<RangeIntensityProfile>,
    pub dark: Vec<f64>,
    pub frames: Vec<FrameMeta>,
}

impl Calibration {
    pub fn read(root: &Path) -> Result<Self, CliError> {
        let path = root.join(CALIB_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, root: &Path) -> Result<(), CliError> {
        write_json(&root.join(CALIB_FILE), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes a 1- or 3-channel image in `[0, 1]` as a 16-bit PNG.
pub fn write_png16(path: &Path, img: &Image) -> Result<(), CliError> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(CliError::Format(format!("{}: cannot store {c}-channel image", path.display()))),
    };
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Sixteen);
    let bytes: Vec<u8> = img.data.iter().flat_map(|&v| quantize(v).to_be_bytes()).collect();
    let png_err = |e: png::EncodingError| CliError::Format(format!("{}: {e}", path.display()));
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(&bytes).map_err(png_err)?;
    w.finish().map_err(png_err)
}

pub fn read_png16(path: &Path) -> Result<Image, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let fmt = |e: String| CliError::Format(format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(std::io::BufReader::new(file)).read_info().map_err(|e| fmt(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| fmt("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| fmt(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Sixteen {
        return Err(fmt(format!("expected 16-bit samples, found {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        c => return Err(fmt(format!("unsupported color type {c:?}"))),
    };
    let data = buf[..info.buffer_size()].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0).collect();
    Image::from_vec(info.width as usize, info.height as usize, channels, data).map_err(|e| fmt(e.to_string()))
}

/// Raw little-endian `f32` raster, row-major; invalid pixels are NaN.
pub fn write_f32(path: &Path, values: &[f64]) -> Result<(), CliError> {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_f32(path: &Path, expected_len: usize) -> Result<Vec<f64>, CliError> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| CliError::io(path, e))?;
    if bytes.len() != expected_len * 4 {
        return Err(CliError::Format(format!(
            "{}: {} bytes, expected {} ({} f32 values)",
            path.display(),
            bytes.len(),
            expected_len * 4,
            expected_len
        )));
    }
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect())
}

pub fn write_depth(path: &Path, map: &DepthMap) -> Result<(), CliError> {
    write_f32(path, &map.to_nan_values())
}

pub fn read_depth(path: &Path, width: usize, height: usize) -> Result<DepthMap, CliError> {
    let values = read_f32(path, width * height)?;
    DepthMap::from_values(width, height, values).map_err(|e| CliError::Format(e.to_string()))
}

fn side(id: CameraId) -> &'static str {
    if matches!(id, CameraId::GatedLeft | CameraId::RccbLeft) {
        "l"
    } else {
        "r"
    }
}

fn slice_name(id: CameraId, k: usize) -> String {
    format!("gated_{}_slice{k}.png", side(id))
}

fn ambient_name(id: CameraId) -> String {
    format!("gated_{}_ambient.png", side(id))
}

pub fn gt_depth_name(id: CameraId) -> String {
    format!("gt_depth_{}.f32", id.name())
}

fn gt_albedo_name(id: CameraId) -> String {
    format!("gt_albedo_{}.f32", id.name())
}

pub const LIDAR_FILE: &str = "lidar_sparse.f32";

/// Writes every raster of `bundle` into `dir`.
pub fn write_frame(dir: &Path, bundle: &FrameBundle) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (id, stack) in [(CameraId::GatedLeft, &bundle.gated.left), (CameraId::GatedRight, &bundle.gated.right)] {
        for (k, s) in stack.slices.iter().enumerate() {
            write_png16(&dir.join(slice_name(id, k)), s)?;
        }
        write_png16(&dir.join(ambient_name(id)), &stack.ambient_ref)?;
    }
    for (s, raw, rgb) in [("l", &bundle.rccb_raw.left, &bundle.rccb_rgb.left), ("r", &bundle.rccb_raw.right, &bundle.rccb_rgb.right)] {
        write_png16(&dir.join(format!("rccb_{s}_raw.png")), raw)?;
        write_png16(&dir.join(format!("rccb_{s}_rgb.png")), rgb)?;
    }
    for id in CameraId::ALL {
        write_depth(&dir.join(gt_depth_name(id)), bundle.gt_depth.get(id))?;
        write_f32(&dir.join(gt_albedo_name(id)), &bundle.gt_albedo.get(id).data)?;
    }
    write_depth(&dir.join(LIDAR_FILE), &bundle.sparse_lidar)
}

fn check_dims(path: &Path, img: &Image, w: usize, h: usize) -> Result<(), CliError> {
    if img.width != w || img.height != h {
        return Err(CliError::Format(format!("{}: {}x{}, calibration says {w}x{h}", path.display(), img.width, img.height)));
    }
    Ok(())
}

fn read_checked(path: &Path, w: usize, h: usize) -> Result<Image, CliError> {
    let img = read_png16(path)?;
    check_dims(path, &img, w, h)?;
    Ok(img)
}

/// Reads frame `meta.index` of a dataset back into a bundle.
pub fn read_frame(root: &Path, calib: &Calibration, meta: &FrameMeta) -> Result<FrameBundle, CliError> {
    let dir = frame_dir(root, meta.index);
    if !dir.is_dir() {
        return Err(CliError::Missing(dir));
    }
    let dims = |id: CameraId| {
        let c = calib.rig.camera(id).intrinsics;
        (c.width, c.height)
    };
    let stack = |id: CameraId| -> Result<GatedSliceStack, CliError> {
        let (w, h) = dims(id);
        let slices = (0..calib.profiles.len())
            .map(|k| read_checked(&dir.join(slice_name(id, k)), w, h))
            .collect::<Result<Vec<_>, _>>()?;
        let ambient_ref = read_checked(&dir.join(ambient_name(id)), w, h)?;
        Ok(GatedSliceStack { slices, profiles: calib.profiles.clone(), dark: calib.dark.clone(), ambient_ref })
    };
    let rccb = |id: CameraId, kind: &str| {
        let (w, h) = dims(id);
        read_checked(&dir.join(format!("rccb_{}_{kind}.png", side(id))), w, h)
    };
    let depth = |id: CameraId| {
        let (w, h) = dims(id);
        read_depth(&dir.join(gt_depth_name(id)), w, h)
    };
    let albedo = |id: CameraId| -> Result<Image, CliError> {
        let (w, h) = dims(id);
        let data = read_f32(&dir.join(gt_albedo_name(id)), w * h)?;
        Image::from_vec(w, h, 1, data).map_err(|e| CliError::Format(e.to_string()))
    };
    let per_camera = |f: &dyn Fn(CameraId) -> Result<DepthMap, CliError>| -> Result<PerCamera<DepthMap>, CliError> {
        Ok(PerCamera {
            gated_left: f(CameraId::GatedLeft)?,
            gated_right: f(CameraId::GatedRight)?,
            rccb_left: f(CameraId::RccbLeft)?,
            rccb_right: f(CameraId::RccbRight)?,
        })
    };
    let (gw, gh) = dims(CameraId::GatedLeft);
    Ok(FrameBundle {
        gated: Stereo { left: stack(CameraId::GatedLeft)?, right: stack(CameraId::GatedRight)? },
        rccb_rgb: Stereo { left: rccb(CameraId::RccbLeft, "rgb")?, right: rccb(CameraId::RccbRight, "rgb")? },
        rccb_raw: Stereo { left: rccb(CameraId::RccbLeft, "raw")?, right: rccb(CameraId::RccbRight, "raw")? },
        gt_depth: per_camera(&depth)?,
        gt_albedo: PerCamera {
            gated_left: albedo(CameraId::GatedLeft)?,
            gated_right: albedo(CameraId::GatedRight)?,
            rccb_left: albedo(CameraId::RccbLeft)?,
            rccb_right: albedo(CameraId::RccbRight)?,
        },
        sparse_lidar: read_depth(&dir.join(LIDAR_FILE), gw, gh)?,
        calib: calib.rig,
        delta_t: meta.delta_t,
        ambient_level: meta.ambient_level,
    })
}
