use std::time::{Duration, Instant};

use xstereo::gating::{form_gated_slice, Ambient, GatedSliceStack, GatingConfig, SensorNoise};
use xstereo::tofdecode::{decode_depth, DecodeConfig};
use xstereo::{DepthMap, Image};

const W: usize = 320;
const H: usize = 160;

/// Depth ramps 10 → 160 m along x; albedo cycles through [0.2, 0.9] along y.
fn stack(read_sigma: Option<f64>) -> (GatedSliceStack, DepthMap, Image) {
    let depth = DepthMap::from_values(W, H, (0..W * H).map(|i| 10.0 + 150.0 * (i % W) as f64 / (W - 1) as f64).collect()).unwrap();
    let albedo = Image::from_fn(W, H, |_, y| 0.2 + 0.7 * ((y * 7) % H) as f64 / (H - 1) as f64);
    let g = GatingConfig::staggered(1.0);
    let ambient = 0.01;
    let slices = g
        .profiles
        .iter()
        .zip(&g.dark)
        .enumerate()
        .map(|(k, (p, &d))| {
            let noise = read_sigma.map(|s| SensorNoise::read_only(s, 100 + k as u64));
            form_gated_slice(&depth, &albedo, p, Ambient::Uniform(ambient), d, noise.as_ref()).unwrap()
        })
        .collect();
    let ambient_ref = Image::filled(W, H, 1, ambient);
    (GatedSliceStack { slices, profiles: g.profiles.clone(), dark: g.dark.clone(), ambient_ref }, depth, albedo)
}

fn mae_and_coverage(read_sigma: Option<f64>) -> (f64, f64, Duration) {
    let (s, gt, _) = stack(read_sigma);
    let t = Instant::now();
    let r = decode_depth(&s, &DecodeConfig { noise_sigma: read_sigma.unwrap_or(0.002), ..Default::default() }).unwrap();
    let elapsed = t.elapsed();
    let mut err = 0.0;
    let mut n = 0;
    for i in 0..gt.values.len() {
        if r.depth.mask[i] {
            err += (r.depth.values[i] - gt.values[i]).abs();
            n += 1;
        }
    }
    (err / n as f64, n as f64 / gt.values.len() as f64, elapsed)
}

#[test]
fn noiseless_ramp_is_recovered() {
    let (mae, coverage, elapsed) = mae_and_coverage(None);
    assert!(mae < 0.1, "MAE {mae}");
    assert!(coverage > 0.99, "coverage {coverage}");
    assert!(elapsed < Duration::from_secs(30));
}

#[test]
fn read_noise_stays_below_a_metre() {
    let (mae, coverage, elapsed) = mae_and_coverage(Some(0.002));
    eprintln!("noisy decode: MAE {mae:.3} m, coverage {:.1}%, {elapsed:?}", 100.0 * coverage);
    assert!(mae < 1.0, "MAE {mae}");
    assert!(coverage > 0.9, "coverage {coverage}");
    assert!(elapsed < Duration::from_secs(30));
}
