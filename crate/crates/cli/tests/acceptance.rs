//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xstereo::eval::{compute_metrics, Bucket, DEFAULT_BUCKETS};
use xstereo::features::{extract_features, FeatureConfig};
use xstereo::gating::{form_gated_slice, rip_eval, Ambient, GatedSliceStack, GatingConfig, RangeIntensityProfile, SensorNoise};
use xstereo::geometry::{build_warp, depth_to_disparity, disparity_to_depth, occlusion_mask, warp_image};
use xstereo::losses::{gated_reconstruction_loss, lidar_loss, photometric_lp, reprojection_loss};
use xstereo::matching::{correlation, fuse_features, search_offsets, AttentionFn, MatchMode};
use xstereo::poserefine::{refine_pose, residual_jacobian, PoseProblem, PoseRefineConfig};
use xstereo::scenesim::{render_bundle, CameraId, FrameBundle, PerCamera, Primitive, RenderConfig, RigSpec, SceneSpec, Shape, Texture};
use xstereo::tofdecode::{decode_depth, DecodeConfig};
use xstereo::{exp_twist, CameraModel, DepthMap, DisparityMap, Image};
use xstereo_cli::commands;
use xstereo_cli::config::{Config, Preset};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn quad_rip(p: &RangeIntensityProfile, z: f64) -> f64 {
    let arrival = 2.0 * z / p.c_light;
    let inside = |t: f64, a: f64, b: f64| if t > a && t < b { 1.0 } else { 0.0 };
    let f = |t: f64| inside(t, p.xi, p.xi + p.tau_g) * inside(t, arrival, arrival + p.tau_p);
    let lo = p.xi.min(arrival);
    let hi = (p.xi + p.tau_g).max(arrival + p.tau_p);
    let n = ((hi - lo) / 1e-9).ceil() as usize;
    let mut t: Vec<f64> = (0..=n).map(|i| lo + i as f64 * 1e-9).filter(|&t| t < hi).collect();
    t.extend([p.xi, p.xi + p.tau_g, arrival, arrival + p.tau_p, hi]);
    t.sort_by(f64::total_cmp);
    t.dedup();
    // Each panel is constant, so both trapezoid ends take the midpoint value.
    let overlap: f64 = t.windows(2).map(|w| f(0.5 * (w[0] + w[1])) * (w[1] - w[0])).sum();
    p.amplitude * p.attenuation(z) * overlap
}

fn rip_oracle() -> Outcome {
    let mut r = rng(1);
    let cases: Vec<(RangeIntensityProfile, f64)> = (0..1000)
        .map(|_| {
            let p = RangeIntensityProfile::new(r.random_range(0.0..1.5e-6), r.random_range(20e-9..900e-9), r.random_range(20e-9..900e-9), 1.0, 0.002);
            (p, r.random_range(1.0..250.0))
        })
        .collect();
    let t = Instant::now();
    let values: Vec<f64> = cases.iter().map(|(p, z)| rip_eval(p, *z).unwrap()).collect();
    let elapsed = t.elapsed();
    let worst = cases
        .iter()
        .zip(&values)
        .map(|((p, z), &v)| {
            let q = quad_rip(p, *z);
            let scale = v.abs().max(q.abs());
            if scale == 0.0 {
                0.0
            } else {
                (v - q).abs() / scale
            }
        })
        .fold(0.0, f64::max);
    let nonzero = values.iter().filter(|v| **v > 0.0).count();
    outcome(
        worst <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("max rel err {worst:.2e} over 1000 cases ({nonzero} inside support), {elapsed:.2?}"),
    )
}

fn gated_ramp(read_sigma: Option<f64>) -> (GatedSliceStack, DepthMap) {
    let (w, h) = (320, 160);
    let depth = DepthMap::from_values(w, h, (0..w * h).map(|i| 10.0 + 150.0 * (i % w) as f64 / (w - 1) as f64).collect()).unwrap();
    let albedo = Image::from_fn(w, h, |_, y| 0.2 + 0.7 * ((y * 7) % h) as f64 / (h - 1) as f64);
    let g = GatingConfig::staggered(1.0);
    let slices = g
        .profiles
        .iter()
        .zip(&g.dark)
        .enumerate()
        .map(|(k, (p, &d))| {
            let noise = read_sigma.map(|s| SensorNoise::read_only(s, 40 + k as u64));
            form_gated_slice(&depth, &albedo, p, Ambient::Uniform(0.01), d, noise.as_ref()).unwrap()
        })
        .collect();
    let stack = GatedSliceStack { slices, profiles: g.profiles.clone(), dark: g.dark.clone(), ambient_ref: Image::filled(w, h, 1, 0.01) };
    (stack, depth)
}

fn tof_inversion() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for (label, sigma, limit) in [("noiseless", None, 0.1), ("sigma 0.002", Some(0.002), 1.0)] {
        let (stack, gt) = gated_ramp(sigma);
        let t = Instant::now();
        let r = decode_depth(&stack, &DecodeConfig::default()).unwrap();
        let elapsed = t.elapsed();
        let (mut err, mut n) = (0.0, 0);
        for i in 0..gt.values.len() {
            if r.depth.mask[i] {
                err += (r.depth.values[i] - gt.values[i]).abs();
                n += 1;
            }
        }
        let mae = err / n as f64;
        let coverage = r.coverage();
        pass &= mae < limit && coverage > 0.9 && elapsed < Duration::from_secs(30);
        detail.push(format!("{label}: MAE {mae:.3} m, coverage {:.1}%, {elapsed:.2?}", 100.0 * coverage));
    }
    outcome(pass, detail.join("; "))
}

fn street_bundle(seed: u64, ambient: f64, noisy: bool) -> FrameBundle {
    let mut rig = RigSpec::standard(320, 160, 400.0, 3);
    rig.time_offset_truth = 0.02;
    rig.rig_velocity = [0.0, 0.0, 0.0, 0.0, 0.0, 10.0];
    let noise = |read_sigma, s| noisy.then_some(SensorNoise { read_sigma, shot_scale: 4000.0, seed: s });
    let cfg = RenderConfig {
        gated_noise: noise(0.002, seed + 1),
        rccb_noise: noise(0.003, seed + 2),
        delta_t_jitter: 0.0,
        seed,
        ..Default::default()
    };
    render_bundle(&SceneSpec::street(seed, ambient, 12), &rig, &cfg).unwrap()
}

fn geometry() -> Outcome {
    let mut r = rng(3);
    let b = 0.76;
    // z = b f / d and its inverse.
    let mut inv = 0.0f64;
    for _ in 0..1000 {
        let (d, f) = (r.random_range(0.05..300.0), r.random_range(100.0..3000.0));
        let z = disparity_to_depth(&DisparityMap::constant(1, 1, d), b, f).values[0];
        inv = inv.max((z - b * f / d).abs() / z);
        let back = depth_to_disparity(&DepthMap::constant(1, 1, z), b, f).values[0];
        inv = inv.max((back - d).abs() / d);
    }
    // Left -> right -> left warp on a fronto-parallel plane; z chosen for a 10 px shift.
    let cam = CameraModel::centered(400.0, 64, 32);
    let z = b * 400.0 / 10.0;
    let depth = DepthMap::constant(64, 32, z);
    let x_rl = xstereo::RigidTransform::from_translation(nalgebra::Vector3::new(-b, 0.0, 0.0));
    let fwd = build_warp(&depth, &x_rl, &cam, &cam);
    let back = build_warp(&depth, &x_rl.invert(), &cam, &cam);
    let mut round = 0.0f64;
    for y in 0..32 {
        for x in 12..52 {
            let c = fwd.coords[y * 64 + x];
            round = round.max(((c.x - x as f64).abs() - 10.0).abs()).max((c.y - y as f64).abs());
            let (u, v) = (c.x.round() as usize, c.y.round() as usize);
            let c2 = back.coords[v * 64 + u];
            round = round.max((c2.x - x as f64).abs() + (c2.y - y as f64).abs());
        }
    }
    // Cross-spectral warp of RCCB into the gated frame.
    let bundle = street_bundle(21, 1.0, false);
    let rig = bundle.calib.with_actual_poses();
    let (t, s) = (CameraId::GatedLeft, CameraId::RccbLeft);
    let x = rig.transform(t, s);
    let (ct, cs) = (rig.camera(t).intrinsics, rig.camera(s).intrinsics);
    let field = build_warp(bundle.gt_depth.get(t), &x, &cs, &ct);
    let (warped, valid) = warp_image(bundle.gt_albedo.get(s), &field);
    let occ = occlusion_mask(bundle.gt_depth.get(t), bundle.gt_depth.get(s), &x, &cs, &ct, 0.3);
    let idx: Vec<usize> = (0..valid.len()).filter(|&i| valid[i] && !occ[i]).collect();
    let mae = idx.iter().map(|&i| (warped.data[i] - bundle.gt_albedo.get(t).data[i]).abs()).sum::<f64>() / idx.len() as f64;
    outcome(
        inv <= 1e-6 && round <= 1e-6 && mae < 0.02,
        format!("inversion rel err {inv:.1e}, warp round trip {round:.1e} px, cross-spectral MAE {mae:.4} on {} px", idx.len()),
    )
}

fn textured(w: usize, h: usize, shift: f64) -> Image {
    let f = move |x: f64, y: f64| 0.5 + 0.2 * (0.31 * (x + shift)).sin() * (0.17 * y).cos() + 0.15 * (0.11 * (x + shift) + 0.23 * y).sin();
    let mut img = Image::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            img.set(x, y, 0, f(xf, yf));
            img.set(x, y, 1, 0.5 * (f(xf + 1.0, yf) - f(xf - 1.0, yf)));
            img.set(x, y, 2, 0.5 * (f(xf, yf + 1.0) - f(xf, yf - 1.0)));
        }
    }
    img
}

fn close_scene() -> SceneSpec {
    let tex = |s: f64| Texture::ValueNoise { scale: s, lo: 0.15, hi: 0.75 };
    SceneSpec {
        primitives: vec![
            Primitive { shape: Shape::Plane { point: [0.0, 0.0, 12.0], normal: [0.0, 0.0, -1.0] }, texture: tex(0.4) },
            Primitive { shape: Shape::Plane { point: [0.0, 1.6, 0.0], normal: [0.0, -1.0, 0.0] }, texture: tex(0.3) },
            Primitive { shape: Shape::Sphere { center: [-1.5, 0.0, 5.0], radius: 0.9 }, texture: tex(0.2) },
            Primitive { shape: Shape::Cuboid { min: [1.0, -1.0, 6.0], max: [2.5, 1.6, 7.0] }, texture: tex(0.25) },
            Primitive { shape: Shape::Sphere { center: [0.3, -0.8, 8.5], radius: 0.7 }, texture: tex(0.2) },
        ],
        ambient_level: 1.0,
        seed: 7,
    }
}

fn pose_refinement() -> Outcome {
    let mut rig = RigSpec::standard(320, 160, 400.0, 3);
    rig.time_offset_truth = 0.02;
    rig.rig_velocity = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    let b = render_bundle(&close_scene(), &rig, &RenderConfig { delta_t_jitter: 0.0, ..Default::default() }).unwrap();
    let (t, s) = (CameraId::GatedLeft, CameraId::RccbLeft);
    let ft = extract_features(&b.intensity(t), &FeatureConfig { scale: 1, ..Default::default() });
    let fs = extract_features(&b.intensity(s), &FeatureConfig { scale: 3, ..Default::default() });
    let x_init = rig.transform(t, s);
    let x_true = rig.actual_pose(s).invert().compose(&rig.actual_pose(t));
    let prob = PoseProblem {
        f_target: &ft,
        f_src: &fs,
        depth_target: b.gt_depth.get(t),
        cam_src: &rig.camera(s).intrinsics,
        cam_target: &rig.camera(t).intrinsics,
    };
    let out = refine_pose(&prob, &x_init, b.delta_t, &PoseRefineConfig::default()).unwrap();
    let err = out.transform.invert().compose(&x_true);
    let injected = x_init.invert().compose(&x_true).translation.norm();
    let (te, re) = (err.translation.norm(), err.angle().to_degrees());
    let identity = refine_pose(&prob, &x_init, 0.0, &PoseRefineConfig::default()).unwrap();

    // Analytic Jacobian against central differences.
    let cam = CameraModel::centered(80.0, 64, 48);
    let (a, c) = (textured(64, 48, 0.0), textured(64, 48, 0.37));
    let depth = DepthMap::from_values(64, 48, (0..64 * 48).map(|i| 6.0 + (i % 7) as f64 * 0.3).collect()).unwrap();
    let p2 = PoseProblem { f_target: &a, f_src: &c, depth_target: &depth, cam_src: &cam, cam_target: &cam };
    let x = exp_twist(&Vector6::new(0.003, -0.002, 0.001, 0.013, -0.021, 0.05));
    let (dt, h) = (0.02, 1e-6);
    let mut jac = 0.0f64;
    for &(px, py) in &[(20usize, 17usize), (33, 25), (41, 9), (12, 30)] {
        let base = residual_jacobian(&p2, &x, dt, px, py).unwrap();
        for k in 0..6 {
            let mut e = Vector6::zeros();
            e[k] = h;
            let plus = residual_jacobian(&p2, &x.compose(&exp_twist(&(e * dt))), dt, px, py).unwrap();
            let minus = residual_jacobian(&p2, &x.compose(&exp_twist(&(-e * dt))), dt, px, py).unwrap();
            for ch in 0..3 {
                let fd = (plus[ch].0 - minus[ch].0) / (2.0 * h);
                let an = base[ch].1[k];
                jac = jac.max((fd - an).abs() / an.abs().max(1e-3));
            }
        }
    }
    outcome(
        te <= 0.1 * injected && re < 0.05 && jac <= 1e-4 && identity.transform == x_init && identity.iterations == 0,
        format!(
            "translation err {:.2} mm of {:.1} mm, rotation err {re:.4} deg, Jacobian rel err {jac:.1e}, delta_t=0 identity {}",
            te * 1e3,
            injected * 1e3,
            identity.transform == x_init
        ),
    )
}

fn random_image(r: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
    Image::from_vec(w, h, c, (0..w * h * c).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap()
}

fn fusion_algebra() -> Outcome {
    let mut r = rng(5);
    let au = AttentionFn::unary_default();
    let am = AttentionFn::Parametric { gain_global: vec![0.7], gain_local: vec![-1.3], bias: vec![0.4] };
    let (mut degen, mut bound) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (g, c) = (random_image(&mut r, 6, 5, 3), random_image(&mut r, 6, 5, 3));
        let (wg, wc) = (au.apply(&g), au.apply(&c));
        let one = fuse_features(&g, &c, &au, &AttentionFn::Constant { value: 1.0 }).unwrap();
        let zero = fuse_features(&g, &c, &au, &AttentionFn::Constant { value: 0.0 }).unwrap();
        let out = fuse_features(&g, &c, &au, &am).unwrap();
        for i in 0..g.data.len() {
            let (ug, uc) = (g.data[i] * wg.data[i], c.data[i] * wc.data[i]);
            degen = degen.max((one.data[i] - ug).abs()).max((zero.data[i] - uc).abs());
            bound = bound.max(ug.min(uc) - out.data[i]).max(out.data[i] - ug.max(uc));
        }
    }
    outcome(degen <= 1e-12 && bound <= 1e-12, format!("degeneracy err {degen:.1e}, bound violation {:.1e} over 1000 pairs", bound.max(0.0)))
}

fn correlation_check() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (l, rr) = (random_image(&mut r, 11, 7, 3), random_image(&mut r, 11, 7, 3));
        let offs: Vec<(i32, i32)> = (0..6).map(|_| (r.random_range(-5..=5), r.random_range(-3..=3))).collect();
        let vol = correlation(&l, &rr, &offs).unwrap();
        for y in 0..7 {
            for x in 0..11 {
                for (k, &(f, g)) in offs.iter().enumerate() {
                    let mut s = 0.0;
                    for c in 0..3 {
                        let (sx, sy) = (x as i32 + f, y as i32 + g);
                        if (0..11).contains(&sx) && (0..7).contains(&sy) {
                            s += l.get(x, y, c) * rr.get(sx as usize, sy as usize, c);
                        }
                    }
                    worst = worst.max((vol.at(x, y)[k] - s / 3.0).abs());
                }
            }
        }
    }
    let one_d: Vec<(i32, i32)> = (-4..=4).map(|f| (f, 0)).collect();
    let two_d: Vec<(i32, i32)> = (-2..=2).flat_map(|g| (-2..=2).map(move |f| (f, g))).collect();
    let schedule = search_offsets(1, 4) == one_d && search_offsets(3, 4) == one_d && search_offsets(2, 4) == two_d && search_offsets(4, 4) == two_d;
    outcome(worst <= 1e-9 && schedule, format!("max err vs naive loop {worst:.1e}, 2D-1D offset sets exact: {schedule}"))
}

fn loss_scenes() -> Vec<(&'static str, SceneSpec)> {
    let tex = |s: f64| Texture::ValueNoise { scale: s, lo: 0.2, hi: 0.8 };
    vec![
        ("plane", SceneSpec { primitives: vec![Primitive { shape: Shape::Plane { point: [0.0, 0.0, 20.0], normal: [0.0, 0.0, -1.0] }, texture: tex(4.0) }], ambient_level: 0.5, seed: 3 }),
        (
            "boxes",
            SceneSpec {
                primitives: vec![
                    Primitive { shape: Shape::Plane { point: [0.0, 0.0, 40.0], normal: [0.0, 0.0, -1.0] }, texture: tex(0.8) },
                    Primitive { shape: Shape::Cuboid { min: [-1.0, -1.0, 15.0], max: [1.5, 1.0, 16.0] }, texture: tex(0.3) },
                ],
                ambient_level: 0.5,
                seed: 5,
            },
        ),
        ("street", SceneSpec::street(8, 0.5, 8)),
    ]
}

fn losses() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, scene) in loss_scenes() {
        let rig = RigSpec::standard(96, 48, 120.0, 3);
        let b = render_bundle(&scene, &rig, &RenderConfig { gated_noise: None, rccb_noise: None, ..Default::default() }).unwrap();
        let actual = b.calib.with_actual_poses();
        let img = b.intensity(CameraId::GatedLeft);
        let lp0 = photometric_lp(&img, &img, None).unwrap();
        let lp1 = photometric_lp(&img, &img.map(|v| v + 0.05), None).unwrap();
        let lp2 = photometric_lp(&img, &img.map(|v| v + 0.2), None).unwrap();
        let rep0 = reprojection_loss(&b, &b.gt_depth, &actual).unwrap();
        let scaled = |s: f64| PerCamera::from_fn(|id| {
            let mut d = b.gt_depth.get(id).clone();
            d.values.iter_mut().for_each(|v| *v *= s);
            d
        });
        let rep1 = reprojection_loss(&b, &scaled(1.5), &actual).unwrap();
        let stack = &b.gated.left;
        let z = b.gt_depth.get(CameraId::GatedLeft);
        let alb = b.gt_albedo.get(CameraId::GatedLeft);
        let mask = vec![true; z.values.len()];
        let rec = |dz: f64| {
            let mut m = z.clone();
            m.values.iter_mut().for_each(|v| *v += dz);
            gated_reconstruction_loss(stack, &m, alb, &stack.ambient_ref, &mask).unwrap()
        };
        let (r0, r1, r5) = (rec(0.0), rec(1.0), rec(5.0));
        let gt = depth_to_disparity(z, 0.76, 120.0);
        let shift = |e: f64| {
            let mut d = gt.clone();
            d.values.iter_mut().for_each(|v| *v += e);
            d
        };
        let l0 = lidar_loss(&[gt.clone(), gt.clone()], &gt, 0.9).unwrap();
        let l1 = lidar_loss(&[shift(0.2)], &gt, 0.9).unwrap();
        let l2 = lidar_loss(&[shift(0.2), shift(0.2)], &gt, 0.9).unwrap();
        let l3 = lidar_loss(&[shift(0.8)], &gt, 0.9).unwrap();
        let zero = lp0.abs() < 1e-12 && r0.abs() < 1e-9 && l0 == 0.0;
        let mono = lp0 < lp1 && lp1 < lp2 && rep0 < rep1 && r0 < r1 && r1 < r5 && l1 < l3;
        let closed = (l2 - 1.9 * l1).abs() <= 1e-12;
        ok &= zero && mono && closed;
        notes.push(format!("{name}: zero {zero} monotone {mono} 1.9L {closed} (reprojection {rep0:.1e} -> {rep1:.1e})"));
    }
    outcome(ok, notes.join("; "))
}

fn metrics() -> Outcome {
    let mut r = rng(8);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = 40;
        let gt: Vec<f64> = (0..n).map(|_| r.random_range(1.0..219.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|z| z * r.random_range(0.5..1.8)).collect();
        let m = compute_metrics(&DepthMap::from_values(n, 1, pred.clone()).unwrap(), &DepthMap::from_values(n, 1, gt.clone()).unwrap(), Bucket::new(0.0, 220.0)).unwrap();
        let k = n as f64;
        let rmse = (gt.iter().zip(&pred).map(|(z, p)| (p - z).powi(2)).sum::<f64>() / k).sqrt();
        let mae = gt.iter().zip(&pred).map(|(z, p)| (p - z).abs()).sum::<f64>() / k;
        let ard = gt.iter().zip(&pred).map(|(z, p)| (p - z).abs() / z).sum::<f64>() / k;
        worst = worst.max((m.rmse - rmse).abs()).max((m.mae - mae).abs()).max((m.ard - ard).abs());
        for i in 0..3 {
            let th = 1.25f64.powi(i as i32 + 1);
            let d = 100.0 * gt.iter().zip(&pred).filter(|(z, p)| (*p / *z).max(*z / *p) < th).count() as f64 / k;
            worst = worst.max((m.delta[i] - d).abs());
        }
    }
    let gt = DepthMap::from_values(16, 1, (0..16).map(|i| 10.0 + 12.0 * i as f64).collect()).unwrap();
    let mut pred = gt.clone();
    pred.values.iter_mut().for_each(|v| *v *= 1.3);
    let m = compute_metrics(&pred, &gt, Bucket::new(0.0, 220.0)).unwrap();
    let ratio = (m.ard - 0.3).abs() < 1e-12 && m.delta[0] == 0.0 && m.delta[1] == 100.0;
    outcome(worst <= 1e-10 && ratio, format!("max err vs scalar oracle {worst:.1e}; 1.3 case ARD {:.12} d1 {} d2 {}", m.ard, m.delta[0], m.delta[1]))
}

fn trend(report: &commands::BenchmarkReport, elapsed: Duration) -> (Outcome, Vec<String>) {
    let [b160, b220, far] = DEFAULT_BUCKETS;
    let mae = |p, m, b| report.mae(p, m, b).unwrap_or(f64::NAN);
    let mut lines = Vec::new();
    for p in [Preset::Night, Preset::Day] {
        let row: Vec<String> = MatchMode::ALL
            .iter()
            .map(|&m| format!("{} {:.2}/{:.2}/{:.2}", m.name(), mae(p, m, b160), mae(p, m, b220), mae(p, m, far)))
            .collect();
        lines.push(format!("{} MAE (0-160/0-220/100-220 m): {}", p.name(), row.join(", ")));
    }
    let a = mae(Preset::Night, MatchMode::GatedOnly, b220) < mae(Preset::Night, MatchMode::RccbOnly, b220);
    let b = mae(Preset::Day, MatchMode::RccbOnly, b220) < mae(Preset::Day, MatchMode::GatedOnly, b220);
    let mut c = true;
    let mut d = true;
    for p in [Preset::Night, Preset::Day] {
        let gain = |bk| mae(p, MatchMode::GatedOnly, bk).min(mae(p, MatchMode::RccbOnly, bk)) - mae(p, MatchMode::Fused, bk);
        let (g160, g220, gfar) = (gain(b160), gain(b220), gain(far));
        let cp = g160 >= 0.0 && g220 >= 0.0 && gfar >= 0.0;
        let dp = gfar > g160 && gfar > g220;
        c &= cp;
        d &= dp;
        lines.push(format!(
            "{}: fused gain over best single {g160:.2}/{g220:.2}/{gfar:.2} m -> (c) {} (d) {}",
            p.name(),
            if cp { "pass" } else { "FAIL" },
            if dp { "pass" } else { "FAIL" }
        ));
    }
    let fast = elapsed < Duration::from_secs(600);
    let verdict = |x: bool| if x { "pass" } else { "FAIL" };
    let detail = format!(
        "(a) night gated<rccb {} (b) day rccb<gated {} (c) fused<=min {} (d) largest gain at 100-220 m {} runtime {:.0} s {}",
        verdict(a),
        verdict(b),
        verdict(c),
        verdict(d),
        elapsed.as_secs_f64(),
        verdict(fast)
    );
    (outcome(a && b && c && d && fast, detail), lines)
}

fn tree(root: &Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(tmp: &Path) -> Outcome {
    let cfg = Config::parse("seed = 77\n[sim]\nframes = 2\nwidth = 96\nheight = 48\nfocal = 120.0\nsupersample = 1\nobjects = 6\n").unwrap();
    let run = |threads: usize, name: &str| {
        let dir = tmp.join(name);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            commands::simulate(&cfg, Preset::Night, &dir.join("sim")).unwrap();
            commands::benchmark(&cfg, &dir.join("bench")).unwrap();
        });
        tree(&dir)
    };
    let (a, b) = (run(1, "t1"), run(4, "t4"));
    let same = a == b;
    outcome(same && !a.is_empty(), format!("{} files compared across 1 and 4 threads, identical: {same}", a.len()))
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut push = |n, name, o: Outcome| {
        println!("[{}] criterion {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    push(1, "RIP oracle", rip_oracle());
    push(2, "ToF inversion", tof_inversion());
    push(3, "geometry", geometry());
    push(4, "pose refinement", pose_refinement());
    push(5, "fusion algebra", fusion_algebra());
    push(6, "correlation", correlation_check());
    push(7, "losses", losses());
    push(8, "metrics", metrics());

    let cfg = Config::default();
    let t = Instant::now();
    let report = commands::benchmark(&cfg, &tmp.path().join("benchmark")).unwrap();
    let (o, lines) = trend(&report, t.elapsed());
    for l in lines {
        println!("      {l}");
    }
    push(9, "end-to-end trend (10 frames)", o);
    push(10, "determinism", determinism(tmp.path()));

    // The end-to-end trend is reported rather than enforced; every other
    // criterion must hold.
    let enforced_failures: Vec<u32> = results.iter().filter(|(n, _, o)| !o.pass && *n != 9).map(|(n, _, _)| *n).collect();
    let passed = results.iter().filter(|(_, _, o)| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if !enforced_failures.is_empty() {
        eprintln!("failing criteria: {enforced_failures:?}");
        std::process::exit(1);
    }
}
