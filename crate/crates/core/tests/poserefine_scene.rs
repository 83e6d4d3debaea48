use xstereo::features::{extract_features, FeatureConfig};
use xstereo::gating::SensorNoise;
use xstereo::poserefine::{refine_pose, PoseProblem, PoseRefineConfig};
use xstereo::scenesim::{render_bundle, CameraId, FrameBundle, Primitive, RenderConfig, RigSpec, SceneSpec, Shape, Texture};

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

fn rig() -> RigSpec {
    let mut rig = RigSpec::standard(320, 160, 400.0, 3);
    rig.time_offset_truth = 0.02;
    rig.rig_velocity = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    rig
}

/// Translation (m) and rotation (deg) error of the refined target-to-source
/// transform, plus the size of the injected displacement.
fn pose_errors(b: &FrameBundle, t: CameraId, s: CameraId) -> (f64, f64, f64) {
    let rig = b.calib;
    let sc = |id: CameraId| FeatureConfig { scale: if id.is_gated() { 1 } else { 3 }, ..FeatureConfig::default() };
    let ft = extract_features(&b.intensity(t), &sc(t));
    let fs = extract_features(&b.intensity(s), &sc(s));
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
    (err.translation.norm(), err.angle().to_degrees(), injected)
}

#[test]
fn recovers_injected_offset_in_both_directions() {
    let cfg = RenderConfig { delta_t_jitter: 0.0, ..Default::default() };
    let b = render_bundle(&close_scene(), &rig(), &cfg).unwrap();
    for (t, s) in [(CameraId::GatedLeft, CameraId::RccbLeft), (CameraId::RccbLeft, CameraId::GatedLeft)] {
        let (te, re, injected) = pose_errors(&b, t, s);
        assert!((injected - 0.02).abs() < 1e-9);
        assert!(te < 0.1 * injected, "{t:?}->{s:?}: translation error {te}");
        assert!(re < 0.05, "{t:?}->{s:?}: rotation error {re} deg");
    }
}

/// Forward motion is barely observable on a distant street scene; refinement
/// must still not move the estimate away from the truth.
#[test]
fn street_scene_with_sensor_noise() {
    let cfg = RenderConfig {
        delta_t_jitter: 0.0,
        gated_noise: Some(SensorNoise { read_sigma: 0.002, shot_scale: 4000.0, seed: 5 }),
        rccb_noise: Some(SensorNoise { read_sigma: 0.003, shot_scale: 4000.0, seed: 6 }),
        ..Default::default()
    };
    let b = render_bundle(&SceneSpec::street(3, 1.0, 12), &rig(), &cfg).unwrap();
    let (te, re, injected) = pose_errors(&b, CameraId::GatedLeft, CameraId::RccbLeft);
    eprintln!("street: translation error {te:.5} m of {injected:.3} m, rotation {re:.4} deg");
    assert!(te < injected, "translation error {te}");
    assert!(re < 0.05, "rotation error {re} deg");
}
