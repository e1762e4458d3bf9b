mod common;

use albedo_core::camera::{calibrate_camera_dlt, reprojection_rms, CalibrationOptions, CameraView};
use albedo_core::synth::random_rotation;
use albedo_core::Vec3;
use common::oracle_project;
use nalgebra::{Matrix3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_camera(rng: &mut impl Rng, distortion: [f64; 2]) -> CameraView {
    let f = rng.random_range(400.0..1500.0);
    let k = Matrix3::new(
        f,
        rng.random_range(-2.0..2.0),
        rng.random_range(300.0..340.0),
        0.0,
        f * rng.random_range(0.95..1.05),
        rng.random_range(220.0..260.0),
        0.0,
        0.0,
        1.0,
    );
    let r = random_rotation(rng);
    // the world origin sits 6 to 10 units in front of the camera
    let t = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(6.0..10.0));
    CameraView::new(k, r, t, distortion, (640, 480)).unwrap()
}

fn random_points(rng: &mut impl Rng, count: usize) -> Vec<Vec3> {
    (0..count)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

#[test]
fn projection_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let cam = random_camera(&mut rng, [-0.1, 0.02]);
    for p in random_points(&mut rng, 50) {
        let (px, _) = cam.project(&p);
        let (u, v) = oracle_project(cam.intrinsics(), cam.rotation(), cam.translation(), cam.distortion(), &p);
        assert!((px.x - u).abs() <= 1e-9 && (px.y - v).abs() <= 1e-9);
    }
}

#[test]
fn noiseless_dlt_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let cam = random_camera(&mut rng, [0.0, 0.0]);
        let p3 = random_points(&mut rng, 30);
        let p2: Vec<Vector2<f64>> = p3.iter().map(|p| cam.project(p).0).collect();
        let cal = calibrate_camera_dlt(&p3, &p2, cam.image_size(), CalibrationOptions::default()).unwrap();
        worst = worst.max(reprojection_rms(&cal.camera, &p3, &p2));
        let k_err = (cal.camera.intrinsics() - cam.intrinsics()).norm() / cam.intrinsics().norm();
        assert!(k_err <= 1e-6, "intrinsics relative error {k_err:e}");
        let p_est = cal.camera.projection_matrix();
        let p_true = cam.projection_matrix();
        let scale = p_true.norm() / p_est.norm();
        let sign = if (p_est * scale - p_true).norm() < (p_est * -scale - p_true).norm() { 1.0 } else { -1.0 };
        assert!((p_est * (sign * scale) - p_true).norm() <= 1e-6 * p_true.norm());
    }
    assert!(worst <= 1e-8, "worst reprojection {worst:e} px");
}

#[test]
fn distorted_dlt_with_refinement() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..10 {
        let cam = random_camera(&mut rng, [-0.1, 0.0]);
        let p3 = random_points(&mut rng, 40);
        let p2: Vec<Vector2<f64>> = p3.iter().map(|p| cam.project(p).0).collect();
        let options = CalibrationOptions {
            refine_distortion: true,
            max_iterations: 100,
            ..CalibrationOptions::default()
        };
        let cal = calibrate_camera_dlt(&p3, &p2, cam.image_size(), options).unwrap();
        let rms = reprojection_rms(&cal.camera, &p3, &p2);
        assert!(rms <= 1e-6, "refined reprojection {rms:e} px");
    }
}
