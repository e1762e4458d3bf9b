//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use albedo_core::camera::{calibrate_camera_dlt, CalibrationOptions, CameraView};
use albedo_core::color::*;
use albedo_core::gradient::{apply_gradient, build_gradient_operator};
use albedo_core::inpaint::{hybrid_inpaint, VertexMask};
use albedo_core::model::*;
use albedo_core::poisson::stitch;
use albedo_core::raster::render_vertex_colors;
use albedo_core::render::{albedo_mse, fit_albedo_ambient, shade, FitOptions, Illumination, ShadingParams};
use albedo_core::sampling::{sample_view, SamplingOptions};
use albedo_core::synth::{icosphere, look_at_camera, random_mask, random_mesh, random_rotation, ProceduralAlbedo};
use albedo_core::visibility::compute_visibility;
use albedo_core::{Error, TriangleMesh, Vec3, VertexSignal};
use common::*;
use nalgebra::{DMatrix, Matrix3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn main() {
    let checks: Vec<(&str, fn() -> Verdict)> = vec![
        ("poisson oracle equivalence", poisson_oracle),
        ("offset invariance", offset_invariance),
        ("end-to-end synthetic reproduction", end_to_end),
        ("colour calibration", colour_calibration),
        ("pca suite", pca_suite),
        ("loo curve", loo_curve),
        ("gradient operator", gradient_operator),
        ("dlt calibration", dlt_calibration),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.2} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn poisson_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let (mut stitched, mut inpainted) = (0, 0);
    let (mut worst, mut slowest) = (0.0f64, 0.0f64);
    while stitched < 20 || inpainted < 20 {
        let mesh = random_mesh(&mut rng, 200);
        let n = mesh.n_vertices();
        if stitched < 20 {
            let views = random_views(&mesh, rng.random_range(2..=3), &mut rng);
            let lambda = rng.random_range(0.05..1.0);
            let t = Instant::now();
            match stitch(&mesh, &views, 1, lambda) {
                Err(Error::NoReferenceCoverage(_)) => {}
                r => {
                    let out = r.unwrap();
                    slowest = slowest.max(t.elapsed().as_secs_f64());
                    worst = worst.max(rel_err(&to_matrix(&out), &oracle_stitch(&mesh, &views, 1, lambda)));
                    stitched += 1;
                }
            }
        }
        if inpainted < 20 {
            let gen = ProceduralAlbedo::new(&mesh, 6, rng.random());
            let subjects: Vec<VertexSignal> = gen.subjects(8, rng.random()).into_iter().map(|s| s.0).collect();
            let model = build_pca(&subjects, 4, None).unwrap();
            let x = random_signal(n, 3, &mut rng);
            let mask = VertexMask::new(random_mask(n, rng.random_range(0.05..0.3), &mut rng));
            let t = Instant::now();
            let out = hybrid_inpaint(&mesh, &x, &mask, &model).unwrap();
            slowest = slowest.max(t.elapsed().as_secs_f64());
            worst = worst.max(rel_err(&to_matrix(&out), &oracle_hybrid(&mesh, &x, &mask, &model)));
            inpainted += 1;
        }
    }
    verdict(
        worst <= 1e-8 && slowest <= 1.0,
        format!("{stitched} stitch + {inpainted} inpaint instances, max relative error {worst:.2e} (<= 1e-8), slowest {slowest:.3} s (<= 1 s)"),
    )
}

fn offset_invariance() -> Verdict {
    let t = Instant::now();
    let mesh = icosphere(4, 1.0);
    let n = mesh.n_vertices();
    let texture = VertexSignal::from_fn(n, 3, |i, c| {
        let p = mesh.vertices()[i];
        0.5 + 0.2 * p.x + 0.1 * (c as f64 + 1.0) * p.y * p.z
    });
    let views: Vec<_> = [Vec3::new(0.6, 0.0, 1.0), Vec3::new(-0.6, 0.1, 1.0)]
        .iter()
        .map(|d| {
            let cam = look_at_camera(d.normalize(), 4.0, 300.0, (256, 256));
            let image = render_vertex_colors(&mesh, &cam, &texture, [0.0; 3]).unwrap().image;
            let vis = compute_visibility(&mesh, &cam);
            sample_view(&mesh, &cam, &image, &vis, &SamplingOptions::default()).unwrap()
        })
        .collect();
    let a = stitch(&mesh, &views, 1, 0.1).unwrap();
    let mut moved = views.clone();
    moved[1].colors = VertexSignal::from_fn(n, 3, |i, c| views[1].colors.get(i, c) + [0.3, -0.2, 0.7][c]);
    let b = stitch(&mesh, &moved, 1, 0.1).unwrap();
    let diff = a.max_abs_diff(&b);
    let secs = t.elapsed().as_secs_f64();
    verdict(
        n == 2562 && diff <= 1e-7 && secs <= 5.0,
        format!("{n} vertices, max change {diff:.2e} (<= 1e-7), {secs:.2} s (<= 5 s)"),
    )
}

fn end_to_end() -> Verdict {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mesh = icosphere(3, 1.0);
    let n = mesh.n_vertices();
    let gen = ProceduralAlbedo::new(&mesh, 6, 2024);
    let subjects = gen.subjects(20, 2025);
    let (gd, gs): (Vec<_>, Vec<_>) = subjects.iter().cloned().unzip();
    let truth_model = build_paired(&gd, &gs, 6, Variant::Independent, None).unwrap();
    let truth: Vec<(VertexSignal, VertexSignal)> = subjects
        .iter()
        .map(|(d, s)| {
            let b = fit_coefficients(&truth_model.diffuse, d, None).unwrap();
            (generate(&truth_model.diffuse, b.as_slice()).unwrap(), s.clone())
        })
        .collect();
    let (train, test) = truth.split_at(14);

    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    let masks: Vec<VertexMask> = (0..train.len()).map(|_| VertexMask::new(random_mask(n, 0.05, &mut rng))).collect();
    let capture: Vec<CaptureSubject> = train
        .iter()
        .zip(&masks)
        .enumerate()
        .map(|(k, ((d, s), m))| CaptureSubject {
            id: format!("s{k:02}"),
            diffuse: d,
            specular: s,
            mask: Some(m),
        })
        .collect();
    let manifest = write_capture_set(dir.path(), &mesh, &capture, &cube_directions(), 6, "transferred", 1);
    let outcome = albedo_core::pipeline::run_pipeline(&albedo_core::pipeline::PipelineManifest::load(&manifest).unwrap()).unwrap();
    let model = outcome.model.unwrap();

    let light = Illumination::ambient([0.95, 1.0, 0.9]).unwrap();
    let cams: Vec<CameraView> = cube_directions()
        .iter()
        .map(|d| look_at_camera(*d, 4.0, 300.0, (256, 256)))
        .collect();
    let mut lines = Vec::new();
    let mut pass = outcome.report.failures == 0;
    let mut worst = 0.0f64;
    for (k, (d, s)) in test.iter().enumerate() {
        let shaded = shade(&mesh, d, s, &light, &Vec3::z(), &ShadingParams::default()).unwrap();
        let views: Vec<_> = cams
            .iter()
            .map(|cam| {
                let image = render_vertex_colors(&mesh, cam, &shaded, [0.0; 3]).unwrap().image;
                sample_view(&mesh, cam, &image, &compute_visibility(&mesh, cam), &SamplingOptions::default()).unwrap()
            })
            .collect();
        let observed = stitch(&mesh, &views, 1, 0.1).unwrap();
        let fit = fit_albedo_ambient(&observed, &mesh, &model, &FitOptions::default()).unwrap();
        let (est, _) = model.generate_pair(&fit.coefficients).unwrap();
        let fitted = albedo_mse(&est, d, None).unwrap();
        let baseline = albedo_mse(&model.diffuse.mean_signal(), d, None).unwrap();
        pass &= fitted < baseline && fitted <= 1e-3;
        worst = worst.max(fitted);
        lines.push(format!("t{k}: {fitted:.2e} vs {baseline:.2e}"));
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs <= 120.0;
    verdict(
        pass,
        format!(
            "fitted vs mean-baseline MSE [{}], worst fitted {worst:.2e} (<= 1e-3), {secs:.1} s (<= 120 s)",
            lines.join(", ")
        ),
    )
}

fn random_sensitivity(rng: &mut impl Rng, grid: &[f64]) -> SpectralSensitivity {
    let channels = DMatrix::from_fn(grid.len(), 3, |i, c| {
        (-((grid[i] - [600.0, 540.0, 460.0][c]) / 40.0).powi(2)).exp() + rng.random_range(0.0..0.3)
    });
    SpectralSensitivity::new(grid.to_vec(), channels).unwrap()
}

fn colour_calibration() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let grid = default_grid();
    let cie = SpectralSensitivity::cie1931().unwrap().resample(&grid).unwrap();
    let (mut rows, mut white) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let c = random_sensitivity(&mut rng, &grid);
        let m = raw_to_xyz_transform(&c, &cie).unwrap().matrix;
        for r in 0..3 {
            rows = rows.max((m.row(r).sum() - 1.0).abs());
        }
        let e = SpectralCurve::new(grid.clone(), grid.iter().map(|_| rng.random_range(0.2..2.0)).collect()).unwrap();
        let w = channel_response(&c, &e).unwrap();
        for v in white_balance_transform(&c, &e).unwrap().apply_rgb([w[0], w[1], w[2]]) {
            white = white.max((v - 1.0).abs());
        }
    }
    let flat = SpectralCurve::new(grid.clone(), vec![1.0; grid.len()]).unwrap();
    let composed = compose_calibration(&cie, &flat, &cie).unwrap().matrix;
    let sums = cie.channels().row_sum();
    let balanced = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0 / sums[0], 1.0 / sums[1], 1.0 / sums[2]));
    let expect = xyz_to_srgb_transform().matrix * balanced;
    let selfcal = (composed - expect).amax() / expect.amax();
    let secs = t.elapsed().as_secs_f64();
    verdict(
        rows <= 1e-12 && white <= 1e-12 && selfcal <= 1e-12 && secs <= 1.0,
        format!("row sums {rows:.1e}, white point {white:.1e}, self-calibration {selfcal:.1e} (all <= 1e-12), {secs:.3} s (<= 1 s)"),
    )
}

fn noisy(s: &VertexSignal, amp: f64, rng: &mut impl Rng) -> VertexSignal {
    VertexSignal::from_fn(s.n(), s.channels(), |i, c| s.get(i, c) + amp * rng.random_range(-1.0..1.0))
}

fn pca_suite() -> Verdict {
    let t = Instant::now();
    let mesh = icosphere(1, 1.0);
    let sym = mesh.symmetry().unwrap().clone();
    let gen = ProceduralAlbedo::new(&mesh, 6, 1);
    let diffuse: Vec<VertexSignal> = gen.subjects(73, 2).into_iter().map(|s| s.0).collect();
    let sym_model = build_pca(&diffuse, 10, Some(&sym)).unwrap();
    let count = sym_model.training_samples();

    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let d: Vec<VertexSignal> = (0..15).map(|_| random_signal(40, 3, &mut rng)).collect();
    let s: Vec<VertexSignal> = (0..15).map(|_| random_signal(40, 3, &mut rng)).collect();
    let orth = |p: &DMatrix<f64>| (p.transpose() * p - DMatrix::identity(p.ncols(), p.ncols())).amax();
    let mut ortho = orth(sym_model.components());
    let mut exact = 0.0f64;
    for v in Variant::ALL {
        let m = build_paired(&d, &s, 14, v, None).unwrap();
        let (pd, ps) = (m.diffuse.components(), m.specular.components());
        ortho = ortho.max(match v {
            Variant::Independent => orth(pd).max(orth(ps)),
            Variant::Concatenated => {
                let mut stacked = DMatrix::zeros(pd.nrows() + ps.nrows(), pd.ncols());
                stacked.rows_mut(0, pd.nrows()).copy_from(pd);
                stacked.rows_mut(pd.nrows(), ps.nrows()).copy_from(ps);
                orth(&stacked)
            }
            Variant::Transferred => orth(pd),
        });
        if v == Variant::Transferred {
            for (a, b) in d.iter().zip(&s) {
                exact = exact.max(m.reconstruct_specular(a, b, None).unwrap().max_abs_diff(b));
            }
        } else {
            exact = exact.max(training_reconstruction_error(&m, &d, &s, None).unwrap());
        }
    }

    let mut ordered = 0;
    for seed in 0..10 {
        let gen = ProceduralAlbedo::new(&mesh, 8, seed);
        let subjects = gen.subjects(15, 200 + seed);
        let d: Vec<VertexSignal> = subjects.iter().map(|x| noisy(&x.0, 0.01, &mut rng)).collect();
        let s: Vec<VertexSignal> = subjects.iter().map(|x| noisy(&x.1, 0.01, &mut rng)).collect();
        let err = |v| training_reconstruction_error(&build_paired(&d, &s, 5, v, None).unwrap(), &d, &s, None).unwrap();
        let (i, c, tr) = (err(Variant::Independent), err(Variant::Concatenated), err(Variant::Transferred));
        if i <= c && c <= tr {
            ordered += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        count == 146 && ortho <= 1e-10 && exact <= 1e-8 && ordered == 10 && secs <= 30.0,
        format!(
            "73 subjects -> {count} samples, P^T P - I {ortho:.1e} (<= 1e-10), full-rank reconstruction {exact:.1e} (<= 1e-8), \
             independent <= concatenated <= transferred on {ordered}/10 datasets, {secs:.2} s (<= 30 s)"
        ),
    )
}

fn albedo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_albedo"))
}

fn loo_curve() -> Verdict {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mesh = icosphere(1, 1.0);
    let gen = ProceduralAlbedo::new(&mesh, 8, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    let subjects = gen.subjects(12, 6);
    let d: Vec<VertexSignal> = subjects.iter().map(|s| noisy(&s.0, 0.005, &mut rng)).collect();
    let s: Vec<VertexSignal> = subjects.iter().map(|s| noisy(&s.1, 0.005, &mut rng)).collect();
    for (sub, maps) in [("diffuse", &d), ("specular", &s)] {
        std::fs::create_dir_all(dir.path().join(sub)).unwrap();
        for (k, m) in maps.iter().enumerate() {
            m.save(dir.path().join(sub).join(format!("s{k:02}.vsig"))).unwrap();
        }
    }
    let ds: Vec<usize> = (0..=10).collect();
    let curve = loo_generalisation(&d, &s, Variant::Independent, &ds, None).unwrap();
    let monotone = curve.windows(2).all(|w| w[1] <= w[0]);
    let out = dir.path().join("loo.csv");
    let status = albedo()
        .args(["eval-loo", "--variants", "independent", "--d", "0,1,2,3,4,5,6,7,8,9,10"])
        .arg("--diffuse")
        .arg(dir.path().join("diffuse"))
        .arg("--specular")
        .arg(dir.path().join("specular"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    let csv = std::fs::read_to_string(&out).unwrap_or_default();
    let parsed: Vec<f64> = csv
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(1).and_then(|v| v.parse().ok()))
        .collect();
    let identical = status.status.success()
        && parsed.len() == curve.len()
        && parsed.iter().zip(&curve).all(|(a, b)| a.to_bits() == b.to_bits());
    let secs = t.elapsed().as_secs_f64();
    verdict(
        monotone && identical && secs <= 60.0,
        format!(
            "non-increasing over d = 0..10: {monotone} ({:.4} -> {:.4}), CSV bit-identical: {identical}, {secs:.2} s (<= 60 s)",
            curve[0],
            curve[curve.len() - 1]
        ),
    )
}

fn gradient_operator() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    let (mut constant, mut linear) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let mesh = random_mesh(&mut rng, 200);
        let g = build_gradient_operator(&mesh).unwrap();
        let f = VertexSignal::constant(mesh.n_vertices(), &[5.0, -2.0, 0.25]);
        constant = constant.max(apply_gradient(&g, &f).unwrap().values().iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let a = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let gf = g.mul_vec(&mesh.vertices().iter().map(|p| a.dot(p)).collect::<Vec<_>>());
        for j in 0..mesh.n_triangles() {
            let nrm = mesh.triangle_cross(j).normalize();
            let expect = a - nrm * nrm.dot(&a);
            for axis in 0..3 {
                linear = linear.max((gf[3 * j + axis] - expect[axis]).abs());
            }
        }
    }
    verdict(
        constant <= 1e-12 && linear <= 1e-10,
        format!("50 meshes, |G 1| {constant:.1e} (<= 1e-12), linear fields {linear:.1e} (<= 1e-10)"),
    )
}

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
    let t = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(6.0..10.0));
    CameraView::new(k, random_rotation(rng), t, distortion, (640, 480)).unwrap()
}

fn max_reprojection(cam: &CameraView, p3: &[Vec3], p2: &[Vector2<f64>]) -> f64 {
    p3.iter().zip(p2).map(|(p, q)| (cam.project(p).0 - q).norm()).fold(0.0, f64::max)
}

fn dlt_calibration() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1008);
    let points = |rng: &mut ChaCha8Rng, count: usize| -> Vec<Vec3> {
        (0..count)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    };
    let (mut plain, mut distorted) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let cam = random_camera(&mut rng, [0.0, 0.0]);
        let p3 = points(&mut rng, 30);
        let p2: Vec<_> = p3.iter().map(|p| cam.project(p).0).collect();
        let cal = calibrate_camera_dlt(&p3, &p2, cam.image_size(), CalibrationOptions::default()).unwrap();
        plain = plain.max(max_reprojection(&cal.camera, &p3, &p2));
    }
    for _ in 0..10 {
        let cam = random_camera(&mut rng, [-0.1, 0.0]);
        let p3 = points(&mut rng, 40);
        let p2: Vec<_> = p3.iter().map(|p| cam.project(p).0).collect();
        let options = CalibrationOptions {
            refine_distortion: true,
            max_iterations: 100,
            ..CalibrationOptions::default()
        };
        let cal = calibrate_camera_dlt(&p3, &p2, cam.image_size(), options).unwrap();
        distorted = distorted.max(max_reprojection(&cal.camera, &p3, &p2));
    }
    verdict(
        plain <= 1e-8 && distorted <= 1e-6,
        format!("noiseless max reprojection {plain:.1e} px over 50 trials (<= 1e-8), distorted k1 = -0.1 {distorted:.1e} px (<= 1e-6)"),
    )
}

fn directory_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap()))
        .collect()
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mesh: TriangleMesh = icosphere(2, 1.0);
    let n = mesh.n_vertices();
    let truth = ProceduralAlbedo::new(&mesh, 4, 77).subjects(4, 78);
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let masks: Vec<VertexMask> = (0..4).map(|_| VertexMask::new(random_mask(n, 0.05, &mut rng))).collect();
    let capture: Vec<CaptureSubject> = truth
        .iter()
        .zip(&masks)
        .enumerate()
        .map(|(k, ((d, s), m))| CaptureSubject {
            id: format!("s{k}"),
            diffuse: d,
            specular: s,
            mask: Some(m),
        })
        .collect();
    let manifest = write_capture_set(dir.path(), &mesh, &capture, &cube_directions(), 3, "transferred", 2);
    let model_dir = dir.path().join("out").join("model");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let _ = std::fs::remove_dir_all(dir.path().join("out"));
        let out = albedo().arg("run").arg("--manifest").arg(&manifest).output().unwrap();
        if !out.status.success() {
            return verdict(false, format!("run failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
        runs.push(directory_bytes(&model_dir));
    }
    let files = runs[0].len();
    let bytes: usize = runs[0].iter().map(|f| f.1.len()).sum();
    verdict(
        files > 0 && runs[0] == runs[1],
        format!("two runs of `run`, {files} model files ({bytes} bytes), identical: {}", runs[0] == runs[1]),
    )
}
