#![allow(dead_code)]

use albedo_core::inpaint::VertexMask;
use albedo_core::model::LinearAlbedoModel;
use albedo_core::sampling::ViewSample;
use albedo_core::{TriangleMesh, Vec3, VertexSignal};
use nalgebra::{DMatrix, DVector, Matrix3};
use rand::Rng;

/// Dense `3t x n` gradient matrix: each triangle's gradient `g` of a linear
/// function solves `g.(p1-p0) = f1-f0`, `g.(p2-p0) = f2-f0`, `g.n = 0`.
pub fn dense_gradient(mesh: &TriangleMesh) -> DMatrix<f64> {
    let (n, t) = (mesh.n_vertices(), mesh.n_triangles());
    let mut g = DMatrix::zeros(3 * t, n);
    let v = mesh.vertices();
    for (j, tri) in mesh.triangles().iter().enumerate() {
        let e1 = v[tri[1]] - v[tri[0]];
        let e2 = v[tri[2]] - v[tri[0]];
        let nrm = e1.cross(&e2).normalize();
        let m = Matrix3::from_rows(&[e1.transpose(), e2.transpose(), nrm.transpose()]);
        let inv = m.try_inverse().expect("non-degenerate triangle");
        // g = inv * (f1 - f0, f2 - f0, 0)
        for axis in 0..3 {
            let a = inv[(axis, 0)];
            let b = inv[(axis, 1)];
            g[(3 * j + axis, tri[0])] += -a - b;
            g[(3 * j + axis, tri[1])] += a;
            g[(3 * j + axis, tri[2])] += b;
        }
    }
    g
}

/// Least squares by Householder QR when `a` has full column rank, otherwise
/// the minimum-norm solution through the SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() >= a.ncols() {
        let qr = a.clone().qr();
        let r = qr.r();
        let dmax = r.diagonal().amax();
        if r.diagonal().iter().all(|d| d.abs() > 1e-10 * dmax) {
            let qtb = qr.q().transpose() * b;
            return r.solve_upper_triangular(&qtb).expect("triangular solve");
        }
    }
    pinv_solve(a, b)
}

pub fn pinv_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-13 * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, eps).expect("svd solve")
}

pub fn to_matrix(s: &VertexSignal) -> DMatrix<f64> {
    DMatrix::from_fn(s.n(), s.channels(), |i, c| s.get(i, c))
}

pub fn from_matrix(m: &DMatrix<f64>) -> VertexSignal {
    VertexSignal::from_fn(m.nrows(), m.ncols(), |i, c| m[(i, c)])
}

pub fn rel_err(x: &DMatrix<f64>, oracle: &DMatrix<f64>) -> f64 {
    (x - oracle).norm() / oracle.norm().max(1e-300)
}

pub fn random_signal(n: usize, c: usize, rng: &mut impl Rng) -> VertexSignal {
    VertexSignal::from_fn(n, c, |_, _| rng.random_range(0.0..1.0))
}

/// `k` views with random colours and random per-vertex weights, about a
/// third of them zero.
pub fn random_views(mesh: &TriangleMesh, k: usize, rng: &mut impl Rng) -> Vec<ViewSample> {
    let n = mesh.n_vertices();
    (0..k)
        .map(|_| {
            let colors = random_signal(n, 3, rng);
            let weights: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.05..1.0) })
                .collect();
            ViewSample::new(mesh, colors, weights).unwrap()
        })
        .collect()
}

fn argmax_owner(weights: &[f64]) -> usize {
    let mut best = 0;
    let mut best_w = 0.0;
    for (v, &w) in weights.iter().enumerate() {
        if w > best_w {
            best = v + 1;
            best_w = w;
        }
    }
    best
}

/// Dense stitch: stacked `[G; lambda S] x = [g; lambda y]` solved by SVD.
pub fn oracle_stitch(mesh: &TriangleMesh, samples: &[ViewSample], reference: usize, lambda: f64) -> DMatrix<f64> {
    let (n, t) = (mesh.n_vertices(), mesh.n_triangles());
    let g = dense_gradient(mesh);
    let mut targets = DMatrix::zeros(3 * t, 3);
    for j in 0..t {
        let w: Vec<f64> = samples.iter().map(|s| s.triangle_weight[j]).collect();
        let owner = argmax_owner(&w);
        if owner == 0 {
            continue;
        }
        let colours = to_matrix(&samples[owner - 1].colors);
        let rows = g.rows(3 * j, 3) * colours;
        targets.rows_mut(3 * j, 3).copy_from(&rows);
    }
    let screened: Vec<usize> = (0..n)
        .filter(|&i| {
            let w: Vec<f64> = samples.iter().map(|s| s.vertex_weight[i]).collect();
            argmax_owner(&w) == reference
        })
        .collect();
    let m = 3 * t + screened.len();
    let mut a = DMatrix::zeros(m, n);
    let mut b = DMatrix::zeros(m, 3);
    a.rows_mut(0, 3 * t).copy_from(&g);
    b.rows_mut(0, 3 * t).copy_from(&targets);
    for (k, &i) in screened.iter().enumerate() {
        a[(3 * t + k, i)] = lambda;
        for c in 0..3 {
            b[(3 * t + k, c)] = lambda * samples[reference - 1].colors.get(i, c);
        }
    }
    lstsq(&a, &b)
}

/// Coefficients minimising the residual on unmasked vertices, channel-major.
pub fn oracle_fit(model: &LinearAlbedoModel, observed: &VertexSignal, mask: Option<&[bool]>) -> DVector<f64> {
    let (n, c) = (model.n(), model.channels());
    let keep: Vec<usize> = (0..n).filter(|&i| mask.is_none_or(|m| !m[i])).collect();
    let p = model.components();
    let mean = model.mean();
    let rows = keep.len() * c;
    let mut a = DMatrix::zeros(rows, model.d());
    let mut y = DMatrix::zeros(rows, 1);
    for ch in 0..c {
        for (k, &i) in keep.iter().enumerate() {
            let r = ch * keep.len() + k;
            a.row_mut(r).copy_from(&p.row(ch * n + i));
            y[(r, 0)] = observed.get(i, ch) - mean[ch * n + i];
        }
    }
    lstsq(&a, &y).column(0).into_owned()
}

pub fn oracle_generate(model: &LinearAlbedoModel, b: &DVector<f64>) -> VertexSignal {
    let v = model.mean() + model.components() * b;
    VertexSignal::from_channel_major(model.n(), model.channels(), v.as_slice()).unwrap()
}

/// Dense hybrid inpaint: masked vertices are the unknowns; masked triangles
/// target the gradient of the model fit, mixed triangles target zero.
pub fn oracle_hybrid(
    mesh: &TriangleMesh,
    stitched: &VertexSignal,
    mask: &VertexMask,
    model: &LinearAlbedoModel,
) -> DMatrix<f64> {
    let n = mesh.n_vertices();
    let c = stitched.channels();
    let b = oracle_fit(model, stitched, Some(mask.as_slice()));
    let stat = to_matrix(&oracle_generate(model, &b));
    let g = dense_gradient(mesh);
    let unknown: Vec<usize> = (0..n).filter(|&i| mask.is_masked(i)).collect();
    let known: Vec<usize> = (0..n).filter(|&i| !mask.is_masked(i)).collect();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (j, tri) in mesh.triangles().iter().enumerate() {
        let masked = tri.iter().filter(|&&v| mask.is_masked(v)).count();
        if masked == 0 {
            continue;
        }
        for axis in 0..3 {
            let r = 3 * j + axis;
            rows.push(r);
            let target: Vec<f64> = if masked == 3 {
                (0..c).map(|ch| (g.row(r) * stat.column(ch))[(0, 0)]).collect()
            } else {
                vec![0.0; c]
            };
            targets.push(target);
        }
    }
    let mut a = DMatrix::zeros(rows.len(), unknown.len());
    let mut rhs = DMatrix::zeros(rows.len(), c);
    for (k, &r) in rows.iter().enumerate() {
        for (u, &i) in unknown.iter().enumerate() {
            a[(k, u)] = g[(r, i)];
        }
        for ch in 0..c {
            let fixed: f64 = known.iter().map(|&i| g[(r, i)] * stitched.get(i, ch)).sum();
            rhs[(k, ch)] = targets[k][ch] - fixed;
        }
    }
    let x = lstsq(&a, &rhs);
    let mut out = to_matrix(stitched);
    for (u, &i) in unknown.iter().enumerate() {
        for ch in 0..c {
            out[(i, ch)] = x[(u, ch)];
        }
    }
    out
}

/// Independent pinhole projection with two-term radial distortion.
pub fn oracle_project(k: &Matrix3<f64>, r: &Matrix3<f64>, t: &Vec3, dist: [f64; 2], p: &Vec3) -> (f64, f64) {
    let x = r * p + t;
    let (u, v) = (x[0] / x[2], x[1] / x[2]);
    let r2 = u * u + v * v;
    let f = 1.0 + dist[0] * r2 + dist[1] * r2 * r2;
    let (ud, vd) = (u * f, v * f);
    (
        k[(0, 0)] * ud + k[(0, 1)] * vd + k[(0, 2)],
        k[(1, 1)] * vd + k[(1, 2)],
    )
}

/// Camera directions covering the whole sphere.
pub fn cube_directions() -> Vec<Vec3> {
    vec![
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 0.0, -1.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
    ]
}

pub struct CaptureSubject<'a> {
    pub id: String,
    pub diffuse: &'a VertexSignal,
    pub specular: &'a VertexSignal,
    pub mask: Option<&'a VertexMask>,
}

/// Writes linear PFM renders, cameras and masks for every subject plus the
/// template mesh and a manifest under `dir`; returns the manifest path.
pub fn write_capture_set(
    dir: &std::path::Path,
    mesh: &TriangleMesh,
    subjects: &[CaptureSubject],
    directions: &[Vec3],
    d: usize,
    variant: &str,
    iterations: usize,
) -> std::path::PathBuf {
    use albedo_core::raster::render_vertex_colors;
    use albedo_core::synth::look_at_camera;
    mesh.save_obj(dir.join("mesh.obj")).unwrap();
    let cams: Vec<_> = directions
        .iter()
        .map(|dir| look_at_camera(dir.normalize(), 4.0, 300.0, (256, 256)))
        .collect();
    let mut entries = Vec::new();
    for s in subjects {
        let sd = dir.join(&s.id);
        std::fs::create_dir_all(&sd).unwrap();
        let mut views = Vec::new();
        for (v, cam) in cams.iter().enumerate() {
            let cam_path = format!("{}/view{v}.cam", s.id);
            let dpath = format!("{}/diffuse{v}.pfm", s.id);
            let spath = format!("{}/specular{v}.pfm", s.id);
            cam.save(dir.join(&cam_path)).unwrap();
            render_vertex_colors(mesh, cam, s.diffuse, [0.0; 3]).unwrap().image.save(dir.join(&dpath)).unwrap();
            render_vertex_colors(mesh, cam, s.specular, [0.0; 3]).unwrap().image.save(dir.join(&spath)).unwrap();
            views.push(serde_json::json!({"camera": cam_path, "diffuse": dpath, "specular": spath}));
        }
        let mut entry = serde_json::json!({"id": s.id, "views": views});
        if let Some(m) = s.mask {
            let p = format!("{}/mask.txt", s.id);
            m.save(dir.join(&p)).unwrap();
            entry["mask"] = serde_json::Value::String(p);
        }
        entries.push(entry);
    }
    let manifest = serde_json::json!({
        "output": "out",
        "model": {"mesh": "mesh.obj", "d": d, "variant": variant, "inpaint_iterations": iterations},
        "subjects": entries,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    path
}
