use albedo_core::camera::CameraView;
use albedo_core::raster::render_vertex_colors;
use albedo_core::sampling::{sample_view, SamplingOptions};
use albedo_core::synth::{icosphere, look_at_camera, random_rotation};
use albedo_core::visibility::{compute_visibility, compute_weights, DEFAULT_BOUNDARY_PX};
use albedo_core::{TriangleMesh, Vec3, VertexSignal};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Exhaustive segment test against every triangle not incident to the vertex.
fn oracle_visible(mesh: &TriangleMesh, cam: &CameraView, i: usize) -> bool {
    let (px, depth) = cam.project(&mesh.vertices()[i]);
    if depth <= 0.0 || !cam.in_image(&px) {
        return false;
    }
    let o = cam.centre();
    let target = mesh.vertices()[i];
    let d = target - o;
    for tri in mesh.triangles() {
        if tri.contains(&i) {
            continue;
        }
        let [a, b, c] = tri.map(|k| mesh.vertices()[k]);
        // solve o + s d = a + u (b - a) + v (c - a)
        let m = nalgebra::Matrix3::from_columns(&[d, a - b, a - c]);
        let Some(inv) = m.try_inverse() else { continue };
        let x = inv * (a - o);
        let (s, u, v) = (x[0], x[1], x[2]);
        if s > 1e-9 && s < 1.0 - 1e-9 && u >= 0.0 && v >= 0.0 && u + v <= 1.0 {
            return false;
        }
    }
    true
}

#[test]
fn sphere_visibility_matches_ray_cast_oracle() {
    let mesh = icosphere(3, 1.0);
    let cam = look_at_camera(Vec3::new(0.0, 0.0, 1.0), 4.0, 300.0, (256, 256));
    let vis = compute_visibility(&mesh, &cam);
    let mut disagreements = 0;
    for i in 0..mesh.n_vertices() {
        if vis[i] != oracle_visible(&mesh, &cam, i) {
            disagreements += 1;
        }
    }
    assert_eq!(disagreements, 0);
}

#[test]
fn occluded_sphere_matches_oracle() {
    // a second sphere in front of the first hides part of it
    let a = icosphere(2, 1.0);
    let b = a.transformed(&nalgebra::Matrix3::identity(), &Vec3::new(0.6, 0.2, 1.8)).scaled(0.5).unwrap();
    let mut verts = a.vertices().to_vec();
    let off = verts.len();
    verts.extend_from_slice(b.vertices());
    let mut tris = a.triangles().to_vec();
    tris.extend(b.triangles().iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
    let mesh = TriangleMesh::new(verts, tris).unwrap();
    let cam = look_at_camera(Vec3::new(0.1, 0.0, 1.0), 6.0, 300.0, (256, 256));
    let vis = compute_visibility(&mesh, &cam);
    for i in 0..mesh.n_vertices() {
        assert_eq!(vis[i], oracle_visible(&mesh, &cam, i), "vertex {i}");
    }
    assert!(vis[..off].iter().filter(|&&v| v).count() < 70);
}

#[test]
fn frontal_sphere_weights_follow_cosine() {
    let mesh = icosphere(4, 1.0);
    let cam = look_at_camera(Vec3::new(0.0, 0.0, 1.0), 5.0, 400.0, (512, 512));
    let vis = compute_visibility(&mesh, &cam);
    let (vw, tw) = compute_weights(&mesh, &cam, &vis, DEFAULT_BOUNDARY_PX);
    let centre = cam.centre();
    let normals = mesh.vertex_normals();
    let mut pairs = Vec::new();
    for (i, p) in mesh.vertices().iter().enumerate() {
        if vw[i] == 0.0 {
            continue;
        }
        let view = (centre - p).normalize();
        // exact against the mesh normals, discretisation-limited against the sphere
        assert!((vw[i] - normals[i].dot(&view)).abs() <= 1e-12);
        assert!((vw[i] - p.normalize().dot(&view)).abs() <= 7e-3);
        let theta = p.normalize().dot(&Vec3::new(0.0, 0.0, 1.0)).acos();
        pairs.push((theta, vw[i]));
    }
    // monotone in angular distance, up to the normal discretisation
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for w in pairs.windows(2) {
        assert!(w[1].1 <= w[0].1 + 1e-2);
    }
    for (j, tri) in mesh.triangles().iter().enumerate() {
        assert!(tri.iter().all(|&v| tw[j] <= vw[v]));
    }
    assert!(vw.iter().zip(&vis).all(|(&w, &v)| w >= 0.0 && (v || w == 0.0)));
}

#[test]
fn weights_invariant_under_rigid_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mesh = icosphere(3, 1.0);
    let cam = look_at_camera(Vec3::new(0.3, 0.2, 1.0), 4.0, 300.0, (256, 256));
    let vis = compute_visibility(&mesh, &cam);
    let (w0, _) = compute_weights(&mesh, &cam, &vis, DEFAULT_BOUNDARY_PX);
    let r = random_rotation(&mut rng);
    let t = Vec3::new(0.5, -1.0, 2.0);
    let moved = mesh.transformed(&r, &t);
    // x' = R x + t, so the camera takes R_c R^T and t_c - R_c R^T t
    let rc = cam.rotation() * r.transpose();
    let tc = cam.translation() - rc * t;
    let cam2 = CameraView::new(*cam.intrinsics(), rc, tc, cam.distortion(), cam.image_size()).unwrap();
    let vis2 = compute_visibility(&moved, &cam2);
    let (w1, _) = compute_weights(&moved, &cam2, &vis2, DEFAULT_BOUNDARY_PX);
    for (a, b) in w0.iter().zip(&w1) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn render_then_sample_round_trip() {
    let mesh = icosphere(4, 1.0);
    let cam = look_at_camera(Vec3::new(0.0, 0.2, 1.0), 4.0, 450.0, (512, 512));
    let texture = VertexSignal::from_fn(mesh.n_vertices(), 3, |i, c| {
        let p = mesh.vertices()[i];
        0.5 + 0.3 * p.x + 0.1 * (c as f64) * p.y
    });
    let render = render_vertex_colors(&mesh, &cam, &texture, [0.0; 3]).unwrap();
    let vis = compute_visibility(&mesh, &cam);
    let sample = sample_view(&mesh, &cam, &render.image, &vis, &SamplingOptions::default()).unwrap();
    let (lo, hi) = texture.values().iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let mut checked = 0;
    for i in 0..mesh.n_vertices() {
        if sample.vertex_weight[i] < 0.2 {
            continue;
        }
        checked += 1;
        for c in 0..3 {
            assert!((sample.colors.get(i, c) - texture.get(i, c)).abs() <= 0.02 * (hi - lo));
        }
    }
    assert!(checked > 500);
}

#[test]
fn constant_image_gives_constant_colour() {
    let mesh = icosphere(3, 1.0);
    let cam = look_at_camera(Vec3::new(0.0, 0.0, 1.0), 4.0, 300.0, (256, 256));
    let image = albedo_core::raster::LinearImage::new(256, 256, [0.2, 0.4, 0.6]);
    let vis = compute_visibility(&mesh, &cam);
    let s = sample_view(&mesh, &cam, &image, &vis, &SamplingOptions::default()).unwrap();
    for i in (0..mesh.n_vertices()).filter(|&i| s.vertex_weight[i] > 0.0) {
        assert_eq!(s.colors.row(i), &[0.2, 0.4, 0.6]);
    }
}
