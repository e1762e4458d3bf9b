//! Synthetic meshes, cameras and albedo datasets for tests, benches and demos.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::CameraView;
use crate::mesh::{SymmetryMap, TriangleMesh, Vec3};
use crate::signal::VertexSignal;

/// Subdivided icosahedron projected onto a sphere. Level `k` has
/// `10 * 4^k + 2` vertices. The mesh carries the `x -> -x` mirror map.
pub fn icosphere(level: usize, radius: f64) -> TriangleMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = if a < b { (a, b) } else { (b, a) };
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts: Vec<Vec3> = verts.into_iter().map(|v| v * radius).collect();
    let map = mirror_map(&verts, 1e-9 * radius.max(1.0));
    TriangleMesh::new(verts, faces)
        .expect("icosphere is valid")
        .with_symmetry(map)
        .expect("mirror map covers every vertex")
}

/// Vertex correspondence under `x -> -x` by coordinate matching.
fn mirror_map(verts: &[Vec3], tol: f64) -> SymmetryMap {
    let key = |p: &Vec3| {
        (
            (p.x / tol).round() as i64,
            (p.y / tol).round() as i64,
            (p.z / tol).round() as i64,
        )
    };
    let index: HashMap<_, usize> = verts.iter().enumerate().map(|(i, p)| (key(p), i)).collect();
    let map = verts
        .iter()
        .map(|p| {
            let m = Vec3::new(-p.x, p.y, p.z);
            *index.get(&key(&m)).expect("mesh is mirror symmetric")
        })
        .collect();
    SymmetryMap::new(map).expect("mirror is an involution")
}

/// Regular grid of `nx x ny` quads split into triangles, on `[0,1]^2` in the
/// z = 0 plane, with optional random in-plane jitter and height.
pub fn grid_mesh(nx: usize, ny: usize, jitter: f64, height: f64, rng: &mut impl Rng) -> TriangleMesh {
    let mut verts = Vec::with_capacity((nx + 1) * (ny + 1));
    let hx = 1.0 / nx as f64;
    let hy = 1.0 / ny as f64;
    for j in 0..=ny {
        for i in 0..=nx {
            let interior = i > 0 && i < nx && j > 0 && j < ny;
            let (dx, dy) = if interior {
                (
                    jitter * hx * rng.random_range(-0.5..0.5),
                    jitter * hy * rng.random_range(-0.5..0.5),
                )
            } else {
                (0.0, 0.0)
            };
            let z = height * rng.random_range(-1.0..1.0);
            verts.push(Vec3::new(i as f64 * hx + dx, j as f64 * hy + dy, z));
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            tris.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            tris.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriangleMesh::new(verts, tris).expect("grid mesh is valid")
}

/// A random small mesh: jittered grid or perturbed icosphere, chosen by the RNG.
pub fn random_mesh(rng: &mut impl Rng, max_vertices: usize) -> TriangleMesh {
    if rng.random_bool(0.5) || max_vertices < 42 {
        let side = ((max_vertices as f64).sqrt() as usize).clamp(3, 14);
        let nx = rng.random_range(2..side);
        let ny = rng.random_range(2..side);
        grid_mesh(nx, ny, 0.6, 0.2, rng)
    } else {
        let level = if max_vertices >= 162 && rng.random_bool(0.5) { 2 } else { 1 };
        let base = icosphere(level, 1.0);
        let verts = base
            .vertices()
            .iter()
            .map(|p| p * (1.0 + 0.15 * rng.random_range(-1.0..1.0)))
            .collect();
        TriangleMesh::new(verts, base.triangles().to_vec()).expect("perturbed sphere is valid")
    }
}

/// Random rotation, uniform over axis and angle.
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let axis = Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    let angle = rng.random_range(-PI..PI);
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

/// Camera at `distance` from the origin along `direction`, looking at the
/// origin with the image y axis pointing down.
pub fn look_at_camera(direction: Vec3, distance: f64, focal: f64, size: (u32, u32)) -> CameraView {
    let forward = -direction.normalize();
    let mut up = Vec3::new(0.0, 1.0, 0.0);
    if forward.cross(&up).norm() < 1e-6 {
        up = Vec3::new(0.0, 0.0, 1.0);
    }
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let centre = direction.normalize() * distance;
    let translation = -(rotation * centre);
    let intrinsics = Matrix3::new(
        focal,
        0.0,
        (size.0 as f64 - 1.0) / 2.0,
        0.0,
        focal,
        (size.1 as f64 - 1.0) / 2.0,
        0.0,
        0.0,
        1.0,
    );
    CameraView::new(intrinsics, rotation, translation, [0.0, 0.0], size).expect("look-at camera is valid")
}

/// Ground-truth generator for procedural paired albedo: a mean map plus
/// smooth mirror-symmetric and antisymmetric basis fields on the mesh.
#[derive(Debug, Clone)]
pub struct ProceduralAlbedo {
    pub diffuse_mean: VertexSignal,
    pub specular_mean: VertexSignal,
    pub diffuse_basis: Vec<VertexSignal>,
    pub specular_basis: Vec<VertexSignal>,
}

impl ProceduralAlbedo {
    /// `modes` basis fields built from low-order polynomials of the vertex
    /// position; specular modes are coupled to the diffuse ones.
    pub fn new(mesh: &TriangleMesh, modes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = mesh.n_vertices();
        let scale = mesh
            .vertices()
            .iter()
            .map(|p| p.norm())
            .fold(0.0, f64::max)
            .max(1e-12);
        let unit: Vec<Vec3> = mesh.vertices().iter().map(|p| p / scale).collect();
        let diffuse_mean = VertexSignal::from_fn(n, 3, |i, ch| {
            let p = unit[i];
            [0.55, 0.38, 0.30][ch] + 0.05 * p.y + 0.03 * p.z * p.z
        });
        let specular_mean = VertexSignal::from_fn(n, 3, |i, _| {
            let p = unit[i];
            0.25 + 0.05 * p.z - 0.04 * p.y * p.y
        });
        let features = |p: &Vec3, k: usize| -> f64 {
            match k % 8 {
                0 => p.y,
                1 => p.z,
                2 => p.x * p.x - 0.3,
                3 => p.y * p.z,
                4 => p.x,
                5 => p.z * p.z - p.y * p.y,
                6 => p.x * p.y,
                _ => p.y * p.y * p.z,
            }
        };
        let mut diffuse_basis = Vec::with_capacity(modes);
        let mut specular_basis = Vec::with_capacity(modes);
        for k in 0..modes {
            let colour: [f64; 3] = [
                rng.random_range(0.5..1.0),
                rng.random_range(0.3..0.9),
                rng.random_range(0.2..0.8),
            ];
            let amp = 0.08 / (1.0 + 0.3 * k as f64);
            let phase = 1.0 + 0.25 * (k / 8) as f64;
            let d = VertexSignal::from_fn(n, 3, |i, ch| {
                amp * colour[ch] * features(&unit[i], k) * phase
            });
            let coupling = rng.random_range(-0.6..-0.2);
            // specular is grey: it follows the green diffuse channel
            let s = VertexSignal::from_fn(n, 3, |i, _| coupling * d.get(i, 1));
            diffuse_basis.push(d);
            specular_basis.push(s);
        }
        Self {
            diffuse_mean,
            specular_mean,
            diffuse_basis,
            specular_basis,
        }
    }

    pub fn modes(&self) -> usize {
        self.diffuse_basis.len()
    }

    /// Diffuse and specular maps for latent coefficients `z`.
    pub fn subject(&self, z: &[f64]) -> (VertexSignal, VertexSignal) {
        let mut d = self.diffuse_mean.clone();
        let mut s = self.specular_mean.clone();
        for (k, &zk) in z.iter().enumerate().take(self.modes()) {
            for (dst, src) in d.values_mut().iter_mut().zip(self.diffuse_basis[k].values()) {
                *dst += zk * src;
            }
            for (dst, src) in s.values_mut().iter_mut().zip(self.specular_basis[k].values()) {
                *dst += zk * src;
            }
        }
        (d, s)
    }

    /// `count` subjects with standard-normal latents, deterministic in `seed`.
    pub fn subjects(&self, count: usize, seed: u64) -> Vec<(VertexSignal, VertexSignal)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let z: Vec<f64> = (0..self.modes())
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                self.subject(&z)
            })
            .collect()
    }
}

/// Random vertex mask covering `fraction` of the vertices.
pub fn random_mask(n: usize, fraction: f64, rng: &mut impl Rng) -> Vec<bool> {
    let count = ((n as f64) * fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..count.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut mask = vec![false; n];
    for &i in &idx[..count.min(n)] {
        mask[i] = true;
    }
    mask
}
