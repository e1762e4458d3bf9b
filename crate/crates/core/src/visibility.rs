//! Per-vertex visibility by segment casting, and view confidence weights.

use nalgebra::Vector2;

use crate::camera::CameraView;
use crate::mesh::{TriangleMesh, Vec3};
use crate::par;

/// Segments are tested against triangles up to `1 - SELF_HIT_OFFSET` of
/// their length so a vertex's own triangles never occlude it.
pub const SELF_HIT_OFFSET: f64 = 1e-6;

/// Meshes above this vertex count are ray cast through a BVH.
pub const BVH_THRESHOLD: usize = 50_000;

/// Slack on the barycentric bounds so rays through a shared edge are not
/// missed by both neighbours.
const BARYCENTRIC_EPS: f64 = 1e-12;

pub const DEFAULT_BOUNDARY_PX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RayCaster {
    #[default]
    Auto,
    BruteForce,
    Bvh,
}

/// A vertex is visible iff it lies in front of the camera, projects inside
/// the image, and the segment from the camera centre to it crosses no
/// triangle before reaching it.
pub fn compute_visibility(mesh: &TriangleMesh, cam: &CameraView) -> Vec<bool> {
    compute_visibility_with(mesh, cam, RayCaster::Auto)
}

pub fn compute_visibility_with(mesh: &TriangleMesh, cam: &CameraView, caster: RayCaster) -> Vec<bool> {
    let use_bvh = match caster {
        RayCaster::Auto => mesh.n_vertices() > BVH_THRESHOLD,
        RayCaster::BruteForce => false,
        RayCaster::Bvh => true,
    };
    let tris = TriangleSoup::new(mesh);
    let bvh = use_bvh.then(|| Bvh::build(&tris));
    let origin = cam.centre();
    let verts = mesh.vertices();
    par::map_range(mesh.n_vertices(), |i| {
        let (pixel, depth) = cam.project(&verts[i]);
        if !(depth > 0.0 && cam.in_image(&pixel)) {
            return false;
        }
        let dir = verts[i] - origin;
        let limit = 1.0 - SELF_HIT_OFFSET;
        let blocked = match &bvh {
            Some(b) => b.any_hit(&tris, &origin, &dir, limit),
            None => (0..tris.len()).any(|j| tris.hit(j, &origin, &dir, limit)),
        };
        !blocked
    })
}

struct TriangleSoup {
    v0: Vec<Vec3>,
    e1: Vec<Vec3>,
    e2: Vec<Vec3>,
}

impl TriangleSoup {
    fn new(mesh: &TriangleMesh) -> Self {
        let verts = mesh.vertices();
        let t = mesh.n_triangles();
        let mut s = Self {
            v0: Vec::with_capacity(t),
            e1: Vec::with_capacity(t),
            e2: Vec::with_capacity(t),
        };
        for &[a, b, c] in mesh.triangles() {
            s.v0.push(verts[a]);
            s.e1.push(verts[b] - verts[a]);
            s.e2.push(verts[c] - verts[a]);
        }
        s
    }

    fn len(&self) -> usize {
        self.v0.len()
    }

    /// Moller-Trumbore; true if the segment `origin + s*dir`, `s` in
    /// `(0, limit)`, meets triangle `j` (edges inclusive).
    #[inline]
    fn hit(&self, j: usize, origin: &Vec3, dir: &Vec3, limit: f64) -> bool {
        let (e1, e2) = (&self.e1[j], &self.e2[j]);
        let p = dir.cross(e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-300 {
            return false;
        }
        let inv = 1.0 / det;
        let tv = origin - self.v0[j];
        let u = tv.dot(&p) * inv;
        if !(-BARYCENTRIC_EPS..=1.0 + BARYCENTRIC_EPS).contains(&u) {
            return false;
        }
        let q = tv.cross(e1);
        let v = dir.dot(&q) * inv;
        if v < -BARYCENTRIC_EPS || u + v > 1.0 + BARYCENTRIC_EPS {
            return false;
        }
        let s = e2.dot(&q) * inv;
        s > 0.0 && s < limit
    }

    fn bounds(&self, j: usize) -> (Vec3, Vec3) {
        let a = self.v0[j];
        let b = a + self.e1[j];
        let c = a + self.e2[j];
        (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
    }
}

struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    // leaf: start..end into `order`; inner: children indices
    left: usize,
    right: usize,
    start: usize,
    end: usize,
}

struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

impl Bvh {
    const LEAF: usize = 4;

    fn build(tris: &TriangleSoup) -> Self {
        let bounds: Vec<(Vec3, Vec3)> = (0..tris.len()).map(|j| tris.bounds(j)).collect();
        let centroids: Vec<Vec3> = bounds.iter().map(|(l, h)| (l + h) * 0.5).collect();
        let mut bvh = Self {
            nodes: Vec::new(),
            order: (0..tris.len()).collect(),
        };
        if !bvh.order.is_empty() {
            bvh.split(0, tris.len(), &bounds, &centroids);
        }
        bvh
    }

    fn split(&mut self, start: usize, end: usize, bounds: &[(Vec3, Vec3)], centroids: &[Vec3]) -> usize {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &j in &self.order[start..end] {
            lo = lo.inf(&bounds[j].0);
            hi = hi.sup(&bounds[j].1);
        }
        let id = self.nodes.len();
        self.nodes.push(BvhNode {
            lo,
            hi,
            left: usize::MAX,
            right: usize::MAX,
            start,
            end,
        });
        if end - start <= Self::LEAF {
            return id;
        }
        let extent = hi - lo;
        let axis = extent.imax();
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        let left = self.split(start, mid, bounds, centroids);
        let right = self.split(mid, end, bounds, centroids);
        self.nodes[id].left = left;
        self.nodes[id].right = right;
        id
    }

    fn any_hit(&self, tris: &TriangleSoup, origin: &Vec3, dir: &Vec3, limit: f64) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if !slab(&node.lo, &node.hi, origin, &inv, limit) {
                continue;
            }
            if node.left == usize::MAX {
                if self.order[node.start..node.end]
                    .iter()
                    .any(|&j| tris.hit(j, origin, dir, limit))
                {
                    return true;
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
        false
    }
}

fn slab(lo: &Vec3, hi: &Vec3, origin: &Vec3, inv: &Vec3, limit: f64) -> bool {
    let mut t0 = 0.0f64;
    let mut t1 = limit;
    for a in 0..3 {
        let (mut near, mut far) = ((lo[a] - origin[a]) * inv[a], (hi[a] - origin[a]) * inv[a]);
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        // NaN from 0 * inf means the segment runs inside the slab plane
        if near.is_nan() || far.is_nan() {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return false;
            }
            continue;
        }
        // pad for round-off so edge-grazing hits are not culled
        let pad = 1e-12 * (1.0 + far.abs());
        t0 = t0.max(near - pad);
        t1 = t1.min(far + pad);
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// Rasterised silhouette: a pixel is covered if some triangle in front of
/// the camera contains its centre.
pub fn coverage_mask(mesh: &TriangleMesh, cam: &CameraView) -> Vec<bool> {
    let (w, h) = cam.image_size();
    let proj: Vec<(Vector2<f64>, f64)> = mesh.vertices().iter().map(|p| cam.project(p)).collect();
    let mut cov = vec![false; w as usize * h as usize];
    for &[a, b, c] in mesh.triangles() {
        let (pa, za) = proj[a];
        let (pb, zb) = proj[b];
        let (pc, zc) = proj[c];
        if za <= 0.0 || zb <= 0.0 || zc <= 0.0 {
            continue;
        }
        let area = (pb.x - pa.x) * (pc.y - pa.y) - (pb.y - pa.y) * (pc.x - pa.x);
        if area.abs() < 1e-14 {
            continue;
        }
        let xmin = pa.x.min(pb.x).min(pc.x).ceil().max(0.0) as i64;
        let xmax = pa.x.max(pb.x).max(pc.x).floor().min(w as f64 - 1.0) as i64;
        let ymin = pa.y.min(pb.y).min(pc.y).ceil().max(0.0) as i64;
        let ymax = pa.y.max(pb.y).max(pc.y).floor().min(h as f64 - 1.0) as i64;
        for y in ymin..=ymax {
            for x in xmin..=xmax {
                let (px, py) = (x as f64, y as f64);
                let l0 = ((pc.x - pb.x) * (py - pb.y) - (pc.y - pb.y) * (px - pb.x)) / area;
                let l1 = ((pa.x - pc.x) * (py - pc.y) - (pa.y - pc.y) * (px - pc.x)) / area;
                let l2 = 1.0 - l0 - l1;
                if l0 >= -1e-12 && l1 >= -1e-12 && l2 >= -1e-12 {
                    cov[y as usize * w as usize + x as usize] = true;
                }
            }
        }
    }
    cov
}

/// True if some uncovered or out-of-image pixel centre lies within
/// `radius` of `p`.
fn near_contour(p: &Vector2<f64>, radius: f64, cov: &[bool], size: (u32, u32)) -> bool {
    if radius <= 0.0 {
        return false;
    }
    let (w, h) = (size.0 as i64, size.1 as i64);
    let x0 = (p.x - radius).floor() as i64;
    let x1 = (p.x + radius).ceil() as i64;
    let y0 = (p.y - radius).floor() as i64;
    let y1 = (p.y + radius).ceil() as i64;
    let r2 = radius * radius;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d2 = (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2);
            if d2 > r2 {
                continue;
            }
            if x < 0 || y < 0 || x >= w || y >= h || !cov[(y * w + x) as usize] {
                return true;
            }
        }
    }
    false
}

/// Per-vertex and per-triangle confidence for one view.
///
/// Weight is zero for invisible vertices and for vertices projecting within
/// `boundary_px` of the occluding contour; otherwise `max(n . v, 0)` with `n`
/// the area-weighted vertex normal and `v` the unit direction to the camera
/// centre. A triangle takes the minimum of its vertex weights.
pub fn compute_weights(
    mesh: &TriangleMesh,
    cam: &CameraView,
    visibility: &[bool],
    boundary_px: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(visibility.len(), mesh.n_vertices());
    let cov = coverage_mask(mesh, cam);
    let normals = mesh.vertex_normals();
    let centre = cam.centre();
    let verts = mesh.vertices();
    let size = cam.image_size();
    let vertex_weight = par::map_range(mesh.n_vertices(), |i| {
        if !visibility[i] {
            return 0.0;
        }
        let (pixel, _) = cam.project(&verts[i]);
        if near_contour(&pixel, boundary_px, &cov, size) {
            return 0.0;
        }
        let view = (centre - verts[i]).normalize();
        normals[i].dot(&view).max(0.0)
    });
    let triangle_weight = triangle_min(mesh, &vertex_weight);
    (vertex_weight, triangle_weight)
}

pub fn triangle_min(mesh: &TriangleMesh, vertex_weight: &[f64]) -> Vec<f64> {
    mesh.triangles()
        .iter()
        .map(|t| vertex_weight[t[0]].min(vertex_weight[t[1]]).min(vertex_weight[t[2]]))
        .collect()
}
