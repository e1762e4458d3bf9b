//! Triangle meshes with an optional bilateral symmetry map.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Triangles whose area falls below this are rejected at construction.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Involutive vertex permutation pairing each vertex with its mirror.
/// Midline vertices map to themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetryMap {
    map: Vec<usize>,
}

impl SymmetryMap {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        for (i, &j) in map.iter().enumerate() {
            if j >= n {
                return Err(Error::InvalidSymmetryMap(format!(
                    "vertex {i} maps to {j}, outside 0..{n}"
                )));
            }
            if map[j] != i {
                return Err(Error::InvalidSymmetryMap(format!(
                    "not an involution: {i} -> {j} -> {}",
                    map[j]
                )));
            }
        }
        Ok(Self { map })
    }

    /// Builds the map from mirror pairs; every vertex in `0..n` must appear.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut map = vec![usize::MAX; n];
        for &(a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::InvalidSymmetryMap(format!(
                    "pair ({a}, {b}) outside 0..{n}"
                )));
            }
            for (x, y) in [(a, b), (b, a)] {
                if map[x] != usize::MAX && map[x] != y {
                    return Err(Error::InvalidSymmetryMap(format!(
                        "vertex {x} paired twice ({} and {y})",
                        map[x]
                    )));
                }
                map[x] = y;
            }
        }
        if let Some(i) = map.iter().position(|&m| m == usize::MAX) {
            return Err(Error::InvalidSymmetryMap(format!("vertex {i} is unpaired")));
        }
        Self::new(map)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    #[inline]
    pub fn mirror(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    /// Canonical pairs `(i, map(i))` with `i <= map(i)`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.map
            .iter()
            .enumerate()
            .filter(|&(i, &j)| i <= j)
            .map(|(i, &j)| (i, j))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        let mut max = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => {
                    max = max.max(a).max(b);
                    pairs.push((a, b));
                }
                _ => {
                    return Err(Error::parse(
                        path,
                        format!("line {}: expected two vertex indices", lineno + 1),
                    ))
                }
            }
        }
        let n = if pairs.is_empty() { 0 } else { max + 1 };
        Self::from_pairs(n, &pairs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (a, b) in self.pairs() {
            let _ = writeln!(out, "{a} {b}");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    symmetry: Option<SymmetryMap>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (j, tri) in triangles.iter().enumerate() {
            for &index in tri {
                if index >= n {
                    return Err(Error::IndexOutOfRange {
                        triangle: j,
                        index,
                        n,
                    });
                }
            }
            let area = triangle_area(&vertices, tri);
            if !(area >= DEGENERATE_AREA) {
                return Err(Error::DegenerateTriangle { triangle: j, area });
            }
        }
        Ok(Self {
            vertices,
            triangles,
            symmetry: None,
        })
    }

    pub fn with_symmetry(mut self, symmetry: SymmetryMap) -> Result<Self> {
        if symmetry.len() != self.vertices.len() {
            return Err(Error::InvalidSymmetryMap(format!(
                "map covers {} vertices, mesh has {}",
                symmetry.len(),
                self.vertices.len()
            )));
        }
        self.symmetry = Some(symmetry);
        Ok(self)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn symmetry(&self) -> Option<&SymmetryMap> {
        self.symmetry.as_ref()
    }

    pub fn triangle_area(&self, j: usize) -> f64 {
        triangle_area(&self.vertices, &self.triangles[j])
    }

    /// Unnormalised triangle normal, twice the area in length.
    pub fn triangle_cross(&self, j: usize) -> Vec3 {
        let [a, b, c] = self.triangles[j];
        let pa = self.vertices[a];
        (self.vertices[b] - pa).cross(&(self.vertices[c] - pa))
    }

    /// Area-weighted vertex normals, unit length. Isolated vertices get zero.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for j in 0..self.triangles.len() {
            // the cross product already carries the 2*area weight
            let cross = self.triangle_cross(j);
            for &v in &self.triangles[j] {
                acc[v] += cross;
            }
        }
        acc.into_iter()
            .map(|v| {
                let norm = v.norm();
                if norm > 0.0 {
                    v / norm
                } else {
                    v
                }
            })
            .collect()
    }

    /// Triangles incident to each vertex, in ascending triangle order.
    pub fn vertex_triangles(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (j, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                adj[v].push(j);
            }
        }
        adj
    }

    /// Connected components over shared-vertex connectivity. Returns the
    /// per-vertex label and the component count; labels follow the order of
    /// each component's lowest vertex.
    pub fn connected_components(&self) -> (Vec<usize>, usize) {
        components_from_triangles(self.vertices.len(), self.triangles.iter())
    }

    /// Applies `x -> rotation * x + translation` to every vertex.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vec3) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|p| rotation * p + translation)
                .collect(),
            triangles: self.triangles.clone(),
            symmetry: self.symmetry.clone(),
        }
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        let mut m = Self::new(
            self.vertices.iter().map(|p| p * s).collect(),
            self.triangles.clone(),
        )?;
        m.symmetry = self.symmetry.clone();
        Ok(m)
    }

    pub fn centroid(&self) -> Vec3 {
        if self.vertices.is_empty() {
            return Vec3::zeros();
        }
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    /// Reads the `v`/`f` subset of Wavefront OBJ. Faces must be triangles;
    /// `f 1/2/3` style references use only the position index.
    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text).map_err(|e| match e {
            Error::Format(msg) => Error::parse(path, msg),
            other => other,
        })
    }

    pub fn parse_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let coords: Vec<f64> = it
                        .take(3)
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
                    if coords.len() != 3 {
                        return Err(Error::Format(format!(
                            "line {}: vertex needs 3 coordinates",
                            lineno + 1
                        )));
                    }
                    vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|tok| {
                            tok.split('/')
                                .next()
                                .unwrap_or("")
                                .parse::<usize>()
                                .ok()
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(|| {
                                    Error::Format(format!(
                                        "line {}: bad face index {tok:?}",
                                        lineno + 1
                                    ))
                                })
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(Error::Format(format!(
                            "line {}: only triangle faces are supported",
                            lineno + 1
                        )));
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles)
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for p in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }
}

fn triangle_area(vertices: &[Vec3], tri: &[usize; 3]) -> f64 {
    let pa = vertices[tri[0]];
    0.5 * (vertices[tri[1]] - pa)
        .cross(&(vertices[tri[2]] - pa))
        .norm()
}

/// Union-find labelling of vertices connected through the given triangles.
pub(crate) fn components_from_triangles<'a>(
    n: usize,
    triangles: impl Iterator<Item = &'a [usize; 3]>,
) -> (Vec<usize>, usize) {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for tri in triangles {
        for k in 1..3 {
            let a = find(&mut parent, tri[0]);
            let b = find(&mut parent, tri[k]);
            if a != b {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                parent[hi] = lo;
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    for i in 0..n {
        let root = find(&mut parent, i);
        if label[root] == usize::MAX {
            label[root] = count;
            count += 1;
        }
        label[i] = label[root];
    }
    (label, count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_degenerate_and_out_of_range() {
        let v = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 2]]),
            Err(Error::DegenerateTriangle { triangle: 0, .. })
        ));
        assert!(matches!(
            TriangleMesh::new(v, vec![[0, 1, 3]]),
            Err(Error::IndexOutOfRange { index: 3, .. })
        ));
    }

    #[test]
    fn obj_round_trip() {
        let m = tri();
        let back = TriangleMesh::parse_obj(&m.to_obj()).unwrap();
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.vertices(), m.vertices());
        let slashed = TriangleMesh::parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3\n").unwrap();
        assert_eq!(slashed.triangles(), &[[0, 1, 2]]);
        assert!(TriangleMesh::parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n").is_err());
    }

    #[test]
    fn normals_and_components() {
        let m = tri();
        for n in m.vertex_normals() {
            assert!((n - Vec3::z()).norm() < 1e-15);
        }
        let two = TriangleMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(5.0, 0.0, 0.0),
                Vec3::new(6.0, 0.0, 0.0),
                Vec3::new(5.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let (labels, count) = two.connected_components();
        assert_eq!(count, 2);
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn symmetry_map_validation() {
        assert!(SymmetryMap::new(vec![1, 0, 2]).is_ok());
        assert!(SymmetryMap::new(vec![1, 2, 0]).is_err());
        assert!(SymmetryMap::from_pairs(3, &[(0, 1)]).is_err());
        let m = SymmetryMap::from_pairs(4, &[(0, 1), (2, 2), (3, 3)]).unwrap();
        assert_eq!(m.as_slice(), &[1, 0, 2, 3]);
        assert_eq!(m.pairs(), vec![(0, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn symmetry_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sym.txt");
        let m = SymmetryMap::new(vec![1, 0, 3, 2, 4]).unwrap();
        m.save(&path).unwrap();
        assert_eq!(SymmetryMap::load(&path).unwrap(), m);
    }
}
