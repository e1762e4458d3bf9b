//! Per-triangle gradient operator for piecewise-linear vertex functions.

use crate::error::{Error, Result};
use crate::mesh::{TriangleMesh, DEGENERATE_AREA};
use crate::signal::VertexSignal;
use crate::sparse::SparseOperator;

/// Builds `G` of shape `3t x n`. Rows `3j..3j+3` hold the x, y, z components
/// of the gradient of the linear interpolant over triangle `j`.
///
/// For triangle `(a, b, c)` with unit normal `n`, the gradient of the hat
/// function at `a` is `n x (p_c - p_b) / (2 * area)`, and cyclically for `b`
/// and `c`. Every row stores its three entries, including exact zeros.
pub fn build_gradient_operator(mesh: &TriangleMesh) -> Result<SparseOperator> {
    let t = mesh.n_triangles();
    let verts = mesh.vertices();
    let mut triplets = Vec::with_capacity(9 * t);
    for (j, tri) in mesh.triangles().iter().enumerate() {
        let cross = mesh.triangle_cross(j);
        let twice_area = cross.norm();
        if !(0.5 * twice_area >= DEGENERATE_AREA) {
            return Err(Error::DegenerateTriangle {
                triangle: j,
                area: 0.5 * twice_area,
            });
        }
        let unit = cross / twice_area;
        for k in 0..3 {
            let v = tri[k];
            let opposite = verts[tri[(k + 2) % 3]] - verts[tri[(k + 1) % 3]];
            let grad = unit.cross(&opposite) / twice_area;
            for axis in 0..3 {
                triplets.push((3 * j + axis, v, grad[axis]));
            }
        }
    }
    SparseOperator::from_triplets(3 * t, mesh.n_vertices(), triplets)
}

/// Applies `G` to every channel: returns a `3t x c` signal.
pub fn apply_gradient(g: &SparseOperator, signal: &VertexSignal) -> Result<VertexSignal> {
    if g.cols() != signal.n() {
        return Err(Error::MismatchedDimensions(format!(
            "operator has {} columns, signal has {} rows",
            g.cols(),
            signal.n()
        )));
    }
    let c = signal.channels();
    let mut out = VertexSignal::zeros(g.rows(), c);
    for ch in 0..c {
        out.set_column(ch, &g.mul_vec(&signal.column(ch)));
    }
    Ok(out)
}
