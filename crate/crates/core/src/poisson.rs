//! Gradient-domain least squares on meshes: view selection, screened
//! Poisson solves, and multi-view stitching.

use crate::error::{Error, Result};
use crate::gradient::build_gradient_operator;
use crate::mesh::{components_from_triangles, TriangleMesh};
use crate::par;
use crate::sampling::ViewSample;
use crate::signal::VertexSignal;
use crate::solver::{SpdSolver, SymmetricMatrix};
use crate::sparse::SparseOperator;

pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Per-triangle owning view: `1..=k` for a view, `k + 1` for "no view".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriangleSelection {
    pub owner: Vec<usize>,
    pub views: usize,
}

impl TriangleSelection {
    /// Triangle counts `m_1..m_{k+1}`; they sum to `t`.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.views + 1];
        for &o in &self.owner {
            c[o - 1] += 1;
        }
        c
    }

    pub fn unselected(&self) -> usize {
        self.views + 1
    }
}

/// Per-vertex owning view: `1..=k`, or `0` where no view has positive weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexSelection {
    pub owner: Vec<usize>,
    pub views: usize,
}

impl VertexSelection {
    pub fn owned_by(&self, view: usize) -> impl Iterator<Item = usize> + '_ {
        self.owner
            .iter()
            .enumerate()
            .filter(move |&(_, &o)| o == view)
            .map(|(i, _)| i)
    }
}

/// Highest-weight view per index; ties go to the lowest view. Returns 0 when
/// every weight is zero.
fn argmax_owner<'a>(weights: impl Iterator<Item = &'a [f64]>, len: usize) -> Vec<usize> {
    let mut best = vec![0.0f64; len];
    let mut owner = vec![0usize; len];
    for (v, w) in weights.enumerate() {
        for i in 0..len {
            if w[i] > best[i] {
                best[i] = w[i];
                owner[i] = v + 1;
            }
        }
    }
    owner
}

pub fn build_selections(samples: &[ViewSample]) -> Result<(TriangleSelection, VertexSelection)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::MismatchedDimensions("no view samples".into()))?;
    let (n, t) = (first.n(), first.t());
    for (v, s) in samples.iter().enumerate() {
        if s.n() != n || s.t() != t || s.colors.n() != n {
            return Err(Error::MismatchedDimensions(format!(
                "view {} has n={}, t={}; expected n={n}, t={t}",
                v + 1,
                s.n(),
                s.t()
            )));
        }
    }
    let k = samples.len();
    let mut tri = argmax_owner(samples.iter().map(|s| s.triangle_weight.as_slice()), t);
    for o in &mut tri {
        if *o == 0 {
            *o = k + 1;
        }
    }
    let vert = argmax_owner(samples.iter().map(|s| s.vertex_weight.as_slice()), n);
    Ok((
        TriangleSelection { owner: tri, views: k },
        VertexSelection { owner: vert, views: k },
    ))
}

/// What to do with a connected component that no screening row anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nullspace {
    #[default]
    Reject,
    /// Return the minimum-norm least-squares solution on such components.
    MinimumNorm,
}

/// A masked-gradient least-squares problem on mesh vertices:
///
/// minimise `sum_j in mask ||G_j x - b_j||^2 + w^2 sum_s (x_s - y_s)^2`
///
/// per channel, where `G_j` are the three gradient rows of triangle `j`.
/// Vertices in `fixed` are hard constraints and are not unknowns.
#[derive(Debug, Clone)]
pub struct PoissonProblem<'a> {
    pub gradient: &'a SparseOperator,
    /// `3t x c` target gradients; rows of unmasked triangles are ignored.
    pub targets: &'a VertexSignal,
    pub gradient_mask: &'a [bool],
    pub screen_vertices: &'a [usize],
    /// `|screen_vertices| x c`.
    pub screen_values: Option<&'a VertexSignal>,
    pub screen_weight: f64,
    /// Hard constraints: `fixed[i]` pins vertex `i` to `fixed_values` row `i`.
    pub fixed: Option<(&'a [bool], &'a VertexSignal)>,
    pub nullspace: Nullspace,
}

impl<'a> PoissonProblem<'a> {
    pub fn new(gradient: &'a SparseOperator, targets: &'a VertexSignal, gradient_mask: &'a [bool]) -> Self {
        Self {
            gradient,
            targets,
            gradient_mask,
            screen_vertices: &[],
            screen_values: None,
            screen_weight: 0.0,
            fixed: None,
            nullspace: Nullspace::Reject,
        }
    }

    pub fn screened(mut self, vertices: &'a [usize], values: &'a VertexSignal, weight: f64) -> Self {
        self.screen_vertices = vertices;
        self.screen_values = Some(values);
        self.screen_weight = weight;
        self
    }

    pub fn pinned(mut self, fixed: &'a [bool], values: &'a VertexSignal) -> Self {
        self.fixed = Some((fixed, values));
        self
    }

    pub fn with_nullspace(mut self, nullspace: Nullspace) -> Self {
        self.nullspace = nullspace;
        self
    }

    fn validate(&self) -> Result<(usize, usize, usize)> {
        let g = self.gradient;
        let n = g.cols();
        if !g.rows().is_multiple_of(3) {
            return Err(Error::MismatchedDimensions("gradient rows not a multiple of 3".into()));
        }
        let t = g.rows() / 3;
        let c = self.targets.channels();
        if self.targets.n() != g.rows() {
            return Err(Error::MismatchedDimensions(format!(
                "targets have {} rows, operator has {}",
                self.targets.n(),
                g.rows()
            )));
        }
        if self.gradient_mask.len() != t {
            return Err(Error::MismatchedDimensions(format!(
                "gradient mask has {} entries for {t} triangles",
                self.gradient_mask.len()
            )));
        }
        if let Some(vals) = self.screen_values {
            if vals.n() != self.screen_vertices.len() || vals.channels() != c {
                return Err(Error::MismatchedDimensions("screen values shape".into()));
            }
        } else if !self.screen_vertices.is_empty() {
            return Err(Error::MismatchedDimensions("screen vertices without values".into()));
        }
        if let Some(&s) = self.screen_vertices.iter().find(|&&s| s >= n) {
            return Err(Error::MismatchedDimensions(format!("screen vertex {s} out of range")));
        }
        if let Some((fixed, vals)) = self.fixed {
            if fixed.len() != n || vals.n() != n || vals.channels() != c {
                return Err(Error::MismatchedDimensions("fixed vertex data shape".into()));
            }
        }
        Ok((n, t, c))
    }

    /// Solves by normal equations with one factorisation shared across
    /// channels.
    pub fn solve(&self) -> Result<VertexSignal> {
        let (n, t, c) = self.validate()?;
        let g = self.gradient;
        let is_fixed = |i: usize| self.fixed.is_some_and(|(f, _)| f[i]);

        // unknown numbering over free vertices
        let mut unknown = vec![usize::MAX; n];
        let mut free = Vec::new();
        for i in 0..n {
            if !is_fixed(i) {
                unknown[i] = free.len();
                free.push(i);
            }
        }
        let nf = free.len();
        let mut out = match self.fixed {
            Some((_, vals)) => {
                let mut o = VertexSignal::zeros(n, c);
                for i in (0..n).filter(|&i| is_fixed(i)) {
                    o.row_mut(i).copy_from_slice(vals.row(i));
                }
                o
            }
            None => VertexSignal::zeros(n, c),
        };
        if nf == 0 {
            return Ok(out);
        }

        // components of free vertices joined through included triangles
        let tri_vertices: Vec<[usize; 3]> = (0..t)
            .filter(|&j| self.gradient_mask[j])
            .map(|j| triangle_columns(g, j))
            .collect();
        let free_links: Vec<[usize; 3]> = tri_vertices
            .iter()
            .map(|tri| {
                let frees: Vec<usize> = tri.iter().filter(|&&v| !is_fixed(v)).map(|&v| unknown[v]).collect();
                match frees.len() {
                    0 => [0, 0, 0],
                    1 => [frees[0]; 3],
                    2 => [frees[0], frees[1], frees[1]],
                    _ => [frees[0], frees[1], frees[2]],
                }
            })
            .zip(&tri_vertices)
            .filter(|(_, tri)| tri.iter().any(|&v| !is_fixed(v)))
            .map(|(l, _)| l)
            .collect();
        let (label, ncomp) = components_from_triangles(nf, free_links.iter());
        let mut anchored = vec![false; ncomp];
        for &s in self.screen_vertices {
            if !is_fixed(s) && self.screen_weight > 0.0 {
                anchored[label[unknown[s]]] = true;
            }
        }
        if self.fixed.is_some() {
            for tri in &tri_vertices {
                if tri.iter().any(|&v| is_fixed(v)) {
                    for &v in tri.iter().filter(|&&v| !is_fixed(v)) {
                        anchored[label[unknown[v]]] = true;
                    }
                }
            }
        }
        let mut extra_pins = Vec::new();
        if let Some(comp) = anchored.iter().position(|a| !a) {
            match self.nullspace {
                Nullspace::Reject => {
                    let v = free[label.iter().position(|&l| l == comp).unwrap()];
                    return Err(Error::SingularSystem(format!(
                        "connected component containing vertex {v} has no screening or pinned constraint"
                    )));
                }
                Nullspace::MinimumNorm => {
                    for (comp, _) in anchored.iter().enumerate().filter(|(_, a)| !**a) {
                        let first = label.iter().position(|&l| l == comp).unwrap();
                        extra_pins.push(first);
                    }
                }
            }
        }

        // normal equations
        let w2 = self.screen_weight * self.screen_weight;
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut rhs = vec![vec![0.0; nf]; c];
        for j in (0..t).filter(|&j| self.gradient_mask[j]) {
            for axis in 0..3 {
                let r = 3 * j + axis;
                let (cols, vals) = g.row(r);
                for a in 0..cols.len() {
                    let ua = unknown[cols[a]];
                    if ua == usize::MAX {
                        continue;
                    }
                    for b in a..cols.len() {
                        let ub = unknown[cols[b]];
                        if ub == usize::MAX {
                            continue;
                        }
                        let (lo, hi) = if ua <= ub { (ua, ub) } else { (ub, ua) };
                        triplets.push((lo, hi, vals[a] * vals[b]));
                    }
                }
                for ch in 0..c {
                    let mut target = self.targets.get(r, ch);
                    if let Some((fixed, fv)) = self.fixed {
                        for (&col, &v) in cols.iter().zip(vals) {
                            if fixed[col] {
                                target -= v * fv.get(col, ch);
                            }
                        }
                    }
                    for (&col, &v) in cols.iter().zip(vals) {
                        let u = unknown[col];
                        if u != usize::MAX {
                            rhs[ch][u] += v * target;
                        }
                    }
                }
            }
        }
        if w2 > 0.0 {
            let vals = self.screen_values.expect("validated");
            for (k, &s) in self.screen_vertices.iter().enumerate() {
                let u = unknown[s];
                if u == usize::MAX {
                    continue;
                }
                triplets.push((u, u, w2));
                for ch in 0..c {
                    rhs[ch][u] += w2 * vals.get(k, ch);
                }
            }
        }
        for &u in &extra_pins {
            triplets.push((u, u, 1.0));
        }
        let matrix = SymmetricMatrix::from_triplets(nf, &triplets);
        let solver = SpdSolver::new(matrix)?;
        let columns: Vec<Result<Vec<f64>>> = par::map_range(c, |ch| solver.solve(&rhs[ch]));
        for (ch, col) in columns.into_iter().enumerate() {
            let mut col = col?;
            if !extra_pins.is_empty() {
                remove_component_means(&mut col, &label, ncomp, &anchored);
            }
            for (u, &v) in free.iter().enumerate() {
                out.set(v, ch, col[u]);
            }
        }
        Ok(out)
    }
}

fn triangle_columns(g: &SparseOperator, j: usize) -> [usize; 3] {
    let (cols, _) = g.row(3 * j);
    [cols[0], cols[1], cols[2]]
}

fn remove_component_means(x: &mut [f64], label: &[usize], ncomp: usize, anchored: &[bool]) {
    let mut sum = vec![0.0; ncomp];
    let mut count = vec![0usize; ncomp];
    for (u, &l) in label.iter().enumerate() {
        sum[l] += x[u];
        count[l] += 1;
    }
    for (u, &l) in label.iter().enumerate() {
        if !anchored[l] {
            x[u] -= sum[l] / count[l] as f64;
        }
    }
}

/// Least-squares minimiser of the stacked system of masked gradient rows
/// and `screen_weight`-scaled indicator rows, per channel.
pub fn solve_screened_poisson(
    g: &SparseOperator,
    target_gradients: &VertexSignal,
    gradient_row_mask: &[bool],
    screen_vertices: &[usize],
    screen_values: &VertexSignal,
    screen_weight: f64,
) -> Result<VertexSignal> {
    PoissonProblem::new(g, target_gradients, gradient_row_mask)
        .screened(screen_vertices, screen_values, screen_weight)
        .solve()
}

/// Gradient-domain fusion of several views.
///
/// Each triangle takes its target gradient from the view that owns it;
/// triangles no view sees target zero gradient. Vertices owned by the
/// reference view are screened to its colours with weight `lambda`.
/// `reference_view` is 1-based.
pub fn stitch(
    mesh: &TriangleMesh,
    samples: &[ViewSample],
    reference_view: usize,
    lambda: f64,
) -> Result<VertexSignal> {
    let g = build_gradient_operator(mesh)?;
    stitch_with_operator(mesh, &g, samples, reference_view, lambda)
}

pub fn stitch_with_operator(
    mesh: &TriangleMesh,
    g: &SparseOperator,
    samples: &[ViewSample],
    reference_view: usize,
    lambda: f64,
) -> Result<VertexSignal> {
    let (tsel, vsel) = build_selections(samples)?;
    let (n, t) = (mesh.n_vertices(), mesh.n_triangles());
    if samples[0].n() != n || samples[0].t() != t {
        return Err(Error::MismatchedDimensions("samples do not match the mesh".into()));
    }
    let k = samples.len();
    if reference_view == 0 || reference_view > k {
        return Err(Error::Validation(format!(
            "reference view {reference_view} outside 1..={k}"
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::Validation(format!("screening weight must be positive, got {lambda}")));
    }
    let c = samples[0].colors.channels();
    let mut targets = VertexSignal::zeros(3 * t, c);
    for (v, sample) in samples.iter().enumerate() {
        let view = v + 1;
        let cols: Vec<Vec<f64>> = (0..c).map(|ch| sample.colors.column(ch)).collect();
        for j in (0..t).filter(|&j| tsel.owner[j] == view) {
            for axis in 0..3 {
                let r = 3 * j + axis;
                let (idx, vals) = g.row(r);
                for (ch, col) in cols.iter().enumerate() {
                    let d: f64 = idx.iter().zip(vals).map(|(&i, &w)| w * col[i]).sum();
                    targets.set(r, ch, d);
                }
            }
        }
    }
    let screen: Vec<usize> = vsel.owned_by(reference_view).collect();
    if screen.is_empty() {
        return Err(Error::NoReferenceCoverage(reference_view));
    }
    let reference = &samples[reference_view - 1].colors;
    let screen_values = VertexSignal::from_fn(screen.len(), c, |k, ch| reference.get(screen[k], ch));
    let mask = vec![true; t];
    solve_screened_poisson(g, &targets, &mask, &screen, &screen_values, lambda)
}
