//! Hole filling: statistical + gradient-domain inpainting, zero-gradient
//! extrapolation and the eyeball specular fix.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gradient::build_gradient_operator;
use crate::mesh::{SymmetryMap, TriangleMesh};
use crate::model::{build_pca, fit_coefficients, generate, LinearAlbedoModel};
use crate::par;
use crate::poisson::PoissonProblem;
use crate::signal::VertexSignal;
use crate::sparse::SparseOperator;

/// Per-vertex flag; `true` marks a missing or artefact vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexMask {
    masked: Vec<bool>,
}

impl VertexMask {
    pub fn new(masked: Vec<bool>) -> Self {
        Self { masked }
    }

    pub fn empty(n: usize) -> Self {
        Self { masked: vec![false; n] }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut masked = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(Error::Validation(format!("mask index {i} out of range for {n} vertices")));
            }
            masked[i] = true;
        }
        Ok(Self { masked })
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.masked
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i]
    }

    pub fn count(&self) -> usize {
        self.masked.iter().filter(|m| **m).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.masked.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.masked.len() as f64
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&i| self.masked[i]).collect()
    }

    pub fn unmasked(&self) -> Vec<bool> {
        self.masked.iter().map(|m| !m).collect()
    }

    /// Whitespace-separated 0-based vertex indices; `#` starts a comment.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let mut idx = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                idx.push(tok.parse::<usize>().map_err(|e| Error::Format(format!("mask index '{tok}': {e}")))?);
            }
        }
        Self::from_indices(n, &idx)
    }

    pub fn load(path: impl AsRef<Path>, n: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, n).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        self.indices().iter().map(|i| format!("{i}\n")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TriangleClasses {
    pub all_masked: Vec<usize>,
    pub all_unmasked: Vec<usize>,
    pub mixed: Vec<usize>,
}

pub fn classify_triangles(mesh: &TriangleMesh, mask: &VertexMask) -> Result<TriangleClasses> {
    check_mask(mesh, mask)?;
    let mut out = TriangleClasses::default();
    for (j, tri) in mesh.triangles().iter().enumerate() {
        let k = tri.iter().filter(|&&v| mask.is_masked(v)).count();
        match k {
            0 => out.all_unmasked.push(j),
            3 => out.all_masked.push(j),
            _ => out.mixed.push(j),
        }
    }
    Ok(out)
}

fn check_mask(mesh: &TriangleMesh, mask: &VertexMask) -> Result<()> {
    if mask.len() != mesh.n_vertices() {
        return Err(Error::MismatchedDimensions(format!(
            "mask has {} entries for {} vertices",
            mask.len(),
            mesh.n_vertices()
        )));
    }
    Ok(())
}

fn check_signal(mesh: &TriangleMesh, s: &VertexSignal) -> Result<()> {
    if s.n() != mesh.n_vertices() {
        return Err(Error::MismatchedDimensions(format!(
            "signal has {} rows for {} vertices",
            s.n(),
            mesh.n_vertices()
        )));
    }
    Ok(())
}

/// Fills masked vertices so that their gradients follow the model fit
/// to the unmasked part, while mixed triangles are encouraged to be flat.
/// Non-masked vertices are kept exactly.
pub fn hybrid_inpaint(
    mesh: &TriangleMesh,
    stitched: &VertexSignal,
    mask: &VertexMask,
    model: &LinearAlbedoModel,
) -> Result<VertexSignal> {
    let g = build_gradient_operator(mesh)?;
    hybrid_inpaint_with(mesh, &g, stitched, mask, model)
}

pub fn hybrid_inpaint_with(
    mesh: &TriangleMesh,
    g: &SparseOperator,
    stitched: &VertexSignal,
    mask: &VertexMask,
    model: &LinearAlbedoModel,
) -> Result<VertexSignal> {
    check_signal(mesh, stitched)?;
    let classes = classify_triangles(mesh, mask)?;
    let b = fit_coefficients(model, stitched, Some(mask.as_slice()))?;
    if mask.count() == 0 {
        return Ok(stitched.clone());
    }
    let stat = generate(model, &b)?;
    let c = stitched.channels();
    let mut targets = VertexSignal::zeros(g.rows(), c);
    for &j in &classes.all_masked {
        for axis in 0..3 {
            let r = 3 * j + axis;
            let (cols, vals) = g.row(r);
            for ch in 0..c {
                let d: f64 = cols.iter().zip(vals).map(|(&i, &w)| w * stat.get(i, ch)).sum();
                targets.set(r, ch, d);
            }
        }
    }
    let mut gmask = vec![false; mesh.n_triangles()];
    for &j in classes.all_masked.iter().chain(&classes.mixed) {
        gmask[j] = true;
    }
    let fixed = mask.unmasked();
    PoissonProblem::new(g, &targets, &gmask).pinned(&fixed, stitched).solve()
}

/// Harmonic extension into `unseen` vertices: zero target gradient on every
/// triangle touching an unseen vertex, seen vertices kept.
pub fn zero_gradient_fill(mesh: &TriangleMesh, signal: &VertexSignal, unseen: &VertexMask) -> Result<VertexSignal> {
    check_signal(mesh, signal)?;
    check_mask(mesh, unseen)?;
    if unseen.count() == 0 {
        return Ok(signal.clone());
    }
    let g = build_gradient_operator(mesh)?;
    let gmask: Vec<bool> = mesh
        .triangles()
        .iter()
        .map(|t| t.iter().any(|&v| unseen.is_masked(v)))
        .collect();
    let targets = VertexSignal::zeros(g.rows(), signal.channels());
    let fixed = unseen.unmasked();
    PoissonProblem::new(&g, &targets, &gmask).pinned(&fixed, signal).solve()
}

/// Nearest-rank 95th percentile: element `ceil(0.95 m)` (1-based) of the
/// ascending values.
pub fn percentile95(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    let rank = (95 * m).div_ceil(100).max(1);
    values[rank - 1]
}

/// Replaces every region value, per channel, with the region's robust
/// maximum.
pub fn eyeball_specular_fix(signal: &VertexSignal, region: &VertexMask) -> Result<VertexSignal> {
    if region.len() != signal.n() {
        return Err(Error::MismatchedDimensions(format!(
            "region has {} entries for {} vertices",
            region.len(),
            signal.n()
        )));
    }
    let idx = region.indices();
    if idx.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut out = signal.clone();
    for ch in 0..signal.channels() {
        let mut vals: Vec<f64> = idx.iter().map(|&i| signal.get(i, ch)).collect();
        let p = percentile95(&mut vals);
        for &i in &idx {
            out.set(i, ch, p);
        }
    }
    Ok(out)
}

/// Masked entries replaced by the per-vertex mean over samples in which the
/// vertex is not masked. Vertices masked everywhere take the channel mean of
/// all unmasked entries.
pub fn average_fill(samples: &[VertexSignal], masks: &[VertexMask]) -> Result<Vec<VertexSignal>> {
    if samples.len() != masks.len() {
        return Err(Error::MismatchedDimensions(format!(
            "{} samples but {} masks",
            samples.len(),
            masks.len()
        )));
    }
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let (n, c) = (first.n(), first.channels());
    for (s, m) in samples.iter().zip(masks) {
        if s.n() != n || s.channels() != c || m.len() != n {
            return Err(Error::MismatchedDimensions("samples and masks must share one template".into()));
        }
    }
    let mut sum = VertexSignal::zeros(n, c);
    let mut count = vec![0usize; n];
    let mut global = vec![0.0; c];
    let mut global_count = 0usize;
    for (s, m) in samples.iter().zip(masks) {
        for i in (0..n).filter(|&i| !m.is_masked(i)) {
            count[i] += 1;
            global_count += 1;
            for (ch, g) in global.iter_mut().enumerate() {
                sum.set(i, ch, sum.get(i, ch) + s.get(i, ch));
                *g += s.get(i, ch);
            }
        }
    }
    if global_count == 0 {
        return Err(Error::AllMasked);
    }
    let fill = VertexSignal::from_fn(n, c, |i, ch| {
        if count[i] > 0 {
            sum.get(i, ch) / count[i] as f64
        } else {
            global[ch] / global_count as f64
        }
    });
    Ok(samples
        .iter()
        .zip(masks)
        .map(|(s, m)| {
            let mut out = s.clone();
            for i in m.indices() {
                out.row_mut(i).copy_from_slice(fill.row(i));
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct InpaintIterations {
    /// Preliminary model followed by one model per iteration.
    pub models: Vec<LinearAlbedoModel>,
    pub completed: Vec<VertexSignal>,
}

/// Builds a preliminary model from average-filled samples, then alternates
/// hybrid inpainting of every sample and rebuilding the model.
pub fn iterate_model_inpaint(
    mesh: &TriangleMesh,
    samples: &[VertexSignal],
    masks: &[VertexMask],
    d: usize,
    iterations: usize,
    symmetry: Option<&SymmetryMap>,
) -> Result<InpaintIterations> {
    let mut completed = average_fill(samples, masks)?;
    let mut model = build_pca(&completed, d, symmetry)?;
    let mut models = vec![model.clone()];
    if iterations == 0 {
        return Ok(InpaintIterations { models, completed });
    }
    let g = build_gradient_operator(mesh)?;
    for _ in 0..iterations {
        completed = par::map_range(samples.len(), |k| hybrid_inpaint_with(mesh, &g, &samples[k], &masks[k], &model))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        model = build_pca(&completed, d, symmetry)?;
        models.push(model.clone());
    }
    Ok(InpaintIterations { models, completed })
}
