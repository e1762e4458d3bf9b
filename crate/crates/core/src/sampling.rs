//! Sampling a calibrated view onto mesh vertices.

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::par;
use crate::raster::{Interpolation, LinearImage};
use crate::signal::VertexSignal;
use crate::visibility::{compute_weights, triangle_min, DEFAULT_BOUNDARY_PX};

/// One view's per-vertex colours with their confidence weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSample {
    pub colors: VertexSignal,
    pub vertex_weight: Vec<f64>,
    pub triangle_weight: Vec<f64>,
}

impl ViewSample {
    /// Builds a sample from colours and vertex weights; triangle weights are
    /// the per-triangle minimum.
    pub fn new(mesh: &TriangleMesh, colors: VertexSignal, vertex_weight: Vec<f64>) -> Result<Self> {
        if colors.n() != mesh.n_vertices() || vertex_weight.len() != mesh.n_vertices() {
            return Err(Error::MismatchedDimensions(format!(
                "view sample has {} colours and {} weights for {} vertices",
                colors.n(),
                vertex_weight.len(),
                mesh.n_vertices()
            )));
        }
        if let Some(w) = vertex_weight.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::Validation(format!("negative or NaN view weight {w}")));
        }
        let triangle_weight = triangle_min(mesh, &vertex_weight);
        Ok(Self {
            colors,
            vertex_weight,
            triangle_weight,
        })
    }

    pub fn n(&self) -> usize {
        self.vertex_weight.len()
    }

    pub fn t(&self) -> usize {
        self.triangle_weight.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplingOptions {
    pub boundary_px: f64,
    pub interpolation: Interpolation,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            boundary_px: DEFAULT_BOUNDARY_PX,
            interpolation: Interpolation::Bilinear,
        }
    }
}

/// Samples `image` (already linear RGB) at the projections of visible
/// vertices. Rows with zero weight are zero.
pub fn sample_view(
    mesh: &TriangleMesh,
    cam: &CameraView,
    image: &LinearImage,
    visibility: &[bool],
    options: &SamplingOptions,
) -> Result<ViewSample> {
    if (image.width(), image.height()) != cam.image_size() {
        return Err(Error::MismatchedDimensions(format!(
            "image is {}x{} but camera expects {:?}",
            image.width(),
            image.height(),
            cam.image_size()
        )));
    }
    if visibility.len() != mesh.n_vertices() {
        return Err(Error::MismatchedDimensions("visibility length".into()));
    }
    let (mut vertex_weight, _) = compute_weights(mesh, cam, visibility, options.boundary_px);
    let verts = mesh.vertices();
    let rows = par::map_range(mesh.n_vertices(), |i| {
        if vertex_weight[i] <= 0.0 {
            return None;
        }
        let (pixel, _) = cam.project(&verts[i]);
        image.sample(&pixel, options.interpolation)
    });
    let mut colors = VertexSignal::zeros(mesh.n_vertices(), 3);
    for (i, row) in rows.into_iter().enumerate() {
        match row {
            Some(rgb) => colors.row_mut(i).copy_from_slice(&rgb),
            None => vertex_weight[i] = 0.0,
        }
    }
    ViewSample::new(mesh, colors, vertex_weight)
}
