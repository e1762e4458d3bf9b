//! Image formation, random model renders and ambient albedo fitting.

use nalgebra::{DMatrix, DVector, Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::camera::CameraView;
use crate::color::{gamma_decode_signal, GAMMA};
use crate::error::{Error, Result};
use crate::inpaint::VertexMask;
use crate::mesh::{TriangleMesh, Vec3};
use crate::model::{LinearAlbedoModel, PairedAlbedoModel};
use crate::par;
use crate::raster::{render_vertex_colors, LinearImage};
use crate::signal::VertexSignal;
use crate::synth::look_at_camera;
use crate::linalg::ThinSvd;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LightKind {
    Ambient,
    /// Unit direction from the surface towards the light.
    Directional(Vec3),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Illumination {
    pub kind: LightKind,
    pub colour: [f64; 3],
}

fn check_colour(colour: [f64; 3]) -> Result<()> {
    if colour.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::Validation(format!("light colour {colour:?} must be finite and nonnegative")));
    }
    Ok(())
}

impl Illumination {
    pub fn ambient(colour: [f64; 3]) -> Result<Self> {
        check_colour(colour)?;
        Ok(Self {
            kind: LightKind::Ambient,
            colour,
        })
    }

    pub fn directional(colour: [f64; 3], direction: Vec3) -> Result<Self> {
        check_colour(colour)?;
        if !direction.iter().all(|v| v.is_finite()) || (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("light direction {direction:?} must be a unit vector")));
        }
        Ok(Self {
            kind: LightKind::Directional(direction),
            colour,
        })
    }

    /// White light along +z, facing a camera on the +z axis.
    pub fn frontal_white() -> Self {
        Self {
            kind: LightKind::Directional(Vec3::new(0.0, 0.0, 1.0)),
            colour: [1.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadingParams {
    pub shininess: f64,
}

impl Default for ShadingParams {
    fn default() -> Self {
        Self { shininess: 20.0 }
    }
}

/// Per-vertex diffuse and specular light intensities (before albedo).
pub fn light_terms(normal: &Vec3, illum: &Illumination, view_dir: &Vec3, params: &ShadingParams) -> ([f64; 3], [f64; 3]) {
    match illum.kind {
        LightKind::Ambient => (illum.colour, [0.0; 3]),
        LightKind::Directional(l) => {
            let nl = normal.dot(&l).max(0.0);
            let h = (l + view_dir).try_normalize(0.0).unwrap_or(l);
            let nh = normal.dot(&h).max(0.0);
            let s = if nl > 0.0 { nh.powf(params.shininess) } else { 0.0 };
            (illum.colour.map(|c| c * nl), illum.colour.map(|c| c * s))
        }
    }
}

/// `[i_diff * rho_diff + i_spec * rho_spec]^(1/2.2)` per vertex. Negative
/// albedo is clamped to zero.
pub fn shade(
    mesh: &TriangleMesh,
    diffuse: &VertexSignal,
    specular: &VertexSignal,
    illum: &Illumination,
    view_dir: &Vec3,
    params: &ShadingParams,
) -> Result<VertexSignal> {
    let n = mesh.n_vertices();
    for s in [diffuse, specular] {
        if s.n() != n || s.channels() != 3 {
            return Err(Error::MismatchedDimensions(format!(
                "albedo is {}x{}, expected {n}x3",
                s.n(),
                s.channels()
            )));
        }
    }
    let v = view_dir
        .try_normalize(0.0)
        .ok_or_else(|| Error::Validation("zero view direction".into()))?;
    let normals = mesh.vertex_normals();
    let rows = par::map_range(n, |i| {
        let (id, is) = light_terms(&normals[i], illum, &v, params);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let lin = id[c] * diffuse.get(i, c).max(0.0) + is[c] * specular.get(i, c).max(0.0);
            out[c] = lin.powf(1.0 / GAMMA);
        }
        out
    });
    Ok(VertexSignal::from_rows(&rows))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmbientFit {
    pub coefficients: Vec<f64>,
    pub ambient: [f64; 3],
    /// Final sum of squared residuals in linear space.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialisation and after every iteration.
    pub history: Vec<f64>,
}

/// Per-channel blocks of a channel-major model.
struct Blocks {
    gram: Vec<DMatrix<f64>>,
    p: Vec<DMatrix<f64>>,
    mean: Vec<DVector<f64>>,
}

fn blocks(model: &LinearAlbedoModel) -> Blocks {
    let n = model.n();
    let mut out = Blocks {
        gram: Vec::new(),
        p: Vec::new(),
        mean: Vec::new(),
    };
    for c in 0..3 {
        let p = model.components().rows(c * n, n).into_owned();
        out.gram.push(p.transpose() * &p);
        out.p.push(p);
        out.mean.push(model.mean().rows(c * n, n).into_owned());
    }
    out
}

fn albedo_channel(b: &Blocks, coeff: &DVector<f64>, c: usize) -> DVector<f64> {
    if coeff.is_empty() {
        b.mean[c].clone()
    } else {
        &b.mean[c] + &b.p[c] * coeff
    }
}

fn objective(y: &[DVector<f64>], b: &Blocks, coeff: &DVector<f64>, a: &[f64; 3]) -> f64 {
    (0..3)
        .map(|c| (&y[c] - albedo_channel(b, coeff, c) * a[c]).norm_squared())
        .sum()
}

/// Fits model coefficients and an ambient colour to observed nonlinear
/// per-vertex colours by alternating exact least-squares steps. Specular
/// shading is zero under ambient light, so only the diffuse model is
/// constrained.
pub fn fit_albedo_ambient(
    observed: &VertexSignal,
    mesh: &TriangleMesh,
    model: &PairedAlbedoModel,
    options: &FitOptions,
) -> Result<AmbientFit> {
    let n = mesh.n_vertices();
    if observed.n() != n || observed.channels() != 3 || model.n() != n {
        return Err(Error::MismatchedDimensions(format!(
            "observation {}x{}, mesh {n} vertices, model {} vertices",
            observed.n(),
            observed.channels(),
            model.n()
        )));
    }
    let lin = gamma_decode_signal(observed)?;
    let y: Vec<DVector<f64>> = (0..3).map(|c| DVector::from_vec(lin.column(c))).collect();
    let bl = blocks(&model.diffuse);
    let d = model.d();
    let mut coeff = DVector::zeros(d);
    let mut a = [1.0; 3];
    for c in 0..3 {
        let m = bl.mean[c].sum();
        if m.abs() > 1e-300 {
            a[c] = (y[c].sum() / m).max(0.0);
        }
    }
    let scale = y.iter().map(|v| v.norm_squared()).sum::<f64>().max(1e-300);
    let mut f = objective(&y, &bl, &coeff, &a);
    let mut history = vec![f];
    let mut converged = f <= 1e-30 * scale;
    let mut iterations = 0;
    let pty: Vec<DVector<f64>> = (0..3).map(|c| bl.p[c].transpose() * &y[c]).collect();
    let ptm: Vec<DVector<f64>> = (0..3).map(|c| bl.p[c].transpose() * &bl.mean[c]).collect();
    while !converged && iterations < options.max_iters {
        iterations += 1;
        if d > 0 {
            let mut lhs = DMatrix::zeros(d, d);
            let mut rhs = DVector::zeros(d);
            for c in 0..3 {
                lhs += &bl.gram[c] * (a[c] * a[c]);
                rhs += (&pty[c] - &ptm[c] * a[c]) * a[c];
            }
            coeff = match lhs.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => ThinSvd::new(&lhs)
                    .solve(&DMatrix::from_column_slice(d, 1, rhs.as_slice()), 1e-12)
                    .column(0)
                    .into_owned(),
            };
        }
        for c in 0..3 {
            let x = albedo_channel(&bl, &coeff, c);
            let xx = x.norm_squared();
            if xx > 0.0 {
                a[c] = (x.dot(&y[c]) / xx).max(0.0);
            }
        }
        let next = objective(&y, &bl, &coeff, &a);
        history.push(next);
        let decrease = (f - next) / f.max(1e-300);
        f = next;
        if decrease < options.tol || f <= 1e-30 * scale {
            converged = true;
        }
    }
    Ok(AmbientFit {
        coefficients: coeff.iter().copied().collect(),
        ambient: a,
        objective: f,
        iterations,
        converged,
        history,
    })
}

/// Mean over region vertices and channels of the squared difference.
/// `region[i] == true` includes vertex `i`; `None` uses all vertices.
pub fn albedo_mse(estimated: &VertexSignal, truth: &VertexSignal, region: Option<&VertexMask>) -> Result<f64> {
    if estimated.n() != truth.n() || estimated.channels() != truth.channels() {
        return Err(Error::MismatchedDimensions("estimate and truth differ in shape".into()));
    }
    let c = truth.channels();
    let idx: Vec<usize> = match region {
        Some(r) => {
            if r.len() != truth.n() {
                return Err(Error::MismatchedDimensions("region length".into()));
            }
            r.indices()
        }
        None => (0..truth.n()).collect(),
    };
    if idx.is_empty() || c == 0 {
        return Err(Error::EmptyRegion);
    }
    let ss: f64 = idx
        .iter()
        .flat_map(|&i| (0..c).map(move |ch| (i, ch)))
        .map(|(i, ch)| (estimated.get(i, ch) - truth.get(i, ch)).powi(2))
        .sum();
    Ok(ss / (idx.len() * c) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub count: usize,
    /// Half-width of the uniform rotation range about the vertical axis, in degrees.
    pub rotation_range_deg: f64,
    pub light: Illumination,
    pub params: ShadingParams,
    pub seed: u64,
    pub image_size: (u32, u32),
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            count: 1,
            rotation_range_deg: 30.0,
            light: Illumination::frontal_white(),
            params: ShadingParams::default(),
            seed: 0,
            image_size: (256, 256),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedSample {
    /// Coefficients in model units (sigma-scaled standard normal draws).
    pub coefficients: Vec<f64>,
    pub rotation_deg: f64,
    pub image: LinearImage,
}

/// Frontal camera framing `mesh` after centring it at the origin.
pub fn frontal_camera(mesh: &TriangleMesh, size: (u32, u32)) -> CameraView {
    let centre = mesh.centroid();
    let radius = mesh
        .vertices()
        .iter()
        .map(|p| (p - centre).norm())
        .fold(0.0, f64::max)
        .max(1e-9);
    let distance = 4.0 * radius;
    let half = size.0.min(size.1) as f64 / 2.0;
    let focal = 0.9 * half * (distance * distance - radius * radius).sqrt() / radius;
    look_at_camera(Vec3::new(0.0, 0.0, 1.0), distance, focal, size)
}

/// Renders `count` random model instances. Each draw is reproducible from
/// `seed` alone; pixel values are clamped to `[0, 1]`.
pub fn render_random_samples(
    mesh: &TriangleMesh,
    model: &PairedAlbedoModel,
    options: &RenderOptions,
) -> Result<Vec<RenderedSample>> {
    if mesh.n_vertices() != model.n() {
        return Err(Error::MismatchedDimensions("mesh and model vertex counts differ".into()));
    }
    let centred = mesh.transformed(&nalgebra::Matrix3::identity(), &(-mesh.centroid()));
    let cam = frontal_camera(&centred, options.image_size);
    let view_dir = Vec3::new(0.0, 0.0, 1.0);
    let std = model.diffuse.std_devs().to_vec();
    let draws: Vec<(Vec<f64>, f64)> = {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        (0..options.count)
            .map(|_| {
                let b: Vec<f64> = std
                    .iter()
                    .map(|s| s * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let r = options.rotation_range_deg;
                let angle = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
                (b, angle)
            })
            .collect()
    };
    draws
        .into_iter()
        .map(|(b, angle)| {
            let (diffuse, specular) = model.generate_pair(&b)?;
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::y()), angle.to_radians()).into_inner();
            let posed = centred.transformed(&rot, &Vec3::zeros());
            let shaded = shade(&posed, &diffuse, &specular, &options.light, &view_dir, &options.params)?;
            let rendering = render_vertex_colors(&posed, &cam, &shaded, [0.0; 3])?;
            let image = rendering.image.map(|p| p.map(|v| v.clamp(0.0, 1.0)));
            Ok(RenderedSample {
                coefficients: b,
                rotation_deg: angle,
                image,
            })
        })
        .collect()
}
