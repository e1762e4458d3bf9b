//! Pinhole cameras with two-term radial distortion, and DLT calibration.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Rotation3, Vector2, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::mesh::{TriangleMesh, Vec3};
use crate::linalg::ThinSvd;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    intrinsics: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vec3,
    distortion: [f64; 2],
    image_size: (u32, u32),
}

/// A projected point: pixel coordinates and depth along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

impl Projection {
    pub fn in_front(&self) -> bool {
        self.depth > 0.0
    }
}

impl CameraView {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vec3,
        distortion: [f64; 2],
        image_size: (u32, u32),
    ) -> Result<Self> {
        let orth = (rotation * rotation.transpose() - Matrix3::identity()).abs().max();
        if !(orth <= 1e-9) {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (deviation {orth:e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidCamera("rotation determinant is not +1".into()));
        }
        if !(intrinsics[(0, 0)] > 0.0 && intrinsics[(1, 1)] > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if intrinsics[(1, 0)] != 0.0
            || intrinsics[(2, 0)] != 0.0
            || intrinsics[(2, 1)] != 0.0
            || intrinsics[(2, 2)] != 1.0
        {
            return Err(Error::InvalidCamera(
                "intrinsics must be upper triangular with K[2][2] = 1".into(),
            ));
        }
        if !(intrinsics.iter().all(|v| v.is_finite())
            && translation.iter().all(|v| v.is_finite())
            && distortion.iter().all(|v| v.is_finite()))
        {
            return Err(Error::InvalidCamera("non-finite parameter".into()));
        }
        Ok(Self {
            intrinsics,
            rotation,
            translation,
            distortion,
            image_size,
        })
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn distortion(&self) -> [f64; 2] {
        self.distortion
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    /// Camera centre in world coordinates, `-R^T t`.
    pub fn centre(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// `K [R | t]`, ignoring distortion.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &self.translation);
        self.intrinsics * rt
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Perspective projection; distortion is applied to the normalised
    /// coordinates before the intrinsics. Points with `depth <= 0` still get a
    /// pixel value but should be treated as invalid.
    pub fn project(&self, p: &Vec3) -> (Vector2<f64>, f64) {
        let pc = self.to_camera(p);
        let proj = project_camera_point(&self.intrinsics, self.distortion, &pc);
        (proj, pc.z)
    }

    pub fn in_image(&self, pixel: &Vector2<f64>) -> bool {
        let (w, h) = self.image_size;
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x <= (w as f64 - 1.0) && pixel.y <= (h as f64 - 1.0)
    }

    /// Parses the ASCII camera format: 9 intrinsics (row-major), 9 rotation
    /// (row-major), 3 translation, 2 distortion coefficients, width, height.
    pub fn parse(text: &str) -> Result<Self> {
        let nums: Vec<f64> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace)
            .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("{t:?}: {e}"))))
            .collect::<Result<_>>()?;
        if nums.len() != 25 {
            return Err(Error::Format(format!(
                "camera file needs 25 numbers, found {}",
                nums.len()
            )));
        }
        let k = Matrix3::from_row_slice(&nums[0..9]);
        let r = Matrix3::from_row_slice(&nums[9..18]);
        let t = Vec3::new(nums[18], nums[19], nums[20]);
        let (w, h) = (nums[23], nums[24]);
        if !(w >= 1.0 && h >= 1.0 && w.fract() == 0.0 && h.fract() == 0.0) {
            return Err(Error::Format("image size must be positive integers".into()));
        }
        Self::new(k, r, t, [nums[21], nums[22]], (w as u32, h as u32))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in [&self.intrinsics, &self.rotation] {
            for r in 0..3 {
                let _ = writeln!(out, "{} {} {}", m[(r, 0)], m[(r, 1)], m[(r, 2)]);
            }
        }
        let t = &self.translation;
        let _ = writeln!(out, "{} {} {}", t.x, t.y, t.z);
        let _ = writeln!(out, "{} {}", self.distortion[0], self.distortion[1]);
        let _ = writeln!(out, "{} {}", self.image_size.0, self.image_size.1);
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format(m) => Error::parse(path, m),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn project_camera_point(k: &Matrix3<f64>, dist: [f64; 2], pc: &Vec3) -> Vector2<f64> {
    let x = pc.x / pc.z;
    let y = pc.y / pc.z;
    let r2 = x * x + y * y;
    let f = 1.0 + dist[0] * r2 + dist[1] * r2 * r2;
    let (xd, yd) = (x * f, y * f);
    Vector2::new(
        k[(0, 0)] * xd + k[(0, 1)] * yd + k[(0, 2)],
        k[(1, 1)] * yd + k[(1, 2)],
    )
}

/// Projects every mesh vertex.
pub fn project_vertices(mesh: &TriangleMesh, cam: &CameraView) -> Vec<Projection> {
    mesh.vertices()
        .iter()
        .map(|p| {
            let (pixel, depth) = cam.project(p);
            Projection { pixel, depth }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationOptions {
    /// Refine all parameters including k1, k2 by damped Gauss-Newton.
    pub refine_distortion: bool,
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            refine_distortion: false,
            max_iterations: 50,
            step_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub camera: CameraView,
    /// Root-mean-square reprojection error in pixels.
    pub rms_error: f64,
    pub iterations: usize,
}

/// Reprojection RMS of `cam` over the correspondences.
pub fn reprojection_rms(cam: &CameraView, points3d: &[Vec3], points2d: &[Vector2<f64>]) -> f64 {
    let sum: f64 = points3d
        .iter()
        .zip(points2d)
        .map(|(p, q)| (cam.project(p).0 - q).norm_squared())
        .sum();
    (sum / points3d.len().max(1) as f64).sqrt()
}

/// Direct Linear Transform with Hartley normalisation, decomposed by RQ into
/// intrinsics, rotation and translation. With `refine_distortion` the result
/// is polished together with k1, k2 on the reprojection error.
pub fn calibrate_camera_dlt(
    points3d: &[Vec3],
    points2d: &[Vector2<f64>],
    image_size: (u32, u32),
    options: CalibrationOptions,
) -> Result<Calibration> {
    if points3d.len() != points2d.len() {
        return Err(Error::MismatchedDimensions(format!(
            "{} 3D points but {} 2D points",
            points3d.len(),
            points2d.len()
        )));
    }
    if points3d.len() < 6 {
        return Err(Error::DegenerateConfiguration(format!(
            "need at least 6 correspondences, got {}",
            points3d.len()
        )));
    }
    let p = dlt_projection(points3d, points2d)?;
    let (k, r, t) = decompose_projection(&p)?;
    let mut camera = CameraView::new(k, r, t, [0.0, 0.0], image_size)?;
    let mut iterations = 0;
    if options.refine_distortion {
        let (refined, iters) = refine(&camera, points3d, points2d, &options)?;
        camera = refined;
        iterations = iters;
    }
    let rms_error = reprojection_rms(&camera, points3d, points2d);
    Ok(Calibration {
        camera,
        rms_error,
        iterations,
    })
}

fn similarity_2d(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector2<f64>>() / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { 2f64.sqrt() / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn similarity_3d(points: &[Vec3]) -> nalgebra::Matrix4<f64> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vec3>() / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { 3f64.sqrt() / mean_dist } else { 1.0 };
    let mut m = nalgebra::Matrix4::identity() * s;
    m[(3, 3)] = 1.0;
    m[(0, 3)] = -s * c.x;
    m[(1, 3)] = -s * c.y;
    m[(2, 3)] = -s * c.z;
    m
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = ThinSvd::new(&DMatrix::from_column_slice(3, 3, m.as_slice()));
    let r = &svd.u * svd.v.transpose();
    Matrix3::from_column_slice(r.as_slice())
}

fn dlt_projection(points3d: &[Vec3], points2d: &[Vector2<f64>]) -> Result<Matrix3x4<f64>> {
    let t2 = similarity_2d(points2d);
    let t3 = similarity_3d(points3d);
    let n = points3d.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (p, q)) in points3d.iter().zip(points2d).enumerate() {
        let x = t3 * Vector4::new(p.x, p.y, p.z, 1.0);
        let u = t2 * Vector3::new(q.x, q.y, 1.0);
        let (u, v) = (u.x / u.z, u.y / u.z);
        for j in 0..4 {
            a[(2 * i, j)] = x[j];
            a[(2 * i, 8 + j)] = -u * x[j];
            a[(2 * i + 1, 4 + j)] = x[j];
            a[(2 * i + 1, 8 + j)] = -v * x[j];
        }
    }
    let svd = ThinSvd::new(&a);
    let s = &svd.singular_values;
    let (largest, second) = (s[0], s[s.len() - 2]);
    if !(second > 1e-7 * largest) {
        return Err(Error::DegenerateConfiguration(
            "DLT system is rank deficient (coplanar or collinear points)".into(),
        ));
    }
    let h: Vec<f64> = svd.v.column(s.len() - 1).iter().copied().collect();
    let pn = Matrix3x4::from_row_slice(&h);
    let t2_inv = t2
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("image points coincide".into()))?;
    Ok(t2_inv * pn * t3)
}

/// Splits `P ~ K [R | t]` with positive focal lengths and `det R = +1`.
pub fn decompose_projection(p: &Matrix3x4<f64>) -> Result<(Matrix3<f64>, Matrix3<f64>, Vec3)> {
    let mut p = *p;
    let mut m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    if m.determinant().abs() < 1e-300 {
        return Err(Error::DegenerateConfiguration("projection matrix is singular".into()));
    }
    let flip = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qr = (flip * m).transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut k = flip * r.transpose() * flip;
    let mut rot = flip * q.transpose();
    let signs = Matrix3::from_diagonal(&Vector3::new(
        k[(0, 0)].signum(),
        k[(1, 1)].signum(),
        k[(2, 2)].signum(),
    ));
    k *= signs;
    rot = signs * rot;
    let scale = k[(2, 2)];
    let k_inv = k
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("intrinsics not invertible".into()))?;
    let t = k_inv * p.column(3) ;
    let mut k = k / scale;
    k[(1, 0)] = 0.0;
    k[(2, 0)] = 0.0;
    k[(2, 1)] = 0.0;
    k[(2, 2)] = 1.0;
    // re-orthonormalise against round-off
    let rot = nearest_rotation(&rot);
    Ok((k, rot, t))
}

const N_PARAMS: usize = 13;

struct Params {
    base_rotation: Matrix3<f64>,
    values: [f64; N_PARAMS],
}

impl Params {
    fn from_camera(cam: &CameraView) -> Self {
        let k = cam.intrinsics();
        let t = cam.translation();
        let d = cam.distortion();
        Self {
            base_rotation: *cam.rotation(),
            values: [
                k[(0, 0)],
                k[(1, 1)],
                k[(0, 1)],
                k[(0, 2)],
                k[(1, 2)],
                0.0,
                0.0,
                0.0,
                t.x,
                t.y,
                t.z,
                d[0],
                d[1],
            ],
        }
    }

    fn rotation(&self, v: &[f64; N_PARAMS]) -> Matrix3<f64> {
        Rotation3::from_scaled_axis(Vector3::new(v[5], v[6], v[7])).into_inner() * self.base_rotation
    }

    fn residuals(&self, v: &[f64; N_PARAMS], p3: &[Vec3], p2: &[Vector2<f64>]) -> DVector<f64> {
        let k = Matrix3::new(v[0], v[2], v[3], 0.0, v[1], v[4], 0.0, 0.0, 1.0);
        let r = self.rotation(v);
        let t = Vec3::new(v[8], v[9], v[10]);
        let mut res = DVector::zeros(2 * p3.len());
        for (i, (x, q)) in p3.iter().zip(p2).enumerate() {
            let proj = project_camera_point(&k, [v[11], v[12]], &(r * x + t));
            res[2 * i] = proj.x - q.x;
            res[2 * i + 1] = proj.y - q.y;
        }
        res
    }

    fn into_camera(self, size: (u32, u32)) -> Result<CameraView> {
        let v = self.values;
        let k = Matrix3::new(v[0], v[2], v[3], 0.0, v[1], v[4], 0.0, 0.0, 1.0);
        let r = nearest_rotation(&self.rotation(&v));
        CameraView::new(k, r, Vec3::new(v[8], v[9], v[10]), [v[11], v[12]], size)
    }
}

/// Levenberg-Marquardt on all 13 parameters with central-difference Jacobians.
fn refine(
    cam: &CameraView,
    p3: &[Vec3],
    p2: &[Vector2<f64>],
    options: &CalibrationOptions,
) -> Result<(CameraView, usize)> {
    let mut params = Params::from_camera(cam);
    let mut res = params.residuals(&params.values, p3, p2);
    let mut cost = res.norm_squared();
    let mut mu = 1e-3;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let mut jac = DMatrix::<f64>::zeros(res.len(), N_PARAMS);
        for j in 0..N_PARAMS {
            let h = if (5..8).contains(&j) {
                1e-7
            } else {
                1e-7 * params.values[j].abs().max(1e-2)
            };
            let mut plus = params.values;
            let mut minus = params.values;
            plus[j] += h;
            minus[j] -= h;
            let d = (params.residuals(&plus, p3, p2) - params.residuals(&minus, p3, p2)) / (2.0 * h);
            jac.set_column(j, &d);
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        let mut accepted = false;
        let mut step_norm = f64::INFINITY;
        for _ in 0..20 {
            let mut lhs = jtj.clone();
            for d in 0..N_PARAMS {
                lhs[(d, d)] += mu * jtj[(d, d)].max(1e-12);
            }
            let Some(chol) = lhs.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let mut trial = params.values;
            for (t, s) in trial.iter_mut().zip(step.iter()) {
                *t += s;
            }
            let trial_res = params.residuals(&trial, p3, p2);
            let trial_cost = trial_res.norm_squared();
            step_norm = step.norm();
            if trial_cost <= cost {
                let rot = params.rotation(&trial);
                params.base_rotation = rot;
                trial[5] = 0.0;
                trial[6] = 0.0;
                trial[7] = 0.0;
                params.values = trial;
                res = trial_res;
                cost = trial_cost;
                mu = (mu * 0.1).max(1e-12);
                accepted = true;
                break;
            }
            mu *= 10.0;
        }
        if !accepted || step_norm < options.step_tolerance || cost == 0.0 {
            break;
        }
    }
    Ok((params.into_camera(cam.image_size())?, iterations))
}
