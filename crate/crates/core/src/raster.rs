//! Linear RGB rasters: sampling, PNG / PFM IO, and a small triangle
//! rasteriser for synthesising views of per-vertex colours.
//!
//! Pixel `(x, y)` has its centre at integer coordinates `(x, y)`.

use std::io::Write as _;
use std::path::Path;

use nalgebra::Vector2;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::signal::VertexSignal;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: u32,
    height: u32,
    data: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    /// Debugging aid.
    Nearest,
}

impl LinearImage {
    pub fn new(width: u32, height: u32, fill: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: [f64; 3]) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Samples at a continuous position; `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample(&self, p: &Vector2<f64>, interp: Interpolation) -> Option<[f64; 3]> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= w - 1.0 && p.y <= h - 1.0) {
            return None;
        }
        match interp {
            Interpolation::Nearest => Some(self.get(p.x.round() as u32, p.y.round() as u32)),
            Interpolation::Bilinear => {
                let x0 = (p.x.floor() as u32).min(self.width.saturating_sub(2));
                let y0 = (p.y.floor() as u32).min(self.height.saturating_sub(2));
                let x1 = (x0 + 1).min(self.width - 1);
                let y1 = (y0 + 1).min(self.height - 1);
                let fx = p.x - x0 as f64;
                let fy = p.y - y0 as f64;
                let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
                let mut out = [0.0; 3];
                for ch in 0..3 {
                    let top = a[ch] + fx * (b[ch] - a[ch]);
                    let bottom = c[ch] + fx * (d[ch] - c[ch]);
                    out[ch] = top + fy * (bottom - top);
                }
                Some(out)
            }
        }
    }

    /// Loads a PNG (8 or 16 bit, values taken as already linear) or a PFM.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
        {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            return Self::from_pfm(&bytes).map_err(|e| match e {
                Error::Format(m) => Error::parse(path, m),
                other => other,
            });
        }
        let img = image::open(path)?.into_rgb32f();
        let (width, height) = img.dimensions();
        let data = img
            .pixels()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect();
        Ok(Self { width, height, data })
    }

    /// Saves by extension: `.pfm` keeps full range, anything else is written
    /// as a 16-bit PNG after clamping to `[0, 1]`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
        {
            return std::fs::write(path, self.to_pfm()).map_err(|e| Error::io(path, e));
        }
        let buf: Vec<u16> = self
            .data
            .iter()
            .flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16))
            .collect();
        let img = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(self.width, self.height, buf)
            .expect("buffer matches dimensions");
        img.save(path)?;
        Ok(())
    }

    /// 8-bit PNG after clamping to `[0, 1]`.
    pub fn save_png8(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf: Vec<u8> = self
            .data
            .iter()
            .flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        let img = image::RgbImage::from_raw(self.width, self.height, buf).expect("buffer matches dimensions");
        img.save(path.as_ref())?;
        Ok(())
    }

    /// Portable float map, colour, little-endian, rows stored bottom-up.
    pub fn to_pfm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 12 * self.data.len());
        let _ = write!(out, "PF\n{} {}\n-1.0\n", self.width, self.height);
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                for v in self.get(x, y) {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_pfm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut token = || -> Result<String> {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PFM header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let kind = token()?;
        let channels = match kind.as_str() {
            "PF" => 3,
            "Pf" => 1,
            _ => return Err(Error::Format(format!("not a PFM file ({kind:?})"))),
        };
        let parse_u32 = |s: String| s.parse::<u32>().map_err(|e| Error::Format(e.to_string()));
        let width = parse_u32(token()?)?;
        let height = parse_u32(token()?)?;
        let scale: f64 = token()?
            .parse()
            .map_err(|e: std::num::ParseFloatError| Error::Format(e.to_string()))?;
        // exactly one whitespace byte separates the header from the data
        pos += 1;
        let little = scale < 0.0;
        let need = width as usize * height as usize * channels * 4;
        let body = bytes
            .get(pos..pos + need)
            .ok_or_else(|| Error::Format("truncated PFM data".into()))?;
        let read = |i: usize| -> f64 {
            let b: [u8; 4] = body[4 * i..4 * i + 4].try_into().unwrap();
            if little {
                f32::from_le_bytes(b) as f64
            } else {
                f32::from_be_bytes(b) as f64
            }
        };
        let mut img = Self::new(width, height, [0.0; 3]);
        for row in 0..height {
            let y = height - 1 - row;
            for x in 0..width {
                let base = (row as usize * width as usize + x as usize) * channels;
                let px = if channels == 3 {
                    [read(base), read(base + 1), read(base + 2)]
                } else {
                    [read(base); 3]
                };
                img.set(x, y, px);
            }
        }
        Ok(img)
    }
}

/// Result of rasterising a mesh: colour image plus a coverage mask.
#[derive(Debug, Clone)]
pub struct Rendering {
    pub image: LinearImage,
    pub coverage: Vec<bool>,
}

/// Rasterises per-vertex colours with a z-buffer and perspective-correct
/// interpolation; uncovered pixels receive `background`. Triangle edges are
/// straight in distorted pixel space.
pub fn render_vertex_colors(
    mesh: &TriangleMesh,
    cam: &CameraView,
    colors: &VertexSignal,
    background: [f64; 3],
) -> Result<Rendering> {
    if colors.n() != mesh.n_vertices() || colors.channels() != 3 {
        return Err(Error::MismatchedDimensions(
            "render colours must be n x 3".into(),
        ));
    }
    let (w, h) = cam.image_size();
    let proj: Vec<(Vector2<f64>, f64)> = mesh.vertices().iter().map(|p| cam.project(p)).collect();
    let mut depth = vec![f64::INFINITY; w as usize * h as usize];
    let mut image = LinearImage::new(w, h, background);
    let mut coverage = vec![false; w as usize * h as usize];
    for tri in mesh.triangles() {
        let [a, b, c] = *tri;
        let (pa, za) = proj[a];
        let (pb, zb) = proj[b];
        let (pc, zc) = proj[c];
        if za <= 0.0 || zb <= 0.0 || zc <= 0.0 {
            continue;
        }
        let area = edge(&pa, &pb, &pc);
        if area.abs() < 1e-14 {
            continue;
        }
        let xmin = pa.x.min(pb.x).min(pc.x).ceil().max(0.0) as i64;
        let xmax = pa.x.max(pb.x).max(pc.x).floor().min(w as f64 - 1.0) as i64;
        let ymin = pa.y.min(pb.y).min(pc.y).ceil().max(0.0) as i64;
        let ymax = pa.y.max(pb.y).max(pc.y).floor().min(h as f64 - 1.0) as i64;
        for y in ymin..=ymax {
            for x in xmin..=xmax {
                let p = Vector2::new(x as f64, y as f64);
                let l0 = edge(&pb, &pc, &p) / area;
                let l1 = edge(&pc, &pa, &p) / area;
                let l2 = 1.0 - l0 - l1;
                let eps = -1e-12;
                if l0 < eps || l1 < eps || l2 < eps {
                    continue;
                }
                // perspective-correct weights
                let (q0, q1, q2) = (l0 / za, l1 / zb, l2 / zc);
                let inv_z = q0 + q1 + q2;
                let z = 1.0 / inv_z;
                let idx = y as usize * w as usize + x as usize;
                if z >= depth[idx] {
                    continue;
                }
                depth[idx] = z;
                coverage[idx] = true;
                let (ca, cb, cc) = (colors.row(a), colors.row(b), colors.row(c));
                let mut px = [0.0; 3];
                for ch in 0..3 {
                    px[ch] = (q0 * ca[ch] + q1 * cb[ch] + q2 * cc[ch]) * z;
                }
                image.set(x as u32, y as u32, px);
            }
        }
    }
    Ok(Rendering { image, coverage })
}

#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}
