//! Spectral colour calibration, gamma and dataset alignment.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::signal::VertexSignal;
use crate::linalg::ThinSvd;

pub const GAMMA: f64 = 2.2;
pub const CIE_DATA_FILE: &str = "cie1931_2deg.csv";
const CIE_1931_2DEG: &str = include_str!("../data/cie1931_2deg.csv");

/// 400 to 720 nm in 10 nm steps.
pub fn default_grid() -> Vec<f64> {
    (0..33).map(|i| 400.0 + 10.0 * i as f64).collect()
}

fn check_grid(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidSpectrum("empty wavelength list".into()));
    }
    if w.iter().any(|x| !x.is_finite()) || w.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidSpectrum("wavelengths must be finite and strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCurve {
    wavelengths: Vec<f64>,
    values: Vec<f64>,
}

impl SpectralCurve {
    pub fn new(wavelengths: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != values.len() {
            return Err(Error::InvalidSpectrum(format!(
                "{} wavelengths but {} values",
                wavelengths.len(),
                values.len()
            )));
        }
        check_grid(&wavelengths)?;
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidSpectrum(format!("negative or non-finite value {v}")));
        }
        Ok(Self { wavelengths, values })
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Two-column CSV with a header line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (w, cols) = read_spectral_csv(path, 1)?;
        Self::new(w, cols.into_iter().next().unwrap()).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("wavelength_nm,value\n");
        for (w, v) in self.wavelengths.iter().zip(&self.values) {
            s.push_str(&format!("{w},{v}\n"));
        }
        s
    }

    /// Linear interpolation at `x`, zero outside the support.
    pub fn eval(&self, x: f64) -> f64 {
        interp(&self.wavelengths, &self.values, x)
    }
}

fn interp(w: &[f64], v: &[f64], x: f64) -> f64 {
    let n = w.len();
    if x < w[0] || x > w[n - 1] {
        return 0.0;
    }
    if n == 1 {
        return v[0];
    }
    let k = w.partition_point(|&a| a <= x).clamp(1, n - 1);
    let (x0, x1) = (w[k - 1], w[k]);
    let s = (x - x0) / (x1 - x0);
    v[k - 1] + s * (v[k] - v[k - 1])
}

/// Linear interpolation onto `grid`, zero-extended outside the support.
pub fn resample_to_grid(curve: &SpectralCurve, grid: &[f64]) -> Result<SpectralCurve> {
    check_grid(grid)?;
    let (lo, hi) = (curve.wavelengths[0], *curve.wavelengths.last().unwrap());
    if grid[grid.len() - 1] < lo || grid[0] > hi {
        return Err(Error::EmptyOverlap);
    }
    let values = grid.iter().map(|&x| curve.eval(x)).collect();
    SpectralCurve::new(grid.to_vec(), values)
}

/// Three-channel spectral response sampled on a shared grid (`D x 3`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSensitivity {
    wavelengths: Vec<f64>,
    channels: DMatrix<f64>,
}

impl SpectralSensitivity {
    pub fn new(wavelengths: Vec<f64>, channels: DMatrix<f64>) -> Result<Self> {
        check_grid(&wavelengths)?;
        if channels.nrows() != wavelengths.len() || channels.ncols() != 3 {
            return Err(Error::InvalidSpectrum(format!(
                "sensitivity is {}x{} for {} wavelengths",
                channels.nrows(),
                channels.ncols(),
                wavelengths.len()
            )));
        }
        if let Some(v) = channels.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidSpectrum(format!("negative or non-finite value {v}")));
        }
        Ok(Self { wavelengths, channels })
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn channels(&self) -> &DMatrix<f64> {
        &self.channels
    }

    pub fn resample(&self, grid: &[f64]) -> Result<Self> {
        check_grid(grid)?;
        let (lo, hi) = (self.wavelengths[0], *self.wavelengths.last().unwrap());
        if grid[grid.len() - 1] < lo || grid[0] > hi {
            return Err(Error::EmptyOverlap);
        }
        let m = DMatrix::from_fn(grid.len(), 3, |i, c| {
            let col: Vec<f64> = self.channels.column(c).iter().copied().collect();
            interp(&self.wavelengths, &col, grid[i])
        });
        Self::new(grid.to_vec(), m)
    }

    /// Four-column CSV (`wavelength_nm, r, g, b`) with a header line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (w, cols) = read_spectral_csv(path, 3)?;
        let m = DMatrix::from_fn(w.len(), 3, |i, c| cols[c][i]);
        Self::new(w, m).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("wavelength_nm,r,g,b\n");
        for (i, w) in self.wavelengths.iter().enumerate() {
            let r = self.channels.row(i);
            s.push_str(&format!("{w},{},{},{}\n", r[0], r[1], r[2]));
        }
        s
    }

    /// CIE 1931 2-degree colour matching functions. `ALBEDO_DATA_DIR`
    /// overrides the bundled table.
    pub fn cie1931() -> Result<Self> {
        if let Some(dir) = std::env::var_os("ALBEDO_DATA_DIR") {
            let path = PathBuf::from(dir).join(CIE_DATA_FILE);
            if path.exists() {
                return Self::load(path);
            }
        }
        let (w, cols) = parse_spectral_csv(CIE_1931_2DEG, Path::new(CIE_DATA_FILE), 3)?;
        let m = DMatrix::from_fn(w.len(), 3, |i, c| cols[c][i]);
        Self::new(w, m)
    }

    fn check_same_grid(&self, other: &[f64]) -> Result<()> {
        if self.wavelengths.len() != other.len()
            || self.wavelengths.iter().zip(other).any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::MismatchedDimensions("spectral grids differ".into()));
        }
        Ok(())
    }
}

fn read_spectral_csv(path: &Path, columns: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spectral_csv(&text, path, columns)
}

fn parse_spectral_csv(text: &str, path: &Path, columns: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut w = Vec::new();
    let mut cols = vec![Vec::new(); columns];
    let mut header_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split([',', ';', '\t', ' ']).filter(|s| !s.is_empty()).collect();
        let nums: std::result::Result<Vec<f64>, _> = fields.iter().map(|s| s.parse::<f64>()).collect();
        let nums = match nums {
            Ok(n) => n,
            Err(_) if !header_seen && w.is_empty() => {
                header_seen = true;
                continue;
            }
            Err(e) => return Err(Error::parse(path, format!("line {}: {e}", lineno + 1))),
        };
        if nums.len() != columns + 1 {
            return Err(Error::parse(
                path,
                format!("line {}: expected {} columns, found {}", lineno + 1, columns + 1, nums.len()),
            ));
        }
        w.push(nums[0]);
        for c in 0..columns {
            cols[c].push(nums[c + 1]);
        }
    }
    if w.is_empty() {
        return Err(Error::parse(path, "no samples"));
    }
    Ok((w, cols))
}

/// A 3x3 linear colour map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColourTransform {
    pub matrix: Matrix3<f64>,
}

impl ColourTransform {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("colour transform has non-finite entries".into()));
        }
        Ok(Self { matrix })
    }

    pub fn identity() -> Self {
        Self { matrix: Matrix3::identity() }
    }

    pub fn then(&self, next: &ColourTransform) -> ColourTransform {
        ColourTransform { matrix: next.matrix * self.matrix }
    }

    pub fn apply_rgb(&self, rgb: [f64; 3]) -> [f64; 3] {
        let v = self.matrix * Vector3::from(rgb);
        [v[0], v[1], v[2]]
    }

    /// Applies the transform to every row of a 3-channel signal.
    pub fn apply(&self, signal: &VertexSignal) -> Result<VertexSignal> {
        if signal.channels() != 3 {
            return Err(Error::MismatchedDimensions(format!(
                "colour transform needs 3 channels, got {}",
                signal.channels()
            )));
        }
        let mut out = signal.clone();
        for i in 0..signal.n() {
            let r = signal.row(i);
            out.row_mut(i).copy_from_slice(&self.apply_rgb([r[0], r[1], r[2]]));
        }
        Ok(out)
    }

    /// Three lines of three numbers.
    pub fn to_text(&self) -> String {
        let m = &self.matrix;
        (0..3)
            .map(|r| format!("{:.17e} {:.17e} {:.17e}\n", m[(r, 0)], m[(r, 1)], m[(r, 2)]))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let nums: std::result::Result<Vec<f64>, _> = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(|l| l.split_whitespace())
            .map(str::parse)
            .collect();
        let nums = nums.map_err(|e| Error::Format(format!("mat3: {e}")))?;
        if nums.len() != 9 {
            return Err(Error::Format(format!("mat3 needs 9 numbers, found {}", nums.len())));
        }
        Self::new(Matrix3::from_row_slice(&nums))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Per-channel response `C^T e` on the shared grid.
pub fn channel_response(c: &SpectralSensitivity, e: &SpectralCurve) -> Result<Vector3<f64>> {
    c.check_same_grid(e.wavelengths())?;
    let ev = DMatrix::from_column_slice(e.values.len(), 1, &e.values);
    let r = c.channels.transpose() * ev;
    Ok(Vector3::new(r[0], r[1], r[2]))
}

/// `diag(C^T e)^-1`.
pub fn white_balance_transform(c: &SpectralSensitivity, e: &SpectralCurve) -> Result<ColourTransform> {
    let r = channel_response(c, e)?;
    for ch in 0..3 {
        if r[ch] <= 1e-15 {
            return Err(Error::ZeroChannelResponse { channel: ch, response: r[ch] });
        }
    }
    ColourTransform::new(Matrix3::from_diagonal(&r.map(|v| 1.0 / v)))
}

/// Least-squares map from camera RAW to XYZ, `C_cie^T (C^T)^+`, with each
/// row rescaled to sum to one.
pub fn raw_to_xyz_transform(c: &SpectralSensitivity, cie: &SpectralSensitivity) -> Result<ColourTransform> {
    c.check_same_grid(cie.wavelengths())?;
    let svd = ThinSvd::new(&c.channels);
    let smax = svd.max();
    if svd.min() <= 1e-12 * smax || smax == 0.0 {
        return Err(Error::RankDeficientSensitivity);
    }
    let pinv = svd.pseudo_inverse(0.0); // 3 x D
    let t = cie.channels.transpose() * pinv.transpose();
    let mut m = Matrix3::from_fn(|r, k| t[(r, k)]);
    for r in 0..3 {
        let s = m[(r, 0)] + m[(r, 1)] + m[(r, 2)];
        if s.abs() <= 1e-15 {
            return Err(Error::RankDeficientSensitivity);
        }
        for k in 0..3 {
            m[(r, k)] /= s;
        }
    }
    ColourTransform::new(m)
}

/// Linear XYZ to linear sRGB (D65).
pub fn xyz_to_srgb_transform() -> ColourTransform {
    ColourTransform {
        matrix: Matrix3::new(
            3.2406, -1.5372, -0.4986, //
            -0.9689, 1.8758, 0.0415, //
            0.0557, -0.2040, 1.0570,
        ),
    }
}

/// Linear sRGB to XYZ (D65).
pub fn srgb_to_xyz_transform() -> ColourTransform {
    ColourTransform {
        matrix: Matrix3::new(
            0.4124, 0.3576, 0.1805, //
            0.2126, 0.7152, 0.0722, //
            0.0193, 0.1192, 0.9505,
        ),
    }
}

/// `T = T_xyz2rgb T_raw2xyz(C) T_wb(C, e)`.
pub fn compose_calibration(
    c: &SpectralSensitivity,
    e: &SpectralCurve,
    cie: &SpectralSensitivity,
) -> Result<ColourTransform> {
    let wb = white_balance_transform(c, e)?;
    let raw = raw_to_xyz_transform(c, cie)?;
    ColourTransform::new(xyz_to_srgb_transform().matrix * raw.matrix * wb.matrix)
}

/// Resamples inputs onto `grid` and composes the calibration.
pub fn calibrate(
    c: &SpectralSensitivity,
    e: &SpectralCurve,
    grid: &[f64],
) -> Result<ColourTransform> {
    let c = c.resample(grid)?;
    let e = resample_to_grid(e, grid)?;
    let cie = SpectralSensitivity::cie1931()?.resample(grid)?;
    compose_calibration(&c, &e, &cie)
}

pub fn gamma_encode(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::DomainError(format!("gamma of negative value {x}")));
    }
    Ok(x.powf(1.0 / GAMMA))
}

pub fn gamma_decode(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::DomainError(format!("gamma of negative value {x}")));
    }
    Ok(x.powf(GAMMA))
}

pub fn gamma_encode_signal(s: &VertexSignal) -> Result<VertexSignal> {
    map_checked(s, gamma_encode)
}

pub fn gamma_decode_signal(s: &VertexSignal) -> Result<VertexSignal> {
    map_checked(s, gamma_decode)
}

fn map_checked(s: &VertexSignal, f: fn(f64) -> Result<f64>) -> Result<VertexSignal> {
    let values = s.values().iter().map(|&v| f(v)).collect::<Result<Vec<_>>>()?;
    VertexSignal::new(s.n(), s.channels(), values)
}

pub fn iso_normalize(signal: &VertexSignal, iso: f64) -> Result<VertexSignal> {
    if !(iso > 0.0) || !iso.is_finite() {
        return Err(Error::DomainError(format!("ISO must be positive, got {iso}")));
    }
    Ok(signal.map(|v| v / iso))
}

/// Least-squares `M` minimising `||M S^T - T^T||_F` over vertex colours.
pub fn fit_mean_alignment(source: &VertexSignal, target: &VertexSignal) -> Result<ColourTransform> {
    if source.n() != target.n() || source.channels() != 3 || target.channels() != 3 {
        return Err(Error::MismatchedDimensions(format!(
            "alignment needs equal n x 3 signals, got {}x{} and {}x{}",
            source.n(),
            source.channels(),
            target.n(),
            target.channels()
        )));
    }
    let n = source.n();
    let s = DMatrix::from_row_slice(n, 3, source.values());
    let t = DMatrix::from_row_slice(n, 3, target.values());
    let svd = ThinSvd::new(&s);
    let smax = svd.max();
    if n < 3 || smax == 0.0 || svd.min() <= 1e-12 * smax {
        return Err(Error::RankDeficient("source colours span fewer than 3 dimensions".into()));
    }
    // S M^T = T
    let mt = svd.solve(&t, 0.0);
    ColourTransform::new(Matrix3::from_fn(|r, c| mt[(c, r)]))
}
