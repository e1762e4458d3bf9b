//! Linear (PCA) albedo models and paired diffuse/specular variants.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::SymmetryMap;
use crate::par;
use crate::signal::{reflect_with, VertexSignal};
use crate::linalg::ThinSvd;

/// Relative threshold below which a singular value counts as zero.
const RANK_TOLERANCE: f64 = 1e-12;

/// `x(b) = P b + mean` over channel-major vectors (all R, then G, then B).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAlbedoModel {
    n: usize,
    channels: usize,
    mean: DVector<f64>,
    components: DMatrix<f64>,
    singular_values: Vec<f64>,
    std_devs: Vec<f64>,
    training_samples: usize,
}

impl LinearAlbedoModel {
    pub fn from_parts(
        n: usize,
        channels: usize,
        mean: DVector<f64>,
        components: DMatrix<f64>,
        singular_values: Vec<f64>,
        training_samples: usize,
    ) -> Result<Self> {
        let d = components.ncols();
        if mean.len() != n * channels || components.nrows() != n * channels || singular_values.len() != d {
            return Err(Error::MismatchedDimensions(format!(
                "model parts: mean {}, components {}x{}, {} singular values for n={n}, c={channels}",
                mean.len(),
                components.nrows(),
                d,
                singular_values.len()
            )));
        }
        let denom = (training_samples.max(2) - 1) as f64;
        let std_devs = singular_values.iter().map(|s| s / denom.sqrt()).collect();
        Ok(Self {
            n,
            channels,
            mean,
            components,
            singular_values,
            std_devs,
            training_samples,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn d(&self) -> usize {
        self.components.ncols()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn mean_signal(&self) -> VertexSignal {
        to_signal(self.n, self.channels, self.mean.as_slice())
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Per-component standard deviation `sigma / sqrt(N - 1)`.
    pub fn std_devs(&self) -> &[f64] {
        &self.std_devs
    }

    pub fn training_samples(&self) -> usize {
        self.training_samples
    }

    /// The model restricted to its first `d` components.
    pub fn truncated(&self, d: usize) -> Result<Self> {
        if d > self.d() {
            return Err(Error::DTooLarge { d, max: self.d() });
        }
        Ok(Self {
            components: self.components.columns(0, d).into_owned(),
            singular_values: self.singular_values[..d].to_vec(),
            std_devs: self.std_devs[..d].to_vec(),
            ..self.clone()
        })
    }

    fn check_signal(&self, s: &VertexSignal) -> Result<()> {
        if s.n() != self.n || s.channels() != self.channels {
            return Err(Error::MismatchedDimensions(format!(
                "signal is {}x{}, model expects {}x{}",
                s.n(),
                s.channels(),
                self.n,
                self.channels
            )));
        }
        Ok(())
    }
}

fn to_vector(s: &VertexSignal) -> DVector<f64> {
    DVector::from_vec(s.to_channel_major())
}

fn to_signal(n: usize, c: usize, v: &[f64]) -> VertexSignal {
    VertexSignal::from_channel_major(n, c, v).expect("length checked by construction")
}

/// `P b + mean`; shorter `b` is zero-padded.
pub fn generate(model: &LinearAlbedoModel, b: &[f64]) -> Result<VertexSignal> {
    if b.len() > model.d() {
        return Err(Error::MismatchedDimensions(format!(
            "{} coefficients for a model with d = {}",
            b.len(),
            model.d()
        )));
    }
    let mut x = model.mean.clone();
    for (k, &bk) in b.iter().enumerate() {
        if bk != 0.0 {
            x.axpy(bk, &model.components.column(k), 1.0);
        }
    }
    Ok(to_signal(model.n, model.channels, x.as_slice()))
}

/// Least-squares coefficients over the rows of non-masked vertices
/// (`mask[i] == true` excludes vertex `i`); `None` uses every vertex.
pub fn fit_coefficients(
    model: &LinearAlbedoModel,
    observed: &VertexSignal,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    model.check_signal(observed)?;
    let n = model.n;
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::MismatchedDimensions(format!("mask has {} entries for {n} vertices", m.len())));
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| mask.is_none_or(|m| !m[i])).collect();
    if keep.is_empty() {
        return Err(Error::AllMasked);
    }
    let d = model.d();
    if keep.len() < d {
        return Err(Error::LeastSquaresUnderdetermined { rows: keep.len(), d });
    }
    if d == 0 {
        return Ok(Vec::new());
    }
    let c = model.channels;
    let rows: Vec<usize> = (0..c).flat_map(|ch| keep.iter().map(move |&i| ch * n + i)).collect();
    let a = model.components.select_rows(rows.iter());
    let x = to_vector(observed);
    let r = DVector::from_iterator(rows.len(), rows.iter().map(|&r| x[r] - model.mean[r]));
    let svd = ThinSvd::new(&a);
    let b = svd.solve(&DMatrix::from_column_slice(r.len(), 1, r.as_slice()), RANK_TOLERANCE);
    Ok(b.iter().copied().collect())
}

/// `generate(fit_coefficients(..))`.
pub fn project(model: &LinearAlbedoModel, observed: &VertexSignal, mask: Option<&[bool]>) -> Result<VertexSignal> {
    let b = fit_coefficients(model, observed, mask)?;
    generate(model, &b)
}

struct Pca {
    mean: DVector<f64>,
    components: DMatrix<f64>,
    singular_values: Vec<f64>,
    /// `V_d Sigma_d^-1`: maps centred samples to components.
    transfer: DMatrix<f64>,
    samples: usize,
}

/// Stacks samples (and their reflections) as data columns. Reflected copies
/// are interleaved with originals so the mean is exactly symmetric.
fn data_matrix(samples: &[VertexSignal], symmetry: Option<&SymmetryMap>) -> Result<DMatrix<f64>> {
    let (n, c) = (samples[0].n(), samples[0].channels());
    let mut cols = Vec::new();
    for s in samples {
        if s.n() != n || s.channels() != c {
            return Err(Error::MismatchedDimensions(format!(
                "sample is {}x{}, expected {n}x{c}",
                s.n(),
                s.channels()
            )));
        }
        cols.push(to_vector(s));
        if let Some(map) = symmetry {
            cols.push(to_vector(&reflect_with(s, map.as_slice())?));
        }
    }
    Ok(DMatrix::from_columns(&cols))
}

fn column_mean(x: &DMatrix<f64>, paired: bool) -> DVector<f64> {
    let (m, k) = x.shape();
    let mut mean = DVector::zeros(m);
    if paired {
        for j in (0..k).step_by(2) {
            for i in 0..m {
                mean[i] += x[(i, j)] + x[(i, j + 1)];
            }
        }
    } else {
        for j in 0..k {
            for i in 0..m {
                mean[i] += x[(i, j)];
            }
        }
    }
    mean / k as f64
}

fn pca(x: &DMatrix<f64>, d: usize, paired: bool) -> Result<Pca> {
    let (m, k) = x.shape();
    if d + 1 > k {
        return Err(Error::DTooLarge { d, max: k - 1 });
    }
    let mean = column_mean(x, paired);
    let mut a = x.clone();
    for mut col in a.column_iter_mut() {
        col -= &mean;
    }
    let svd = ThinSvd::new(&a);
    let u = &svd.u;
    let v = &svd.v;
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let smax = s.max();
    let mut components = DMatrix::zeros(m, d);
    let mut transfer = DMatrix::zeros(k, d);
    let mut singular_values = Vec::with_capacity(d);
    for (col, &idx) in order.iter().take(d).enumerate() {
        let mut uc = u.column(idx).into_owned();
        let mut vc = v.column(idx).into_owned();
        let pivot = uc.iamax();
        if uc[pivot] < 0.0 {
            uc.neg_mut();
            vc.neg_mut();
        }
        components.set_column(col, &uc);
        let sigma = s[idx];
        if sigma > RANK_TOLERANCE * smax {
            transfer.set_column(col, &(vc / sigma));
        }
        singular_values.push(sigma);
    }
    Ok(Pca {
        mean,
        components,
        singular_values,
        transfer,
        samples: k,
    })
}

fn check_count(samples: &[VertexSignal]) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            got: samples.len(),
        });
    }
    Ok(())
}

/// PCA model with `d` components, optionally augmented by reflecting every
/// sample through `symmetry`.
pub fn build_pca(samples: &[VertexSignal], d: usize, symmetry: Option<&SymmetryMap>) -> Result<LinearAlbedoModel> {
    check_count(samples)?;
    let x = data_matrix(samples, symmetry)?;
    let p = pca(&x, d, symmetry.is_some())?;
    LinearAlbedoModel::from_parts(
        samples[0].n(),
        samples[0].channels(),
        p.mean,
        p.components,
        p.singular_values,
        p.samples,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Independent,
    Concatenated,
    Transferred,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Independent, Variant::Concatenated, Variant::Transferred];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Independent => "independent",
            Variant::Concatenated => "concatenated",
            Variant::Transferred => "transferred",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independent" => Ok(Variant::Independent),
            "concatenated" => Ok(Variant::Concatenated),
            "transferred" => Ok(Variant::Transferred),
            _ => Err(Error::Validation(format!(
                "unknown variant '{s}' (expected independent, concatenated or transferred)"
            ))),
        }
    }
}

/// Diffuse and specular models sharing (or not) a coefficient space.
///
/// For the concatenated and transferred variants the specular components
/// are driven by the diffuse coefficients and need not be orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedAlbedoModel {
    pub variant: Variant,
    pub diffuse: LinearAlbedoModel,
    pub specular: LinearAlbedoModel,
    /// Transferred variant: `W` with `P_diff = A_diff W`, `P_spec = A_spec W`.
    pub transfer: Option<DMatrix<f64>>,
    pub symmetric: bool,
}

fn check_aligned(diffuse: &[VertexSignal], specular: &[VertexSignal]) -> Result<()> {
    if diffuse.len() != specular.len() {
        return Err(Error::MisalignedSamples(format!(
            "{} diffuse vs {} specular samples",
            diffuse.len(),
            specular.len()
        )));
    }
    for (k, (a, b)) in diffuse.iter().zip(specular).enumerate() {
        if a.n() != b.n() || a.channels() != b.channels() {
            return Err(Error::MisalignedSamples(format!(
                "subject {k}: diffuse {}x{} vs specular {}x{}",
                a.n(),
                a.channels(),
                b.n(),
                b.channels()
            )));
        }
    }
    Ok(())
}

pub fn build_paired(
    diffuse: &[VertexSignal],
    specular: &[VertexSignal],
    d: usize,
    variant: Variant,
    symmetry: Option<&SymmetryMap>,
) -> Result<PairedAlbedoModel> {
    check_aligned(diffuse, specular)?;
    check_count(diffuse)?;
    let (n, c) = (diffuse[0].n(), diffuse[0].channels());
    let paired = symmetry.is_some();
    let xd = data_matrix(diffuse, symmetry)?;
    let xs = data_matrix(specular, symmetry)?;
    let model = match variant {
        Variant::Independent => {
            let pd = pca(&xd, d, paired)?;
            let ps = pca(&xs, d, paired)?;
            PairedAlbedoModel {
                variant,
                diffuse: LinearAlbedoModel::from_parts(n, c, pd.mean, pd.components, pd.singular_values, pd.samples)?,
                specular: LinearAlbedoModel::from_parts(n, c, ps.mean, ps.components, ps.singular_values, ps.samples)?,
                transfer: None,
                symmetric: paired,
            }
        }
        Variant::Concatenated => {
            let m = n * c;
            let mut x = DMatrix::zeros(2 * m, xd.ncols());
            x.rows_mut(0, m).copy_from(&xd);
            x.rows_mut(m, m).copy_from(&xs);
            let p = pca(&x, d, paired)?;
            let split = |off: usize| -> Result<LinearAlbedoModel> {
                LinearAlbedoModel::from_parts(
                    n,
                    c,
                    p.mean.rows(off, m).into_owned(),
                    p.components.rows(off, m).into_owned(),
                    p.singular_values.clone(),
                    p.samples,
                )
            };
            PairedAlbedoModel {
                variant,
                diffuse: split(0)?,
                specular: split(m)?,
                transfer: None,
                symmetric: paired,
            }
        }
        Variant::Transferred => {
            let pd = pca(&xd, d, paired)?;
            let spec_mean = column_mean(&xs, paired);
            let mut a_spec = xs;
            for mut col in a_spec.column_iter_mut() {
                col -= &spec_mean;
            }
            let p_spec = &a_spec * &pd.transfer;
            PairedAlbedoModel {
                variant,
                specular: LinearAlbedoModel::from_parts(n, c, spec_mean, p_spec, pd.singular_values.clone(), pd.samples)?,
                diffuse: LinearAlbedoModel::from_parts(n, c, pd.mean, pd.components, pd.singular_values, pd.samples)?,
                transfer: Some(pd.transfer),
                symmetric: paired,
            }
        }
    };
    Ok(model)
}

impl PairedAlbedoModel {
    pub fn d(&self) -> usize {
        self.diffuse.d()
    }

    pub fn n(&self) -> usize {
        self.diffuse.n()
    }

    pub fn truncated(&self, d: usize) -> Result<Self> {
        Ok(Self {
            variant: self.variant,
            diffuse: self.diffuse.truncated(d)?,
            specular: self.specular.truncated(d)?,
            transfer: self.transfer.as_ref().map(|w| w.columns(0, d).into_owned()),
            symmetric: self.symmetric,
        })
    }

    /// Specular map predicted for a subject. The independent variant fits
    /// the observed specular map; the coupled variants fit the diffuse map
    /// and reuse its coefficients.
    pub fn reconstruct_specular(
        &self,
        diffuse: &VertexSignal,
        specular: &VertexSignal,
        mask: Option<&[bool]>,
    ) -> Result<VertexSignal> {
        match self.variant {
            Variant::Independent => project(&self.specular, specular, mask),
            Variant::Concatenated | Variant::Transferred => {
                let b = fit_coefficients(&self.diffuse, diffuse, mask)?;
                generate(&self.specular, &b)
            }
        }
    }

    /// Diffuse and specular maps for shared coefficients `b`.
    pub fn generate_pair(&self, b: &[f64]) -> Result<(VertexSignal, VertexSignal)> {
        Ok((generate(&self.diffuse, b)?, generate(&self.specular, b)?))
    }
}

/// Root mean over vertices of the squared Euclidean colour error.
pub fn per_vertex_rms(a: &VertexSignal, b: &VertexSignal) -> Result<f64> {
    if a.n() != b.n() || a.channels() != b.channels() {
        return Err(Error::MismatchedDimensions("signals differ in shape".into()));
    }
    if a.n() == 0 {
        return Ok(0.0);
    }
    let ss: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.n() as f64).sqrt())
}

/// Leave-one-out specular generalisation error for each `d` in `d_values`:
/// mean over held-out subjects of the per-vertex RMS error.
pub fn loo_generalisation(
    diffuse: &[VertexSignal],
    specular: &[VertexSignal],
    variant: Variant,
    d_values: &[usize],
    symmetry: Option<&SymmetryMap>,
) -> Result<Vec<f64>> {
    check_aligned(diffuse, specular)?;
    let k = diffuse.len();
    if k < 3 {
        return Err(Error::InsufficientSamples { required: 3, got: k });
    }
    let d_max = d_values.iter().copied().max().unwrap_or(0);
    let per_fold: Vec<Result<Vec<f64>>> = par::map_range(k, |held| {
        let train_d: Vec<VertexSignal> = (0..k).filter(|&i| i != held).map(|i| diffuse[i].clone()).collect();
        let train_s: Vec<VertexSignal> = (0..k).filter(|&i| i != held).map(|i| specular[i].clone()).collect();
        let full = build_paired(&train_d, &train_s, d_max, variant, symmetry)?;
        d_values
            .iter()
            .map(|&d| {
                let model = full.truncated(d)?;
                let rec = model.reconstruct_specular(&diffuse[held], &specular[held], None)?;
                per_vertex_rms(&rec, &specular[held])
            })
            .collect()
    });
    let mut total = vec![0.0; d_values.len()];
    for fold in per_fold {
        for (t, e) in total.iter_mut().zip(fold?) {
            *t += e;
        }
    }
    Ok(total.into_iter().map(|t| t / k as f64).collect())
}

/// Joint (diffuse and specular) RMS reconstruction error over the training
/// set the model was built from, including reflected copies when the model
/// is symmetric. The independent variant projects each signal onto its own
/// subspace, the concatenated variant projects the stacked signal jointly,
/// and the transferred variant reuses the diffuse projection.
pub fn training_reconstruction_error(
    model: &PairedAlbedoModel,
    diffuse: &[VertexSignal],
    specular: &[VertexSignal],
    symmetry: Option<&SymmetryMap>,
) -> Result<f64> {
    check_aligned(diffuse, specular)?;
    let xd = data_matrix(diffuse, symmetry)?;
    let xs = data_matrix(specular, symmetry)?;
    let (n, c) = (model.n(), model.diffuse.channels());
    let m = n * c;
    let mut ss = 0.0;
    for j in 0..xd.ncols() {
        let sd = xd.column(j).into_owned();
        let ss_col = xs.column(j).into_owned();
        let (rd, rs) = match model.variant {
            Variant::Independent => {
                let pd = &model.diffuse.components;
                let ps = &model.specular.components;
                let rd = &model.diffuse.mean + pd * (pd.transpose() * (&sd - &model.diffuse.mean));
                let rs = &model.specular.mean + ps * (ps.transpose() * (&ss_col - &model.specular.mean));
                (rd, rs)
            }
            Variant::Concatenated => {
                let mut p = DMatrix::zeros(2 * m, model.d());
                p.rows_mut(0, m).copy_from(&model.diffuse.components);
                p.rows_mut(m, m).copy_from(&model.specular.components);
                let mut r = DVector::zeros(2 * m);
                r.rows_mut(0, m).copy_from(&(&sd - &model.diffuse.mean));
                r.rows_mut(m, m).copy_from(&(&ss_col - &model.specular.mean));
                let b = p.transpose() * r;
                (
                    &model.diffuse.mean + &model.diffuse.components * &b,
                    &model.specular.mean + &model.specular.components * &b,
                )
            }
            Variant::Transferred => {
                let b = model.diffuse.components.transpose() * (&sd - &model.diffuse.mean);
                (
                    &model.diffuse.mean + &model.diffuse.components * &b,
                    &model.specular.mean + &model.specular.components * &b,
                )
            }
        };
        ss += (rd - sd).norm_squared() + (rs - ss_col).norm_squared();
    }
    Ok((ss / (xd.ncols() * n) as f64).sqrt())
}

const MODEL_FORMAT: &str = "albedo-model";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixFile {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

/// `manifest.json` of a model directory. Matrices are raw little-endian
/// f64 in column-major order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub channels: usize,
    pub d: usize,
    pub variant: Variant,
    pub vectorisation: String,
    pub training_samples: usize,
    pub symmetric_augmentation: bool,
    pub matrices: BTreeMap<String, MatrixFile>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

fn write_matrix(dir: &Path, name: &str, m: &DMatrix<f64>) -> Result<MatrixFile> {
    let file = format!("{name}.f64");
    let path = dir.join(&file);
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(MatrixFile {
        file,
        rows: m.nrows(),
        cols: m.ncols(),
    })
}

fn read_matrix(dir: &Path, entry: &MatrixFile) -> Result<DMatrix<f64>> {
    let path = dir.join(&entry.file);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != entry.rows * entry.cols * 8 {
        return Err(Error::parse(
            &path,
            format!("expected {} values, file holds {} bytes", entry.rows * entry.cols, bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_vec(entry.rows, entry.cols, values))
}

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

impl PairedAlbedoModel {
    pub fn manifest(&self, provenance: &BTreeMap<String, String>) -> ModelManifest {
        ModelManifest {
            format: MODEL_FORMAT.into(),
            version: 1,
            n: self.n(),
            channels: self.diffuse.channels(),
            d: self.d(),
            variant: self.variant,
            vectorisation: "channel-major".into(),
            training_samples: self.diffuse.training_samples(),
            symmetric_augmentation: self.symmetric,
            matrices: BTreeMap::new(),
            provenance: provenance.clone(),
        }
    }

    /// Writes the model directory; `provenance` maps names to files already
    /// placed in `dir` (for example the colour calibration).
    pub fn save(&self, dir: impl AsRef<Path>, provenance: &BTreeMap<String, String>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = self.manifest(provenance);
        let mut put = |name: &str, m: &DMatrix<f64>| -> Result<()> {
            manifest.matrices.insert(name.into(), write_matrix(dir, name, m)?);
            Ok(())
        };
        put("diffuse_mean", &column(self.diffuse.mean.as_slice()))?;
        put("diffuse_components", &self.diffuse.components)?;
        put("diffuse_singular_values", &column(&self.diffuse.singular_values))?;
        put("specular_mean", &column(self.specular.mean.as_slice()))?;
        put("specular_components", &self.specular.components)?;
        put("specular_singular_values", &column(&self.specular.singular_values))?;
        if let Some(w) = &self.transfer {
            put("transfer", w)?;
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, ModelManifest)> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ModelManifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
        if manifest.format != MODEL_FORMAT || manifest.vectorisation != "channel-major" {
            return Err(Error::parse(&path, "not a channel-major albedo model"));
        }
        let get = |name: &str| -> Result<DMatrix<f64>> {
            let entry = manifest
                .matrices
                .get(name)
                .ok_or_else(|| Error::parse(&path, format!("missing matrix '{name}'")))?;
            read_matrix(dir, entry)
        };
        let (n, c, k) = (manifest.n, manifest.channels, manifest.training_samples);
        let flat = |m: DMatrix<f64>| -> Vec<f64> { m.iter().copied().collect() };
        let diffuse = LinearAlbedoModel::from_parts(
            n,
            c,
            DVector::from_vec(flat(get("diffuse_mean")?)),
            get("diffuse_components")?,
            flat(get("diffuse_singular_values")?),
            k,
        )?;
        let specular = LinearAlbedoModel::from_parts(
            n,
            c,
            DVector::from_vec(flat(get("specular_mean")?)),
            get("specular_components")?,
            flat(get("specular_singular_values")?),
            k,
        )?;
        let transfer = match manifest.variant {
            Variant::Transferred => Some(get("transfer")?),
            _ => None,
        };
        if diffuse.d() != manifest.d || specular.d() != manifest.d {
            return Err(Error::parse(&path, "component count disagrees with manifest"));
        }
        let model = Self {
            variant: manifest.variant,
            diffuse,
            specular,
            transfer,
            symmetric: manifest.symmetric_augmentation,
        };
        Ok((model, manifest))
    }
}
