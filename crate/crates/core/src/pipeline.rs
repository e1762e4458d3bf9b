//! Manifest-driven batch processing: capture sets to stitched maps, completed
//! maps, a paired model and a run report.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::color::{
    calibrate, default_grid, fit_mean_alignment, gamma_decode_signal, iso_normalize, resample_to_grid,
    ColourTransform, SpectralCurve, SpectralSensitivity,
};
use crate::error::{Error, Result};
use crate::inpaint::{eyeball_specular_fix, iterate_model_inpaint, zero_gradient_fill, VertexMask};
use crate::mesh::{SymmetryMap, TriangleMesh};
use crate::model::{build_paired, PairedAlbedoModel, Variant};
use crate::par;
use crate::poisson::{build_selections, stitch, DEFAULT_LAMBDA};
use crate::raster::LinearImage;
use crate::sampling::{sample_view, SamplingOptions};
use crate::signal::VertexSignal;
use crate::visibility::compute_visibility;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Native,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub camera: PathBuf,
    pub diffuse: PathBuf,
    pub specular: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    #[serde(default)]
    pub source: Source,
    /// Registered subject geometry; defaults to the template.
    #[serde(default)]
    pub mesh: Option<PathBuf>,
    #[serde(default)]
    pub views: Vec<ViewEntry>,
    /// External subjects: per-vertex maps, gamma encoded.
    #[serde(default)]
    pub diffuse_map: Option<PathBuf>,
    #[serde(default)]
    pub specular_map: Option<PathBuf>,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    #[serde(default)]
    pub iso: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationEntry {
    pub spd: PathBuf,
    pub sensitivity: PathBuf,
}

fn default_iterations() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub mesh: PathBuf,
    pub d: usize,
    pub variant: Variant,
    #[serde(default)]
    pub symmetry: Option<PathBuf>,
    #[serde(default)]
    pub eye_region: Option<PathBuf>,
    #[serde(default = "default_iterations")]
    pub inpaint_iterations: usize,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_reference() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineManifest {
    pub output: PathBuf,
    pub model: ModelEntry,
    #[serde(default)]
    pub calibration: Option<CalibrationEntry>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_reference")]
    pub reference_view: usize,
    pub subjects: Vec<SubjectEntry>,
}

impl PipelineManifest {
    /// Reads a manifest; relative paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.resolve(base);
        Ok(m)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        fix(&mut self.model.mesh);
        self.model.symmetry.as_mut().map(fix);
        self.model.eye_region.as_mut().map(fix);
        if let Some(c) = &mut self.calibration {
            fix(&mut c.spd);
            fix(&mut c.sensitivity);
        }
        for s in &mut self.subjects {
            s.mesh.as_mut().map(fix);
            s.diffuse_map.as_mut().map(fix);
            s.specular_map.as_mut().map(fix);
            s.mask.as_mut().map(fix);
            for v in &mut s.views {
                fix(&mut v.camera);
                fix(&mut v.diffuse);
                fix(&mut v.specular);
            }
        }
    }

    fn paths(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = vec![&self.model.mesh];
        out.extend(self.model.symmetry.as_deref());
        out.extend(self.model.eye_region.as_deref());
        if let Some(c) = &self.calibration {
            out.push(&c.spd);
            out.push(&c.sensitivity);
        }
        for s in &self.subjects {
            out.extend(s.mesh.as_deref());
            out.extend(s.diffuse_map.as_deref());
            out.extend(s.specular_map.as_deref());
            out.extend(s.mask.as_deref());
            for v in &s.views {
                out.push(&v.camera);
                out.push(&v.diffuse);
                out.push(&v.specular);
            }
        }
        out
    }

    /// Structural checks and existence of every referenced file.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.subjects {
            if s.id.is_empty() || s.id.contains(['/', '\\']) || s.id == "." || s.id == ".." {
                return Err(Error::Validation(format!("invalid subject id '{}'", s.id)));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate subject id '{}'", s.id)));
            }
            match s.source {
                Source::Native if s.views.is_empty() => {
                    return Err(Error::Validation(format!("native subject '{}' has no views", s.id)))
                }
                Source::External if s.diffuse_map.is_none() || s.specular_map.is_none() => {
                    return Err(Error::Validation(format!(
                        "external subject '{}' needs diffuse_map and specular_map",
                        s.id
                    )))
                }
                _ => {}
            }
            if let Some(iso) = s.iso {
                if !(iso > 0.0 && iso.is_finite()) {
                    return Err(Error::Validation(format!("subject '{}': ISO must be positive", s.id)));
                }
            }
        }
        if self.subjects.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 subjects, manifest lists {}",
                self.subjects.len()
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Validation(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.reference_view == 0 {
            return Err(Error::Validation("reference_view is 1-based".into()));
        }
        for p in self.paths() {
            if !p.exists() {
                return Err(Error::Validation(format!("missing file: {}", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub id: String,
    pub source: Source,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub views: usize,
    /// Triangles per owning view, the last entry counting unselected ones.
    pub triangle_counts: Vec<usize>,
    pub unseen_fraction: f64,
    pub masked_fraction: f64,
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub subjects: Vec<SubjectReport>,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<[[f64; 3]; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<[[f64; 3]; 3]>,
    pub model_dir: PathBuf,
    pub d: usize,
    pub variant: Option<Variant>,
    pub training_samples: usize,
    pub inpaint_iterations: usize,
    pub timings_ms: BTreeMap<String, f64>,
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// The report without wall-clock timings.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.timings_ms.clear();
        for s in &mut r.subjects {
            s.timings_ms.clear();
        }
        r
    }
}

fn rows(m: &nalgebra::Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]])
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

struct Processed {
    diffuse: VertexSignal,
    specular: VertexSignal,
    mask: VertexMask,
}

struct Context<'a> {
    template: &'a TriangleMesh,
    calibration: Option<&'a ColourTransform>,
    lambda: f64,
    reference_view: usize,
}

fn load_subject_mesh(ctx: &Context, s: &SubjectEntry) -> Result<TriangleMesh> {
    match &s.mesh {
        None => Ok(ctx.template.clone()),
        Some(p) => {
            let m = TriangleMesh::load_obj(p)?;
            if m.n_vertices() != ctx.template.n_vertices() || m.triangles() != ctx.template.triangles() {
                return Err(Error::MismatchedDimensions(format!(
                    "{} does not share the template topology",
                    p.display()
                )));
            }
            Ok(m)
        }
    }
}

fn process_native(ctx: &Context, s: &SubjectEntry, report: &mut SubjectReport) -> Result<(VertexSignal, VertexSignal)> {
    let mesh = load_subject_mesh(ctx, s)?;
    let t = Instant::now();
    let opts = SamplingOptions::default();
    let mut diffuse_samples = Vec::new();
    let mut specular_samples = Vec::new();
    for v in &s.views {
        let cam = CameraView::load(&v.camera)?;
        let vis = compute_visibility(&mesh, &cam);
        let mut dimg = LinearImage::load(&v.diffuse)?;
        let mut simg = LinearImage::load(&v.specular)?;
        if let Some(tr) = ctx.calibration {
            dimg = dimg.map(|p| tr.apply_rgb(p));
            simg = simg.map(|p| tr.apply_rgb(p));
        }
        let ds = sample_view(&mesh, &cam, &dimg, &vis, &opts)?;
        let mut ss = sample_view(&mesh, &cam, &simg, &vis, &opts)?;
        ss.vertex_weight.clone_from(&ds.vertex_weight);
        ss.triangle_weight.clone_from(&ds.triangle_weight);
        diffuse_samples.push(ds);
        specular_samples.push(ss);
    }
    report.timings_ms.insert("sample".into(), ms(t));

    let t = Instant::now();
    let (tsel, vsel) = build_selections(&diffuse_samples)?;
    report.triangle_counts = tsel.counts();
    let mut diffuse = stitch(&mesh, &diffuse_samples, ctx.reference_view, ctx.lambda)?;
    let mut specular = stitch(&mesh, &specular_samples, ctx.reference_view, ctx.lambda)?;
    report.timings_ms.insert("stitch".into(), ms(t));

    let t = Instant::now();
    let unseen = VertexMask::new(vsel.owner.iter().map(|&o| o == 0).collect());
    report.unseen_fraction = unseen.fraction();
    if unseen.count() > 0 {
        diffuse = zero_gradient_fill(&mesh, &diffuse, &unseen)?;
        specular = zero_gradient_fill(&mesh, &specular, &unseen)?;
    }
    report.timings_ms.insert("fill".into(), ms(t));
    if let Some(iso) = s.iso {
        diffuse = iso_normalize(&diffuse, iso)?;
        specular = iso_normalize(&specular, iso)?;
    }
    Ok((diffuse, specular))
}

fn process_external(ctx: &Context, s: &SubjectEntry) -> Result<(VertexSignal, VertexSignal)> {
    let load = |p: &Option<PathBuf>| -> Result<VertexSignal> {
        let sig = VertexSignal::load(p.as_ref().expect("validated"))?;
        if sig.n() != ctx.template.n_vertices() || sig.channels() != 3 {
            return Err(Error::MismatchedDimensions(format!(
                "external map is {}x{}, template has {} vertices",
                sig.n(),
                sig.channels(),
                ctx.template.n_vertices()
            )));
        }
        Ok(sig)
    };
    let mut diffuse = gamma_decode_signal(&load(&s.diffuse_map)?)?;
    let mut specular = gamma_decode_signal(&load(&s.specular_map)?)?;
    if let Some(iso) = s.iso {
        diffuse = iso_normalize(&diffuse, iso)?;
        specular = iso_normalize(&specular, iso)?;
    }
    Ok((diffuse, specular))
}

fn process_subject(ctx: &Context, s: &SubjectEntry) -> (SubjectReport, Result<Processed>) {
    let mut report = SubjectReport {
        id: s.id.clone(),
        source: s.source,
        views: s.views.len(),
        ..Default::default()
    };
    let t = Instant::now();
    let result = (|| -> Result<Processed> {
        let (diffuse, specular) = match s.source {
            Source::Native => process_native(ctx, s, &mut report)?,
            Source::External => process_external(ctx, s)?,
        };
        let mask = match &s.mask {
            Some(p) => VertexMask::load(p, ctx.template.n_vertices())?,
            None => VertexMask::empty(ctx.template.n_vertices()),
        };
        Ok(Processed {
            diffuse,
            specular,
            mask,
        })
    })();
    report.timings_ms.insert("total".into(), ms(t));
    match &result {
        Ok(p) => {
            report.status = "ok".into();
            report.masked_fraction = p.mask.fraction();
        }
        Err(e) => {
            report.status = "failed".into();
            report.error = Some(e.to_string());
        }
    }
    (report, result)
}

fn write_signal(dir: &Path, name: &str, s: &VertexSignal) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    s.save(dir.join(name))
}

/// Outcome of a run: the report, and whether the model was built.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: PipelineReport,
    pub model: Option<PairedAlbedoModel>,
}

/// Runs every stage. Per-subject failures are recorded in the report and
/// the remaining subjects continue; an error is returned only when the
/// manifest is invalid or the shared stages fail.
pub fn run_pipeline(manifest: &PipelineManifest) -> Result<PipelineOutcome> {
    manifest.validate()?;
    let total = Instant::now();
    let mut report = PipelineReport {
        model_dir: manifest.output.join("model"),
        d: manifest.model.d,
        inpaint_iterations: manifest.model.inpaint_iterations,
        ..Default::default()
    };
    let mut template = TriangleMesh::load_obj(&manifest.model.mesh)?;
    let symmetry = match &manifest.model.symmetry {
        Some(p) => {
            let s = SymmetryMap::load(p)?;
            template = template.with_symmetry(s.clone())?;
            Some(s)
        }
        None => None,
    };
    let eye_region = match &manifest.model.eye_region {
        Some(p) => Some(VertexMask::load(p, template.n_vertices())?),
        None => None,
    };

    let t = Instant::now();
    let grid = default_grid();
    let calibration = match &manifest.calibration {
        Some(c) => {
            let e = SpectralCurve::load(&c.spd)?;
            let sens = SpectralSensitivity::load(&c.sensitivity)?;
            let tr = calibrate(&sens, &e, &grid)?;
            report.calibration = Some(rows(&tr.matrix));
            Some((tr, resample_to_grid(&e, &grid)?, sens.resample(&grid)?))
        }
        None => None,
    };
    report.timings_ms.insert("calibrate".into(), ms(t));

    let ctx = Context {
        template: &template,
        calibration: calibration.as_ref().map(|c| &c.0),
        lambda: manifest.lambda,
        reference_view: manifest.reference_view,
    };
    let t = Instant::now();
    let results = par::map_slice(&manifest.subjects, |s| process_subject(&ctx, s));
    report.timings_ms.insert("subjects".into(), ms(t));

    let mut ok = Vec::new();
    for ((r, res), entry) in results.into_iter().zip(&manifest.subjects) {
        report.subjects.push(r);
        match res {
            Ok(p) => ok.push((entry, p)),
            Err(e) => log::warn!("subject {} failed: {e}", entry.id),
        }
    }
    report.failures = report.subjects.iter().filter(|s| s.status != "ok").count();

    // deferred alignment of external maps onto the native mean
    let t = Instant::now();
    let mean_of = |src: Source| -> Option<VertexSignal> {
        let maps: Vec<&VertexSignal> = ok.iter().filter(|(e, _)| e.source == src).map(|(_, p)| &p.diffuse).collect();
        let first = maps.first()?;
        let mut m = VertexSignal::zeros(first.n(), first.channels());
        for s in &maps {
            for (a, b) in m.values_mut().iter_mut().zip(s.values()) {
                *a += b;
            }
        }
        Some(m.map(|v| v / maps.len() as f64))
    };
    if let (Some(native), Some(external)) = (mean_of(Source::Native), mean_of(Source::External)) {
        let align = fit_mean_alignment(&external, &native)?;
        report.alignment = Some(rows(&align.matrix));
        for (e, p) in ok.iter_mut().filter(|(e, _)| e.source == Source::External) {
            p.diffuse = align.apply(&p.diffuse)?;
            p.specular = align.apply(&p.specular)?;
            log::debug!("aligned external subject {}", e.id);
        }
    }
    report.timings_ms.insert("align".into(), ms(t));

    for (e, p) in &ok {
        let dir = manifest.output.join("subjects").join(&e.id);
        write_signal(&dir, "diffuse_stitched.vsig", &p.diffuse)?;
        write_signal(&dir, "specular_stitched.vsig", &p.specular)?;
    }
    if ok.len() < 2 {
        let path = manifest.output.join("report.json");
        report.timings_ms.insert("total".into(), ms(total));
        write_text(&path, &report.to_json()?)?;
        return Err(Error::InsufficientSamples {
            required: 2,
            got: ok.len(),
        });
    }

    let t = Instant::now();
    let masks: Vec<VertexMask> = ok.iter().map(|(_, p)| p.mask.clone()).collect();
    let diffuse: Vec<VertexSignal> = ok.iter().map(|(_, p)| p.diffuse.clone()).collect();
    let specular: Vec<VertexSignal> = ok.iter().map(|(_, p)| p.specular.clone()).collect();
    let d = manifest.model.d;
    let iters = manifest.model.inpaint_iterations;
    let diffuse = iterate_model_inpaint(&template, &diffuse, &masks, d, iters, symmetry.as_ref())?.completed;
    let mut specular = iterate_model_inpaint(&template, &specular, &masks, d, iters, symmetry.as_ref())?.completed;
    if let Some(region) = &eye_region {
        specular = specular
            .iter()
            .map(|s| eyeball_specular_fix(s, region))
            .collect::<Result<Vec<_>>>()?;
    }
    report.timings_ms.insert("inpaint".into(), ms(t));
    for ((e, _), (dm, sm)) in ok.iter().zip(diffuse.iter().zip(&specular)) {
        let dir = manifest.output.join("subjects").join(&e.id);
        write_signal(&dir, "diffuse_completed.vsig", dm)?;
        write_signal(&dir, "specular_completed.vsig", sm)?;
    }

    let t = Instant::now();
    let model = build_paired(&diffuse, &specular, d, manifest.model.variant, symmetry.as_ref())?;
    let model_dir = &report.model_dir;
    std::fs::create_dir_all(model_dir).map_err(|e| Error::io(model_dir, e))?;
    let mut provenance = BTreeMap::new();
    template.save_obj(model_dir.join("mesh.obj"))?;
    provenance.insert("mesh".into(), "mesh.obj".into());
    if let Some(s) = &symmetry {
        s.save(model_dir.join("symmetry.txt"))?;
        provenance.insert("symmetry".into(), "symmetry.txt".into());
    }
    if let Some((tr, e, c)) = &calibration {
        tr.save(model_dir.join("calibration.mat3"))?;
        write_text(&model_dir.join("e.csv"), &e.to_csv())?;
        write_text(&model_dir.join("C.csv"), &c.to_csv())?;
        provenance.insert("T".into(), "calibration.mat3".into());
        provenance.insert("e".into(), "e.csv".into());
        provenance.insert("C".into(), "C.csv".into());
    }
    model.save(model_dir, &provenance)?;
    report.timings_ms.insert("model".into(), ms(t));
    report.variant = Some(model.variant);
    report.training_samples = model.diffuse.training_samples();
    report.timings_ms.insert("total".into(), ms(total));
    write_text(&manifest.output.join("report.json"), &report.to_json()?)?;
    Ok(PipelineOutcome {
        report,
        model: Some(model),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `d` followed by one column per variant.
pub fn loo_csv(d_values: &[usize], curves: &[(Variant, Vec<f64>)]) -> Result<String> {
    for (v, c) in curves {
        if c.len() != d_values.len() {
            return Err(Error::MismatchedDimensions(format!(
                "{v} curve has {} values for {} d values",
                c.len(),
                d_values.len()
            )));
        }
    }
    let mut out = String::from("d");
    for (v, _) in curves {
        out.push(',');
        out.push_str(v.as_str());
    }
    out.push('\n');
    for (k, d) in d_values.iter().enumerate() {
        out.push_str(&d.to_string());
        for (_, c) in curves {
            out.push_str(&format!(",{}", c[k]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One row per subject, then `mean` and `std` rows.
pub fn mse_table_csv(rows: &[(String, f64)]) -> String {
    let mut out = String::from("subject,mse\n");
    for (id, v) in rows {
        out.push_str(&format!("{id},{v}\n"));
    }
    let vals: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (m, s) = mean_std(&vals);
    out.push_str(&format!("mean,{m}\nstd,{s}\n"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loo_csv_shape() {
        let curves: Vec<(Variant, Vec<f64>)> = Variant::ALL.iter().map(|&v| (v, vec![0.5, 0.25, 0.125])).collect();
        let csv = loo_csv(&[1, 5, 10], &curves).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "d,independent,concatenated,transferred");
        assert_eq!(lines.len(), 4);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
    }

    #[test]
    fn mse_table_zero() {
        let csv = mse_table_csv(&[("a".into(), 0.0), ("b".into(), 0.0)]);
        assert_eq!(csv, "subject,mse\na,0\nb,0\nmean,0\nstd,0\n");
    }

    #[test]
    fn manifest_rejects_duplicates_and_missing_files() {
        let text = r#"{"output":"out","model":{"mesh":"m.obj","d":1,"variant":"transferred"},
            "subjects":[{"id":"a","source":"external","diffuse_map":"a.vsig","specular_map":"b.vsig"},
                        {"id":"a","source":"external","diffuse_map":"a.vsig","specular_map":"b.vsig"}]}"#;
        let m: PipelineManifest = serde_json::from_str(text).unwrap();
        assert!(matches!(m.validate(), Err(Error::Validation(msg)) if msg.contains("duplicate")));
        let mut m2 = m.clone();
        m2.subjects[1].id = "b".into();
        assert!(matches!(m2.validate(), Err(Error::Validation(msg)) if msg.contains("m.obj")));
    }
}
