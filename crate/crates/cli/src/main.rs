use std::path::{Path, PathBuf};
use std::process::ExitCode;

use albedo_core::camera::CameraView;
use albedo_core::color::{calibrate, ColourTransform, SpectralCurve, SpectralSensitivity};
use albedo_core::inpaint::{eyeball_specular_fix, hybrid_inpaint, zero_gradient_fill, VertexMask};
use albedo_core::mesh::{SymmetryMap, TriangleMesh};
use albedo_core::model::{build_paired, loo_generalisation, PairedAlbedoModel, Variant};
use albedo_core::par;
use albedo_core::pipeline::{loo_csv, mean_std, mse_table_csv, run_pipeline, PipelineManifest};
use albedo_core::poisson::{build_selections, stitch, DEFAULT_LAMBDA};
use albedo_core::raster::LinearImage;
use albedo_core::render::{albedo_mse, fit_albedo_ambient, render_random_samples, FitOptions, RenderOptions};
use albedo_core::sampling::{sample_view, SamplingOptions};
use albedo_core::visibility::compute_visibility;
use albedo_core::{Error, VertexSignal};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

/// Build and evaluate statistical diffuse/specular albedo models.
#[derive(Debug, Parser)]
#[command(name = "albedo", version)]
struct Cli {
    /// Directory holding bundled data files (CIE tables).
    #[arg(long, global = true, env = "ALBEDO_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Channel {
    Diffuse,
    Specular,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample calibrated views onto a mesh and fuse them in the gradient domain.
    Stitch {
        #[arg(long)]
        mesh: PathBuf,
        /// Camera file, one per view.
        #[arg(long = "camera", required = true)]
        cameras: Vec<PathBuf>,
        /// Linear RGB image (PFM or PNG), one per view, same order as --camera.
        #[arg(long = "image", required = true)]
        images: Vec<PathBuf>,
        /// 1-based reference view.
        #[arg(long, default_value_t = 1)]
        reference: usize,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        /// 3x3 colour transform applied to the images first.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Leave vertices no view sees as stitched instead of filling them.
        #[arg(long)]
        no_fill: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compose the RAW to linear sRGB transform from spectral measurements.
    CalibrateColor {
        #[arg(long)]
        spd: PathBuf,
        #[arg(long)]
        sensitivity: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill masked vertices using a model fit and a gradient-domain solve.
    Inpaint {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "diffuse")]
        channel: Channel,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill vertices listed in a mask by zero-gradient extrapolation.
    Fill {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        unseen: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace an eye region with its 95th-percentile specular value.
    EyeFix {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        region: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a paired diffuse/specular model from directories of .vsig maps.
    BuildModel {
        #[arg(long)]
        diffuse: PathBuf,
        #[arg(long)]
        specular: PathBuf,
        #[arg(long, default_value = "transferred")]
        variant: String,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        symmetry: Option<PathBuf>,
        /// Template mesh copied into the model directory.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render random model instances.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to mesh.obj inside the model directory.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        size: u32,
        /// Half-width of the rotation range about the vertical axis, degrees.
        #[arg(long, default_value_t = 30.0)]
        rotation: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit model coefficients and ambient light to an observed per-vertex map.
    Fit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        /// Gamma-encoded observed colours.
        #[arg(long)]
        observed: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Also write the fitted diffuse albedo.
        #[arg(long)]
        albedo_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Albedo MSE between estimates and ground truth.
    Eval {
        #[arg(long = "estimated", required = true)]
        estimated: Vec<PathBuf>,
        #[arg(long = "truth", required = true)]
        truth: Vec<PathBuf>,
        #[arg(long)]
        region: Option<PathBuf>,
        /// Write the per-subject table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Leave-one-out specular generalisation error per variant and d.
    EvalLoo {
        #[arg(long)]
        diffuse: PathBuf,
        #[arg(long)]
        specular: PathBuf,
        /// Comma-separated component counts.
        #[arg(long, value_delimiter = ',', required = true)]
        d: Vec<usize>,
        /// Comma-separated variants; defaults to all three.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        symmetry: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline from a JSON manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Validation(_)
                | Error::Parse { .. }
                | Error::Format(_)
                | Error::Io { .. }
                | Error::Json(_)
                | Error::Image(_)
                | Error::InvalidSymmetryMap(_)
                | Error::InvalidCamera(_)
                | Error::InvalidSpectrum(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(dir) = &cli.data_dir {
        std::env::set_var("ALBEDO_DATA_DIR", dir);
    }
    match par::with_jobs(cli.jobs, || dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> std::result::Result<(), Failure> {
    let result = match cmd {
        Command::Stitch {
            mesh,
            cameras,
            images,
            reference,
            lambda,
            calibration,
            no_fill,
            out,
        } => cmd_stitch(&mesh, &cameras, &images, reference, lambda, calibration.as_deref(), no_fill, &out),
        Command::CalibrateColor { spd, sensitivity, out } => cmd_calibrate(&spd, &sensitivity, &out),
        Command::Inpaint {
            mesh,
            signal,
            mask,
            model,
            channel,
            out,
        } => cmd_inpaint(&mesh, &signal, &mask, &model, channel, &out),
        Command::Fill {
            mesh,
            signal,
            unseen,
            out,
        } => cmd_fill(&mesh, &signal, &unseen, &out),
        Command::EyeFix { signal, region, out } => cmd_eye_fix(&signal, &region, &out),
        Command::BuildModel {
            diffuse,
            specular,
            variant,
            d,
            symmetry,
            mesh,
            out,
        } => cmd_build(&diffuse, &specular, &variant, d, symmetry.as_deref(), mesh.as_deref(), &out),
        Command::Sample {
            model,
            count,
            seed,
            mesh,
            size,
            rotation,
            out,
        } => cmd_sample(&model, count, seed, mesh.as_deref(), size, rotation, &out),
        Command::Fit {
            model,
            mesh,
            observed,
            max_iters,
            tol,
            albedo_out,
            out,
        } => cmd_fit(&model, &mesh, &observed, max_iters, tol, albedo_out.as_deref(), &out),
        Command::Eval {
            estimated,
            truth,
            region,
            csv,
        } => cmd_eval(&estimated, &truth, region.as_deref(), csv.as_deref()),
        Command::EvalLoo {
            diffuse,
            specular,
            d,
            variants,
            symmetry,
            out,
        } => cmd_eval_loo(&diffuse, &specular, &d, &variants, symmetry.as_deref(), &out),
        Command::Run { manifest } => return cmd_run(&manifest),
    };
    result.map_err(|error| Failure {
        code: exit_code(&error),
        error,
    })
}

fn validation(msg: String) -> anyhow::Error {
    Error::Validation(msg).into()
}

#[allow(clippy::too_many_arguments)]
fn cmd_stitch(
    mesh: &Path,
    cameras: &[PathBuf],
    images: &[PathBuf],
    reference: usize,
    lambda: f64,
    calibration: Option<&Path>,
    no_fill: bool,
    out: &Path,
) -> Result<()> {
    if cameras.len() != images.len() {
        return Err(validation(format!(
            "{} cameras but {} images",
            cameras.len(),
            images.len()
        )));
    }
    let mesh = TriangleMesh::load_obj(mesh)?;
    let transform = calibration.map(ColourTransform::load).transpose()?;
    let mut samples = Vec::new();
    for (cam, img) in cameras.iter().zip(images) {
        let cam = CameraView::load(cam)?;
        let mut image = LinearImage::load(img)?;
        if let Some(t) = &transform {
            image = image.map(|p| t.apply_rgb(p));
        }
        let vis = compute_visibility(&mesh, &cam);
        samples.push(sample_view(&mesh, &cam, &image, &vis, &SamplingOptions::default())?);
    }
    let mut result = stitch(&mesh, &samples, reference, lambda)?;
    if !no_fill {
        let (_, vsel) = build_selections(&samples)?;
        let unseen = VertexMask::new(vsel.owner.iter().map(|&o| o == 0).collect());
        result = zero_gradient_fill(&mesh, &result, &unseen)?;
    }
    result.save(out)?;
    Ok(())
}

fn cmd_calibrate(spd: &Path, sensitivity: &Path, out: &Path) -> Result<()> {
    let e = SpectralCurve::load(spd)?;
    let c = SpectralSensitivity::load(sensitivity)?;
    let t = calibrate(&c, &e, &albedo_core::color::default_grid())?;
    t.save(out)?;
    print!("{}", t.to_text());
    Ok(())
}

fn load_model(dir: &Path) -> Result<PairedAlbedoModel> {
    Ok(PairedAlbedoModel::load(dir)?.0)
}

fn cmd_inpaint(mesh: &Path, signal: &Path, mask: &Path, model: &Path, channel: Channel, out: &Path) -> Result<()> {
    let mesh = TriangleMesh::load_obj(mesh)?;
    let signal = VertexSignal::load(signal)?;
    let mask = VertexMask::load(mask, mesh.n_vertices())?;
    let model = load_model(model)?;
    let m = match channel {
        Channel::Diffuse => &model.diffuse,
        Channel::Specular => &model.specular,
    };
    hybrid_inpaint(&mesh, &signal, &mask, m)?.save(out)?;
    Ok(())
}

fn cmd_fill(mesh: &Path, signal: &Path, unseen: &Path, out: &Path) -> Result<()> {
    let mesh = TriangleMesh::load_obj(mesh)?;
    let signal = VertexSignal::load(signal)?;
    let unseen = VertexMask::load(unseen, mesh.n_vertices())?;
    zero_gradient_fill(&mesh, &signal, &unseen)?.save(out)?;
    Ok(())
}

fn cmd_eye_fix(signal: &Path, region: &Path, out: &Path) -> Result<()> {
    let signal = VertexSignal::load(signal)?;
    let region = VertexMask::load(region, signal.n())?;
    eyeball_specular_fix(&signal, &region)?.save(out)?;
    Ok(())
}

/// `.vsig` files of a directory in file-name order.
fn signal_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "vsig"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(validation(format!("no .vsig files in {}", dir.display())));
    }
    Ok(files)
}

fn load_pairs(diffuse: &Path, specular: &Path) -> Result<(Vec<VertexSignal>, Vec<VertexSignal>)> {
    let df = signal_files(diffuse)?;
    let sf = signal_files(specular)?;
    let names = |v: &[PathBuf]| -> Vec<std::ffi::OsString> { v.iter().filter_map(|p| p.file_name().map(|n| n.to_owned())).collect() };
    if names(&df) != names(&sf) {
        return Err(Error::MisalignedSamples(format!(
            "{} and {} do not hold the same file names",
            diffuse.display(),
            specular.display()
        ))
        .into());
    }
    let load = |v: &[PathBuf]| -> Result<Vec<VertexSignal>> { v.iter().map(|p| Ok(VertexSignal::load(p)?)).collect() };
    Ok((load(&df)?, load(&sf)?))
}

fn cmd_build(
    diffuse: &Path,
    specular: &Path,
    variant: &str,
    d: usize,
    symmetry: Option<&Path>,
    mesh: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let variant: Variant = variant.parse()?;
    let (dm, sm) = load_pairs(diffuse, specular)?;
    let sym = symmetry.map(SymmetryMap::load).transpose()?;
    let model = build_paired(&dm, &sm, d, variant, sym.as_ref())?;
    let mut provenance = std::collections::BTreeMap::new();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if let Some(m) = mesh {
        let mut mesh = TriangleMesh::load_obj(m)?;
        if let Some(s) = &sym {
            mesh = mesh.with_symmetry(s.clone())?;
        }
        mesh.save_obj(out.join("mesh.obj"))?;
        provenance.insert("mesh".to_string(), "mesh.obj".to_string());
    }
    if let Some(s) = &sym {
        s.save(out.join("symmetry.txt"))?;
        provenance.insert("symmetry".to_string(), "symmetry.txt".to_string());
    }
    model.save(out, &provenance)?;
    Ok(())
}

fn cmd_sample(model: &Path, count: usize, seed: u64, mesh: Option<&Path>, size: u32, rotation: f64, out: &Path) -> Result<()> {
    let paired = load_model(model)?;
    let mesh_path = mesh.map(Path::to_path_buf).unwrap_or_else(|| model.join("mesh.obj"));
    if !mesh_path.exists() {
        return Err(validation(format!("missing mesh: {}", mesh_path.display())));
    }
    let mesh = TriangleMesh::load_obj(&mesh_path)?;
    let options = RenderOptions {
        count,
        rotation_range_deg: rotation,
        seed,
        image_size: (size, size),
        ..Default::default()
    };
    let renders = render_random_samples(&mesh, &paired, &options)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut index = Vec::new();
    for (k, r) in renders.iter().enumerate() {
        let name = format!("sample_{k:04}.png");
        r.image.save(out.join(&name))?;
        index.push(serde_json::json!({
            "image": name,
            "rotation_deg": r.rotation_deg,
            "coefficients": r.coefficients,
        }));
    }
    let text = serde_json::to_string_pretty(&serde_json::json!({ "seed": seed, "samples": index }))? + "\n";
    std::fs::write(out.join("samples.json"), text).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    model: &Path,
    mesh: &Path,
    observed: &Path,
    max_iters: usize,
    tol: f64,
    albedo_out: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let paired = load_model(model)?;
    let mesh = TriangleMesh::load_obj(mesh)?;
    let observed = VertexSignal::load(observed)?;
    let fit = fit_albedo_ambient(&observed, &mesh, &paired, &FitOptions { max_iters, tol })?;
    if !fit.converged {
        log::warn!(
            "fit stopped after {} iterations without converging (objective {:e})",
            fit.iterations,
            fit.objective
        );
    }
    let json = serde_json::json!({
        "coefficients": fit.coefficients,
        "ambient": fit.ambient,
        "objective": fit.objective,
        "iterations": fit.iterations,
        "converged": fit.converged,
    });
    std::fs::write(out, serde_json::to_string_pretty(&json)? + "\n").map_err(|e| Error::io(out, e))?;
    if let Some(p) = albedo_out {
        albedo_core::model::generate(&paired.diffuse, &fit.coefficients)?.save(p)?;
    }
    Ok(())
}

fn cmd_eval(estimated: &[PathBuf], truth: &[PathBuf], region: Option<&Path>, csv: Option<&Path>) -> Result<()> {
    if estimated.len() != truth.len() {
        return Err(validation(format!(
            "{} estimates but {} ground-truth maps",
            estimated.len(),
            truth.len()
        )));
    }
    let mut rows = Vec::new();
    for (e, t) in estimated.iter().zip(truth) {
        let est = VertexSignal::load(e)?;
        let tru = VertexSignal::load(t)?;
        let reg = region.map(|r| VertexMask::load(r, tru.n())).transpose()?;
        let id = e
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        rows.push((id, albedo_mse(&est, &tru, reg.as_ref())?));
    }
    for (id, v) in &rows {
        println!("{id}\t{v:.6}");
    }
    let vals: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (m, s) = mean_std(&vals);
    println!("MSE {m:.4} ± {s:.4}");
    if let Some(p) = csv {
        std::fs::write(p, mse_table_csv(&rows)).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn cmd_eval_loo(
    diffuse: &Path,
    specular: &Path,
    d: &[usize],
    variants: &[String],
    symmetry: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let variants: Vec<Variant> = if variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        variants.iter().map(|v| v.parse()).collect::<albedo_core::Result<_>>()?
    };
    let (dm, sm) = load_pairs(diffuse, specular)?;
    let sym = symmetry.map(SymmetryMap::load).transpose()?;
    let mut curves = Vec::new();
    for v in variants {
        curves.push((v, loo_generalisation(&dm, &sm, v, d, sym.as_ref())?));
    }
    let csv = loo_csv(d, &curves)?;
    std::fs::write(out, &csv).map_err(|e| Error::io(out, e))?;
    print!("{csv}");
    Ok(())
}

fn cmd_run(manifest: &Path) -> std::result::Result<(), Failure> {
    let fail = |error: anyhow::Error| Failure {
        code: exit_code(&error),
        error,
    };
    let m = PipelineManifest::load(manifest).map_err(|e| fail(e.into()))?;
    m.validate().map_err(|e| fail(e.into()))?;
    let outcome = run_pipeline(&m).map_err(|e| {
        let code = match e {
            Error::Validation(_) => 1,
            _ => 2,
        };
        Failure { code, error: e.into() }
    })?;
    let r = &outcome.report;
    println!(
        "{} subjects, {} failed; model with d = {} written to {}",
        r.subjects.len(),
        r.failures,
        r.d,
        r.model_dir.display()
    );
    if r.failures > 0 {
        for s in r.subjects.iter().filter(|s| s.error.is_some()) {
            eprintln!("subject {}: {}", s.id, s.error.as_deref().unwrap_or(""));
        }
        return Err(Failure {
            code: 2,
            error: anyhow::anyhow!("{} subject(s) failed", r.failures),
        });
    }
    Ok(())
}
