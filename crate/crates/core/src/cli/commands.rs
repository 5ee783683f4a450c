use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::{CliError, EvalArgs, FitArgs, FitParamArgs, LearnArgs, SweepArgs, SynthArgs, TransferArgs};
use crate::eval::{compactness, generalization, specificity_report, sweep as run_sweep, SweepGrid};
use crate::fit::NrfParams;
use crate::geometry::SimilarityTransform;
use crate::learn::{learn_pca, learn_slc_with, SlcModel, SlcParams, TrainingSet};
use crate::mesh_io::{read_mesh, read_model, write_atomic, write_mesh, write_model, Mesh, MeshIoError, ModelError};
use crate::pipeline::{fit_target, prepare_target, PipelineParams};
use crate::synth::{degrade, derive_seed, export_dataset, make_dataset_with, DatasetSpec};
use crate::transfer::{landmark_error, transfer_annotation};

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| internal(format!("cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(internal)
}

/// OBJ and PLY files of `dir`, sorted by name.
fn mesh_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Config(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("obj") || e.eq_ignore_ascii_case("ply"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_mesh_data(path: &Path) -> Result<Mesh, CliError> {
    read_mesh(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Registered meshes of `dir`; all must share the first file's vertex count.
fn load_registered(dir: &Path) -> Result<(Vec<PathBuf>, TrainingSet), CliError> {
    let files = mesh_files(dir)?;
    if files.len() < 2 {
        return Err(CliError::Data(format!("{} holds {} meshes, need at least 2", dir.display(), files.len())));
    }
    let meshes = files.iter().map(|f| read_mesh_data(f)).collect::<Result<Vec<_>, _>>()?;
    let m = meshes[0].vertices.len();
    if let Some((f, mesh)) = files.iter().zip(&meshes).find(|(_, mesh)| mesh.vertices.len() != m) {
        return Err(CliError::Data(format!(
            "{} has {} vertices, expected {m} like {}",
            f.display(),
            mesh.vertices.len(),
            files[0].display()
        )));
    }
    let ts = TrainingSet::from_meshes(&meshes).map_err(data)?;
    Ok((files, ts))
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let spec = DatasetSpec {
        n_test_identities: a.test_identities.unwrap_or(a.identities.div_ceil(4).max(1)),
        ..DatasetSpec::new(a.identities, a.expressions, (a.cols, a.rows), a.seed)
    };
    if a.expressions == 0 {
        return Err(CliError::Config("expressions must be at least 1".into()));
    }
    let ds = make_dataset_with(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    ensure_dir(&a.out)?;
    export_dataset(&ds, &a.out).map_err(internal)?;

    let targets = a.out.join("targets");
    ensure_dir(&targets)?;
    for (i, face) in ds.test.iter().enumerate() {
        let d = degrade(&face.mesh, a.noise, a.keep, derive_seed(a.seed, i as u64, 7))
            .map_err(|e| CliError::Config(e.to_string()))?;
        write_mesh(&d.mesh, &targets.join(format!("{}.obj", face.id))).map_err(internal)?;
        let mut prov = String::from("vertex,source\n");
        for (j, s) in d.provenance.iter().enumerate() {
            let _ = writeln!(prov, "{j},{s}");
        }
        write_text(&targets.join(format!("{}.prov.csv", face.id)), &prov)?;
    }
    Ok(())
}

pub fn learn(a: &LearnArgs) -> Result<(), CliError> {
    let (pk, pl1, pl2) = a.preset.values();
    let params = SlcParams {
        k: a.k.unwrap_or(pk),
        lambda1: a.lambda1.unwrap_or(pl1),
        lambda2: a.lambda2.unwrap_or(pl2),
        iters: a.iters,
        seed: a.seed,
        ..SlcParams::default()
    };
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (files, ts) = load_registered(&a.train_dir)?;
    let (model, log) = learn_slc_with(&ts, &params).map_err(data)?;

    let models = a.out.join("models");
    let reports = a.out.join("reports");
    ensure_dir(&models)?;
    ensure_dir(&reports)?;
    write_model(&model, &models.join("model.slc")).map_err(internal)?;
    let first = read_mesh_data(&files[0])?;
    let template = Mesh {
        vertices: model.mean.to_points(),
        faces: ts.faces().to_vec(),
        landmarks: first.landmarks,
    };
    write_mesh(&template, &models.join("template.obj")).map_err(internal)?;

    let mut csv = format!(
        "# k={}\n# lambda1={}\n# lambda2={}\n# seed={}\n# shapes={}\nround,objective,reseeded\n",
        params.k,
        params.lambda1,
        params.lambda2,
        params.seed,
        ts.n()
    );
    for (i, obj) in log.objective.iter().enumerate() {
        let reseeded = if i == 0 { 0 } else { log.reseeded[i - 1] };
        let _ = writeln!(csv, "{i},{obj},{reseeded}");
    }
    write_text(&reports.join("learn_log.csv"), &csv)
}

fn pipeline_params(f: &FitParamArgs) -> Result<PipelineParams, CliError> {
    if !(f.tau_e >= 0.0) || !(f.lambda >= 0.0) || !(f.crop_radius > 0.0) {
        return Err(CliError::Config("tau-e and lambda must be >= 0, crop-radius > 0".into()));
    }
    Ok(PipelineParams {
        crop_radius: f.crop_radius.is_finite().then_some(f.crop_radius),
        nrf: NrfParams {
            tau_e: f.tau_e,
            max_iter: f.max_iter,
            lambda: f.lambda,
        },
        ..PipelineParams::default()
    })
}

fn load_model(path: &Path) -> Result<SlcModel, CliError> {
    read_model(path).map_err(|e| match e {
        ModelError::Io { .. } => CliError::Config(format!("cannot read model: {e}")),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })
}

#[derive(Serialize)]
struct FitRecord<'a> {
    target: &'a str,
    iterations: usize,
    converged: bool,
    initial_error: f64,
    final_error: f64,
    error_trace: &'a [f64],
    icp_rms: &'a [f64],
    alpha: Vec<&'a [f64]>,
    transform: &'a SimilarityTransform,
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let params = pipeline_params(&a.fit)?;
    let model = load_model(&a.model)?;
    let template_path = a
        .template
        .clone()
        .unwrap_or_else(|| a.model.with_file_name("template.obj"));
    let template = read_mesh(&template_path).map_err(|e| match e {
        MeshIoError::Io { .. } => CliError::Config(format!("cannot read template: {e}")),
        other => CliError::Data(format!("{}: {other}", template_path.display())),
    })?;
    if template.vertices.len() != model.vertex_count() {
        return Err(CliError::Data(format!(
            "template has {} vertices, model has {}",
            template.vertices.len(),
            model.vertex_count()
        )));
    }
    let targets = mesh_files(&a.target_dir)?;
    if targets.is_empty() {
        return Err(CliError::Data(format!("no meshes in {}", a.target_dir.display())));
    }
    let fits = a.out.join("fits");
    let reports = a.out.join("reports");
    ensure_dir(&fits)?;
    ensure_dir(&reports)?;

    let rows: Vec<Result<String, String>> = targets
        .par_iter()
        .map(|path| {
            let name = stem(path);
            let log_path = fits.join(format!("{name}.log"));
            let result = read_mesh(path)
                .map_err(|e| e.to_string())
                .and_then(|raw| fit_target(&model, &raw, &params).map_err(|e| e.to_string()));
            let outcome = match result {
                Ok(o) => o,
                Err(msg) => {
                    let _ = write_text(&log_path, &format!("failed: {msg}\n"));
                    eprintln!("slcmm: skipping {}: {msg}", path.display());
                    return Err(msg);
                }
            };
            let fit = &outcome.fit;
            let mut log = String::new();
            let _ = writeln!(log, "target={}", path.display());
            let _ = writeln!(log, "icp_rms_initial={}", outcome.prepared.icp_rms[0]);
            let _ = writeln!(log, "icp_rms_final={}", outcome.prepared.icp_rms.last().copied().unwrap_or(0.0));
            let _ = writeln!(log, "iter=0 error={}", fit.initial_error);
            for (i, e) in fit.error_trace.iter().enumerate() {
                let _ = writeln!(log, "iter={} error={e}", i + 1);
            }
            let _ = writeln!(log, "converged={}", fit.converged);
            let mesh = Mesh {
                vertices: outcome.shape_raw.clone(),
                faces: template.faces.clone(),
                landmarks: template.landmarks.clone(),
            };
            let record = FitRecord {
                target: &name,
                iterations: fit.iterations,
                converged: fit.converged,
                initial_error: fit.initial_error,
                final_error: fit.final_error(),
                error_trace: &fit.error_trace,
                icp_rms: &outcome.prepared.icp_rms,
                alpha: fit.alpha.iter().map(|a| a.as_slice()).collect(),
                transform: &outcome.total_transform,
            };
            let written = write_mesh(&mesh, &fits.join(format!("{name}.obj")))
                .map_err(|e| e.to_string())
                .and_then(|_| serde_json::to_string_pretty(&record).map_err(|e| e.to_string()))
                .and_then(|json| write_text(&fits.join(format!("{name}.fit.json")), &json).map_err(|e| e.to_string()))
                .and_then(|_| write_text(&log_path, &log).map_err(|e| e.to_string()));
            written?;
            Ok(format!("{name},{},{},{}", fit.final_error(), fit.iterations, fit.converged))
        })
        .collect();

    let mut csv = format!(
        "# tau_e={}\n# max_iter={}\n# lambda={}\n# crop_radius={}\ntarget,final_error,iterations,converged\n",
        a.fit.tau_e, a.fit.max_iter, a.fit.lambda, a.fit.crop_radius
    );
    let mut ok = 0;
    for row in &rows {
        if let Ok(line) = row {
            csv.push_str(line);
            csv.push('\n');
            ok += 1;
        }
    }
    write_text(&reports.join("fit_summary.csv"), &csv)?;
    if ok == 0 {
        return Err(CliError::Data("every target failed".into()));
    }
    Ok(())
}

pub fn transfer(a: &TransferArgs) -> Result<(), CliError> {
    let fits_dir = a.fits_dir.clone().unwrap_or_else(|| a.out.join("fits"));
    let fitted = mesh_files(&fits_dir)?;
    if fitted.is_empty() {
        return Err(CliError::Data(format!("no fitted meshes in {}", fits_dir.display())));
    }
    let out = a.out.join("transfer");
    let reports = a.out.join("reports");
    ensure_dir(&out)?;
    ensure_dir(&reports)?;

    let results: Vec<Result<(String, Option<BTreeMap<String, f64>>), String>> = fitted
        .par_iter()
        .map(|fit_path| {
            let name = stem(fit_path);
            let target_path = ["obj", "ply"]
                .iter()
                .map(|ext| a.target_dir.join(format!("{name}.{ext}")))
                .find(|p| p.is_file())
                .ok_or_else(|| format!("no target for {name} in {}", a.target_dir.display()))?;
            let fit = read_mesh(fit_path).map_err(|e| e.to_string())?;
            let target = read_mesh(&target_path).map_err(|e| e.to_string())?;
            let re = transfer_annotation(&fit.vertices, &target, &fit.faces, &fit.landmarks).map_err(|e| e.to_string())?;
            write_mesh(&re.mesh, &out.join(format!("{name}.obj"))).map_err(|e| e.to_string())?;
            let errors = if target.landmarks.is_empty() {
                None
            } else {
                landmark_error(&re, &target.landmark_positions()).ok()
            };
            Ok((name, errors))
        })
        .collect();

    let mut csv = String::from("target,landmark,error_mm\n");
    let mut ok = 0;
    for r in &results {
        match r {
            Ok((name, errors)) => {
                ok += 1;
                for (lm, e) in errors.iter().flatten() {
                    let _ = writeln!(csv, "{name},{lm},{e}");
                }
            }
            Err(msg) => eprintln!("slcmm: skipping: {msg}"),
        }
    }
    write_text(&reports.join("landmark_error.csv"), &csv)?;
    if ok == 0 {
        return Err(CliError::Data("every pair failed".into()));
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let (_, train) = load_registered(&a.train_dir)?;
    let (_, test) = load_registered(&a.test_dir)?;
    if test.m() != train.m() {
        return Err(CliError::Data("train and test meshes differ in vertex count".into()));
    }
    let max = (3 * train.m()).min(train.n() - 1);
    let ks = a.ks.clone().map(|l| l.0).unwrap_or_else(|| (1..=max).collect());
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config("ks must be strictly increasing".into()));
    }
    let pca_ks: Vec<usize> = ks.iter().copied().filter(|&k| k <= max).collect();
    let reports = a.out.join("reports");
    ensure_dir(&reports)?;
    let meta = |r: crate::eval::MetricReport| {
        r.with_meta("train", a.train_dir.display())
            .with_meta("test", a.test_dir.display())
            .with_meta("seed", a.seed)
    };

    let pca = learn_pca(&train, max).map_err(data)?;
    write_text(&reports.join("compactness.csv"), &meta(compactness(&pca, &ks)).to_csv())?;
    let gen = generalization(&pca, &test, &pca_ks, 0.0).map_err(internal)?;
    write_text(&reports.join("generalization_pca.csv"), &meta(gen).to_csv())?;
    let spec = specificity_report(&pca, &test, &pca_ks, a.samples, a.seed).map_err(internal)?;
    write_text(&reports.join("specificity.csv"), &meta(spec).to_csv())?;

    if let Some(path) = &a.model {
        let model = load_model(path)?;
        if model.vertex_count() != train.m() {
            return Err(CliError::Data("model and meshes differ in vertex count".into()));
        }
        let slc_ks: Vec<usize> = ks.iter().copied().filter(|&k| k <= model.k()).collect();
        let gen = generalization(&model, &test, &slc_ks, a.lambda).map_err(internal)?;
        write_text(&reports.join("generalization_slc.csv"), &meta(gen).to_csv())?;
    }
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<(), CliError> {
    let params = pipeline_params(&a.fit)?;
    let grid = SweepGrid {
        ks: a.ks.0.clone(),
        lambda1s: a.lambda1s.0.clone(),
        lambda2s: a.lambda2s.0.clone(),
    };
    let base = SlcParams {
        iters: a.iters,
        seed: a.seed,
        ..SlcParams::default()
    };
    for &k in &grid.ks {
        for &l1 in &grid.lambda1s {
            for &l2 in &grid.lambda2s {
                SlcParams { k, lambda1: l1, lambda2: l2, ..base.clone() }
                    .validate()
                    .map_err(|e| CliError::Config(e.to_string()))?;
            }
        }
    }
    let (_, train) = load_registered(&a.train_dir)?;
    let files = mesh_files(&a.target_dir)?;
    if files.is_empty() {
        return Err(CliError::Data(format!("no meshes in {}", a.target_dir.display())));
    }
    let mean = crate::learn::build_displacements(&train).0.to_points();
    let targets = files
        .iter()
        .map(|f| {
            let raw = read_mesh_data(f)?;
            let prepared = prepare_target(&mean, &raw, &params).map_err(|e| CliError::Data(format!("{}: {e}", f.display())))?;
            Ok(Mesh::from_points(prepared.points))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut table = run_sweep(&grid, &train, &targets, &base, &params.nrf).map_err(data)?;
    table.metadata.insert("train".into(), a.train_dir.display().to_string());
    table.metadata.insert("target_dir".into(), a.target_dir.display().to_string());
    let reports = a.out.join("reports");
    ensure_dir(&reports)?;
    write_text(&reports.join("sweep.csv"), &table.to_csv())
}
